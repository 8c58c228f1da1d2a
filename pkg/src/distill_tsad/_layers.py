"""Shared torch building blocks with seeded, rng-driven initialization.

Parameter init never touches torch's global RNG; every draw comes from the
numpy generator handed in by the caller, which keeps whole-model construction
bit-reproducible for a given seed.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def fill_from_rng(param: torch.Tensor, values: np.ndarray) -> None:
    with torch.no_grad():
        param.copy_(torch.from_numpy(np.ascontiguousarray(values, dtype=np.float32)))


def uniform_init(param: torch.Tensor, rng: np.random.Generator, bound: float) -> None:
    fill_from_rng(param, rng.uniform(-bound, bound, size=tuple(param.shape)))


def normal_init(param: torch.Tensor, rng: np.random.Generator, std: float) -> None:
    fill_from_rng(param, rng.normal(0.0, std, size=tuple(param.shape)))


def init_linear(linear: nn.Linear, rng: np.random.Generator) -> None:
    """Torch's default Linear init (U(-1/sqrt(fan_in), 1/sqrt(fan_in))), seeded."""
    bound = 1.0 / math.sqrt(linear.weight.shape[1])
    uniform_init(linear.weight, rng, bound)
    if linear.bias is not None:
        uniform_init(linear.bias, rng, bound)


def orthogonal_matrix(rng: np.random.Generator, size: int) -> np.ndarray:
    """Random orthogonal matrix (QR of a Gaussian, sign-canonicalized)."""
    gauss = rng.standard_normal((size, size))
    q, r = np.linalg.qr(gauss)
    return q * np.sign(np.diag(r))


class FeedForward(nn.Module):
    """Position-wise MLP: Linear -> GELU -> Linear, 4x expansion by default."""

    def __init__(self, d_model: int, expansion: int = 4):
        super().__init__()
        self.w1 = nn.Linear(d_model, expansion * d_model)
        self.w2 = nn.Linear(expansion * d_model, d_model)

    def forward(self, x):
        return self.w2(F.gelu(self.w1(x)))

    def seed_init(self, rng: np.random.Generator) -> None:
        init_linear(self.w1, rng)
        init_linear(self.w2, rng)


def split_heads(x: torch.Tensor, heads: int) -> torch.Tensor:
    """[B, n, d_model] -> [B, heads, n, d_model // heads]."""
    b, n, dm = x.shape
    return x.view(b, n, heads, dm // heads).transpose(1, 2)


def merge_heads(x: torch.Tensor) -> torch.Tensor:
    """[B, heads, n, head_dim] -> [B, n, heads * head_dim]."""
    b, h, n, hd = x.shape
    return x.transpose(1, 2).reshape(b, n, h * hd)
