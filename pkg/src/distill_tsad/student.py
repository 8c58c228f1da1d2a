"""Prototype-conditioned student encoder mapping a raw window to a vector.

Each channel is encoded independently: the most cosine-similar prototype is
selected from a trainable per-channel pool, normalized with the *input
window's* statistics, patched, and embedded alongside the input.  In every
encoder block the input patches attend over the concatenation of input keys
and prototype keys under a single softmax, so prototype content is mixed
into the representation at every layer while prototypes themselves are never
updated by attention.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from . import preprocess
from ._layers import (
    FeedForward,
    init_linear,
    merge_heads,
    normal_init,
    split_heads,
)
from .core import Config


def _as_tensor(x, like: torch.Tensor = None) -> torch.Tensor:
    if isinstance(x, torch.Tensor):
        return x
    t = torch.from_numpy(np.ascontiguousarray(x))
    if like is not None:
        t = t.to(like.dtype)
    return t


class PrototypePool(nn.Module):
    """Trainable pool of M length-T characteristic signals per channel."""

    def __init__(self, prototypes: torch.Tensor):
        super().__init__()
        if prototypes.ndim != 3:
            raise ValueError(f"prototypes must be [D x M x T], got {tuple(prototypes.shape)}")
        self.prototypes = nn.Parameter(prototypes.clone().float())

    @property
    def channels(self) -> int:
        return self.prototypes.shape[0]

    @property
    def count(self) -> int:
        return self.prototypes.shape[1]

    @classmethod
    def from_windows(cls, windows, count: int, rng: np.random.Generator) -> "PrototypePool":
        """Initialize with windows sampled uniformly (with replacement) from
        the training batch, independently per channel."""
        windows = np.asarray(windows, dtype=np.float32)
        n, channels, _ = windows.shape
        picks = rng.integers(0, n, size=(channels, count))
        protos = np.stack([windows[picks[c], c, :] for c in range(channels)])
        return cls(torch.from_numpy(protos))


def select_prototype(pool: PrototypePool, windows):
    """Pick the most cosine-similar prototype per channel.

    Accepts [D x T] or [N x D x T] raw (unnormalized) windows.  Ties break
    toward the lowest prototype index; a zero-norm window channel or
    prototype scores cosine -1.  The returned prototypes stay connected to
    the pool parameter, so gradients flow into the selected entries only
    (the argmax itself is non-differentiable and is taken under no_grad).

    Returns (selected [.. x D x T], indices [.. x D]).
    """
    protos = pool.prototypes
    w = _as_tensor(windows, like=protos)
    single = w.ndim == 2
    if single:
        w = w.unsqueeze(0)
    if w.shape[1] != pool.channels:
        raise ValueError(
            f"window has {w.shape[1]} channels but pool holds {pool.channels}"
        )
    with torch.no_grad():
        dots = torch.einsum("ndt,dmt->ndm", w, protos)
        w_norm = w.norm(dim=-1)                      # [N, D]
        m_norm = protos.norm(dim=-1)                 # [D, M]
        denom = w_norm.unsqueeze(-1) * m_norm.unsqueeze(0)
        cosine = torch.where(denom > 0, dots / denom.clamp_min(1e-30), dots.new_tensor(-1.0))
        indices = cosine.argmax(dim=-1)              # first max = lowest index
    channel_idx = torch.arange(pool.channels, device=indices.device)
    selected = protos[channel_idx.unsqueeze(0), indices]   # [N, D, T], differentiable
    if single:
        return selected.squeeze(0), indices.squeeze(0)
    return selected, indices


class PrototypeAttentionBlock(nn.Module):
    """Pre-norm encoder block whose attention spans input and prototype keys.

    Input-patch queries score against 2n keys (n input + n prototype) with
    one shared softmax; the output mixes both value streams.  Prototype
    queries exist for parameter-shape parity but are never applied, so they
    receive no gradient.
    """

    def __init__(self, d_model: int, heads: int):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"head count {heads} must divide d_model {d_model}")
        self.heads = heads
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.q_w = nn.Linear(d_model, d_model, bias=False)
        self.k_w = nn.Linear(d_model, d_model, bias=False)
        self.v_w = nn.Linear(d_model, d_model, bias=False)
        self.q_m = nn.Linear(d_model, d_model, bias=False)  # unused in forward
        self.k_m = nn.Linear(d_model, d_model, bias=False)
        self.v_m = nn.Linear(d_model, d_model, bias=False)
        self.out = nn.Linear(d_model, d_model, bias=False)
        self.ffn = FeedForward(d_model)

    def seed_init(self, rng: np.random.Generator) -> None:
        for lin in (self.q_w, self.k_w, self.v_w, self.q_m, self.k_m, self.v_m, self.out):
            init_linear(lin, rng)
        self.ffn.seed_init(rng)

    def forward(self, x: torch.Tensor, proto: torch.Tensor, need_weights: bool = False):
        hx = self.norm1(x)
        hm = self.norm1(proto)
        q = split_heads(self.q_w(hx), self.heads)
        keys = torch.cat(
            [split_heads(self.k_w(hx), self.heads), split_heads(self.k_m(hm), self.heads)],
            dim=2,
        )
        values = torch.cat(
            [split_heads(self.v_w(hx), self.heads), split_heads(self.v_m(hm), self.heads)],
            dim=2,
        )
        logits = q @ keys.transpose(-2, -1) / math.sqrt(q.shape[-1])
        weights = torch.softmax(logits, dim=-1)      # [B, H, n, 2n]
        mixed = self.out(merge_heads(weights @ values))
        x = x + mixed
        x = x + self.ffn(self.norm2(x))
        return x, (weights if need_weights else None)


class StudentEncoder(nn.Module):
    """phi(w): raw [N x D x T] windows -> representations [N x feature_dim]."""

    def __init__(self, config: Config, channels: int, rng: np.random.Generator,
                 d_model: int = 64):
        super().__init__()
        self.config = config
        self.channels = channels
        self.d_model = d_model
        self.patch_count = config.patch_count
        self.embed = nn.Linear(config.patch_size, d_model)
        self.pos_embed = nn.Parameter(torch.zeros(self.patch_count, d_model))
        self.blocks = nn.ModuleList(
            PrototypeAttentionBlock(d_model, config.head_count)
            for _ in range(config.student_layers)
        )
        self.head = nn.Linear(channels * self.patch_count * d_model, config.feature_dim)
        self._seed_init(rng)

    def _seed_init(self, rng: np.random.Generator) -> None:
        init_linear(self.embed, rng)
        normal_init(self.pos_embed, rng, 0.02)
        for block in self.blocks:
            block.seed_init(rng)
        init_linear(self.head, rng)

    def _tokens(self, win: torch.Tensor) -> torch.Tensor:
        """Normalized-and-patched [N x D x T] -> embedded tokens [N*D x n x d_model]."""
        patches = preprocess.patch(win, self.config.patch_size, self.config.patch_stride).patches
        n_win, channels, n, p = patches.shape
        tokens = self.embed(patches.reshape(n_win * channels, n, p))
        return tokens + self.pos_embed

    def forward(self, windows, pool: PrototypePool, return_attention: bool = False):
        w = _as_tensor(windows, like=self.embed.weight)
        if w.ndim != 3:
            raise ValueError(f"expected [N x D x T] windows, got shape {tuple(w.shape)}")
        if w.shape[1] != self.channels or w.shape[2] != self.config.window_size:
            raise ValueError(
                f"window shape {tuple(w.shape[1:])} does not match model "
                f"(D={self.channels}, T={self.config.window_size})"
            )
        selected, _ = select_prototype(pool, w)
        x, stats = preprocess.instance_normalize(w)
        proto = preprocess.normalize_with(selected, stats)

        tokens = self._tokens(x)
        proto_tokens = self._tokens(proto)
        maps = []
        for block in self.blocks:
            tokens, weights = block(tokens, proto_tokens, need_weights=return_attention)
            if return_attention:
                maps.append(weights)
        flat = tokens.reshape(w.shape[0], self.channels * self.patch_count * self.d_model)
        z = self.head(flat)
        if return_attention:
            return z, maps
        return z
