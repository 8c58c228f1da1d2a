"""Teacher encoder: linear patch embedding -> pretrained backbone -> head.

The backbone keeps the freezing policy of an adapted pretrained sequence
model: attention and feed-forward tensors are frozen (bit-identical across
any number of optimizer steps), while the positional embedding and layer
norms stay trainable.  A deterministic seeded surrogate backbone ships as
the default; a real pretrained checkpoint in the named-tensor container
format can be dropped in without code changes.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn

from . import preprocess
from ._layers import (
    FeedForward,
    fill_from_rng,
    init_linear,
    merge_heads,
    normal_init,
    orthogonal_matrix,
    split_heads,
)
from .container import load_tensors, require_names, require_shape, save_tensors
from .core import Config, DataError

# Tensor-name suffixes inside one backbone block, in container order.
_ATTN_NAMES = ("q", "k", "v", "out")
_FFN_NAMES = ("w1", "b1", "w2", "b2")


def block_tensor_names(index: int) -> list:
    names = [f"backbone.blocks.{index}.attn.{s}" for s in _ATTN_NAMES]
    names += [f"backbone.blocks.{index}.ffn.{s}" for s in _FFN_NAMES]
    names += [f"backbone.blocks.{index}.norm{j}.{s}" for j in (1, 2) for s in ("scale", "bias")]
    return names


class BackboneBlock(nn.Module):
    """Pre-norm self-attention block; attention/FFN frozen, norms trainable."""

    def __init__(self, d_model: int, heads: int, hidden: int):
        super().__init__()
        if d_model % heads:
            raise ValueError(f"head count {heads} must divide d_model {d_model}")
        self.heads = heads
        self.norm1 = nn.LayerNorm(d_model)
        self.norm2 = nn.LayerNorm(d_model)
        self.attn_q = nn.Linear(d_model, d_model, bias=False)
        self.attn_k = nn.Linear(d_model, d_model, bias=False)
        self.attn_v = nn.Linear(d_model, d_model, bias=False)
        self.attn_out = nn.Linear(d_model, d_model, bias=False)
        self.ffn = FeedForward(d_model, expansion=max(1, hidden // d_model))
        for param in self.frozen_parameters().values():
            param.requires_grad_(False)

    def frozen_parameters(self) -> dict:
        return {
            "attn.q": self.attn_q.weight,
            "attn.k": self.attn_k.weight,
            "attn.v": self.attn_v.weight,
            "attn.out": self.attn_out.weight,
            "ffn.w1": self.ffn.w1.weight,
            "ffn.b1": self.ffn.w1.bias,
            "ffn.w2": self.ffn.w2.weight,
            "ffn.b2": self.ffn.w2.bias,
        }

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        q = split_heads(self.attn_q(h), self.heads)
        k = split_heads(self.attn_k(h), self.heads)
        v = split_heads(self.attn_v(h), self.heads)
        weights = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(q.shape[-1]), dim=-1)
        x = x + self.attn_out(merge_heads(weights @ v))
        x = x + self.ffn(self.norm2(x))
        return x


class TransformerBackbone(nn.Module):
    """Positional embedding plus B self-attention blocks with frozen weights."""

    def __init__(self, blocks: int, d_model: int, heads: int, table_size: int,
                 hidden: int = None):
        super().__init__()
        hidden = 4 * d_model if hidden is None else hidden
        self.d_model = d_model
        self.pos_embed = nn.Parameter(torch.zeros(table_size, d_model))
        self.blocks = nn.ModuleList(
            BackboneBlock(d_model, heads, hidden) for _ in range(blocks)
        )

    @property
    def table_size(self) -> int:
        return self.pos_embed.shape[0]

    def forward(self, tokens: torch.Tensor) -> torch.Tensor:
        """[B x n x d_model] -> output of the last self-attention block."""
        n = tokens.shape[1]
        if n > self.table_size:
            raise DataError(
                f"{n} patches exceed the positional table ({self.table_size})"
            )
        x = tokens + self.pos_embed[:n]   # longer pretrained tables are sliced
        for block in self.blocks:
            x = block(x)
        return x

    def frozen_tensors(self) -> dict:
        out = {}
        for i, block in enumerate(self.blocks):
            for suffix, param in block.frozen_parameters().items():
                out[f"backbone.blocks.{i}.{suffix}"] = param
        return out

    def to_tensors(self) -> dict:
        """Canonical container mapping (detached numpy copies)."""
        out = {"backbone.pos_embed": self.pos_embed.detach().numpy().copy()}
        for i, block in enumerate(self.blocks):
            prefix = f"backbone.blocks.{i}"
            for suffix, param in block.frozen_parameters().items():
                out[f"{prefix}.{suffix}"] = param.detach().numpy().copy()
            for j, norm in ((1, block.norm1), (2, block.norm2)):
                out[f"{prefix}.norm{j}.scale"] = norm.weight.detach().numpy().copy()
                out[f"{prefix}.norm{j}.bias"] = norm.bias.detach().numpy().copy()
        return out

    def load_from_tensors(self, tensors: dict, path="tensors") -> None:
        dm = self.d_model
        pos = tensors.get("backbone.pos_embed")
        if pos is None:
            raise DataError(f"{path}: missing required tensors: ['backbone.pos_embed']")
        if pos.ndim != 2 or pos.shape[1] != dm:
            raise DataError(
                f"{path}: tensor 'backbone.pos_embed' has shape {tuple(pos.shape)}, "
                f"expected [*, {dm}]"
            )
        if pos.shape[0] != self.table_size:
            self.pos_embed = nn.Parameter(torch.zeros(pos.shape[0], dm))
        fill_from_rng(self.pos_embed, pos)
        for i, block in enumerate(self.blocks):
            prefix = f"backbone.blocks.{i}"
            require_names(tensors, block_tensor_names(i), path)
            hidden = block.ffn.w1.weight.shape[0]
            shapes = {
                f"{prefix}.attn.q": (dm, dm),
                f"{prefix}.attn.k": (dm, dm),
                f"{prefix}.attn.v": (dm, dm),
                f"{prefix}.attn.out": (dm, dm),
                f"{prefix}.ffn.w1": (hidden, dm),
                f"{prefix}.ffn.b1": (hidden,),
                f"{prefix}.ffn.w2": (dm, hidden),
                f"{prefix}.ffn.b2": (dm,),
            }
            for j in (1, 2):
                shapes[f"{prefix}.norm{j}.scale"] = (dm,)
                shapes[f"{prefix}.norm{j}.bias"] = (dm,)
            params = dict(block.frozen_parameters())
            params.update({
                "norm1.scale": block.norm1.weight, "norm1.bias": block.norm1.bias,
                "norm2.scale": block.norm2.weight, "norm2.bias": block.norm2.bias,
            })
            for suffix, param in params.items():
                name = f"{prefix}.{suffix}"
                fill_from_rng(param, require_shape(tensors, name, shapes[name], path))


def make_surrogate_backbone(config: Config, rng: np.random.Generator,
                            d_model: int = 64, table_size: int = None) -> TransformerBackbone:
    """Deterministic stand-in for a pretrained backbone at desk scale.

    Attention projections are random orthogonal matrices, FFN weights small
    Gaussians; everything the freezing policy marks frozen is fixed at these
    values ("pretrained by construction").
    """
    if table_size is None:
        table_size = max(16, config.patch_count)
    backbone = TransformerBackbone(
        blocks=config.teacher_layers, d_model=d_model,
        heads=config.head_count, table_size=table_size,
    )
    normal_init(backbone.pos_embed, rng, 0.1)
    for block in backbone.blocks:
        for lin in (block.attn_q, block.attn_k, block.attn_v, block.attn_out):
            fill_from_rng(lin.weight, orthogonal_matrix(rng, d_model))
        hidden = block.ffn.w1.weight.shape[0]
        normal_init(block.ffn.w1.weight, rng, 0.5 / math.sqrt(d_model))
        normal_init(block.ffn.w1.bias, rng, 0.02)
        normal_init(block.ffn.w2.weight, rng, 0.5 / math.sqrt(hidden))
        normal_init(block.ffn.w2.bias, rng, 0.02)
    return backbone


def save_backbone(backbone: TransformerBackbone, path) -> None:
    save_tensors(path, backbone.to_tensors())


def load_pretrained(path, config: Config, d_model: int = 64) -> TransformerBackbone:
    """Build a backbone from a named-tensor container file.

    The container must hold the positional embedding and all block tensors
    for config.teacher_layers blocks at the given d_model; missing names and
    shape mismatches are rejected with the offending tensor named.
    """
    tensors = load_tensors(path)
    w1 = tensors.get("backbone.blocks.0.ffn.w1")
    hidden = int(w1.shape[0]) if w1 is not None and w1.ndim == 2 else 4 * d_model
    backbone = TransformerBackbone(
        blocks=config.teacher_layers, d_model=d_model,
        heads=config.head_count, table_size=1, hidden=hidden,
    )
    backbone.load_from_tensors(tensors, path=str(path))
    return backbone


class TeacherEncoder(nn.Module):
    """varphi(w): raw [N x D x T] windows -> representations [N x feature_dim].

    The input embedding is linear only (the backbone owns the positional
    embedding) and uses parameters distinct from the student's.
    """

    def __init__(self, config: Config, channels: int, backbone: TransformerBackbone,
                 rng: np.random.Generator):
        super().__init__()
        self.config = config
        self.channels = channels
        self.patch_count = config.patch_count
        if self.patch_count > backbone.table_size:
            raise DataError(
                f"{self.patch_count} patches exceed the backbone positional table "
                f"({backbone.table_size})"
            )
        self.embed = nn.Linear(config.patch_size, backbone.d_model)
        self.backbone = backbone
        self.head = nn.Linear(
            channels * self.patch_count * backbone.d_model, config.feature_dim
        )
        init_linear(self.embed, rng)
        init_linear(self.head, rng)

    def forward(self, windows) -> torch.Tensor:
        if not isinstance(windows, torch.Tensor):
            windows = torch.from_numpy(np.ascontiguousarray(windows, dtype=np.float32))
        windows = windows.to(self.embed.weight.dtype)
        if windows.ndim != 3:
            raise ValueError(f"expected [N x D x T] windows, got shape {tuple(windows.shape)}")
        if windows.shape[1] != self.channels or windows.shape[2] != self.config.window_size:
            raise ValueError(
                f"window shape {tuple(windows.shape[1:])} does not match model "
                f"(D={self.channels}, T={self.config.window_size})"
            )
        x, _ = preprocess.instance_normalize(windows)
        patches = preprocess.patch(x, self.config.patch_size, self.config.patch_stride).patches
        n_win, channels, n, p = patches.shape
        tokens = self.embed(patches.reshape(n_win * channels, n, p))
        encoded = self.backbone(tokens)
        flat = encoded.reshape(n_win, channels * n * self.backbone.d_model)
        return self.head(flat)
