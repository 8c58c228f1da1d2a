"""Losses, the distillation training loop, and checkpointing.

The student is pulled toward the teacher on normal windows and pushed away
on synthetically augmented ones; the teacher is regularized to give similar
representations to a window and its augmented twin.  Loss math accumulates
in float64 on top of float32 forward passes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
import torch

from ._layers import fill_from_rng
from .augment import augment_batch
from .container import load_tensors, require_shape, save_tensors
from .core import Config, DataError, NumericError, WindowBatch, make_rng
from .student import PrototypePool, StudentEncoder
from .teacher import TeacherEncoder, TransformerBackbone, make_surrogate_backbone

LOG_CLAMP = 1e-12
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


def squared_distance(z: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    """||z - c||^2 over the last axis, accumulated in float64."""
    return (z.double() - c.double()).pow(2).sum(dim=-1)


def hsc_loss(z, c, y) -> torch.Tensor:
    """Hypersphere classifier loss for a representation pair.

    l = exp(-||z - c||^2); returns -(1-y) log l - y log(1 - l) with log
    arguments clamped at 1e-12.  Accepts [d] vectors (scalar result) or
    [N x d] batches (per-sample results).
    """
    z = torch.as_tensor(z)
    c = torch.as_tensor(c)
    d2 = squared_distance(z, c)
    ell = torch.exp(-d2)
    y_t = torch.as_tensor(y, dtype=torch.float64)
    neg = -torch.log(ell.clamp_min(LOG_CLAMP))
    pos = -torch.log((1.0 - ell).clamp_min(LOG_CLAMP))
    return (1.0 - y_t) * neg + y_t * pos


def kd_loss(z, c, z_aug, c_aug) -> torch.Tensor:
    """Distillation loss over N pairs: pull (z, c) together, push the
    augmented pair apart.

    (1/N) sum_i ||z_i - c_i||^2 - log(1 - exp(-||z^a_i - c^a_i||^2)),
    log argument clamped at 1e-12.
    """
    pull = squared_distance(torch.as_tensor(z), torch.as_tensor(c))
    d2_aug = squared_distance(torch.as_tensor(z_aug), torch.as_tensor(c_aug))
    push = -torch.log((1.0 - torch.exp(-d2_aug)).clamp_min(LOG_CLAMP))
    return (pull + push).mean()


def contrastive_loss(c, c_aug) -> torch.Tensor:
    """Negative-sample-free contrastive loss: mean of -cos(c_i, c^a_i).

    Always lies in [-1, 1]; norms are guarded at 1e-12 in the denominator.
    """
    c = torch.as_tensor(c).double()
    c_aug = torch.as_tensor(c_aug).double()
    num = (c * c_aug).sum(dim=-1)
    denom = (c.norm(dim=-1) * c_aug.norm(dim=-1)).clamp_min(LOG_CLAMP)
    return (-num / denom).mean()


def total_loss(kd, ce, weight: float) -> torch.Tensor:
    """Complete objective: kd + weight * ce."""
    return kd + weight * ce


class Strategy(str, Enum):
    """Training strategies; all but FULL are ablations."""

    FULL = "full"
    NONAUG = "nonaug"                 # no synthetic anomalies at all
    NO_CONTRASTIVE = "noct"           # drop the teacher contrastive term
    STUDENT_CONTRASTIVE = "wcs"       # also push student reps of a window
                                      # and its augmented twin apart

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        aliases = {
            "full": cls.FULL,
            "nonaug": cls.NONAUG,
            "noct": cls.NO_CONTRASTIVE,
            "nocontrastive": cls.NO_CONTRASTIVE,
            "wcs": cls.STUDENT_CONTRASTIVE,
            "studentcontrastive": cls.STUDENT_CONTRASTIVE,
        }
        key = name.lower().replace("_", "").replace("-", "")
        if key not in aliases:
            raise ValueError(f"unknown strategy {name!r}")
        return aliases[key]


@dataclass
class ModelState:
    """Everything needed to score and to resume: both networks, the pool,
    the optimizer, and training bookkeeping."""

    student: StudentEncoder
    pool: PrototypePool
    teacher: TeacherEncoder
    config: Config
    channels: int
    strategy: Strategy
    optimizer: Optional[torch.optim.Adam]
    epoch: int = 0
    best_loss: float = float("inf")

    @property
    def d_model(self) -> int:
        return self.student.d_model

    def trainable_parameters(self) -> dict:
        return {name: p for name, p in named_tensors(self).items()
                if p.requires_grad and not name.startswith("optim/")}

    def frozen_parameters(self) -> dict:
        return {name: p for name, p in named_tensors(self).items()
                if not p.requires_grad}


def _student_block_tensors(block, prefix: str) -> dict:
    out = {}
    for key, lin in (("q_w", block.q_w), ("k_w", block.k_w), ("v_w", block.v_w),
                     ("q_m", block.q_m), ("k_m", block.k_m), ("v_m", block.v_m),
                     ("out", block.out)):
        out[f"{prefix}.attn.{key}"] = lin.weight
    out[f"{prefix}.ffn.w1"] = block.ffn.w1.weight
    out[f"{prefix}.ffn.b1"] = block.ffn.w1.bias
    out[f"{prefix}.ffn.w2"] = block.ffn.w2.weight
    out[f"{prefix}.ffn.b2"] = block.ffn.w2.bias
    for j, norm in ((1, block.norm1), (2, block.norm2)):
        out[f"{prefix}.norm{j}.scale"] = norm.weight
        out[f"{prefix}.norm{j}.bias"] = norm.bias
    return out


def named_tensors(state: ModelState) -> dict:
    """Canonical name -> parameter mapping used by checkpoints."""
    out = {
        "student/embed.weight": state.student.embed.weight,
        "student/embed.bias": state.student.embed.bias,
        "student/pos_embed": state.student.pos_embed,
        "student/head.weight": state.student.head.weight,
        "student/head.bias": state.student.head.bias,
        "student/prototypes": state.pool.prototypes,
        "teacher/embed.weight": state.teacher.embed.weight,
        "teacher/embed.bias": state.teacher.embed.bias,
        "teacher/head.weight": state.teacher.head.weight,
        "teacher/head.bias": state.teacher.head.bias,
    }
    for i, block in enumerate(state.student.blocks):
        out.update(_student_block_tensors(block, f"student/blocks.{i}"))
    backbone = state.teacher.backbone
    out["teacher/backbone.pos_embed"] = backbone.pos_embed
    for i, block in enumerate(backbone.blocks):
        prefix = f"teacher/backbone.blocks.{i}"
        for suffix, param in block.frozen_parameters().items():
            out[f"{prefix}.{suffix}"] = param
        for j, norm in ((1, block.norm1), (2, block.norm2)):
            out[f"{prefix}.norm{j}.scale"] = norm.weight
            out[f"{prefix}.norm{j}.bias"] = norm.bias
    return out


def build_state(config: Config, channels: int, windows: np.ndarray,
                strategy: Strategy = Strategy.FULL, d_model: int = 64,
                backbone: TransformerBackbone = None,
                rng: np.random.Generator = None) -> ModelState:
    """Fresh model state, fully determined by config.seed (or the given rng)."""
    if rng is None:
        rng = make_rng(config.seed)
    rng_pool, rng_student, rng_teacher, rng_backbone = rng.spawn(4)
    pool = PrototypePool.from_windows(windows, config.prototype_count, rng_pool)
    if backbone is None:
        backbone = make_surrogate_backbone(config, rng_backbone, d_model=d_model)
    student_net = StudentEncoder(config, channels, rng_student, d_model=d_model)
    teacher_net = TeacherEncoder(config, channels, backbone, rng_teacher)
    params = [p for p in list(student_net.parameters()) + list(pool.parameters())
              + list(teacher_net.parameters()) if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.learning_rate,
                                 betas=ADAM_BETAS, eps=ADAM_EPS)
    return ModelState(student=student_net, pool=pool, teacher=teacher_net,
                      config=config, channels=channels, strategy=strategy,
                      optimizer=optimizer)


def _batch_losses(state: ModelState, originals: np.ndarray,
                  augmented: Optional[np.ndarray]):
    """Forward both networks and combine losses per the active strategy.

    Returns (total, kd, ce-or-None)."""
    cfg = state.config
    z = state.student(originals, state.pool)
    c = state.teacher(originals)
    if state.strategy is Strategy.NONAUG:
        # no synthetic anomalies: only the pull term of the distillation loss
        kd = squared_distance(z, c).mean()
        return kd, kd, None
    z_aug = state.student(augmented, state.pool)
    c_aug = state.teacher(augmented)
    kd = kd_loss(z, c, z_aug, c_aug)
    if state.strategy is Strategy.NO_CONTRASTIVE:
        return kd, kd, None
    ce = contrastive_loss(c, c_aug)
    total = total_loss(kd, ce, cfg.contrastive_weight)
    if state.strategy is Strategy.STUDENT_CONTRASTIVE:
        # Push the student's original/augmented representations apart:
        # minimize +cos(z, z^a) (= -contrastive_loss of the student pair).
        total = total - cfg.contrastive_weight * contrastive_loss(z, z_aug)
    return total, kd, ce


def train(batch: WindowBatch, config: Config, strategy="full",
          d_model: int = 64, backbone: TransformerBackbone = None,
          log_path=None) -> ModelState:
    """Train on (assumed-normal) windows with early stopping.

    Writes one JSONL record per epoch to log_path when given (epoch and the
    kd / contrastive / total loss components; the contrastive entry is
    absent for strategies that drop it).  Raises NumericError with the step
    index and loss components if the loss goes non-finite.
    """
    if batch.count < 1:
        raise ValueError("cannot train on an empty window batch")
    strategy = strategy if isinstance(strategy, Strategy) else Strategy.parse(strategy)
    rng_model, rng_shuffle, rng_augment = make_rng(config.seed).spawn(3)
    state = build_state(config, batch.windows.shape[1], batch.windows,
                        strategy=strategy, d_model=d_model, backbone=backbone,
                        rng=rng_model)
    return fit(state, batch, rng_shuffle, rng_augment, log_path=log_path)


def fit(state: ModelState, batch: WindowBatch, rng_shuffle: np.random.Generator,
        rng_augment: np.random.Generator, log_path=None) -> ModelState:
    """Run the optimization loop on an existing state (in place)."""
    config = state.config
    strategy = state.strategy
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    windows = batch.windows
    stall = 0
    step = 0
    try:
        for epoch in range(config.epochs):
            order = rng_shuffle.permutation(batch.count)
            sums = {"kd": 0.0, "ce": 0.0, "total": 0.0}
            ce_seen = False
            n_seen = 0
            for lo in range(0, batch.count, config.batch_size):
                idx = order[lo : lo + config.batch_size]
                originals = windows[idx]
                augmented = None
                if strategy is not Strategy.NONAUG:
                    augmented, _ = augment_batch(originals, config.augmentation, rng_augment)
                total, kd, ce = _batch_losses(state, originals, augmented)
                kd_val = float(kd.detach())
                ce_val = None if ce is None else float(ce.detach())
                total_val = float(total.detach())
                if not np.isfinite(total_val):
                    raise NumericError(
                        f"non-finite loss at step {step}: kd={kd_val!r}, ce={ce_val!r}"
                    )
                state.optimizer.zero_grad()
                total.backward()
                state.optimizer.step()
                step += 1
                n = len(idx)
                n_seen += n
                sums["kd"] += kd_val * n
                sums["total"] += total_val * n
                if ce_val is not None:
                    sums["ce"] += ce_val * n
                    ce_seen = True
            state.epoch = epoch + 1
            epoch_loss = sums["total"] / n_seen
            record = {"epoch": epoch, "loss_kd": sums["kd"] / n_seen,
                      "loss_total": epoch_loss}
            if ce_seen:
                record["loss_ce"] = sums["ce"] / n_seen
            if log_fh:
                log_fh.write(json.dumps(record, sort_keys=True) + "\n")
            if epoch_loss < state.best_loss:
                state.best_loss = epoch_loss
                stall = 0
            else:
                stall += 1
                if stall >= config.patience:
                    break
    finally:
        if log_fh:
            log_fh.close()
    return state


def save_checkpoint(state: ModelState, path) -> None:
    """Checkpoint = named-tensor container + '<path>.json' sidecar."""
    tensors = {name: p.detach().numpy().copy() for name, p in named_tensors(state).items()}
    if state.optimizer is not None:
        for name, param in named_tensors(state).items():
            opt_state = state.optimizer.state.get(param)
            if not opt_state:
                continue
            tensors[f"optim/{name}.exp_avg"] = opt_state["exp_avg"].numpy().copy()
            tensors[f"optim/{name}.exp_avg_sq"] = opt_state["exp_avg_sq"].numpy().copy()
            tensors[f"optim/{name}.step"] = np.array(float(opt_state["step"]), dtype=np.float32)
    save_tensors(path, tensors)
    sidecar = {
        "format_version": 1,
        "config": state.config.to_dict(),
        "channels": state.channels,
        "d_model": state.d_model,
        "strategy": state.strategy.value,
        "epoch": state.epoch,
        "best_loss": state.best_loss,
    }
    with open(f"{path}.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path) -> ModelState:
    """Rebuild a ModelState bit-exactly from a checkpoint pair."""
    with open(f"{path}.json", "r", encoding="utf-8") as fh:
        sidecar = json.load(fh)
    config = Config.from_dict(sidecar["config"])
    channels = int(sidecar["channels"])
    d_model = int(sidecar["d_model"])
    tensors = load_tensors(path)

    table = tensors["teacher/backbone.pos_embed"].shape[0] \
        if "teacher/backbone.pos_embed" in tensors else max(16, config.patch_count)
    backbone = TransformerBackbone(
        blocks=config.teacher_layers, d_model=d_model,
        heads=config.head_count, table_size=table,
    )
    seed_rng = make_rng(0)
    placeholder = np.zeros((1, channels, config.window_size), dtype=np.float32)
    pool = PrototypePool.from_windows(placeholder, config.prototype_count, seed_rng)
    student_net = StudentEncoder(config, channels, seed_rng, d_model=d_model)
    teacher_net = TeacherEncoder(config, channels, backbone, seed_rng)
    state = ModelState(student=student_net, pool=pool, teacher=teacher_net,
                       config=config, channels=channels,
                       strategy=Strategy.parse(sidecar["strategy"]),
                       optimizer=None, epoch=int(sidecar["epoch"]),
                       best_loss=float(sidecar["best_loss"]))
    registry = named_tensors(state)
    missing = [n for n in registry if n not in tensors]
    if missing:
        raise DataError(f"{path}: missing required tensors: {missing}")
    for name, param in registry.items():
        fill_from_rng(param, require_shape(tensors, name, tuple(param.shape), str(path)))

    params = [p for p in named_tensors(state).values() if p.requires_grad]
    optimizer = torch.optim.Adam(params, lr=config.learning_rate,
                                 betas=ADAM_BETAS, eps=ADAM_EPS)
    for name, param in named_tensors(state).items():
        key = f"optim/{name}.exp_avg"
        if key in tensors:
            step_value = float(np.asarray(tensors[f"optim/{name}.step"]).reshape(-1)[0])
            optimizer.state[param] = {
                "step": torch.tensor(step_value),
                "exp_avg": torch.from_numpy(tensors[key].copy()),
                "exp_avg_sq": torch.from_numpy(tensors[f"optim/{name}.exp_avg_sq"].copy()),
            }
    state.optimizer = optimizer
    return state
