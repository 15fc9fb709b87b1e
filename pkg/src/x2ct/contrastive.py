"""Symmetric contrastive objective, AdamW, and the two-stage training loop.

Stage 1 aligns the volume and report heads against each other (weights
alpha=1, beta=gamma=0) and freezes them; stage 2 trains the radiograph
student against the frozen pair (alpha=0, beta=gamma=1 by default). Matched
items share a batch index; every other batch member is a negative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoders import EncoderParams, student_head
from .errors import NumericError
from .rng import SplitMix64, derive_seed


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 0.0
    beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("loss weights must be non-negative")
        if self.alpha == 0 and self.beta == 0 and self.gamma == 0:
            raise ValueError("at least one loss weight must be positive")


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.07
    lr: float = 1e-3
    batch_size: int = 32
    epochs: int = 30
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    reduction: str = "mean"
    seed: int = 42

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2: the objective needs in-batch negatives")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.reduction!r}")


def _check_normalized(h: T.Tensor, tag: str) -> None:
    norms = np.sqrt((h.data * h.data).sum(axis=1))
    worst = np.abs(norms - 1.0).max()
    if worst > 1e-6:
        raise ValueError(f"{tag} rows must be unit-norm (max deviation {worst:.3g})")


def info_nce_loss(h_a, h_b, tau: float, reduction: str = "mean") -> T.Tensor:
    """Symmetric temperature-scaled cross-entropy over in-batch similarities.

    Index-matched rows are positives; both softmax directions contribute with
    weight 1/2.
    """
    h_a, h_b = T.as_tensor(h_a), T.as_tensor(h_b)
    n = h_a.shape[0]
    if n < 2:
        raise ValueError(f"need a batch of >= 2 matched pairs, got {n}")
    if h_b.shape != h_a.shape:
        raise ValueError(f"batch shape mismatch: {h_a.shape} vs {h_b.shape}")
    _check_normalized(h_a, "first batch")
    _check_normalized(h_b, "second batch")
    targets = np.arange(n)
    logits_ab = T.scale(T.similarity(h_a, h_b), 1.0 / tau)
    logits_ba = T.scale(T.similarity(h_b, h_a), 1.0 / tau)
    ce_ab = T.softmax_cross_entropy_rows(logits_ab, targets, reduction)
    ce_ba = T.softmax_cross_entropy_rows(logits_ba, targets, reduction)
    return T.scale(T.add(ce_ab, ce_ba), 0.5)


def x2ct_loss(h_c, h_r, h_x, weights: LossWeights, tau: float,
              reduction: str = "mean") -> T.Tensor:
    """Weighted sum of the three pairwise terms; zero-weight terms are
    skipped entirely so no gradient flows through them."""
    shapes = {T.as_tensor(h).shape for h in (h_c, h_r, h_x)}
    if len(shapes) != 1:
        raise ValueError(f"batch shapes differ: {sorted(shapes)}")
    total = None
    for weight, (a, b) in ((weights.alpha, (h_c, h_r)),
                           (weights.beta, (h_x, h_r)),
                           (weights.gamma, (h_x, h_c))):
        if weight == 0:
            continue
        term = T.scale(info_nce_loss(a, b, tau, reduction), weight)
        total = term if total is None else T.add(total, term)
    return total


class AdamW:
    """Decoupled weight decay Adam; decay applies to weight matrices only
    (parameter names ending in ".W"), never biases."""

    def __init__(self, params: dict[str, T.Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise NumericError(f"non-finite gradient in tensor {name!r}")
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / bc1
            v_hat = self.v[name] / bc2
            p.data -= self.lr * (m_hat / (np.sqrt(v_hat) + self.eps))
            if self.weight_decay and name.endswith(".W"):
                p.data -= self.lr * self.weight_decay * p.data


@dataclass
class TrainLog:
    rows: list[tuple[int, str, float]] = field(default_factory=list)

    def log_epoch(self, epoch: int, term_sums: dict[str, float], batches: int) -> None:
        for term, total in term_sums.items():
            self.rows.append((epoch, term, total / batches))


def epoch_order(n: int, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Seeded shuffle split into full batches; the last partial batch drops."""
    rng = SplitMix64(derive_seed(seed, "epoch", epoch))
    idx = list(range(n))
    rng.shuffle(idx)
    n_batches = n // batch_size
    return [np.array(idx[b * batch_size:(b + 1) * batch_size]) for b in range(n_batches)]


def _finite_or_raise(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericError(f"{what} diverged (non-finite loss)")
    return value


def train_teachers(volume_feats: np.ndarray, report_counts: np.ndarray,
                   cfg: TrainConfig, embed_dim: int) -> tuple[EncoderParams, EncoderParams, TrainLog]:
    """Stage 1: align the volume and report heads; returns them frozen."""
    from .encoders import init_report_encoder, init_volume_encoder, report_head, volume_head

    n = volume_feats.shape[0]
    if n < cfg.batch_size:
        raise ValueError(f"train split of {n} smaller than batch size {cfg.batch_size}")
    params_c = init_volume_encoder(embed_dim, cfg.seed, feature_size=volume_feats.shape[1])
    params_r = init_report_encoder(report_counts.shape[1], embed_dim, cfg.seed)
    opt = AdamW({**params_c.tensors, **params_r.tensors}, cfg.lr, cfg.weight_decay,
                cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    log = TrainLog()
    for epoch in range(cfg.epochs):
        sums = {"L_CR": 0.0, "total": 0.0}
        batches = epoch_order(n, cfg.batch_size, cfg.seed, epoch)
        for batch in batches:
            opt.zero_grad()
            with T.Tape() as tape:
                h_c = volume_head(volume_feats[batch], params_c)
                h_r = report_head(report_counts[batch], params_r)
                loss = info_nce_loss(h_c, h_r, cfg.tau, cfg.reduction)
            tape.backward(loss)
            opt.step()
            value = _finite_or_raise(loss.item(), "teacher training")
            sums["L_CR"] += value
            sums["total"] += value
        log.log_epoch(epoch, sums, len(batches))
    params_c.set_trainable(False)
    params_r.set_trainable(False)
    return params_c, params_r, log


def train_student(patch_rows: np.ndarray, patches_per_item: int,
                  teacher_c: np.ndarray, teacher_r: np.ndarray,
                  cfg: TrainConfig, weights: LossWeights,
                  student: EncoderParams) -> TrainLog:
    """Stage 2: optimize the radiograph head against frozen teacher embeddings.

    ``patch_rows`` stacks every item's patches: item i owns rows
    [i*patches_per_item, (i+1)*patches_per_item).
    """
    n = teacher_c.shape[0]
    if patch_rows.shape[0] != n * patches_per_item:
        raise ValueError(
            f"{patch_rows.shape[0]} patch rows for {n} items x {patches_per_item} patches")
    if teacher_r.shape[0] != n:
        raise ValueError(f"teacher batches disagree: {teacher_c.shape} vs {teacher_r.shape}")
    if n < cfg.batch_size:
        raise ValueError(f"train split of {n} smaller than batch size {cfg.batch_size}")

    opt = AdamW(student.tensors, cfg.lr, cfg.weight_decay,
                cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    log = TrainLog()
    p = patches_per_item
    grouped = patch_rows.reshape(n, p, patch_rows.shape[1])
    for epoch in range(cfg.epochs):
        sums = {"L_CR": 0.0, "L_XR": 0.0, "L_XC": 0.0, "total": 0.0}
        batches = epoch_order(n, cfg.batch_size, cfg.seed, epoch)
        for batch in batches:
            opt.zero_grad()
            flat = grouped[batch].reshape(len(batch) * p, -1)
            with T.Tape() as tape:
                h_x = student_head(flat, p, student)
                h_c = T.Tensor(teacher_c[batch])
                h_r = T.Tensor(teacher_r[batch])
                loss = x2ct_loss(h_c, h_r, h_x, weights, cfg.tau, cfg.reduction)
            tape.backward(loss)
            opt.step()
            _finite_or_raise(loss.item(), "student training")
            # re-evaluate the three terms for the log (forward only)
            if weights.alpha:
                sums["L_CR"] += info_nce_loss(h_c, h_r, cfg.tau, cfg.reduction).item() * weights.alpha
            if weights.beta:
                sums["L_XR"] += info_nce_loss(h_x, h_r, cfg.tau, cfg.reduction).item() * weights.beta
            if weights.gamma:
                sums["L_XC"] += info_nce_loss(h_x, h_c, cfg.tau, cfg.reduction).item() * weights.gamma
            sums["total"] += loss.item()
        log.log_epoch(epoch, sums, len(batches))
    return log
