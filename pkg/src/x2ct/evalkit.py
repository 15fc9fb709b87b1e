"""Evaluation protocols: top-k retrieval, zero-shot scoring, AUC/PR,
the fast DeLong test, multi-label stratified sampling, and linear probing.

Ranking everywhere is deterministic: descending score with ties broken by
ascending index. The normal CDF uses the Hastings rational approximation
(Abramowitz & Stegun 26.2.17, |error| < 7.5e-8) with pinned constants so
p-values carry no platform math-library drift.

References:
  DeLong, DeLong, Clarke-Pearson (1988), Biometrics 44:837-845.
  Sun & Xu (2014), IEEE Signal Processing Letters 21(11):1389-1393
  (midrank formulation of the structural components).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .encoders import EncoderParams, Vocab, report_counts, report_head
from .errors import UndefinedMetricError
from .phantom import NEGATIVE_TEMPLATE, POSITIVE_TEMPLATE, LabelSpace
from .rng import SplitMix64, derive_seed

# ---------------------------------------------------------------------------
# retrieval


@dataclass
class RetrievalResult:
    k: int
    recall: float
    direction: str
    n_queries: int


def rank_descending(scores: np.ndarray) -> np.ndarray:
    """Order per row: highest score first, ties by ascending column index."""
    return np.argsort(-scores, axis=-1, kind="stable")


def topk_recall(queries: np.ndarray, gallery: np.ndarray, true_match: np.ndarray,
                k: int, direction: str = "") -> RetrievalResult:
    queries = np.asarray(queries, dtype=np.float64)
    gallery = np.asarray(gallery, dtype=np.float64)
    true_match = np.asarray(true_match, dtype=np.int64)
    nq, ng = queries.shape[0], gallery.shape[0]
    if not 1 <= k <= ng:
        raise ValueError(f"k={k} out of range for gallery of {ng}")
    if true_match.shape != (nq,):
        raise ValueError(f"need one match per query, got shape {true_match.shape}")
    if true_match.min() < 0 or true_match.max() >= ng:
        raise ValueError("match index outside the gallery")
    scores = queries @ gallery.T
    order = rank_descending(scores)
    hits = (order[:, :k] == true_match[:, None]).any(axis=1)
    return RetrievalResult(k=k, recall=float(hits.sum()) / nq,
                           direction=direction, n_queries=nq)


# ---------------------------------------------------------------------------
# zero-shot


def _paired_softmax(delta: np.ndarray) -> np.ndarray:
    """sigma(delta) computed so that score(d) + score(-d) == 1 exactly."""
    small = np.exp(-np.abs(delta))
    low = small / (1.0 + small)
    return np.where(delta >= 0, 1.0 - low, low)


def zero_shot_scores(image_embs: np.ndarray, label_space: LabelSpace, vocab: Vocab,
                     report_params: EncoderParams, tau: float,
                     swap_prompts: bool = False) -> np.ndarray:
    """Per-label two-way softmax between a presence and an absence prompt.

    score(i, l) = exp(s+/tau) / (exp(s+/tau) + exp(s-/tau)) where s+- are the
    cosines between image i and the prompt embeddings of label l. With
    ``swap_prompts`` the two templates exchange roles; the two scores sum to
    exactly 1.
    """
    image_embs = np.asarray(image_embs, dtype=np.float64)
    n_labels = len(label_space)
    pos = np.empty((n_labels, image_embs.shape[1]))
    neg = np.empty_like(pos)
    for i, name in enumerate(label_space.names):
        pos_counts = report_counts(POSITIVE_TEMPLATE.format(name=name), vocab, label_space.names)
        neg_counts = report_counts(NEGATIVE_TEMPLATE.format(name=name), vocab, label_space.names)
        pos[i] = report_head(pos_counts[None, :], report_params).data[0]
        neg[i] = report_head(neg_counts[None, :], report_params).data[0]
    s_pos = image_embs @ pos.T
    s_neg = image_embs @ neg.T
    if swap_prompts:
        s_pos, s_neg = s_neg, s_pos
    return _paired_softmax((s_pos - s_neg) / tau)


# ---------------------------------------------------------------------------
# ranking metrics


def _midranks(x: np.ndarray) -> np.ndarray:
    """1-based midranks with ties averaged."""
    order = np.argsort(x, kind="stable")
    sx = x[order]
    n = len(x)
    ranks = np.empty(n, dtype=np.float64)
    i = 0
    while i < n:
        j = i
        while j < n and sx[j] == sx[i]:
            j += 1
        ranks[order[i:j]] = 0.5 * (i + j - 1) + 1.0
        i = j
    return ranks


def _split_classes(scores, labels) -> tuple[np.ndarray, np.ndarray]:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError(f"scores/labels shape mismatch: {scores.shape} vs {labels.shape}")
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise UndefinedMetricError("AUC needs both classes present")
    return pos, neg


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with midranks: P(random positive outranks a random
    negative), ties counting one half."""
    pos, neg = _split_classes(scores, labels)
    m, n = len(pos), len(neg)
    ranks = _midranks(np.concatenate([pos, neg]))
    return (ranks[:m].sum() - m * (m + 1) / 2.0) / (m * n)


def pr_auc(scores, labels) -> float:
    """Average precision under the deterministic tie rule."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    total_pos = int((labels == 1).sum())
    if total_pos == 0:
        raise UndefinedMetricError("average precision needs at least one positive")
    order = rank_descending(scores)
    tp = 0
    ap = 0.0
    for rank, idx in enumerate(order, 1):
        if labels[idx] == 1:
            tp += 1
            ap += tp / rank
    return ap / total_pos


# ---------------------------------------------------------------------------
# DeLong test

# Hastings coefficients, Abramowitz & Stegun eq. 26.2.17
_NCDF_P = 0.2316419
_NCDF_B = (0.319381530, -0.356563782, 1.781477937, -1.821255978, 1.330274429)
_INV_SQRT_2PI = 0.3989422804014327


def normal_cdf(x: float) -> float:
    ax = abs(x)
    k = 1.0 / (1.0 + _NCDF_P * ax)
    poly = k * (_NCDF_B[0] + k * (_NCDF_B[1] + k * (_NCDF_B[2] + k * (_NCDF_B[3] + k * _NCDF_B[4]))))
    upper = 1.0 - _INV_SQRT_2PI * math.exp(-0.5 * ax * ax) * poly
    return upper if x >= 0 else 1.0 - upper


@dataclass
class StatTestResult:
    auc_a: float
    auc_b: float
    z: float
    p_two_tailed: float


def structural_components(scores, labels) -> tuple[float, np.ndarray, np.ndarray]:
    """AUC plus the V10 (per-positive) and V01 (per-negative) components,
    via the midrank identity of Sun & Xu (2014)."""
    pos, neg = _split_classes(scores, labels)
    m, n = len(pos), len(neg)
    tz = _midranks(np.concatenate([pos, neg]))
    tx = _midranks(pos)
    ty = _midranks(neg)
    v10 = (tz[:m] - tx) / n
    v01 = 1.0 - (tz[m:] - ty) / m
    theta = (tz[:m].sum() - m * (m + 1) / 2.0) / (m * n)
    return theta, v10, v01


def delong_test(scores_a, scores_b, labels) -> StatTestResult:
    """Paired two-tailed comparison of two correlated AUCs."""
    labels = np.asarray(labels)
    auc_a, v10_a, v01_a = structural_components(scores_a, labels)
    auc_b, v10_b, v01_b = structural_components(scores_b, labels)
    m, n = len(v10_a), len(v01_a)

    def cov2(u, v):
        if len(u) < 2:
            return np.zeros((2, 2))
        return np.cov(np.stack([u, v]), ddof=1)

    s10 = cov2(v10_a, v10_b)
    s01 = cov2(v01_a, v01_b)
    s = s10 / m + s01 / n
    var = s[0, 0] + s[1, 1] - 2.0 * s[0, 1]
    if var <= 0:
        return StatTestResult(auc_a=auc_a, auc_b=auc_b, z=0.0, p_two_tailed=1.0)
    z = (auc_a - auc_b) / math.sqrt(var)
    p = 2.0 * (1.0 - normal_cdf(abs(z)))
    return StatTestResult(auc_a=auc_a, auc_b=auc_b, z=z, p_two_tailed=min(max(p, 0.0), 1.0))


# ---------------------------------------------------------------------------
# multi-label stratified sampling


def iterative_stratified_sample(labels: np.ndarray, fraction: float, seed: int) -> np.ndarray:
    """Subset of round(fraction*n) indices preserving per-label proportions.

    Greedy iterative stratification: repeatedly take the label with the
    fewest unassigned positives, hand its examples to whichever side (subset
    or remainder) has the greater per-label demand, ties broken by remaining
    capacity and then by a seeded draw. All-negative rows fill leftover
    capacity at the end.
    """
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ValueError(f"labels must be (n, L), got shape {labels.shape}")
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0,1), got {fraction}")
    rng = SplitMix64(derive_seed(seed, "stratified-sample"))
    n, n_labels = labels.shape
    take = int(round(fraction * n))
    capacity = [take, n - take]
    demand = np.stack([fraction * labels.sum(axis=0).astype(np.float64),
                       (1.0 - fraction) * labels.sum(axis=0).astype(np.float64)])
    unassigned = set(range(n))
    assigned_to: dict[int, int] = {}

    def label_pool(lbl: int) -> list[int]:
        return [i for i in sorted(unassigned) if labels[i, lbl] == 1]

    while True:
        remaining_counts = {lbl: len(label_pool(lbl)) for lbl in range(n_labels)}
        candidates = [lbl for lbl, c in remaining_counts.items() if c > 0]
        if not candidates:
            break
        fewest = min(remaining_counts[lbl] for lbl in candidates)
        tied = [lbl for lbl in candidates if remaining_counts[lbl] == fewest]
        lbl = tied[rng.randint(len(tied))] if len(tied) > 1 else tied[0]
        for i in label_pool(lbl):
            sides = [s for s in (0, 1) if capacity[s] > 0]
            if len(sides) == 2:
                if demand[0, lbl] > demand[1, lbl]:
                    side = 0
                elif demand[1, lbl] > demand[0, lbl]:
                    side = 1
                elif capacity[0] != capacity[1]:
                    side = 0 if capacity[0] > capacity[1] else 1
                else:
                    side = rng.randint(2)
            else:
                side = sides[0]
            assigned_to[i] = side
            unassigned.discard(i)
            capacity[side] -= 1
            for l2 in np.flatnonzero(labels[i] == 1):
                demand[side, l2] -= 1.0

    leftovers = sorted(unassigned)
    rng.shuffle(leftovers)
    for i in leftovers:
        if capacity[0] > 0 and (capacity[0] >= capacity[1] or capacity[1] == 0):
            side = 0
        else:
            side = 1
        assigned_to[i] = side
        capacity[side] -= 1
    return np.array(sorted(i for i, s in assigned_to.items() if s == 0), dtype=np.int64)


# ---------------------------------------------------------------------------
# linear probing


@dataclass
class ClassifierHead:
    weights: np.ndarray   # (d, L)
    bias: np.ndarray      # (L,)


@dataclass(frozen=True)
class ProbeConfig:
    lr: float = 0.5
    epochs: int = 400
    l2: float = 1e-4


def probe_class_mask(labels: np.ndarray) -> np.ndarray:
    """1 for labels carrying both classes, 0 for the degenerate ones."""
    labels = np.asarray(labels)
    pos = labels.sum(axis=0)
    return ((pos > 0) & (pos < labels.shape[0])).astype(np.float64)


def probe_loss(w: T.Tensor, b: T.Tensor, embeddings: np.ndarray, labels: np.ndarray,
               mask_cols: np.ndarray, l2: float) -> T.Tensor:
    logits = T.add(T.matmul(T.as_tensor(embeddings), w), b)
    mask = np.broadcast_to(mask_cols, labels.shape)
    loss = T.sigmoid_cross_entropy(logits, labels, mask)
    if l2:
        loss = T.add(loss, T.scale(T.sum_squares(w), l2))
    return loss


def train_linear_probe(embeddings: np.ndarray, labels: np.ndarray,
                       cfg: ProbeConfig = ProbeConfig()) -> ClassifierHead:
    """Joint per-label logistic regression by full-batch gradient descent.

    Labels with a single class in the training subset are masked out of the
    loss (their head stays at the zero init).
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ValueError(f"need a non-empty (n, d) embedding matrix, got {embeddings.shape}")
    if labels.shape[0] != embeddings.shape[0]:
        raise ValueError(f"{labels.shape[0]} label rows for {embeddings.shape[0]} embeddings")
    mask_cols = probe_class_mask(labels)
    if mask_cols.sum() == 0:
        raise UndefinedMetricError("every label is single-class; nothing to probe")
    d, n_labels = embeddings.shape[1], labels.shape[1]
    w = T.Tensor(np.zeros((d, n_labels)), requires_grad=True, name="probe.W")
    b = T.Tensor(np.zeros(n_labels), requires_grad=True, name="probe.b")
    for _ in range(cfg.epochs):
        w.grad = None
        b.grad = None
        with T.Tape() as tape:
            loss = probe_loss(w, b, embeddings, labels, mask_cols, cfg.l2)
        tape.backward(loss)
        w.data -= cfg.lr * w.grad
        b.data -= cfg.lr * b.grad
    return ClassifierHead(weights=w.data, bias=b.data)


def probe_scores(head: ClassifierHead, embeddings: np.ndarray) -> np.ndarray:
    z = np.asarray(embeddings, dtype=np.float64) @ head.weights + head.bias
    return 1.0 / (1.0 + np.exp(-z))


# ---------------------------------------------------------------------------
# macro aggregation


def macro_auc_pr(scores: np.ndarray, labels: np.ndarray):
    """Macro-averaged AUC and average precision across labels.

    Returns (macro_auc, macro_pr, per_label, skipped) where per_label maps
    column index to (auc, pr) and skipped lists single-class columns.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    per_label: dict[int, tuple[float, float]] = {}
    skipped: list[int] = []
    for col in range(labels.shape[1]):
        try:
            a = auc(scores[:, col], labels[:, col])
            p = pr_auc(scores[:, col], labels[:, col])
        except UndefinedMetricError:
            skipped.append(col)
            continue
        per_label[col] = (a, p)
    if not per_label:
        raise UndefinedMetricError("all labels single-class")
    macro_a = float(np.mean([v[0] for v in per_label.values()]))
    macro_p = float(np.mean([v[1] for v in per_label.values()]))
    return macro_a, macro_p, per_label, skipped
