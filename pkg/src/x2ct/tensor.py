"""Dense float64 tensors with reverse-mode differentiation on a recording tape.

The op vocabulary is deliberately small: exactly what the contrastive
objective, the encoder heads, and the linear probe need. Ops executed while a
Tape is active append one record each; Tape.backward replays the records in
exact reverse order, accumulating gradients into the ``grad`` buffer of every
tensor that requested them. Ops executed with no active tape (or on constants
only) are plain forward computations.

All arithmetic is 64-bit; gradient checks demand the precision and the
problem sizes here never need less.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.ascontiguousarray(np.asarray(data, dtype=np.float64))
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeRecord:
    kind: str
    input_ids: tuple[int, ...]
    output_id: int
    backward: Callable[[], None]


@dataclass
class Tape:
    """Ordered record of executed ops; replayed in reverse for gradients."""

    records: list[TapeRecord] = field(default_factory=list)
    _ids: dict[int, int] = field(default_factory=dict)
    _next_id: int = 0

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        _ACTIVE.pop()
        return False

    def node_id(self, t: Tensor) -> int:
        nid = self._ids.get(id(t))
        if nid is None:
            nid = self._next_id
            self._ids[id(t)] = nid
            self._next_id += 1
        return nid

    def record(self, kind: str, inputs: tuple[Tensor, ...], output: Tensor,
               backward: Callable[[], None]) -> None:
        in_ids = tuple(self.node_id(t) for t in inputs)
        self.records.append(TapeRecord(kind, in_ids, self.node_id(output), backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for rec in reversed(self.records):
            rec.backward()


_ACTIVE: list[Tape] = []


def _current_tape() -> Tape | None:
    return _ACTIVE[-1] if _ACTIVE else None


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _finish(kind: str, inputs: tuple[Tensor, ...], out: Tensor,
            backward: Callable[[], None]) -> Tensor:
    out.requires_grad = any(t.requires_grad for t in inputs)
    tape = _current_tape()
    if tape is not None and out.requires_grad:
        tape.record(kind, inputs, out, backward)
    return out


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)

    def backward():
        if out.grad is None:
            return
        _accumulate(a, out.grad @ b.data.T)
        _accumulate(b, a.data.T @ out.grad)

    return _finish("matmul", (a, b), out, backward)


def add(a, b) -> Tensor:
    """Elementwise add; also supports adding a length-d bias row to an (n, d) matrix."""
    a, b = as_tensor(a), as_tensor(b)
    row_broadcast = (a.data.ndim == 2 and b.data.ndim == 1
                     and b.shape[0] == a.shape[1])
    if not row_broadcast and a.shape != b.shape:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    out = Tensor(a.data + b.data)

    def backward():
        if out.grad is None:
            return
        _accumulate(a, out.grad)
        _accumulate(b, out.grad.sum(axis=0) if row_broadcast else out.grad)

    return _finish("add", (a, b), out, backward)


def scale(a, c: float) -> Tensor:
    a = as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)

    def backward():
        if out.grad is None:
            return
        _accumulate(a, out.grad * c)

    return _finish("scale", (a,), out, backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.maximum(a.data, 0.0))

    def backward():
        if out.grad is None:
            return
        _accumulate(a, out.grad * (a.data > 0.0))

    return _finish("relu", (a,), out, backward)


def mean_pool(a, group_size: int) -> Tensor:
    """Mean over consecutive row groups: (n*g, d) -> (n, d)."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"mean_pool needs a matrix, got shape {a.shape}")
    rows, d = a.shape
    g = int(group_size)
    if g <= 0 or rows % g != 0:
        raise ValueError(f"mean_pool group size {g} does not divide {rows} rows")
    out = Tensor(a.data.reshape(rows // g, g, d).mean(axis=1))

    def backward():
        if out.grad is None:
            return
        spread = np.repeat(out.grad / g, g, axis=0)
        _accumulate(a, spread)

    return _finish("mean_pool", (a,), out, backward)


def l2_normalize_rows(a, eps: float = 1e-12) -> Tensor:
    """Divide each row by max(||row||, eps); zero rows pass through scaled by 1/eps."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ValueError(f"l2_normalize_rows needs a matrix, got shape {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    denom = np.maximum(norms, eps)
    out = Tensor(a.data / denom)

    def backward():
        if out.grad is None:
            return
        g = out.grad
        # rows above eps: d x = (g - y (y.g)) / ||x||; clamped rows are linear
        active = norms > eps
        inner = (out.data * g).sum(axis=1, keepdims=True)
        grad_full = (g - out.data * inner) / denom
        grad_clamped = g / denom
        _accumulate(a, np.where(active, grad_full, grad_clamped))

    return _finish("l2_normalize", (a,), out, backward)


def similarity(a, b) -> Tensor:
    """Row-by-row dot products: (n, d) x (m, d) -> (n, m)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"similarity shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.data @ b.data.T)

    def backward():
        if out.grad is None:
            return
        _accumulate(a, out.grad @ b.data)
        _accumulate(b, out.grad.T @ a.data)

    return _finish("similarity", (a, b), out, backward)


def softmax_cross_entropy_rows(logits, targets, reduction: str = "mean") -> Tensor:
    """Cross-entropy of row softmaxes against integer targets, stabilized by row-max subtraction."""
    logits = as_tensor(logits)
    if logits.data.ndim != 2:
        raise ValueError(f"cross-entropy needs a logits matrix, got shape {logits.shape}")
    n, m = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {targets.shape}")
    if targets.min(initial=0) < 0 or targets.max(initial=0) >= m:
        raise ValueError(f"target index out of range [0, {m})")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    picked = log_probs[np.arange(n), targets]
    value = -picked.sum()
    if reduction == "mean":
        value /= n
    out = Tensor(value)

    def backward():
        if out.grad is None:
            return
        g = float(out.grad.reshape(()))
        probs = exp / total
        probs[np.arange(n), targets] -= 1.0
        if reduction == "mean":
            probs /= n
        _accumulate(logits, probs * g)

    return _finish("softmax_xent", (logits,), out, backward)


def sigmoid_cross_entropy(logits, targets, mask=None) -> Tensor:
    """Mean binary cross-entropy on logits, optionally restricted by a 0/1 mask.

    Stable form: max(z, 0) - z*y + log(1 + exp(-|z|)).
    """
    logits = as_tensor(logits)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ValueError(f"targets shape {y.shape} != logits shape {logits.shape}")
    if mask is None:
        m = np.ones_like(y)
    else:
        m = np.asarray(mask, dtype=np.float64)
        if m.shape != y.shape:
            raise ValueError(f"mask shape {m.shape} != logits shape {logits.shape}")
    count = m.sum()
    if count <= 0:
        raise ValueError("sigmoid_cross_entropy: mask excludes every element")

    z = logits.data
    per = np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out = Tensor((per * m).sum() / count)

    def backward():
        if out.grad is None:
            return
        g = float(out.grad.reshape(()))
        sig = 1.0 / (1.0 + np.exp(-z))
        _accumulate(logits, (sig - y) * m * (g / count))

    return _finish("sigmoid_xent", (logits,), out, backward)


def total_sum(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(a.data.sum())

    def backward():
        if out.grad is None:
            return
        _accumulate(a, np.full_like(a.data, float(out.grad.reshape(()))))

    return _finish("sum", (a,), out, backward)


def sum_squares(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor((a.data * a.data).sum())

    def backward():
        if out.grad is None:
            return
        _accumulate(a, 2.0 * a.data * float(out.grad.reshape(())))

    return _finish("sum_squares", (a,), out, backward)


def grad_check(fn, inputs, step: float = 1e-4) -> float:
    """Worst mismatch between tape gradients and central finite differences.

    ``fn`` maps the input tensors to a scalar tensor. The comparison is a
    relative error, falling back to absolute error when both magnitudes sit
    below 1e-8.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    tensors = [t if isinstance(t, Tensor) else Tensor(t) for t in inputs]
    for t in tensors:
        t.requires_grad = True
        t.grad = None

    with Tape() as tape:
        out = fn(*tensors)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar-valued computation, got shape {out.shape}")
    tape.backward(out)

    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat_data = t.data.reshape(-1)
        flat_grad = analytic.reshape(-1)
        for i in range(flat_data.size):
            orig = flat_data[i]
            flat_data[i] = orig + step
            f_plus = fn(*tensors).item()
            flat_data[i] = orig - step
            f_minus = fn(*tensors).item()
            flat_data[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * step)
            a = flat_grad[i]
            denom = max(abs(a), abs(numeric))
            err = abs(a - numeric) if denom < 1e-8 else abs(a - numeric) / denom
            worst = max(worst, err)
    return worst
