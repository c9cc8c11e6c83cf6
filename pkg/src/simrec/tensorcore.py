"""Dense-array reverse-mode autodiff, just large enough for this model.

Every tensor is a float64 ``DiffArray``. Operations build a tape of parent
links and backward closures; ``backward`` walks the tape in reverse
topological order and accumulates exact analytic gradients. Non-finite
values are trapped at the op that produced them.

Edge-segment operations (softmax over incoming edges, attention-weighted
aggregation) dispatch to the compiled kernels in :mod:`simrec.kernels`.
"""

from __future__ import annotations

import json

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class NonFiniteError(RuntimeError):
    pass


EPS_LOG = 1e-12


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by op '{op}'")


class DiffArray:
    """A float64 array with a gradient slot and a tape record."""

    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents: tuple[DiffArray, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"DiffArray(shape={self.data.shape}{tag})"

    def accum_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g


def as_diff(x) -> DiffArray:
    return x if isinstance(x, DiffArray) else DiffArray(x)


def _result(data: np.ndarray, parents: tuple[DiffArray, ...], backward, op: str) -> DiffArray:
    _check_finite(data, op)
    out = DiffArray(data)
    out._parents = parents
    out._backward = backward
    return out


def backward(loss: DiffArray) -> None:
    """Reverse-mode sweep from a scalar loss.

    Gradients accumulate into ``.grad`` of every reachable node; call sites
    clear parameter grads between optimizer steps. Deterministic: the visit
    order depends only on tape structure.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo: list[DiffArray] = []
    seen: set[int] = set()
    stack: list[tuple[DiffArray, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node._parents):
            if id(p) not in seen:
                stack.append((p, False))
    loss.accum_grad(np.ones_like(loss.data))
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# ---------------------------------------------------------------------------
# core ops
# ---------------------------------------------------------------------------

def matmul(a: DiffArray, b: DiffArray) -> DiffArray:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.data.shape} x {b.data.shape}")
    out = _result(a.data @ b.data, (a, b), None, "matmul")

    def bwd():
        a.accum_grad(out.grad @ b.data.T)
        b.accum_grad(a.data.T @ out.grad)

    out._backward = bwd
    return out


def transpose(a: DiffArray) -> DiffArray:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got {a.data.shape}")
    out = _result(a.data.T.copy(), (a,), None, "transpose")

    def bwd():
        a.accum_grad(out.grad.T)

    out._backward = bwd
    return out


def add(a: DiffArray, b: DiffArray) -> DiffArray:
    bias_bcast = (
        a.data.ndim == 2 and b.data.ndim == 1 and a.data.shape[1] == b.data.shape[0]
    )
    if not bias_bcast and a.data.shape != b.data.shape:
        raise ShapeError(f"add: incompatible shapes {a.data.shape} + {b.data.shape}")
    out = _result(a.data + b.data, (a, b), None, "add")

    def bwd():
        a.accum_grad(out.grad)
        if bias_bcast:
            b.accum_grad(out.grad.sum(axis=0))
        else:
            b.accum_grad(out.grad)

    out._backward = bwd
    return out


def sub(a: DiffArray, b: DiffArray) -> DiffArray:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: incompatible shapes {a.data.shape} - {b.data.shape}")
    out = _result(a.data - b.data, (a, b), None, "sub")

    def bwd():
        a.accum_grad(out.grad)
        b.accum_grad(-out.grad)

    out._backward = bwd
    return out


def scale(a: DiffArray, c: float) -> DiffArray:
    c = float(c)
    out = _result(a.data * c, (a,), None, "scale")

    def bwd():
        a.accum_grad(out.grad * c)

    out._backward = bwd
    return out


def concat(parts: list[DiffArray], axis: int) -> DiffArray:
    if not parts:
        raise ShapeError("concat: empty input list")
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    out = _result(out_data, tuple(parts), None, "concat")
    sizes = [p.data.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def bwd():
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(lo, hi)
            p.accum_grad(out.grad[tuple(idx)])

    out._backward = bwd
    return out


def reshape(a: DiffArray, shape: tuple[int, ...]) -> DiffArray:
    out = _result(a.data.reshape(shape), (a,), None, "reshape")

    def bwd():
        a.accum_grad(out.grad.reshape(a.data.shape))

    out._backward = bwd
    return out


def leaky_relu(a: DiffArray, slope: float = 0.01) -> DiffArray:
    out_data = np.where(a.data > 0, a.data, slope * a.data)
    out = _result(out_data, (a,), None, "leaky_relu")

    def bwd():
        a.accum_grad(np.where(a.data > 0, 1.0, slope) * out.grad)

    out._backward = bwd
    return out


def sigmoid(a: DiffArray) -> DiffArray:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = _result(s, (a,), None, "sigmoid")

    def bwd():
        a.accum_grad(s * (1.0 - s) * out.grad)

    out._backward = bwd
    return out


def softmax(a: DiffArray, axis: int = -1) -> DiffArray:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    out = _result(s, (a,), None, "softmax")

    def bwd():
        dot = (out.grad * s).sum(axis=axis, keepdims=True)
        a.accum_grad(s * (out.grad - dot))

    out._backward = bwd
    return out


def log(a: DiffArray) -> DiffArray:
    clamped = np.maximum(a.data, EPS_LOG)
    out = _result(np.log(clamped), (a,), None, "log")

    def bwd():
        a.accum_grad(out.grad / clamped)

    out._backward = bwd
    return out


def abs_(a: DiffArray) -> DiffArray:
    out = _result(np.abs(a.data), (a,), None, "abs")

    def bwd():
        a.accum_grad(np.sign(a.data) * out.grad)

    out._backward = bwd
    return out


def sum_all(a: DiffArray) -> DiffArray:
    out = _result(np.asarray(a.data.sum()), (a,), None, "sum_all")

    def bwd():
        a.accum_grad(np.full_like(a.data, out.grad))

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# row selection and pooling
# ---------------------------------------------------------------------------

def pick_rows(a: DiffArray, indices) -> DiffArray:
    """Gather rows of a 2-D array; backward scatter-adds into the source."""
    if a.data.ndim != 2:
        raise ShapeError(f"pick_rows: expected 2-D, got {a.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"pick_rows: indices must be 1-D, got {idx.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= a.data.shape[0]):
        raise ShapeError(f"pick_rows: index out of range for {a.data.shape[0]} rows")
    out = _result(a.data[idx], (a,), None, "pick_rows")

    def bwd():
        a.accum_grad(
            kernels.scatter_add_rows(idx, out.grad, a.data.shape[0], a.data.shape[1])
        )

    out._backward = bwd
    return out


def mean_pool(a: DiffArray, indices) -> DiffArray:
    """Mean of selected rows as a (1, d) row; empty selection pools to zero."""
    if a.data.ndim != 2:
        raise ShapeError(f"mean_pool: expected 2-D, got {a.data.shape}")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size == 0:
        out = _result(np.zeros((1, a.data.shape[1])), (a,), None, "mean_pool")
        out._backward = lambda: None
        return out
    if idx.min() < 0 or idx.max() >= a.data.shape[0]:
        raise ShapeError(f"mean_pool: index out of range for {a.data.shape[0]} rows")
    out = _result(a.data[idx].mean(axis=0, keepdims=True), (a,), None, "mean_pool")

    def bwd():
        share = np.repeat(out.grad / idx.size, idx.size, axis=0)
        a.accum_grad(
            kernels.scatter_add_rows(idx, share, a.data.shape[0], a.data.shape[1])
        )

    out._backward = bwd
    return out


def repeat_row(a: DiffArray, n: int) -> DiffArray:
    if a.data.shape[0] != 1 or a.data.ndim != 2:
        raise ShapeError(f"repeat_row: expected (1, d), got {a.data.shape}")
    out = _result(np.repeat(a.data, n, axis=0), (a,), None, "repeat_row")

    def bwd():
        a.accum_grad(out.grad.sum(axis=0, keepdims=True))

    out._backward = bwd
    return out


def add_rows_at(base: DiffArray, indices, rows: DiffArray) -> DiffArray:
    """Copy of ``base`` with ``rows[k]`` added to row ``indices[k]``.

    Indices must be distinct (each target row receives one delta).
    """
    idx = np.asarray(indices, dtype=np.int64)
    if base.data.ndim != 2 or rows.data.ndim != 2:
        raise ShapeError(
            f"add_rows_at: expected 2-D base and rows, got {base.data.shape}, {rows.data.shape}"
        )
    if rows.data.shape[0] != idx.size or rows.data.shape[1] != base.data.shape[1]:
        raise ShapeError(
            f"add_rows_at: rows {rows.data.shape} do not fit base {base.data.shape} "
            f"at {idx.size} indices"
        )
    if len(set(idx.tolist())) != idx.size:
        raise ShapeError("add_rows_at: duplicate target indices")
    out_data = base.data.copy()
    out_data[idx] += rows.data
    out = _result(out_data, (base, rows), None, "add_rows_at")

    def bwd():
        base.accum_grad(out.grad)
        rows.accum_grad(out.grad[idx])

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# edge-segment ops (kernels)
# ---------------------------------------------------------------------------

def segment_softmax(scores: DiffArray, seg: np.ndarray, n_segments: int) -> DiffArray:
    """Softmax of a flat score vector within groups given by ``seg``."""
    if scores.data.ndim != 1:
        raise ShapeError(f"segment_softmax: expected 1-D scores, got {scores.data.shape}")
    seg = np.asarray(seg, dtype=np.int64)
    alpha = kernels.segment_softmax(scores.data, seg, n_segments)
    out = _result(alpha, (scores,), None, "segment_softmax")

    def bwd():
        scores.accum_grad(kernels.segment_softmax_grad(alpha, out.grad, seg, n_segments))

    out._backward = bwd
    return out


def segment_aggregate(
    alpha: DiffArray,
    values: DiffArray,
    src: np.ndarray,
    dst: np.ndarray,
    n_out: int,
) -> DiffArray:
    """out[i] = sum over edges e into i of alpha[e] * values[src[e]]."""
    if alpha.data.ndim != 1 or values.data.ndim != 2:
        raise ShapeError(
            f"segment_aggregate: expected 1-D alpha and 2-D values, "
            f"got {alpha.data.shape}, {values.data.shape}"
        )
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    out_data = kernels.attention_aggregate(alpha.data, values.data, src, dst, n_out)
    out = _result(out_data, (alpha, values), None, "segment_aggregate")

    def bwd():
        d_alpha, d_values = kernels.attention_aggregate_grad(
            out.grad, alpha.data, values.data, src, dst
        )
        alpha.accum_grad(d_alpha)
        values.accum_grad(d_values)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def cross_entropy(dist: DiffArray, gold: int) -> DiffArray:
    """-log dist[gold] for a single probability vector (1-D or a (1, k) row)."""
    flat = dist.data.reshape(-1)
    if abs(flat.sum() - 1.0) > 1e-6:
        raise ShapeError(f"cross_entropy: distribution sums to {flat.sum()!r}, not 1")
    if not 0 <= gold < flat.size:
        raise ShapeError(f"cross_entropy: gold index {gold} out of range {flat.size}")
    p = max(flat[gold], EPS_LOG)
    out = _result(np.asarray(-np.log(p)), (dist,), None, "cross_entropy")

    def bwd():
        g = np.zeros_like(dist.data)
        g.reshape(-1)[gold] = -out.grad / p
        dist.accum_grad(g)

    out._backward = bwd
    return out


def cross_entropy_rows(dist: DiffArray, golds) -> DiffArray:
    """Sum over rows of -log dist[i, golds[i]]."""
    if dist.data.ndim != 2:
        raise ShapeError(f"cross_entropy_rows: expected 2-D, got {dist.data.shape}")
    idx = np.asarray(golds, dtype=np.int64)
    if idx.size != dist.data.shape[0]:
        raise ShapeError(
            f"cross_entropy_rows: {idx.size} gold labels for {dist.data.shape[0]} rows"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= dist.data.shape[1]):
        raise ShapeError(f"cross_entropy_rows: gold index out of range {dist.data.shape[1]}")
    rows_sum = dist.data.sum(axis=1)
    if idx.size and np.abs(rows_sum - 1.0).max() > 1e-6:
        raise ShapeError("cross_entropy_rows: rows do not sum to 1")
    picked = np.maximum(dist.data[np.arange(idx.size), idx], EPS_LOG)
    out = _result(np.asarray(-np.log(picked).sum()), (dist,), None, "cross_entropy_rows")

    def bwd():
        g = np.zeros_like(dist.data)
        g[np.arange(idx.size), idx] = -out.grad / picked
        dist.accum_grad(g)

    out._backward = bwd
    return out


def kl_divergence(p: np.ndarray, q: DiffArray) -> DiffArray:
    """Sum of p * log(p/q) over all entries; p is a constant target.

    Zero entries of p contribute nothing (0 * log 0 = 0); q is clamped at
    1e-12 so the value stays finite.
    """
    p = np.asarray(p, dtype=np.float64)
    if p.shape != q.data.shape:
        raise ShapeError(f"kl_divergence: shapes differ {p.shape} vs {q.data.shape}")
    sums = p.sum(axis=-1)
    if np.abs(sums - 1.0).max() > 1e-6 or p.min() < 0:
        raise ShapeError("kl_divergence: p is not a distribution")
    q_clamped = np.maximum(q.data, EPS_LOG)
    terms = np.where(p > 0, p * (np.log(np.maximum(p, EPS_LOG)) - np.log(q_clamped)), 0.0)
    out = _result(np.asarray(terms.sum()), (q,), None, "kl_divergence")

    def bwd():
        q.accum_grad(np.where(p > 0, -p / q_clamped, 0.0) * out.grad)

    out._backward = bwd
    return out


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints
# ---------------------------------------------------------------------------

class ParamStore:
    """Named parameters plus Adam moment state, updated in insertion order."""

    def __init__(self):
        self.params: dict[str, DiffArray] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self.step_count = 0

    def add(self, name: str, data: np.ndarray) -> DiffArray:
        if name in self.params:
            raise ValueError(f"duplicate parameter name '{name}'")
        p = DiffArray(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = p
        self._m[name] = np.zeros_like(p.data)
        self._v[name] = np.zeros_like(p.data)
        return p

    def register(self, name: str, p: DiffArray) -> DiffArray:
        """Adopt an existing parameter (used when two stores share weights)."""
        if name in self.params:
            raise ValueError(f"duplicate parameter name '{name}'")
        self.params[name] = p
        self._m[name] = np.zeros_like(p.data)
        self._v[name] = np.zeros_like(p.data)
        return p

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.grad = None

    def adam_step(
        self,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ) -> None:
        """One bias-corrected Adam update; grads are consumed (cleared).

        Parameters with no accumulated gradient are skipped, so a weight
        shared with another store is updated exactly once per step.
        """
        self.step_count += 1
        t = self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1**t)
            v_hat = v / (1.0 - beta2**t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
            p.grad = None


def adam_step(store: ParamStore, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> None:
    store.adam_step(lr, beta1, beta2, eps)


CHECKPOINT_MAGIC = "simrec-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_arrays: dict[str, np.ndarray], extra: dict | None = None) -> None:
    """Write parameters as versioned JSON: name -> shape + row-major values."""
    payload = {
        "magic": CHECKPOINT_MAGIC,
        "version": CHECKPOINT_VERSION,
        "extra": extra or {},
        "params": {
            name: {
                "shape": list(np.asarray(a).shape),
                "values": np.asarray(a, dtype=np.float64).reshape(-1).tolist(),
            }
            for name, a in named_arrays.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if not isinstance(payload, dict) or payload.get("magic") != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a recognized checkpoint file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {payload.get('version')!r}")
    arrays = {}
    for name, rec in payload["params"].items():
        arrays[name] = np.asarray(rec["values"], dtype=np.float64).reshape(rec["shape"])
    return arrays, payload.get("extra", {})
