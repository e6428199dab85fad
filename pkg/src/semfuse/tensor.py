"""Dense float64 tensors with reverse-mode gradients.

Every differentiable operation builds the value eagerly and attaches a
closure holding its analytic backward rule; ``Tensor.backward`` replays the
closures in reverse topological order. No tracing framework, no dtype zoo:
everything is float64 and deterministic (same inputs give bit-identical
outputs).
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import erf

from .errors import (
    DegenerateInputError,
    DivergenceError,
    EvaluationError,
    ParameterError,
    ShapeError,
)

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)

PARAMETER_GROUPS = ("projector", "fusion", "gate", "lm", "embedding")


class Tensor:
    """A dense float64 array plus an optional gradient buffer of equal shape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, parents=(), requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self._parents = tuple(parents)
        self._backward = None
        self.requires_grad = bool(requires_grad) or any(
            p.requires_grad for p in self._parents
        )

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None

    def _add_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        """Backpropagate from a scalar node through the recorded graph."""
        if self.data.size != 1:
            raise EvaluationError("backward() needs a scalar loss node")
        if not np.isfinite(self.data).all():
            raise EvaluationError("loss is non-finite")
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if node in visited:
                continue
            visited.add(node)
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and p not in visited:
                    stack.append((p, False))
        self._add_grad(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None:
                node._backward()

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __neg__(self):
        return mul(self, -1.0)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """A trainable leaf tensor with a unique name and an update group."""

    __slots__ = ("name", "group")

    def __init__(self, data, name: str, group: str):
        if group not in PARAMETER_GROUPS:
            raise ParameterError(f"unknown parameter group {group!r}")
        super().__init__(data, requires_grad=True)
        self.name = name
        self.group = group

    def __repr__(self):
        return f"Parameter({self.name!r}, group={self.group!r}, shape={self.data.shape})"


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def scaled_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """Weight init with 1/sqrt(fan_in) scale; keeps activations O(1) at depth."""
    return rng.normal(0.0, shape[0] ** -0.5, shape)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the operand's shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise arithmetic ---------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data + b.data, (a, b))
    if out.requires_grad:

        def _bw():
            g = out.grad
            if a.requires_grad:
                a._add_grad(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._add_grad(_unbroadcast(g, b.data.shape))

        out._backward = _bw
    return out


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = Tensor(a.data * b.data, (a, b))
    if out.requires_grad:

        def _bw():
            g = out.grad
            if a.requires_grad:
                a._add_grad(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._add_grad(_unbroadcast(g * a.data, b.data.shape))

        out._backward = _bw
    return out


def matmul(a, b) -> Tensor:
    """Matrix product for 2-D operands (1-D left operand also allowed)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.ndim != 2 or a.ndim not in (1, 2):
        raise ShapeError(f"matmul expects (L,D)@(D,K) or (D,)@(D,K), got {a.shape}@{b.shape}")
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"inner dimensions differ: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, (a, b))
    if out.requires_grad:

        def _bw():
            g = out.grad
            if a.requires_grad:
                a._add_grad(g @ b.data.T)
            if b.requires_grad:
                if a.ndim == 1:
                    b._add_grad(np.outer(a.data, g))
                else:
                    b._add_grad(a.data.T @ g)

        out._backward = _bw
    return out


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    out = Tensor(a.data.T, (a,))
    if out.requires_grad:

        def _bw():
            a._add_grad(out.grad.T)

        out._backward = _bw
    return out


def reshape(a: Tensor, shape) -> Tensor:
    out = Tensor(a.data.reshape(shape), (a,))
    if out.requires_grad:

        def _bw():
            a._add_grad(out.grad.reshape(a.data.shape))

        out._backward = _bw
    return out


# -- structural ops ------------------------------------------------------


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0), tuple(parts))
    if out.requires_grad:
        offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

        def _bw():
            g = out.grad
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p._add_grad(g[lo:hi])

        out._backward = _bw
    return out


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1), tuple(parts))
    if out.requires_grad:
        offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

        def _bw():
            g = out.grad
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                if p.requires_grad:
                    p._add_grad(g[:, lo:hi])

        out._backward = _bw
    return out


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[start:stop], (a,))
    if out.requires_grad:

        def _bw():
            g = np.zeros_like(a.data)
            g[start:stop] = out.grad
            a._add_grad(g)

        out._backward = _bw
    return out


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[:, start:stop], (a,))
    if out.requires_grad:

        def _bw():
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            a._add_grad(g)

        out._backward = _bw
    return out


def stack_scalars(parts: Sequence[Tensor]) -> Tensor:
    """Stack scalar tensors into a 1-D vector."""
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("stack_scalars needs at least one part")
    for p in parts:
        if p.data.size != 1:
            raise ShapeError("stack_scalars takes scalar tensors")
    out = Tensor(np.array([float(p.data) for p in parts]), tuple(parts))
    if out.requires_grad:

        def _bw():
            g = out.grad
            for i, p in enumerate(parts):
                if p.requires_grad:
                    p._add_grad(np.full_like(p.data, g[i]))

        out._backward = _bw
    return out


def mean_rows(a: Tensor) -> Tensor:
    """Arithmetic mean over the leading axis: (R, D) -> (D,)."""
    if a.ndim != 2 or a.data.shape[0] < 1:
        raise ShapeError(f"mean_rows expects a nonempty (R, D) tensor, got {a.shape}")
    rows = a.data.shape[0]
    out = Tensor(a.data.mean(axis=0), (a,))
    if out.requires_grad:

        def _bw():
            a._add_grad(np.broadcast_to(out.grad / rows, a.data.shape))

        out._backward = _bw
    return out


def vsum(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum(), (a,))
    if out.requires_grad:

        def _bw():
            a._add_grad(np.full_like(a.data, float(out.grad)))

        out._backward = _bw
    return out


def embedding_lookup(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Gather rows of a (V, D) table; backward scatter-adds into those rows."""
    idx = np.asarray(ids, dtype=np.int64)
    out = Tensor(table.data[idx], (table,))
    if out.requires_grad:

        def _bw():
            g = np.zeros_like(table.data)
            np.add.at(g, idx, out.grad)
            table._add_grad(g)

        out._backward = _bw
    return out


# -- activations ----------------------------------------------------------


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y, (a,))
    if out.requires_grad:

        def _bw():
            a._add_grad(out.grad * (1.0 - y * y))

        out._backward = _bw
    return out


def gelu(a: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = Tensor(x * cdf, (a,))
    if out.requires_grad:

        def _bw():
            pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
            a._add_grad(out.grad * (cdf + x * pdf))

        out._backward = _bw
    return out


# -- normalizations and probability ops ------------------------------------


def softmax_temp(logits, tau: float = 1.0) -> Tensor:
    """Temperature softmax over the last axis of a 1-D or 2-D tensor.

    Stable (max-subtracted) and invariant to adding a constant to all logits.
    """
    a = as_tensor(logits)
    if not (isinstance(tau, (int, float)) and tau > 0):
        raise ParameterError(f"temperature must be positive, got {tau}")
    if a.data.size == 0 or a.data.shape[-1] < 1:
        raise ShapeError("softmax needs at least one logit")
    if a.ndim not in (1, 2):
        raise ShapeError("softmax expects a 1-D or 2-D tensor")
    if not np.isfinite(a.data).all():
        raise EvaluationError("softmax input is non-finite")
    z = (a.data - a.data.max(axis=-1, keepdims=True)) / tau
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y, (a,))
    if out.requires_grad:

        def _bw():
            g = out.grad
            dot = (g * y).sum(axis=-1, keepdims=True)
            a._add_grad(y * (g - dot) / tau)

        out._backward = _bw
    return out


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Row-wise layer normalization with learnable gain and bias."""
    if x.ndim != 2:
        raise ShapeError("layer_norm expects a 2-D tensor")
    d = x.data.shape[1]
    if gain.data.shape != (d,) or bias.data.shape != (d,):
        raise ShapeError("layer_norm gain/bias must be (D,)")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data, (x, gain, bias))
    if out.requires_grad:

        def _bw():
            g = out.grad
            if gain.requires_grad:
                gain._add_grad((g * xhat).sum(axis=0))
            if bias.requires_grad:
                bias._add_grad(g.sum(axis=0))
            if x.requires_grad:
                gh = g * gain.data
                m1 = gh.mean(axis=1, keepdims=True)
                m2 = (gh * xhat).mean(axis=1, keepdims=True)
                x._add_grad(inv * (gh - m1 - xhat * m2))

        out._backward = _bw
    return out


def cosine_sim(a: Tensor, b: Tensor, eps: float = 1e-12) -> Tensor:
    """Cosine similarity of two 1-D vectors; zero-norm inputs are an error."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 1 or b.ndim != 1 or a.data.shape != b.data.shape:
        raise ShapeError(f"cosine_sim expects equal-length vectors, got {a.shape}, {b.shape}")
    na = math.sqrt(float(a.data @ a.data))
    nb = math.sqrt(float(b.data @ b.data))
    if na <= eps or nb <= eps:
        raise DegenerateInputError("cosine_sim got a zero-norm vector")
    c = float(a.data @ b.data) / (na * nb)
    out = Tensor(c, (a, b))
    if out.requires_grad:

        def _bw():
            g = float(out.grad)
            if a.requires_grad:
                a._add_grad(g * (b.data / (na * nb) - c * a.data / (na * na)))
            if b.requires_grad:
                b._add_grad(g * (a.data / (na * nb) - c * b.data / (nb * nb)))

        out._backward = _bw
    return out


def kl_div(p: Tensor, q: Tensor, atol: float = 1e-9) -> Tensor:
    """KL divergence of two probability vectors, with the 0*ln(0)=0 convention."""
    p, q = as_tensor(p), as_tensor(q)
    if p.ndim != 1 or q.ndim != 1 or p.data.shape != q.data.shape:
        raise ShapeError(f"kl_div expects equal-length vectors, got {p.shape}, {q.shape}")
    if np.any(p.data < 0) or np.any(q.data < 0):
        raise ParameterError("kl_div operands must be nonnegative")
    if abs(float(p.data.sum()) - 1.0) > atol or abs(float(q.data.sum()) - 1.0) > atol:
        raise ParameterError("kl_div operands must each sum to 1")
    support = p.data > 0
    if np.any(q.data[support] == 0):
        raise DivergenceError("p has mass where q is zero: divergence is infinite")
    ratio = np.zeros_like(p.data)
    ratio[support] = np.log(p.data[support] / q.data[support])
    out = Tensor((p.data * ratio).sum(), (p, q))
    if out.requires_grad:

        def _bw():
            g = float(out.grad)
            if p.requires_grad:
                gp = np.zeros_like(p.data)
                gp[support] = ratio[support] + 1.0
                p._add_grad(g * gp)
            if q.requires_grad:
                gq = np.zeros_like(q.data)
                gq[support] = -p.data[support] / q.data[support]
                q._add_grad(g * gq)

        out._backward = _bw
    return out


def nll_rows(logits: Tensor, targets: Sequence[int], mask: Sequence[bool]) -> Tensor:
    """Mean negative log-likelihood of targets over unmasked rows of (L, V) logits."""
    if logits.ndim != 2:
        raise ShapeError("nll_rows expects (L, V) logits")
    L, V = logits.data.shape
    idx = np.asarray(targets, dtype=np.int64)
    m = np.asarray(mask, dtype=bool)
    if idx.shape != (L,) or m.shape != (L,):
        raise ShapeError("targets and mask must have one entry per logit row")
    if np.any(idx < 0) or np.any(idx >= V):
        raise ShapeError("target id outside the vocabulary")
    n_live = int(m.sum())
    if n_live == 0:
        raise DegenerateInputError("all positions are masked out")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - logsum
    picked = logp[np.arange(L), idx]
    out = Tensor(-(picked * m).sum() / n_live, (logits,))
    if out.requires_grad:

        def _bw():
            g = float(out.grad)
            soft = np.exp(logp)
            grad = soft.copy()
            grad[np.arange(L), idx] -= 1.0
            grad *= (m / n_live)[:, None]
            logits._add_grad(g * grad)

        out._backward = _bw
    return out


def check_finite(t: Tensor, what: str = "tensor") -> Tensor:
    if not np.isfinite(t.data).all():
        raise EvaluationError(f"{what} contains non-finite entries")
    return t
