"""A small reverse-mode differentiation core over batched float64 arrays.

Every op returns a :class:`Tensor` that remembers its inputs and a
vector-Jacobian product.  :func:`backward` walks the recorded graph in
reverse topological order.  Only the layers and losses the claim model
needs are provided.

Shapes carry a leading batch axis: ``dense`` maps ``(B, n) -> (B, m)``,
``softmax`` normalizes over the last axis, losses average over the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

PROB_CLIP = 1e-7

# NaN/Inf are rejected at node creation while this is on
CHECK_FINITE = True


class ShapeError(ValueError):
    pass


class Tensor:
    """A value in the graph.

    Leaves are created directly; interior nodes are created by the op
    functions in this module.  ``value`` is a float64 ndarray, or a scipy
    sparse matrix for non-differentiable inputs.
    """

    __slots__ = ("value", "grad", "name", "requires_grad", "op", "_inputs", "_vjp")

    def __init__(self, value, *, requires_grad: bool = False, name: str | None = None):
        if sp.issparse(value):
            value = sp.csr_matrix(value, dtype=np.float64)
            if requires_grad:
                raise ValueError("sparse leaves cannot require gradients")
        else:
            value = np.array(value, dtype=np.float64)
        _check(value, name or "leaf")
        self.value = value
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._inputs: tuple[Tensor, ...] = ()
        self._vjp = None

    @classmethod
    def _node(cls, value, inputs: Sequence["Tensor"], vjp: Callable, op: str) -> "Tensor":
        out = cls.__new__(cls)
        _check(value, op)
        out.value = value
        out.grad = None
        out.name = None
        out.op = op
        out._inputs = tuple(inputs)
        out.requires_grad = any(t.requires_grad for t in inputs)
        out._vjp = vjp
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return not self._inputs

    def numpy(self) -> np.ndarray:
        return self.value

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"


def _check(value, where: str) -> None:
    if not CHECK_FINITE:
        return
    data = value.data if sp.issparse(value) else value
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"non-finite value produced by {where}")


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# graph traversal


@dataclass
class Graph:
    """Nodes reachable from ``output`` in topological order (inputs first)."""

    output: Tensor
    nodes: list[Tensor] = field(init=False)

    def __post_init__(self):
        order, seen = [], set()
        stack = [(self.output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for inp in reversed(node._inputs):
                if id(inp) not in seen:
                    stack.append((inp, False))
        self.nodes = order

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]

    @property
    def parameters(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf and n.requires_grad]


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[str, np.ndarray]:
    """Reverse-mode gradients of a scalar ``loss``.

    Gradients of every differentiable leaf are stored in ``leaf.grad``
    (overwritten, never accumulated across calls).  The returned mapping is
    keyed by leaf name.  Leaves listed in ``wrt`` that the loss does not
    depend on get zero gradients.
    """
    if np.size(loss.value) != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = Graph(loss)
    adj: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
    for node in reversed(graph.nodes):
        g = adj.pop(id(node), None) if not node.is_leaf else adj.get(id(node))
        if node.is_leaf or g is None or not node.requires_grad:
            continue
        grads = node._vjp(g)
        for inp, gi in zip(node._inputs, grads):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            adj[key] = adj[key] + gi if key in adj else gi
    out = {}
    leaves = graph.parameters
    if wrt is not None:
        extra = [t for t in wrt if all(t is not p for p in leaves)]
        leaves = leaves + extra
    for leaf in leaves:
        g = adj.get(id(leaf))
        leaf.grad = np.zeros_like(leaf.value) if g is None else g
        if leaf.name is not None:
            out[leaf.name] = leaf.grad
    return out


# ---------------------------------------------------------------------------
# layers


def dense(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ W.T + b``; ``x`` may hold a sparse matrix."""
    x, W = _as_tensor(x), _as_tensor(W)
    xs, ws = x.shape, W.shape
    if len(ws) != 2 or len(xs) != 2 or xs[1] != ws[1]:
        raise ShapeError(f"dense: x shape {xs} incompatible with W shape {ws}")
    if b is not None and b.shape != (ws[0],):
        raise ShapeError(f"dense: b shape {b.shape} incompatible with W shape {ws}")
    sparse_in = sp.issparse(x.value)
    y = x.value @ W.value.T
    y = np.asarray(y)
    if b is not None:
        y = y + b.value

    def vjp(g):
        gx = None if sparse_in else g @ W.value
        gW = np.asarray((x.value.T @ g).T) if sparse_in else g.T @ x.value
        gb = g.sum(axis=0) if b is not None else None
        return gx, gW, gb

    inputs = (x, W) if b is None else (x, W, b)
    return Tensor._node(y, inputs, lambda g: vjp(g)[: len(inputs)], "dense")


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0
    return Tensor._node(x.value * mask, (x,), lambda g: (g * mask,), "relu")


def sigmoid(x: Tensor) -> Tensor:
    v = x.value
    # split branches avoid overflow in exp
    y = np.empty_like(v)
    pos = v >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    y[~pos] = e / (1.0 + e)
    return Tensor._node(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softmax(x: Tensor) -> Tensor:
    z = x.value - x.value.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return Tensor._node(y, (x,), vjp, "softmax")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"hadamard: shapes {a.shape} and {b.shape} differ")
    av, bv = a.value, b.value
    return Tensor._node(av * bv, (a, b), lambda g: (g * bv, g * av), "hadamard")


def add(*terms: Tensor) -> Tensor:
    shape = terms[0].shape
    for t in terms[1:]:
        if t.shape != shape:
            raise ShapeError(f"add: shapes {shape} and {t.shape} differ")
    total = terms[0].value.copy()
    for t in terms[1:]:
        total = total + t.value
    return Tensor._node(total, terms, lambda g: tuple(g for _ in terms), "add")


def weighted_sum(terms: Sequence[Tensor], weights: Sequence[float]) -> Tensor:
    """``sum_i w_i * t_i`` for scalar or equal-shape tensors."""
    if len(terms) != len(weights):
        raise ShapeError("weighted_sum: terms and weights differ in length")
    total = sum(float(w) * t.value for t, w in zip(terms, weights))
    ws = [float(w) for w in weights]
    return Tensor._node(np.asarray(total, dtype=float), terms, lambda g: tuple(w * g for w in ws), "weighted_sum")


def total(x: Tensor) -> Tensor:
    """Sum of all entries (a scalar)."""
    return Tensor._node(np.asarray(x.value.sum()), (x,), lambda g: (np.full_like(x.value, float(g)),), "sum")


def squeeze_last(x: Tensor) -> Tensor:
    """``(B, 1) -> (B,)``."""
    if x.value.ndim != 2 or x.shape[1] != 1:
        raise ShapeError(f"squeeze_last: expected (B, 1), got {x.shape}")
    return Tensor._node(x.value[:, 0], (x,), lambda g: (g[:, None],), "squeeze")


# ---------------------------------------------------------------------------
# batch normalization


@dataclass
class BatchNormState:
    """Running statistics and mode for one batch-norm layer.

    The learnable scale and shift are ordinary parameter tensors passed to
    :func:`batchnorm`; this object holds what is not learned.
    """

    n_features: int
    momentum: float = 0.9
    eps: float = 1e-5
    training: bool = True
    running_mean: np.ndarray = None
    running_var: np.ndarray = None
    n_updates: int = 0

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if self.running_mean is None:
            self.running_mean = np.zeros(self.n_features)
        if self.running_var is None:
            self.running_var = np.ones(self.n_features)

    def copy(self) -> "BatchNormState":
        return BatchNormState(
            self.n_features, self.momentum, self.eps, self.training,
            self.running_mean.copy(), self.running_var.copy(), self.n_updates,
        )

    def to_json(self) -> dict:
        return {
            "n_features": self.n_features,
            "momentum": self.momentum,
            "eps": self.eps,
            "running_mean": self.running_mean.tolist(),
            "running_var": self.running_var.tolist(),
            "n_updates": self.n_updates,
        }

    @classmethod
    def from_json(cls, obj) -> "BatchNormState":
        return cls(
            n_features=obj["n_features"], momentum=obj["momentum"], eps=obj["eps"], training=False,
            running_mean=np.asarray(obj["running_mean"], float), running_var=np.asarray(obj["running_var"], float),
            n_updates=obj["n_updates"],
        )


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: BatchNormState, *, update: bool = True) -> Tensor:
    """Normalize ``(B, m)`` per feature, then scale by ``gamma`` and shift by ``beta``.

    In training mode batch statistics are used and, when ``update`` is set,
    folded into the running statistics.  Evaluation mode uses the running
    statistics and fails if none were ever recorded.
    """
    v = x.value
    if v.ndim != 2 or v.shape[1] != state.n_features:
        raise ShapeError(f"batchnorm: expected (B, {state.n_features}), got {v.shape}")
    if state.training:
        if v.shape[0] < 1:
            raise ShapeError("batchnorm: empty batch")
        mu = v.mean(axis=0)
        var = ((v - mu) ** 2).mean(axis=0)
        if update:
            m = state.momentum
            state.running_mean = m * state.running_mean + (1 - m) * mu
            state.running_var = m * state.running_var + (1 - m) * var
            state.n_updates += 1
    else:
        if state.n_updates == 0:
            raise RuntimeError("batchnorm: running statistics are uninitialized (no training updates)")
        mu, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (v - mu) * inv_std
    y = gamma.value * xhat + beta.value
    training = state.training

    def vjp(g):
        gg = (g * xhat).sum(axis=0)
        gb = g.sum(axis=0)
        gxhat = g * gamma.value
        if training:
            n = v.shape[0]
            gx = inv_std / n * (n * gxhat - gxhat.sum(axis=0) - xhat * (gxhat * xhat).sum(axis=0))
        else:
            gx = gxhat * inv_std
        return gx, gg, gb

    return Tensor._node(y, (x, gamma, beta), vjp, "batchnorm")


# ---------------------------------------------------------------------------
# losses (batch means)


def loss_bce(p: Tensor, y) -> Tensor:
    """Binary cross-entropy of probabilities ``p`` against 0/1 labels."""
    y = np.asarray(y, dtype=float)
    if p.shape != y.shape:
        raise ShapeError(f"loss_bce: p shape {p.shape} vs y shape {y.shape}")
    pc = np.clip(p.value, PROB_CLIP, 1 - PROB_CLIP)
    inside = (p.value > PROB_CLIP) & (p.value < 1 - PROB_CLIP)
    n = max(len(y), 1)
    val = -np.mean(y * np.log(pc) + (1 - y) * np.log1p(-pc))

    def vjp(g):
        return (g * inside * -(y / pc - (1 - y) / (1 - pc)) / n,)

    return Tensor._node(np.asarray(val), (p,), vjp, "bce")


def loss_cce(q: Tensor, y) -> Tensor:
    """Categorical cross-entropy of rows of ``q`` against target distributions."""
    y = np.asarray(y, dtype=float)
    if q.shape != y.shape:
        raise ShapeError(f"loss_cce: q shape {q.shape} vs y shape {y.shape}")
    if np.any(y < 0) or np.any(np.abs(y.sum(axis=-1) - 1.0) > 1e-6):
        raise ValueError("loss_cce: targets must lie on the probability simplex")
    qc = np.clip(q.value, PROB_CLIP, 1 - PROB_CLIP)
    inside = (q.value > PROB_CLIP) & (q.value < 1 - PROB_CLIP)
    n = max(y.shape[0], 1) if y.ndim > 1 else 1
    val = -np.sum(y * np.log(qc)) / n
    return Tensor._node(np.asarray(val), (q,), lambda g: (g * inside * -y / qc / n,), "cce")


def loss_l1(pred: Tensor, y) -> Tensor:
    y = np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise ShapeError(f"loss_l1: pred shape {pred.shape} vs y shape {y.shape}")
    diff = pred.value - y
    n = max(diff.size, 1)
    return Tensor._node(np.asarray(np.abs(diff).mean()), (pred,), lambda g: (g * np.sign(diff) / n,), "l1")


# ---------------------------------------------------------------------------
# finite-difference verification


def numerical_gradient(f: Callable[[], float], arr: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr``, perturbing it in place."""
    grad = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + step
        fp = f()
        arr[i] = orig - step
        fm = f()
        arr[i] = orig
        grad[i] = (fp - fm) / (2 * step)
    return grad


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b|| / max(||a||, ||b||)``; 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-12:
        return float(np.linalg.norm(a - b))
    return float(np.linalg.norm(a - b) / denom)
