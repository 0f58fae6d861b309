"""Dense-matrix reverse-mode autodiff core with an Adam optimizer.

Every learnable operation in this package (message passing, attention,
classification and compatibility heads) is expressed through the small set of
DiffNode ops below. Values are 2-D float64 arrays throughout; matrices here
are tiny, so gradient fidelity beats speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested op."""


class NumericError(RuntimeError):
    """A non-finite value (NaN/Inf) surfaced where finiteness is required."""


def as_matrix(values) -> np.ndarray:
    """Coerce to a C-contiguous 2-D float64 array."""
    arr = np.ascontiguousarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise ShapeError(f"expected a matrix, got ndim={arr.ndim}")
    return arr


class DiffNode:
    """A node in the computation graph: a matrix value plus backward plumbing.

    `grad` always has the same shape as `value` and accumulates across
    backward() calls until `zero_grad` is invoked.
    """

    __slots__ = ("value", "grad", "parents", "requires_grad", "_backward", "op")

    def __init__(self, value, parents=(), requires_grad=False, backward=None, op="leaf"):
        self.value = as_matrix(value)
        self.grad = np.zeros_like(self.value)
        self.parents = tuple(parents)
        self.requires_grad = requires_grad or any(p.requires_grad for p in self.parents)
        self._backward = backward
        self.op = op

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"DiffNode(op={self.op}, shape={self.value.shape}, requires_grad={self.requires_grad})"


def parameter(values) -> DiffNode:
    return DiffNode(values, requires_grad=True, op="param")


def constant(values) -> DiffNode:
    return DiffNode(values, requires_grad=False, op="const")


def zero_grad(nodes) -> None:
    for n in nodes:
        n.grad[...] = 0.0


def backward(loss: DiffNode) -> None:
    """Populate gradients of every parameter reachable from `loss`.

    Leaf parameters accumulate across calls; interior node gradients are
    transient per call. The loss must be 1x1; its gradient is seeded with 1.
    """
    if loss.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar 1x1 loss, got {loss.shape}")
    order: list[DiffNode] = []
    seen: set[int] = set()
    stack: list[tuple[DiffNode, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    for node in order:
        if node.parents:
            node.grad[...] = 0.0
    loss.grad += 1.0
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# ops
# ---------------------------------------------------------------------------


def matmul(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul inner dims disagree: {a.value.shape} x {b.value.shape}")
    out = DiffNode(a.value @ b.value, (a, b), op="matmul")

    def bwd(g):
        if a.requires_grad:
            a.grad += g @ b.value.T
        if b.requires_grad:
            b.grad += a.value.T @ g

    out._backward = bwd
    return out


def add(a: DiffNode, b: DiffNode) -> DiffNode:
    if a.value.shape != b.value.shape:
        raise ShapeError(f"add shapes disagree: {a.value.shape} vs {b.value.shape}")
    out = DiffNode(a.value + b.value, (a, b), op="add")

    def bwd(g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g

    out._backward = bwd
    return out


def mul(a: DiffNode, b: DiffNode) -> DiffNode:
    """Hadamard product."""
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul shapes disagree: {a.value.shape} vs {b.value.shape}")
    out = DiffNode(a.value * b.value, (a, b), op="mul")

    def bwd(g):
        if a.requires_grad:
            a.grad += g * b.value
        if b.requires_grad:
            b.grad += g * a.value

    out._backward = bwd
    return out


def scale(a: DiffNode, c: float) -> DiffNode:
    c = float(c)
    out = DiffNode(a.value * c, (a,), op="scale")

    def bwd(g):
        if a.requires_grad:
            a.grad += g * c

    out._backward = bwd
    return out


def add_rowvec(a: DiffNode, v: DiffNode) -> DiffNode:
    """a (m x n) + v (1 x n) broadcast over rows; used for bias terms."""
    if v.value.shape != (1, a.value.shape[1]):
        raise ShapeError(f"add_rowvec needs v of shape (1, {a.value.shape[1]}), got {v.value.shape}")
    out = DiffNode(a.value + v.value, (a, v), op="add_rowvec")

    def bwd(g):
        if a.requires_grad:
            a.grad += g
        if v.requires_grad:
            v.grad += g.sum(axis=0, keepdims=True)

    out._backward = bwd
    return out


def mul_colvec(a: DiffNode, v: DiffNode) -> DiffNode:
    """a (m x n) * v (m x 1) broadcast over columns; used for attention weighting."""
    if v.value.shape != (a.value.shape[0], 1):
        raise ShapeError(f"mul_colvec needs v of shape ({a.value.shape[0]}, 1), got {v.value.shape}")
    out = DiffNode(a.value * v.value, (a, v), op="mul_colvec")

    def bwd(g):
        if a.requires_grad:
            a.grad += g * v.value
        if v.requires_grad:
            v.grad += (g * a.value).sum(axis=1, keepdims=True)

    out._backward = bwd
    return out


def concat_cols(nodes) -> DiffNode:
    nodes = list(nodes)
    rows = nodes[0].value.shape[0]
    for n in nodes:
        if n.value.shape[0] != rows:
            raise ShapeError("concat_cols needs equal row counts")
    out = DiffNode(np.concatenate([n.value for n in nodes], axis=1), nodes, op="concat_cols")
    offsets = np.cumsum([0] + [n.value.shape[1] for n in nodes])

    def bwd(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if n.requires_grad:
                n.grad += g[:, lo:hi]

    out._backward = bwd
    return out


def concat_rows(nodes) -> DiffNode:
    nodes = list(nodes)
    cols = nodes[0].value.shape[1]
    for n in nodes:
        if n.value.shape[1] != cols:
            raise ShapeError("concat_rows needs equal column counts")
    out = DiffNode(np.concatenate([n.value for n in nodes], axis=0), nodes, op="concat_rows")
    offsets = np.cumsum([0] + [n.value.shape[0] for n in nodes])

    def bwd(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            if n.requires_grad:
                n.grad += g[lo:hi, :]

    out._backward = bwd
    return out


def slice_rows(a: DiffNode, start: int, stop: int) -> DiffNode:
    out = DiffNode(a.value[start:stop, :], (a,), op="slice_rows")

    def bwd(g):
        if a.requires_grad:
            a.grad[start:stop, :] += g

    out._backward = bwd
    return out


def slice_cols(a: DiffNode, start: int, stop: int) -> DiffNode:
    out = DiffNode(a.value[:, start:stop], (a,), op="slice_cols")

    def bwd(g):
        if a.requires_grad:
            a.grad[:, start:stop] += g

    out._backward = bwd
    return out


def relu(a: DiffNode) -> DiffNode:
    out = DiffNode(np.maximum(a.value, 0.0), (a,), op="relu")

    def bwd(g):
        if a.requires_grad:
            a.grad += g * (a.value > 0)

    out._backward = bwd
    return out


def leaky_relu(a: DiffNode, slope: float = 0.2) -> DiffNode:
    out = DiffNode(np.where(a.value > 0, a.value, slope * a.value), (a,), op="leaky_relu")

    def bwd(g):
        if a.requires_grad:
            a.grad += g * np.where(a.value > 0, 1.0, slope)

    out._backward = bwd
    return out


def sum_all(a: DiffNode) -> DiffNode:
    out = DiffNode([[a.value.sum()]], (a,), op="sum_all")

    def bwd(g):
        if a.requires_grad:
            a.grad += g[0, 0]

    out._backward = bwd
    return out


def softmax_rows(a: DiffNode) -> DiffNode:
    """Row-wise softmax with max-subtraction; each output row sums to 1."""
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)
    out = DiffNode(p, (a,), op="softmax_rows")

    def bwd(g):
        if a.requires_grad:
            # dL/dz_j = p_j * (g_j - sum_k g_k p_k), row-wise
            dot = (g * p).sum(axis=1, keepdims=True)
            a.grad += p * (g - dot)

    out._backward = bwd
    return out


_PROB_FLOOR = 1e-12  # keeps log/backward finite when a probability underflows


def cross_entropy(probs: DiffNode, labels) -> DiffNode:
    """Mean negative log-probability of the true class.

    `probs` rows must already be probability distributions (e.g. softmax_rows
    output); the gradient composes with the softmax backward to the usual
    (p - onehot)/m on the logits.
    """
    labels = np.asarray(labels, dtype=np.intp).reshape(-1)
    m, k = probs.value.shape
    if labels.shape[0] != m:
        raise ShapeError(f"cross_entropy got {labels.shape[0]} labels for {m} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise IndexError(f"cross_entropy label out of range for {k} classes")
    rowsums = probs.value.sum(axis=1)
    if not np.allclose(rowsums, 1.0, atol=1e-6):
        raise ValueError("cross_entropy expects probability rows summing to 1")
    picked = np.clip(probs.value[np.arange(m), labels], _PROB_FLOOR, 1.0)
    out = DiffNode([[-np.log(picked).mean()]], (probs,), op="cross_entropy")

    def bwd(g):
        if probs.requires_grad:
            gp = np.zeros_like(probs.value)
            gp[np.arange(m), labels] = -g[0, 0] / (m * picked)
            probs.grad += gp

    out._backward = bwd
    return out


def dropout(a: DiffNode, p: float, training: bool, seed: int) -> DiffNode:
    """Inverted dropout: surviving entries scaled by 1/(1-p); identity in inference."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        out = DiffNode(a.value, (a,), op="dropout")

        def bwd_id(g):
            if a.requires_grad:
                a.grad += g

        out._backward = bwd_id
        return out
    rng = np.random.default_rng(seed)
    mask = (rng.random(a.value.shape) >= p) / (1.0 - p)
    out = DiffNode(a.value * mask, (a,), op="dropout")

    def bwd(g):
        if a.requires_grad:
            a.grad += g * mask

    out._backward = bwd
    return out


@dataclass
class BatchNormState:
    """Running statistics for one batch-norm site (no learnable affine)."""

    dim: int
    momentum: float = 0.1
    eps: float = 1e-5
    running_mean: np.ndarray = None
    running_var: np.ndarray = None

    def __post_init__(self):
        if self.running_mean is None:
            self.running_mean = np.zeros((1, self.dim))
        if self.running_var is None:
            self.running_var = np.ones((1, self.dim))

    def copy(self) -> "BatchNormState":
        return BatchNormState(self.dim, self.momentum, self.eps,
                              self.running_mean.copy(), self.running_var.copy())


def batch_norm(a: DiffNode, state: BatchNormState, training: bool) -> DiffNode:
    """Normalize columns to zero mean / unit variance over the batch (rows).

    Training mode uses batch statistics and updates the running ones;
    inference normalizes with the running statistics.
    """
    if a.value.shape[1] != state.dim:
        raise ShapeError(f"batch_norm state dim {state.dim} vs input {a.value.shape}")
    if training:
        m = a.value.shape[0]
        mu = a.value.mean(axis=0, keepdims=True)
        var = a.value.var(axis=0, keepdims=True)
        inv = 1.0 / np.sqrt(var + state.eps)
        y = (a.value - mu) * inv
        unbiased = var * (m / (m - 1.0)) if m > 1 else var
        state.running_mean = (1 - state.momentum) * state.running_mean + state.momentum * mu
        state.running_var = (1 - state.momentum) * state.running_var + state.momentum * unbiased
        out = DiffNode(y, (a,), op="batch_norm")

        def bwd(g):
            if a.requires_grad:
                a.grad += inv * (g - g.mean(axis=0, keepdims=True)
                                 - y * (g * y).mean(axis=0, keepdims=True))

        out._backward = bwd
        return out
    inv = 1.0 / np.sqrt(state.running_var + state.eps)
    out = DiffNode((a.value - state.running_mean) * inv, (a,), op="batch_norm")

    def bwd_eval(g):
        if a.requires_grad:
            a.grad += g * inv

    out._backward = bwd_eval
    return out


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    """Adam with bias correction. Moments are stored per parameter, in order."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_init(params, lr=3e-4, beta1=0.9, beta2=0.999, epsilon=1e-8) -> AdamState:
    state = AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)
    state.m = [np.zeros_like(p.value) for p in params]
    state.v = [np.zeros_like(p.value) for p in params]
    return state


def adam_step(params, state: AdamState, grads=None) -> None:
    """One in-place Adam update from `grads` (defaults to each param's .grad)."""
    if grads is None:
        grads = [p.grad for p in params]
    if len(grads) != len(state.m):
        raise ShapeError(f"adam_step got {len(grads)} grads for {len(state.m)} moment slots")
    for p, g, m in zip(params, grads, state.m):
        if g.shape != p.value.shape or m.shape != p.value.shape:
            raise ShapeError(f"adam_step shape mismatch: param {p.value.shape}, grad {g.shape}")
    state.step += 1
    t = state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        p.value -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


def check_finite(arr: np.ndarray, what: str = "value") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite {what} detected")
    return arr
