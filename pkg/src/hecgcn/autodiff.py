"""Small reverse-mode differentiation engine over dense 2-D numpy buffers.

Only the operations needed by the recommender are provided. Every tensor is
strictly two-dimensional and no implicit broadcasting happens; the few
row-wise operations (``scale_rows``, ``row_dot``) are explicit.

Nodes carry a monotonically increasing creation id, so the set of ancestors
of a root sorted by id is a valid tape (every node after its parents).
"""

from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np
import scipy.sparse as sp

_ids = itertools.count()

# Names of backward rules disabled through ``break_rule``. Used only by the
# gradient self-check to demonstrate that a wrong rule is detected.
_BROKEN_RULES: set[str] = set()

_freeze = threading.local()

NORMALIZE_EPS = 1e-12


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "parents", "backward_fn", "op", "id", "name")

    def __init__(self, value, requires_grad=False, parents=(), backward_fn=None, op="leaf", name=None):
        value = np.asarray(value)
        if value.ndim != 2:
            raise ShapeError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.requires_grad = requires_grad
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.op = op
        self.id = next(_ids)
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def zero_grad(self):
        self.grad = None

    def item(self):
        if self.shape != (1, 1):
            raise ShapeError(f"item() needs a (1, 1) tensor, got {self.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape}, dtype={self.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return hadamard(self, other)
        return scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    @property
    def T(self):
        return transpose(self)


def _node(value, parents, backward_fn, op):
    parents = tuple(parents)
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# leaves


def param(shape, init="xavier", seed=None, value=0.0, dtype=np.float64, rng=None, name=None):
    """Create a trainable leaf.

    ``init`` is ``"xavier"`` (uniform in +-sqrt(6 / (rows + cols))) or
    ``"constant"``. Pass either ``seed`` or an existing ``rng``.
    """
    rows, cols = shape
    if rows <= 0 or cols <= 0:
        raise ValueError(f"parameter dimensions must be positive, got {shape}")
    if init == "xavier":
        if rng is None:
            rng = np.random.default_rng(seed)
        bound = np.sqrt(6.0 / (rows + cols))
        buf = rng.uniform(-bound, bound, size=(rows, cols)).astype(dtype)
    elif init == "constant":
        buf = np.full((rows, cols), value, dtype=dtype)
    else:
        raise ValueError(f"unknown init {init!r}")
    return Tensor(buf, requires_grad=True, name=name)


def constant(value, dtype=None):
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    return Tensor(arr)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ {a.shape} @ {b.shape}")
    out = a.value @ b.value

    def backward(g):
        return g @ b.value.T, a.value.T @ g

    return _node(out, (a, b), backward, "matmul")


def spmm(matrix, x, matrix_t=None):
    """Sparse-dense product. ``matrix_t`` is the stored transpose used in backward."""
    if matrix.shape[1] != x.shape[0]:
        raise ShapeError(f"spmm: inner dims differ {matrix.shape} @ {x.shape}")
    if matrix_t is None:
        matrix_t = sp.csr_matrix(matrix.T)
    out = np.asarray(matrix @ x.value)

    def backward(g):
        return (np.asarray(matrix_t @ g),)

    return _node(out, (x,), backward, "spmm")


def transpose(a):
    def backward(g):
        return (g.T,)

    return _node(a.value.T.copy(), (a,), backward, "transpose")


def add(a, b):
    _same_shape(a, b, "add")

    def backward(g):
        return g, g

    return _node(a.value + b.value, (a, b), backward, "add")


def sub(a, b):
    _same_shape(a, b, "sub")

    def backward(g):
        return g, -g

    return _node(a.value - b.value, (a, b), backward, "sub")


def add_n(tensors):
    """Left-to-right sum of equally shaped tensors."""
    tensors = list(tensors)
    out = tensors[0]
    for t in tensors[1:]:
        out = add(out, t)
    return out


def scale(a, c):
    c = float(c)

    def backward(g):
        return (g * c,)

    return _node(a.value * a.dtype.type(c), (a,), backward, "scale")


def div_scalar(a, c):
    c = float(c)
    if c == 0.0:
        raise ZeroDivisionError("div_scalar by zero")
    return scale(a, 1.0 / c)


def hadamard(a, b):
    _same_shape(a, b, "hadamard")

    def backward(g):
        return g * b.value, g * a.value

    return _node(a.value * b.value, (a, b), backward, "hadamard")


def scale_rows(x, w):
    """Multiply row r of ``x`` (n x d) by the scalar ``w[r, 0]`` (n x 1)."""
    if w.shape != (x.shape[0], 1):
        raise ShapeError(f"scale_rows: weights {w.shape} do not match rows of {x.shape}")

    def backward(g):
        return g * w.value, np.sum(g * x.value, axis=1, keepdims=True)

    return _node(x.value * w.value, (x, w), backward, "scale_rows")


def row_dot(a, b):
    """Per-row inner products, (n x d), (n x d) -> (n x 1)."""
    _same_shape(a, b, "row_dot")

    def backward(g):
        return g * b.value, g * a.value

    return _node(np.sum(a.value * b.value, axis=1, keepdims=True), (a, b), backward, "row_dot")


def concat_cols(tensors):
    tensors = list(tensors)
    rows = tensors[0].shape[0]
    for t in tensors:
        if t.shape[0] != rows:
            raise ShapeError(f"concat_cols: row counts differ {tensors[0].shape} vs {t.shape}")
    widths = [t.shape[1] for t in tensors]
    bounds = np.cumsum([0] + widths)

    def backward(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _node(np.concatenate([t.value for t in tensors], axis=1), tensors, backward, "concat_cols")


def select_col(x, j):
    n, m = x.shape
    if not 0 <= j < m:
        raise IndexError(f"column {j} out of range for shape {x.shape}")

    def backward(g):
        out = np.zeros_like(x.value)
        out[:, j] = g[:, 0]
        return (out,)

    return _node(x.value[:, j:j + 1].copy(), (x,), backward, "select_col")


def gather_rows(x, ids):
    ids = np.asarray(ids, dtype=np.int64).ravel()
    n = x.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= n):
        raise IndexError(f"gather_rows: ids outside [0, {n})")

    def backward(g):
        out = np.zeros_like(x.value)
        np.add.at(out, ids, g)
        return (out,)

    return _node(x.value[ids], (x,), backward, "gather_rows")


def reduce_sum(x):
    def backward(g):
        return (np.full_like(x.value, g[0, 0]),)

    return _node(np.sum(x.value).reshape(1, 1), (x,), backward, "reduce_sum")


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def exp(x):
    out = np.exp(x.value)

    def backward(g):
        return (g * out,)

    return _node(out, (x,), backward, "exp")


def log(x):
    def backward(g):
        return (g / x.value,)

    return _node(np.log(x.value), (x,), backward, "log")


def log_sigmoid(x):
    """log(sigmoid(x)) evaluated as -softplus(-x)."""
    v = x.value
    out = -np.logaddexp(v.dtype.type(0), -v)

    def backward(g):
        # d/dx log sigmoid(x) = sigmoid(-x)
        return (g * _sigmoid(-v),)

    return _node(out, (x,), backward, "log_sigmoid")


def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def row_softmax(x, temperature_scale=1.0):
    """Softmax over each row of ``x * temperature_scale``."""
    v = x.value
    if np.isnan(v).any():
        raise FloatingPointError("row_softmax: NaN input")
    c = v.dtype.type(temperature_scale)
    z = v * c
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        inner = np.sum(g * out, axis=1, keepdims=True)
        return (out * (g - inner) * c,)

    return _node(out, (x,), backward, "row_softmax")


def row_logsumexp(x):
    """log(sum(exp(row))) per row, (n x m) -> (n x 1)."""
    v = x.value
    m = v.max(axis=1, keepdims=True)
    e = np.exp(v - m)
    s = e.sum(axis=1, keepdims=True)
    out = m + np.log(s)

    def backward(g):
        return (g * (e / s),)

    return _node(out, (x,), backward, "row_logsumexp")


def row_l2_normalize(x):
    """Scale each row to unit L2 norm; rows with norm below 1e-12 become zero."""
    v = x.value
    norm = np.sqrt(np.sum(v * v, axis=1, keepdims=True))
    live = norm > NORMALIZE_EPS
    denom = np.where(live, norm, 1.0)
    out = np.where(live, v / denom, 0.0).astype(v.dtype)

    def backward(g):
        proj = np.sum(g * out, axis=1, keepdims=True)
        gx = (g - out * proj) / denom
        return (np.where(live, gx, 0.0).astype(v.dtype),)

    return _node(out, (x,), backward, "row_l2_normalize")


# ---------------------------------------------------------------------------
# stop-gradient


def stop_gradient(x):
    """Identity forward, no gradient to ``x``.

    Inside ``freeze_stopped`` the forward value is replaced by the value
    recorded on the first pass, which turns the function into its detached
    equivalent for finite differencing.
    """
    state = getattr(_freeze, "state", None)
    value = x.value
    if state is not None:
        if state["mode"] == "record":
            state["values"].append(value.copy())
        else:
            value = state["values"][state["pos"]]
            state["pos"] += 1
    if "stop_gradient" in _BROKEN_RULES:
        def backward(g):
            return (g,)

        return _node(value.copy(), (x,), backward, "stop_gradient")
    return Tensor(value.copy(), op="stop_gradient")


@contextmanager
def freeze_stopped(values=None):
    """Record (``values`` is None) or replay stopped values, in call order."""
    prev = getattr(_freeze, "state", None)
    if values is None:
        state = {"mode": "record", "values": []}
    else:
        state = {"mode": "replay", "values": values, "pos": 0}
    _freeze.state = state
    try:
        yield state["values"]
    finally:
        _freeze.state = prev


@contextmanager
def break_rule(name):
    """Disable a backward rule for the duration of the block (negative control)."""
    _BROKEN_RULES.add(name)
    try:
        yield
    finally:
        _BROKEN_RULES.discard(name)


# ---------------------------------------------------------------------------
# reverse sweep


class Tape:
    """Ancestors of a root in creation order."""

    def __init__(self, nodes):
        self.nodes = list(nodes)

    @classmethod
    def from_root(cls, root):
        seen = {root.id: root}
        stack = [root]
        while stack:
            node = stack.pop()
            for p in node.parents:
                if p.requires_grad and p.id not in seen:
                    seen[p.id] = p
                    stack.append(p)
        return cls(sorted(seen.values(), key=lambda n: n.id))

    def __len__(self):
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(root):
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every trainable leaf."""
    if root.shape != (1, 1):
        raise ShapeError(f"backward needs a scalar (1, 1) root, got {root.shape}")
    if not root.requires_grad:
        return
    tape = Tape.from_root(root)
    grads = {root.id: np.ones_like(root.value)}
    for node in reversed(tape.nodes):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.is_leaf:
            if node.grad is None:
                node.grad = g.copy()
            else:
                node.grad += g
            continue
        parent_grads = node.backward_fn(g)
        for parent, pg in zip(node.parents, parent_grads):
            if not parent.requires_grad:
                continue
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg


def finite_diff_check(f: Callable[[], Tensor], leaves: Sequence[Tensor], h: float = 1e-5,
                      return_detail: bool = False):
    """Largest relative error between backprop and central differences.

    ``f`` rebuilds the scalar from the current leaf values on every call. Any
    ``stop_gradient`` inside ``f`` is frozen at its unperturbed value, so the
    reference is the detached function.
    """
    leaves = list(leaves)
    for leaf in leaves:
        leaf.zero_grad()
    with freeze_stopped() as frozen:
        root = f()
    backward(root)
    analytic = [leaf.grad.copy() if leaf.grad is not None else np.zeros_like(leaf.value)
                for leaf in leaves]

    worst = 0.0
    worst_at = None
    for li, leaf in enumerate(leaves):
        flat = leaf.value.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            with freeze_stopped(frozen):
                fp = f().item()
            flat[idx] = orig - h
            with freeze_stopped(frozen):
                fm = f().item()
            flat[idx] = orig
            num = (fp - fm) / (2 * h)
            ana = float(analytic[li].reshape(-1)[idx])
            err = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            if err > worst:
                worst = err
                worst_at = (li, idx, ana, num)
    for leaf in leaves:
        leaf.zero_grad()
    if return_detail:
        return worst, worst_at
    return worst


def zero_grads(tensors: Iterable[Tensor]):
    for t in tensors:
        t.zero_grad()
