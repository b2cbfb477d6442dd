"""Dense 1-D/2-D float tensors with reverse-mode automatic differentiation.

Scalars are shape-() tensors; 3-d storage exists only to hold convolution
kernels.  Elementwise ops accept equal shapes or a scalar paired with a
tensor; anything wider (bias rows, per-frame weights, per-channel weights)
goes through the dedicated rank-1 ops below instead of general
broadcasting.  Gradients accumulate additively across every use of a
tensor (fan-out sum rule).
"""

from __future__ import annotations

import threading

import numpy as np


class ShapeError(ValueError):
    """Operand shapes violate an operation's contract."""


class DegenerateAxisError(ValueError):
    """Reduction asked for a statistic undefined on an extent-1 axis."""


class GradientError(RuntimeError):
    """Backward pass misuse: non-scalar loss or repeated backward."""


_state = threading.local()


def _grad_enabled() -> bool:
    return not getattr(_state, "no_grad", False)


class no_grad:
    """Context manager: ops created inside do not record backward closures."""

    def __enter__(self):
        self._prev = getattr(_state, "no_grad", False)
        _state.no_grad = True
        return self

    def __exit__(self, *exc):
        _state.no_grad = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backprop", "_spent")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 3:
            raise ShapeError(f"at most 3-d tensors supported, got ndim={arr.ndim}")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backprop = None
        self._spent = False

    # -- introspection -------------------------------------------------
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
        if self.data.size != 1:
            raise ShapeError("item() on non-scalar tensor")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- gradient plumbing ---------------------------------------------
    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self):
        self.grad = None
        self._spent = False

    def backward(self):
        backward(self)

    # -- operator sugar --------------------------------------------------
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, _lift(other))


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def accumulate_grad(t: Tensor, g: np.ndarray):
    """Add a gradient contribution to a tensor's grad slot (fan-out sum)."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64)
    else:
        t.grad += g


def from_op(data, parents, backprop) -> Tensor:
    """Create an op result node.

    `backprop(g)` receives the output gradient and must push contributions
    into the parents via their grad slots (use this from fused ops outside
    this module).  Recording is skipped under no_grad or when no parent is
    tracked.
    """
    out = Tensor(data)
    if _grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backprop = backprop
    return out


class Tape:
    """Ordered record of the op nodes reachable from a root.

    `nodes` is in topological order (inputs before consumers), so replaying
    it in reverse visits each node exactly once in reverse topological order.
    """

    def __init__(self, nodes):
        self.nodes = nodes


def trace(root: Tensor) -> Tape:
    nodes = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            nodes.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    return Tape(nodes)


def backward(loss: Tensor):
    """Populate gradients of everything the scalar `loss` depends on."""
    if loss.size != 1:
        raise GradientError(f"loss must be scalar, got shape {loss.shape}")
    if loss._spent:
        raise GradientError("backward already ran for this loss; reset gradients first")
    loss._spent = True
    tape = trace(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node._backprop is not None and node.grad is not None:
            node._backprop(node.grad)


# ---------------------------------------------------------------------------
# elementwise ops (equal shapes, or scalar with tensor)
# ---------------------------------------------------------------------------

def _binary_shapes(a: Tensor, b: Tensor, op: str):
    if a.shape == b.shape or a.ndim == 0 or b.ndim == 0:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} vs {b.shape}")


def _fit(g: np.ndarray, shape) -> np.ndarray:
    # collapse a broadcast gradient back onto a scalar operand
    if shape == () and g.shape != ():
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "add")

    def backprop(g):
        accumulate_grad(a, _fit(g, a.shape))
        accumulate_grad(b, _fit(g, b.shape))

    return from_op(a.data + b.data, (a, b), backprop)


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "sub")

    def backprop(g):
        accumulate_grad(a, _fit(g, a.shape))
        accumulate_grad(b, _fit(-g, b.shape))

    return from_op(a.data - b.data, (a, b), backprop)


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "mul")

    def backprop(g):
        accumulate_grad(a, _fit(g * b.data, a.shape))
        accumulate_grad(b, _fit(g * a.data, b.shape))

    return from_op(a.data * b.data, (a, b), backprop)


def div(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "div")

    def backprop(g):
        accumulate_grad(a, _fit(g / b.data, a.shape))
        accumulate_grad(b, _fit(-g * a.data / (b.data * b.data), b.shape))

    return from_op(a.data / b.data, (a, b), backprop)


def neg(a: Tensor) -> Tensor:
    return from_op(-a.data, (a,), lambda g: accumulate_grad(a, -g))


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)
    return from_op(out_data, (a,), lambda g: accumulate_grad(a, g * out_data))


def log(a: Tensor) -> Tensor:
    return from_op(np.log(a.data), (a,), lambda g: accumulate_grad(a, g / a.data))


def square(a: Tensor) -> Tensor:
    return from_op(a.data * a.data, (a,), lambda g: accumulate_grad(a, 2.0 * g * a.data))


def absval(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    return from_op(np.abs(a.data), (a,), lambda g: accumulate_grad(a, g * np.sign(a.data)))


def softplus(a: Tensor) -> Tensor:
    out_data = np.logaddexp(0.0, a.data)

    def backprop(g):
        accumulate_grad(a, g * _sigmoid(a.data))

    return from_op(out_data, (a,), backprop)


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid(a.data)
    return from_op(out_data, (a,), lambda g: accumulate_grad(a, g * out_data * (1.0 - out_data)))


def relu(a: Tensor) -> Tensor:
    return from_op(np.maximum(a.data, 0.0), (a,), lambda g: accumulate_grad(a, g * (a.data > 0)))


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)
    return from_op(out_data, (a,), lambda g: accumulate_grad(a, g * (1.0 - out_data * out_data)))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def _spread(g: np.ndarray, shape, axis) -> np.ndarray:
    # broadcast a reduced gradient back over the reduced axis
    if axis is None:
        return np.broadcast_to(g, shape).astype(np.float64, copy=True)
    return np.broadcast_to(np.expand_dims(g, axis), shape).astype(np.float64, copy=True)


def reduce_sum(a: Tensor, axis=None) -> Tensor:
    def backprop(g):
        accumulate_grad(a, _spread(g, a.shape, axis))

    return from_op(a.data.sum(axis=axis), (a,), backprop)


def reduce_mean(a: Tensor, axis=None) -> Tensor:
    n = a.size if axis is None else a.shape[axis]

    def backprop(g):
        accumulate_grad(a, _spread(g, a.shape, axis) / n)

    return from_op(a.data.mean(axis=axis), (a,), backprop)


def std_bessel(a: Tensor, axis: int) -> Tensor:
    """Standard deviation with the T-1 denominator along `axis`."""
    n = a.shape[axis]
    if n < 2:
        raise DegenerateAxisError(
            f"std_bessel needs extent >= 2 on axis {axis}, got {n}"
        )
    centered = a.data - a.data.mean(axis=axis, keepdims=True)
    var = (centered * centered).sum(axis=axis) / (n - 1)
    out_data = np.sqrt(var)

    def backprop(g):
        # d std / d x_i = (x_i - mean) / ((n-1) * std); 0 where std == 0
        safe = np.where(out_data > 0, out_data, 1.0)
        scale = np.where(out_data > 0, g / ((n - 1) * safe), 0.0)
        accumulate_grad(a, np.expand_dims(scale, axis) * centered)

    return from_op(out_data, (a,), backprop)


# ---------------------------------------------------------------------------
# linear algebra and structure
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError("matmul does not take scalars")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents differ, {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def backprop(g):
        if a.ndim == 2 and b.ndim == 2:
            accumulate_grad(a, g @ b.data.T)
            accumulate_grad(b, a.data.T @ g)
        elif a.ndim == 1 and b.ndim == 2:
            accumulate_grad(a, b.data @ g)
            accumulate_grad(b, np.outer(a.data, g))
        elif a.ndim == 2 and b.ndim == 1:
            accumulate_grad(a, np.outer(g, b.data))
            accumulate_grad(b, a.data.T @ g)
        else:  # 1-d dot 1-d
            accumulate_grad(a, g * b.data)
            accumulate_grad(b, g * a.data)

    return from_op(out_data, (a, b), backprop)


def matmul_rowwise(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product evaluated one row of `a` at a time.

    Row i of the result is computed by an identically-shaped vector-matrix
    call whatever a's row count is, so prefixes are bitwise stable (batched
    BLAS products may reassociate sums differently per shape).  Backward
    uses the batched form.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul_rowwise: {a.shape} @ {b.shape}")
    out_data = np.empty((a.shape[0], b.shape[1]))
    for i in range(a.shape[0]):
        np.matmul(a.data[i], b.data, out=out_data[i])

    def backprop(g):
        accumulate_grad(a, g @ b.data.T)
        accumulate_grad(b, a.data.T @ g)

    return from_op(out_data, (a, b), backprop)


def reshape(a: Tensor, shape) -> Tensor:
    out_data = a.data.reshape(shape)
    return from_op(out_data.copy(), (a,), lambda g: accumulate_grad(a, g.reshape(a.shape)))


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError("transpose expects a 2-d tensor")
    return from_op(a.data.T.copy(), (a,), lambda g: accumulate_grad(a, g.T))


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an (T, n) matrix."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"add_rowvec: {m.shape} + {v.shape}")

    def backprop(g):
        accumulate_grad(m, g)
        accumulate_grad(v, g.sum(axis=0))

    return from_op(m.data + v.data[None, :], (m, v), backprop)


def mul_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of an (T, n) matrix elementwise by a length-n vector."""
    if m.ndim != 2 or v.ndim != 1 or m.shape[1] != v.shape[0]:
        raise ShapeError(f"mul_rowvec: {m.shape} * {v.shape}")

    def backprop(g):
        accumulate_grad(m, g * v.data[None, :])
        accumulate_grad(v, (g * m.data).sum(axis=0))

    return from_op(m.data * v.data[None, :], (m, v), backprop)


def scale_rows(m: Tensor, w: Tensor) -> Tensor:
    """Scale row i of an (T, n) matrix by scalar w[i]."""
    if m.ndim != 2 or w.ndim != 1 or m.shape[0] != w.shape[0]:
        raise ShapeError(f"scale_rows: {m.shape} by {w.shape}")

    def backprop(g):
        accumulate_grad(m, g * w.data[:, None])
        accumulate_grad(w, (g * m.data).sum(axis=1))

    return from_op(m.data * w.data[:, None], (m, w), backprop)


def stack_rows(rows) -> Tensor:
    """Stack length-n vectors into a (T, n) matrix."""
    rows = list(rows)
    if not rows or any(r.ndim != 1 for r in rows):
        raise ShapeError("stack_rows expects a non-empty list of 1-d tensors")

    def backprop(g):
        for i, r in enumerate(rows):
            accumulate_grad(r, g[i])

    return from_op(np.stack([r.data for r in rows]), tuple(rows), backprop)


def concat_cols(a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two (T, ·) matrices along columns."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols: {a.shape} vs {b.shape}")
    na = a.shape[1]

    def backprop(g):
        accumulate_grad(a, g[:, :na])
        accumulate_grad(b, g[:, na:])

    return from_op(np.concatenate([a.data, b.data], axis=1), (a, b), backprop)


def conv1d(x: Tensor, kernel: Tensor) -> Tensor:
    """1-D convolution, stride 1, symmetric zero padding (K-1)/2.

    x is (C_in, T), kernel is (C_out, C_in, K) with K odd; output is
    (C_out, T) -- the temporal extent is preserved for every T >= 1.
    """
    if x.ndim != 2:
        raise ShapeError("conv1d input must be (C_in, T)")
    if kernel.data.ndim != 3:
        raise ShapeError("conv1d kernel must be (C_out, C_in, K)")
    c_out, c_in, k = kernel.data.shape
    if k % 2 == 0:
        raise ShapeError(f"conv1d kernel size must be odd, got {k}")
    if x.shape[0] != c_in:
        raise ShapeError(f"conv1d: {c_in} input channels expected, got {x.shape[0]}")
    t = x.shape[1]
    pad = (k - 1) // 2
    xp = np.zeros((c_in, t + k - 1))
    xp[:, pad:pad + t] = x.data
    out_data = np.zeros((c_out, t))
    for j in range(k):
        out_data += kernel.data[:, :, j] @ xp[:, j:j + t]

    def backprop(g):
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for j in range(k):
                gxp[:, j:j + t] += kernel.data[:, :, j].T @ g
            accumulate_grad(x, gxp[:, pad:pad + t])
        if kernel.requires_grad:
            gk = np.empty_like(kernel.data)
            for j in range(k):
                gk[:, :, j] = g @ xp[:, j:j + t].T
            accumulate_grad(kernel, gk)

    return from_op(out_data, (x, kernel), backprop)
