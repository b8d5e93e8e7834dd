"""Dense tensors with reverse-mode automatic differentiation.

The graph is define-by-run: every op closes over its inputs and registers a
backward rule on the output node; ``Tensor.backward()`` replays the tape in
reverse topological order. Data is float32 by default (float64 graphs are
accepted so gradient checks can run at full precision). Reductions that feed
normalizations (softmax denominator, layer-norm moments) accumulate in
float64 regardless of the storage dtype.

Every forward op verifies its result is finite; overflow raises
``NumericError`` instead of propagating NaN/inf through the graph.
"""

import numpy as np

from .errors import ConfigError, GraphError, NumericError, ShapeError

_FLOAT_DTYPES = (np.float32, np.float64)


class Tensor:
    """N-d array node in a reverse-mode computation graph.

    ``grad`` is populated lazily by ``backward()`` and has the same shape and
    dtype as ``data``. Leaves created with ``requires_grad=True`` are the
    trainable parameters; everything else propagates the flag from its inputs.
    """

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_prev", "op")

    def __init__(self, data, requires_grad=False, _prev=(), op="leaf"):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._backward = None
        self._prev = _prev
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Populate grads of every requires-grad node reachable from a scalar."""
        if self.data.size != 1:
            raise GraphError(
                f"backward requires a scalar loss, got shape {self.data.shape}"
            )
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for child in node._prev:
                if id(child) not in visited:
                    stack.append((child, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward()

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -other)

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x, dtype=dtype) if dtype is not None else np.asarray(x)
    return Tensor(arr)


def _finite_or_raise(arr, op):
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{op}: produced non-finite values")


def _make(data, prev, op):
    _finite_or_raise(data, op)
    out = Tensor(data, _prev=tuple(prev), op=op)
    out.requires_grad = any(p.requires_grad for p in prev)
    return out


def _accum(t, g):
    if not t.requires_grad:
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        # Views (np.split, broadcast_to) are copied so grads own their memory.
        t.grad = g if g.base is None and g.flags.writeable else g.copy()
    else:
        t.grad = t.grad + g


def _unbroadcast(g, shape):
    """Sum gradient over axes that numpy broadcasting introduced."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _swapaxes(a):
    return np.swapaxes(a, -1, -2)


# ---------------------------------------------------------------------------
# elementwise and structural ops
# ---------------------------------------------------------------------------


def add(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype) if not isinstance(b, Tensor) else b
    out = _make(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad, a.data.shape))
            _accum(b, _unbroadcast(out.grad, b.data.shape))
        out._backward = _bw
    return out


def mul(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype) if not isinstance(b, Tensor) else b
    out = _make(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _bw():
            _accum(a, _unbroadcast(out.grad * b.data, a.data.shape))
            _accum(b, _unbroadcast(out.grad * a.data, b.data.shape))
        out._backward = _bw
    return out


def matmul(a, b):
    """Matrix product with leading batch dims broadcast, dA = dC·Bᵀ, dB = Aᵀ·dC."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(
            f"matmul requires >=2-d operands, got {a.data.shape} @ {b.data.shape}"
        )
    if a.data.shape[-1] != b.data.shape[-2]:
        raise ShapeError(
            f"matmul inner extents disagree: {a.data.shape} @ {b.data.shape}"
        )
    out = _make(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if a.requires_grad:
                _accum(a, _unbroadcast(g @ _swapaxes(b.data), a.data.shape))
            if b.requires_grad:
                _accum(b, _unbroadcast(_swapaxes(a.data) @ g, b.data.shape))
        out._backward = _bw
    return out


def reshape(x, shape):
    x = as_tensor(x)
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"cannot reshape {x.data.shape} to {shape}: {exc}") from None
    out = _make(data, (x,), "reshape")
    if out.requires_grad:
        def _bw():
            _accum(x, out.grad.reshape(x.data.shape))
        out._backward = _bw
    return out


def transpose(x, axes=None):
    x = as_tensor(x)
    out = _make(np.transpose(x.data, axes), (x,), "transpose")
    if out.requires_grad:
        inv = None if axes is None else np.argsort(axes)
        def _bw():
            _accum(x, np.transpose(out.grad, inv))
        out._backward = _bw
    return out


def concat(parts, axis=-1):
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ShapeError("concat of zero tensors")
    out = _make(np.concatenate([p.data for p in parts], axis=axis), parts, "concat")
    if out.requires_grad:
        sizes = [p.data.shape[axis] for p in parts]
        splits = np.cumsum(sizes)[:-1]
        def _bw():
            for p, g in zip(parts, np.split(out.grad, splits, axis=axis)):
                _accum(p, g)
        out._backward = _bw
    return out


def narrow(x, axis, start, length):
    """Contiguous slice of ``length`` elements along ``axis`` starting at ``start``."""
    x = as_tensor(x)
    axis = axis % x.data.ndim
    if start < 0 or start + length > x.data.shape[axis]:
        raise ShapeError(
            f"narrow [{start}:{start + length}] out of bounds for axis {axis} "
            f"of shape {x.data.shape}"
        )
    idx = tuple(slice(start, start + length) if i == axis else slice(None)
                for i in range(x.data.ndim))
    out = _make(x.data[idx], (x,), "narrow")
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(x.data)
            g[idx] = out.grad
            _accum(x, g)
        out._backward = _bw
    return out


def gather_rows(table, ids):
    """Embedding lookup: table [N, D] indexed by an integer array of ids."""
    table = as_tensor(table)
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise LookupError(
            f"gather_rows: id out of range for table with {table.data.shape[0]} rows"
        )
    out = _make(table.data[ids], (table,), "gather_rows")
    if out.requires_grad:
        def _bw():
            g = np.zeros_like(table.data)
            np.add.at(g, ids, out.grad)
            _accum(table, g)
        out._backward = _bw
    return out


def reduce_sum(x, axis=None, keepdims=False):
    """Sum with float64 accumulation, cast back to the input dtype."""
    x = as_tensor(x)
    data = x.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
    out = _make(np.asarray(data, dtype=x.dtype), (x,), "sum")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            _accum(x, np.broadcast_to(g, x.data.shape))
        out._backward = _bw
    return out


def reduce_mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size if axis is None else x.data.shape[axis]
    return mul(reduce_sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


def log(x):
    x = as_tensor(x)
    with np.errstate(divide="ignore", invalid="ignore"):
        data = np.log(x.data)
    out = _make(data, (x,), "log")
    if out.requires_grad:
        def _bw():
            _accum(x, out.grad / x.data)
        out._backward = _bw
    return out


def sqrt(x):
    x = as_tensor(x)
    data = np.sqrt(x.data)
    out = _make(data, (x,), "sqrt")
    if out.requires_grad:
        def _bw():
            _accum(x, out.grad * (0.5 / np.maximum(data, np.finfo(data.dtype).tiny)))
        out._backward = _bw
    return out


def absolute(x):
    """|x| with subgradient 0 at 0."""
    x = as_tensor(x)
    out = _make(np.abs(x.data), (x,), "abs")
    if out.requires_grad:
        def _bw():
            _accum(x, out.grad * np.sign(x.data))
        out._backward = _bw
    return out


def clip(x, lo, hi):
    """Clamp values to [lo, hi]; gradient passes only where x was inside."""
    x = as_tensor(x)
    out = _make(np.clip(x.data, lo, hi), (x,), "clip")
    if out.requires_grad:
        mask = ((x.data > lo) & (x.data < hi)).astype(x.dtype)
        def _bw():
            _accum(x, out.grad * mask)
        out._backward = _bw
    return out


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------


def relu(x):
    """max(0, x); subgradient at 0 is 0."""
    x = as_tensor(x)
    out = _make(np.maximum(x.data, 0), (x,), "relu")
    if out.requires_grad:
        mask = (x.data > 0).astype(x.dtype)
        def _bw():
            _accum(x, out.grad * mask)
        out._backward = _bw
    return out


def sigmoid(x):
    x = as_tensor(x)
    z = x.data
    data = np.where(z >= 0, 1.0 / (1.0 + np.exp(-np.abs(z))),
                    np.exp(-np.abs(z)) / (1.0 + np.exp(-np.abs(z))))
    data = data.astype(x.dtype)
    out = _make(data, (x,), "sigmoid")
    if out.requires_grad:
        def _bw():
            _accum(x, out.grad * data * (1.0 - data))
        out._backward = _bw
    return out


def softmax_lastdim(x):
    """Row-stable softmax over the last axis; denominator accumulated in float64."""
    x = as_tensor(x)
    if x.data.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    denom = ex.sum(axis=-1, keepdims=True, dtype=np.float64)
    y = (ex / denom).astype(x.dtype)
    out = _make(y, (x,), "softmax")
    if out.requires_grad:
        def _bw():
            g = out.grad
            inner = (g * y).sum(axis=-1, keepdims=True)
            _accum(x, y * (g - inner))
        out._backward = _bw
    return out


def layer_norm(x, gamma, beta, eps=1e-5):
    """Normalize the last axis to zero mean / unit variance, then affine.

    Moments are accumulated in float64; eps > 0 guards zero-variance rows.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.data.shape[-1]
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature dim {d}"
        )
    if eps <= 0:
        raise ConfigError("layer_norm eps must be > 0")
    x64 = x.data.astype(np.float64)
    mu = x64.mean(axis=-1, keepdims=True)
    var = ((x64 - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((x64 - mu) * inv).astype(x.dtype)
    inv = inv.astype(x.dtype)
    y = gamma.data * xhat + beta.data
    out = _make(y.astype(x.dtype), (x, gamma, beta), "layer_norm")
    if out.requires_grad:
        def _bw():
            g = out.grad
            if gamma.requires_grad:
                _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
            if beta.requires_grad:
                _accum(beta, g.reshape(-1, d).sum(axis=0))
            if x.requires_grad:
                gx = g * gamma.data
                m1 = gx.mean(axis=-1, keepdims=True)
                m2 = (gx * xhat).mean(axis=-1, keepdims=True)
                _accum(x, inv * (gx - m1 - xhat * m2))
        out._backward = _bw
    return out


def dropout(x, p, training, rng):
    """Inverted dropout: zero with probability p, scale survivors by 1/(1-p).

    Identity in eval mode or at p == 0; requires 0 <= p < 1.
    """
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout rate must satisfy 0 <= p < 1, got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.data.shape) >= p).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    out = _make(x.data * keep * scale, (x,), "dropout")
    if out.requires_grad:
        def _bw():
            _accum(x, out.grad * keep * scale)
        out._backward = _bw
    return out
