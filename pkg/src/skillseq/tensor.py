"""Reverse-mode automatic differentiation over dense numpy arrays.

Every tensor op records its inputs and a per-input vector-Jacobian closure;
`backward` walks the graph in reverse topological order and accumulates
gradients into leaves that were created with ``requires_grad=True``.

Numerical conventions: float64 everywhere in tests and oracles, float32
allowed for training speed. Inputs to ``log`` and the denominator of
``divide`` are clamped away from zero by 1e-12; log-softmax and
cross-entropy use the max-shift trick.
"""

from __future__ import annotations

import numpy as np

EPS_CLAMP = 1e-12
MASK_NEG = -1e9


class ShapeError(ValueError):
    """Raised when an op's inputs do not conform to its shape rules."""


def _require(cond, kind, msg):
    if not cond:
        raise ShapeError(f"{kind}: {msg}")


class Tensor:
    """Dense n-dimensional array participating in a differentiation graph.

    ``data`` holds the value, ``grad`` the accumulated gradient (lazily
    allocated by backward). Non-leaf tensors keep references to their
    parents and vjp closures until backward releases are irrelevant
    (graphs here are per-step and short-lived).
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "parents", "vjps", "node_id")

    _next_id = 0

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.parents = ()
        self.vjps = ()
        self.node_id = Tensor._next_id
        Tensor._next_id += 1

    # -- introspection -------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- gradient bookkeeping -------------------------------------------

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy())

    def backward(self):
        backward(self)

    # -- operator sugar --------------------------------------------------

    def __add__(self, other):
        return apply("add", self, other)

    __radd__ = __add__

    def __neg__(self):
        return apply("negate", self)

    def __sub__(self, other):
        return apply("add", self, apply("negate", as_tensor(other)))

    def __rsub__(self, other):
        return apply("add", as_tensor(other), apply("negate", self))

    def __mul__(self, other):
        return apply("multiply", self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return apply("divide", self, other)

    def __matmul__(self, other):
        return apply("matmul", self, other)

    def __getitem__(self, key):
        return apply("slice", self, key=key)

    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return apply("mean", self, axis=axis, keepdims=keepdims)

    def exp(self):
        return apply("exponential", self)

    def log(self):
        return apply("logarithm", self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return apply("reshape", self, shape=shape)

    def transpose(self, axes):
        return apply("transpose", self, axes=tuple(axes))

    def swap_last(self):
        axes = list(range(self.ndim))
        axes[-1], axes[-2] = axes[-2], axes[-1]
        return self.transpose(axes)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _make_node(kind, data, parents, vjps):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    out.op = kind
    out.parents = tuple(parents)
    out.vjps = tuple(vjps)
    out.node_id = Tensor._next_id
    Tensor._next_id += 1
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the original shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- op implementations ----------------------------------------------------


def _op_add(a, b):
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _make_node(
        "add", data, (a, b),
        (lambda g: _unbroadcast(g, a.shape), lambda g: _unbroadcast(g, b.shape)),
    )


def _op_negate(a):
    return _make_node("negate", -a.data, (a,), (lambda g: -g,))


def _op_multiply(a, b):
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"multiply: shapes {a.shape} and {b.shape} do not broadcast") from None
    return _make_node(
        "multiply", data, (a, b),
        (lambda g: _unbroadcast(g * b.data, a.shape), lambda g: _unbroadcast(g * a.data, b.shape)),
    )


def _op_divide(a, b):
    live = np.abs(b.data) >= EPS_CLAMP
    denom = np.where(live, b.data, np.where(b.data < 0, -EPS_CLAMP, EPS_CLAMP))
    data = a.data / denom
    return _make_node(
        "divide", data, (a, b),
        (
            lambda g: _unbroadcast(g / denom, a.shape),
            lambda g: _unbroadcast(-g * a.data * live / (denom * denom), b.shape),
        ),
    )


def _op_matmul(a, b):
    _require(a.ndim >= 2 and b.ndim >= 2, "matmul",
             f"inputs must be at least 2-D, got shapes {a.shape} and {b.shape}")
    _require(a.shape[-1] == b.shape[-2], "matmul",
             f"inner dimensions of shapes {a.shape} and {b.shape} do not match")
    try:
        data = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dimensions of shapes {a.shape} and {b.shape} "
                         "do not broadcast") from None

    def grad_a(g):
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)

    def grad_b(g):
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)

    return _make_node("matmul", data, (a, b), (grad_a, grad_b))


def _op_concat(*inputs, axis=-1):
    _require(len(inputs) >= 1, "concat-last-axis", "needs at least one input")
    base = inputs[0].shape
    for t in inputs[1:]:
        ok = len(t.shape) == len(base) and all(
            t.shape[i] == base[i] for i in range(len(base)) if i != axis % len(base)
        )
        _require(ok, "concat-last-axis", f"shapes {base} and {t.shape} differ off the concat axis")
    data = np.concatenate([t.data for t in inputs], axis=axis)
    sizes = [t.shape[axis] for t in inputs]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]
        return vjp

    return _make_node("concat-last-axis", data, inputs, tuple(make_vjp(i) for i in range(len(inputs))))


def _op_slice(a, key):
    data = a.data[key]

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return full

    return _make_node("slice", data, (a,), (vjp,))


def _op_embedding(table, ids):
    _require(table.ndim == 2, "embedding-gather", f"table must be 2-D, got shape {table.shape}")
    idx = np.asarray(ids)
    _require(idx.size == 0 or (idx.min() >= 0 and idx.max() < table.shape[0]),
             "embedding-gather", f"ids out of range for table shape {table.shape}")
    data = table.data[idx]

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return full

    return _make_node("embedding-gather", data, (table,), (vjp,))


def _softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _op_softmax(a):
    y = _softmax(a.data)

    def vjp(g):
        return (g - (g * y).sum(axis=-1, keepdims=True)) * y

    return _make_node("softmax-last-axis", y, (a,), (vjp,))


def _op_log_softmax(a):
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    sm = np.exp(y)

    def vjp(g):
        return g - sm * g.sum(axis=-1, keepdims=True)

    return _make_node("log-softmax-last-axis", y, (a,), (vjp,))


def _op_layer_norm(a, eps=1e-5):
    mu = a.data.mean(axis=-1, keepdims=True)
    var = a.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = (a.data - mu) * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return inv * (g - gm - y * gym)

    return _make_node("layer-normalize", y, (a,), (vjp,))


def _op_relu(a):
    mask = a.data > 0
    return _make_node("relu", a.data * mask, (a,), (lambda g: g * mask,))


_GELU_C = np.sqrt(2.0 / np.pi)


def _op_gelu(a):
    # tanh approximation; the analytic vjp differentiates this same form
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def vjp(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t ** 2) * dinner
        return g * dy

    return _make_node("gelu", y, (a,), (vjp,))


def _op_exponential(a):
    y = np.exp(a.data)
    return _make_node("exponential", y, (a,), (lambda g: g * y,))


def _op_logarithm(a):
    live = a.data >= EPS_CLAMP
    safe = np.maximum(a.data, EPS_CLAMP)
    return _make_node("logarithm", np.log(safe), (a,), (lambda g: g * live / safe,))


def _op_sum(a, axis=None, keepdims=False):
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.shape).copy()
        if not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).copy()

    return _make_node("sum-reduce", np.asarray(data), (a,), (vjp,))


def _op_mean(a, axis=None, keepdims=False):
    if axis is None:
        n = a.data.size
    else:
        n = a.shape[axis]
    out = _op_sum(a, axis=axis, keepdims=keepdims)
    return apply("multiply", out, Tensor(np.asarray(1.0 / n, dtype=a.dtype)))


def _op_clip(a, lo, hi):
    data = np.clip(a.data, lo, hi)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make_node("clip", data, (a,), (lambda g: g * inside,))


def _op_cross_entropy(logits, targets):
    _require(logits.ndim >= 1, "cross-entropy-with-logits", "logits must have a class axis")
    idx = np.asarray(targets)
    _require(idx.shape == logits.shape[:-1], "cross-entropy-with-logits",
             f"targets shape {idx.shape} must match logits shape {logits.shape} minus the class axis")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    logp = shifted - lse
    nll = -np.take_along_axis(logp, idx[..., None], axis=-1)[..., 0]
    sm = np.exp(logp)

    def vjp(g):
        grad = sm.copy()
        np.put_along_axis(grad, idx[..., None],
                          np.take_along_axis(grad, idx[..., None], axis=-1) - 1.0, axis=-1)
        return grad * g[..., None]

    return _make_node("cross-entropy-with-logits", nll, (logits,), (vjp,))


def _op_reshape(a, shape):
    _require(int(np.prod(shape)) == a.data.size or -1 in shape, "reshape",
             f"cannot reshape {a.shape} to {shape}")
    data = a.data.reshape(shape)
    return _make_node("reshape", data, (a,), (lambda g: g.reshape(a.shape),))


def _op_transpose(a, axes):
    _require(len(axes) == a.ndim, "transpose", f"axes {axes} do not match shape {a.shape}")
    inv = np.argsort(axes)
    data = np.transpose(a.data, axes)
    return _make_node("transpose", data, (a,), (lambda g: np.transpose(g, inv),))


_OPS = {
    "add": _op_add,
    "negate": _op_negate,
    "multiply": _op_multiply,
    "divide": _op_divide,
    "matmul": _op_matmul,
    "concat-last-axis": _op_concat,
    "slice": _op_slice,
    "embedding-gather": _op_embedding,
    "softmax-last-axis": _op_softmax,
    "log-softmax-last-axis": _op_log_softmax,
    "layer-normalize": _op_layer_norm,
    "relu": _op_relu,
    "gelu": _op_gelu,
    "exponential": _op_exponential,
    "logarithm": _op_logarithm,
    "sum": _op_sum,
    "sum-reduce": _op_sum,
    "mean": _op_mean,
    "mean-reduce": _op_mean,
    "clip": _op_clip,
    "cross-entropy-with-logits": _op_cross_entropy,
    "reshape": _op_reshape,
    "transpose": _op_transpose,
}


def apply(kind, *inputs, **attrs):
    """Apply an op-kind to input tensors, recording the node for backward."""
    impl = _OPS.get(kind)
    if impl is None:
        raise ValueError(f"unknown op-kind {kind!r}")
    tensors = tuple(x if isinstance(x, Tensor) else as_tensor(x) for x in inputs)
    return impl(*tensors, **attrs)


def scaled_dot_product_attention(q, k, v, mask_add=None):
    """Attention composed from primitive ops (matmul, scale, mask-add, softmax).

    q, k, v: (..., seq, head_dim); mask_add broadcasts against the score
    matrix and should contain 0 at allowed positions and a large negative
    number at masked ones.
    """
    dh = q.shape[-1]
    scores = apply("matmul", q, k.swap_last()) * (1.0 / np.sqrt(dh))
    if mask_add is not None:
        scores = apply("add", scores, mask_add)
    attn = apply("softmax-last-axis", scores)
    return apply("matmul", attn, v)


# -- graph walking ---------------------------------------------------------


def topo_order(root):
    """All nodes reachable from root, parents before children."""
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node.parents:
            if p.node_id not in seen:
                stack.append((p, False))
    return order


class Graph:
    """A computation graph captured from a root tensor.

    ``nodes`` lists every reachable tensor in topological order; ``seed``
    records the rng seed under which the graph was built, so a replay with
    the same seed and inputs reproduces forward values bit for bit.
    """

    def __init__(self, root, seed=0):
        self.root = root
        self.seed = int(seed)
        self.nodes = topo_order(root)

    def leaves(self):
        return [n for n in self.nodes if not n.parents]


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable grad-requiring leaf."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = topo_order(loss)
    grads = {loss.node_id: np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(node.node_id, None)
        if g is None:
            continue
        if node.requires_grad or not node.parents:
            node.grad = g if node.grad is None else node.grad + g
        for parent, vjp in zip(node.parents, node.vjps):
            if not parent.requires_grad:
                continue
            pg = vjp(g)
            if parent.node_id in grads:
                grads[parent.node_id] = grads[parent.node_id] + pg
            else:
                grads[parent.node_id] = pg


def zero_grads(tensors):
    for t in tensors:
        t.zero_grad()


def grad_check(f, point, eps=1e-5):
    """Max relative error between analytic and central-difference gradients.

    f must map a single tensor to a scalar tensor. Returns
    max over coordinates of |analytic - numeric| / max(1, |analytic|).
    """
    if not (0 < eps <= 1e-2):
        raise ValueError(f"eps must be in (0, 1e-2], got {eps}")
    x = Tensor(np.asarray(point.data if isinstance(point, Tensor) else point,
                          dtype=np.float64).copy(), requires_grad=True)
    out = f(x)
    if out.data.ndim != 0 and out.data.size != 1:
        raise ValueError(f"grad_check requires a scalar-valued function, got shape {out.shape}")
    backward(out)
    analytic = np.zeros_like(x.data) if x.grad is None else x.grad.copy()

    flat = x.data.reshape(-1)
    numeric = np.zeros_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = float(f(Tensor(x.data.copy())).data)
        flat[i] = orig - eps
        lo = float(f(Tensor(x.data.copy())).data)
        flat[i] = orig
        numeric[i] = (hi - lo) / (2 * eps)
        if not np.isfinite(numeric[i]):
            raise FloatingPointError(f"non-finite central difference at coordinate {i}")
    numeric = numeric.reshape(x.data.shape)
    if not np.all(np.isfinite(analytic)):
        bad = int(np.argmin(np.isfinite(analytic).reshape(-1)))
        raise FloatingPointError(f"non-finite analytic gradient at coordinate {bad}")
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom)) if flat.size else 0.0
