"""Dense tensors with reverse-mode automatic differentiation.

The op catalog is fixed: exactly the primitives the attention/transformation
networks, the patch discriminators and the loss terms need.  Training runs in
float32; gradient checking runs the same code in float64 (see gradcheck.py).

Conventions that matter for the finite-difference checks:
  - relu derivative at 0 is 0, leaky_relu likewise uses the negative slope
    only for strictly negative inputs
  - abs has subgradient 0 at exactly 0
"""

from __future__ import annotations

import numpy as np

LEAKY_SLOPE = 0.2
INSTANCE_NORM_EPS = 1e-5


class Tensor:
    """N-d float array with an optional gradient slot.

    Interior nodes of the tape keep their parents and a backward rule that
    maps the output adjoint to per-parent adjoints.  Leaf gradients
    accumulate across backward() calls; interior adjoints are local to each
    backward() call, so running backward twice doubles every leaf grad.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if _backward is None and not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values in tensor data")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward requires a scalar loss, got shape %s" % (self.shape,))
        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        adjoint = {id(self): np.ones_like(self.data)}
        if not self._parents and self.requires_grad:
            self.grad = np.ones_like(self.data) if self.grad is None else self.grad + 1.0
        for node in reversed(topo):
            g = adjoint.pop(id(node), None)
            if g is None or node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                if parent._parents or parent._backward is not None:
                    acc = adjoint.get(id(parent))
                    adjoint[id(parent)] = pg if acc is None else acc + pg
                else:
                    parent.grad = pg.copy() if parent.grad is None else parent.grad + pg

    # convenience operators (thin wrappers over the catalog)
    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return "Tensor(shape=%s, requires_grad=%s)" % (self.shape, self.requires_grad)


def _check_operand(op, t):
    if not isinstance(t, Tensor):
        raise TypeError("%s expects Tensor operands, got %r" % (op, type(t)))
    if not np.all(np.isfinite(t.data)):
        raise ValueError("%s: non-finite operand" % op)
    return t


def _needs_grad(*tensors):
    return any(t.requires_grad for t in tensors)


def _unbroadcast(grad, shape):
    """Sum grad down to `shape` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _binary_shapes_ok(op, a, b):
    # only exact match or size-1-axis broadcast (used for the channel-broadcast
    # attention mask); anything else is a caller bug
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError("%s: shapes %s and %s do not conform" % (op, a.shape, b.shape))


def add(a, b):
    _check_operand("add", a)
    _check_operand("add", b)
    _binary_shapes_ok("add", a, b)
    out = a.data + b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor(out, _needs_grad(a, b), (a, b), back)


def sub(a, b):
    _check_operand("sub", a)
    _check_operand("sub", b)
    _binary_shapes_ok("sub", a, b)
    out = a.data - b.data

    def back(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor(out, _needs_grad(a, b), (a, b), back)


def mul(a, b):
    _check_operand("mul", a)
    _check_operand("mul", b)
    _binary_shapes_ok("mul", a, b)
    out = a.data * b.data

    def back(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor(out, _needs_grad(a, b), (a, b), back)


def scale(a, c):
    _check_operand("scale", a)
    c = float(c)

    def back(g):
        return (g * c,)

    return Tensor(a.data * c, a.requires_grad, (a,), back)


def shift(a, c):
    _check_operand("shift", a)

    def back(g):
        return (g,)

    return Tensor(a.data + float(c), a.requires_grad, (a,), back)


def abs_(a):
    _check_operand("abs", a)
    sign = np.sign(a.data)  # 0 at exactly 0, by convention

    def back(g):
        return (g * sign,)

    return Tensor(np.abs(a.data), a.requires_grad, (a,), back)


def square(a):
    _check_operand("square", a)

    def back(g):
        return (g * (2.0 * a.data),)

    return Tensor(a.data * a.data, a.requires_grad, (a,), back)


def mean(a):
    _check_operand("mean", a)
    n = a.data.size
    if n == 0:
        raise ValueError("mean: empty tensor")
    out = np.asarray(a.data.mean(), dtype=a.dtype)

    def back(g):
        return (np.full_like(a.data, g / n),)

    return Tensor(out, a.requires_grad, (a,), back)


def sum_(a):
    _check_operand("sum", a)
    out = np.asarray(a.data.sum(), dtype=a.dtype)

    def back(g):
        return (np.full_like(a.data, g),)

    return Tensor(out, a.requires_grad, (a,), back)


def relu(a):
    _check_operand("relu", a)
    gate = a.data > 0

    def back(g):
        return (g * gate,)

    return Tensor(np.where(gate, a.data, 0.0).astype(a.dtype), a.requires_grad, (a,), back)


def leaky_relu(a):
    _check_operand("leaky_relu", a)
    neg = a.data < 0
    out = np.where(neg, a.data * LEAKY_SLOPE, a.data).astype(a.dtype)

    def back(g):
        return (np.where(neg, g * LEAKY_SLOPE, g),)

    return Tensor(out, a.requires_grad, (a,), back)


def sigmoid(a):
    _check_operand("sigmoid", a)
    out = 1.0 / (1.0 + np.exp(-a.data))
    out = out.astype(a.dtype)

    def back(g):
        return (g * out * (1.0 - out),)

    return Tensor(out, a.requires_grad, (a,), back)


def tanh(a):
    _check_operand("tanh", a)
    out = np.tanh(a.data)

    def back(g):
        return (g * (1.0 - out * out),)

    return Tensor(out, a.requires_grad, (a,), back)


def _normalize_pad(pad):
    if isinstance(pad, int):
        return ((pad, pad), (pad, pad))
    (pt, pb), (pl, pr) = pad
    return ((int(pt), int(pb)), (int(pl), int(pr)))


def conv2d(x, w, b=None, stride=1, pad=0, pad_mode="zero"):
    """2-D convolution (cross-correlation) over NCHW input.

    x: (N, Ci, H, W); w: (Co, Ci, kh, kw); b: (Co,) or None.
    stride is 1 or 2; pad is an int or ((top, bottom), (left, right));
    pad_mode is "zero" or "reflect".
    """
    _check_operand("conv2d", x)
    _check_operand("conv2d", w)
    if b is not None:
        _check_operand("conv2d", b)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError("conv2d: input shape %s and kernel shape %s must both be 4-d"
                         % (x.shape, w.shape))
    n, ci, h, wd = x.shape
    co, ci_k, kh, kw = w.shape
    if ci != ci_k:
        raise ValueError("conv2d: input channels %d != kernel channels %d (input %s, kernel %s)"
                         % (ci, ci_k, x.shape, w.shape))
    if stride not in (1, 2):
        raise ValueError("conv2d: stride must be 1 or 2, got %r" % (stride,))
    if pad_mode not in ("zero", "reflect"):
        raise ValueError("conv2d: unknown pad_mode %r" % (pad_mode,))
    pads = _normalize_pad(pad)
    (pt, pb), (pl, pr) = pads
    if pad_mode == "reflect" and (pt >= h or pb >= h or pl >= wd or pr >= wd):
        raise ValueError("conv2d: reflect pad %s too large for input %s" % (pads, x.shape))

    if pt or pb or pl or pr:
        mode = "constant" if pad_mode == "zero" else "reflect"
        xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pb), (pl, pr)), mode=mode)
    else:
        xp = x.data
    hp, wp = xp.shape[2], xp.shape[3]
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    if ho <= 0 or wo <= 0:
        raise ValueError("conv2d: kernel %s does not fit padded input %s"
                         % (w.shape, xp.shape))

    # im2col by kernel offset: cols[(ci,i,j), (n,ho,wo)]
    cols = np.empty((ci * kh * kw, n * ho * wo), dtype=xp.dtype)
    idx = 0
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            cols[idx * ci:(idx + 1) * ci] = patch.transpose(1, 0, 2, 3).reshape(ci, -1)
            idx += 1
    # reorder kernel to match the (offset-major, channel-minor) col layout
    wm = w.data.transpose(0, 2, 3, 1).reshape(co, kh * kw * ci)
    out = wm @ cols
    out = out.reshape(co, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        if b.shape != (co,):
            raise ValueError("conv2d: bias shape %s != (%d,)" % (b.shape, co))
        out = out + b.data.reshape(1, co, 1, 1)
    out = np.ascontiguousarray(out)

    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gm = g.transpose(1, 0, 2, 3).reshape(co, -1)
        dw = dxp = db = None
        if w.requires_grad:
            dw = (gm @ cols.T).reshape(co, kh, kw, ci).transpose(0, 3, 1, 2)
        if b is not None and b.requires_grad:
            db = g.sum(axis=(0, 2, 3))
        dx = None
        if x.requires_grad:
            dcols = wm.T @ gm
            dxp = np.zeros((n, ci, hp, wp), dtype=xp.dtype)
            idx2 = 0
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[idx2 * ci:(idx2 + 1) * ci].reshape(ci, n, ho, wo).transpose(1, 0, 2, 3)
                    idx2 += 1
            if pad_mode == "zero" or not (pt or pb or pl or pr):
                dx = dxp[:, :, pt:hp - pb, pl:wp - pr]
            else:
                # reflect: border grads fold back onto their mirror sources
                # (padded row i < pt reflects input row pt - i, and the
                # bottom/right borders mirror likewise)
                core = dxp[:, :, pt:hp - pb, :].copy()
                if pt:
                    core[:, :, 1:pt + 1, :] += dxp[:, :, 0:pt, :][:, :, ::-1, :]
                if pb:
                    core[:, :, h - 1 - pb:h - 1, :] += dxp[:, :, hp - pb:hp, :][:, :, ::-1, :]
                dx = core[:, :, :, pl:wp - pr].copy()
                if pl:
                    dx[:, :, :, 1:pl + 1] += core[:, :, :, 0:pl][:, :, :, ::-1]
                if pr:
                    dx[:, :, :, wd - 1 - pr:wd - 1] += core[:, :, :, wp - pr:wp][:, :, :, ::-1]
            dx = np.ascontiguousarray(dx)
        if b is None:
            return dx, dw
        return dx, dw, db

    return Tensor(out, _needs_grad(*parents), parents, back)


def nearest_upsample(a):
    """Nearest-neighbor x2 upsampling of an NCHW tensor."""
    _check_operand("nearest_upsample", a)
    if a.data.ndim != 4:
        raise ValueError("nearest_upsample: expected 4-d input, got %s" % (a.shape,))
    out = a.data.repeat(2, axis=2).repeat(2, axis=3)

    def back(g):
        n, c, h2, w2 = g.shape
        return (g.reshape(n, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)),)

    return Tensor(out, a.requires_grad, (a,), back)


def instance_norm(x, gamma=None, beta=None):
    """Per-channel spatial normalization of an NCHW tensor with optional affine.

    gamma/beta have shape (C,).  Statistics are computed over H*W per (n, c).
    """
    _check_operand("instance_norm", x)
    if x.data.ndim != 4:
        raise ValueError("instance_norm: expected 4-d input, got %s" % (x.shape,))
    if (gamma is None) != (beta is None):
        raise ValueError("instance_norm: gamma and beta must be given together")
    c = x.shape[1]
    hw = x.shape[2] * x.shape[3]
    if hw < 2:
        raise ValueError("instance_norm: spatial size must be >= 2, got %s" % (x.shape,))
    mu = x.data.mean(axis=(2, 3), keepdims=True)
    var = x.data.var(axis=(2, 3), keepdims=True)
    inv_std = 1.0 / np.sqrt(var + INSTANCE_NORM_EPS)
    xhat = (x.data - mu) * inv_std
    if gamma is not None:
        _check_operand("instance_norm", gamma)
        _check_operand("instance_norm", beta)
        if gamma.shape != (c,) or beta.shape != (c,):
            raise ValueError("instance_norm: affine shapes %s/%s != (%d,)"
                             % (gamma.shape, beta.shape, c))
        out = xhat * gamma.data.reshape(1, c, 1, 1) + beta.data.reshape(1, c, 1, 1)
        parents = (x, gamma, beta)
    else:
        out = xhat
        parents = (x,)
    out = out.astype(x.dtype)

    def back(g):
        if gamma is not None:
            dbeta = g.sum(axis=(0, 2, 3))
            dgamma = (g * xhat).sum(axis=(0, 2, 3))
            gy = g * gamma.data.reshape(1, c, 1, 1)
        else:
            gy = g
        m1 = gy.mean(axis=(2, 3), keepdims=True)
        m2 = (gy * xhat).mean(axis=(2, 3), keepdims=True)
        dx = inv_std * (gy - m1 - xhat * m2)
        if gamma is not None:
            return dx, dgamma, dbeta
        return (dx,)

    return Tensor(out, _needs_grad(*parents), parents, back)


def concat(tensors, axis=1):
    if not tensors:
        raise ValueError("concat: empty operand list")
    for t in tensors:
        _check_operand("concat", t)
    ndim = tensors[0].data.ndim
    for t in tensors[1:]:
        if t.data.ndim != ndim:
            raise ValueError("concat: rank mismatch %s vs %s" % (tensors[0].shape, t.shape))
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return Tensor(out, _needs_grad(*tensors), tuple(tensors), back)


def slice_(a, axis, start, stop):
    _check_operand("slice", a)
    if not (0 <= axis < a.data.ndim):
        raise ValueError("slice: axis %d out of range for shape %s" % (axis, a.shape))
    if not (0 <= start < stop <= a.shape[axis]):
        raise ValueError("slice: range [%d, %d) invalid for axis size %d"
                         % (start, stop, a.shape[axis]))
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index].copy()

    def back(g):
        dx = np.zeros_like(a.data)
        dx[index] = g
        return (dx,)

    return Tensor(out, a.requires_grad, (a,), back)


OP_CATALOG = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "scale": scale,
    "abs": abs_,
    "square": square,
    "mean": mean,
    "sum": sum_,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "sigmoid": sigmoid,
    "tanh": tanh,
    "conv2d": conv2d,
    "nearest_upsample": nearest_upsample,
    "instance_norm": instance_norm,
    "concat": concat,
    "slice": slice_,
}


def forward(op_kind, *operands, **kwargs):
    """Dispatch one catalog op by name."""
    try:
        fn = OP_CATALOG[op_kind]
    except KeyError:
        raise ValueError("unknown op %r; catalog: %s" % (op_kind, sorted(OP_CATALOG)))
    return fn(*operands, **kwargs)
