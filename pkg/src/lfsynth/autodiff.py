"""Reverse-mode automatic differentiation over dense numpy arrays.

This is a deliberately small engine: it provides exactly the operations the
light-field pipeline needs (dilated 2D/3D convolution, batch normalization,
ELU, scaled tanh, bilinear grid sampling, elementwise arithmetic, reductions,
shape ops) and nothing else. There is no broadcasting beyond python scalars,
no control-flow capture, and no GPU path.

Conventions:
  * Tensors wrap a numpy array (row-major, float32 or float64). All tensors
    participating in one graph must share a dtype; float64 exists for
    gradient checking, float32 is the training mode.
  * The graph is implicit. Each op output keeps references to its parent
    tensors and a backward closure; ``backward()`` on a scalar loss builds a
    topological order, visits every node once, and sums gradients into every
    tensor that requires them (fan-out accumulates).
  * Gradients of non-smooth points follow fixed subgradient conventions:
    d|x|/dx = 0 at x = 0, ELU derivative at 0 is 1, clamped grid-sample
    coordinates get zero coordinate-gradient outside the border.
"""

from __future__ import annotations

import numpy as np

DTYPES = {"single": np.float32, "double": np.float64}


def resolve_dtype(precision):
    """Map a precision mode name ('single'|'double') or numpy dtype to a dtype."""
    if precision in DTYPES:
        return DTYPES[precision]
    dt = np.dtype(precision)
    if dt not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ValueError(f"unsupported precision {precision!r}")
    return dt.type


class Tensor:
    """Dense array node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(resolve_dtype(dtype), copy=False)
        elif arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = ""

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, op={self._op or 'leaf'})"

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def abs(self):
        return absolute(self)

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_mean(self)

    def reshape(self, shape):
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(x, dtype=None):
    """Wrap an array as a non-grad Tensor; pass Tensors through unchanged."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x, requires_grad=False, dtype=dtype)


def _make(data, parents, backward_fn, op):
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req)
    if req:
        out._parents = tuple(parents)
        out._backward = backward_fn
        out._op = op
    return out


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


def _check_same_shape(a, b, op):
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")
    if a.data.dtype != b.data.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.data.dtype} vs {b.data.dtype}")


def backward(loss):
    """Populate .grad of every requires_grad tensor reachable from a scalar loss."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    order = _topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


def _topo_order(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))
    return order


# -- elementwise arithmetic ----------------------------------------------


def add(a, b):
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "add")

        def bwd(g):
            _accum(a, g)
            _accum(b, g)

        return _make(a.data + b.data, (a, b), bwd, "add")
    c = a.data.dtype.type(b)

    def bwd(g):
        _accum(a, g)

    return _make(a.data + c, (a,), bwd, "add_scalar")


def sub(a, b):
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "sub")

        def bwd(g):
            _accum(a, g)
            _accum(b, -g)

        return _make(a.data - b.data, (a, b), bwd, "sub")
    return add(a, -float(b))


def mul(a, b):
    a = as_tensor(a)
    if isinstance(b, Tensor):
        _check_same_shape(a, b, "mul")

        def bwd(g):
            _accum(a, g * b.data)
            _accum(b, g * a.data)

        return _make(a.data * b.data, (a, b), bwd, "mul")
    c = a.data.dtype.type(b)

    def bwd(g):
        _accum(a, g * c)

    return _make(a.data * c, (a,), bwd, "mul_scalar")


def absolute(a):
    a = as_tensor(a)
    sign = np.sign(a.data)

    def bwd(g):
        _accum(a, g * sign)

    return _make(np.abs(a.data), (a,), bwd, "abs")


def tensor_sum(a):
    a = as_tensor(a)

    def bwd(g):
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(a.data.sum(), (a,), bwd, "sum")


def tensor_mean(a):
    a = as_tensor(a)
    n = a.data.size

    def bwd(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape))

    return _make(a.data.mean(), (a,), bwd, "mean")


# -- shape ops -------------------------------------------------------------


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape

    def bwd(g):
        _accum(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), bwd, "reshape")


def transpose(a, axes):
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bwd, "transpose")


def getitem(a, idx):
    """Basic (slice/int) indexing with gradient scatter into the source."""
    a = as_tensor(a)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full)

    return _make(a.data[idx], (a,), bwd, "getitem")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of empty list")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(lo, hi)
            _accum(t, g[tuple(sl)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tensors, bwd, "concat")


def stack(tensors, axis=0):
    expanded = []
    for t in tensors:
        t = as_tensor(t)
        shape = list(t.data.shape)
        shape.insert(axis, 1)
        expanded.append(reshape(t, tuple(shape)))
    return concat(expanded, axis=axis)


# -- activations ------------------------------------------------------------


def elu(a):
    """Exponential linear unit, alpha = 1. Derivative at 0 is taken as 1."""
    a = as_tensor(a)
    neg = a.data < 0
    out = np.where(neg, np.expm1(a.data), a.data)

    def bwd(g):
        _accum(a, g * np.where(neg, out + 1.0, 1.0))

    return _make(out.astype(a.data.dtype, copy=False), (a,), bwd, "elu")


def scaled_tanh(a, scale):
    """scale * tanh(x); output strictly inside (-scale, scale)."""
    scale = float(scale)
    if scale <= 0:
        raise ValueError(f"scaled_tanh scale must be positive, got {scale}")
    a = as_tensor(a)
    t = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (scale * (1.0 - t * t)))

    return _make((scale * t).astype(a.data.dtype, copy=False), (a,), bwd, "scaled_tanh")


def tanh(a):
    return scaled_tanh(a, 1.0)


# -- losses ------------------------------------------------------------------


def l1_loss(a, b):
    """Mean absolute difference over all elements (subgradient 0 at ties)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same_shape(a, b, "l1_loss")
    return absolute(sub(a, b)).mean()


# -- convolution --------------------------------------------------------------


def _conv_check(x, w, b, dims, dilation):
    kshape = w.data.shape[2:]
    if len(kshape) != dims or any(k not in (1, 3) for k in kshape) or len(set(kshape)) != 1:
        raise ValueError(f"conv{dims}d: kernel must be {'x'.join(['1'] * dims)} or {'x'.join(['3'] * dims)}, got {kshape}")
    if int(dilation) < 1:
        raise ValueError(f"conv{dims}d: dilation must be >= 1, got {dilation}")
    if x.data.ndim != dims + 1:
        raise ValueError(f"conv{dims}d: input must have {dims + 1} axes [C_in, spatial...], got {x.data.shape}")
    if w.data.shape[1] != x.data.shape[0]:
        raise ValueError(f"conv{dims}d: weights expect {w.data.shape[1]} input channels, input has {x.data.shape[0]}")
    if b.data.shape != (w.data.shape[0],):
        raise ValueError(f"conv{dims}d: bias shape {b.data.shape} does not match {w.data.shape[0]} output channels")


def _offsets2(k):
    return [(a, c) for a in range(k) for c in range(k)]


def _im2col2d(xd, k, dilation):
    """Stack the k*k dilated planar shifts of a zero-padded input.

    Works for [C, H, W] and batched [C, S, H, W] inputs (the leading spatial
    axes before the last two are untouched). Returns [C*k*k, prod(rest)],
    row-major over (channel, offset).
    """
    lead = xd.shape[:-2]
    h, w = xd.shape[-2:]
    pad = dilation * (k - 1) // 2
    xp = np.pad(xd, ((0, 0),) * len(lead) + ((pad, pad), (pad, pad)))
    cols = np.empty((lead[0], k * k) + lead[1:] + (h, w), dtype=xd.dtype)
    for i, (a, c) in enumerate(_offsets2(k)):
        cols[:, i] = xp[..., a * dilation:a * dilation + h, c * dilation:c * dilation + w]
    return cols.reshape(lead[0] * k * k, -1)


def _col2im2d(gcols, shape, k, dilation, dtype):
    """Scatter-add column gradients back to input positions (adjoint of _im2col2d)."""
    lead = shape[:-2]
    h, w = shape[-2:]
    pad = dilation * (k - 1) // 2
    gxp = np.zeros(lead + (h + 2 * pad, w + 2 * pad), dtype=dtype)
    gc = gcols.reshape((lead[0], k * k) + lead[1:] + (h, w))
    for i, (a, c) in enumerate(_offsets2(k)):
        gxp[..., a * dilation:a * dilation + h, c * dilation:c * dilation + w] += gc[:, i]
    if pad == 0:
        return gxp
    return gxp[..., pad:pad + h, pad:pad + w]


def conv2d(x, w, b, dilation=1):
    """Dilated same-padded 2D convolution.

    x: [C_in, H, W]; w: [C_out, C_in, k, k] with k in {1, 3}; b: [C_out].
    Output [C_out, H, W]; zero padding outside bounds.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _conv_check(x, w, b, 2, dilation)
    dilation = int(dilation)
    k = w.data.shape[2]
    cout = w.data.shape[0]
    spatial = x.data.shape[1:]
    wmat = w.data.reshape(cout, -1)
    cols = _im2col2d(x.data, k, dilation)
    out = (wmat @ cols).reshape((cout,) + spatial)
    out += b.data.reshape(cout, 1, 1)

    def bwd(g):
        gmat = g.reshape(cout, -1)
        _accum(b, g.sum(axis=(1, 2)))
        if w.requires_grad:
            _accum(w, (gmat @ cols.T).reshape(w.data.shape))
        if x.requires_grad:
            gcols = wmat.T @ gmat
            _accum(x, _col2im2d(gcols, x.data.shape, k, dilation, x.data.dtype))

    return _make(out, (x, w, b), bwd, "conv2d")


def conv3d(x, w, b):
    """Same-padded 3D convolution over [C_in, S, H, W], dilation fixed to 1.

    Implemented as a planar column matrix plus three stack-shifted GEMMs on
    contiguous views, one per kernel slice along the S axis.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    _conv_check(x, w, b, 3, 1)
    k = w.data.shape[2]
    cout, cin = w.data.shape[:2]
    _, s, h, wd = x.data.shape
    hw = h * wd
    cols = _im2col2d(x.data, k, 1)  # [C*k*k, S*H*W]
    wmats = [w.data[:, :, ds].reshape(cout, cin * k * k) for ds in range(k)]
    out = np.zeros((cout, s * hw), dtype=x.data.dtype)
    shifts = [0] if k == 1 else [-1, 0, 1]
    for ds, shift in enumerate(shifts):
        if shift == 0:
            out += wmats[ds] @ cols
        elif s > 1 and shift < 0:  # kernel slice reads the previous stack slab
            out[:, hw:] += wmats[ds] @ cols[:, :-hw]
        elif s > 1:
            out[:, :-hw] += wmats[ds] @ cols[:, hw:]
    out = out.reshape(cout, s, h, wd) + b.data.reshape(cout, 1, 1, 1)

    def bwd(g):
        gmat = g.reshape(cout, -1)
        _accum(b, g.sum(axis=(1, 2, 3)))
        if w.requires_grad:
            gw = np.zeros_like(w.data)
            for ds, shift in enumerate(shifts):
                if shift == 0:
                    gw_ds = gmat @ cols.T
                elif s > 1 and shift < 0:
                    gw_ds = gmat[:, hw:] @ cols[:, :-hw].T
                elif s > 1:
                    gw_ds = gmat[:, :-hw] @ cols[:, hw:].T
                else:
                    continue
                gw[:, :, ds] = gw_ds.reshape(cout, cin, k, k)
            _accum(w, gw)
        if x.requires_grad:
            gcols = np.zeros_like(cols)
            for ds, shift in enumerate(shifts):
                if shift == 0:
                    gcols += wmats[ds].T @ gmat
                elif s > 1 and shift < 0:
                    gcols[:, :-hw] += wmats[ds].T @ gmat[:, hw:]
                elif s > 1:
                    gcols[:, hw:] += wmats[ds].T @ gmat[:, :-hw]
            _accum(x, _col2im2d(gcols, x.data.shape, k, 1, x.data.dtype))

    return _make(out, (x, w, b), bwd, "conv3d")


# -- batch normalization -------------------------------------------------------


class BatchNormState:
    """Per-channel running mean/variance, EMA-updated in train mode."""

    def __init__(self, channels, dtype=np.float32):
        dtype = resolve_dtype(dtype)
        self.mean = np.zeros(channels, dtype=dtype)
        self.var = np.ones(channels, dtype=dtype)
        self.count = 0

    @property
    def initialized(self):
        return self.count > 0


def batch_norm(x, gamma, beta, state, mode, epsilon=1e-5, momentum=0.9):
    """Normalize per channel (axis 0) over all remaining axes.

    Train mode uses the statistics of ``x`` and updates ``state`` as
    new = momentum * old + (1 - momentum) * batch. Infer mode uses the
    running statistics and requires them to be initialized.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if epsilon <= 0:
        raise ValueError(f"batch_norm epsilon must be positive, got {epsilon}")
    if mode not in ("train", "infer"):
        raise ValueError(f"batch_norm mode must be 'train' or 'infer', got {mode!r}")
    if x.data.ndim < 2:
        raise ValueError(f"batch_norm: input needs a channel axis plus spatial axes, got {x.data.shape}")
    c = x.data.shape[0]
    if gamma.data.shape != (c,) or beta.data.shape != (c,):
        raise ValueError(f"batch_norm: gamma/beta must have shape ({c},)")
    axes = tuple(range(1, x.data.ndim))
    bshape = (c,) + (1,) * (x.data.ndim - 1)
    dtype = x.data.dtype

    if mode == "infer":
        if not state.initialized:
            raise ValueError("batch_norm: infer mode with uninitialized running statistics")
        inv = (1.0 / np.sqrt(state.var.astype(dtype) + dtype.type(epsilon))).reshape(bshape)
        xhat = (x.data - state.mean.astype(dtype).reshape(bshape)) * inv
        out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

        def bwd_infer(g):
            _accum(x, g * gamma.data.reshape(bshape) * inv)
            _accum(gamma, (g * xhat).sum(axis=axes))
            _accum(beta, g.sum(axis=axes))

        return _make(out, (x, gamma, beta), bwd_infer, "batch_norm")

    n = int(np.prod(x.data.shape[1:]))
    mu = x.data.mean(axis=axes)
    var = x.data.var(axis=axes)
    inv = (1.0 / np.sqrt(var + dtype.type(epsilon))).reshape(bshape)
    xc = x.data - mu.reshape(bshape)
    xhat = xc * inv
    out = gamma.data.reshape(bshape) * xhat + beta.data.reshape(bshape)

    state.mean = (momentum * state.mean + (1.0 - momentum) * mu).astype(state.mean.dtype)
    state.var = (momentum * state.var + (1.0 - momentum) * var).astype(state.var.dtype)
    state.count += 1

    def bwd_train(g):
        gxhat = g * gamma.data.reshape(bshape)
        _accum(gamma, (g * xhat).sum(axis=axes))
        _accum(beta, g.sum(axis=axes))
        if x.requires_grad:
            # standard batch-norm input gradient with batch statistics
            s1 = gxhat.sum(axis=axes).reshape(bshape)
            s2 = (gxhat * xhat).sum(axis=axes).reshape(bshape)
            _accum(x, inv / n * (n * gxhat - s1 - xhat * s2))

    return _make(out, (x, gamma, beta), bwd_train, "batch_norm")


# -- bilinear grid sampling -----------------------------------------------------


def grid_sample_bilinear(image, coords):
    """Sample ``image`` [C, H, W] at continuous (y, x) positions [2, H', W'].

    Bilinear blend of the four surrounding pixels; positions outside the image
    clamp to the border. Differentiable w.r.t. both the image and the
    coordinates (the coordinate gradient is the local image gradient).
    """
    image, coords = as_tensor(image), as_tensor(coords)
    if image.data.ndim != 3:
        raise ValueError(f"grid_sample: image must be [C, H, W], got {image.data.shape}")
    if coords.data.ndim != 3 or coords.data.shape[0] != 2:
        raise ValueError(f"grid_sample: coords must be [2, H', W'], got {coords.data.shape}")
    if not np.isfinite(coords.data).all():
        raise ValueError("grid_sample: coords contain NaN/Inf")
    c, h, w = image.data.shape
    dtype = image.data.dtype
    cy = np.clip(coords.data[0], 0.0, h - 1.0)
    cx = np.clip(coords.data[1], 0.0, w - 1.0)
    y0 = np.floor(cy).astype(np.int64)
    x0 = np.floor(cx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (cy - y0).astype(dtype)
    wx = (cx - x0).astype(dtype)
    p00 = image.data[:, y0, x0]
    p01 = image.data[:, y0, x1]
    p10 = image.data[:, y1, x0]
    p11 = image.data[:, y1, x1]
    w00 = (1.0 - wy) * (1.0 - wx)
    w01 = (1.0 - wy) * wx
    w10 = wy * (1.0 - wx)
    w11 = wy * wx
    out = w00 * p00 + w01 * p01 + w10 * p10 + w11 * p11

    def bwd(g):
        if image.requires_grad:
            gimg = np.zeros((c, h * w), dtype=dtype)
            for yc, xc, wt in ((y0, x0, w00), (y0, x1, w01), (y1, x0, w10), (y1, x1, w11)):
                flat = (yc * w + xc).ravel()
                contrib = g * wt
                for ch in range(c):
                    gimg[ch] += np.bincount(flat, weights=contrib[ch].ravel(), minlength=h * w).astype(dtype)
            _accum(image, gimg.reshape(c, h, w))
        if coords.requires_grad:
            dy = ((1.0 - wx) * (p10 - p00) + wx * (p11 - p01)) * g
            dx = ((1.0 - wy) * (p01 - p00) + wy * (p11 - p10)) * g
            gy = dy.sum(axis=0) * ((coords.data[0] > 0) & (coords.data[0] < h - 1))
            gx = dx.sum(axis=0) * ((coords.data[1] > 0) & (coords.data[1] < w - 1))
            _accum(coords, np.stack([gy, gx]).astype(dtype))

    return _make(out, (image, coords), bwd, "grid_sample")


def grid_sample_bilinear_views(images, coords):
    """Batched grid sampling: position grid n samples image n.

    images: [N, C, H, W]; coords: [N, 2, H', W'] continuous (y, x).
    Returns [N, C, H', W']. Semantics per position are identical to
    ``grid_sample_bilinear`` (border clamp, bilinear, both gradients).
    """
    images, coords = as_tensor(images), as_tensor(coords)
    if images.data.ndim != 4:
        raise ValueError(f"grid_sample_views: images must be [N, C, H, W], got {images.data.shape}")
    if coords.data.ndim != 4 or coords.data.shape[1] != 2 or coords.data.shape[0] != images.data.shape[0]:
        raise ValueError(
            f"grid_sample_views: coords must be [N, 2, H', W'] with N={images.data.shape[0]}, got {coords.data.shape}"
        )
    if not np.isfinite(coords.data).all():
        raise ValueError("grid_sample_views: coords contain NaN/Inf")
    n, c, h, w = images.data.shape
    hp, wp = coords.data.shape[2:]
    dtype = images.data.dtype
    cy = np.clip(coords.data[:, 0], 0.0, h - 1.0)
    cx = np.clip(coords.data[:, 1], 0.0, w - 1.0)
    y0 = np.floor(cy).astype(np.int64)
    x0 = np.floor(cx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (cy - y0).astype(dtype)
    wx = (cx - x0).astype(dtype)
    base = (np.arange(n, dtype=np.int64) * (h * w))[:, None, None]
    flat = images.data.transpose(1, 0, 2, 3).reshape(c, n * h * w)
    corners = []
    for yc, xc, wt in (
        (y0, x0, (1.0 - wy) * (1.0 - wx)),
        (y0, x1, (1.0 - wy) * wx),
        (y1, x0, wy * (1.0 - wx)),
        (y1, x1, wy * wx),
    ):
        corners.append((base + yc * w + xc, flat[:, base + yc * w + xc], wt))
    out = corners[0][2] * corners[0][1]
    for idx, vals, wt in corners[1:]:
        out = out + wt * vals
    out = out.transpose(1, 0, 2, 3)  # [N,C,H',W']

    def bwd(g):
        gt = g.transpose(1, 0, 2, 3)  # [C,N,H',W']
        if images.requires_grad:
            gimg = np.zeros((c, n * h * w), dtype=dtype)
            for idx, _vals, wt in corners:
                contrib = gt * wt
                iflat = idx.ravel()
                for ch in range(c):
                    gimg[ch] += np.bincount(iflat, weights=contrib[ch].ravel(), minlength=n * h * w).astype(dtype)
            _accum(images, gimg.reshape(c, n, h, w).transpose(1, 0, 2, 3))
        if coords.requires_grad:
            p00, p01, p10, p11 = (cv[1] for cv in corners)
            dy = ((1.0 - wx) * (p10 - p00) + wx * (p11 - p01)) * gt
            dx = ((1.0 - wy) * (p01 - p00) + wy * (p11 - p10)) * gt
            gy = dy.sum(axis=0) * ((coords.data[:, 0] > 0) & (coords.data[:, 0] < h - 1))
            gx = dx.sum(axis=0) * ((coords.data[:, 1] > 0) & (coords.data[:, 1] < w - 1))
            _accum(coords, np.stack([gy, gx], axis=1).astype(dtype))

    return _make(out, (images, coords), bwd, "grid_sample_views")


# -- optimizer ---------------------------------------------------------------


class Adam:
    """Bias-corrected Adam over a fixed parameter list.

    Parameters with grad=None are treated as zero-gradient (left in place on
    the first steps, decayed moments afterwards exactly as g = 0 would).
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * (g * g)
            mhat = self.m[i] / c1
            vhat = self.v[i] / c2
            p.data = p.data - (self.lr * mhat / (np.sqrt(vhat) + self.epsilon)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params:
            p.grad = None
