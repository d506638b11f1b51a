"""Dense-tensor numerics with reverse-mode differentiation.

Values are numpy arrays in single precision by default; gradient checking
runs the same code in double precision by building float64 tensors. The
computation graph is implicit: every operation records its parent tensors
and a backward closure on the output, and ``Tensor.backward`` replays the
tape in reverse topological order. Parameters are leaf tensors created
with ``requires_grad=True``; their ``.grad`` accumulates until cleared.

Non-finite values are an error state, never silent: every operation
checks its output, and the backward walk checks every node gradient and
names the offending operation.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in output of op '{op}'")


class Tensor:
    """A dense array on the autodiff tape.

    Tensors are immutable values once produced; training code mutates
    parameter ``.data`` in place only through the optimizer.
    """

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, dtype={self.data.dtype})"

    # Convenience operators; the functional forms below are the real API.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def backward(self) -> None:
        """Reverse-mode pass from a scalar loss.

        Accumulates into ``.grad`` of every reachable tensor that requires
        gradients. Raises NonFiniteError naming the node if any gradient
        contains NaN/Inf.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward requires a scalar, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is None:
                continue
            g = node.grad
            if g is None:
                continue
            node._backward(g)
            for p in node._parents:
                if p.grad is not None and not np.isfinite(p.grad).all():
                    raise NonFiniteError(f"non-finite gradient produced by op '{node.op}'")
            if not node.requires_grad:
                node.grad = None  # free intermediate gradients


def _toposort(root: Tensor) -> list:
    # Iterative DFS postorder; recursion would overflow on long LSTM tapes.
    order: list = []
    visited: set = set()
    stack = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited:
                stack.append((p, False))
    return order


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _from_op(data: np.ndarray, parents: tuple, backward, op: str) -> Tensor:
    _check_finite(data, op)
    out = Tensor(data)
    out.op = op
    if any(p.requires_grad or p._backward is not None for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward
    return out


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not (t.requires_grad or t._backward is not None):
        return
    if g.dtype != t.data.dtype:
        g = g.astype(t.data.dtype)
    if t.grad is None:
        # Copy views so later in-place accumulation cannot alias another grad.
        t.grad = g if g.flags["OWNDATA"] else g.copy()
    else:
        t.grad = t.grad + g


def _sum_to(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Undo numpy broadcasting: reduce g back to `shape`."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (gs, ss) in enumerate(zip(g.shape, shape)) if ss == 1 and gs != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# elementwise and linear algebra
# ---------------------------------------------------------------------------


def _pair(a, b):
    a_t = isinstance(a, Tensor)
    b_t = isinstance(b, Tensor)
    if a_t and not b_t:
        b = Tensor(b, dtype=a.data.dtype)
    elif b_t and not a_t:
        a = Tensor(a, dtype=b.data.dtype)
    elif not a_t and not b_t:
        a, b = Tensor(a), Tensor(b)
    return a, b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data + b.data

    def backward(g):
        _accumulate(a, _sum_to(g, a.shape))
        _accumulate(b, _sum_to(g, b.shape))

    return _from_op(data, (a, b), backward, "add")


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data - b.data

    def backward(g):
        _accumulate(a, _sum_to(g, a.shape))
        _accumulate(b, _sum_to(-g, b.shape))

    return _from_op(data, (a, b), backward, "sub")


def neg(a) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, -g)

    return _from_op(-a.data, (a,), backward, "neg")


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data * b.data

    def backward(g):
        _accumulate(a, _sum_to(g * b.data, a.shape))
        _accumulate(b, _sum_to(g * a.data, b.shape))

    return _from_op(data, (a, b), backward, "mul")


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    data = a.data / b.data

    def backward(g):
        _accumulate(a, _sum_to(g / b.data, a.shape))
        _accumulate(b, _sum_to(-g * a.data / (b.data * b.data), b.shape))

    return _from_op(data, (a, b), backward, "div")


def scale(a: Tensor, s: float) -> Tensor:
    a = as_tensor(a)
    s = float(s)

    def backward(g):
        _accumulate(a, g * s)

    return _from_op(a.data * s, (a,), backward, "scale")


def matmul(a, b) -> Tensor:
    """a @ b where b is 2-D and a's last axis matches b's first.

    Leading axes of `a` are treated as batch; this is the only broadcast
    the engine supports for matrix products.
    """
    a, b = _pair(a, b)
    if b.ndim != 2:
        raise ShapeError(f"matmul right operand must be 2-D, got {b.shape}")
    if a.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    k, n = b.shape
    a2 = a.data.reshape(-1, k)
    out = a2 @ b.data
    out_shape = a.shape[:-1] + (n,)

    def backward(g):
        g2 = g.reshape(-1, n)
        _accumulate(a, (g2 @ b.data.T).reshape(a.shape))
        _accumulate(b, a2.T @ g2)

    return _from_op(out.reshape(out_shape), (a, b), backward, "matmul")


# ---------------------------------------------------------------------------
# shape movement
# ---------------------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)

    def backward(g):
        _accumulate(a, g.reshape(a.shape))

    return _from_op(a.data.reshape(shape), (a,), backward, "reshape")


def permute(a: Tensor, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        _accumulate(a, g.transpose(inv))

    return _from_op(np.ascontiguousarray(a.data.transpose(axes)), (a,), backward, "permute")


def narrow(a: Tensor, axis: int, start: int, size: int) -> Tensor:
    """Contiguous slice of width `size` along `axis`."""
    a = as_tensor(a)
    if not (0 <= start and start + size <= a.shape[axis]):
        raise ShapeError(f"narrow [{start}:{start + size}) out of range for axis {axis} of {a.shape}")
    index = tuple(slice(None) if d != axis else slice(start, start + size) for d in range(a.ndim))

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        _accumulate(a, full)

    return _from_op(np.ascontiguousarray(a.data[index]), (a,), backward, "narrow")


def concat(parts, axis: int) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            index = tuple(slice(None) if d != axis else slice(lo, hi) for d in range(g.ndim))
            _accumulate(p, g[index])

    return _from_op(data, tuple(parts), backward, "concat")


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------


def relu6(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.minimum(np.maximum(a.data, 0), 6)

    def backward(g):
        # Subgradient 0 exactly at the kinks.
        mask = (a.data > 0) & (a.data < 6)
        _accumulate(a, g * mask.astype(g.dtype))

    return _from_op(data, (a,), backward, "relu6")


def sigmoid(a: Tensor) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accumulate(a, g * data * (1.0 - data))

    return _from_op(data, (a,), backward, "sigmoid")


def tanh(a: Tensor) -> Tensor:
    a = as_tensor(a)
    data = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - data * data))

    return _from_op(data, (a,), backward, "tanh")


def identity(a: Tensor) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        _accumulate(a, g)

    return _from_op(a.data, (a,), backward, "linear")


ACTIVATIONS = {
    "relu6": relu6,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "linear": identity,
}


def activate(a: Tensor, name: str) -> Tensor:
    try:
        return ACTIVATIONS[name](a)
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; expected one of {sorted(ACTIVATIONS)}") from None


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is None:
            _accumulate(a, np.broadcast_to(g, a.shape).copy())
        else:
            gg = g if keepdims else np.expand_dims(g, axis)
            _accumulate(a, np.broadcast_to(gg, a.shape).copy())

    return _from_op(np.asarray(data), (a,), backward, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    return scale(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reduce_max(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; ties route gradient to the first maximal element."""
    a = as_tensor(a)
    data = a.data.max(axis=axis, keepdims=keepdims)
    arg = a.data.argmax(axis=axis)  # first occurrence wins ties

    def backward(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), gg, axis=axis)
        _accumulate(a, full)

    return _from_op(np.asarray(data), (a,), backward, "max")


# ---------------------------------------------------------------------------
# masked sequence reductions (axis 1 of a (b, t, k) tensor)
# ---------------------------------------------------------------------------


def _seq_mask(mask: np.ndarray, shape: tuple) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != shape[:2]:
        raise ShapeError(f"mask shape {mask.shape} does not match sequence {shape[:2]}")
    if not mask.any(axis=1).all():
        raise ShapeError("each sequence in the batch needs at least one valid frame")
    return mask


def masked_sum_seq(a: Tensor, mask: np.ndarray) -> Tensor:
    """Sum over frame axis 1 counting only frames where mask is true."""
    a = as_tensor(a)
    m = _seq_mask(mask, a.shape)[:, :, None].astype(a.data.dtype)
    data = (a.data * m).sum(axis=1)

    def backward(g):
        _accumulate(a, g[:, None, :] * m)

    return _from_op(data, (a,), backward, "masked_sum_seq")


def masked_mean_seq(a: Tensor, mask: np.ndarray) -> Tensor:
    a = as_tensor(a)
    m = _seq_mask(mask, a.shape)
    counts = m.sum(axis=1).astype(a.data.dtype)[:, None]
    mf = m[:, :, None].astype(a.data.dtype)
    data = (a.data * mf).sum(axis=1) / counts

    def backward(g):
        _accumulate(a, (g / counts)[:, None, :] * mf)

    return _from_op(data, (a,), backward, "masked_mean_seq")


def masked_max_seq(a: Tensor, mask: np.ndarray) -> Tensor:
    """Per-column max over valid frames; first maximal frame takes the gradient."""
    a = as_tensor(a)
    m = _seq_mask(mask, a.shape)
    neg = np.finfo(a.data.dtype).min
    filled = np.where(m[:, :, None], a.data, neg)
    data = filled.max(axis=1)
    arg = filled.argmax(axis=1)

    def backward(g):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, arg[:, None, :], g[:, None, :], axis=1)
        _accumulate(a, full)

    return _from_op(data, (a,), backward, "masked_max_seq")


# ---------------------------------------------------------------------------
# softmax and cross-entropy
# ---------------------------------------------------------------------------


def _softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max-subtracted) along `axis`."""
    a = as_tensor(a)
    if a.shape[axis] < 1:
        raise ShapeError("softmax needs at least one logit")
    y = _softmax(a.data, axis)

    def backward(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(a, y * (g - dot))

    return _from_op(y, (a,), backward, "softmax")


def cross_entropy(logits: Tensor, labels, reduction: str = "mean") -> Tensor:
    """-log softmax(logits)[label], averaged or summed over a batch.

    `logits` is (k,) with an integer label, or (b, k) with (b,) labels.
    """
    logits = as_tensor(logits)
    squeeze = logits.ndim == 1
    x = logits.data[None, :] if squeeze else logits.data
    if x.ndim != 2:
        raise ShapeError(f"cross_entropy expects rank 1 or 2 logits, got {logits.shape}")
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    b, k = x.shape
    if y.shape != (b,):
        raise ShapeError(f"labels shape {y.shape} does not match batch {b}")
    if (y < 0).any() or (y >= k).any():
        raise IndexError(f"label out of range [0, {k})")
    if reduction not in ("mean", "sum"):
        raise ValueError(f"unknown reduction {reduction!r}")

    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    losses = lse - x[np.arange(b), y]
    data = losses.mean() if reduction == "mean" else losses.sum()

    def backward(g):
        p = _softmax(x, axis=1)
        p[np.arange(b), y] -= 1.0
        if reduction == "mean":
            p /= b
        p *= g.reshape(())
        _accumulate(logits, p[0] if squeeze else p)

    return _from_op(np.asarray(data, dtype=x.dtype), (logits,), backward, "cross_entropy")


# ---------------------------------------------------------------------------
# convolution and pooling (SAME padding)
# ---------------------------------------------------------------------------


def same_geometry(in_size: int, kernel: int, stride: int) -> tuple[int, int, int]:
    """SAME rule: output extent, pad before, pad after.

    out = ceil(in / stride); total padding splits evenly with the extra
    zero at the bottom/right.
    """
    out = -(-in_size // stride)
    total = max((out - 1) * stride + kernel - in_size, 0)
    lo = total // 2
    return out, lo, total - lo


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    # (b, Ho, Wo, C, kh, kw) view over a pre-padded (b, H, W, C) array
    v = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    return v[:, ::sh, ::sw]


def _promote_image(a: Tensor) -> tuple[np.ndarray, bool]:
    if a.ndim == 3:
        return a.data[None], True
    if a.ndim == 4:
        return a.data, False
    raise ShapeError(f"expected (h, w, c) or (b, h, w, c), got {a.shape}")


def conv2d(x: Tensor, filters: Tensor, stride: tuple[int, int] = (1, 1)) -> Tensor:
    """2-D convolution with SAME padding.

    `x` is (h, w, c_in) or (b, h, w, c_in); `filters` is (kh, kw, c_in, c_out).
    Output extents follow out = ceil(in / stride).
    """
    x = as_tensor(x)
    filters = as_tensor(filters)
    if filters.ndim != 4:
        raise ShapeError(f"filters must be (kh, kw, c_in, c_out), got {filters.shape}")
    xd, squeeze = _promote_image(x)
    b, h, w, cin = xd.shape
    kh, kw, f_cin, cout = filters.shape
    if f_cin != cin:
        raise ShapeError(f"channel mismatch: input {x.shape} vs filters {filters.shape}")
    sh, sw = stride
    if sh < 1 or sw < 1:
        raise ShapeError(f"strides must be >= 1, got {stride}")

    ho, plo_h, phi_h = same_geometry(h, kh, sh)
    wo, plo_w, phi_w = same_geometry(w, kw, sw)
    xp = np.pad(xd, ((0, 0), (plo_h, phi_h), (plo_w, phi_w), (0, 0)))
    cols = _windows(xp, kh, kw, sh, sw).transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, kh * kw * cin)
    wmat = filters.data.reshape(kh * kw * cin, cout)
    out = (cols @ wmat).reshape(b, ho, wo, cout)

    def backward(g):
        g4 = g.reshape(b, ho, wo, cout)
        gmat = g4.reshape(b * ho * wo, cout)
        _accumulate(filters, (cols.T @ gmat).reshape(filters.shape))
        dcols = (gmat @ wmat.T).reshape(b, ho, wo, kh, kw, cin)
        dxp = np.zeros_like(xp)
        for ik in range(kh):
            for jk in range(kw):
                dxp[:, ik:ik + sh * ho:sh, jk:jk + sw * wo:sw, :] += dcols[:, :, :, ik, jk, :]
        dx = dxp[:, plo_h:plo_h + h, plo_w:plo_w + w, :]
        _accumulate(x, dx[0] if squeeze else dx)

    return _from_op(out[0] if squeeze else out, (x, filters), backward, "conv2d")


def max_pool2d(x: Tensor, window: tuple[int, int], stride: tuple[int, int]) -> Tensor:
    """Max pooling with SAME semantics; padding never wins.

    Gradient routes to the first maximal element in row-major window scan
    order.
    """
    x = as_tensor(x)
    xd, squeeze = _promote_image(x)
    b, h, w, c = xd.shape
    kh, kw = window
    sh, sw = stride
    if min(kh, kw, sh, sw) < 1:
        raise ShapeError(f"window and stride must be >= 1, got {window}, {stride}")
    ho, plo_h, phi_h = same_geometry(h, kh, sh)
    wo, plo_w, phi_w = same_geometry(w, kw, sw)
    neg = np.finfo(xd.dtype).min
    xp = np.pad(xd, ((0, 0), (plo_h, phi_h), (plo_w, phi_w), (0, 0)), constant_values=neg)
    v = _windows(xp, kh, kw, sh, sw).reshape(b, ho, wo, c, kh * kw)
    out = v.max(axis=4)
    arg = v.argmax(axis=4)

    def backward(g):
        g4 = g.reshape(b, ho, wo, c)
        dxp = np.zeros((b, xp.shape[1], xp.shape[2], c), dtype=xd.dtype)
        for k in range(kh * kw):
            ik, jk = divmod(k, kw)
            sel = (arg == k)
            if not sel.any():
                continue
            dxp[:, ik:ik + sh * ho:sh, jk:jk + sw * wo:sw, :] += g4 * sel
        dx = dxp[:, plo_h:plo_h + h, plo_w:plo_w + w, :]
        _accumulate(x, dx[0] if squeeze else dx)

    return _from_op(out[0] if squeeze else out, (x,), backward, "max_pool2d")


def avg_pool2d(
    x: Tensor,
    window: tuple[int, int],
    stride: tuple[int, int],
    valid_widths=None,
) -> Tensor:
    """Average pooling with SAME semantics, dividing by in-bounds counts only.

    `valid_widths`, when given, narrows the in-bounds region per batch item
    to its first `valid_widths[i]` columns; columns beyond it are assumed
    already zeroed by the caller so only the divisor changes. This keeps
    pooled features of a width-padded batch identical to unbatched runs.
    """
    x = as_tensor(x)
    xd, squeeze = _promote_image(x)
    b, h, w, c = xd.shape
    kh, kw = window
    sh, sw = stride
    if min(kh, kw, sh, sw) < 1:
        raise ShapeError(f"window and stride must be >= 1, got {window}, {stride}")
    ho, plo_h, phi_h = same_geometry(h, kh, sh)
    wo, plo_w, phi_w = same_geometry(w, kw, sw)
    xp = np.pad(xd, ((0, 0), (plo_h, phi_h), (plo_w, phi_w), (0, 0)))
    sums = _windows(xp, kh, kw, sh, sw).sum(axis=(4, 5))

    rows = np.arange(ho) * sh - plo_h
    h_cnt = np.minimum(rows + kh, h) - np.maximum(rows, 0)
    cols = np.arange(wo) * sw - plo_w
    if valid_widths is None:
        extents = np.full(b, w)
    else:
        extents = np.asarray(valid_widths, dtype=np.int64)
        if extents.shape != (b,):
            raise ShapeError(f"valid_widths must have shape ({b},), got {extents.shape}")
    w_cnt = np.minimum(cols[None, :] + kw, extents[:, None]) - np.maximum(cols[None, :], 0)
    w_cnt = np.maximum(w_cnt, 1)  # frames fully beyond an extent are masked downstream
    counts = (h_cnt[None, :, None, None] * w_cnt[:, None, :, None]).astype(xd.dtype)
    out = sums / counts

    def backward(g):
        g4 = (g.reshape(b, ho, wo, c) / counts).astype(xd.dtype)
        dxp = np.zeros_like(xp)
        for ik in range(kh):
            for jk in range(kw):
                dxp[:, ik:ik + sh * ho:sh, jk:jk + sw * wo:sw, :] += g4
        dx = dxp[:, plo_h:plo_h + h, plo_w:plo_w + w, :]
        _accumulate(x, dx[0] if squeeze else dx)

    return _from_op(out[0] if squeeze else out, (x,), backward, "avg_pool2d")


def pool(x: Tensor, kind: str, window: tuple[int, int], stride: tuple[int, int]) -> Tensor:
    if kind == "max":
        return max_pool2d(x, window, stride)
    if kind == "avg":
        return avg_pool2d(x, window, stride)
    raise ValueError(f"unknown pool kind {kind!r}")


# ---------------------------------------------------------------------------
# fully-connected and LSTM layers
# ---------------------------------------------------------------------------


def fully_connected(x: Tensor, weights: Tensor, bias: Tensor, activation: str = "linear") -> Tensor:
    """activation(x @ weights + bias); x may carry leading batch axes."""
    x, weights = as_tensor(x), as_tensor(weights)
    bias = as_tensor(bias)
    if weights.ndim != 2 or bias.shape != (weights.shape[1],):
        raise ShapeError(f"bad fully-connected params: weights {weights.shape}, bias {bias.shape}")
    return activate(add(matmul(x, weights), bias), activation)


def lstm_sequence(
    seq: Tensor,
    w: Tensor,
    u: Tensor,
    b: Tensor,
    reverse: bool = False,
    mask=None,
) -> Tensor:
    """Run an LSTM over a sequence, returning all hidden states.

    `seq` is (t, d) or (batch, t, d); outputs keep the same leading rank
    with hidden size n. Gate packing along the last parameter axis is
    [input, forget, candidate, output]. Initial hidden and cell states are
    zero. With ``reverse=True`` the sequence is consumed from the last
    index to the first and each output is written back at its original
    index, so index 0 holds the final state of the reversed pass.

    `mask` (batch, t) freezes hidden and cell state on padded steps so
    right-padded batches match per-sample runs.
    """
    seq = as_tensor(seq)
    squeeze = seq.ndim == 2
    if squeeze:
        seq = reshape(seq, (1,) + seq.shape)
    if seq.ndim != 3:
        raise ShapeError(f"lstm expects (t, d) or (b, t, d), got {seq.shape}")
    bsz, t_len, d = seq.shape
    if w.ndim != 2 or w.shape[0] != d or w.shape[1] % 4:
        raise ShapeError(f"lstm input weights {w.shape} do not match input dim {d}")
    n = w.shape[1] // 4
    if u.shape != (n, 4 * n) or b.shape != (4 * n,):
        raise ShapeError(f"lstm recurrent params mismatch: u {u.shape}, b {b.shape}, n={n}")
    if mask is not None:
        mask = np.asarray(mask, dtype=seq.data.dtype)
        if mask.shape != (bsz, t_len):
            raise ShapeError(f"mask shape {mask.shape} does not match sequence {(bsz, t_len)}")

    # One big input projection instead of one matmul per step.
    xz = reshape(matmul(reshape(seq, (bsz * t_len, d)), w), (bsz, t_len, 4 * n))
    h = Tensor(np.zeros((bsz, n), dtype=seq.data.dtype))
    c = Tensor(np.zeros((bsz, n), dtype=seq.data.dtype))
    outs: list = [None] * t_len
    steps = range(t_len - 1, -1, -1) if reverse else range(t_len)
    for t in steps:
        z = add(reshape(narrow(xz, 1, t, 1), (bsz, 4 * n)), add(matmul(h, u), b))
        i_g = sigmoid(narrow(z, 1, 0, n))
        f_g = sigmoid(narrow(z, 1, n, n))
        g_g = tanh(narrow(z, 1, 2 * n, n))
        o_g = sigmoid(narrow(z, 1, 3 * n, n))
        c_new = add(mul(f_g, c), mul(i_g, g_g))
        h_new = mul(o_g, tanh(c_new))
        if mask is not None:
            m = Tensor(mask[:, t:t + 1])
            keep = Tensor(1.0 - mask[:, t:t + 1])
            c_new = add(mul(m, c_new), mul(keep, c))
            h_new = add(mul(m, h_new), mul(keep, h))
        outs[t] = reshape(h_new, (bsz, 1, n))
        h, c = h_new, c_new
    out = concat(outs, axis=1)
    return reshape(out, (t_len, n)) if squeeze else out


# ---------------------------------------------------------------------------
# parameter initialization
# ---------------------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, shape, fan_in: int, fan_out: int, dtype=DEFAULT_DTYPE) -> Tensor:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-limit, limit, size=shape).astype(dtype), requires_grad=True)


def zeros_param(shape, dtype=DEFAULT_DTYPE) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def conv_init(rng: np.random.Generator, kh: int, kw: int, cin: int, cout: int, dtype=DEFAULT_DTYPE):
    w = glorot_uniform(rng, (kh, kw, cin, cout), kh * kw * cin, kh * kw * cout, dtype)
    return w, zeros_param((cout,), dtype)


def fc_init(rng: np.random.Generator, n_in: int, n_out: int, dtype=DEFAULT_DTYPE, zero: bool = False):
    if zero:
        return zeros_param((n_in, n_out), dtype), zeros_param((n_out,), dtype)
    return glorot_uniform(rng, (n_in, n_out), n_in, n_out, dtype), zeros_param((n_out,), dtype)


def lstm_init(rng: np.random.Generator, input_dim: int, hidden: int, dtype=DEFAULT_DTYPE):
    w = glorot_uniform(rng, (input_dim, 4 * hidden), input_dim, hidden, dtype)
    u = glorot_uniform(rng, (hidden, 4 * hidden), hidden, hidden, dtype)
    b = np.zeros(4 * hidden, dtype=dtype)
    b[hidden:2 * hidden] = 1.0  # forget-gate bias
    return w, u, Tensor(b, requires_grad=True)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adam:
    """Adam over a named parameter dict; state shapes mirror the parameters."""

    def __init__(self, params: dict, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p.data = p.data - update.astype(p.data.dtype)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None
