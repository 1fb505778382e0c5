"""Dense tensors with reverse-mode differentiation.

The operation set is exactly what the region-ensemble regressor needs:
3x3/1x1 convolution, 2x2 max pooling, ReLU, affine layers, inverted
dropout, feature concatenation, elementwise add, plus the loss and a few
plumbing ops (reshape, spatial slicing, scaling, full-sum).

Working precision is float32; build float64 graphs for gradient checking.
Any NaN/Inf produced in a forward or backward pass raises NumericsError
immediately rather than propagating silently.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "Graph",
    "NumericsError",
    "GraphError",
    "ShapeError",
]

_FLOAT_DTYPES = (np.float32, np.float64)


class NumericsError(ArithmeticError):
    """A forward or backward pass produced a non-finite value."""


class GraphError(RuntimeError):
    """Graph misuse: double backward, non-scalar loss, foreign tensor."""


class ShapeError(ValueError):
    """Operand shapes (or dtypes) are incompatible with the operation."""


class Tensor:
    """N-dimensional float array with an optional gradient slot.

    Image batches use NCHW order; flat features use (N, D). `requires_grad`
    marks leaf tensors (parameters) whose gradient should survive backward.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, name=None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in _FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def zero_grad(self):
        self.grad = None

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else self._not_scalar()

    def _not_scalar(self):
        raise ShapeError(f"tensor of shape {self.shape} is not a scalar")

    def __repr__(self):
        nm = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.data.dtype}{nm})"


class _Node:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


def _check_finite(arr, context):
    if not np.isfinite(arr).all():
        raise NumericsError(f"non-finite values in {context}")


def _require_same_dtype(context, *tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError(f"{context}: mixed dtypes {dt} and {t.data.dtype}")
    return dt


def _im2col(img, kh, kw, stride, pad):
    """Unfold NCHW into a (N*oh*ow, C*kh*kw) patch matrix.

    Writes straight into the GEMM layout so the final reshape is free
    (one strided copy per kernel tap, no second full-buffer copy).
    """
    n, c, h, w = img.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    if pad:
        img = np.pad(img, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, oh, ow, c, kh, kw), img.dtype)
    for y in range(kh):
        for x in range(kw):
            src = img[:, :, y : y + stride * oh : stride, x : x + stride * ow : stride]
            cols[:, :, :, :, y, x] = src.transpose(0, 2, 3, 1)
    return cols.reshape(n * oh * ow, c * kh * kw)


def _col2im(dcol, x_shape, kh, kw, stride, pad):
    """Fold a patch-matrix gradient back onto the input, accumulating overlaps."""
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    dcol6 = dcol.reshape(n, oh, ow, c, kh, kw)
    img = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dcol.dtype)
    for y in range(kh):
        for x in range(kw):
            dst = img[:, :, y : y + stride * oh : stride, x : x + stride * ow : stride]
            dst += dcol6[:, :, :, :, y, x].transpose(0, 3, 1, 2)
    if pad:
        img = img[:, :, pad : pad + h, pad : pad + w]
    return img


class Graph:
    """Records operations on a tape; one backward pass per graph.

    Tensors written by an op are treated as immutable afterwards. A graph
    is owned by a single worker; parameters may be shared read-only across
    concurrent inference graphs.
    """

    def __init__(self, training=False, rng=None):
        self.training = training
        self.rng = rng
        self._tape = []
        self._owned = set()
        self._consumed = False

    # -- plumbing ----------------------------------------------------------

    def _record(self, out_data, inputs, backward, op):
        _check_finite(out_data, f"{op} forward")
        out = Tensor(out_data)
        self._tape.append(_Node(out, inputs, backward))
        self._owned.add(id(out))
        return out

    def backward(self, loss):
        """Populate grads of every reachable requires_grad tensor with d(loss)/d(t)."""
        if self._consumed:
            raise GraphError("backward was already run on this graph")
        if id(loss) not in self._owned:
            raise GraphError("loss tensor was not produced by this graph")
        if loss.data.size != 1:
            raise GraphError(f"loss must be scalar, got shape {tuple(loss.shape)}")
        self._consumed = True
        grads = {id(loss): (loss, np.ones_like(loss.data))}
        for node in reversed(self._tape):
            entry = grads.pop(id(node.out), None)
            if entry is None:
                continue  # output never fed the loss
            dy = entry[1]
            if node.out.requires_grad:
                node.out.grad = dy if node.out.grad is None else node.out.grad + dy
            need = tuple(t.requires_grad or id(t) in self._owned for t in node.inputs)
            for t, dg in node.backward(dy, need):
                _check_finite(dg, "backward")
                prev = grads.get(id(t))
                grads[id(t)] = (t, dg if prev is None else prev[1] + dg)
        for t, g in grads.values():
            if t.requires_grad:
                t.grad = g if t.grad is None else t.grad + g

    # -- layer ops ---------------------------------------------------------

    def conv2d(self, x, w, b, stride=1, pad=0):
        """2-D convolution (cross-correlation), NCHW x (O,C,kh,kw) -> NCHW."""
        if x.data.ndim != 4:
            raise ShapeError(f"conv2d input must be NCHW, got {tuple(x.shape)}")
        if w.data.ndim != 4:
            raise ShapeError(f"conv2d weights must be (O,C,kh,kw), got {tuple(w.shape)}")
        o, c, kh, kw = w.shape
        if kh not in (1, 3) or kw not in (1, 3):
            raise ShapeError(f"kernel extents must be 1 or 3, got {kh}x{kw}")
        if x.shape[1] != c:
            raise ShapeError(f"input has {x.shape[1]} channels, weights expect {c}")
        if b.shape != (o,):
            raise ShapeError(f"bias must have shape ({o},), got {tuple(b.shape)}")
        if pad < 0 or stride < 1:
            raise ShapeError("pad must be >= 0 and stride >= 1")
        _require_same_dtype("conv2d", x, w, b)
        n, _, h, wd = x.shape
        if (h + 2 * pad - kh) % stride or (wd + 2 * pad - kw) % stride:
            raise ShapeError(
                f"non-integral output extent for input {h}x{wd}, kernel {kh}x{kw}, "
                f"stride {stride}, pad {pad}"
            )
        oh = (h + 2 * pad - kh) // stride + 1
        ow = (wd + 2 * pad - kw) // stride + 1
        if oh <= 0 or ow <= 0:
            raise ShapeError("kernel larger than padded input")

        col = _im2col(x.data, kh, kw, stride, pad)
        w_mat = w.data.reshape(o, -1)
        y = col @ w_mat.T + b.data
        y = y.reshape(n, oh, ow, o).transpose(0, 3, 1, 2)

        def bwd(dy, need):
            dy_mat = dy.transpose(0, 2, 3, 1).reshape(-1, o)
            outs = []
            if need[0]:
                dcol = dy_mat @ w_mat
                outs.append((x, _col2im(dcol, x.data.shape, kh, kw, stride, pad)))
            if need[1]:
                outs.append((w, (dy_mat.T @ col).reshape(w.data.shape)))
            if need[2]:
                outs.append((b, dy_mat.sum(axis=0)))
            return outs

        return self._record(y, (x, w, b), bwd, "conv2d")

    def maxpool2(self, x):
        """2x2/stride-2 max pooling; gradient routes to the argmax cell only."""
        if x.data.ndim != 4:
            raise ShapeError(f"maxpool2 input must be NCHW, got {tuple(x.shape)}")
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2 needs even spatial extents, got {h}x{w}")
        win = (
            x.data.reshape(n, c, h // 2, 2, w // 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(n, c, h // 2, w // 2, 4)
        )
        idx = win.argmax(axis=4)  # first max wins ties, deterministically
        y = win.max(axis=4)

        def bwd(dy, need):
            if not need[0]:
                return []
            dwin = np.zeros_like(win)
            np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=4)
            dx = (
                dwin.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w)
            )
            return [(x, dx)]

        return self._record(y, (x,), bwd, "maxpool2")

    def relu(self, x):
        y = np.maximum(x.data, 0)

        def bwd(dy, need):
            if not need[0]:
                return []
            return [(x, dy * (x.data > 0))]

        return self._record(y, (x,), bwd, "relu")

    def linear(self, x, w, b):
        """Row-wise affine map: (N,D) @ (D,K) + (K,)."""
        if x.data.ndim != 2 or w.data.ndim != 2:
            raise ShapeError(
                f"linear expects 2-D operands, got {tuple(x.shape)} and {tuple(w.shape)}"
            )
        if x.shape[1] != w.shape[0]:
            raise ShapeError(f"linear: input width {x.shape[1]} != weight rows {w.shape[0]}")
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias shape {tuple(b.shape)} != ({w.shape[1]},)")
        _require_same_dtype("linear", x, w, b)
        y = x.data @ w.data + b.data

        def bwd(dy, need):
            outs = []
            if need[0]:
                outs.append((x, dy @ w.data.T))
            if need[1]:
                outs.append((w, x.data.T @ dy))
            if need[2]:
                outs.append((b, dy.sum(axis=0)))
            return outs

        return self._record(y, (x, w, b), bwd, "linear")

    def dropout(self, x, rate, rng=None):
        """Inverted dropout: training zeroes with prob `rate` and rescales
        survivors by 1/(1-rate); inference is the identity (bitwise)."""
        if not 0.0 <= rate < 1.0:
            raise ShapeError(f"dropout rate must be in [0, 1), got {rate}")
        if not self.training or rate == 0.0:
            return x
        rng = rng if rng is not None else self.rng
        if rng is None:
            raise GraphError("training-mode dropout needs an rng on the graph or call")
        keep = rng.random(x.data.shape) >= rate
        mask = keep.astype(x.data.dtype) / x.data.dtype.type(1.0 - rate)
        y = x.data * mask

        def bwd(dy, need):
            if not need[0]:
                return []
            return [(x, dy * mask)]

        return self._record(y, (x,), bwd, "dropout")

    def concat(self, xs):
        """Concatenate (N, D_i) features along the feature axis."""
        if not xs:
            raise ShapeError("concat needs at least one input")
        n = xs[0].shape[0]
        for t in xs:
            if t.data.ndim != 2:
                raise ShapeError(f"concat expects 2-D inputs, got {tuple(t.shape)}")
            if t.shape[0] != n:
                raise ShapeError(f"concat batch mismatch: {t.shape[0]} != {n}")
        _require_same_dtype("concat", *xs)
        if len(xs) == 1:
            x = xs[0]

            def bwd1(dy, need):
                return [(x, dy)] if need[0] else []

            return self._record(xs[0].data.copy(), (xs[0],), bwd1, "concat")
        widths = [t.shape[1] for t in xs]
        offsets = np.cumsum([0] + widths)
        y = np.concatenate([t.data for t in xs], axis=1)

        def bwd(dy, need):
            outs = []
            for i, t in enumerate(xs):
                if need[i]:
                    outs.append((t, dy[:, offsets[i] : offsets[i + 1]]))
            return outs

        return self._record(y, tuple(xs), bwd, "concat")

    def add(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"add shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")
        _require_same_dtype("add", a, b)
        y = a.data + b.data

        def bwd(dy, need):
            outs = []
            if need[0]:
                outs.append((a, dy))
            if need[1]:
                outs.append((b, dy))
            return outs

        return self._record(y, (a, b), bwd, "add")

    def scale(self, x, factor):
        f = x.data.dtype.type(factor)
        y = x.data * f

        def bwd(dy, need):
            return [(x, dy * f)] if need[0] else []

        return self._record(y, (x,), bwd, "scale")

    def reshape(self, x, shape):
        y = x.data.reshape(shape)

        def bwd(dy, need):
            return [(x, dy.reshape(x.data.shape))] if need[0] else []

        return self._record(y, (x,), bwd, "reshape")

    def flatten(self, x):
        return self.reshape(x, (x.shape[0], -1))

    def slice_spatial(self, x, r0, r1, c0, c1):
        """Extract rows [r0:r1), cols [c0:c1) of an NCHW tensor."""
        if x.data.ndim != 4:
            raise ShapeError(f"slice_spatial input must be NCHW, got {tuple(x.shape)}")
        h, w = x.shape[2], x.shape[3]
        if not (0 <= r0 < r1 <= h and 0 <= c0 < c1 <= w):
            raise ShapeError(f"slice [{r0}:{r1}, {c0}:{c1}] outside {h}x{w}")
        y = x.data[:, :, r0:r1, c0:c1].copy()

        def bwd(dy, need):
            if not need[0]:
                return []
            dx = np.zeros_like(x.data)
            dx[:, :, r0:r1, c0:c1] = dy
            return [(x, dx)]

        return self._record(y, (x,), bwd, "slice_spatial")

    def sum(self, x):
        """Sum over all elements -> scalar."""
        y = np.asarray(x.data.sum(), dtype=x.data.dtype)

        def bwd(dy, need):
            if not need[0]:
                return []
            return [(x, np.full_like(x.data, dy))]

        return self._record(y, (x,), bwd, "sum")

    def mse_loss(self, pred, target):
        """Mean over all N*K entries of the squared difference; scalar."""
        if pred.shape != target.shape:
            raise ShapeError(
                f"mse_loss shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}"
            )
        _require_same_dtype("mse_loss", pred, target)
        diff = pred.data - target.data
        y = np.asarray(np.mean(diff * diff), dtype=pred.data.dtype)

        def bwd(dy, need):
            g = dy * diff * pred.data.dtype.type(2.0 / diff.size)
            outs = []
            if need[0]:
                outs.append((pred, g))
            if need[1]:
                outs.append((target, -g))
            return outs

        return self._record(y, (pred, target), bwd, "mse_loss")
