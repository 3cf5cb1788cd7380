"""Minimal reverse-mode tensor engine.

A deliberately closed set of primitives sized to two small matching
networks: an interaction-matrix CNN and a pair of BiLSTM encoders.  All
math runs in float64.  Every primitive records one entry on a global
linear tape when any input requires gradients; ``backward`` walks the tape
once in reverse.  Forward values are bit-deterministic for fixed inputs
(fixed summation order, no threading).

Non-finite values are rejected at tensor construction and at every
primitive output, so NaN/Inf cannot propagate silently.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager

import numpy as np

from .errors import NonFiniteError, OptimizerError, ShapeMismatchError, TapeError

logger = logging.getLogger(__name__)


def _check_finite(arr, where):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"non-finite values in {where}")


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        _check_finite(arr, "tensor constructor")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def accumulate_grad(self, g):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def zeros(shape, requires_grad=False):
    return Tensor(np.zeros(shape), requires_grad=requires_grad)


class TapeRecord:
    __slots__ = ("op", "inputs", "outputs", "backward_fn")

    def __init__(self, op, inputs, outputs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward_fn = backward_fn


class Tape:
    """Linear record of executed primitives, in execution order.

    Execution order is a valid topological order, so one reverse sweep
    visits each record exactly once with all downstream gradients already
    accumulated.
    """

    def __init__(self):
        self.records = []
        self.consumed = False

    def reset(self):
        self.records.clear()
        self.consumed = False

    def __len__(self):
        return len(self.records)


_TAPE = Tape()
_GRAD_ENABLED = True


def tape():
    return _TAPE


@contextmanager
def no_grad():
    """Disable tape recording; outputs inside never require gradients."""
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


def _record(op, inputs, outputs, backward_fn):
    tensor_inputs = [t for t in inputs if isinstance(t, Tensor)]
    if _GRAD_ENABLED and any(t.requires_grad for t in tensor_inputs):
        for out in outputs:
            out.requires_grad = True
        _TAPE.records.append(TapeRecord(op, tuple(inputs), tuple(outputs), backward_fn))


def _result(op, data):
    _check_finite(data, f"output of {op}")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    return out


def backward(loss):
    """Populate gradients of everything reachable from a scalar loss."""
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        raise TapeError("backward requires a scalar (0-d) loss tensor")
    if not _TAPE.records:
        raise TapeError("backward on an empty tape")
    if _TAPE.consumed:
        raise TapeError("backward called twice without resetting the tape")
    if not loss.requires_grad:
        raise TapeError("loss is not connected to the tape")
    _TAPE.consumed = True
    loss.grad = np.ones_like(loss.data)
    for record in reversed(_TAPE.records):
        if all(out.grad is None for out in record.outputs):
            continue
        out_grads = tuple(
            out.grad if out.grad is not None else np.zeros_like(out.data)
            for out in record.outputs
        )
        in_grads = record.backward_fn(*out_grads)
        for tensor, grad in zip(record.inputs, in_grads):
            if grad is None or not isinstance(tensor, Tensor):
                continue
            if tensor.requires_grad:
                tensor.accumulate_grad(grad)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _reduce_broadcast(grad, shape):
    """Sum a broadcast gradient back down to the original shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (s, g) in enumerate(zip(shape, grad.shape)) if s == 1 and g > 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    """Elementwise sum with numpy broadcasting over trailing dims."""
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatchError("add", f"cannot broadcast {a.shape} with {b.shape}")
    out = _result("add", data)

    def backward_fn(g):
        return _reduce_broadcast(g, a.data.shape), _reduce_broadcast(g, b.data.shape)

    _record("add", (a, b), (out,), backward_fn)
    return out


def matmul(a, b):
    """Matrix/vector product for 1-D and 2-D operands."""
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeMismatchError("matmul", f"only 1-D/2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeMismatchError("matmul", f"inner dims differ: {a.shape} @ {b.shape}")
    out = _result("matmul", a.data @ b.data)
    a_data, b_data = a.data, b.data

    def backward_fn(g):
        if a_data.ndim == 2 and b_data.ndim == 2:
            return g @ b_data.T, a_data.T @ g
        if a_data.ndim == 2 and b_data.ndim == 1:
            return np.outer(g, b_data), a_data.T @ g
        if a_data.ndim == 1 and b_data.ndim == 2:
            return b_data @ g, np.outer(a_data, g)
        return g * b_data, g * a_data

    _record("matmul", (a, b), (out,), backward_fn)
    return out


def relu(x):
    out = _result("relu", np.maximum(x.data, 0.0))
    mask = x.data > 0

    def backward_fn(g):
        return (g * mask,)

    _record("relu", (x,), (out,), backward_fn)
    return out


def sigmoid(x):
    val = 1.0 / (1.0 + np.exp(-x.data))
    out = _result("sigmoid", val)

    def backward_fn(g):
        return (g * val * (1.0 - val),)

    _record("sigmoid", (x,), (out,), backward_fn)
    return out


def tanh(x):
    val = np.tanh(x.data)
    out = _result("tanh", val)

    def backward_fn(g):
        return (g * (1.0 - val * val),)

    _record("tanh", (x,), (out,), backward_fn)
    return out


def reshape(x, shape):
    out = _result("reshape", x.data.reshape(shape))
    original = x.data.shape

    def backward_fn(g):
        return (g.reshape(original),)

    _record("reshape", (x,), (out,), backward_fn)
    return out


def pad_to(x, out_h, out_w):
    """Zero-pad a (h, w) matrix at the bottom/right up to (out_h, out_w)."""
    h, w = x.shape
    if h > out_h or w > out_w:
        raise ShapeMismatchError("pad_to", f"input {x.shape} exceeds target ({out_h}, {out_w})")
    data = np.zeros((out_h, out_w))
    data[:h, :w] = x.data
    out = _result("pad_to", data)

    def backward_fn(g):
        return (g[:h, :w],)

    _record("pad_to", (x,), (out,), backward_fn)
    return out


def concat(tensors, axis=0):
    tensors = list(tensors)
    if not tensors:
        raise ShapeMismatchError("concat", "empty input list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeMismatchError(
            "concat", f"incompatible shapes {[t.shape for t in tensors]} on axis {axis}"
        )
    out = _result("concat", data)
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward_fn(g):
        return tuple(np.split(g, splits, axis=axis))

    _record("concat", tuple(tensors), (out,), backward_fn)
    return out


def embedding_gather(table, ids):
    """Gather rows of a (N, d) table; gradients scatter-add back per row."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1:
        raise ShapeMismatchError("embedding_gather", f"ids must be 1-D, got {ids.shape}")
    if table.ndim != 2:
        raise ShapeMismatchError("embedding_gather", f"table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatchError(
            "embedding_gather", f"ids out of range for table with {table.shape[0]} rows"
        )
    out = _result("embedding_gather", table.data[ids])
    n_rows = table.shape[0]

    def backward_fn(g):
        grad = np.zeros((n_rows, table.shape[1]))
        np.add.at(grad, ids, g)
        return (grad,)

    _record("embedding_gather", (table,), (out,), backward_fn)
    return out


def conv2d(x, kernels):
    """Valid cross-correlation, stride 1, multi-channel in and out.

    x: (C, H, W) or (B, C, H, W); kernels: (O, C, kh, kw).
    """
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or kernels.ndim != 4:
        raise ShapeMismatchError("conv2d", f"got input {x.shape}, kernels {kernels.shape}")
    xd = x.data if batched else x.data[None]
    n_b, c_in, h, w = xd.shape
    n_out, c_k, kh, kw = kernels.shape
    if c_in != c_k:
        raise ShapeMismatchError("conv2d", f"input channels {c_in} != kernel channels {c_k}")
    if h < kh or w < kw:
        raise ShapeMismatchError("conv2d", f"map {h}x{w} smaller than kernel {kh}x{kw}")
    oh, ow = h - kh + 1, w - kw + 1
    windows = np.lib.stride_tricks.sliding_window_view(xd, (kh, kw), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n_b * oh * ow, c_in * kh * kw)
    k_mat = kernels.data.reshape(n_out, c_in * kh * kw)
    flat = cols @ k_mat.T
    data = flat.reshape(n_b, oh, ow, n_out).transpose(0, 3, 1, 2)
    out = _result("conv2d", data if batched else data[0])

    def backward_fn(g):
        g4 = g if batched else g[None]
        g_mat = g4.transpose(0, 2, 3, 1).reshape(n_b * oh * ow, n_out)
        dk = (g_mat.T @ cols).reshape(n_out, c_in, kh, kw)
        dcols = (g_mat @ k_mat).reshape(n_b, oh, ow, c_in, kh, kw)
        dx = np.zeros((n_b, c_in, h, w))
        for a in range(kh):
            for b in range(kw):
                dx[:, :, a:a + oh, b:b + ow] += dcols[:, :, :, :, a, b].transpose(0, 3, 1, 2)
        return (dx if batched else dx[0]), dk

    _record("conv2d", (x, kernels), (out,), backward_fn)
    return out


def _band_edges(length, bands):
    return [(i * length) // bands for i in range(bands + 1)]


def dynamic_maxpool2d(x, out_h, out_w, valid_h=None, valid_w=None):
    """Max-pool a variable-size map onto a fixed grid.

    Rows and columns of the valid region are partitioned into contiguous
    near-equal bands; each output cell is the max of its band.  x: (H, W)
    or (C, H, W); the valid region defaults to the whole map and must be
    at least (out_h, out_w).
    """
    squeeze = x.ndim == 2
    if x.ndim not in (2, 3):
        raise ShapeMismatchError("dynamic_maxpool2d", f"expected 2-D or 3-D input, got {x.shape}")
    xd = x.data[None] if squeeze else x.data
    n_c, h, w = xd.shape
    vh = h if valid_h is None else int(valid_h)
    vw = w if valid_w is None else int(valid_w)
    if not (out_h <= vh <= h and out_w <= vw <= w):
        raise ShapeMismatchError(
            "dynamic_maxpool2d",
            f"valid region ({vh}, {vw}) must fit in ({h}, {w}) and cover ({out_h}, {out_w})",
        )
    rows = _band_edges(vh, out_h)
    cols = _band_edges(vw, out_w)
    data = np.empty((n_c, out_h, out_w))
    for i in range(out_h):
        for j in range(out_w):
            data[:, i, j] = xd[:, rows[i]:rows[i + 1], cols[j]:cols[j + 1]].max(axis=(1, 2))
    out = _result("dynamic_maxpool2d", data[0] if squeeze else data)

    def backward_fn(g):
        g3 = g[None] if squeeze else g
        dx = np.zeros((n_c, h, w))
        channel_idx = np.arange(n_c)
        for i in range(out_h):
            for j in range(out_w):
                band = xd[:, rows[i]:rows[i + 1], cols[j]:cols[j + 1]]
                bw = band.shape[2]
                flat_idx = band.reshape(n_c, -1).argmax(axis=1)
                dx[channel_idx, rows[i] + flat_idx // bw, cols[j] + flat_idx % bw] += g3[:, i, j]
        return (dx[0] if squeeze else dx,)

    _record("dynamic_maxpool2d", (x,), (out,), backward_fn)
    return out


def cosine_similarity(x, y):
    """Cosine of two 1-D vectors, clipped into [-1, 1].

    A zero-norm operand yields 0 rather than NaN (logged).
    """
    if x.ndim != 1 or y.ndim != 1 or x.shape != y.shape:
        raise ShapeMismatchError("cosine_similarity", f"need equal 1-D vectors, got {x.shape}, {y.shape}")
    nx2 = float(x.data @ x.data)
    ny2 = float(y.data @ y.data)
    if nx2 == 0.0 or ny2 == 0.0:
        logger.warning("cosine_similarity: zero-norm operand, returning 0")
        out = _result("cosine_similarity", np.asarray(0.0))

        def backward_zero(g):
            return np.zeros_like(x.data), np.zeros_like(y.data)

        _record("cosine_similarity", (x, y), (out,), backward_zero)
        return out
    # sqrt(nx2 * ny2) keeps cos(x, x) exactly 1 in IEEE arithmetic
    raw = float(x.data @ y.data) / np.sqrt(nx2 * ny2)
    nx, ny = np.sqrt(nx2), np.sqrt(ny2)
    out = _result("cosine_similarity", np.asarray(min(1.0, max(-1.0, raw))))
    xd, yd = x.data, y.data

    def backward_fn(g):
        dx = g * (yd / (nx * ny) - raw * xd / (nx * nx))
        dy = g * (xd / (nx * ny) - raw * yd / (ny * ny))
        return dx, dy

    _record("cosine_similarity", (x, y), (out,), backward_fn)
    return out


def pairwise_cosine(a, b):
    """All-pairs cosine of the rows of (m, d) and (n, d), clipped into [-1, 1].

    The batched form of ``cosine_similarity``; zero-norm rows produce zero
    entries and zero gradients.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeMismatchError("pairwise_cosine", f"need (m, d) and (n, d), got {a.shape}, {b.shape}")
    na2 = (a.data * a.data).sum(axis=1)
    nb2 = (b.data * b.data).sum(axis=1)
    zero_a = na2 == 0.0
    zero_b = nb2 == 0.0
    if zero_a.any() or zero_b.any():
        logger.warning("pairwise_cosine: zero-norm rows, their entries set to 0")
    safe_a = np.sqrt(np.where(zero_a, 1.0, na2))
    safe_b = np.sqrt(np.where(zero_b, 1.0, nb2))
    # scale the raw dot matrix by sqrt(na2 * nb2): identical rows give exactly 1
    raw = (a.data @ b.data.T) / np.sqrt(np.outer(np.where(zero_a, 1.0, na2),
                                                 np.where(zero_b, 1.0, nb2)))
    raw[zero_a] = 0.0
    raw[:, zero_b] = 0.0
    a_hat = a.data / safe_a[:, None]
    b_hat = b.data / safe_b[:, None]
    a_hat[zero_a] = 0.0
    b_hat[zero_b] = 0.0
    out = _result("pairwise_cosine", np.clip(raw, -1.0, 1.0))

    def backward_fn(g):
        row_w = (g * raw).sum(axis=1)
        col_w = (g * raw).sum(axis=0)
        da = (g @ b_hat - row_w[:, None] * a_hat) / safe_a[:, None]
        db = (g.T @ a_hat - col_w[:, None] * b_hat) / safe_b[:, None]
        da[zero_a] = 0.0
        db[zero_b] = 0.0
        return da, db

    _record("pairwise_cosine", (a, b), (out,), backward_fn)
    return out


def affine_combine(weights, values, bias):
    """Scalar weights . values + bias for 1-D operands and a 0-d bias."""
    if weights.ndim != 1 or values.ndim != 1 or weights.shape != values.shape:
        raise ShapeMismatchError(
            "affine_combine", f"need equal 1-D operands, got {weights.shape}, {values.shape}"
        )
    if bias.ndim != 0:
        raise ShapeMismatchError("affine_combine", f"bias must be scalar, got {bias.shape}")
    out = _result("affine_combine", np.asarray(weights.data @ values.data + bias.data))
    wd, vd = weights.data, values.data

    def backward_fn(g):
        return g * vd, g * wd, g.reshape(())

    _record("affine_combine", (weights, values, bias), (out,), backward_fn)
    return out


def lstm_cell(x, h_prev, c_prev, wx, wh, b):
    """One LSTM step over a batch; gate order i, f, o, g.

    x: (B, d_in), h_prev/c_prev: (B, H), wx: (d_in, 4H), wh: (H, 4H),
    b: (4H,).  Returns (h, c).
    """
    if x.ndim != 2 or h_prev.ndim != 2 or c_prev.ndim != 2:
        raise ShapeMismatchError("lstm_cell", "state and input must be 2-D (batch, dim)")
    hidden = h_prev.shape[1]
    if wx.shape != (x.shape[1], 4 * hidden) or wh.shape != (hidden, 4 * hidden) or b.shape != (4 * hidden,):
        raise ShapeMismatchError(
            "lstm_cell",
            f"weight shapes {wx.shape}, {wh.shape}, {b.shape} inconsistent with "
            f"input {x.shape} and hidden {hidden}",
        )
    pre = x.data @ wx.data + h_prev.data @ wh.data + b.data
    i = 1.0 / (1.0 + np.exp(-pre[:, 0:hidden]))
    f = 1.0 / (1.0 + np.exp(-pre[:, hidden:2 * hidden]))
    o = 1.0 / (1.0 + np.exp(-pre[:, 2 * hidden:3 * hidden]))
    g_gate = np.tanh(pre[:, 3 * hidden:4 * hidden])
    c_new = f * c_prev.data + i * g_gate
    tanh_c = np.tanh(c_new)
    h_out = _result("lstm_cell", o * tanh_c)
    c_out = _result("lstm_cell", c_new)
    xd, hd, cd = x.data, h_prev.data, c_prev.data

    def backward_fn(gh, gc):
        dc_total = gc + gh * o * (1.0 - tanh_c * tanh_c)
        d_pre = np.concatenate(
            [
                dc_total * g_gate * i * (1.0 - i),
                dc_total * cd * f * (1.0 - f),
                gh * tanh_c * o * (1.0 - o),
                dc_total * i * (1.0 - g_gate * g_gate),
            ],
            axis=1,
        )
        dx = d_pre @ wx.data.T
        dh = d_pre @ wh.data.T
        dc = dc_total * f
        dwx = xd.T @ d_pre
        dwh = hd.T @ d_pre
        db = d_pre.sum(axis=0)
        return dx, dh, dc, dwx, dwh, db

    _record("lstm_cell", (x, h_prev, c_prev, wx, wh, b), (h_out, c_out), backward_fn)
    return h_out, c_out


PRIMITIVES = (
    "matmul",
    "add",
    "relu",
    "tanh",
    "sigmoid",
    "conv2d",
    "dynamic_maxpool2d",
    "concat",
    "embedding_gather",
    "cosine_similarity",
    "pairwise_cosine",
    "lstm_cell",
    "affine_combine",
    "reshape",
    "pad_to",
)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------

# Per-primitive harness: shapes -> differentiable input tensors plus a
# forward closure returning the output tensors.  Inputs are kept away from
# relu/max kinks so central differences are well posed.


def _away_from_zero(rng, shape):
    return (rng.uniform(0.3, 1.3, size=shape) * rng.choice([-1.0, 1.0], size=shape))


def _gc_inputs(op, shapes, rng):
    if op == "matmul":
        a, b = shapes
        ts = [Tensor(rng.standard_normal(a), True), Tensor(rng.standard_normal(b), True)]
        return ts, lambda t: [matmul(t[0], t[1])]
    if op == "add":
        a, b = shapes
        ts = [Tensor(rng.standard_normal(a), True), Tensor(rng.standard_normal(b), True)]
        return ts, lambda t: [add(t[0], t[1])]
    if op in ("relu", "tanh", "sigmoid"):
        fn = {"relu": relu, "tanh": tanh, "sigmoid": sigmoid}[op]
        ts = [Tensor(_away_from_zero(rng, shapes[0]), True)]
        return ts, lambda t: [fn(t[0])]
    if op == "conv2d":
        x_shape, k_shape = shapes
        ts = [Tensor(rng.standard_normal(x_shape), True), Tensor(rng.standard_normal(k_shape), True)]
        return ts, lambda t: [conv2d(t[0], t[1])]
    if op == "dynamic_maxpool2d":
        x_shape, (out_h, out_w), (vh, vw) = shapes
        ts = [Tensor(rng.permutation(np.arange(np.prod(x_shape), dtype=float)).reshape(x_shape), True)]
        return ts, lambda t: [dynamic_maxpool2d(t[0], out_h, out_w, vh, vw)]
    if op == "concat":
        parts, axis = shapes
        ts = [Tensor(rng.standard_normal(s), True) for s in parts]
        return ts, lambda t: [concat(t, axis=axis)]
    if op == "embedding_gather":
        table_shape, n_ids = shapes
        ids = rng.integers(0, table_shape[0], size=n_ids)
        ids[0] = ids[-1]  # force a repeated row to exercise accumulation
        ts = [Tensor(rng.standard_normal(table_shape), True)]
        return ts, lambda t: [embedding_gather(t[0], ids)]
    if op == "cosine_similarity":
        (n,) = shapes
        ts = [Tensor(rng.standard_normal(n), True), Tensor(rng.standard_normal(n), True)]
        return ts, lambda t: [cosine_similarity(t[0], t[1])]
    if op == "pairwise_cosine":
        a, b = shapes
        ts = [Tensor(rng.standard_normal(a), True), Tensor(rng.standard_normal(b), True)]
        return ts, lambda t: [pairwise_cosine(t[0], t[1])]
    if op == "affine_combine":
        (k,) = shapes
        ts = [
            Tensor(rng.standard_normal(k), True),
            Tensor(rng.standard_normal(k), True),
            Tensor(rng.standard_normal(()), True),
        ]
        return ts, lambda t: [affine_combine(t[0], t[1], t[2])]
    if op == "lstm_cell":
        batch, d_in, hidden = shapes
        ts = [
            Tensor(rng.standard_normal((batch, d_in)), True),
            Tensor(rng.standard_normal((batch, hidden)), True),
            Tensor(rng.standard_normal((batch, hidden)), True),
            Tensor(rng.standard_normal((d_in, 4 * hidden)) * 0.5, True),
            Tensor(rng.standard_normal((hidden, 4 * hidden)) * 0.5, True),
            Tensor(rng.standard_normal(4 * hidden) * 0.5, True),
        ]
        return ts, lambda t: list(lstm_cell(t[0], t[1], t[2], t[3], t[4], t[5]))
    if op == "reshape":
        src, dst = shapes
        ts = [Tensor(rng.standard_normal(src), True)]
        return ts, lambda t: [reshape(t[0], dst)]
    if op == "pad_to":
        src, (oh, ow) = shapes
        ts = [Tensor(rng.standard_normal(src), True)]
        return ts, lambda t: [pad_to(t[0], oh, ow)]
    raise ValueError(f"unknown primitive: {op}")


GRAD_CHECK_SHAPES = {
    "matmul": [((4, 3), (3, 5)), ((2, 6), (6, 2)), ((5,), (5, 3)), ((4, 3), (3,))],
    "add": [((4, 5), (4, 5)), ((3, 4), (4,)), ((2, 3, 2), (2,))],
    "relu": [((7,),), ((3, 4),), ((2, 3, 2),)],
    "tanh": [((7,),), ((3, 4),), ((2, 3, 2),)],
    "sigmoid": [((7,),), ((3, 4),), ((2, 3, 2),)],
    "conv2d": [
        ((2, 6, 6), (3, 2, 3, 3)),
        ((1, 5, 7), (2, 1, 2, 2)),
        ((3, 4, 4), (2, 3, 3, 3)),
        ((2, 2, 5, 5), (3, 2, 2, 2)),
    ],
    "dynamic_maxpool2d": [
        ((6, 7), (2, 3), (6, 7)),
        ((2, 6, 6), (2, 2), (5, 4)),
        ((3, 5, 8), (3, 3), (3, 6)),
    ],
    "concat": [
        (((2, 3), (4, 3)), 0),
        (((3, 2), (3, 5)), 1),
        (((2,), (3,), (1,)), 0),
    ],
    "embedding_gather": [((6, 4), 5), ((9, 3), 4), ((4, 7), 6)],
    "cosine_similarity": [(5,), (3,), (8,)],
    "pairwise_cosine": [((3, 4), (5, 4)), ((2, 6), (2, 6)), ((4, 3), (1, 3))],
    "lstm_cell": [(1, 5, 4), (3, 4, 3), (2, 3, 2)],
    "affine_combine": [(2,), (5,), (1,)],
    "reshape": [((6,), (2, 3)), ((2, 3, 2), (6, 2)), ((4, 4), (16,))],
    "pad_to": [((3, 4), (5, 6)), ((2, 2), (2, 4)), ((4, 3), (6, 3))],
}


def _project_to_scalar(outputs, projections):
    """Collapse output tensors to one scalar with fixed projection weights."""
    zero = Tensor(0.0)
    parts = []
    for out, proj in zip(outputs, projections):
        flat = reshape(out, (out.size,))
        parts.append(reshape(affine_combine(Tensor(proj.reshape(-1)), flat, zero), (1,)))
    if len(parts) == 1:
        return reshape(parts[0], ())
    return affine_combine(Tensor(np.ones(len(parts))), concat(parts, axis=0), zero)


def grad_check(op, shapes, seed):
    """Max relative error of analytic vs central-difference gradients.

    Outputs are projected to a scalar with fixed random weights; central
    differences use h = 1e-5 at float64.  Relative error per coordinate is
    |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    rng = np.random.default_rng(seed)
    tensors, forward = _gc_inputs(op, shapes, rng)
    proj_rng = np.random.default_rng(seed + 1)

    _TAPE.reset()
    for t in tensors:
        t.zero_grad()
    outputs = forward(tensors)
    projections = [proj_rng.standard_normal(o.shape) for o in outputs]
    backward(_project_to_scalar(outputs, projections))
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    for t in tensors:
        t.zero_grad()
    _TAPE.reset()

    def numeric_value():
        outs = forward(tensors)
        return sum(float((o.data * p).sum()) for o, p in zip(outs, projections))

    h = 1e-5
    worst = 0.0
    with no_grad():
        for t_idx, t in enumerate(tensors):
            flat = t.data.reshape(-1)
            for k in range(flat.size):
                orig = flat[k]
                flat[k] = orig + h
                up = numeric_value()
                flat[k] = orig - h
                down = numeric_value()
                flat[k] = orig
                numeric = (up - down) / (2.0 * h)
                a = analytic[t_idx].reshape(-1)[k]
                rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, rel)
    return worst


def run_grad_check_suite(seeds=range(20), shape_table=None):
    """Run grad_check over the whole catalog; returns {op: max rel err}."""
    table = shape_table or GRAD_CHECK_SHAPES
    results = {}
    for op, shape_list in table.items():
        worst = 0.0
        for shapes in shape_list:
            for seed in seeds:
                worst = max(worst, grad_check(op, shapes, int(seed)))
        results[op] = worst
    return results


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


class Adagrad:
    """Adagrad over a named parameter dict.

    Per coordinate: acc += g^2; p -= lr * g / (sqrt(acc) + eps).  Stepping
    zeroes all parameter gradients and resets the tape.  ``frozen_rows``
    maps parameter names to leading-axis indices whose gradient is forced
    to zero before the update (used to pin the padding embedding row and
    ablated combination weights).
    """

    def __init__(self, params, learning_rate=0.05, epsilon=1e-8, frozen_rows=None):
        if learning_rate <= 0:
            raise OptimizerError("learning_rate must be positive")
        self.params = dict(params)
        self.learning_rate = float(learning_rate)
        self.epsilon = float(epsilon)
        self.frozen_rows = {k: tuple(v) for k, v in (frozen_rows or {}).items()}
        self.accumulators = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.step_count = 0

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                raise OptimizerError(f"parameter {name!r} has no gradient")
            g = p.grad
            rows = self.frozen_rows.get(name)
            if rows:
                g[list(rows)] = 0.0
            acc = self.accumulators[name]
            acc += g * g
            p.data -= self.learning_rate * g / (np.sqrt(acc) + self.epsilon)
            _check_finite(p.data, f"parameter {name} after adagrad step")
        for p in self.params.values():
            p.zero_grad()
        _TAPE.reset()
        self.step_count += 1
