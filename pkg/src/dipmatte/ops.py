"""Differentiable operations over :class:`~dipmatte.tensor.Tensor`.

Shapes are explicit: apart from tensor-scalar arithmetic nothing broadcasts.
Image tensors use the (channels, height, width) layout.
"""

import numpy as np

from . import kernels
from .tensor import ShapeError, Tensor, current_tape, grad_enabled

#: Names of every differentiable operation, used by the gradient-check suite.
DIFFERENTIABLE_OPS = (
    "conv2d",
    "add_channel_bias",
    "upsample_nearest",
    "leaky_relu",
    "sigmoid",
    "instance_norm",
    "add",
    "sub",
    "mul",
    "scalar_mul",
    "scalar_add",
    "concat_channels",
    "repeat_channels",
    "abs",
    "square",
    "spatial_grad_l1",
    "sum_channels",
    "masked_mean",
    "sum_all",
    "crop",
)


def _result(data, parents, backward):
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        current_tape().record(out, parents, backward)
    return out


def _check_image(x, name="input"):
    if x.ndim != 3:
        raise ShapeError(f"{name} must be (C, H, W), got shape {x.shape}")


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def conv2d(x, weight, stride=1, padding_mode="reflect"):
    """2-D cross-correlation with reflect padding of ``k // 2`` pixels.

    Stride 1 preserves H and W; stride 2 yields ``ceil(H / 2)``.
    """
    if padding_mode != "reflect":
        raise ValueError(f"unsupported padding mode {padding_mode!r}")
    _check_image(x)
    if weight.ndim != 4:
        raise ShapeError(f"kernel must be (C_out, C_in, k, k), got {weight.shape}")
    c_out, c_in, kh, kw = weight.shape
    c, h, w = x.shape
    if c_in != c:
        raise ShapeError(f"conv2d: input has {c} channels, kernel expects {c_in}")
    if kh != kw or kh % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be square and odd, got {kh}x{kw}")
    if stride not in (1, 2):
        raise ValueError(f"conv2d: stride must be 1 or 2, got {stride}")
    if h < kh or w < kw:
        raise ShapeError(f"conv2d: {h}x{w} input is smaller than the {kh}x{kw} kernel")
    if x.dtype != weight.dtype:
        raise TypeError(f"conv2d: dtype mismatch {x.dtype} vs {weight.dtype}")
    k = kh
    cols = kernels.im2col(x.data, k, stride)
    w2 = weight.data.reshape(c_out, c_in * k * k)
    ho = (h - 1) // stride + 1
    wo = (w - 1) // stride + 1
    out = (w2 @ cols).reshape(c_out, ho, wo)

    def backward(g):
        g2 = g.reshape(c_out, ho * wo)
        gx = gw = None
        if weight.requires_grad:
            gw = (g2 @ cols.T).reshape(weight.shape)
        if x.requires_grad:
            gx = kernels.col2im(np.ascontiguousarray(w2.T @ g2), c, h, w, k, stride)
        return gx, gw

    return _result(out, (x, weight), backward)


def add_channel_bias(x, bias):
    """Add ``bias[c]`` to every pixel of channel ``c``."""
    _check_image(x)
    if bias.shape != (x.shape[0],):
        raise ShapeError(f"bias shape {bias.shape} does not match {x.shape[0]} channels")
    out = x.data + bias.data[:, None, None]
    return _result(out, (x, bias), lambda g: (g, g.sum(axis=(1, 2))))


def upsample_nearest(x, factor=2):
    if factor != 2:
        raise ValueError(f"only factor 2 is supported, got {factor}")
    _check_image(x)
    out = kernels.upsample2x(x.data)
    return _result(out, (x,), lambda g: (kernels.upsample2x_adjoint(np.ascontiguousarray(g)),))


def leaky_relu(x, slope=0.1):
    if not 0.0 < slope < 1.0:
        raise ValueError(f"slope must lie in (0, 1), got {slope}")
    pos = x.data >= 0
    scale = np.where(pos, 1.0, slope).astype(x.dtype)
    return _result(x.data * scale, (x,), lambda g: (g * scale,))


def sigmoid(x):
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return _result(out, (x,), lambda g: (g * out * (1.0 - out),))


def instance_norm(x, eps=1e-5):
    """Normalize each channel to zero mean and unit variance over H x W."""
    _check_image(x)
    mean = x.data.mean(axis=(1, 2), keepdims=True)
    centered = x.data - mean
    var = (centered * centered).mean(axis=(1, 2), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv

    def backward(g):
        gm = g.mean(axis=(1, 2), keepdims=True)
        gy = (g * y).mean(axis=(1, 2), keepdims=True)
        return (inv * (g - gm - y * gy),)

    return _result(y.astype(x.dtype, copy=False), (x,), backward)


def add(a, b):
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape(a, b, "mul")
    return _result(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def scalar_mul(x, s):
    s = float(s)
    return _result(x.data * x.dtype.type(s), (x,), lambda g: (g * x.dtype.type(s),))


def scalar_add(x, s):
    return _result(x.data + x.dtype.type(s), (x,), lambda g: (g,))


def concat_channels(tensors):
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat_channels needs at least one tensor")
    for t in tensors:
        _check_image(t)
        if t.shape[1:] != tensors[0].shape[1:]:
            raise ShapeError(f"concat_channels: spatial sizes {t.shape[1:]} and {tensors[0].shape[1:]} differ")
    out = np.concatenate([t.data for t in tensors], axis=0)
    bounds = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(tensors)))

    return _result(out, tuple(tensors), backward)


def repeat_channels(x, n):
    """Stack ``n`` copies of a single-channel plane into ``n`` channels."""
    _check_image(x)
    if x.shape[0] != 1:
        raise ShapeError(f"repeat_channels expects one channel, got {x.shape[0]}")
    out = np.repeat(x.data, n, axis=0)
    return _result(out, (x,), lambda g: (g.sum(axis=0, keepdims=True),))


def abs(x):  # noqa: A001 - mirrors numpy naming
    sign = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * sign,))


def square(x):
    return _result(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def spatial_grad_l1(x):
    """Per-pixel sum over channels of absolute forward differences in x and y.

    The last column (row) has no forward neighbour and contributes zero.
    Returns a (1, H, W) plane.
    """
    _check_image(x)
    out = kernels.spatial_grad_l1(x.data)
    return _result(out, (x,), lambda g: (kernels.spatial_grad_l1_adjoint(x.data, np.ascontiguousarray(g)),))


def sum_channels(x):
    _check_image(x)
    return _result(x.data.sum(axis=0, keepdims=True), (x,),
                   lambda g: (np.repeat(g, x.shape[0], axis=0),))


def masked_mean(x, mask):
    """Mean of a (1, H, W) plane over the pixels where ``mask`` is true."""
    _check_image(x)
    mask = np.asarray(mask, dtype=bool)
    if x.shape[0] != 1 or mask.shape != x.shape[1:]:
        raise ShapeError(f"masked_mean: plane {x.shape} vs mask {mask.shape}")
    count = int(mask.sum())
    if count == 0:
        raise ValueError("masked_mean over an empty region")
    sel = mask[None]
    out = np.asarray(x.data[sel].sum() / count, dtype=x.dtype)
    scale = (sel / count).astype(x.dtype)
    return _result(out, (x,), lambda g: (g * scale,))


def sum_all(x):
    out = np.asarray(x.data.sum(), dtype=x.dtype)
    return _result(out, (x,), lambda g: (np.full(x.shape, g, dtype=x.dtype),))


def crop(x, h, w):
    """Keep the top-left ``h x w`` window."""
    _check_image(x)
    if h > x.shape[1] or w > x.shape[2]:
        raise ShapeError(f"crop {h}x{w} larger than input {x.shape}")
    if (h, w) == x.shape[1:]:
        return x
    out = np.ascontiguousarray(x.data[:, :h, :w])

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[:, :h, :w] = g
        return (full,)

    return _result(out, (x,), backward)
