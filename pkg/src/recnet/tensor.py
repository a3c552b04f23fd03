"""Dense rank-4 tensor containers and the forward/backward primitives.

Everything operates on NumPy arrays laid out (N, C, H, W), row-major with W
fastest. Convolution is cross-correlation (no kernel flip) with stride fixed
at 1; downsampling happens only in pooling layers. Each differentiable op
comes as a `*_forward` / `*_backward` pair; backward functions are pure and
return gradients, callers accumulate them into parameter buffers.
"""

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import config
from .errors import ConfigError, ShapeError


class Param:
    """A trainable array plus an optional gradient buffer.

    Gradient accumulation is additive: `accumulate` allocates the buffer on
    first use and adds into it afterwards, so shared weights (e.g. the
    recurrent kernels applied at every step) collect contributions from all
    call sites.
    """

    __slots__ = ("data", "grad")

    def __init__(self, data, grad=None):
        self.data = np.asarray(data)
        if grad is not None and np.shape(grad) != self.data.shape:
            raise ShapeError(
                f"grad shape {np.shape(grad)} does not match data shape {self.data.shape}"
            )
        self.grad = None if grad is None else np.asarray(grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g):
        g = np.asarray(g)
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {self.data.shape}")
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None


class Tensor4(Param):
    """Rank-4 value (N, C, H, W); the universal activation container."""

    def __init__(self, data, grad=None):
        data = np.asarray(data)
        if data.ndim != 4:
            raise ShapeError(f"Tensor4 expects 4 dims, got shape {data.shape}")
        if min(data.shape) <= 0:
            raise ShapeError(f"Tensor4 dims must be strictly positive, got {data.shape}")
        super().__init__(data, grad)

    @property
    def n(self):
        return self.data.shape[0]

    @property
    def c(self):
        return self.data.shape[1]

    @property
    def h(self):
        return self.data.shape[2]

    @property
    def w(self):
        return self.data.shape[3]


class ConvKernel(Param):
    """Convolution weights (C_out, C_in, k_h, k_w)."""

    def __init__(self, data, grad=None):
        data = np.asarray(data)
        if data.ndim != 4:
            raise ShapeError(f"ConvKernel expects 4 dims, got shape {data.shape}")
        if min(data.shape) <= 0:
            raise ShapeError(f"ConvKernel dims must be strictly positive, got {data.shape}")
        super().__init__(data, grad)

    @property
    def c_out(self):
        return self.data.shape[0]

    @property
    def c_in(self):
        return self.data.shape[1]

    @property
    def kh(self):
        return self.data.shape[2]

    @property
    def kw(self):
        return self.data.shape[3]


class BnState:
    """Batch-normalization state for one channel group.

    gamma/beta are trainable; running_mean/running_var are updated in train
    mode as `running <- momentum * running + (1 - momentum) * batch` and are
    the only statistics consulted in eval mode. Normalization uses the
    population (biased) variance.
    """

    def __init__(self, channels, eps=1e-5, momentum=0.9, dtype=None):
        if channels <= 0:
            raise ConfigError(f"BnState channel count must be positive, got {channels}")
        if eps <= 0:
            raise ConfigError(f"BnState eps must be positive, got {eps}")
        dtype = dtype or config.default_dtype()
        self.gamma = Param(np.ones(channels, dtype=dtype))
        self.beta = Param(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.mode = "train"

    @property
    def channels(self):
        return self.gamma.data.shape[0]

    def train(self):
        self.mode = "train"

    def eval(self):
        self.mode = "eval"


def _as_array(x):
    return x.data if isinstance(x, Param) else np.asarray(x)


def _pair(v):
    if isinstance(v, tuple):
        return v
    return (int(v), int(v))


def same_padding(kh, kw=None):
    """Padding that preserves spatial dims for odd kernels; errors on even."""
    kw = kh if kw is None else kw
    if kh % 2 == 0 or kw % 2 == 0:
        raise ConfigError(f"'same' padding undefined for even kernel ({kh}x{kw})")
    return ((kh - 1) // 2, (kw - 1) // 2)


def _resolve_padding(padding, kh, kw):
    if padding == "same":
        return same_padding(kh, kw)
    ph, pw = _pair(padding)
    if ph < 0 or pw < 0:
        raise ConfigError(f"padding must be non-negative, got {(ph, pw)}")
    if ph > kh - 1 or pw > kw - 1:
        raise ConfigError(f"padding {(ph, pw)} exceeds kernel-1 for kernel {(kh, kw)}")
    return ph, pw


def _pad_spatial(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def _windows(x, kh, kw):
    """Sliding (kh, kw) views over the two trailing axes; zero-copy."""
    n, c, h, w = x.shape
    sn, sc, sh, sw = x.strides
    return as_strided(
        x,
        shape=(n, c, h - kh + 1, w - kw + 1, kh, kw),
        strides=(sn, sc, sh, sw, sh, sw),
        writeable=False,
    )


def conv2d_forward(x, w, bias=None, padding=0):
    """Stride-1 cross-correlation of x (N,C_in,H,W) with w (C_out,C_in,kh,kw).

    padding may be an int, an (ph, pw) pair, or "same" (odd kernels only).
    Output spatial dims: H - kh + 1 + 2*ph by W - kw + 1 + 2*pw.
    """
    x, w = _as_array(x), _as_array(w)
    c_out, c_in, kh, kw = w.shape
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be 4-D, got {x.shape}")
    if x.shape[1] != c_in:
        raise ShapeError(f"conv2d channel mismatch: input C={x.shape[1]}, kernel C_in={c_in}")
    ph, pw = _resolve_padding(padding, kh, kw)
    if x.shape[2] + 2 * ph < kh or x.shape[3] + 2 * pw < kw:
        raise ShapeError(f"input {x.shape[2:]} smaller than kernel {(kh, kw)} after padding")
    win = _windows(_pad_spatial(x, ph, pw), kh, kw)
    y = np.einsum("nchwuv,ocuv->nohw", win, w, optimize=True)
    if bias is not None:
        bias = _as_array(bias)
        if bias.shape != (c_out,):
            raise ShapeError(f"bias shape {bias.shape} != ({c_out},)")
        y += bias[:, None, None]
    return y


def conv2d_backward(x, w, grad_out, padding=0, need_grad_x=True):
    """Gradients of conv2d_forward; returns (grad_x, grad_w, grad_bias).

    grad_x is the full correlation of grad_out with the spatially flipped,
    in/out-transposed kernel.
    """
    x, w = _as_array(x), _as_array(w)
    grad_out = np.asarray(grad_out)
    c_out, c_in, kh, kw = w.shape
    ph, pw = _resolve_padding(padding, kh, kw)
    expect = (x.shape[0], c_out, x.shape[2] - kh + 1 + 2 * ph, x.shape[3] - kw + 1 + 2 * pw)
    if grad_out.shape != expect:
        raise ShapeError(f"grad_out shape {grad_out.shape} != forward output shape {expect}")

    grad_bias = grad_out.sum(axis=(0, 2, 3))
    win = _windows(_pad_spatial(x, ph, pw), kh, kw)
    grad_w = np.einsum("nchwuv,nohw->ocuv", win, grad_out, optimize=True)

    grad_x = None
    if need_grad_x:
        flipped = w[:, :, ::-1, ::-1]
        gwin = _windows(_pad_spatial(grad_out, kh - 1 - ph, kw - 1 - pw), kh, kw)
        grad_x = np.einsum("nohwuv,ocuv->nchw", gwin, flipped, optimize=True)
    return grad_x, grad_w, grad_bias


def _bn_arrays(s, channel_slice):
    if channel_slice is None:
        sl = slice(None)
    else:
        sl = slice(*channel_slice)
    return (
        s.gamma.data[sl],
        s.beta.data[sl],
        s.running_mean[sl],
        s.running_var[sl],
        sl,
    )


def batchnorm_forward(x, s, update_running=True, channel_slice=None):
    """Normalize per channel, then affine-transform.

    Train mode standardizes by batch statistics over (N, H, W) and updates
    the running statistics in place (unless update_running is False, used
    when a backward pass recomputes the same forward). Eval mode uses the
    stored running statistics only. channel_slice=(lo, hi) applies the state
    to a contiguous channel block, which is how the merged computation form
    normalizes one recurrence segment at a time.
    """
    x = _as_array(x)
    gamma, beta, r_mean, r_var, sl = _bn_arrays(s, channel_slice)
    if x.shape[1] != gamma.shape[0]:
        raise ShapeError(f"batchnorm channel mismatch: x C={x.shape[1]}, state {gamma.shape[0]}")
    if s.mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m < 2:
            raise ConfigError("batchnorm train mode needs N*H*W >= 2 per channel")
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        if update_running:
            s.running_mean[sl] = s.momentum * r_mean + (1.0 - s.momentum) * mean
            s.running_var[sl] = s.momentum * r_var + (1.0 - s.momentum) * var
    else:
        mean, var = r_mean, r_var
    inv = 1.0 / np.sqrt(var + s.eps)
    x_hat = (x - mean[:, None, None]) * inv[:, None, None]
    return gamma[:, None, None] * x_hat + beta[:, None, None]


def batchnorm_backward(x, s, grad_out, channel_slice=None):
    """Gradients of batchnorm_forward; returns (grad_x, grad_gamma, grad_beta).

    Train mode treats the batch statistics as functions of x. Eval mode is
    the affine-only path: grad_x = grad_out * gamma / sqrt(running_var + eps).
    """
    x = _as_array(x)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out shape {grad_out.shape} != input shape {x.shape}")
    gamma, beta, r_mean, r_var, _ = _bn_arrays(s, channel_slice)
    if s.mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        inv = 1.0 / np.sqrt(var + s.eps)
        x_hat = (x - mean[:, None, None]) * inv[:, None, None]
        grad_beta = grad_out.sum(axis=(0, 2, 3))
        grad_gamma = (grad_out * x_hat).sum(axis=(0, 2, 3))
        g_hat = grad_out * gamma[:, None, None]
        sum_g = g_hat.sum(axis=(0, 2, 3))
        sum_gx = (g_hat * x_hat).sum(axis=(0, 2, 3))
        grad_x = (inv[:, None, None] / m) * (
            m * g_hat - sum_g[:, None, None] - x_hat * sum_gx[:, None, None]
        )
    else:
        inv = 1.0 / np.sqrt(r_var + s.eps)
        x_hat = (x - r_mean[:, None, None]) * inv[:, None, None]
        grad_beta = grad_out.sum(axis=(0, 2, 3))
        grad_gamma = (grad_out * x_hat).sum(axis=(0, 2, 3))
        grad_x = grad_out * (gamma * inv)[:, None, None]
    return grad_x, grad_gamma, grad_beta


def relu(x):
    return np.maximum(_as_array(x), 0)


def relu_backward(x, grad_out):
    """Masks grad_out where x <= 0 (subgradient 0 at exactly 0)."""
    return np.asarray(grad_out) * (_as_array(x) > 0)


def maxpool2(x):
    """Non-overlapping 2x2 max pooling; returns (pooled, argmax indices).

    The index array stores, per output cell, the winning position 0..3 in
    row-major window order; ties go to the first scanned element.
    """
    x = _as_array(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    tiles = (
        x.reshape(n, c, h // 2, 2, w // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h // 2, w // 2, 4)
    )
    idx = tiles.argmax(axis=-1)
    y = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
    return y, idx


def maxpool2_backward(idx, grad_out, in_shape):
    """Routes each output gradient to its stored argmax position."""
    grad_out = np.asarray(grad_out)
    n, c, h, w = in_shape
    if grad_out.shape != (n, c, h // 2, w // 2):
        raise ShapeError(f"grad_out shape {grad_out.shape} != pooled shape {(n, c, h//2, w//2)}")
    scatter = np.zeros((n, c, h // 2, w // 2, 4), dtype=grad_out.dtype)
    np.put_along_axis(scatter, idx[..., None], grad_out[..., None], axis=-1)
    return (
        scatter.reshape(n, c, h // 2, w // 2, 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(n, c, h, w)
    )


def avgpool_global(x):
    """Mean over the full spatial extent; output (N, C, 1, 1)."""
    return _as_array(x).mean(axis=(2, 3), keepdims=True)


def avgpool_global_backward(grad_out, in_shape):
    n, c, h, w = in_shape
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (n, c, 1, 1):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(n, c, 1, 1)}")
    return np.broadcast_to(grad_out / (h * w), in_shape).copy()


def linear_forward(x, w, b):
    """Affine map of flattened features: (N,F) x (K,F)^T + (K,)."""
    x, w, b = _as_array(x), _as_array(w), _as_array(b)
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"linear shapes incompatible: x {x.shape}, w {w.shape}")
    if b.shape != (w.shape[0],):
        raise ShapeError(f"linear bias shape {b.shape} != ({w.shape[0]},)")
    return x @ w.T + b


def linear_backward(x, w, grad_out):
    x, w = _as_array(x), _as_array(w)
    grad_out = np.asarray(grad_out)
    if grad_out.shape != (x.shape[0], w.shape[0]):
        raise ShapeError(f"grad_out shape {grad_out.shape} != {(x.shape[0], w.shape[0])}")
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)
