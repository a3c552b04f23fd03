"""Channel-wise recurrent convolutional layer.

The layer splits its input channels into d segments of S_in channels and
runs them through a convolutional recurrence with shared weights:

    h_0 = sigma(x_0 * W_x + b)
    h_i = sigma(x_i * W_x + h_{i-1} * W_h + b)        i = 1 .. d-1

(* is same-padded cross-correlation). The output is the concatenation of
the d hidden segments, each S_out channels wide. Four non-linearity
variants are supported; the linear-recurrence variant additionally admits
an unrolled computation form built from composed kernels, and a
grouped-shared baseline replaces the recurrence with an independent
per-segment W_x -> W_h chain at identical parameter cost.
"""

import enum

import numpy as np

from . import config
from .errors import ConfigError, ShapeError
from .tensor import (
    BnState,
    ConvKernel,
    Param,
    _as_array,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    relu,
    relu_backward,
)


class CrcVariant(enum.Enum):
    RELU = "relu"
    SHARED_BN_RELU = "shared_bn_relu"
    SEPARATE_BN_RELU = "separate_bn_relu"
    LINEAR = "linear"


# Variants whose recurrence carries an explicit bias vector. The BN variants
# drop it because the normalization's beta absorbs any constant shift.
_BIAS_VARIANTS = (CrcVariant.RELU, CrcVariant.LINEAR)


class CrcParams:
    """Weights and hyper-parameters of one CRC layer.

    The layer maps d*s_in input channels to d*s_out output channels using a
    single (s_out, s_in, k_x, k_x) input kernel and a single
    (s_out, s_out, k_h, k_h) hidden kernel shared across all d steps, so the
    convolution weight count is independent of d.
    """

    def __init__(self, s_in, s_out, d, w_x, w_h, variant, bias=None, bns=None, out_bn=None):
        if d <= 0:
            raise ConfigError(f"segment count d must be positive, got {d}")
        if s_in <= 0 or s_out <= 0:
            raise ConfigError(f"segment widths must be positive, got ({s_in}, {s_out})")
        self.s_in, self.s_out, self.d = int(s_in), int(s_out), int(d)
        self.w_x = w_x if isinstance(w_x, ConvKernel) else ConvKernel(w_x)
        self.w_h = w_h if isinstance(w_h, ConvKernel) else ConvKernel(w_h)
        if self.w_x.shape[:2] != (s_out, s_in):
            raise ShapeError(f"w_x channels {self.w_x.shape[:2]} != ({s_out}, {s_in})")
        if self.w_h.shape[:2] != (s_out, s_out):
            raise ShapeError(f"w_h channels {self.w_h.shape[:2]} != ({s_out}, {s_out})")
        if self.w_x.kh != self.w_x.kw or self.w_h.kh != self.w_h.kw:
            raise ConfigError("CRC kernels must be square")
        self.k_x, self.k_h = self.w_x.kh, self.w_h.kh
        self.variant = variant
        self.bias = bias
        self.bns = bns
        self.out_bn = out_bn
        self._validate_variant()

    def _validate_variant(self):
        v, d, s_out = self.variant, self.d, self.s_out
        if v in _BIAS_VARIANTS:
            if self.bias is None or self.bias.shape != (s_out,):
                raise ConfigError(f"{v.value} variant needs a bias of shape ({s_out},)")
        elif self.bias is not None:
            raise ConfigError(f"{v.value} variant does not carry a bias")
        if v is CrcVariant.SEPARATE_BN_RELU:
            if not self.bns or len(self.bns) != d:
                raise ConfigError(f"separate-BN variant needs exactly d={d} BN states")
        elif v is CrcVariant.SHARED_BN_RELU:
            if not self.bns or len(self.bns) != 1:
                raise ConfigError("shared-BN variant needs exactly one BN state")
        elif self.bns:
            raise ConfigError(f"{v.value} variant does not carry step BN states")
        if self.bns and any(s.channels != s_out for s in self.bns):
            raise ConfigError(f"step BN states must cover {s_out} channels")
        if v is CrcVariant.LINEAR:
            if self.out_bn is None or self.out_bn.channels != d * s_out:
                raise ConfigError(f"linear variant needs an output BN over {d * s_out} channels")
        elif self.out_bn is not None:
            raise ConfigError(f"{v.value} variant does not carry an output BN")

    @classmethod
    def create(cls, s_in, s_out, d, k_x=3, k_h=3, variant=CrcVariant.SEPARATE_BN_RELU,
               rng=None, dtype=None):
        """He-initialized layer; kernels are square with sides k_x and k_h."""
        rng = rng or np.random.default_rng()
        dtype = dtype or config.default_dtype()
        w_x = rng.normal(0.0, np.sqrt(2.0 / (s_in * k_x * k_x)),
                         (s_out, s_in, k_x, k_x)).astype(dtype)
        w_h = rng.normal(0.0, np.sqrt(2.0 / (s_out * k_h * k_h)),
                         (s_out, s_out, k_h, k_h)).astype(dtype)
        bias = Param(np.zeros(s_out, dtype=dtype)) if variant in _BIAS_VARIANTS else None
        bns = None
        if variant is CrcVariant.SEPARATE_BN_RELU:
            bns = [BnState(s_out, dtype=dtype) for _ in range(d)]
        elif variant is CrcVariant.SHARED_BN_RELU:
            bns = [BnState(s_out, dtype=dtype)]
        out_bn = BnState(d * s_out, dtype=dtype) if variant is CrcVariant.LINEAR else None
        return cls(s_in, s_out, d, ConvKernel(w_x), ConvKernel(w_h), variant, bias, bns, out_bn)

    @property
    def c_in(self):
        return self.d * self.s_in

    @property
    def c_out(self):
        return self.d * self.s_out

    def bn_states(self):
        states = list(self.bns) if self.bns else []
        if self.out_bn is not None:
            states.append(self.out_bn)
        return states

    def named_params(self, prefix=""):
        yield prefix + "w_x", self.w_x
        yield prefix + "w_h", self.w_h
        if self.bias is not None:
            yield prefix + "b", self.bias
        if self.bns:
            for i, s in enumerate(self.bns):
                yield f"{prefix}bn{i}.gamma", s.gamma
                yield f"{prefix}bn{i}.beta", s.beta
        if self.out_bn is not None:
            yield prefix + "out_bn.gamma", self.out_bn.gamma
            yield prefix + "out_bn.beta", self.out_bn.beta

    def num_params(self):
        """Exact trainable scalar count of this layer instance."""
        return sum(p.data.size for _, p in self.named_params())


def _check_input(x, p):
    if x.ndim != 4:
        raise ShapeError(f"CRC input must be 4-D, got {x.shape}")
    if x.shape[1] != p.c_in:
        raise ShapeError(
            f"CRC input channels {x.shape[1]} != d*S_in = {p.d}*{p.s_in} = {p.c_in}"
        )


def _step_nonlinearity(p, i, pre, update_running):
    """Apply the variant's per-step sigma; returns (h, cache-for-backward)."""
    v = p.variant
    if v is CrcVariant.RELU:
        return relu(pre), None
    if v is CrcVariant.SEPARATE_BN_RELU:
        z = batchnorm_forward(pre, p.bns[i], update_running=update_running)
        return relu(z), z
    if v is CrcVariant.SHARED_BN_RELU:
        z = batchnorm_forward(pre, p.bns[0], update_running=update_running)
        return relu(z), z
    return pre, None  # LINEAR: sigma applied to the concatenation, not per step


def _step_nonlinearity_backward(p, i, grad_h, pre, z):
    """Backward of the per-step sigma; returns grad wrt pre and accumulates BN grads."""
    v = p.variant
    if v is CrcVariant.RELU:
        return relu_backward(pre, grad_h)
    if v in (CrcVariant.SEPARATE_BN_RELU, CrcVariant.SHARED_BN_RELU):
        state = p.bns[i] if v is CrcVariant.SEPARATE_BN_RELU else p.bns[0]
        grad_z = relu_backward(z, grad_h)
        grad_pre, grad_gamma, grad_beta = batchnorm_backward(pre, state, grad_z)
        state.gamma.accumulate(grad_gamma)
        state.beta.accumulate(grad_beta)
        return grad_pre
    return grad_h


def iter_hidden_segments(x, p, update_running=True, keep_cache=False):
    """Run the recurrence, yielding (i, h_i, step_cache) per segment.

    h_i is the per-step hidden state after the per-step sigma. For the
    linear variant that is the raw recurrence value; the output-side BN+ReLU
    belongs to whoever consumes the segments. step_cache is None unless
    keep_cache is set.
    """
    x = _as_array(x)
    _check_input(x, p)
    bias = p.bias.data if p.bias is not None else None
    h_prev = None
    for i in range(p.d):
        x_i = x[:, i * p.s_in:(i + 1) * p.s_in]
        pre = conv2d_forward(x_i, p.w_x, bias=bias, padding="same")
        if i > 0:
            pre += conv2d_forward(h_prev, p.w_h, padding="same")
        h, z = _step_nonlinearity(p, i, pre, update_running)
        cache = {"pre": pre, "z": z, "h_prev": h_prev, "h": h} if keep_cache else None
        yield i, h, cache
        h_prev = h


def crc_forward_cached(x, p, update_running=True):
    """Forward pass returning (output, cache) for a subsequent backward."""
    x = _as_array(x)
    steps = []
    segs = []
    for _, h, cache in iter_hidden_segments(x, p, update_running, keep_cache=True):
        steps.append(cache)
        segs.append(h)
    y = np.concatenate(segs, axis=1)
    cache = {"steps": steps}
    if p.variant is CrcVariant.LINEAR:
        cache["concat"] = y
        z_out = batchnorm_forward(y, p.out_bn, update_running=update_running)
        cache["z_out"] = z_out
        y = relu(z_out)
    return y, cache


def crc_forward(x, p, update_running=True):
    """Output of the layer: concatenated hidden segments (plus the output
    BN+ReLU for the linear variant)."""
    y, _ = crc_forward_cached(x, p, update_running)
    return y


def crc_backward(x, p, grad_out, cache=None):
    """Backpropagation through time across the d segments.

    Accumulates parameter gradients into the layer's buffers (shared weights
    collect contributions from every step) and returns
    (grad_x, {name: grad contribution of this call}).
    """
    x = _as_array(x)
    grad_out = np.asarray(grad_out)
    if cache is None:
        # Recompute intermediates without touching BN running statistics.
        _, cache = crc_forward_cached(x, p, update_running=False)
    steps = cache["steps"]
    expect = (x.shape[0], p.c_out, x.shape[2], x.shape[3])
    if grad_out.shape != expect:
        raise ShapeError(f"grad_out shape {grad_out.shape} != output shape {expect}")

    before = {name: (None if q.grad is None else q.grad.copy())
              for name, q in p.named_params()}

    if p.variant is CrcVariant.LINEAR:
        grad_z = relu_backward(cache["z_out"], grad_out)
        grad_out, grad_gamma, grad_beta = batchnorm_backward(cache["concat"], p.out_bn, grad_z)
        p.out_bn.gamma.accumulate(grad_gamma)
        p.out_bn.beta.accumulate(grad_beta)

    s_out, s_in = p.s_out, p.s_in
    grad_x = np.empty_like(x)
    carry = None  # gradient flowing into h_i from step i+1 through w_h
    grad_bias = None
    for i in reversed(range(p.d)):
        grad_h = grad_out[:, i * s_out:(i + 1) * s_out].copy()
        if carry is not None:
            grad_h += carry
        st = steps[i]
        grad_pre = _step_nonlinearity_backward(p, i, grad_h, st["pre"], st["z"])
        x_i = x[:, i * s_in:(i + 1) * s_in]
        gx, gw, gb = conv2d_backward(x_i, p.w_x, grad_pre, padding="same")
        grad_x[:, i * s_in:(i + 1) * s_in] = gx
        p.w_x.accumulate(gw)
        if p.bias is not None:
            grad_bias = gb if grad_bias is None else grad_bias + gb
        if i > 0:
            carry, gwh, _ = conv2d_backward(st["h_prev"], p.w_h, grad_pre, padding="same")
            p.w_h.accumulate(gwh)
        else:
            carry = None
    if grad_bias is not None:
        p.bias.accumulate(grad_bias)
    if p.d == 1 and p.w_h.grad is None:
        # d=1 never exercises w_h; keep a zero buffer so every parameter
        # reports a gradient after backward.
        p.w_h.accumulate(np.zeros_like(p.w_h.data))

    grads = {}
    for name, q in p.named_params():
        prev = before[name]
        if q.grad is None:
            continue
        grads[name] = q.grad if prev is None else q.grad - prev
    return grad_x, grads


def compose_kernels(later, earlier):
    """Kernel of the map x -> (x * earlier) * later on an unbounded domain.

    For cross-correlation, chaining two kernels composes them by a full
    spatial convolution with channel contraction; the result has side
    k_earlier + k_later - 1.
    """
    later = _as_array(later)
    earlier = _as_array(earlier)
    q, o, kbh, kbw = later.shape
    o2, c, kah, kaw = earlier.shape
    if o != o2:
        raise ShapeError(f"kernel channel mismatch: {later.shape} o {earlier.shape}")
    out = np.zeros((q, c, kah + kbh - 1, kaw + kbw - 1),
                   dtype=np.result_type(later, earlier))
    for u in range(kbh):
        for v in range(kbw):
            out[:, :, u:u + kah, v:v + kaw] += np.einsum(
                "qo,ocij->qcij", later[:, :, u, v], earlier, optimize=True
            )
    return out


def crc_linear_unrolled(x, p, update_running=True):
    """Unrolled form of the linear recurrence: every output segment is
    computed independently from composed kernels.

        h_i = sum_j x_j * (W_x composed with W_h^(i-j))  +  bias chain

    The composed kernel for lag m has side k_x + m*(k_h - 1). Same-padded
    composition matches the step-by-step recurrence exactly wherever
    zero-padding truncation is not reached (everywhere, for inputs whose
    border is zero; on the interior margin otherwise).
    """
    if p.variant is not CrcVariant.LINEAR:
        raise ConfigError("unrolled evaluation requires the linear variant")
    x = _as_array(x)
    _check_input(x, p)

    # Composed kernels K_m = W_h applied m times after W_x.
    kernels = [p.w_x.data]
    for _ in range(1, p.d):
        kernels.append(compose_kernels(p.w_h.data, kernels[-1]))

    # Bias chains: a constant field b maps through W_h (unbounded domain) to
    # the constant M b, with M the spatial sum of the kernel. Segment i
    # receives sum_{j=0..i} M^j b.
    m_mat = p.w_h.data.sum(axis=(2, 3))
    power = p.bias.data.astype(m_mat.dtype)
    total = power.copy()
    chains = [total.copy()]
    for _ in range(1, p.d):
        power = m_mat @ power
        total = total + power
        chains.append(total)

    segs = []
    for i in range(p.d):
        acc = None
        for j in range(i + 1):
            k = kernels[i - j]
            contrib = conv2d_forward(
                x[:, j * p.s_in:(j + 1) * p.s_in], k, padding="same"
            )
            acc = contrib if acc is None else acc + contrib
        acc += chains[i][:, None, None]
        segs.append(acc)
    y = np.concatenate(segs, axis=1)
    return relu(batchnorm_forward(y, p.out_bn, update_running=update_running))


def grouped_shared_forward(x, p, update_running=True):
    """Non-recurrent control: each segment independently passes through W_x
    then W_h (same padding each), then the variant's sigma. No data flows
    across segments, so the map is equivariant to segment permutation, yet
    the parameter set is exactly that of the recurrent layer."""
    x = _as_array(x)
    _check_input(x, p)
    bias = p.bias.data if p.bias is not None else None
    segs = []
    for i in range(p.d):
        x_i = x[:, i * p.s_in:(i + 1) * p.s_in]
        t = conv2d_forward(x_i, p.w_x, bias=bias, padding="same")
        t = conv2d_forward(t, p.w_h, padding="same")
        h, _ = _step_nonlinearity(p, i, t, update_running)
        segs.append(h)
    y = np.concatenate(segs, axis=1)
    if p.variant is CrcVariant.LINEAR:
        y = relu(batchnorm_forward(y, p.out_bn, update_running=update_running))
    return y
