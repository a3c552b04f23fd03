"""RecNet assembly and analytic cost accounting.

A network is fully determined by the 7-tuple (e, S1, S2, S3, d1, d2, d3)
plus the class count: a 3x3 stem to S1*d1 channels, three stages of two
recurrent modules each (max-pooling between stages), global average
pooling, and a linear classifier. Every CRC layer expands its segment width
by the factor e (S_out = e * S_in).

The accounting functions reproduce the layer ledger (output channels,
output size, parameters, FLOPs) analytically, without building the network.
One FLOP means one multiply-add; pooling, BN and activations are not
counted. Conventions:

  formula-only      convolution / linear weight matrices only
  with-bn           + batch-norm affine pairs and the classifier bias
  with-bn-and-bias  + every bias vector the parameterization carries
                    (equals the exact trainable scalar count of the
                    built model)
"""

from dataclasses import dataclass, field

import numpy as np

from . import config
from .crc import CrcVariant
from .errors import ConfigError, ShapeError
from .rec import RecModule, rec_backward, rec_forward, rec_forward_cached
from .tensor import (
    BnState,
    ConvKernel,
    Param,
    _as_array,
    avgpool_global,
    avgpool_global_backward,
    batchnorm_backward,
    batchnorm_forward,
    conv2d_backward,
    conv2d_forward,
    linear_backward,
    linear_forward,
    maxpool2,
    maxpool2_backward,
    relu,
    relu_backward,
)

CONVENTIONS = ("formula-only", "with-bn", "with-bn-and-bias")


@dataclass(frozen=True)
class RecNetConfig:
    """The 7-tuple plus class count and layer options."""

    e: int
    s1: int
    s2: int
    s3: int
    d1: int
    d2: int
    d3: int
    n_classes: int = 10
    variant: CrcVariant = CrcVariant.SEPARATE_BN_RELU
    k_x: int = 3
    k_h: int = 3
    in_channels: int = 3
    in_size: int = 32

    def __post_init__(self):
        for name in ("e", "s1", "s2", "s3", "d1", "d2", "d3", "n_classes"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.k_x not in (1, 3) or self.k_h not in (1, 3):
            raise ConfigError(f"kernel sizes must be 1 or 3, got ({self.k_x}, {self.k_h})")
        if self.in_size % 4 != 0 or self.in_size < 4:
            raise ConfigError(f"input size must be a positive multiple of 4, got {self.in_size}")

    @property
    def tuple7(self):
        return (self.e, self.s1, self.s2, self.s3, self.d1, self.d2, self.d3)

    @property
    def stage_widths(self):
        """Per-stage (S_i, d_i, S_i*d_i)."""
        return ((self.s1, self.d1, self.s1 * self.d1),
                (self.s2, self.d2, self.s2 * self.d2),
                (self.s3, self.d3, self.s3 * self.d3))

    def arch_string(self):
        return ",".join(str(v) for v in self.tuple7)

    @classmethod
    def from_arch_string(cls, text, **overrides):
        parts = [p.strip() for p in text.split(",")]
        if len(parts) != 7:
            raise ConfigError(f"architecture needs 7 comma-separated integers, got {len(parts)}: {text!r}")
        values = []
        for name, p in zip(("e", "S1", "S2", "S3", "d1", "d2", "d3"), parts):
            try:
                values.append(int(p))
            except ValueError:
                raise ConfigError(f"field {name} is not an integer: {p!r}") from None
        return cls(*values, **overrides)


def acronym(cfg):
    """RecNet-<depth>-<width>: depth counts both CRC layers of every stage
    (2 * (d1+d2+d3)); width is the widest simulated feature map
    e * max(S_i * d_i)."""
    depth = 2 * (cfg.d1 + cfg.d2 + cfg.d3)
    width = cfg.e * max(a for _, _, a in cfg.stage_widths)
    return f"RecNet-{depth}-{width}"


# ---------------------------------------------------------------------------
# analytic accounting


@dataclass
class LayerLedgerRow:
    name: str
    out_channels: int
    out_h: int
    out_w: int
    params: int
    flops: int


def crc_layer_params(s_in, s_out, d, k_x=3, k_h=3,
                     variant=CrcVariant.SEPARATE_BN_RELU, convention="with-bn"):
    """Parameter count of one CRC layer.

    The convolution weights are k_x^2*S_in*S_out + k_h^2*S_out^2, independent
    of d; only the per-step normalization scales with d.
    """
    if convention not in CONVENTIONS:
        raise ConfigError(f"unknown convention {convention!r}")
    total = k_x * k_x * s_in * s_out + k_h * k_h * s_out * s_out
    if convention == "formula-only":
        return total
    if variant is CrcVariant.SEPARATE_BN_RELU:
        total += d * 2 * s_out
    elif variant is CrcVariant.SHARED_BN_RELU:
        total += 2 * s_out
    elif variant is CrcVariant.LINEAR:
        total += 2 * d * s_out
    if convention == "with-bn-and-bias" and variant in (CrcVariant.RELU, CrcVariant.LINEAR):
        total += s_out
    return total


def dense_conv_params(c_in, c_out, k=3):
    """Weight count of the ordinary convolution a CRC layer simulates."""
    return c_in * c_out * k * k


def crc_layer_flops(c_in, c_out, d, h, w, k_x=3, k_h=3):
    """FLOPs of one CRC layer at spatial size h x w, in layer-channel terms:
    H*W*(k_x^2*C_in + k_h^2*C_out)*C_out/d multiply-adds for the two kernels
    plus 2*H*W*C_out additions for the recurrence merge and bias."""
    conv = h * w * (k_x * k_x * c_in + k_h * k_h * c_out) * c_out // d
    return conv + 2 * h * w * c_out


def ledger(cfg, convention="with-bn"):
    """Per-layer rows mirroring the architecture table; returns a list of
    LayerLedgerRow."""
    if convention not in CONVENTIONS:
        raise ConfigError(f"unknown convention {convention!r}")
    bn = convention != "formula-only"
    rows = []
    size = cfg.in_size
    a1 = cfg.s1 * cfg.d1
    stem_params = cfg.in_channels * a1 * 9 + (2 * a1 if bn else 0)
    rows.append(LayerLedgerRow("CONV (3x3) + BN + ReLU", a1, size, size,
                               stem_params, size * size * cfg.in_channels * a1 * 9))

    stage_out = [cfg.s1 * cfg.d1, cfg.s2 * cfg.d2, cfg.s3 * cfg.d3]
    for stage in range(3):
        s, d, a = cfg.stage_widths[stage]
        s_out = cfg.e * s
        c_in, c_out = d * s, d * s_out
        next_a = stage_out[stage + 1] if stage < 2 else stage_out[2]
        for tb_out in (a, next_a):
            crc_p = crc_layer_params(s, s_out, d, cfg.k_x, cfg.k_h, cfg.variant, convention)
            rows.append(LayerLedgerRow(
                f"CRC ({s}, {s_out}, {d})", c_out, size, size,
                crc_p, crc_layer_flops(c_in, c_out, d, size, size, cfg.k_x, cfg.k_h)))
            tb_p = c_out * tb_out + (2 * tb_out if bn else 0)
            rows.append(LayerLedgerRow(
                f"TB ({c_out}, {tb_out})", tb_out, size, size,
                tb_p, size * size * c_out * tb_out))
        if stage < 2:
            size //= 2
            rows.append(LayerLedgerRow("Max Pooling (2x2)", next_a, size, size, 0, 0))

    a3 = stage_out[2]
    rows.append(LayerLedgerRow(f"Average Pooling ({size}x{size})", a3, 1, 1, 0, 0))
    fc_params = a3 * cfg.n_classes
    if convention != "formula-only":
        fc_params += cfg.n_classes
    rows.append(LayerLedgerRow(f"Linear ({a3}, {cfg.n_classes})", cfg.n_classes, 1, 1,
                               fc_params, a3 * cfg.n_classes))
    return rows


def param_count(cfg, convention="with-bn"):
    """(rows, total parameters) for the given counting convention."""
    rows = ledger(cfg, convention)
    return rows, sum(r.params for r in rows)


def flop_count(cfg):
    """(rows, total FLOPs); multiply-add counting, pooling/BN/ReLU free."""
    rows = ledger(cfg)
    return rows, sum(r.flops for r in rows)


def ledger_text(rows, cfg=None):
    lines = []
    if cfg is not None:
        lines.append(f"{acronym(cfg)}  arch={cfg.arch_string()}  classes={cfg.n_classes}")
    header = f"{'layer':<28} {'out_ch':>7} {'out_size':>9} {'params':>12} {'flops':>14}"
    lines.append(header)
    lines.append("-" * len(header))
    for r in rows:
        lines.append(f"{r.name:<28} {r.out_channels:>7} {f'{r.out_h}x{r.out_w}':>9} "
                     f"{r.params:>12,} {r.flops:>14,}")
    lines.append("-" * len(header))
    lines.append(f"{'total':<28} {'':>7} {'':>9} {sum(r.params for r in rows):>12,} "
                 f"{sum(r.flops for r in rows):>14,}")
    return "\n".join(lines)


def ledger_csv(rows):
    lines = ["layer,out_channels,out_h,out_w,params,flops"]
    for r in rows:
        name = '"' + r.name.replace('"', '""') + '"' if "," in r.name else r.name
        lines.append(f"{name},{r.out_channels},{r.out_h},{r.out_w},{r.params},{r.flops}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# the built network


class RecNetModel:
    """Instantiated network; immutable wiring, mutable parameters."""

    def __init__(self, cfg, rng=None, dtype=None):
        rng = rng or np.random.default_rng()
        dtype = dtype or config.default_dtype()
        self.cfg = cfg
        a1 = cfg.s1 * cfg.d1
        self.stem_w = ConvKernel(
            rng.normal(0.0, np.sqrt(2.0 / (cfg.in_channels * 9)),
                       (a1, cfg.in_channels, 3, 3)).astype(dtype))
        self.stem_bn = BnState(a1, dtype=dtype)

        stage_out = [cfg.s1 * cfg.d1, cfg.s2 * cfg.d2, cfg.s3 * cfg.d3]
        self.modules = []
        for stage in range(3):
            s, d, a = cfg.stage_widths[stage]
            next_a = stage_out[stage + 1] if stage < 2 else stage_out[2]
            for tb_out in (a, next_a):
                self.modules.append(RecModule.create(
                    s, cfg.e * s, tb_out, d, cfg.k_x, cfg.k_h, cfg.variant,
                    rng=rng, dtype=dtype))

        a3 = stage_out[2]
        # Zero-initialized classifier: an untrained model outputs the uniform
        # distribution (initial loss ln(n_classes)); gradients flow from the
        # first step regardless.
        self.fc_w = Param(np.zeros((cfg.n_classes, a3), dtype=dtype))
        self.fc_b = Param(np.zeros(cfg.n_classes, dtype=dtype))
        self._pool_after = (1, 3)  # module indices followed by max pooling

    # -- parameter plumbing --------------------------------------------------

    def named_params(self):
        yield "stem.w", self.stem_w
        yield "stem.bn.gamma", self.stem_bn.gamma
        yield "stem.bn.beta", self.stem_bn.beta
        for i, mod in enumerate(self.modules):
            yield from mod.named_params(f"m{i}.")
        yield "fc.w", self.fc_w
        yield "fc.b", self.fc_b

    def decay_names(self):
        """Parameters subject to weight decay: convolution and linear
        weights; BN affine parameters and biases are excluded."""
        names = set()
        for name, _ in self.named_params():
            leaf = name.rsplit(".", 1)[-1]
            if leaf in ("w", "w_x", "w_h", "a") or name == "fc.w":
                names.add(name)
        return names

    def named_bn_states(self):
        yield "stem.bn", self.stem_bn
        for i, mod in enumerate(self.modules):
            if mod.crc.bns:
                for j, s in enumerate(mod.crc.bns):
                    yield f"m{i}.crc.bn{j}", s
            if mod.crc.out_bn is not None:
                yield f"m{i}.crc.out_bn", mod.crc.out_bn
            yield f"m{i}.tb.bn", mod.tb.bn

    def named_tensors(self):
        """Trainable parameters plus BN running statistics (checkpoint set)."""
        for name, p in self.named_params():
            yield name, p.data
        for name, s in self.named_bn_states():
            yield name + ".running_mean", s.running_mean
            yield name + ".running_var", s.running_var

    def num_params(self):
        return sum(p.data.size for _, p in self.named_params())

    def set_mode(self, mode):
        if mode not in ("train", "eval"):
            raise ConfigError(f"unknown mode {mode!r}")
        for _, s in self.named_bn_states():
            s.mode = mode

    def zero_grad(self):
        for _, p in self.named_params():
            p.zero_grad()

    # -- execution -----------------------------------------------------------

    def _check_input(self, x):
        if x.ndim != 4 or x.shape[1] != self.cfg.in_channels:
            raise ShapeError(f"expected (N, {self.cfg.in_channels}, H, W), got {x.shape}")
        if x.shape[2] != self.cfg.in_size or x.shape[3] != self.cfg.in_size:
            raise ShapeError(f"expected spatial {self.cfg.in_size}, got {x.shape[2:]}")

    def forward(self, x):
        """Inference pass; recurrent modules run in their configured mode
        (merged by default)."""
        x = _as_array(x)
        self._check_input(x)
        cur = relu(batchnorm_forward(conv2d_forward(x, self.stem_w, padding="same"),
                                     self.stem_bn, update_running=False))
        for i, mod in enumerate(self.modules):
            cur = rec_forward(cur, mod, update_running=False)
            if i in self._pool_after:
                cur, _ = maxpool2(cur)
        pooled = avgpool_global(cur)
        flat = pooled.reshape(pooled.shape[0], -1)
        return linear_forward(flat, self.fc_w, self.fc_b)

    def forward_cached(self, x):
        """Training pass retaining intermediates; BN running stats update."""
        x = _as_array(x)
        self._check_input(x)
        cache = {"x": x}
        stem_pre = conv2d_forward(x, self.stem_w, padding="same")
        stem_z = batchnorm_forward(stem_pre, self.stem_bn)
        cur = relu(stem_z)
        cache["stem_pre"], cache["stem_z"] = stem_pre, stem_z
        mods = []
        for i, mod in enumerate(self.modules):
            y, mcache = rec_forward_cached(cur, mod)
            entry = {"x": cur, "cache": mcache}
            cur = y
            if i in self._pool_after:
                entry["pool_in_shape"] = cur.shape
                cur, idx = maxpool2(cur)
                entry["pool_idx"] = idx
            mods.append(entry)
        cache["mods"] = mods
        cache["gap_in_shape"] = cur.shape
        pooled = avgpool_global(cur)
        flat = pooled.reshape(pooled.shape[0], -1)
        cache["flat"] = flat
        return linear_forward(flat, self.fc_w, self.fc_b), cache

    def backward(self, cache, grad_logits):
        """Accumulate gradients for a forward_cached pass."""
        grad_flat, g_w, g_b = linear_backward(cache["flat"], self.fc_w, grad_logits)
        self.fc_w.accumulate(g_w)
        self.fc_b.accumulate(g_b)
        n, c, h, w = cache["gap_in_shape"]
        grad = avgpool_global_backward(grad_flat.reshape(n, c, 1, 1), cache["gap_in_shape"])
        for i in reversed(range(len(self.modules))):
            entry = cache["mods"][i]
            if i in self._pool_after:
                grad = maxpool2_backward(entry["pool_idx"], grad, entry["pool_in_shape"])
            grad, _ = rec_backward(entry["x"], self.modules[i], grad, entry["cache"])
        grad = relu_backward(cache["stem_z"], grad)
        grad, g_gamma, g_beta = batchnorm_backward(cache["stem_pre"], self.stem_bn, grad)
        self.stem_bn.gamma.accumulate(g_gamma)
        self.stem_bn.beta.accumulate(g_beta)
        grad_x, g_stem, _ = conv2d_backward(cache["x"], self.stem_w, grad, padding="same")
        self.stem_w.accumulate(g_stem)
        return grad_x


def build(cfg, seed=None, rng=None, dtype=None):
    """Construct a RecNetModel from its configuration.

    Hidden weights draw from a zero-mean normal with std sqrt(2/fan_in); BN
    starts at identity (gamma=1, beta=0); the classifier weights and all
    biases start at zero.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    return RecNetModel(cfg, rng=rng, dtype=dtype)
