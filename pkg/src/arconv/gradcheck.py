"""Central finite-difference verification of analytical gradients.

Every differentiable op in the package is exercised by a named check
that compares backward-pass gradients against a two-sided difference
quotient in float64.  The suite powers both the test suite and the
``gradcheck`` command.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheckFailure, ConfigurationError
from .tensor import Tensor, concat


def numeric_grad(loss_fn, target: Tensor, step: float = 1e-6,
                 elements=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Two-sided difference quotient of loss_fn w.r.t. ``target``.

    ``loss_fn`` takes no arguments and must re-read ``target.data``.
    ``elements`` limits the probe to that many random entries (the rest
    of the returned array holds NaN); None probes every entry.
    """
    base = target.data
    flat = base.reshape(-1)
    out = np.full(flat.shape, np.nan)
    if elements is None or elements >= flat.size:
        idx = np.arange(flat.size)
    else:
        rng = rng or np.random.default_rng(0)
        idx = rng.choice(flat.size, size=elements, replace=False)
    for i in idx:
        keep = flat[i]
        flat[i] = keep + step
        up = float(loss_fn())
        flat[i] = keep - step
        dn = float(loss_fn())
        flat[i] = keep
        out[i] = (up - dn) / (2.0 * step)
    return out.reshape(base.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray,
              floor: float = 1e-8) -> float:
    """Worst relative disagreement over the probed (non-NaN) entries."""
    mask = ~np.isnan(numeric)
    if not mask.any():
        return 0.0
    a = analytic[mask]
    n = numeric[mask]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom))


def check_gradients(build_loss, leaves: list[Tensor], step: float = 1e-6,
                    elements=None, rng: np.random.Generator | None = None,
                    floor: float = 1e-8, mangle=None) -> float:
    """Compare backward gradients of ``build_loss()`` against differences.

    ``build_loss`` constructs the loss Tensor from the current leaf
    data on every call.  Returns the worst relative error across all
    leaves.  ``floor`` bounds the denominator: differences cannot
    resolve gradient entries below roughly eps * |loss| / step, so
    entries that small are compared absolutely against the floor.
    ``mangle`` (a fault-injection hook for harness self-tests) is
    applied to each analytic gradient before the comparison.
    """
    for leaf in leaves:
        leaf.zero_grad()
    loss = build_loss()
    loss.backward()
    worst = 0.0
    for leaf in leaves:
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        if mangle is not None:
            analytic = mangle(analytic)
        numeric = numeric_grad(lambda: build_loss().data, leaf, step=step,
                               elements=elements, rng=rng)
        worst = max(worst, rel_error(analytic, numeric, floor=floor))
    return worst


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    limit: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.limit


# ------------------------------------------------------------- named suite

_LIMIT = 1e-4


def _leaf(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, size=shape), requires_grad=True)


def _kinked_leaf(rng, shape, margin=0.25) -> Tensor:
    """Values kept ``margin`` away from zero so difference steps never
    cross the kink of abs/relu."""
    sign = np.where(rng.random(shape) < 0.5, -1.0, 1.0)
    return Tensor(sign * (margin + rng.random(shape)), requires_grad=True)


def _binary(op):
    def run(rng):
        a = _leaf(rng, (3, 4))
        b = _leaf(rng, (3, 4))
        return check_gradients(lambda: op(a, b).sum(), [a, b], step=1e-6,
                               floor=1e-6)
    return run


def _check_neg(rng):
    a = _leaf(rng, (3, 4))
    return check_gradients(lambda: (-a).mean(), [a], step=1e-6, floor=1e-6)


def _check_abs(rng):
    a = _kinked_leaf(rng, (4, 4))
    return check_gradients(lambda: a.abs().sum(), [a], step=1e-6, floor=1e-6)


def _check_relu(rng):
    a = _kinked_leaf(rng, (4, 4))
    return check_gradients(lambda: a.relu().sum(), [a], step=1e-6, floor=1e-6)


def _check_sigmoid(rng):
    a = _leaf(rng, (3, 4), lo=-3.0, hi=3.0)
    return check_gradients(lambda: a.sigmoid().sum(), [a], step=1e-6,
                           floor=1e-6)


def _check_mean(rng):
    a = _leaf(rng, (2, 3, 4))
    return check_gradients(lambda: (a.mean(axes=(1, 2)) * a.mean()).sum(),
                           [a], step=1e-6, floor=1e-6)


def _check_sum(rng):
    a = _leaf(rng, (2, 3, 4))
    return check_gradients(
        lambda: (a.sum(axes=(0, 2), keepdims=True) * Tensor(2.0)).sum(),
        [a], step=1e-6, floor=1e-6)


def _check_concat(rng):
    a = _leaf(rng, (2, 3))
    b = _leaf(rng, (2, 5))
    return check_gradients(lambda: (concat([a, b], axis=1) * concat(
        [b, a], axis=1)).sum(), [a, b], step=1e-6, floor=1e-6)


def _check_conv2d(rng):
    from .conv import ConvKernel, conv2d

    x = _leaf(rng, (2, 3, 7, 8))
    w = _leaf(rng, (4, 3, 3, 3), lo=-0.5, hi=0.5)
    b = _leaf(rng, (4,), lo=-0.5, hi=0.5)
    def loss():
        k = ConvKernel(w, b, stride=(2, 1), padding=(1, 1))
        return (conv2d(x, k) * conv2d(x, k)).mean()
    # Piecewise-linear in each leaf entry, so the larger step only
    # averages away rounding noise.
    return check_gradients(loss, [x, w, b], step=1e-3, elements=40,
                           rng=np.random.default_rng(0), floor=1e-6)


def _check_conv2d_transposed(rng):
    from .conv import ConvKernel, conv2d_transposed

    x = _leaf(rng, (2, 4, 5, 5))
    w = _leaf(rng, (4, 3, 2, 2), lo=-0.5, hi=0.5)
    b = _leaf(rng, (3,), lo=-0.5, hi=0.5)
    def loss():
        k = ConvKernel(w, Tensor(np.zeros(4)), stride=(2, 2), padding=(0, 0))
        y = conv2d_transposed(x, k, bias=b)
        return (y * y).mean()
    return check_gradients(loss, [x, w, b], step=1e-3, elements=40,
                           rng=np.random.default_rng(1), floor=1e-6)


def _check_sample_cols(rng):
    from .sampling import KernelSpec, sample_cols

    spec = KernelSpec(3, 3)
    x = _leaf(rng, (1, 2, 7, 7))
    # Extents fixed where every bilinear read sits far from cell edges.
    h = Tensor(np.full((1, 1, 7, 7), 2.4), requires_grad=True)
    w = Tensor(np.full((1, 1, 7, 7), 3.1), requires_grad=True)
    def loss():
        s = sample_cols(x, h, w, spec)
        return (s * s).mean()
    return check_gradients(loss, [x, h, w], step=1e-5, elements=40,
                           rng=np.random.default_rng(2), floor=1e-6)


def _check_sk_center(rng):
    from .layer import sk_center

    sk = _leaf(rng, (3, 2, 7, 7))
    return check_gradients(lambda: (sk_center(sk, 3, 5) * sk_center(
        sk, 3, 5)).sum(), [sk], step=1e-5, elements=40,
        rng=np.random.default_rng(3), floor=1e-6)


def _layer_setup(rng, c_in=2, c_out=3):
    from .layer import HWRange, arconv_params

    r18 = HWRange.from_label("1-18")
    params = arconv_params(np.random.default_rng(11), c_in, c_out, r18, r18,
                           dtype=np.float64)
    # Lift extractor biases so difference steps clear every relu kink.
    params.extract1.bias.data[:] = 0.05
    params.extract2.bias.data[:] = 0.05
    x = _leaf(rng, (1, c_in, 8, 8), lo=0.0, hi=1.0)
    return params, x


def _check_arconv(rng):
    from .layer import arconv_forward
    from .sampling import KernelSpec

    params, x = _layer_setup(rng)
    leaves = [x] + [t for _, t in params.named_parameters("p")]
    def loss():
        y = arconv_forward(x, params, spec=KernelSpec(3, 3))
        return (y * y).mean()
    return check_gradients(loss, leaves, step=1e-5, elements=3,
                           rng=np.random.default_rng(4), floor=1e-6)


def _check_miniature_net(rng):
    """Stem + two residual blocks + head, checked through the l1 loss.

    Seeds are pinned rather than taken from the suite stream: bias
    probes shift a whole channel at once, so every relu preactivation
    must clear the difference step by a wide margin, and this seed pair
    was picked for the largest such margin.
    """
    from .conv import conv2d, conv_kernel
    from .layer import HWRange, arconv_params, arconv_forward
    from .sampling import KernelSpec

    kr = np.random.default_rng(23)
    c = 3
    stem = conv_kernel(kr, 3, c, 3, padding=1, dtype=np.float64)
    blocks = []
    for _ in range(2):
        pair = []
        for _ in range(2):
            r9 = HWRange.from_label("1-9")
            p = arconv_params(kr, c, c, r9, r9, dtype=np.float64)
            p.extract1.bias.data[:] = 0.05
            p.extract2.bias.data[:] = 0.05
            pair.append(p)
        blocks.append(pair)
    head = conv_kernel(kr, c, 2, 3, padding=1, dtype=np.float64)

    irng = np.random.default_rng([0, 15, 6])
    pan = Tensor(irng.random((1, 1, 8, 8)))
    up = Tensor(irng.random((1, 2, 8, 8)))
    spec = KernelSpec(3, 3)

    margins = []

    def forward(track=False):
        x = conv2d(concat([pan, up], axis=1), stem)
        if track:
            margins.append(float(np.abs(x.data).min()))
        x = x.relu()
        for ar1, ar2 in blocks:
            y1 = arconv_forward(x, ar1, spec=spec)
            if track:
                margins.append(float(np.abs(y1.data).min()))
            y2 = arconv_forward(y1.relu(), ar2, spec=spec)
            s = x + y2
            if track:
                margins.append(float(np.abs(s.data).min()))
            x = s.relu()
        return up + conv2d(x, head)

    # Target sits a fixed margin off the initial output so difference
    # steps never cross the loss kink at out == target.
    sign = np.where(irng.random((1, 2, 8, 8)) < 0.5, -1.0, 1.0)
    target = Tensor(forward(track=True).data + 0.3 * sign)
    if min(margins) < 5e-5:
        raise CheckFailure(
            f"miniature-net relu margin {min(margins):.1e} is inside the "
            f"difference step; reseed this check")

    def loss():
        return (forward() - target).abs().mean()

    leaves = [stem.weights, stem.bias, head.weights, head.bias]
    for pair in blocks:
        for p in pair:
            leaves += [t for _, t in p.named_parameters("b")]
    return check_gradients(loss, leaves, step=1e-5, elements=2,
                           rng=np.random.default_rng(5), floor=1e-6)


_SUITE = [
    ("tensor.add", _binary(lambda a, b: a + b)),
    ("tensor.sub", _binary(lambda a, b: a - b)),
    ("tensor.mul", _binary(lambda a, b: a * b)),
    ("tensor.neg", _check_neg),
    ("tensor.abs", _check_abs),
    ("tensor.relu", _check_relu),
    ("tensor.sigmoid", _check_sigmoid),
    ("tensor.mean", _check_mean),
    ("tensor.sum", _check_sum),
    ("tensor.concat", _check_concat),
    ("conv.conv2d", _check_conv2d),
    ("conv.conv2d_transposed", _check_conv2d_transposed),
    ("sampling.sample_cols", _check_sample_cols),
    ("layer.sk_center", _check_sk_center),
    ("layer.arconv_forward", _check_arconv),
    ("network.miniature_l1", _check_miniature_net),
]


def suite_names() -> list[str]:
    return [name for name, _ in _SUITE]


def run_suite(fault: str | None = None, seed: int = 0) -> list[CheckResult]:
    """Run every named check; ``fault`` flips the analytic gradient sign
    of that one check to prove the harness catches wrong gradients."""
    if fault is not None and fault not in suite_names():
        raise ConfigurationError(
            f"unknown gradient check {fault!r}; have {', '.join(suite_names())}")
    results = []
    for i, (name, fn) in enumerate(_SUITE):
        rng = np.random.default_rng([seed, i])
        if name == fault:
            err = _with_mangle(fn, rng)
        else:
            err = fn(rng)
        results.append(CheckResult(name, err, _LIMIT))
    return results


def _with_mangle(fn, rng):
    """Re-enter ``fn`` with the sign-flip hook patched into the harness."""
    import functools
    global check_gradients
    original = check_gradients

    @functools.wraps(original)
    def patched(*args, **kw):
        kw["mangle"] = lambda g: -g
        return original(*args, **kw)

    check_gradients = patched
    try:
        return fn(rng)
    finally:
        check_gradients = original


def require_pass(results: list[CheckResult]) -> None:
    bad = [r for r in results if not r.passed]
    if bad:
        names = ", ".join(f"{r.name} ({r.max_rel_err:.2e})" for r in bad)
        raise CheckFailure(f"gradient checks failed: {names}")
