"""Central finite-difference verification of every adjoint.

``gradcheck_suite`` runs one case per differentiable operation plus the full
six-term loss through three depth-1 networks on an 8x8 image, and reports the
worst relative error seen for each.
"""

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import ops
from .engine import EngineConfig, build_networks, run_networks, total_loss
from .tensor import Tensor, no_grad, reset_tape
from .trimap import TrimapMasks
from .unet import UNetConfig

TOLERANCE = 1e-3
STEP = 1e-6
# relative error denominator floor; keeps roundoff on near-zero gradients from dominating
DENOM_FLOOR = 1e-6


@dataclass
class GradcheckCase:
    name: str
    fn: Callable
    make_inputs: Callable
    points: int = 10


@dataclass
class GradcheckReport:
    errors: dict = field(default_factory=dict)
    tolerance: float = TOLERANCE
    dtype: str = "float64"

    @property
    def passed(self):
        return all(err <= self.tolerance for err in self.errors.values())

    def failures(self):
        return [name for name, err in self.errors.items() if not err <= self.tolerance]

    def lines(self):
        out = []
        for name, err in self.errors.items():
            status = "PASS" if err <= self.tolerance else "FAIL"
            out.append(f"{status} {name:18s} max_rel_err={err:.3e}")
        out.append(f"{'PASS' if self.passed else 'FAIL'} overall tolerance={self.tolerance:g} dtype={self.dtype}")
        return out


def _scalarize(outputs, weights):
    total = None
    for out, w in zip(outputs, weights):
        term = out if out.data.size == 1 else ops.sum_all(ops.mul(out, Tensor(w, dtype=out.dtype)))
        total = term if total is None else ops.add(total, term)
    return total


def _as_tuple(x):
    return x if isinstance(x, (tuple, list)) else (x,)


def max_relative_error(fn, inputs, rng, points=10, step=STEP, dtype=np.float64, targets=None):
    """Compare backward against central differences at ``points`` entries per input.

    ``fn`` maps tensors to a tensor (or tuple of tensors); non-scalar outputs
    are contracted with fixed random weights.  ``targets`` restricts which
    inputs are perturbed (default: all).
    """
    tensors = [x if isinstance(x, Tensor) else Tensor(np.array(x, dtype=dtype)) for x in inputs]
    for t in tensors:
        t.requires_grad = True
        t.grad = None
    targets = tensors if targets is None else targets
    reset_tape()
    outs = _as_tuple(fn(*tensors))
    weights = [rng.standard_normal(o.shape) for o in outs]
    loss = _scalarize(outs, weights)
    loss.backward()
    reset_tape()

    def evaluate():
        with no_grad():
            return _scalarize(_as_tuple(fn(*tensors)), weights).item()

    worst = 0.0
    for t in targets:
        analytic = np.zeros(t.shape) if t.grad is None else np.asarray(t.grad, dtype=np.float64)
        flat = t.data.reshape(-1)
        picks = rng.choice(flat.size, size=min(points, flat.size), replace=False)
        for idx in picks:
            orig = flat[idx]
            flat[idx] = orig + step
            up = evaluate()
            flat[idx] = orig - step
            down = evaluate()
            flat[idx] = orig
            numeric = (up - down) / (2 * step)
            a = analytic.reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), DENOM_FLOOR)
            worst = max(worst, err)
    return worst


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin + x, x)


def _mask(rng, shape):
    m = rng.random(shape) < 0.5
    m.flat[0] = True
    return m


def op_cases():
    """One case per entry of ``ops.DIFFERENTIABLE_OPS``."""
    n = lambda *s: (lambda rng: [rng.standard_normal(x) for x in s])  # noqa: E731
    return [
        GradcheckCase("conv2d", lambda x, w, w2: (ops.conv2d(x, w, 1), ops.conv2d(x, w2, 2)),
                      n((2, 7, 6), (3, 2, 3, 3), (2, 2, 3, 3))),
        GradcheckCase("add_channel_bias", ops.add_channel_bias, n((3, 4, 5), (3,))),
        GradcheckCase("upsample_nearest", lambda x: ops.upsample_nearest(x, 2), n((2, 3, 4))),
        GradcheckCase("leaky_relu", lambda x: ops.leaky_relu(x, 0.1),
                      lambda rng: [_away_from_zero(rng, (2, 4, 5))]),
        GradcheckCase("sigmoid", ops.sigmoid, n((2, 4, 5))),
        GradcheckCase("instance_norm", lambda x: ops.instance_norm(x, 1e-5), n((3, 4, 5))),
        GradcheckCase("add", ops.add, n((2, 3, 4), (2, 3, 4))),
        GradcheckCase("sub", ops.sub, n((2, 3, 4), (2, 3, 4))),
        GradcheckCase("mul", ops.mul, n((2, 3, 4), (2, 3, 4))),
        GradcheckCase("scalar_mul", lambda x: ops.scalar_mul(x, -2.5), n((2, 3, 4))),
        GradcheckCase("scalar_add", lambda x: ops.scalar_add(x, 0.75), n((2, 3, 4))),
        GradcheckCase("concat_channels", lambda a, b: ops.concat_channels([a, b]), n((2, 3, 4), (1, 3, 4))),
        GradcheckCase("repeat_channels", lambda x: ops.repeat_channels(x, 3), n((1, 3, 4))),
        GradcheckCase("abs", ops.abs, lambda rng: [_away_from_zero(rng, (2, 4, 5))]),
        GradcheckCase("square", ops.square, n((2, 3, 4))),
        GradcheckCase("spatial_grad_l1", ops.spatial_grad_l1, n((3, 5, 6))),
        GradcheckCase("sum_channels", ops.sum_channels, n((3, 4, 5))),
        GradcheckCase("masked_mean", lambda x, _m=_mask(np.random.default_rng(3), (5, 6)): ops.masked_mean(x, _m),
                      n((1, 5, 6))),
        GradcheckCase("sum_all", ops.sum_all, n((2, 3, 4))),
        GradcheckCase("crop", lambda x: ops.crop(x, 3, 4), n((2, 5, 6))),
    ]


def tiny_problem(rng, size=8):
    """Random image and a trimap with non-empty F, B and U."""
    image = rng.random((3, size, size))
    yy, xx = np.mgrid[:size, :size]
    d = np.hypot(yy - size / 2 + 0.5, xx - size / 2 + 0.5)
    masks = TrimapMasks.from_regions(d < size * 0.2, d > size * 0.4)
    return image, masks


def total_loss_error(seed, points=10, size=8, dtype="float64"):
    rng = np.random.default_rng(seed)
    unet = UNetConfig(depth=1, channels=(4,), skip_channels=2, input_noise_channels=4)
    cfg = EngineConfig(seed=seed, unet=unet, dtype=dtype)
    nets = build_networks(cfg, (size, size))
    image, masks = tiny_problem(rng, size)
    image_t = Tensor(image, dtype=dtype)
    params = [p for net in nets.values() for p in net.parameters()]

    def fn(*_):
        total, _terms = total_loss(*run_networks(nets), image_t, masks)
        return total

    return max_relative_error(fn, params, rng, points=points, targets=params)


def gradcheck_suite(seed=0, cases=None, include_total_loss=True, dtype="float64", tolerance=TOLERANCE,
                    step=STEP):
    """Run every case; returns a :class:`GradcheckReport` keyed by op name."""
    dtype = np.dtype(dtype)
    cases = op_cases() if cases is None else cases
    report = GradcheckReport(tolerance=tolerance, dtype=dtype.name)
    for i, case in enumerate(cases):
        rng = np.random.default_rng([seed, i])
        inputs = [np.asarray(x, dtype=dtype) for x in case.make_inputs(rng)]
        err = max_relative_error(case.fn, inputs, rng, points=case.points, step=step, dtype=dtype)
        report.errors[case.name] = max(err, report.errors.get(case.name, 0.0))
    if include_total_loss:
        report.errors["total_loss"] = total_loss_error(seed, dtype=dtype.name)
    return report
