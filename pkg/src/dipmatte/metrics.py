"""Ground-truth metrics for evaluating mattes.

Nothing here is imported by the engine: extraction never sees ground truth.
"""

import json

import numpy as np


def _plane(a):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    return a


def _check(alpha, gt, region):
    alpha, gt = _plane(alpha), _plane(gt)
    region = np.asarray(region, dtype=bool)
    if alpha.shape != gt.shape or region.shape != gt.shape:
        raise ValueError(f"shape mismatch: alpha {alpha.shape}, gt {gt.shape}, region {region.shape}")
    if not region.any():
        raise ValueError("metric over an empty region")
    return alpha, gt, region


def sad(alpha, gt, region):
    """Sum of absolute differences over ``region``."""
    alpha, gt, region = _check(alpha, gt, region)
    return float(np.abs(alpha - gt)[region].sum())


def mse(alpha, gt, region):
    """Mean squared difference over ``region``."""
    alpha, gt, region = _check(alpha, gt, region)
    return float(((alpha - gt) ** 2)[region].mean())


def baseline_matte(masks):
    """Uninformed matte: the trimap target on C and 0.5 on U."""
    out = np.full(masks.shape, 0.5, dtype=np.float32)
    out[masks.fg] = 1.0
    out[masks.bg] = 0.0
    return out


def evaluate(alpha, gt, masks):
    """SAD and MSE over the unknown region and the whole image."""
    everything = np.ones(masks.shape, dtype=bool)
    report = {}
    if masks.unknown.any():
        n = int(masks.unknown.sum())
        s = sad(alpha, gt, masks.unknown)
        report.update(sad_unknown=s, sad_unknown_per_px=s / n, mse_unknown=mse(alpha, gt, masks.unknown),
                      unknown_px=n)
    s = sad(alpha, gt, everything)
    report.update(sad_all=s, sad_all_per_px=s / everything.size, mse_all=mse(alpha, gt, everything))
    return report


def format_report(report):
    return "\n".join(f"{k}={v:.6g}" if isinstance(v, float) else f"{k}={v}" for k, v in report.items())


def write_summary(path, report):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
