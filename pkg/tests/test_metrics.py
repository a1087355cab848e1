import numpy as np
import pytest

from dipmatte import gradcheck, ops
from dipmatte.gradcheck import GradcheckCase, gradcheck_suite, max_relative_error
from dipmatte.metrics import baseline_matte, evaluate, format_report, mse, sad, write_summary
from dipmatte.synth import synth_case
from dipmatte.tensor import Tensor
from dipmatte.trimap import TrimapMasks


def naive_sad(alpha, gt, region):
    total = 0.0
    for i in range(gt.shape[0]):
        for j in range(gt.shape[1]):
            if region[i, j]:
                total += abs(float(alpha[i, j]) - float(gt[i, j]))
    return total


def test_sad_examples():
    gt = np.zeros((5, 5))
    region = np.zeros((5, 5), bool)
    region.flat[:10] = True
    assert sad(gt, gt, region) == 0.0
    assert sad(gt + 0.1 * region, gt, region) == pytest.approx(1.0, abs=1e-12)


def test_sad_mse_vs_naive(rng):
    a, g = rng.random((2, 7, 9))
    region = rng.random((7, 9)) < 0.4
    assert sad(a, g, region) == pytest.approx(naive_sad(a, g, region), rel=1e-12)
    assert mse(a, g, region) == pytest.approx(np.mean([(a[r] - g[r]) ** 2 for r in zip(*np.nonzero(region))]))


def test_sad_is_additive_over_partition(rng):
    a, g = rng.random((2, 6, 6))
    labels = rng.choice([0, 128, 255], (6, 6))
    labels[0, :3] = (0, 128, 255)
    m = TrimapMasks.from_labels(labels)
    assert sad(a, g, m.fg) + sad(a, g, m.bg) + sad(a, g, m.unknown) == pytest.approx(sad(a, g, np.ones((6, 6), bool)))


def test_metrics_accept_leading_channel_and_reject_bad_input(rng):
    a = rng.random((1, 4, 4))
    assert sad(a, a[0], np.ones((4, 4), bool)) == 0.0
    with pytest.raises(ValueError, match="empty"):
        sad(a, a, np.zeros((4, 4), bool))
    with pytest.raises(ValueError, match="shape"):
        mse(a, np.zeros((4, 5)), np.ones((4, 4), bool))


def test_baseline_examples():
    labels = np.array([[0, 255], [0, 255]])
    m = TrimapMasks.from_labels(labels)
    np.testing.assert_array_equal(baseline_matte(m), m.target_alpha)
    all_u = TrimapMasks.from_labels(np.full((3, 4), 128))
    np.testing.assert_array_equal(baseline_matte(all_u), 0.5)


def test_baseline_disk_reference():
    # recorded per seed; the generator is deterministic so this never drifts silently
    case = synth_case("disk", (64, 64), 4, seed=0)
    u = case.trimap.unknown
    per_px = sad(baseline_matte(case.trimap), case.gt_alpha, u) / u.sum()
    assert per_px == pytest.approx(0.4747, abs=5e-4)


def test_evaluate_report(tmp_path):
    case = synth_case("disk", (32, 32), 2, seed=1)
    report = evaluate(case.gt_alpha, case.gt_alpha, case.trimap)
    assert report["sad_unknown"] == 0 and report["mse_all"] == 0
    assert report["unknown_px"] == int(case.trimap.unknown.sum())
    assert "sad_unknown=0" in format_report(report)
    write_summary(tmp_path / "s.json", report)
    assert '"unknown_px"' in (tmp_path / "s.json").read_text()
    no_u = TrimapMasks.from_regions(case.gt_alpha >= 0.5, case.gt_alpha < 0.5)
    assert "sad_unknown" not in evaluate(case.gt_alpha, case.gt_alpha, no_u)


# -- gradient checker -----------------------------------------------------------

def test_report_enumerates_every_op_once():
    names = [c.name for c in gradcheck.op_cases()]
    assert sorted(names) == sorted(ops.DIFFERENTIABLE_OPS)
    assert len(names) == len(set(names))


def test_all_ops_pass_in_64_bit():
    report = gradcheck_suite(seed=0, include_total_loss=False)
    assert report.passed, report.lines()
    assert set(report.errors) == set(ops.DIFFERENTIABLE_OPS)


def test_corrupted_adjoint_is_detected():
    def bad_square(x):
        # forward is right, adjoint is 10% too large
        return ops._result(x.data * x.data, (x,), lambda g: [2.2 * x.data * g])

    case = GradcheckCase("square", bad_square, lambda rng: [rng.standard_normal((2, 3, 4))])
    report = gradcheck_suite(seed=0, cases=[case], include_total_loss=False)
    assert not report.passed and report.failures() == ["square"]
    assert report.lines()[-1].startswith("FAIL")


def test_relative_error_zero_for_linear_map(rng):
    err = max_relative_error(lambda x: ops.scalar_mul(x, 3.0), [rng.standard_normal((2, 3))], rng)
    assert err < 1e-8


def test_tensor_inputs_accepted(rng):
    t = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
    assert max_relative_error(ops.sigmoid, [t], rng) < 1e-6
