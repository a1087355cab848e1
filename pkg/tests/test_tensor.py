import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dipmatte import ops
from dipmatte.optim import Adam, AdamState, adam_step
from dipmatte.tensor import ShapeError, Tape, TapeError, Tensor, no_grad, reset_tape

from oracles import finite_diff, naive_conv2d, naive_spatial_grad_l1, scalar_adam


def t64(a, grad=True):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad)


# -- conv2d ------------------------------------------------------------------

def test_conv_constant_field(backend):
    x = Tensor(np.ones((1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = ops.conv2d(x, w, stride=1)
    assert out.shape == (1, 3, 3)
    np.testing.assert_array_equal(out.data, 9.0)


def test_conv_identity_kernel(backend, rng):
    x = Tensor(rng.standard_normal((3, 6, 5)).astype(np.float32))
    w = np.zeros((3, 3, 3, 3), dtype=np.float32)
    for c in range(3):
        w[c, c, 1, 1] = 1.0
    np.testing.assert_array_equal(ops.conv2d(x, Tensor(w)).data, x.data)


def test_conv_matches_naive_oracle(backend, rng):
    x = rng.standard_normal((2, 8, 8)).astype(np.float32)
    w = rng.standard_normal((4, 2, 3, 3)).astype(np.float32)
    out = ops.conv2d(Tensor(x), Tensor(w)).data
    np.testing.assert_allclose(out, naive_conv2d(x, w, 1), atol=1e-5)


@settings(max_examples=15, deadline=None)
@given(c_in=st.integers(1, 8), c_out=st.integers(1, 4), h=st.integers(3, 16), w=st.integers(3, 16),
       stride=st.sampled_from([1, 2]), k=st.sampled_from([1, 3]), seed=st.integers(0, 2**16))
def test_conv_random_shapes_match_oracle(c_in, c_out, h, w, stride, k, seed):
    r = np.random.default_rng(seed)
    x = r.standard_normal((c_in, h, w)).astype(np.float32)
    kern = r.standard_normal((c_out, c_in, k, k)).astype(np.float32)
    out = ops.conv2d(Tensor(x), Tensor(kern), stride=stride).data
    assert out.shape == (c_out, -(-h // stride), -(-w // stride))
    np.testing.assert_allclose(out, naive_conv2d(x, kern, stride), atol=1e-5 * max(1, c_in * k * k / 9))


def test_conv_stride2_halves_with_ceiling(rng):
    out = ops.conv2d(Tensor(rng.random((1, 7, 6))), Tensor(rng.random((2, 1, 3, 3))), stride=2)
    assert out.shape == (2, 4, 3)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_gradients_vs_finite_differences(backend, rng, stride):
    x = t64(rng.standard_normal((2, 5, 6)))
    w = t64(rng.standard_normal((3, 2, 3, 3)))
    r = rng.standard_normal((3, 3 if stride == 2 else 5, 6 // stride))

    def f():
        with no_grad():
            return float((ops.conv2d(x, w, stride).data * r).sum())

    reset_tape()
    ops.sum_all(ops.mul(ops.conv2d(x, w, stride), Tensor(r))).backward()
    np.testing.assert_allclose(x.grad, finite_diff(f, x.data), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(w.grad, finite_diff(f, w.data), rtol=1e-6, atol=1e-8)


def test_conv_errors(rng):
    x = Tensor(rng.random((2, 5, 5)))
    with pytest.raises(ShapeError, match="channels"):
        ops.conv2d(x, Tensor(rng.random((1, 3, 3, 3))))
    with pytest.raises(ShapeError):
        ops.conv2d(x, Tensor(rng.random((1, 2, 2, 2))))
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(rng.random((1, 2, 3, 3))), stride=3)
    with pytest.raises(ValueError):
        ops.conv2d(x, Tensor(rng.random((1, 2, 3, 3))), padding_mode="zeros")
    with pytest.raises(ShapeError):
        ops.conv2d(Tensor(rng.random((2, 2, 5))), Tensor(rng.random((1, 2, 3, 3))))


# -- elementwise and structural ops -----------------------------------------

def test_upsample_examples(backend):
    np.testing.assert_array_equal(ops.upsample_nearest(Tensor([[[5.0]]])).data, np.full((1, 2, 2), 5.0))
    out = ops.upsample_nearest(Tensor([[[1.0, 2.0], [3.0, 4.0]]])).data
    np.testing.assert_array_equal(out[0], [[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]])


def test_upsample_adjoint_vs_finite_differences(backend, rng):
    x = t64(rng.standard_normal((2, 3, 4)))
    r = rng.standard_normal((2, 6, 8))
    ops.sum_all(ops.mul(ops.upsample_nearest(x), Tensor(r))).backward()

    def f():
        with no_grad():
            return float((ops.upsample_nearest(x).data * r).sum())

    fd = finite_diff(f, x.data)
    assert np.max(np.abs(x.grad - fd) / np.maximum(np.abs(fd), 1e-6)) <= 1e-3


def test_leaky_relu_values():
    out = ops.leaky_relu(Tensor([2.0, -2.0]), 0.1).data
    np.testing.assert_allclose(out, [2.0, -0.2], rtol=1e-6)
    with pytest.raises(ValueError):
        ops.leaky_relu(Tensor([1.0]), 1.5)


def test_sigmoid_values():
    assert ops.sigmoid(Tensor([0.0])).data[0] == 0.5
    vals = ops.sigmoid(Tensor(np.array([1.0, 5.0, 20.0, 80.0]))).data
    assert np.all(np.diff(vals) >= 0) and vals[-1] == pytest.approx(1.0)
    assert np.all(np.isfinite(ops.sigmoid(Tensor(np.array([-1000.0, 1000.0]))).data))


def test_instance_norm_examples():
    np.testing.assert_array_equal(ops.instance_norm(Tensor(np.full((1, 2, 2), 3.0))).data, 0.0)
    out = ops.instance_norm(Tensor(np.array([[[0.0, 2.0]]])), eps=1e-5).data
    np.testing.assert_allclose(out, [[[-1.0, 1.0]]], atol=1e-5)


def test_instance_norm_statistics(rng):
    out = ops.instance_norm(Tensor(rng.standard_normal((3, 8, 8)) * 5 + 2)).data
    np.testing.assert_allclose(out.mean(axis=(1, 2)), 0.0, atol=1e-5)
    np.testing.assert_allclose(out.var(axis=(1, 2)), 1.0, atol=1e-3)


def test_spatial_grad_l1_examples(backend, rng):
    np.testing.assert_array_equal(ops.spatial_grad_l1(Tensor(np.full((3, 4, 4), 0.7))).data, 0.0)
    out = ops.spatial_grad_l1(Tensor([[[0.0, 1.0]]])).data
    np.testing.assert_array_equal(out, [[[1.0, 0.0]]])
    x = rng.standard_normal((3, 6, 7))
    np.testing.assert_array_equal(ops.spatial_grad_l1(Tensor(x)).data, naive_spatial_grad_l1(x))


def test_no_implicit_broadcasting():
    with pytest.raises(ShapeError):
        ops.add(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((3, 2, 2))))
    with pytest.raises(ShapeError):
        ops.mul(Tensor(np.ones((2,))), Tensor(np.ones((1,))))


def test_scalar_operators():
    x = Tensor([1.0, 2.0])
    np.testing.assert_array_equal((1 - x).data, [0.0, -1.0])
    np.testing.assert_array_equal((x * 3).data, [3.0, 6.0])
    np.testing.assert_array_equal((x + 0.5).data, [1.5, 2.5])


# -- tape and backward ---------------------------------------------------------

def test_square_gradient():
    x = Tensor(3.0, requires_grad=True)
    (x * x).backward()
    assert x.grad == 6.0


def test_sum_of_products_gradient(rng):
    a = Tensor(rng.random(5), requires_grad=True)
    b = Tensor(rng.random(5), requires_grad=True)
    (a * b).sum().backward()
    np.testing.assert_array_equal(a.grad, b.data)
    np.testing.assert_array_equal(b.grad, a.data)


def test_backward_requires_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (x * 2).backward()


def test_second_backward_without_reset_fails():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    y.backward()
    with pytest.raises(TapeError):
        y.backward()


def test_explicit_tape_reset_allows_new_pass():
    tape = Tape()
    x = Tensor(2.0, requires_grad=True)
    y = Tensor(np.square(x.data))
    y.requires_grad = True
    tape.record(y, (x,), lambda g: (2 * x.data * g,))
    tape.backward(y)
    assert tape.spent and x.grad == 4.0
    with pytest.raises(TapeError):
        tape.backward(y)
    tape.reset()
    tape.record(y, (x,), lambda g: (2 * x.data * g,))
    tape.backward(y)
    assert x.grad == 8.0  # accumulation is additive across passes


def test_backward_runs_in_reverse_execution_order():
    order = []
    tape = Tape()
    x = Tensor(1.0, requires_grad=True)
    nodes = []
    prev = x
    for i in range(4):
        out = Tensor(prev.data + 1)
        out.requires_grad = True
        tape.record(out, (prev,), lambda g, i=i: (order.append(i) or g,))
        nodes.append(out)
        prev = out
    tape.backward(prev)
    assert order == [3, 2, 1, 0]


def test_fan_out_accumulates_both_contributions(rng):
    x = t64(rng.standard_normal((1, 4, 4)))
    y = ops.sigmoid(x)
    loss = ops.sum_all(ops.add(ops.mul(y, y), ops.spatial_grad_l1(y)))
    loss.backward()

    def f():
        with no_grad():
            yy = ops.sigmoid(x)
            return ops.sum_all(ops.add(ops.mul(yy, yy), ops.spatial_grad_l1(yy))).item()

    fd = finite_diff(f, x.data)
    assert np.max(np.abs(x.grad - fd) / np.maximum(np.abs(fd), 1e-6)) <= 1e-3


def test_grad_absent_off_path():
    a = Tensor(1.0, requires_grad=True)
    b = Tensor(2.0, requires_grad=True)
    c = a * 3.0
    _unused = b * 2.0
    c.backward()
    assert a.grad == 3.0 and b.grad is None


def test_no_grad_records_nothing():
    x = Tensor(1.0, requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_dtype_preserved():
    assert ops.conv2d(Tensor(np.ones((1, 3, 3), np.float64)), Tensor(np.ones((1, 1, 3, 3)))).dtype == np.float64
    assert Tensor([1, 2]).dtype == np.float32


# -- Adam --------------------------------------------------------------------

def test_adam_first_step_analytic():
    p = Tensor(np.array([0.0]), dtype=np.float64)
    state = AdamState.zeros_like([p])
    adam_step([p], [np.array([1.0])], state, t=1, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8)
    assert p.data[0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
    assert state.t == 1


def test_adam_zero_gradient_is_identity(rng):
    p = Tensor(rng.standard_normal((3, 4)))
    before = p.data.copy()
    state = AdamState.zeros_like([p])
    for _ in range(5):
        adam_step([p], [np.zeros((3, 4), np.float32)], state)
    np.testing.assert_array_equal(p.data, before)


def test_adam_matches_scalar_reference():
    x = Tensor(np.array([1.0]), requires_grad=True, dtype=np.float64)
    opt = Adam([x], lr=0.001)
    for _ in range(10):
        opt.zero_grad()
        reset_tape()
        (x * x).sum().backward()
        opt.step()
    ref = scalar_adam(lambda v: 2 * v, 1.0, 10)
    assert abs(x.data[0] - ref) <= 1e-12


def test_adam_errors():
    p = Tensor(np.zeros(3))
    state = AdamState.zeros_like([p])
    with pytest.raises(ShapeError):
        adam_step([p], [np.zeros(4)], state)
    with pytest.raises(ValueError):
        adam_step([p], [np.zeros(3)], state, t=5)
