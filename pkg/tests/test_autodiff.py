import numpy as np
import pytest

from Autodiff import functional as F
from Autodiff.gradcheck import check_gradients
from Autodiff.tape import GradientTape, backward
from Autodiff.tensor import Tensor
from Domain.errors import NonFiniteError, ShapeMismatchError
from Services.loss_metrics import ce_dice_loss

N_INSTANCES = 20
TOL = 1e-4


def _project(out: Tensor, weights: np.ndarray) -> Tensor:
    # 出力を固定の乱数重みでスカラーに潰す
    return F.reduce_sum(F.mul(out, weights))


@pytest.mark.parametrize("stride,padding", [(1, 1), (2, 0), (1, 0)])
def test_conv2d_gradients(stride, padding):
    rng = np.random.default_rng(10 + stride + padding)
    for _ in range(N_INSTANCES):
        x = rng.standard_normal((2, 2, 6, 6))
        w = rng.standard_normal((3, 2, 2 if stride == 2 else 3, 2 if stride == 2 else 3))
        b = rng.standard_normal(3)
        out = F.conv2d(Tensor(x), Tensor(w), Tensor(b), stride, padding)
        r = rng.standard_normal(out.shape)
        err = check_gradients(lambda x, w, b: _project(F.conv2d(x, w, b, stride, padding), r), [x, w, b])
        assert err < TOL


def test_conv_transpose2d_gradients():
    rng = np.random.default_rng(11)
    for _ in range(N_INSTANCES):
        x = rng.standard_normal((2, 3, 3, 3))
        w = rng.standard_normal((3, 2, 2, 2))
        b = rng.standard_normal(2)
        r = rng.standard_normal((2, 2, 6, 6))
        err = check_gradients(lambda x, w, b: _project(F.conv_transpose2d(x, w, b, 2, 0), r), [x, w, b])
        assert err < TOL


def test_conv_transpose2d_is_adjoint_of_conv2d():
    rng = np.random.default_rng(12)
    x = rng.standard_normal((2, 3, 8, 8))
    w = rng.standard_normal((4, 3, 2, 2))
    y = rng.standard_normal((2, 4, 4, 4))
    lhs = float((F.conv2d(Tensor(x), Tensor(w), stride=2).data * y).sum())
    rhs = float((x * F.conv_transpose2d(Tensor(y), Tensor(w), stride=2).data).sum())
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_instance_norm_gradients():
    rng = np.random.default_rng(13)
    for _ in range(N_INSTANCES):
        x = rng.standard_normal((2, 3, 4, 4))
        scale = rng.standard_normal(3)
        shift = rng.standard_normal(3)
        r = rng.standard_normal(x.shape)
        err = check_gradients(lambda x, s, h: _project(F.instance_norm2d(x, s, h), r), [x, scale, shift])
        assert err < TOL


def test_leaky_relu_gradients():
    rng = np.random.default_rng(14)
    for _ in range(N_INSTANCES):
        x = rng.standard_normal((2, 2, 3, 3))
        # 折れ点付近は差分が不安定なので離しておく
        x[np.abs(x) < 1e-3] += 0.01
        r = rng.standard_normal(x.shape)
        assert check_gradients(lambda x: _project(F.leaky_relu(x), r), [x]) < TOL


def test_max_pool_gradients():
    rng = np.random.default_rng(15)
    for _ in range(N_INSTANCES):
        # 同値のない値（間隔 0.1）
        x = (rng.permutation(2 * 2 * 4 * 4).reshape(2, 2, 4, 4) * 0.1).astype(np.float64)
        r = rng.standard_normal((2, 2, 2, 2))
        assert check_gradients(lambda x: _project(F.max_pool2d(x), r), [x]) < TOL


def test_max_pool_tie_routes_gradient_to_first_element():
    tape = GradientTape()
    x = tape.parameter(0, np.ones((1, 1, 2, 2)))
    grads = backward(tape, F.reduce_sum(F.max_pool2d(x)))
    np.testing.assert_array_equal(grads[0][0, 0], [[1.0, 0.0], [0.0, 0.0]])


def test_concat_gradients():
    rng = np.random.default_rng(16)
    for _ in range(N_INSTANCES):
        a = rng.standard_normal((2, 2, 3, 3))
        b = rng.standard_normal((2, 1, 3, 3))
        r = rng.standard_normal((2, 3, 3, 3))
        assert check_gradients(lambda a, b: _project(F.concat_channels([a, b]), r), [a, b]) < TOL


def test_softmax_gradients():
    rng = np.random.default_rng(17)
    for _ in range(N_INSTANCES):
        x = rng.standard_normal((2, 3, 3, 3))
        r = rng.standard_normal(x.shape)
        assert check_gradients(lambda x: _project(F.softmax(x, axis=1), r), [x]) < TOL


def test_ce_dice_loss_gradients():
    rng = np.random.default_rng(18)
    for _ in range(N_INSTANCES):
        logits = rng.standard_normal((2, 2, 4, 4))
        labels = rng.integers(0, 2, size=(2, 4, 4))
        assert check_gradients(lambda z: ce_dice_loss(z, labels), [logits]) < TOL


def test_matmul_and_reshape_gradients():
    rng = np.random.default_rng(19)
    for _ in range(N_INSTANCES):
        a = rng.standard_normal((3, 2))
        b = rng.standard_normal((2, 4))
        r = rng.standard_normal((4, 3))
        fn = lambda a, b: _project(F.reshape(F.matmul(a, b), (4, 3)), r)  # noqa: E731
        assert check_gradients(fn, [a, b]) < TOL


def test_backward_requires_scalar_loss():
    tape = GradientTape()
    x = tape.parameter(0, np.ones((2, 2)))
    with pytest.raises(ShapeMismatchError):
        backward(tape, F.mul(x, 2.0))


def test_unreached_parameter_gets_zero_gradient():
    tape = GradientTape()
    x = tape.parameter(0, np.ones(3))
    unused = tape.parameter(1, np.full(2, 5.0))
    grads = backward(tape, F.reduce_sum(F.mul(x, 3.0)))
    np.testing.assert_array_equal(grads[0], [3.0, 3.0, 3.0])
    np.testing.assert_array_equal(grads[1], np.zeros(2))
    assert unused.shape == (2,)
    assert tape.backward_count == 1


def test_shared_parameter_gradients_accumulate():
    tape = GradientTape()
    x = tape.parameter(0, np.array([2.0]))
    again = tape.parameter(0, np.array([2.0]))
    grads = backward(tape, F.reduce_sum(F.mul(x, again)))
    np.testing.assert_allclose(grads[0], [4.0])


def test_non_finite_forward_is_reported():
    with pytest.raises(NonFiniteError):
        F.div(Tensor(np.ones(2)), Tensor(np.zeros(2)))


def test_conv2d_channel_mismatch():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    w = Tensor(np.zeros((3, 1, 3, 3)))
    with pytest.raises(ShapeMismatchError) as info:
        F.conv2d(x, w, padding=1)
    assert info.value.dimension == "Cin"


def test_conv2d_stride_must_divide():
    x = Tensor(np.zeros((1, 1, 5, 5)))
    w = Tensor(np.zeros((1, 1, 2, 2)))
    with pytest.raises(ShapeMismatchError):
        F.conv2d(x, w, stride=2)


def test_untracked_forward_records_nothing():
    tape = GradientTape()
    out = F.add(Tensor(np.ones(2)), 1.0)
    assert not out.tracked
    assert len(tape) == 0
