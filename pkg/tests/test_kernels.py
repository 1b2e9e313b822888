import numpy as np
import pytest

from fcos import kernels
from fcos.errors import ShapeError

from gradchecks import ALL_CHECKS


def test_zero_kernel_gives_zero_output():
    x = np.random.default_rng(0).normal(size=(2, 3, 16)).astype(np.float32)
    w = np.zeros((4, 3, 5), dtype=np.float32)
    b = np.zeros(4, dtype=np.float32)
    y, _ = kernels.conv1d_forward(x, w, b, 1, 2, 2)
    assert np.all(y == 0.0)


def test_scalar_scaling_conv():
    # c_in=1, c_out=1, k=1, weight 2.0, input [1,2,3] -> [2,4,6]
    x = np.array([[[1.0, 2.0, 3.0]]])
    w = np.array([[[2.0]]])
    b = np.zeros(1)
    y, _ = kernels.conv1d_forward(x, w, b, 1, 0, 0)
    assert np.array_equal(y, np.array([[[2.0, 4.0, 6.0]]]))


def test_conv_shape_mismatch_raises():
    x = np.zeros((1, 3, 8))
    w = np.zeros((2, 4, 3))
    with pytest.raises(ShapeError):
        kernels.conv1d_forward(x, w, np.zeros(2), 1, 0, 0)


def test_linear_layer_sum_loss_adjoint():
    # loss = sum of outputs -> weight grad equals the column sums of inputs
    rng = np.random.default_rng(1)
    x = rng.normal(size=(5, 3))
    w = rng.normal(size=(2, 3))
    b = np.zeros(2)
    _, cache = kernels.dense_forward(x, w, b)
    gx, gw, gb = kernels.dense_backward(cache, np.ones((5, 2)))
    expected = np.tile(x.sum(axis=0), (2, 1))
    np.testing.assert_allclose(gw, expected, rtol=1e-12)
    np.testing.assert_allclose(gb, np.full(2, 5.0), rtol=1e-12)


def test_squared_loss_gradient_zero_at_minimum():
    # (w.x - y)^2 with w.x == y: d/dw = 2(w.x - y) x = 0 exactly
    w = np.array([[2.0, -1.0]])
    x = np.array([[1.0, 2.0]])  # w.x = 0
    y_target = 0.0
    logits, cache = kernels.dense_forward(x, w, np.zeros(1))
    dloss = 2.0 * (logits - y_target)
    _, gw, _ = kernels.dense_backward(cache, dloss)
    assert np.all(gw == 0.0)


def test_softmax_xent_uniform_logits_equals_log_k():
    for k in (2, 4, 7):
        logits = np.zeros((6, k))
        loss, _ = kernels.softmax_cross_entropy(logits, np.arange(6) % k)
        assert abs(loss - np.log(k)) <= 1e-6
        assert loss >= 0.0


def test_softmax_xent_loss_nonnegative():
    rng = np.random.default_rng(3)
    logits = rng.normal(size=(10, 5)) * 4.0
    loss, _ = kernels.softmax_cross_entropy(logits, rng.integers(0, 5, 10))
    assert loss >= 0.0


def test_maxpool_forward_values():
    x = np.array([[[1.0, 5.0, 2.0, 4.0, 3.0, 0.0]]])
    y, _ = kernels.maxpool1d_forward(x, 2, 2)
    assert np.array_equal(y, np.array([[[5.0, 4.0, 3.0]]]))


def test_maxpool_overlapping_backward_accumulates():
    x = np.array([[[0.0, 3.0, 1.0, 2.0]]])
    y, cache = kernels.maxpool1d_forward(x, 3, 1)
    assert np.array_equal(y, np.array([[[3.0, 3.0]]]))
    gx = kernels.maxpool1d_backward(cache, np.ones_like(y))
    assert np.array_equal(gx, np.array([[[0.0, 2.0, 0.0, 0.0]]]))


@pytest.mark.parametrize("kind", sorted(ALL_CHECKS))
def test_gradients_match_central_differences(kind):
    # smoke subset; the acceptance suite runs 20 seeds per kind
    for seed in range(3):
        err = ALL_CHECKS[kind](seed)
        assert err <= 1e-4, f"{kind} seed {seed}: rel err {err:.2e}"
