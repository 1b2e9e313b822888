"""Analytic-vs-central-difference gradient checks for every layer kind.

Inputs for kinked ops (relu, maxpool) are drawn as scaled distinct-integer
permutations so no value sits within the finite-difference step of a kink
or a window tie; everything runs in fp64.
"""
from __future__ import annotations

import numpy as np

from fcos import kernels
from helpers import central_diff, rel_error


def _proj_loss(rng, shape):
    r = rng.normal(size=shape)
    return r, lambda y: float((y * r).sum())


def _spaced(rng, shape, gap=0.037):
    """Distinct values with pairwise gaps >= gap and none within gap/2 of 0."""
    n = int(np.prod(shape))
    vals = (rng.permutation(n) + 0.5) * gap
    return (vals - vals.mean()).reshape(shape)


def check_conv1d(seed: int) -> float:
    rng = np.random.default_rng(seed)
    batch, c_in, c_out, k, length = 3, 2, 4, 3, 10
    stride = 1 + seed % 2
    pad_l, pad_r = (1, 1) if seed % 3 else (0, 2)
    x = rng.normal(size=(batch, c_in, length))
    w = rng.normal(size=(c_out, c_in, k))
    b = rng.normal(size=c_out)
    y, cache = kernels.conv1d_forward(x, w, b, stride, pad_l, pad_r)
    r, loss = _proj_loss(rng, y.shape)
    gx, gw, gb = kernels.conv1d_backward(cache, r)
    errs = [
        rel_error(gx, central_diff(lambda v: loss(kernels.conv1d_forward(v, w, b, stride, pad_l, pad_r)[0]), x)),
        rel_error(gw, central_diff(lambda v: loss(kernels.conv1d_forward(x, v, b, stride, pad_l, pad_r)[0]), w)),
        rel_error(gb, central_diff(lambda v: loss(kernels.conv1d_forward(x, w, v, stride, pad_l, pad_r)[0]), b)),
    ]
    return max(errs)


def _bn_check(seed: int, training: bool) -> float:
    rng = np.random.default_rng(seed)
    batch, ch, length = 3, 4, 6
    x = rng.normal(size=(batch, ch, length))
    gamma = rng.normal(size=ch) + 1.5
    beta = rng.normal(size=ch)
    rm = rng.normal(size=ch) * 0.1
    rv = rng.uniform(0.5, 2.0, size=ch)

    def fwd(xv, gv, bv):
        y, _, _, _ = kernels.batchnorm_forward(xv, gv, bv, rm, rv, training)
        return y

    y, _, _, cache = kernels.batchnorm_forward(x, gamma, beta, rm, rv, training)
    r, loss = _proj_loss(rng, y.shape)
    gx, ggamma, gbeta = kernels.batchnorm_backward(cache, r)
    errs = [
        rel_error(gx, central_diff(lambda v: loss(fwd(v, gamma, beta)), x)),
        rel_error(ggamma, central_diff(lambda v: loss(fwd(x, v, beta)), gamma)),
        rel_error(gbeta, central_diff(lambda v: loss(fwd(x, gamma, v)), beta)),
    ]
    return max(errs)


def check_batchnorm_train(seed: int) -> float:
    return _bn_check(seed, training=True)


def check_batchnorm_eval(seed: int) -> float:
    return _bn_check(seed, training=False)


def check_relu(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = _spaced(rng, (3, 4, 8))
    y, mask = kernels.relu_forward(x)
    r, loss = _proj_loss(rng, y.shape)
    gx = kernels.relu_backward(mask, r)
    return rel_error(gx, central_diff(lambda v: loss(kernels.relu_forward(v)[0]), x))


def check_maxpool(seed: int) -> float:
    rng = np.random.default_rng(seed)
    width, stride = ((2, 2), (3, 2), (3, 3))[seed % 3]
    x = _spaced(rng, (3, 3, 11))
    y, cache = kernels.maxpool1d_forward(x, width, stride)
    r, loss = _proj_loss(rng, y.shape)
    gx = kernels.maxpool1d_backward(cache, r)
    return rel_error(gx, central_diff(lambda v: loss(kernels.maxpool1d_forward(v, width, stride)[0]), x))


def check_gap(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 5, 9))
    y, cache = kernels.global_avg_pool_forward(x)
    r, loss = _proj_loss(rng, y.shape)
    gx = kernels.global_avg_pool_backward(cache, r)
    return rel_error(gx, central_diff(lambda v: loss(kernels.global_avg_pool_forward(v)[0]), x))


def check_dense(seed: int) -> float:
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(4, 6))
    w = rng.normal(size=(3, 6))
    b = rng.normal(size=3)
    y, cache = kernels.dense_forward(x, w, b)
    r, loss = _proj_loss(rng, y.shape)
    gx, gw, gb = kernels.dense_backward(cache, r)
    return max(
        rel_error(gx, central_diff(lambda v: loss(kernels.dense_forward(v, w, b)[0]), x)),
        rel_error(gw, central_diff(lambda v: loss(kernels.dense_forward(x, v, b)[0]), w)),
        rel_error(gb, central_diff(lambda v: loss(kernels.dense_forward(x, w, v)[0]), b)),
    )


def check_add(seed: int) -> float:
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(3, 4, 5))
    b = rng.normal(size=(3, 4, 5))
    y, cache = kernels.add_forward(a, b)
    r, loss = _proj_loss(rng, y.shape)
    ga, gb = kernels.add_backward(cache, r)
    return max(
        rel_error(ga, central_diff(lambda v: loss(kernels.add_forward(v, b)[0]), a)),
        rel_error(gb, central_diff(lambda v: loss(kernels.add_forward(a, v)[0]), b)),
    )


def check_softmax_xent(seed: int) -> float:
    rng = np.random.default_rng(seed)
    logits = rng.normal(size=(5, 4))
    labels = rng.integers(0, 4, size=5)
    _, dlogits = kernels.softmax_cross_entropy(logits, labels)
    num = central_diff(lambda v: kernels.softmax_cross_entropy(v, labels)[0], logits)
    return rel_error(dlogits, num)


ALL_CHECKS = {
    "conv1d": check_conv1d,
    "batchnorm-train": check_batchnorm_train,
    "batchnorm-eval": check_batchnorm_eval,
    "relu": check_relu,
    "maxpool1d": check_maxpool,
    "gap": check_gap,
    "dense": check_dense,
    "residual-add": check_add,
    "softmax-xent": check_softmax_xent,
}
