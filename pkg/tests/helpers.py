"""Shared test oracles: finite differences, scalar-loop forward, naive linkage."""
from __future__ import annotations

import numpy as np

FD_STEP = 1e-5


def central_diff(fn, x: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Per-element central finite differences of a scalar function (fp64)."""
    x = x.astype(np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max elementwise error normalized by the numeric gradient's max magnitude."""
    scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1e-12)
    return float(np.abs(analytic - numeric).max() / scale)


# ---------------------------------------------------------------------------
# independent scalar-loop forward evaluation (no vectorized kernels)


def loop_conv1d(x, w, b, stride, pad_l, pad_r):
    batch, c_in, length = x.shape
    c_out, _, k = w.shape
    xp = np.zeros((batch, c_in, length + pad_l + pad_r))
    xp[:, :, pad_l : pad_l + length] = x
    l_out = (length + pad_l + pad_r - k) // stride + 1
    y = np.zeros((batch, c_out, l_out))
    for bi in range(batch):
        for co in range(c_out):
            for t in range(l_out):
                acc = b[co]
                for ci in range(c_in):
                    for kk in range(k):
                        acc += w[co, ci, kk] * xp[bi, ci, t * stride + kk]
                y[bi, co, t] = acc
    return y


def loop_batchnorm_eval(x, gamma, beta, rm, rv, eps=1e-5):
    y = np.zeros_like(x)
    for c in range(x.shape[1]):
        y[:, c, :] = gamma[c] * (x[:, c, :] - rm[c]) / np.sqrt(rv[c] + eps) + beta[c]
    return y


def loop_dense(x, w, b):
    batch, feats = x.shape
    out = np.zeros((batch, w.shape[0]))
    for bi in range(batch):
        for o in range(w.shape[0]):
            acc = b[o]
            for f in range(feats):
                acc += w[o, f] * x[bi, f]
            out[bi, o] = acc
    return out


# ---------------------------------------------------------------------------
# brute-force average-linkage oracle: rescans every cluster pair each step


def oracle_average_linkage(dist: np.ndarray, n: int):
    """Returns labels [m] using the same id and tie rules as the implementation.

    Cluster id = smallest member index; candidate pair distances are the
    plain mean over member pairs (smaller-id cluster rows first); among
    minimum-distance pairs the lexicographically smallest (a, b) merges.
    """
    m = dist.shape[0]
    clusters = {i: [i] for i in range(m)}
    while len(clusters) > n:
        best = None
        ids = sorted(clusters)
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                d = float(dist[np.ix_(clusters[a], clusters[b])].mean())
                key = (d, a, b)
                if best is None or key < best:
                    best = key
        _, a, b = best
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
    labels = np.empty(m, dtype=np.int64)
    for new_label, cid in enumerate(sorted(clusters)):
        labels[clusters[cid]] = new_label
    return labels


def random_distance_matrix(rng: np.random.Generator, m: int) -> np.ndarray:
    d = rng.uniform(0.0, 1.0, size=(m, m))
    d = np.triu(d, 1)
    return d + d.T
