"""Distances between two sets of channels.

Channels are compared as flattened real vectors (real plane, then imaginary
plane, row-major).  Both metrics accept channel stacks ``(n, n_r, n_t)`` or
already flattened ``(n, dim)`` real arrays.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist, pdist

from .pbgc import flatten


def as_samples(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim == 3:
        x = flatten(x)
    elif np.iscomplexobj(x):
        raise ValueError("complex input must be a (n, n_r, n_t) channel stack")
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("expected a nonempty set of vectors")
    return x


def _pair(a, b):
    a, b = as_samples(a), as_samples(b)
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a, b


def wasserstein2(a, b) -> float:
    """Exact empirical 2-Wasserstein distance between equal-size point sets.

    Solves the optimal assignment on squared Euclidean costs and returns
    ``sqrt(mean cost)`` of the optimal matching.
    """
    a, b = _pair(a, b)
    if len(a) != len(b):
        raise ValueError(f"exact W2 needs equal set sizes, got {len(a)} and {len(b)}")
    cost = cdist(a, b, "sqeuclidean")
    rows, cols = linear_sum_assignment(cost)
    return float(np.sqrt(max(cost[rows, cols].mean(), 0.0)))


def median_bandwidth(a, b) -> float:
    """Median pairwise Euclidean distance over the pooled sample."""
    a, b = _pair(a, b)
    pooled = np.vstack([a, b])
    if len(pooled) < 2:
        return 0.0
    return float(np.median(pdist(pooled)))


def mmd(a, b, bandwidth: float | None = None) -> float:
    """Biased (V-statistic) Gaussian-kernel MMD, returned as a distance.

    ``k(x, y) = exp(-||x - y||^2 / (2 * bandwidth^2))``; by default the
    bandwidth is the pooled median distance.  A zero median bandwidth (all
    points coincide) gives 0.
    """
    a, b = _pair(a, b)
    if bandwidth is None:
        bandwidth = median_bandwidth(a, b)
    if bandwidth == 0:
        return 0.0
    if bandwidth < 0 or not np.isfinite(bandwidth):
        raise ValueError(f"invalid bandwidth {bandwidth!r}")
    scale = -0.5 / bandwidth ** 2
    kaa = np.exp(scale * cdist(a, a, "sqeuclidean")).mean()
    kbb = np.exp(scale * cdist(b, b, "sqeuclidean")).mean()
    kab = np.exp(scale * cdist(a, b, "sqeuclidean")).mean()
    return float(np.sqrt(max(kaa + kbb - 2 * kab, 0.0)))


def metric_record(name: str, a, b) -> dict:
    """JSON-ready ``{metric, value, n_a, n_b[, bandwidth]}`` record."""
    a, b = _pair(a, b)
    rec = {"metric": name, "n_a": len(a), "n_b": len(b)}
    if name == "w2":
        rec["value"] = wasserstein2(a, b)
    elif name == "mmd":
        bw = median_bandwidth(a, b)
        rec["value"] = mmd(a, b, bw)
        rec["bandwidth"] = bw
    else:
        raise ValueError(f"unknown metric {name!r}")
    return rec
