"""Competing estimators: Schur-complement imputation (SMC) and zero fill.

Both consume the same aggregated matrix as BELT so comparisons differ only
in how missing blocks are filled.
"""
from __future__ import annotations

import numpy as np

from .core import AggregatedMatrix, _finish, aggregate, complete, estimate_noise, pair_partition
from .errors import PreconditionError

__all__ = ["truncated_pinv", "smc_impute", "smc_complete", "zero_impute", "pretrain_complete"]

PINV_RTOL = 1e-10


def truncated_pinv(A, r, rtol=PINV_RTOL):
    """Pseudo-inverse keeping at most `r` singular values above ``rtol * s_max``."""
    U, s, Vt = np.linalg.svd(np.asarray(A, dtype=float))
    if s.size == 0 or s[0] == 0:
        return np.zeros(A.shape[::-1])
    q = min(int(r), int(np.sum(s > rtol * s[0])))
    return (Vt[:q].T / s[:q]) @ U[:, :q].T


def smc_impute(agg: AggregatedMatrix, s, k, r, **_):
    """Missing block ``W[s\\k, s&k] @ pinv_r(W[s&k, s&k]) @ W[s&k, k\\s]``.

    Extra keyword arguments (precomputed eigenpairs) are accepted and ignored
    so this can be passed to :func:`belt.core.complete` as the imputer.
    """
    only_s, both, only_k = pair_partition(agg, s, k)
    if only_s.size == 0 or only_k.size == 0:
        return np.zeros((only_s.size, only_k.size))
    if both.size == 0:
        raise PreconditionError(
            f"sources {agg.labels[s]!r} and {agg.labels[k]!r} do not overlap"
        )
    W = agg.matrix
    left = W[np.ix_(only_s, both)]
    right = W[np.ix_(both, only_k)]
    return (left @ truncated_pinv(W[np.ix_(both, both)], r)) @ right


def smc_complete(sources, r, **kwargs):
    """BELT pipeline with SMC imputation; pairs need only a nonempty overlap."""
    return complete(sources, r, imputer=smc_impute, min_overlap=1, **kwargs)


def zero_impute(agg: AggregatedMatrix, r):
    """Leave missing blocks at zero and factorize the aggregated matrix."""
    return _finish(agg.matrix.copy(), r, agg, [])


def pretrain_complete(sources, r, noise=None, eig_method="dense"):
    """Zero-fill baseline from raw sources."""
    if noise is None:
        noise = [estimate_noise(src, r) for src in sources]
    agg = aggregate(sources, noise)
    return _finish(agg.matrix.copy(), r, agg, [], eig_method)
