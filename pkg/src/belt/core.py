"""BELT: completion of a low-rank symmetric matrix from overlapping principal blocks.

Each source observes a noisy principal submatrix ``W^s = W*[V_s, V_s] + E^s``.
The pipeline is

1. estimate each source's noise level from the residual of its own rank-r
   truncation and average overlapping entries with inverse-variance weights;
2. impute every missing cross block ``(V_s \\ V_k) x (V_k \\ V_s)`` by aligning
   the two sources' spectral factors on their overlap with an orthogonal
   Procrustes rotation;
3. take the rank-r eigendecomposition of the imputed matrix.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, Optional, Sequence

import numpy as np

from . import _parallel
from .errors import CompletionError, NumericalError, PreconditionError, ValidationError
from .spectral import EigPair, check_symmetric, procrustes_map, top_r_eig

__all__ = [
    "GroundTruth",
    "SourceObservation",
    "AggregatedMatrix",
    "PairRecord",
    "CompletionResult",
    "estimate_noise",
    "aggregate",
    "pair_partition",
    "impute_pair",
    "complete",
    "embeddings_of",
    "EIG_CLAMP_RTOL",
    "SIGMA_FLOOR",
]

logger = logging.getLogger(__name__)

EIG_CLAMP_RTOL = 1e-12
SIGMA_FLOOR = 1e-12


@dataclass(frozen=True)
class GroundTruth:
    """Population matrix ``W* = U diag(eigenvalues) U.T`` used for simulation."""

    singular_space: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        U = np.asarray(self.singular_space, dtype=float)
        lam = np.asarray(self.eigenvalues, dtype=float).ravel()
        if U.ndim != 2 or U.shape[1] != lam.size:
            raise ValidationError(
                f"singular space {U.shape} does not match {lam.size} eigenvalues"
            )
        if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
            raise ValidationError("eigenvalues must be strictly positive and descending")
        if np.max(np.abs(U.T @ U - np.eye(lam.size))) > 1e-8:
            raise ValidationError("singular space must have orthonormal columns")
        object.__setattr__(self, "singular_space", U)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def dimension(self) -> int:
        return self.singular_space.shape[0]

    @property
    def rank(self) -> int:
        return self.eigenvalues.size

    def submatrix(self, rows, cols=None) -> np.ndarray:
        """``W*[rows, cols]`` without forming the full N x N matrix."""
        U = self.singular_space
        left = U[np.asarray(rows, dtype=np.intp)] * self.eigenvalues
        right = U[np.asarray(rows if cols is None else cols, dtype=np.intp)]
        out = left @ right.T
        if cols is None:
            out = 0.5 * (out + out.T)
        return out

    def matrix(self) -> np.ndarray:
        return self.submatrix(np.arange(self.dimension))


@dataclass(frozen=True)
class SourceObservation:
    """One source: sorted global entity ids and the symmetric block it observed."""

    indices: np.ndarray
    matrix: np.ndarray
    label: str = ""

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 1 or (idx.size and not np.issubdtype(idx.dtype, np.integer)):
            raise ValidationError("indices must be a 1-d integer array")
        idx = idx.astype(np.int64)
        if idx.size == 0:
            raise ValidationError(f"source {self.label!r} has no entities")
        if np.any(np.diff(idx) <= 0):
            raise ValidationError(f"indices of source {self.label!r} must be strictly increasing")
        W = check_symmetric(self.matrix, name=f"source {self.label!r} matrix")
        if W.shape[0] != idx.size:
            raise ValidationError(
                f"source {self.label!r}: matrix is {W.shape[0]}x{W.shape[0]} "
                f"but {idx.size} indices were given"
            )
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "matrix", W)

    @property
    def size(self) -> int:
        return self.indices.size


@dataclass(frozen=True)
class AggregatedMatrix:
    """Inverse-variance average of all sources on the union of their entities.

    Attributes
    ----------
    matrix : (n, n) ndarray
        Aggregated matrix; entries no source observes are exactly zero.
    global_index : (n,) ndarray
        Global entity id of each local row (sorted union of the sources' ids).
    positions : list of ndarray
        ``positions[s]`` are the local rows of source ``s``'s entities.
    row_sources : (n, m) bool ndarray
        ``row_sources[i, s]`` is true when source ``s`` contains entity ``i``.
        Entry ``(i, j)`` is observed by ``s`` iff both rows are.
    source_noise : (m,) ndarray
        Noise estimates used for the weights.
    labels : tuple of str
    """

    matrix: np.ndarray
    global_index: np.ndarray
    positions: list
    row_sources: np.ndarray
    source_noise: np.ndarray
    labels: tuple = ()

    @property
    def n(self) -> int:
        return self.global_index.size

    @property
    def n_sources(self) -> int:
        return self.row_sources.shape[1]

    def coverage(self) -> np.ndarray:
        """Number of sources observing each entry (n x n, symmetric)."""
        R = self.row_sources.astype(np.int64)
        return R @ R.T

    def observed(self) -> np.ndarray:
        return self.coverage() > 0

    def entry_sources(self, i, j) -> list:
        """Sources observing local entry ``(i, j)``."""
        return np.flatnonzero(self.row_sources[i] & self.row_sources[j]).tolist()

    def weights(self) -> np.ndarray:
        """``(m, n, n)`` array of per-source weights, zero where unobserved."""
        w = 1.0 / np.maximum(self.source_noise, SIGMA_FLOOR) ** 2
        R = self.row_sources.astype(float)
        mask = R.T[:, :, None] * R.T[:, None, :]
        num = w[:, None, None] * mask
        den = num.sum(axis=0)
        return np.divide(num, den, out=np.zeros_like(num), where=den > 0)

    def block(self, s) -> np.ndarray:
        p = self.positions[s]
        return self.matrix[np.ix_(p, p)]


@dataclass(frozen=True)
class PairRecord:
    """Outcome of one source pair during imputation.

    ``status`` is ``"imputed"`` (assigned ``n_assigned`` missing entries),
    ``"superseded"`` (every entry it covered went to a pair with a smaller
    noise sum), ``"skipped"`` (overlap too small or numerical failure), or
    ``"empty"`` (nothing to impute).
    """

    s: int
    k: int
    sigma_sum: float
    overlap: int
    n_assigned: int
    status: str
    detail: str = ""


@dataclass(frozen=True)
class CompletionResult:
    """Completed matrix and its rank-r factorization.

    Attributes
    ----------
    imputed : (n, n) ndarray
        Aggregated matrix with missing blocks imputed (before truncation).
    factors : EigPair
        Rank-r factors; eigenvalues are clamped at zero.
    embeddings : (n, r) ndarray
        ``factors.vectors * sqrt(factors.values)``.
    noise_estimates : (m,) ndarray
    imputation_log : list of PairRecord
    global_index : (n,) ndarray
    labels : tuple of str
    """

    imputed: np.ndarray
    factors: EigPair
    embeddings: np.ndarray
    noise_estimates: np.ndarray
    imputation_log: list = field(default_factory=list)
    global_index: Optional[np.ndarray] = None
    labels: tuple = ()

    @property
    def rank(self) -> int:
        return self.factors.rank

    def low_rank(self) -> np.ndarray:
        """Rank-r estimate ``U diag(values) U.T``."""
        return self.factors.reconstruct()

    def rows_of(self, entity_ids) -> np.ndarray:
        """Local rows of the given global entity ids."""
        ids = np.asarray(entity_ids)
        rows = np.searchsorted(self.global_index, ids)
        rows = np.clip(rows, 0, self.global_index.size - 1)
        if np.any(self.global_index[rows] != ids):
            raise ValidationError("some entity ids are not part of this completion")
        return rows


def estimate_noise(obs: SourceObservation, r: int) -> float:
    """Per-entry noise scale of one source.

    ``||W - P_r(W)||_F / |V|`` where ``P_r`` is the rank-r eigen truncation.
    """
    if r > obs.size:
        raise ValidationError(
            f"rank r={r} exceeds the dimension {obs.size} of source {obs.label!r}"
        )
    eig = top_r_eig(obs.matrix, r)
    return float(np.linalg.norm(obs.matrix - eig.reconstruct()) / obs.size)


def aggregate(sources: Sequence[SourceObservation], noise) -> AggregatedMatrix:
    """Combine sources on the union of their entities.

    Every entry observed by at least one source becomes the average of the
    observing sources weighted by ``1 / sigma_s**2`` (normalised over those
    sources). A zero noise estimate is replaced by ``SIGMA_FLOOR`` so a
    noiseless source takes essentially all the weight.
    """
    sources = list(sources)
    if not sources:
        raise ValidationError("aggregate needs at least one source")
    noise = np.asarray(noise, dtype=float).ravel()
    if noise.size != len(sources):
        raise ValidationError(f"{noise.size} noise levels for {len(sources)} sources")
    if np.any(~np.isfinite(noise)) or np.any(noise < 0):
        raise ValidationError("noise levels must be finite and nonnegative")
    for src in sources:
        if not isinstance(src, SourceObservation):
            raise ValidationError("sources must be SourceObservation instances")

    global_index = np.unique(np.concatenate([src.indices for src in sources]))
    n, m = global_index.size, len(sources)
    positions = [np.searchsorted(global_index, src.indices) for src in sources]
    row_sources = np.zeros((n, m), dtype=bool)
    for s, p in enumerate(positions):
        row_sources[p, s] = True

    w = 1.0 / np.maximum(noise, SIGMA_FLOOR) ** 2
    den = np.zeros((n, n))
    for s, p in enumerate(positions):
        den[np.ix_(p, p)] += w[s]
    W = np.zeros((n, n))
    for s, (src, p) in enumerate(zip(sources, positions)):
        idx = np.ix_(p, p)
        W[idx] += (w[s] / den[idx]) * src.matrix
    labels = tuple(src.label or f"source{s}" for s, src in enumerate(sources))
    return AggregatedMatrix(
        matrix=W,
        global_index=global_index,
        positions=positions,
        row_sources=row_sources,
        source_noise=noise,
        labels=labels,
    )


def pair_partition(agg: AggregatedMatrix, s: int, k: int):
    """Local rows of ``s \\ k``, ``s & k`` and ``k \\ s``, each ascending."""
    in_s = agg.row_sources[:, s]
    in_k = agg.row_sources[:, k]
    return (
        np.flatnonzero(in_s & ~in_k),
        np.flatnonzero(in_s & in_k),
        np.flatnonzero(in_k & ~in_s),
    )


def _half_factor(eig: EigPair) -> np.ndarray:
    """``V diag(sqrt(lambda))`` with small or negative eigenvalues clamped."""
    top = eig.values[0]
    if not top > 0:
        raise NumericalError(
            f"no positive eigenvalue among the top {eig.rank} (largest {top:.3e}); "
            "the block carries no rank-r signal"
        )
    floor = EIG_CLAMP_RTOL * top
    clamped = np.maximum(eig.values, floor)
    if np.any(eig.values < floor):
        logger.debug("clamped %d eigenvalues to %.3e", int(np.sum(eig.values < floor)), floor)
    return eig.vectors * np.sqrt(clamped)


def _source_eig(agg: AggregatedMatrix, s: int, r: int) -> EigPair:
    if r > agg.positions[s].size:
        raise PreconditionError(
            f"rank r={r} exceeds the {agg.positions[s].size} entities of source {agg.labels[s]!r}"
        )
    return top_r_eig(agg.block(s), r)


def impute_pair(agg: AggregatedMatrix, s: int, k: int, r: int, eig_s=None, eig_k=None, min_overlap=None):
    """Estimate the unobserved block ``(V_s \\ V_k) x (V_k \\ V_s)``.

    With ``X_s = V_s diag(lambda_s)^{1/2}`` the rank-r factor of the aggregated
    block on ``V_s`` (and likewise for ``k``), split into its ``s \\ k`` rows
    ``X_s1`` and overlap rows ``X_s2``, the estimate is
    ``X_s1 @ G(X_s2.T @ X_k1) @ X_k2.T`` where ``G`` is the orthogonal polar
    factor. This is exact when the sources are noiseless and the overlap block
    has rank ``r``.

    Parameters
    ----------
    agg : AggregatedMatrix
    s, k : int
        Source positions in ``agg``.
    r : int
    eig_s, eig_k : EigPair, optional
        Precomputed rank-r eigendecompositions of ``agg.block(s)`` and
        ``agg.block(k)`` (rows in ascending global order).
    min_overlap : int, optional
        Smallest accepted overlap, default `r`. Lower values impute from a
        rank-deficient alignment (the rotation is then not unique) and are
        only meant for exploratory use.

    Returns
    -------
    (|s \\ k|, |k \\ s|) ndarray
        Rows and columns follow ``pair_partition``.
    """
    only_s, both, only_k = pair_partition(agg, s, k)
    if only_s.size == 0 or only_k.size == 0:
        return np.zeros((only_s.size, only_k.size))
    min_overlap = r if min_overlap is None else int(min_overlap)
    if both.size < max(1, min_overlap):
        raise PreconditionError(
            f"sources {agg.labels[s]!r} and {agg.labels[k]!r} overlap on "
            f"|V_s & V_k| = {both.size} entities, fewer than the rank r = {r}"
        )
    eig_s = _source_eig(agg, s, r) if eig_s is None else eig_s
    eig_k = _source_eig(agg, k, r) if eig_k is None else eig_k

    # eigenvector rows of a source follow its entities in ascending order
    in_k_of_s = agg.row_sources[agg.positions[s], k]
    in_s_of_k = agg.row_sources[agg.positions[k], s]
    Xs = _half_factor(eig_s)
    Xk = _half_factor(eig_k)
    Xs1, Xs2 = Xs[~in_k_of_s], Xs[in_k_of_s]
    Xk1, Xk2 = Xk[in_s_of_k], Xk[~in_s_of_k]

    with warnings.catch_warnings():
        if both.size < r:
            warnings.simplefilter("ignore", RuntimeWarning)
        rotation = procrustes_map(Xs2.T @ Xk1)
    return (Xs1 @ rotation) @ Xk2.T


Imputer = Callable[..., np.ndarray]


def complete(
    sources: Sequence[SourceObservation],
    r: int,
    *,
    imputer: Optional[Imputer] = None,
    min_overlap: Optional[int] = None,
    noise=None,
    threads: Optional[int] = None,
    eig_method: str = "dense",
) -> CompletionResult:
    """Run the full BELT pipeline on a list of sources.

    Parameters
    ----------
    sources : sequence of SourceObservation
    r : int
        Target rank.
    imputer : callable, optional
        ``imputer(agg, s, k, r, eig_s=..., eig_k=..., min_overlap=...)`` returning the
        ``(s \\ k) x (k \\ s)`` block. Defaults to :func:`impute_pair`.
    min_overlap : int, optional
        Pairs with a smaller overlap are skipped. Defaults to ``r``.
    noise : array_like, optional
        Override the per-source noise estimates.
    threads : int, optional
        Worker threads for pair imputation (``None`` reads ``BELT_THREADS``).
        Serial and parallel runs give bit-identical output.
    eig_method : {"dense", "arpack"}
        Solver for the final rank-r step.

    Raises
    ------
    CompletionError
        If some missing entries are covered by no usable source pair.
    """
    sources = list(sources)
    r = int(r)
    if r < 1:
        raise ValidationError(f"rank must be positive, got {r}")
    if not sources:
        raise ValidationError("complete needs at least one source")
    imputer = impute_pair if imputer is None else imputer
    min_overlap = r if min_overlap is None else int(min_overlap)

    if noise is None:
        noise = np.array([estimate_noise(src, r) for src in sources])
    agg = aggregate(sources, noise)
    m = agg.n_sources

    eigs = [_source_eig(agg, s, r) for s in range(m)]
    sigma = agg.source_noise
    # priority: smallest noise sum first, ties to the lexicographically smallest pair
    pairs = sorted(combinations(range(m), 2), key=lambda sk: (sigma[sk[0]] + sigma[sk[1]], sk))

    parts = {sk: pair_partition(agg, *sk) for sk in pairs}

    def run(sk):
        s, k = sk
        only_s, both, only_k = parts[sk]
        if only_s.size == 0 or only_k.size == 0:
            return None
        if both.size < min_overlap:
            raise PreconditionError(
                f"overlap of {agg.labels[s]!r} and {agg.labels[k]!r} is {both.size} < {min_overlap}"
            )
        return imputer(agg, s, k, r, eig_s=eigs[s], eig_k=eigs[k], min_overlap=min_overlap)

    blocks = _parallel.ordered_map(run, pairs, threads)

    W = agg.matrix.copy()
    filled = agg.observed()
    log = []
    for sk, block in zip(pairs, blocks):
        s, k = sk
        only_s, both, only_k = parts[sk]
        ssum = float(sigma[s] + sigma[k])
        if isinstance(block, Exception):
            if not isinstance(block, (PreconditionError, NumericalError)):
                raise block
            log.append(PairRecord(s, k, ssum, both.size, 0, "skipped", str(block)))
            continue
        if block is None:
            log.append(PairRecord(s, k, ssum, both.size, 0, "empty"))
            continue
        ix = np.ix_(only_s, only_k)
        need = ~filled[ix]
        n_new = int(need.sum())
        if n_new:
            sub = W[ix]
            sub[need] = block[need]
            W[ix] = sub
            W[np.ix_(only_k, only_s)] = sub.T
            filled[ix] = True
            filled[np.ix_(only_k, only_s)] = True
        log.append(PairRecord(s, k, ssum, both.size, n_new, "imputed" if n_new else "superseded"))

    if not filled.all():
        rows, cols = np.nonzero(np.triu(~filled, 1))
        gi = agg.global_index
        uncovered = list(zip(gi[rows].tolist(), gi[cols].tolist()))
        skipped = [(agg.labels[p.s], agg.labels[p.k], p.overlap) for p in log if p.status == "skipped"]
        names = ", ".join(f"({a}, {b}: overlap {o})" for a, b, o in skipped) or "none"
        raise CompletionError(
            f"{len(uncovered)} missing entity pairs could not be imputed "
            f"(rank {r}; rejected source pairs: {names}); first: {uncovered[:5]}",
            uncovered=uncovered,
            skipped_pairs=skipped,
        )

    return _finish(W, r, agg, log, eig_method)


def _finish(W, r, agg, log, eig_method="dense") -> CompletionResult:
    if r > W.shape[0]:
        raise ValidationError(f"rank r={r} exceeds the {W.shape[0]} completed entities")
    eig = top_r_eig(W, r, method=eig_method)
    factors = EigPair(vectors=eig.vectors, values=np.maximum(eig.values, 0.0))
    return CompletionResult(
        imputed=W,
        factors=factors,
        embeddings=embeddings_of(factors),
        noise_estimates=agg.source_noise.copy(),
        imputation_log=log,
        global_index=agg.global_index,
        labels=agg.labels,
    )


def embeddings_of(result) -> np.ndarray:
    """Entity embeddings ``U diag(sqrt(values))`` so that ``X @ X.T`` is the rank-r estimate.

    Accepts a :class:`CompletionResult` or an :class:`EigPair`.
    """
    factors = result.factors if isinstance(result, CompletionResult) else result
    values = np.asarray(factors.values, dtype=float)
    if np.any(values < 0):
        raise ValidationError("embeddings need nonnegative eigenvalues")
    return factors.vectors * np.sqrt(values)
