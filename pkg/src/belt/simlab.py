"""Seeded simulation of ground truths, sources and the three benchmark settings.

Randomness comes from numpy's PCG64 bit generator seeded through
``SeedSequence(entropy=seed, spawn_key=(replicate, stream, source))``. Every
source owns its own stream, so adding sources never changes the draws of the
existing ones, and a replicate is reproducible from ``(seed, replicate)``
alone.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import _parallel
from .baselines import pretrain_complete, smc_complete
from .core import GroundTruth, SourceObservation, complete
from .errors import BeltError, GenerationError, ValidationError
from .metrics import MetricRow, precision_at_ks, relative_errors

__all__ = [
    "SimConfig",
    "Replicate",
    "rng_for",
    "gen_ground_truth",
    "draw_members",
    "observe",
    "sample_source",
    "generate_replicate",
    "run_replicate",
    "run_setting",
    "METHODS",
    "PRECISION_KS",
]

logger = logging.getLogger(__name__)

MAX_REDRAWS = 100
PRECISION_KS = (1, 5, 10, 20)

STREAM_TRUTH = 0
STREAM_SOURCE = 1
STREAM_TEST = 2


def _belt(sources, r, min_overlap=None):
    return complete(sources, r, threads=1, min_overlap=min_overlap)


def _smc(sources, r, min_overlap=None):
    return smc_complete(sources, r, threads=1)


def _pretrain(sources, r, min_overlap=None):
    return pretrain_complete(sources, r)


METHODS = {
    "belt": _belt,
    "smc": _smc,
    "pretrain": _pretrain,
}


@dataclass(frozen=True)
class SimConfig:
    """One simulation setting.

    ``sigma_rule`` is ``"linear"`` (source ``s`` gets ``s * sigma``, counting
    from 1) or ``"constant"``. ``None`` picks the rule of the setting:
    linear for settings 1 and 3, constant for setting 2. ``min_overlap``
    is forwarded to BELT (default: the rank).
    """

    setting: int = 1
    N: int = 2000
    r: int = 20
    m: int = 2
    p0: float = 0.1
    sigma: float = 0.1
    sigma_rule: Optional[str] = None
    n_test: int = 0
    seed: int = 0
    replicates: int = 10
    min_overlap: Optional[int] = None

    def __post_init__(self):
        if self.setting not in (1, 2, 3):
            raise ValidationError(f"setting must be 1, 2 or 3, got {self.setting}")
        if not 0 < self.p0 < 1:
            raise ValidationError(f"p0 must lie in (0, 1), got {self.p0}")
        if not 1 <= self.r < self.N:
            raise ValidationError(f"need 1 <= r < N, got r={self.r}, N={self.N}")
        if self.m < 1:
            raise ValidationError(f"m must be >= 1, got {self.m}")
        if self.n_test < 0:
            raise ValidationError(f"n_test must be >= 0, got {self.n_test}")
        if self.setting == 3 and self.n_test == 0:
            raise ValidationError("setting 3 needs n_test > 0")
        if self.sigma < 0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")
        if self.replicates < 1:
            raise ValidationError(f"replicates must be >= 1, got {self.replicates}")
        if self.sigma_rule not in (None, "linear", "constant"):
            raise ValidationError(f"unknown sigma_rule {self.sigma_rule!r}")

    @property
    def rule(self) -> str:
        if self.sigma_rule is not None:
            return self.sigma_rule
        return "constant" if self.setting == 2 else "linear"

    def source_sigma(self, s: int) -> float:
        """Noise level of source ``s`` (0-based)."""
        return (s + 1) * self.sigma if self.rule == "linear" else self.sigma


@dataclass
class Replicate:
    """Generated data for one replicate.

    ``vertex_of`` maps every global entity id to its vertex of ``W*``; in
    setting 3 each source sees its own copy of the test vertices, so several
    entity ids can share a vertex. ``test_ids[s]`` lists source ``s``'s test
    entity ids, aligned across sources.
    """

    ground_truth: GroundTruth
    sources: list
    vertex_of: dict
    test_ids: list = field(default_factory=list)

    def truth_for(self, entity_ids) -> np.ndarray:
        verts = np.array([self.vertex_of[int(e)] for e in entity_ids], dtype=np.intp)
        return self.ground_truth.submatrix(verts)


def rng_for(seed: int, *key: int) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(x) for x in key))
    return np.random.Generator(np.random.PCG64(ss))


def gen_ground_truth(N, r, seed, replicate=0) -> GroundTruth:
    """Random population matrix of rank `r`.

    Eigenvalues are i.i.d. ``U(sqrt(N), 4 sqrt(N))`` sorted descending; the
    eigenvectors are the Q factor of an N x r Gaussian matrix, with column
    signs matched to the diagonal of R so the basis is Haar distributed.
    """
    if not 1 <= r <= N:
        raise ValidationError(f"need 1 <= r <= N, got r={r}, N={N}")
    rng = rng_for(seed, replicate, STREAM_TRUTH)
    lam = np.sort(rng.uniform(np.sqrt(N), 4 * np.sqrt(N), size=r))[::-1]
    Q, R = np.linalg.qr(rng.standard_normal((N, r)))
    signs = np.sign(np.diag(R))
    signs[signs == 0] = 1.0
    return GroundTruth(singular_space=Q * signs, eigenvalues=lam.copy())


def draw_members(N, p, rng, min_size=1) -> np.ndarray:
    """Bernoulli(p) membership over ``range(N)``, redrawn while smaller than `min_size`."""
    if not 0 < p < 1:
        raise ValidationError(f"sampling probability must lie in (0, 1), got {p}")
    for attempt in range(MAX_REDRAWS + 1):
        members = np.flatnonzero(rng.random(N) < p)
        if members.size >= max(1, min_size):
            return members
        logger.info(
            "sampled %d entities (< %d); redrawing (attempt %d)", members.size, min_size, attempt + 1
        )
    raise GenerationError(
        f"sample stayed below {min_size} entities after {MAX_REDRAWS} redraws (N={N}, p={p})"
    )


def observe(gt: GroundTruth, vertices, sigma, rng) -> np.ndarray:
    """``W*[v, v]`` plus symmetric noise: i.i.d. N(0, sigma^2) on and above the diagonal, mirrored below."""
    vertices = np.asarray(vertices, dtype=np.intp)
    W = gt.submatrix(vertices)
    if sigma > 0:
        n = vertices.size
        E = np.triu(rng.standard_normal((n, n)) * sigma)
        W = W + E + np.triu(E, 1).T
    return W


def sample_source(gt: GroundTruth, p, sigma, seed, label="", replicate=0, s=0) -> SourceObservation:
    """One simulated source: Bernoulli(p) entities of `gt` with noise level `sigma`."""
    if sigma < 0:
        raise ValidationError(f"sigma must be nonnegative, got {sigma}")
    rng = rng_for(seed, replicate, STREAM_SOURCE, s)
    members = draw_members(gt.dimension, p, rng, min_size=gt.rank)
    return SourceObservation(indices=members, matrix=observe(gt, members, sigma, rng), label=label)


def generate_replicate(config: SimConfig, replicate: int) -> Replicate:
    """Ground truth and sources for one replicate of `config`."""
    gt = gen_ground_truth(config.N, config.r, config.seed, replicate)
    rngs = [rng_for(config.seed, replicate, STREAM_SOURCE, s) for s in range(config.m)]
    members = [draw_members(config.N, config.p0, rng, min_size=config.r) for rng in rngs]
    labels = [f"source{s + 1}" for s in range(config.m)]

    if config.setting != 3:
        sources = [
            SourceObservation(
                indices=mem,
                matrix=observe(gt, mem, config.source_sigma(s), rngs[s]),
                label=labels[s],
            )
            for s, mem in enumerate(members)
        ]
        vertex_of = {int(v): int(v) for v in np.unique(np.concatenate(members))}
        return Replicate(gt, sources, vertex_of)

    union = np.unique(np.concatenate(members))
    pool = np.setdiff1d(np.arange(config.N), union)
    if pool.size < config.n_test:
        raise GenerationError(
            f"only {pool.size} vertices lie outside all sources; n_test={config.n_test}"
        )
    test_vertices = np.sort(rng_for(config.seed, replicate, STREAM_TEST).choice(pool, config.n_test, replace=False))
    vertex_of = {int(v): int(v) for v in union}
    sources, test_ids = [], []
    for s, mem in enumerate(members):
        # each source gets private ids for the test vertices so they are never merged
        tids = config.N + s * config.n_test + np.arange(config.n_test)
        vertex_of.update(zip(tids.tolist(), test_vertices.tolist()))
        ids = np.concatenate([mem, tids])
        verts = np.concatenate([mem, test_vertices])
        sources.append(
            SourceObservation(
                indices=ids, matrix=observe(gt, verts, config.source_sigma(s), rngs[s]), label=labels[s]
            )
        )
        test_ids.append(tids)
    return Replicate(gt, sources, vertex_of, test_ids)


def _translation_precision(result, rep: Replicate, ks=PRECISION_KS):
    """Mean over sources 2..m of precision@k translating test vertices into source 1."""
    X = result.embeddings
    cand = result.rows_of(rep.sources[0].indices)
    target = result.rows_of(rep.test_ids[0])
    per_source = []
    for s in range(1, len(rep.sources)):
        queries = result.rows_of(rep.test_ids[s])
        per_source.append(precision_at_ks(X, zip(queries, target), cand, ks))
    return {k: float(np.mean([p[k] for p in per_source])) for k in ks}


def run_replicate(config: SimConfig, replicate: int, methods: Sequence[str] = ("belt",)) -> list:
    """Generate one replicate and evaluate each method on the same data."""
    base = dict(
        setting=config.setting, n=config.N, rank=config.r, m=config.m, p0=config.p0,
        sigma=config.sigma, replicate=replicate, seed=config.seed,
    )
    try:
        rep = generate_replicate(config, replicate)
    except BeltError as exc:
        return [MetricRow(method=meth, error=f"generation: {exc}", **base) for meth in methods]

    truth = None
    rows = []
    for meth in methods:
        row = MetricRow(method=meth, **base)
        t0 = time.perf_counter()
        try:
            result = METHODS[meth](rep.sources, config.r, config.min_overlap)
            if truth is None:
                truth = rep.truth_for(result.global_index)
            row.err_f, row.err_2 = relative_errors(result.low_rank(), truth)
            if config.setting == 3 and config.m >= 2:
                row.precision_at = _translation_precision(result, rep)
        except BeltError as exc:
            row.error = f"{type(exc).__name__}: {exc}"
            logger.warning("replicate %d, method %s failed: %s", replicate, meth, exc)
        row.wall_ms = (time.perf_counter() - t0) * 1e3
        rows.append(row)
    return rows


def run_setting(config: SimConfig, method="belt", threads=None) -> list:
    """All replicates of `config`, ordered by (replicate, method).

    Replicates may run concurrently; estimator failures are recorded in the
    rows rather than raised.
    """
    methods = [method] if isinstance(method, str) else list(method)
    for meth in methods:
        if meth not in METHODS:
            raise ValidationError(f"unknown method {meth!r}; choose from {sorted(METHODS)}")
    batches = _parallel.ordered_map(
        lambda i: run_replicate(config, i, methods), range(config.replicates), threads
    )
    rows = []
    for batch in batches:
        if isinstance(batch, Exception):
            raise batch
        rows.extend(batch)
    return rows


def with_overrides(config: SimConfig, **kw) -> SimConfig:
    return replace(config, **kw)
