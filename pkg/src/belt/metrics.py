"""Relative errors, cosine translation and precision@k."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError

__all__ = ["MetricRow", "relative_errors", "translate", "precision_at_k", "spectral_norm"]


@dataclass
class MetricRow:
    """Outcome of one estimator on one simulated replicate.

    Failed runs keep ``err_f``/``err_2`` as NaN and carry the message in ``error``.
    """

    setting: int
    method: str
    n: int
    rank: int
    m: int
    p0: float
    sigma: float
    replicate: int
    seed: int
    err_f: float = math.nan
    err_2: float = math.nan
    precision_at: dict = field(default_factory=dict)
    wall_ms: float = math.nan
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None


def spectral_norm(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.size == 0:
        return 0.0
    if A.shape[0] == A.shape[1] and np.array_equal(A, A.T):
        return float(np.max(np.abs(np.linalg.eigvalsh(A))))
    return float(np.linalg.norm(A, 2))


def relative_errors(estimate, truth):
    """``(||est - truth||_F / ||truth||_F, ||est - truth||_2 / ||truth||_2)``."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise ValidationError(f"shape mismatch: {est.shape} vs {tru.shape}")
    nf = np.linalg.norm(tru)
    if nf == 0:
        raise ValidationError("truth has zero norm; relative error undefined")
    diff = est - tru
    return float(np.linalg.norm(diff) / nf), float(spectral_norm(diff) / spectral_norm(tru))


def _unit_rows(X, rows):
    V = X[rows]
    norms = np.linalg.norm(V, axis=1)
    return V, norms


def translate(embeddings, query, candidates, k, c=-1.0):
    """Rank candidate rows by cosine similarity to row `query`.

    Returns at most `k` ``(candidate, cosine)`` pairs with cosine >= `c`,
    sorted by descending cosine and then ascending candidate index. Rows with
    zero norm are dropped with a warning.
    """
    X = np.asarray(embeddings, dtype=float)
    cand = np.asarray(list(candidates), dtype=np.intp)
    if cand.size == 0:
        raise ValidationError("candidate set is empty")
    if k < 1:
        raise ValidationError(f"k must be positive, got {k}")
    q = X[query]
    qn = np.linalg.norm(q)
    if qn == 0:
        warnings.warn(f"query row {query} has zero norm; no translation", RuntimeWarning, stacklevel=2)
        return []
    V, norms = _unit_rows(X, cand)
    keep = norms > 0
    if not keep.all():
        warnings.warn(
            f"{int((~keep).sum())} candidate rows have zero norm and were excluded",
            RuntimeWarning,
            stacklevel=2,
        )
        cand, V, norms = cand[keep], V[keep], norms[keep]
    cos = (V @ q) / (norms * qn)
    order = np.lexsort((cand, -cos))
    out = []
    for i in order[:k]:
        if cos[i] < c:
            break
        out.append((int(cand[i]), float(cos[i])))
    return out


def precision_at_k(embeddings, test_pairs, candidates, k):
    """Fraction of queries whose true counterpart is among the top-`k` candidates.

    ``test_pairs`` holds ``(query, truth)`` where ``truth`` may be a single
    index or a collection; a query scores if any truth index is retrieved.
    """
    pairs = list(test_pairs)
    if not pairs:
        raise ValidationError("precision_at_k needs at least one test pair")
    cand = list(candidates)
    hits = 0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for query, truth in pairs:
            truths = {int(t) for t in np.atleast_1d(truth)}
            ranked = translate(embeddings, query, cand, k)
            hits += any(j in truths for j, _ in ranked)
    return hits / len(pairs)


def precision_at_ks(embeddings, test_pairs, candidates, ks):
    """``{k: precision_at_k(...)}`` for several k from one ranking per query."""
    pairs = list(test_pairs)
    if not pairs:
        raise ValidationError("precision_at_k needs at least one test pair")
    ks = sorted({int(k) for k in ks})
    cand = list(candidates)
    hits = dict.fromkeys(ks, 0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        for query, truth in pairs:
            truths = {int(t) for t in np.atleast_1d(truth)}
            ranked = [j for j, _ in translate(embeddings, query, cand, ks[-1])]
            for k in ks:
                hits[k] += any(j in truths for j in ranked[:k])
    return {k: hits[k] / len(pairs) for k in ks}
