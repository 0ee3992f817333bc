"""Dense symmetric spectral primitives.

Everything here is a pure function of its inputs. The dense LAPACK path
(``numpy.linalg.eigh``) is the reference; an ARPACK path is available for
larger matrices and is tested against the dense one.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg

from .errors import NumericalError, ValidationError

__all__ = [
    "EigPair",
    "top_r_eig",
    "procrustes_map",
    "select_rank",
    "coherence",
    "condition_number",
    "fix_signs",
    "check_symmetric",
]

SYMMETRY_RTOL = 1e-8
ORTHONORMAL_ATOL = 1e-8
RANK_DEFICIENT_RTOL = 1e-10


@dataclass(frozen=True)
class EigPair:
    """Leading eigenpairs of a symmetric matrix.

    Attributes
    ----------
    vectors : (n, r) ndarray
        Orthonormal eigenvectors, one per column.
    values : (r,) ndarray
        Eigenvalues in descending (algebraic) order.
    """

    vectors: np.ndarray
    values: np.ndarray

    @property
    def rank(self) -> int:
        return self.values.shape[0]

    def reconstruct(self) -> np.ndarray:
        """Return ``V @ diag(values) @ V.T``."""
        return (self.vectors * self.values) @ self.vectors.T


def check_symmetric(S, name="matrix", rtol=SYMMETRY_RTOL):
    """Return `S` as a float array, raising if it is not square and symmetric."""
    S = np.asarray(S, dtype=float)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {S.shape}")
    if not np.all(np.isfinite(S)):
        raise ValidationError(f"{name} contains non-finite entries")
    scale = np.linalg.norm(S)
    if scale > 0 and np.linalg.norm(S - S.T) > rtol * scale:
        raise ValidationError(
            f"{name} is not symmetric (relative asymmetry "
            f"{np.linalg.norm(S - S.T) / scale:.3e} > {rtol:g})"
        )
    return S


def fix_signs(V):
    """Flip columns so the largest-magnitude entry of each is nonnegative.

    Ties in magnitude go to the lowest row index (``argmax`` semantics).
    """
    V = np.array(V, dtype=float, copy=True)
    if V.size == 0:
        return V
    pivots = np.argmax(np.abs(V), axis=0)
    signs = np.where(V[pivots, np.arange(V.shape[1])] < 0, -1.0, 1.0)
    return V * signs


def top_r_eig(S, r, method="dense"):
    """Rank-`r` eigendecomposition of a symmetric matrix.

    The `r` algebraically largest eigenvalues are kept, so negative
    eigenvalues produced by noise are never selected ahead of positive ones.

    Parameters
    ----------
    S : (n, n) array_like
        Symmetric real matrix.
    r : int
        Number of eigenpairs, ``1 <= r <= n``.
    method : {"dense", "arpack"}
        ``"dense"`` uses a full LAPACK solve; ``"arpack"`` uses implicitly
        restarted Lanczos with a fixed start vector and falls back to the
        dense solver when ``r`` is too close to ``n``.

    Returns
    -------
    EigPair
    """
    S = check_symmetric(S)
    n = S.shape[0]
    r = int(r)
    if not 1 <= r <= n:
        raise ValidationError(f"rank r={r} must satisfy 1 <= r <= {n}")

    if method == "arpack" and r < n - 1:
        try:
            values, vectors = scipy.sparse.linalg.eigsh(
                S, k=r, which="LA", v0=np.ones(n), tol=0.0
            )
        except scipy.sparse.linalg.ArpackError as exc:
            raise NumericalError(
                f"ARPACK failed on a {n}x{n} matrix: {exc}"
            ) from exc
    elif method in ("dense", "arpack"):
        try:
            values, vectors = np.linalg.eigh(S)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(
                f"eigensolver did not converge on a {n}x{n} matrix"
            ) from exc
    else:
        raise ValidationError(f"unknown eigensolver method {method!r}")

    order = np.argsort(values, kind="stable")[::-1][:r]
    return EigPair(vectors=fix_signs(vectors[:, order]), values=values[order].copy())


def procrustes_map(C):
    """Orthogonal polar factor ``H @ Z.T`` of ``C = H @ diag(w) @ Z.T``.

    For ``C = A.T @ B`` this is the orthogonal ``R`` minimising
    ``||A @ R - B||_F``.

    Parameters
    ----------
    C : (r, r) array_like

    Returns
    -------
    (r, r) ndarray
        Orthogonal matrix.

    Warns
    -----
    RuntimeWarning
        When `C` is numerically rank deficient; the map is then not unique
        and the one implied by LAPACK's SVD is returned.
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValidationError(f"procrustes_map needs a square matrix, got {C.shape}")
    if not np.all(np.isfinite(C)):
        raise ValidationError("procrustes_map input contains non-finite entries")
    try:
        H, w, Zt = np.linalg.svd(C)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge on a {C.shape[0]}x{C.shape[0]} matrix") from exc
    if w.size and w[-1] < RANK_DEFICIENT_RTOL * w[0] or (w.size and w[0] == 0):
        warnings.warn(
            f"procrustes_map: input is rank deficient "
            f"(singular values {w[0]:.3e} .. {w[-1]:.3e}); result is not unique",
            RuntimeWarning,
            stacklevel=2,
        )
    return H @ Zt


def select_rank(eigenvalues, threshold=0.95):
    """Smallest rank whose leading eigenvalues reach `threshold` of the total.

    Negative eigenvalues are clamped to zero first. If everything is zero the
    full length is returned.

    >>> select_rank([5, 3, 1, 1], 0.8)
    2
    """
    vals = np.asarray(eigenvalues, dtype=float).ravel()
    if vals.size == 0:
        raise ValidationError("select_rank needs at least one eigenvalue")
    if not 0 < threshold <= 1:
        raise ValidationError(f"threshold must lie in (0, 1], got {threshold}")
    vals = np.clip(vals, 0.0, None)
    total = vals.sum()
    if total == 0:
        return int(vals.size)
    frac = np.cumsum(vals) / total
    # 1e-12 slack absorbs rounding in the cumulative sum
    return int(np.argmax(frac >= threshold - 1e-12) + 1)


def coherence(U):
    """Incoherence ``(n / r) * max_i ||U[i, :]||^2`` of an orthonormal basis."""
    U = np.asarray(U, dtype=float)
    if U.ndim != 2 or U.shape[1] == 0:
        raise ValidationError(f"coherence needs an (n, r) matrix, got {U.shape}")
    n, r = U.shape
    gram = U.T @ U
    if np.max(np.abs(gram - np.eye(r))) > ORTHONORMAL_ATOL:
        raise ValidationError("coherence needs orthonormal columns")
    return float(n / r * np.max(np.einsum("ij,ij->i", U, U)))


def condition_number(values):
    """Ratio of the largest to the smallest of a descending positive spectrum."""
    vals = np.asarray(values, dtype=float).ravel()
    if vals.size == 0:
        raise ValidationError("condition_number needs at least one value")
    if vals[-1] <= 0:
        raise ValidationError(
            f"smallest eigenvalue {vals[-1]:.3e} is not positive; "
            "the matrix is effectively rank deficient at this rank"
        )
    return float(vals[0] / vals[-1])
