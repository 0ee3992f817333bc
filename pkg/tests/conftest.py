import numpy as np
import pytest

from belt.core import GroundTruth, SourceObservation
from belt.simlab import gen_ground_truth

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def split_sources(gt, n_s, n_k, overlap, rng, sigma=(0.0, 0.0), cover_all=True):
    """Two sources over a random permutation of ``range(N)`` with the given sizes.

    With ``cover_all`` the union is every entity (``n_s + n_k - overlap == N``).
    """
    N = gt.dimension
    if cover_all:
        assert n_s + n_k - overlap == N
    perm = rng.permutation(N)
    only_s = perm[: n_s - overlap]
    both = perm[n_s - overlap : n_s]
    only_k = perm[n_s : n_s + n_k - overlap]
    out = []
    for idx, sig in ((np.sort(np.r_[only_s, both]), sigma[0]), (np.sort(np.r_[both, only_k]), sigma[1])):
        W = gt.submatrix(idx)
        if sig:
            E = np.triu(rng.standard_normal(W.shape) * sig)
            W = W + E + np.triu(E, 1).T
        out.append(SourceObservation(indices=idx, matrix=W, label=f"s{len(out) + 1}"))
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture
def small_truth():
    return gen_ground_truth(60, 3, seed=5)
