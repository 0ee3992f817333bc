import numpy as np
import pytest
import scipy.linalg

from belt.core import (
    SourceObservation,
    aggregate,
    complete,
    embeddings_of,
    estimate_noise,
    impute_pair,
    pair_partition,
)
from belt.errors import CompletionError, PreconditionError, ValidationError
from belt.metrics import relative_errors
from belt.simlab import SimConfig, gen_ground_truth, generate_replicate
from belt.spectral import EigPair

from conftest import split_sources


def rank_r_projection(M, r):
    """Independent rank-r eigen truncation (scipy syev driver)."""
    w, V = scipy.linalg.eigh(M, driver="ev")
    order = np.argsort(w)[::-1][:r]
    return (V[:, order] * w[order]) @ V[:, order].T


def sym_noise(n, sigma, rng):
    E = np.triu(rng.standard_normal((n, n)) * sigma)
    return E + np.triu(E, 1).T


def noise_oracle(S, r, sigma, reps=100, seed=99):
    """Mean and sd of ||E - P_r(S + E) + P_r(S)||_F / n over Monte-Carlo draws."""
    n = S.shape[0]
    PS = rank_r_projection(S, r)
    vals = []
    for rep in range(reps):
        E = sym_noise(n, sigma, np.random.default_rng([seed, rep]))
        vals.append(np.linalg.norm(E - rank_r_projection(S + E, r) + PS) / n)
    return float(np.mean(vals)), float(np.std(vals))


class TestSourceObservation:
    def test_rejects_unsorted(self):
        with pytest.raises(ValidationError, match="increasing"):
            SourceObservation(indices=[2, 1], matrix=np.eye(2))

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValidationError, match="indices"):
            SourceObservation(indices=[0, 1, 2], matrix=np.eye(2))

    def test_rejects_asymmetric(self):
        with pytest.raises(ValidationError, match="symmetric"):
            SourceObservation(indices=[0, 1], matrix=[[1.0, 1.0], [0.0, 1.0]])


class TestEstimateNoise:
    def test_exact_rank_gives_zero(self):
        gt = gen_ground_truth(50, 4, seed=1)
        obs = SourceObservation(indices=np.arange(50), matrix=gt.matrix())
        for r in (4, 5, 10):
            assert estimate_noise(obs, r) <= 1e-10

    def test_within_monte_carlo_band(self):
        gt = gen_ground_truth(200, 5, seed=11)
        S = gt.matrix()
        mean, sd = noise_oracle(S, 5, 0.1)
        assert mean / 0.1 == pytest.approx(0.9746, abs=0.002)
        est = estimate_noise(
            SourceObservation(indices=np.arange(200), matrix=S + sym_noise(200, 0.1, np.random.default_rng(7))), 5
        )
        assert abs(est - mean) <= 4 * sd

    def test_linear_in_sigma(self):
        gt = gen_ground_truth(200, 5, seed=11)
        S = gt.matrix()
        ratios = []
        for seed in range(20):
            E = sym_noise(200, 1.0, np.random.default_rng(seed))
            a = estimate_noise(SourceObservation(indices=np.arange(200), matrix=S + 0.1 * E), 5)
            b = estimate_noise(SourceObservation(indices=np.arange(200), matrix=S + 0.2 * E), 5)
            ratios.append(b / a)
        assert np.mean(ratios) == pytest.approx(2.0, rel=0.1)

    def test_rank_too_large(self):
        with pytest.raises(ValidationError):
            estimate_noise(SourceObservation(indices=[0, 1], matrix=np.eye(2)), 3)


class TestAggregate:
    def test_single_source_exact(self, rng):
        A = rng.standard_normal((6, 6))
        obs = SourceObservation(indices=[1, 3, 4, 7, 8, 9], matrix=A + A.T)
        agg = aggregate([obs], [0.37])
        assert np.array_equal(agg.matrix, obs.matrix)
        assert np.array_equal(agg.global_index, obs.indices)

    def _two(self):
        a = SourceObservation(indices=[0, 1, 2], matrix=np.full((3, 3), 1.0), label="a")
        b = SourceObservation(indices=[1, 2, 3], matrix=np.full((3, 3), 2.0), label="b")
        return a, b

    def test_equal_noise_simple_average(self):
        agg = aggregate(self._two(), [0.5, 0.5])
        assert agg.matrix[1, 2] == pytest.approx(1.5)
        w = agg.weights()
        np.testing.assert_allclose(w[:, 1, 2], [0.5, 0.5])

    def test_inverse_variance_weights(self):
        agg = aggregate(self._two(), [1.0, 2.0])
        np.testing.assert_allclose(agg.weights()[:, 1, 1], [0.8, 0.2])
        assert agg.matrix[1, 1] == pytest.approx(0.8 * 1 + 0.2 * 2)

    def test_unobserved_zero_and_membership(self):
        agg = aggregate(self._two(), [1.0, 2.0])
        assert agg.matrix[0, 3] == 0 and agg.matrix[3, 0] == 0
        assert agg.entry_sources(0, 3) == []
        assert agg.entry_sources(1, 2) == [0, 1]
        assert agg.matrix[0, 0] == 1.0 and agg.matrix[3, 3] == 2.0
        cov = agg.coverage()
        assert np.array_equal(cov, cov.T)

    def test_zero_noise_takes_all_weight(self):
        agg = aggregate(self._two(), [0.0, 1.0])
        assert agg.matrix[1, 2] == pytest.approx(1.0, abs=1e-12)

    def test_errors(self):
        with pytest.raises(ValidationError):
            aggregate([], [])
        with pytest.raises(ValidationError):
            aggregate(self._two(), [1.0])


class TestImputePair:
    def test_noiseless_exact(self, small_truth, rng):
        gt = small_truth
        srcs = split_sources(gt, 40, 40, 20, rng)
        agg = aggregate(srcs, [0.0, 0.0])
        only_s, _, only_k = pair_partition(agg, 0, 1)
        block = impute_pair(agg, 0, 1, 3)
        truth = gt.submatrix(agg.global_index[only_s], agg.global_index[only_k])
        assert np.linalg.norm(block - truth) <= 1e-8 * np.linalg.norm(truth)

    def test_matches_schur_complement_oracle(self, small_truth, rng):
        gt = small_truth
        srcs = split_sources(gt, 40, 40, 20, rng)
        agg = aggregate(srcs, [0.0, 0.0])
        a, o, b = pair_partition(agg, 0, 1)
        W = agg.matrix
        schur = W[np.ix_(a, o)] @ np.linalg.lstsq(W[np.ix_(o, o)], W[np.ix_(o, b)], rcond=1e-10)[0]
        truth = gt.submatrix(agg.global_index[a], agg.global_index[b])
        block = impute_pair(agg, 0, 1, 3)
        np.testing.assert_allclose(schur, truth, atol=1e-6 * np.abs(truth).max())
        np.testing.assert_allclose(block, schur, atol=1e-6 * np.abs(truth).max())

    def test_identical_sets_empty(self, small_truth):
        idx = np.arange(60)
        srcs = [SourceObservation(indices=idx, matrix=small_truth.matrix()) for _ in range(2)]
        assert impute_pair(aggregate(srcs, [0.1, 0.1]), 0, 1, 3).shape == (0, 0)

    def test_overlap_too_small(self, small_truth, rng):
        srcs = split_sources(small_truth, 31, 31, 2, rng)
        with pytest.raises(PreconditionError, match=r"= 2 entities.*r = 3"):
            impute_pair(aggregate(srcs, [0.0, 0.0]), 0, 1, 3)

    def test_orientation_transpose(self, small_truth, rng):
        srcs = split_sources(small_truth, 40, 40, 20, rng, sigma=(0.05, 0.1))
        agg = aggregate(srcs, [0.05, 0.1])
        np.testing.assert_allclose(impute_pair(agg, 0, 1, 3), impute_pair(agg, 1, 0, 3).T, atol=1e-8)


class TestComplete:
    def test_two_sources_noiseless(self, small_truth, rng):
        srcs = split_sources(small_truth, 40, 40, 20, rng)
        res = complete(srcs, 3)
        W0 = small_truth.submatrix(res.global_index)
        assert relative_errors(res.low_rank(), W0)[0] <= 1e-8
        assert relative_errors(res.imputed, W0)[0] <= 1e-8
        assert res.imputation_log[0].status == "imputed"

    def test_single_source_is_eckart_young(self, rng):
        X = rng.standard_normal((30, 30))
        W = X @ X.T
        res = complete([SourceObservation(indices=np.arange(30), matrix=W)], 4)
        best = rank_r_projection(W, 4)
        np.testing.assert_allclose(res.low_rank(), best, atol=1e-8 * np.linalg.norm(W))
        assert res.imputation_log == []

    def test_three_sources_beat_two(self):
        errs = {2: [], 3: []}
        for seed in range(20):
            for m in (2, 3):
                cfg = SimConfig(setting=2, N=300, r=5, m=m, p0=0.5, sigma=0.05, seed=seed, replicates=1)
                rep = generate_replicate(cfg, 0)
                res = complete(rep.sources, 5)
                errs[m].append(relative_errors(res.low_rank(), rep.truth_for(res.global_index))[0])
        assert np.mean(errs[3]) < np.mean(errs[2])

    def test_uncoverable_block_raises(self, small_truth, rng):
        srcs = split_sources(small_truth, 31, 31, 2, rng)
        with pytest.raises(CompletionError) as info:
            complete(srcs, 3)
        assert info.value.skipped_pairs == [("s1", "s2", 2)]
        assert len(info.value.uncovered) == 29 * 29

    def test_conflict_goes_to_smallest_noise_sum(self, rng):
        gt = gen_ground_truth(90, 2, seed=4)
        # entity 0 only in source a, entity 89 only in b and c; both (a,b) and (a,c) cover (0, 89)
        core_ids = np.arange(1, 60)
        a = np.r_[0, core_ids]
        b = np.r_[core_ids[:40], 60 + np.arange(29)]
        c = np.r_[core_ids[20:], 60 + np.arange(30)]
        srcs = []
        for idx, sig in ((a, 0.01), (b, 0.05), (c, 0.02)):
            idx = np.unique(idx)
            srcs.append(SourceObservation(indices=idx, matrix=gt.submatrix(idx) + sym_noise(idx.size, sig, rng)))
        res = complete(srcs, 2)
        by_pair = {(p.s, p.k): p for p in res.imputation_log}
        sig = res.noise_estimates
        assert sig[0] + sig[2] < sig[0] + sig[1]
        assert by_pair[(0, 2)].status == "imputed"
        # everything (a, b) or (b, c) could fill is either observed or taken by (a, c)
        assert by_pair[(0, 1)].status == "superseded"
        assert by_pair[(1, 2)].status == "superseded"
        row, col = res.rows_of([0, 88])
        agg = aggregate(srcs, sig)
        a_, _, k_ = pair_partition(agg, 0, 2)
        block = impute_pair(agg, 0, 2, 2)
        assert res.imputed[row, col] == block[list(a_).index(row), list(k_).index(col)]

    def test_parallel_equals_serial(self):
        cfg = SimConfig(setting=2, N=400, r=4, m=4, p0=0.3, sigma=0.1, seed=3, replicates=1)
        rep = generate_replicate(cfg, 0)
        serial = complete(rep.sources, 4, threads=1)
        parallel = complete(rep.sources, 4, threads=4)
        assert np.array_equal(serial.imputed, parallel.imputed)
        assert np.array_equal(serial.embeddings, parallel.embeddings)

    def test_symmetry_exact(self):
        cfg = SimConfig(setting=2, N=300, r=4, m=3, p0=0.4, sigma=0.1, seed=8, replicates=1)
        res = complete(generate_replicate(cfg, 0).sources, 4)
        assert np.array_equal(res.imputed, res.imputed.T)


class TestEmbeddings:
    def test_identity_factors(self):
        U = np.eye(4)[:, :2]
        np.testing.assert_array_equal(embeddings_of(EigPair(U, np.ones(2))), U)

    def test_rank_one(self):
        u = np.array([0.6, 0.8])
        X = embeddings_of(EigPair(u[:, None], np.array([9.0])))
        np.testing.assert_allclose(X[:, 0], 3 * u)

    def test_reconstruction(self, small_truth, rng):
        res = complete(split_sources(small_truth, 40, 40, 20, rng, sigma=(0.1, 0.1)), 3)
        X = embeddings_of(res)
        assert np.linalg.norm(X @ X.T - res.low_rank()) <= 1e-8
        np.testing.assert_array_equal(X, res.embeddings)
