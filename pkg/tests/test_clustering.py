import math

import numpy as np
import pytest

from gruclust.clustering import (
    GmmModel, bic, gmm_fit, hard_labels, load_mixture, num_free_params,
    save_mixture, select_k, soft_assign, transfer_assign,
)
from gruclust.metrics import adjusted_rand_index
from gruclust.numerics import Rng


def two_blobs(n_per=100, sep=5.0, p=2, seed=0):
    rng = Rng(seed)
    a = rng.normal((n_per, p)) + sep
    b = rng.normal((n_per, p)) - sep
    return np.concatenate([a, b]), np.array([0] * n_per + [1] * n_per)


class TestGmmFit:
    def test_single_component_closed_form(self):
        pts = Rng(1).normal((80, 3)) * 2.0 + 1.0
        m = gmm_fit(pts, 1, seed=0)
        np.testing.assert_allclose(m.weights, [1.0], atol=1e-12)
        np.testing.assert_allclose(m.means[0], pts.mean(axis=0), atol=1e-8)
        expected_cov = (pts - pts.mean(0)).T @ (pts - pts.mean(0)) / len(pts) + 1e-6 * np.eye(3)
        np.testing.assert_allclose(m.covariances[0], expected_cov, atol=1e-8)

    def test_recovers_separated_blobs(self):
        pts, _ = two_blobs()
        m = gmm_fit(pts, 2, seed=3)
        # components are canonicalized by first mean coordinate
        np.testing.assert_allclose(m.means[0], [-5, -5], atol=0.2)
        np.testing.assert_allclose(m.means[1], [5, 5], atol=0.2)
        np.testing.assert_allclose(m.weights, [0.5, 0.5], atol=0.05)

    def test_duplicated_dataset_same_parameters(self):
        pts, _ = two_blobs(n_per=60, seed=5)
        m1 = gmm_fit(pts, 2, seed=7)
        m2 = gmm_fit(np.concatenate([pts, pts]), 2, seed=7)
        np.testing.assert_allclose(m1.means, m2.means, atol=1e-3)
        np.testing.assert_allclose(m1.weights, m2.weights, atol=1e-3)
        np.testing.assert_allclose(m1.covariances, m2.covariances, atol=1e-3)

    def test_loglik_trace_nondecreasing(self):
        for seed in range(6):
            rng = Rng(seed + 50)
            pts = rng.normal((120, 4))
            m = gmm_fit(pts, 3, seed=seed)
            trace = np.array(m.ll_trace)
            assert np.all(np.diff(trace) >= -1e-8)

    def test_responsibility_rows_sum_to_one(self):
        pts, _ = two_blobs(n_per=50, sep=2.0, seed=9)
        m = gmm_fit(pts, 3, seed=1)
        resp = soft_assign(m, pts)
        np.testing.assert_allclose(resp.sum(axis=1), np.ones(100), atol=1e-10)
        assert np.all((resp >= 0) & (resp <= 1))

    def test_order_permutation_invariance(self):
        pts, _ = two_blobs(n_per=40, sep=3.0, seed=11)
        perm = Rng(13)
        order = list(range(len(pts)))
        perm.shuffle(order)
        m1 = gmm_fit(pts, 2, seed=21)
        m2 = gmm_fit(pts[order], 2, seed=21)
        h1 = hard_labels(soft_assign(m1, pts))
        h2 = hard_labels(soft_assign(m2, pts))
        assert adjusted_rand_index(h1, h2) == pytest.approx(1.0)

    def test_too_few_points_rejected(self):
        with pytest.raises(ValueError, match="at least"):
            gmm_fit(np.zeros((2, 2)), 3, seed=0)

    def test_nonfinite_rejected(self):
        pts = np.zeros((10, 2))
        pts[0, 0] = np.inf
        with pytest.raises(ValueError):
            gmm_fit(pts, 1, seed=0)


class TestBic:
    def test_param_count_formula(self):
        # independently recount: (K-1) weights + K*p means + K*p(p+1)/2 covs
        for K in range(1, 5):
            for p in range(1, 4):
                expected = (K - 1) + K * p + K * (p * (p + 1) // 2)
                assert num_free_params(K, p, "full") == expected
                assert num_free_params(K, p, "diag") == (K - 1) + K * p + K * p

    def test_k1_p1_hand_arithmetic(self):
        pts = np.array([[1.0], [2.0], [3.0], [6.0]])
        m = gmm_fit(pts, 1, seed=0)
        n = 4
        var = pts.var() + 1e-6
        ll = -0.5 * n * (math.log(2 * math.pi * var) + pts.var() / var)
        expected = -2.0 * ll + 2 * math.log(n)
        assert bic(m, pts) == pytest.approx(expected, rel=1e-10)

    def test_duplicated_dataset_algebra(self):
        pts, _ = two_blobs(n_per=40, seed=15)
        m = gmm_fit(pts, 2, seed=2)
        dup = np.concatenate([pts, pts])
        n, mfree = len(pts), num_free_params(2, 2)
        ll = -(bic(m, pts) - mfree * math.log(n)) / 2.0
        expected_dup = -2.0 * (2.0 * ll) + mfree * math.log(2 * n)
        assert bic(m, dup) == pytest.approx(expected_dup, rel=1e-10)

    def test_two_blob_argmin_at_two(self):
        pts, _ = two_blobs(n_per=200, seed=17)
        _, table = select_k(pts, range(1, 10), seed=4)
        best_k = min(table, key=lambda row: row[1])[0]
        assert best_k == 2


class TestSelectK:
    def test_single_cloud_selects_one(self):
        pts = Rng(19).normal((300, 2))
        model, _ = select_k(pts, range(1, 6), seed=5)
        assert model.K == 1

    def test_two_blobs_select_two(self):
        pts, _ = two_blobs(n_per=200, seed=21)
        model, table = select_k(pts, range(1, 10), seed=6)
        assert model.K == 2
        assert len(table) == 9

    def test_degenerate_range(self):
        pts, _ = two_blobs(n_per=30, seed=23)
        model, table = select_k(pts, [3], seed=7)
        assert model.K == 3 and len(table) == 1

    def test_empty_range_rejected(self):
        with pytest.raises(ValueError):
            select_k(np.zeros((10, 2)), [], seed=0)


class TestSoftAssign:
    def test_point_at_mean_of_far_component(self):
        pts, _ = two_blobs(n_per=80, seed=25)
        m = gmm_fit(pts, 2, seed=8)
        resp = soft_assign(m, m.means[:1])
        assert resp[0, 0] >= 0.999

    def test_k1_all_ones(self):
        pts = Rng(27).normal((40, 2))
        m = gmm_fit(pts, 1, seed=9)
        np.testing.assert_array_equal(soft_assign(m, pts), np.ones((40, 1)))

    def test_symmetric_midpoint(self):
        cov = np.eye(2)
        m = GmmModel(weights=np.array([0.5, 0.5]),
                     means=np.array([[-1.0, 0.0], [1.0, 0.0]]),
                     covariances=np.stack([cov, cov]),
                     log_likelihood=0.0, n_iter=0, converged=True,
                     ridge=0.0, cov_mode="full", seed=0)
        resp = soft_assign(m, np.array([[0.0, 0.0]]))
        np.testing.assert_allclose(resp, [[0.5, 0.5]], atol=1e-10)

    def test_dimension_mismatch(self):
        pts, _ = two_blobs(n_per=20, seed=29)
        m = gmm_fit(pts, 2, seed=10)
        with pytest.raises(ValueError):
            soft_assign(m, np.zeros((5, 3)))


class TestTransferAssign:
    def test_identity_on_discovery(self):
        pts, _ = two_blobs(n_per=60, seed=31)
        m = gmm_fit(pts, 2, seed=11)
        np.testing.assert_array_equal(transfer_assign(m, pts), soft_assign(m, pts))

    def test_small_shift_keeps_hard_labels(self):
        pts, _ = two_blobs(n_per=150, seed=33)
        m = gmm_fit(pts, 2, seed=12)
        base = hard_labels(soft_assign(m, pts))
        shifted = hard_labels(transfer_assign(m, pts + 0.1))
        assert np.mean(base == shifted) >= 0.99

    def test_empty_external_set(self):
        pts, _ = two_blobs(n_per=20, seed=35)
        m = gmm_fit(pts, 2, seed=13)
        out = transfer_assign(m, np.zeros((0, 2)))
        assert out.shape == (0, 2)


class TestMixtureCheckpoint:
    def test_roundtrip(self, tmp_path):
        pts, _ = two_blobs(n_per=50, seed=37)
        m = gmm_fit(pts, 2, seed=14)
        path = tmp_path / "mixture.bin"
        save_mixture(path, m)
        loaded = load_mixture(path)
        np.testing.assert_array_equal(loaded.weights, m.weights)
        np.testing.assert_array_equal(loaded.means, m.means)
        np.testing.assert_array_equal(loaded.covariances, m.covariances)
        assert loaded.K == 2 and loaded.cov_mode == "full"

    def test_byte_determinism(self, tmp_path):
        pts, _ = two_blobs(n_per=30, seed=39)
        m = gmm_fit(pts, 2, seed=15)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_mixture(a, m)
        save_mixture(b, m)
        assert a.read_bytes() == b.read_bytes()


class TestDiagMode:
    def test_diag_covariances_are_diagonal(self):
        pts, _ = two_blobs(n_per=60, seed=41)
        m = gmm_fit(pts, 2, seed=16, cov_mode="diag")
        for cov in m.covariances:
            off = cov - np.diag(np.diag(cov))
            np.testing.assert_array_equal(off, np.zeros_like(off))

    def test_unknown_mode_rejected(self):
        with pytest.raises(ValueError):
            gmm_fit(np.zeros((10, 2)), 1, seed=0, cov_mode="spherical")
