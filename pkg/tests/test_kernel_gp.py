"""Tests for the cosine kernel and class-wise GP posteriors."""

import os
import shutil
import tempfile
import unittest
from unittest import mock

import numpy as np
from scipy import linalg

from gp_ada import kernel_gp
from gp_ada.data import Dataset, Domain, FeatureRecord, PoolState
from gp_ada.errors import FactorizationError
from gp_ada.kernel_gp import (
    PosteriorVarianceVector,
    assemble_pv,
    class_partition,
    compute_pv,
    cosine_kernel,
    gp_posterior,
    posterior_variance,
    write_pv_csv,
)


def direct_posterior(F_u, F_l, jitter):
    """Mean and covariance by explicit inversion, written independently of gp_posterior."""
    def k(P, Q):
        P = P / np.linalg.norm(P, axis=1, keepdims=True)
        Q = Q / np.linalg.norm(Q, axis=1, keepdims=True)
        return P @ Q.T

    A_inv = np.linalg.inv(k(F_l, F_l) + jitter * np.eye(len(F_l)))
    mean = k(F_u, F_l) @ A_inv @ F_l
    cov = k(F_u, F_u) - k(F_u, F_l) @ A_inv @ k(F_l, F_u)
    return mean, cov


class TestCosineKernel(unittest.TestCase):
    """Test cosine_kernel."""

    def test_examples(self):
        np.testing.assert_allclose(cosine_kernel([[3.0, 4.0]], [[3.0, 4.0]]).entries, [[1.0]])
        np.testing.assert_allclose(cosine_kernel([[1.0, 0.0]], [[0.0, 1.0]]).entries, [[0.0]])
        np.testing.assert_allclose(
            cosine_kernel([[1.0, 1.0]], [[1.0, 0.0]]).entries, [[0.7071067811865476]], rtol=1e-12
        )

    def test_bounds_and_symmetry(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((30, 5))
        K = cosine_kernel(X, X).entries
        self.assertTrue(np.all(np.abs(K) <= 1.0 + 1e-12))
        np.testing.assert_allclose(K, K.T, atol=1e-12)
        # parallel and antiparallel rows stay within bounds after rounding
        Y = np.array([[1e-3, 7.0], [-2e-3, -14.0]])
        self.assertTrue(np.all(np.abs(cosine_kernel(Y, Y).entries) <= 1.0))

    def test_ids_follow_axes(self):
        K = cosine_kernel([[1.0, 0.0], [0.0, 1.0]], [[1.0, 1.0]], row_ids=[5, 9], col_ids=[2])
        self.assertEqual(K.row_ids, [5, 9])
        self.assertEqual(K.col_ids, [2])
        self.assertEqual(K.entries.shape, (2, 1))

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            cosine_kernel([[1.0, 0.0]], [[1.0, 0.0, 0.0]])


class TestGpPosterior(unittest.TestCase):
    """Test gp_posterior against closed forms and a direct-inversion oracle."""

    def test_single_sample(self):
        x = [[0.3, -1.2, 2.0]]
        jitter = 1e-4
        post = gp_posterior(x, x, jitter=jitter)
        np.testing.assert_allclose(post.covariance, [[1.0 - 1.0 / (1.0 + jitter)]], rtol=1e-9)
        self.assertAlmostEqual(post.covariance[0, 0], jitter, delta=1e-8)

    def test_orthogonal_is_uninformative(self):
        post = gp_posterior([[0.0, 1.0]], [[1.0, 0.0]])
        np.testing.assert_allclose(post.covariance, [[1.0]], atol=1e-12)
        np.testing.assert_allclose(post.mean, [[0.0, 0.0]], atol=1e-12)

    def test_matches_direct_inversion(self):
        rng = np.random.default_rng(2)
        F_l = rng.standard_normal((6, 3))
        F_u = rng.standard_normal((4, 3))
        post = gp_posterior(F_u, F_l, jitter=1e-4)
        mean, cov = direct_posterior(F_u, F_l, 1e-4)
        np.testing.assert_allclose(post.covariance, cov, atol=1e-8)
        np.testing.assert_allclose(post.mean, mean, atol=1e-8)
        self.assertEqual(post.mean.shape, (4, 3))
        np.testing.assert_allclose(
            posterior_variance(post).pv, np.maximum(np.diag(cov), 0.0), atol=1e-8
        )

    def test_random_instances_match_oracle(self):
        rng = np.random.default_rng(3)
        for trial in range(120):
            with self.subTest(trial=trial):
                d = int(rng.integers(1, 9))
                F_l = rng.standard_normal((int(rng.integers(1, 21)), d))
                F_u = rng.standard_normal((int(rng.integers(1, 21)), d))
                post = gp_posterior(F_u, F_l, jitter=1e-4)
                mean, cov = direct_posterior(F_u, F_l, 1e-4)
                np.testing.assert_allclose(post.covariance, cov, atol=1e-8)
                np.testing.assert_allclose(post.mean, mean, atol=1e-8)
                np.testing.assert_allclose(post.covariance, post.covariance.T, atol=1e-10)
                self.assertTrue(np.all(np.diag(post.covariance) >= -1e-10))

    def test_diagonal_path_agrees(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            F_l = rng.standard_normal((15, 6))
            F_u = rng.standard_normal((12, 6))
            full = gp_posterior(F_u, F_l, full_covariance=True)
            diag = gp_posterior(F_u, F_l, full_covariance=False)
            self.assertIsNone(diag.covariance)
            np.testing.assert_allclose(diag.diagonal, full.diagonal, atol=1e-10)

    def test_more_data_never_increases_variance(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            F_u = rng.standard_normal((8, 4))
            F_l_big = rng.standard_normal((12, 4))
            F_l = F_l_big[: int(rng.integers(1, 12))]
            small = posterior_variance(gp_posterior(F_u, F_l)).pv
            big = posterior_variance(gp_posterior(F_u, F_l_big)).pv
            self.assertTrue(np.all(big <= small + 1e-8))

    def test_labeled_point_recovery(self):
        rng = np.random.default_rng(6)
        jitter = 1e-4
        F_l = rng.standard_normal((10, 5))
        F_u = np.vstack([F_l[3], rng.standard_normal(5)])
        pv = posterior_variance(gp_posterior(F_u, F_l, jitter=jitter)).pv
        self.assertLessEqual(pv[0], 2 * jitter)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        F_l = rng.standard_normal((7, 4))
        F_u = rng.standard_normal((6, 4))
        perm = rng.permutation(6)
        base = gp_posterior(F_u, F_l)
        permuted = gp_posterior(F_u[perm], F_l)
        np.testing.assert_allclose(permuted.mean, base.mean[perm], atol=1e-12)
        np.testing.assert_allclose(permuted.covariance, base.covariance[np.ix_(perm, perm)], atol=1e-12)

    def test_preconditions(self):
        with self.assertRaises(ValueError):
            gp_posterior([[1.0, 0.0]], np.zeros((0, 2)))
        with self.assertRaises(ValueError):
            gp_posterior([[1.0, 0.0]], [[1.0, 0.0]], jitter=0.0)

    def test_jitter_escalation(self):
        real = linalg.cho_factor
        calls = []

        def flaky(matrix, *args, **kwargs):
            calls.append(matrix[0, 0])
            if len(calls) < 3:
                raise linalg.LinAlgError("not positive definite")
            return real(matrix, *args, **kwargs)

        with mock.patch.object(kernel_gp.linalg, "cho_factor", side_effect=flaky):
            with self.assertLogs("gp_ada.kernel_gp", level="WARNING"):
                post = gp_posterior([[1.0, 2.0]], [[2.0, 1.0], [1.0, 1.0]], jitter=1e-4, class_id=2)
        self.assertAlmostEqual(post.jitter_used, 1e-2)
        self.assertEqual(len(calls), 3)

    def test_factorization_failure_names_class(self):
        with mock.patch.object(
            kernel_gp.linalg, "cho_factor", side_effect=linalg.LinAlgError("singular")
        ) as patched:
            with self.assertRaises(FactorizationError) as ctx:
                gp_posterior([[1.0, 2.0]], [[2.0, 1.0]], class_id=4)
        self.assertEqual(ctx.exception.class_id, 4)
        self.assertAlmostEqual(ctx.exception.jitter, 0.1)
        self.assertEqual(patched.call_count, 4)


class TestPvAssembly(unittest.TestCase):
    """Test posterior_variance and assemble_pv."""

    def test_clamp(self):
        post = kernel_gp.ClassGpPosterior(
            class_id=0,
            mean=np.zeros((3, 1)),
            covariance=None,
            diagonal=np.array([0.2, 0.0, -1e-12]),
            member_ids=[4, 5, 6],
            jitter_used=1e-4,
        )
        pv = posterior_variance(post)
        np.testing.assert_array_equal(pv.pv, [0.2, 0.0, 0.0])
        self.assertEqual(pv.ids, [4, 5, 6])

    def test_empty_class(self):
        post = gp_posterior(np.zeros((0, 2)), [[1.0, 0.0]])
        self.assertEqual(len(posterior_variance(post)), 0)

    def test_concatenation_in_class_order(self):
        pv = assemble_pv(
            {
                1: PosteriorVarianceVector(np.array([0.3, 0.2]), [8, 2]),
                0: PosteriorVarianceVector(np.array([0.1]), [5]),
            }
        )
        np.testing.assert_array_equal(pv.pv, [0.1, 0.3, 0.2])
        self.assertEqual(pv.ids, [5, 8, 2])

    def test_all_empty(self):
        pv = assemble_pv({0: PosteriorVarianceVector(np.zeros(0), []), 1: PosteriorVarianceVector(np.zeros(0), [])})
        self.assertEqual(len(pv), 0)

    def test_duplicate_id(self):
        with self.assertRaises(ValueError):
            assemble_pv(
                {
                    0: PosteriorVarianceVector(np.array([0.1]), [3]),
                    1: PosteriorVarianceVector(np.array([0.2]), [3]),
                }
            )


class TestClassPartition(unittest.TestCase):
    """Test class_partition and compute_pv over a pool."""

    def setUp(self):
        rng = np.random.default_rng(8)
        labels = [(Domain.SOURCE, 0), (Domain.SOURCE, 0), (Domain.SOURCE, 1), (Domain.TARGET, 0), (Domain.TARGET, 1)]
        records = [
            FeatureRecord(i, domain, label, rng.standard_normal(3) + 2)
            for i, (domain, label) in enumerate(labels)
        ]
        self.dataset = Dataset(records=records, num_classes=2, dim=3)
        self.pool = PoolState(
            source_ids={0, 1, 2},
            target_queried_ids=set(),
            target_plcs_labels={},
            target_unlabeled_ids={3, 4},
            budget_total=0,
            rounds=1,
        )
        self.test_dir = tempfile.mkdtemp(prefix="gp_ada_gp_")

    def tearDown(self):
        shutil.rmtree(self.test_dir, ignore_errors=True)

    def test_enumeration(self):
        parts = class_partition(self.pool, self.dataset, {3: 1, 4: 1})
        self.assertEqual(len(parts[0].labeled_ids), 2)
        self.assertEqual(len(parts[1].labeled_ids), 1)
        self.assertEqual(parts[1].unlabeled_ids, [3, 4])
        self.assertEqual(parts[0].unlabeled_ids, [])
        self.assertEqual(parts[1].unlabeled_features.shape, (2, 3))

    def test_plcs_samples_use_stored_pseudo_labels(self):
        self.pool.target_unlabeled_ids = {4}
        self.pool.target_plcs_labels = {3: 1}
        parts = class_partition(self.pool, self.dataset, {4: 0})
        self.assertEqual(parts[1].labeled_ids, [2, 3])
        self.assertEqual(parts[0].unlabeled_ids, [4])

    def test_empty_unlabeled_pool(self):
        self.pool.target_unlabeled_ids = set()
        parts = class_partition(self.pool, self.dataset, {})
        self.assertTrue(all(not p.unlabeled_ids for p in parts.values()))
        self.assertEqual(len(compute_pv(self.pool, self.dataset, {})), 0)

    def test_missing_pseudo_label(self):
        with self.assertRaises(ValueError):
            class_partition(self.pool, self.dataset, {3: 0})

    def test_class_without_labeled_gets_prior(self):
        records = [
            FeatureRecord(0, Domain.SOURCE, 0, np.array([1.0, 0.0])),
            FeatureRecord(1, Domain.SOURCE, 1, np.array([0.0, 1.0])),
            FeatureRecord(2, Domain.SOURCE, 2, np.array([1.0, 1.0])),
            FeatureRecord(3, Domain.TARGET, 2, np.array([1.0, 2.0])),
        ]
        dataset = Dataset(records=records, num_classes=3, dim=2)
        pool = PoolState({0, 1}, set(), {}, {3}, 0, 1)
        # class 2's only source sample is left out of the pool
        pv = compute_pv(pool, dataset, {3: 2})
        self.assertEqual(pv.ids, [3])
        np.testing.assert_allclose(pv.pv, [1.0])

    def test_probe_csv(self):
        pv = compute_pv(self.pool, self.dataset, {3: 1, 4: 0})
        path = os.path.join(self.test_dir, "gp_probe.csv")
        write_pv_csv(pv, {3: 1, 4: 0}, path)
        with open(path, encoding="utf-8") as f:
            lines = f.read().splitlines()
        self.assertEqual(lines[0], "id,pseudo_label,posterior_variance")
        self.assertEqual([line.split(",")[:2] for line in lines[1:]], [["3", "1"], ["4", "0"]])
        self.assertTrue(all(float(line.split(",")[2]) >= 0 for line in lines[1:]))


if __name__ == "__main__":
    unittest.main()
