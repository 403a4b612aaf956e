import math

import numpy as np
import pytest

from dflsim.errors import (
    InvalidBatchError,
    InvalidPartitionError,
    ShapeMismatchError,
)
from dflsim.objective import (
    Dataset,
    LogisticLocal,
    PartitionSpec,
    QuadraticLocal,
    load_csv_dataset,
    make_blobs_dataset,
    make_global,
    make_logistic_objective,
    make_quadratic_objective,
    partition,
    quadratic_optimum,
    reference_minimum,
    sample_batch,
    stochastic_gradient,
    variance_estimates,
)
from dflsim.rng import seed_stream


def two_point_objective():
    # F1(w) = (w - 1)^2 / 2, F2(w) = (w + 1)^2 / 2
    f1 = QuadraticLocal(a=np.array([[1.0]]), b=np.array([1.0]))
    f2 = QuadraticLocal(a=np.array([[1.0]]), b=np.array([-1.0]))
    return make_global([f1, f2])


class TestGlobalLoss:
    def test_identity_zero(self):
        locs = [QuadraticLocal(a=np.eye(3), b=np.zeros(3)) for _ in range(4)]
        obj = make_global(locs)
        assert obj.loss(np.zeros(3)) == 0.0

    def test_hand_two_node_value(self):
        obj = two_point_objective()
        assert obj.loss(np.zeros(1)) == pytest.approx(0.5)

    def test_logistic_all_zero_labels_at_origin(self):
        x = np.random.default_rng(1).standard_normal((12, 4))
        loc = LogisticLocal(x=x, y=np.zeros(12))
        assert loc.loss(np.zeros(4)) == pytest.approx(math.log(2.0))

    def test_dimension_mismatch(self):
        obj = two_point_objective()
        with pytest.raises(ShapeMismatchError):
            obj.loss(np.zeros(3))


class TestGradients:
    def test_full_batch_equals_exact(self):
        rng = np.random.default_rng(3)
        loc = QuadraticLocal(a=rng.standard_normal((9, 4)), b=rng.standard_normal(9), reg=0.05)
        w = rng.standard_normal(4)
        got = stochastic_gradient(loc, w, np.arange(9))
        assert np.max(np.abs(got - loc.grad(w))) <= 1e-12

    def test_single_sample_hand_formula(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((6, 3))
        b = rng.standard_normal(6)
        loc = QuadraticLocal(a=a, b=b)
        w = rng.standard_normal(3)
        j = 2
        expect = a[j] * (a[j] @ w - b[j])
        got = stochastic_gradient(loc, w, np.array([j]))
        assert np.allclose(got, expect, atol=1e-14)

    def test_empty_batch_rejected(self):
        loc = QuadraticLocal(a=np.eye(2), b=np.zeros(2))
        with pytest.raises(InvalidBatchError):
            stochastic_gradient(loc, np.zeros(2), np.array([], dtype=int))

    def test_out_of_range_batch_rejected(self):
        loc = QuadraticLocal(a=np.eye(2), b=np.zeros(2))
        with pytest.raises(InvalidBatchError):
            stochastic_gradient(loc, np.zeros(2), np.array([5]))

    def test_unbiasedness_monte_carlo(self):
        # empirical mean over 1e5 single-sample draws within 3 standard errors
        rng = np.random.default_rng(5)
        a = rng.standard_normal((8, 3))
        b = rng.standard_normal(8)
        loc = QuadraticLocal(a=a, b=b)
        w = rng.standard_normal(3)
        exact = loc.grad(w)
        per_sample = a * (a @ w - b)[:, None]  # row j is the j-th sample gradient
        draws = rng.integers(0, 8, size=100000)
        sampled = per_sample[draws]
        mean = sampled.mean(axis=0)
        stderr = sampled.std(axis=0, ddof=1) / math.sqrt(len(draws))
        assert np.all(np.abs(mean - exact) <= 3 * stderr + 1e-12)

    def test_finite_difference_match_both_objectives(self):
        rng = np.random.default_rng(6)
        quad = QuadraticLocal(a=rng.standard_normal((10, 5)), b=rng.standard_normal(10), reg=0.01)
        logi = LogisticLocal(
            x=rng.standard_normal((14, 5)), y=(rng.random(14) < 0.5).astype(float), reg=0.01
        )
        h = 1e-5
        for loc in (quad, logi):
            for _ in range(10):
                w = rng.standard_normal(5)
                g = loc.grad(w)
                fd = np.zeros(5)
                for i in range(5):
                    e = np.zeros(5)
                    e[i] = h
                    fd[i] = (loc.loss(w + e) - loc.loss(w - e)) / (2 * h)
                assert np.linalg.norm(fd - g) <= 1e-5 * max(1.0, np.linalg.norm(g))

    def test_smoothness_brackets_hessian(self):
        obj = make_quadratic_objective(
            n_nodes=4, dim=5, samples_per_node=9, cond=8.0,
            heterogeneity=0.5, noise=0.2, reg=0.01, seed=9,
        )
        big_l, mu = obj.smoothness(), obj.strong_convexity()
        hess = sum(wt * loc.hessian() for wt, loc in zip(obj.weights, obj.locals))
        eigs = np.linalg.eigvalsh(hess)
        assert mu <= eigs[0] + 1e-10
        assert eigs[-1] <= big_l + 1e-10

    def test_logistic_smoothness_formula(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((20, 4))
        loc = LogisticLocal(x=x, y=np.zeros(20), reg=0.1)
        assert loc.smoothness() == pytest.approx(np.max(np.sum(x * x, axis=1)) / 4 + 0.1)
        assert loc.strong_convexity() == 0.1


class TestVarianceEstimates:
    def test_full_batch_zero(self):
        obj = two_point_objective()
        rng = np.random.default_rng(0)
        s, sb, g = variance_estimates(obj, [np.zeros(1)], None, rng)
        assert s >= 0.0 and sb == 0.0
        assert g > 0.0

    def test_minibatch_positive_and_ordered(self):
        obj = make_quadratic_objective(
            n_nodes=3, dim=4, samples_per_node=10, cond=4.0,
            heterogeneity=0.3, noise=1.0, reg=0.0, seed=2,
        )
        rng = np.random.default_rng(1)
        probes = [rng.standard_normal(4) for _ in range(3)]
        s, sb, g = variance_estimates(obj, probes, 1, rng, draws=300)
        assert sb > 0.0
        # second moment dominates the centred deviation at the same points
        assert g >= sb

    def test_single_sample_variance_close_to_analytic(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal((12, 3))
        b = rng.standard_normal(12)
        loc = QuadraticLocal(a=a, b=b)
        obj = make_global([loc])
        w = rng.standard_normal(3)
        per_sample = a * (a @ w - b)[:, None]
        analytic = float(np.mean(np.sum((per_sample - loc.grad(w)) ** 2, axis=1)))
        _, sb, _ = variance_estimates(obj, [w], 1, np.random.default_rng(3), draws=4000)
        # 1.5x inflation on top of a Monte-Carlo mean of the analytic value
        assert sb == pytest.approx(1.5 * analytic, rel=0.15)


class TestPartition:
    def test_iid_deterministic(self):
        labels = np.arange(30) % 3
        spec = PartitionSpec(mode="iid", seed=5)
        p1 = partition(labels, spec, 4)
        p2 = partition(labels, spec, 4)
        for a, b in zip(p1, p2):
            assert np.array_equal(a, b)

    def test_label_sorted_two_labels_two_nodes(self):
        labels = np.array([0, 1] * 10)
        parts = partition(labels, PartitionSpec(mode="label_sorted", shards_per_node=1), 2)
        assert set(labels[parts[0]]) == {0}
        assert set(labels[parts[1]]) == {1}

    def test_cover_and_disjoint(self):
        labels = np.random.default_rng(0).integers(0, 5, size=53)
        for mode in ("iid", "label_sorted"):
            parts = partition(labels, PartitionSpec(mode=mode, shards_per_node=2), 4)
            joined = np.concatenate(parts)
            assert len(joined) == 53
            assert len(np.unique(joined)) == 53

    def test_too_many_nodes(self):
        with pytest.raises(InvalidPartitionError):
            partition(np.zeros(3), PartitionSpec(), 4)


class TestOptima:
    def test_quadratic_optimum_zero_gradient(self):
        obj = make_quadratic_objective(
            n_nodes=5, dim=6, samples_per_node=12, cond=10.0,
            heterogeneity=1.0, noise=0.5, reg=0.01, seed=4,
        )
        w_star = quadratic_optimum(obj)
        assert np.linalg.norm(obj.grad(w_star)) <= 1e-8

    def test_reference_minimum_logistic(self):
        ds = make_blobs_dataset(80, 3, separation=2.0, seed=1)
        parts = partition(ds.labels, PartitionSpec(mode="iid", seed=0), 4)
        obj = make_logistic_objective(ds, parts, reg=0.05)
        w_star, f_star = reference_minimum(obj, tol=1e-10)
        assert np.linalg.norm(obj.grad(w_star)) <= 1e-10
        assert f_star <= obj.loss(np.zeros(obj.dim))


class TestDatasets:
    def test_blobs_shapes_and_bias(self):
        ds = make_blobs_dataset(100, 4, separation=3.0, seed=7)
        assert ds.features.shape == (100, 5)
        assert np.all(ds.features[:, -1] == 1.0)
        assert set(ds.labels) == {0.0, 1.0}

    def test_csv_roundtrip(self, tmp_path):
        path = tmp_path / "data.csv"
        rows = np.hstack([np.arange(12).reshape(6, 2), (np.arange(6) % 2)[:, None]])
        np.savetxt(path, rows, delimiter=",")
        ds = load_csv_dataset(path)
        assert ds.features.shape == (6, 2)
        assert np.array_equal(ds.labels, np.arange(6) % 2)

    def test_sample_batch_full_and_random(self):
        loc = QuadraticLocal(a=np.eye(4), b=np.zeros(4))
        assert np.array_equal(sample_batch(loc, None, None), np.arange(4))
        assert np.array_equal(sample_batch(loc, 9, None), np.arange(4))
        picks = sample_batch(loc, 2, seed_stream(0, 0, 0, "batch"))
        assert picks.shape == (2,)
        assert np.all((0 <= picks) & (picks < 4))
