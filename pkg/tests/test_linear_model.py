"""Linear model, projection scores and data generation.

Null-distribution checks use the classical decomposition of Gaussian
quadratic forms as the oracle: with a known response variance, the cell
score of an inactive cell is exactly chi-square with one degree of freedom
per cell variable.
"""

import numpy as np
import pytest
from scipy import stats

from ctftest.errors import SingularDesignError
from ctftest.linear_model import (
    Dataset,
    Partition,
    SimConfig,
    cell_score,
    generate_dataset,
    variable_score,
)


def toy_dataset(y, x, cells, sigma=None):
    return Dataset(
        y=np.asarray(y, float),
        x=np.asarray(x, float),
        partition=Partition(cells),
        sigma_y_sq=sigma,
    )


class TestPartition:
    def test_contiguous(self):
        p = Partition.contiguous(6, 3)
        assert p.cells == ((0, 1, 2), (3, 4, 5))
        assert p.nu_g_max == 3
        assert p.cell_of(4) == 1

    def test_rejects_overlap_and_gaps(self):
        with pytest.raises(ValueError):
            Partition(((0, 1), (1, 2)))
        with pytest.raises(ValueError):
            Partition(((0, 1), (3,)))
        with pytest.raises(ValueError):
            Partition(((0, 1), ()))

    def test_mixed_cell_sizes(self):
        p = Partition(((0, 1, 2), (3,), (4, 5)))
        assert p.uniform_cell_size is None
        assert p.nu_g_max == 3


class TestGenerateDataset:
    def test_deterministic_in_seed(self):
        cfg = SimConfig(n_vars=20, cell_size=5, n_samples=50, n_active=4,
                        actives_per_cell=2, seed=77)
        d1, d2 = generate_dataset(cfg), generate_dataset(cfg)
        assert np.array_equal(d1.y, d2.y)
        assert np.array_equal(d1.x, d2.x)
        assert d1.true_active == d2.true_active == frozenset({0, 1, 5, 6})

    def test_null_model_variance(self):
        cfg = SimConfig(n_vars=10, cell_size=5, n_samples=20_000, n_active=0,
                        var_noise=3.0, seed=5)
        data = generate_dataset(cfg)
        assert data.y.var(ddof=1) == pytest.approx(3.0, rel=0.05)

    def test_signal_variance_decomposition(self):
        # var(y) = n_active * coef^2 * var_x + var_noise = 5 + 10, checked
        # as a Monte Carlo average so the tolerance has real headroom
        variances = []
        for seed in range(40):
            cfg = SimConfig(n_vars=100, cell_size=10, n_samples=5000,
                            n_active=5, actives_per_cell=5, coef=1.0,
                            var_x=1.0, var_noise=10.0, seed=seed)
            variances.append(generate_dataset(cfg).y.var(ddof=1))
        assert np.mean(variances) == pytest.approx(15.0, abs=0.5)

    def test_invalid_configs(self):
        with pytest.raises(ValueError):
            SimConfig(n_vars=10, cell_size=3, n_samples=50)
        with pytest.raises(ValueError):
            SimConfig(n_vars=10, cell_size=5, n_samples=50, n_active=3,
                      actives_per_cell=2)
        with pytest.raises(ValueError):
            SimConfig(n_vars=10, cell_size=5, n_samples=50, n_active=11)


class TestScores:
    def test_constant_response_scores_zero(self):
        rng = np.random.default_rng(0)
        data = toy_dataset(np.ones(30), rng.normal(size=(30, 4)),
                           ((0, 1), (2, 3)), sigma=1.0)
        assert cell_score(data, 0) == pytest.approx(0.0, abs=1e-18)
        assert variable_score(data, 3) == pytest.approx(0.0, abs=1e-18)

    def test_singleton_cell_equals_variable_score(self):
        rng = np.random.default_rng(1)
        data = toy_dataset(rng.normal(size=40), rng.normal(size=(40, 3)),
                           ((0,), (1, 2)))
        assert cell_score(data, 0) == pytest.approx(variable_score(data, 0),
                                                    rel=1e-12)

    def test_perfect_fit_equals_n_minus_one(self):
        # y equal to a design column: the projection recovers all centered
        # energy, and the empirical-variance normalization makes it n - 1
        rng = np.random.default_rng(2)
        x = rng.normal(size=(25, 2))
        data = toy_dataset(x[:, 0], x, ((0,), (1,)))
        assert variable_score(data, 0) == pytest.approx(24.0, rel=1e-10)

    def test_location_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(30, 4))
        y = rng.normal(size=30)
        d0 = toy_dataset(y, x, ((0, 1), (2, 3)))
        d1 = toy_dataset(y + 13.7, x, ((0, 1), (2, 3)))
        for g in (0, 1):
            assert cell_score(d0, g) == pytest.approx(cell_score(d1, g), rel=1e-9)
        for v in range(4):
            assert variable_score(d0, v) == pytest.approx(
                variable_score(d1, v), rel=1e-9
            )

    def test_nestedness(self):
        rng = np.random.default_rng(4)
        data = toy_dataset(rng.normal(size=60), rng.normal(size=(60, 12)),
                           Partition.contiguous(12, 4).cells)
        for g in range(3):
            cs = cell_score(data, g)
            for v in data.partition.cells[g]:
                assert cs >= variable_score(data, v) - 1e-9

    def test_rank_deficient_cell_raises(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(30, 4))
        x[:, 1] = 2.0 * x[:, 0]  # duplicate direction inside cell 0
        data = toy_dataset(rng.normal(size=30), x, ((0, 1), (2, 3)))
        with pytest.raises(SingularDesignError):
            cell_score(data, 0)
        assert cell_score(data, 1) > 0  # other cell unaffected

    def test_constant_column_raises(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=(30, 2))
        x[:, 1] = 4.2
        data = toy_dataset(rng.normal(size=30), x, ((0,), (1,)))
        with pytest.raises(SingularDesignError):
            variable_score(data, 1)

    def test_cell_too_large_for_sample(self):
        rng = np.random.default_rng(7)
        data = toy_dataset(rng.normal(size=4), rng.normal(size=(4, 3)),
                           ((0, 1, 2),))
        with pytest.raises(ValueError):
            cell_score(data, 0)


class TestNullDistributions:
    """Cochran-type oracle: with known variance the null scores are exactly
    chi-square."""

    def test_cell_score_null_is_chi2_cell_size(self):
        rng = np.random.default_rng(42)
        n, size, reps = 50, 10, 2000
        part = Partition.contiguous(size, size)
        scores = np.empty(reps)
        for r in range(reps):
            data = Dataset(
                y=rng.normal(size=n),
                x=rng.normal(size=(n, size)),
                partition=part,
                sigma_y_sq=1.0,
            )
            scores[r] = cell_score(data, 0)
        assert stats.kstest(scores, stats.chi2(size).cdf).pvalue > 0.01

    def test_variable_score_null_is_chi2_one(self):
        rng = np.random.default_rng(43)
        n, reps = 40, 2000
        part = Partition.contiguous(1, 1)
        scores = np.empty(reps)
        for r in range(reps):
            data = Dataset(
                y=rng.normal(size=n),
                x=rng.normal(size=(n, 1)),
                partition=part,
                sigma_y_sq=1.0,
            )
            scores[r] = variable_score(data, 0)
        assert stats.kstest(scores, stats.chi2(1).cdf).pvalue > 0.01


class TestDatasetValidation:
    def test_shape_checks(self):
        with pytest.raises(ValueError):
            toy_dataset(np.zeros(5), np.zeros((4, 2)), ((0,), (1,)))
        with pytest.raises(ValueError):
            toy_dataset(np.zeros(2), np.zeros((2, 2)), ((0,), (1,)))
        with pytest.raises(ValueError):
            toy_dataset(np.zeros(5), np.zeros((5, 3)), ((0,), (1,)))

    def test_arrays_frozen(self):
        rng = np.random.default_rng(8)
        data = toy_dataset(rng.normal(size=5), rng.normal(size=(5, 2)),
                           ((0,), (1,)))
        with pytest.raises(ValueError):
            data.y[0] = 1.0

    def test_variance_default_and_override(self):
        rng = np.random.default_rng(9)
        y = rng.normal(size=50)
        data = toy_dataset(y, rng.normal(size=(50, 2)), ((0,), (1,)))
        assert data.y_variance() == pytest.approx(y.var(ddof=1))
        known = toy_dataset(y, rng.normal(size=(50, 2)), ((0,), (1,)), sigma=2.5)
        assert known.y_variance() == 2.5
