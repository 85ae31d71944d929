"""Active-cell count estimation and the adjusted discovery procedure.

Coverage and count-process properties are checked by simulating cell
p-values directly from their assumed law: uniform for inactive cells,
essentially zero for strongly active ones.
"""

import math
import warnings

import mpmath
import numpy as np
import pytest
from scipy import stats

from ctftest.active_cells import (
    ActiveCellEstimate,
    adjusted_discovery,
    all_cell_pvalues,
    cell_pvalue,
    estimate_active_cells,
    inactive_count_root,
    plausibility_check,
    threshold_counts,
)
from ctftest.linear_model import Dataset, Partition, SimConfig, generate_dataset
from ctftest.parametric import PowerTarget, optimize_thresholds, run_parametric_test


def _simulated_pvalues(rng, n_cells, n_active):
    inactive = rng.uniform(size=n_cells - n_active)
    active = rng.uniform(size=n_active) * 1e-8
    return np.concatenate([active, inactive])


class TestCellPvalue:
    def test_zero_score_gives_one(self):
        rng = np.random.default_rng(0)
        data = Dataset(y=np.ones(20), x=rng.normal(size=(20, 3)),
                       partition=Partition(((0, 1, 2),)), sigma_y_sq=1.0)
        assert cell_pvalue(data, 0) == 1.0

    def test_inactive_cell_uniform(self):
        rng = np.random.default_rng(1)
        n, size = 40, 5
        part = Partition.contiguous(size, size)
        pvals = np.empty(500)
        for r in range(500):
            data = Dataset(y=rng.normal(size=n), x=rng.normal(size=(n, size)),
                           partition=part, sigma_y_sq=1.0)
            pvals[r] = cell_pvalue(data, 0)
        assert stats.kstest(pvals, "uniform").pvalue > 0.01

    def test_strongly_active_cell_tiny_pvalue(self):
        small = 0
        for seed in range(100):
            cfg = SimConfig(n_vars=10, cell_size=10, n_samples=1000,
                            n_active=5, actives_per_cell=5, var_noise=1.0,
                            seed=seed)
            data = generate_dataset(cfg)
            small += cell_pvalue(data, 0) < 1e-6
        assert small >= 99

    def test_all_cell_pvalues_flags_singular(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=(30, 4))
        x[:, 1] = x[:, 0]
        data = Dataset(y=rng.normal(size=30), x=x,
                       partition=Partition.contiguous(4, 2))
        with pytest.warns(UserWarning, match="rank deficient"):
            pvals = all_cell_pvalues(data)
        assert math.isnan(pvals[0]) and not math.isnan(pvals[1])


class TestThresholdCounts:
    def test_count_at_one_is_everything(self):
        p = np.array([0.1, 0.4, 0.9])
        assert threshold_counts(p, (0.5, 1.0)) == (2, 3)

    def test_example_counts(self):
        p = np.array([0.1, 0.4, 0.9])
        assert threshold_counts(p, (0.5, 0.95)) == (2, 3)

    def test_grid_must_increase(self):
        with pytest.raises(ValueError):
            threshold_counts(np.array([0.1]), (0.5, 0.5))

    def test_expected_count_line(self):
        # E count(t) = (n_cells - n_active) t + n_active under the assumed law
        rng = np.random.default_rng(3)
        n_cells, j = 400, 40
        t = 0.7
        counts = np.empty(1000)
        for r in range(1000):
            counts[r] = threshold_counts(
                _simulated_pvalues(rng, n_cells, j), (t,)
            )[0]
        expected = (n_cells - j) * t + j
        se = math.sqrt((n_cells - j) * t * (1 - t)) / math.sqrt(1000)
        assert abs(counts.mean() - expected) <= 3 * se


class TestInactiveCountRoot:
    def test_noiseless_identity(self):
        n_cells, j = 1000, 50
        for t in (0.5, 0.6, 0.9):
            count = (n_cells - j) * t + j
            got = inactive_count_root(0.0, 0.0, t, count, n_cells)
            assert got == pytest.approx(n_cells - j, abs=1e-8)

    def test_high_precision_point(self):
        mpmath.mp.dps = 40
        c, z, t, count, n_cells = 1.0, 0.5, 0.6, 640, 1000
        shift = mpmath.mpf(t) * z + c
        root = (
            -shift + mpmath.sqrt(shift**2 + 4 * (1 - mpmath.mpf(t)) * (n_cells - count))
        ) / (2 * (1 - mpmath.mpf(t)))
        assert inactive_count_root(c, z, t, count, n_cells) == pytest.approx(
            float(root**2), abs=1e-10
        )

    def test_decreasing_in_deviation_constant(self):
        vals = [inactive_count_root(c, 0.3, 0.6, 640, 1000)
                for c in (0.0, 0.5, 1.0, 2.0, 4.0)]
        assert all(b < a for a, b in zip(vals, vals[1:]))

    def test_solves_defining_quadratic(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            t = float(rng.uniform(0.3, 0.95))
            z = float(rng.normal())
            c = float(rng.uniform(0.0, 3.0))
            n_cells = 500
            count = int(rng.integers(0, n_cells + 1))
            h = inactive_count_root(c, z, t, count, n_cells)
            s = math.sqrt(h)
            residual = (1 - t) * h + (t * z + c) * s - (n_cells - count)
            assert abs(residual) <= 1e-8 * max(1.0, n_cells - count)

    def test_grid_point_one_rejected(self):
        with pytest.raises(ValueError):
            inactive_count_root(1.0, 0.0, 1.0, 10, 100)


class TestEstimateActiveCells:
    def test_null_sanity(self):
        rng = np.random.default_rng(5)
        est = estimate_active_cells(rng.uniform(size=2000), 0.05, seed=17)
        assert 0 <= est.j_hat <= 2000
        # no signal: the bound stays a small fraction of the cell count
        # (its looseness scales like sqrt(n_cells))
        assert est.j_hat <= 0.2 * 2000

    def test_deterministic_in_seed(self):
        p = np.random.default_rng(6).uniform(size=500)
        a = estimate_active_cells(p, 0.1, seed=3)
        b = estimate_active_cells(p, 0.1, seed=3)
        assert a == b

    def test_constant_matches_grid_and_epsilon(self):
        p = np.random.default_rng(7).uniform(size=100)
        est = estimate_active_cells(p, 0.05, seed=1, grid=(0.5, 0.7, 0.9))
        assert est.c == pytest.approx(math.sqrt(-2 * 0.9 * math.log(0.05)))
        assert est.counts == threshold_counts(p, (0.5, 0.7, 0.9))

    def test_monotone_in_epsilon(self):
        p = _simulated_pvalues(np.random.default_rng(8), 1000, 50)
        js = [estimate_active_cells(p, eps, seed=11).j_hat
              for eps in (0.01, 0.05, 0.2, 0.5)]
        assert all(b <= a for a, b in zip(js, js[1:]))

    def test_coverage(self):
        rng = np.random.default_rng(9)
        n_cells, j, eps, reps = 1000, 50, 0.05, 300
        under = 0
        for r in range(reps):
            p = _simulated_pvalues(rng, n_cells, j)
            est = estimate_active_cells(p, eps, seed=1000 + r)
            under += est.j_hat <= j
        se = math.sqrt(eps * (1 - eps) / reps)
        assert under / reps <= eps + 3 * se

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            estimate_active_cells(np.array([0.5, np.nan]), 0.05, seed=0)
        with pytest.raises(ValueError):
            estimate_active_cells(np.array([0.5]), 0.0, seed=0)
        with pytest.raises(ValueError):
            estimate_active_cells(np.array([0.5]), 0.05, seed=0, grid=(0.5, 1.0))

    def test_estimate_invariants(self):
        with pytest.raises(ValueError):
            ActiveCellEstimate(grid=(0.5, 0.6), counts=(5, 3), z_draw=0.0,
                               c=1.0, epsilon=0.05, j_hat=0, n_cells=10)


class TestBridgeCovariance:
    def test_count_process_covariance(self):
        # centered counts have cov (n_cells - j)(min(t1,t2) - t1 t2)
        rng = np.random.default_rng(10)
        n_cells, j, reps = 400, 0, 2000
        t1, t2 = 0.55, 0.8
        z1 = np.empty(reps)
        z2 = np.empty(reps)
        for r in range(reps):
            p = rng.uniform(size=n_cells)
            c1, c2 = threshold_counts(p, (t1, t2))
            z1[r] = c1 - n_cells * t1
            z2[r] = c2 - n_cells * t2
        prod = (z1 - z1.mean()) * (z2 - z2.mean())
        emp_cov = prod.mean()
        se = prod.std(ddof=1) / math.sqrt(reps)
        expected = (n_cells - j) * (min(t1, t2) - t1 * t2)
        assert abs(emp_cov - expected) <= 3 * se


class TestAdjustedDiscovery:
    @staticmethod
    def _data(seed, n_active=6, actives_per_cell=3):
        cfg = SimConfig(n_vars=60, cell_size=6, n_samples=400,
                        n_active=n_active, actives_per_cell=actives_per_cell,
                        var_noise=1.0, seed=seed)
        return generate_dataset(cfg)

    def test_intersection_construction(self):
        data = self._data(1)
        result, est = adjusted_discovery(data, alpha=0.1, epsilon=0.1, seed=5)
        assert est.j_hat >= 1
        assert result.fwer_bound_value == pytest.approx(0.2)
        # reproduce the intersection independently
        nu = data.partition.nu_g_max
        expected = None
        for j_prime in range(1, est.j_hat + 1):
            t = optimize_thresholds(
                0.1, data.n_vars, nu,
                PowerTarget.default(data.n_samples, nu, j_prime),
            )
            detected = run_parametric_test(data, t).detected
            expected = detected if expected is None else expected & detected
            assert result.detected <= detected
        assert result.detected == expected

    def test_nested_thresholds_collapse_to_largest_j(self):
        # when both thresholds grow with j the runs are nested and the
        # intersection equals the most conservative single run
        data = self._data(2)
        nu = data.partition.nu_g_max
        result, est = adjusted_discovery(data, alpha=0.1, epsilon=0.1, seed=6)
        thresholds = [
            optimize_thresholds(
                0.1, data.n_vars, nu,
                PowerTarget.default(data.n_samples, nu, j_prime),
            )
            for j_prime in range(1, est.j_hat + 1)
        ]
        tg = [t.theta_g for t in thresholds]
        tv = [t.theta_v for t in thresholds]
        assert all(b >= a for a, b in zip(tv, tv[1:]))  # holds empirically
        if all(b >= a for a, b in zip(tg, tg[1:])):
            last = run_parametric_test(data, thresholds[-1]).detected
            assert result.detected == last

    def test_null_coverage(self):
        alpha, eps, reps = 0.1, 0.1, 60
        false_hits = 0
        for seed in range(reps):
            cfg = SimConfig(n_vars=40, cell_size=4, n_samples=150, seed=seed)
            data = generate_dataset(cfg)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                result, _ = adjusted_discovery(data, alpha, eps, seed=seed)
            false_hits += bool(result.detected)
        level = alpha + eps
        se = math.sqrt(level * (1 - level) / reps)
        assert false_hits / reps <= level + 3 * se

    def test_plausibility_fallback(self):
        # pile p-values just below the grid start: the strong-signal premise
        # is implausible and the conservative fallback engages
        rng = np.random.default_rng(11)
        p = np.concatenate([rng.uniform(0.42, 0.5, size=60),
                            rng.uniform(size=40)])
        assert not plausibility_check(p, 0.5)
        assert plausibility_check(rng.uniform(size=100), 0.5)
