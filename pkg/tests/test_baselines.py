"""Bonferroni and Holm step-down baselines."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ctftest.baselines import bonferroni_reject, holm_reject, parametric_pvalues
from ctftest.linear_model import SimConfig, generate_dataset


class TestBonferroni:
    def test_cutoff_scale(self):
        p = {v: 1.0 for v in range(10_000)}
        p[3] = 4.9e-6
        p[7] = 5.1e-6
        assert bonferroni_reject(p, 0.05) == {3}

    def test_all_ones_rejects_nothing(self):
        assert bonferroni_reject({v: 1.0 for v in range(50)}, 0.05) == set()

    def test_three_value_example(self):
        p = {0: 1e-7, 1: 1e-5, 2: 0.2}
        assert bonferroni_reject(p, 0.05) == {0, 1}  # cutoff 1/60


class TestHolm:
    def test_boundary_all_equal(self):
        m, alpha = 8, 0.05
        p = {v: alpha / m for v in range(m)}
        assert holm_reject(p, alpha) == set(range(m))

    def test_step_down_example(self):
        p = {"a": 0.01, "b": 0.02, "c": 0.05}
        # thresholds 0.05/3, 0.05/2, 0.05: every step passes
        assert holm_reject(p, 0.05) == {"a", "b", "c"}

    def test_stops_at_first_failure(self):
        p = {"a": 0.01, "b": 0.03, "c": 0.011}
        # sorted: 0.01 <= 0.0167, 0.011 <= 0.025, 0.03 <= 0.05: all pass
        assert holm_reject(p, 0.05) == {"a", "b", "c"}
        p = {"a": 0.001, "b": 0.04, "c": 0.5}
        # 0.001 <= 0.0167 yes; 0.04 <= 0.025 no: stop
        assert holm_reject(p, 0.05) == {"a"}

    @settings(max_examples=200, deadline=None)
    @given(
        ps=st.lists(st.floats(0.0, 1.0), min_size=1, max_size=40),
        alpha=st.floats(0.01, 0.2),
    )
    def test_dominates_bonferroni(self, ps, alpha):
        pvals = dict(enumerate(ps))
        assert bonferroni_reject(pvals, alpha) <= holm_reject(pvals, alpha)

    def test_monotone_in_alpha(self):
        rng = np.random.default_rng(1)
        pvals = dict(enumerate(rng.uniform(size=30) ** 3))
        previous = set()
        for alpha in (0.01, 0.05, 0.1, 0.3):
            current = holm_reject(pvals, alpha)
            assert previous <= current
            previous = current

    def test_null_fwer_controlled(self):
        rng = np.random.default_rng(2)
        m, alpha, reps = 50, 0.05, 2000
        false = 0
        for _ in range(reps):
            z = rng.normal(size=m)
            pvals = dict(enumerate(1.0 - (2.0 * _phi(np.abs(z)) - 1.0)))
            false += bool(holm_reject(pvals, alpha))
        se = math.sqrt(alpha * (1 - alpha) / reps)
        assert false / reps <= alpha + 3 * se


def _phi(x):
    from scipy import special
    return 0.5 * (1.0 + special.erf(np.asarray(x) / math.sqrt(2.0)))


class TestParametricPvalues:
    def test_null_pvalues_uniformish(self):
        cfg = SimConfig(n_vars=200, cell_size=10, n_samples=300, seed=3)
        pvals = parametric_pvalues(generate_dataset(cfg))
        assert len(pvals) == 200
        values = np.array(list(pvals.values()))
        assert ((values >= 0) & (values <= 1)).all()
        assert 0.4 < values.mean() < 0.6

    def test_signal_pvalues_tiny(self):
        cfg = SimConfig(n_vars=20, cell_size=10, n_samples=2000, n_active=2,
                        actives_per_cell=2, var_noise=1.0, seed=4)
        data = generate_dataset(cfg)
        pvals = parametric_pvalues(data)
        for v in data.true_active:
            assert pvals[v] < 1e-10

    def test_alpha_validation(self):
        with pytest.raises(ValueError):
            bonferroni_reject({0: 0.5}, 0.0)
        with pytest.raises(ValueError):
            holm_reject({0: 0.5}, 1.0)
