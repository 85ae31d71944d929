"""Permutation-based two-stage testing with finite-sample error control.

The data are randomized by permuting the response against the design.  Three
statistics drive the decision rule, all computed from one shared batch of K
sampled permutations: the cell-level exceedance fraction, the index-level
exceedance fraction, and a conditional index statistic that only counts
permutations whose own cell statistic clears a slightly inflated cell
threshold.  The inflation ``epsilon_g`` absorbs the Monte-Carlo error of
evaluating a cell statistic at a permuted dataset by ranking it inside the
pool of sampled scores (O(K log K)) instead of re-permuting K more times
(O(K^2) score evaluations).
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .distributions import chi2_sf
from .errors import EmptyConditioningSetError, InfeasibleThresholdsError
from .linear_model import Dataset, cell_bases, centered_unit_columns
from .parametric import (
    NONPARAMETRIC,
    CtfThresholds,
    DiscoverySet,
    IndexStats,
)

SCORE_CHOICES = ("rss", "corr")

FINITE = "finite"
IDEAL = "ideal"


@dataclass(frozen=True)
class PermutationPlan:
    """K permutations of ``0..n-1`` plus the seed that produced them."""

    k: int
    seed: int | None
    elements: np.ndarray  # (k, n) int array; each row a permutation

    def __post_init__(self):
        elems = np.ascontiguousarray(self.elements, dtype=np.intp)
        if elems.ndim != 2 or elems.shape[0] != self.k:
            raise ValueError(f"expected ({self.k}, n) permutation array")
        ref = np.arange(elems.shape[1])
        if not np.all(np.sort(elems, axis=1) == ref):
            raise ValueError("every plan element must be a permutation")
        elems.setflags(write=False)
        object.__setattr__(self, "elements", elems)

    @property
    def n(self) -> int:
        return self.elements.shape[1]


def sample_permutations(n: int, k: int, seed: int) -> PermutationPlan:
    """K independent uniform permutations of ``0..n-1``, reproducible from
    ``(n, k, seed)``."""
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    if k < 2:
        raise ValueError(f"need k >= 2, got {k}")
    rng = np.random.default_rng(seed)
    elems = np.argsort(rng.random((k, n)), axis=1)
    return PermutationPlan(k=k, seed=seed, elements=elems)


def exhaustive_permutations(n: int) -> PermutationPlan:
    """All n! permutations; the exact-test plan for tiny n."""
    if n < 2 or n > 8:
        raise ValueError("exhaustive enumeration supported for 2 <= n <= 8")
    elems = np.array(list(itertools.permutations(range(n))), dtype=np.intp)
    return PermutationPlan(k=elems.shape[0], seed=None, elements=elems)


@dataclass(frozen=True)
class ScoredPermutations:
    """Cell and variable scores on the observed data and on each permuted
    copy.  Row ``k`` of the permuted matrices corresponds to plan element
    ``k``.  Columns of rank-deficient cells are NaN and listed in
    ``skipped_cells``."""

    cell_base: np.ndarray      # (n_cells,)
    cell_perm: np.ndarray      # (k, n_cells)
    variable_base: np.ndarray  # (n_vars,)
    variable_perm: np.ndarray  # (k, n_vars)
    skipped_cells: tuple[int, ...] = ()

    @property
    def k(self) -> int:
        return self.cell_perm.shape[0]

    @cached_property
    def cell_rank_fractions(self) -> np.ndarray:
        """Pooled-rank cell statistic of every plan element, per cell.

        Entry ``[j, g]`` is the fraction of sampled cell scores (including
        element j itself) at least as large as element j's score: the cell
        statistic re-evaluated at the j-th permuted dataset.
        """
        return np.stack(
            [pooled_rank_fractions(self.cell_perm[:, g])
             for g in range(self.cell_perm.shape[1])],
            axis=1,
        )


def pooled_rank_fractions(values: np.ndarray) -> np.ndarray:
    """For each entry, the fraction of pool entries >= it (self included)."""
    order = np.sort(values)
    k = len(values)
    return (k - np.searchsorted(order, values, side="left")) / k


def permutation_scores(
    data: Dataset, plan: PermutationPlan, score: str = "rss"
) -> ScoredPermutations:
    """Scores of the observed data and of every permuted copy.

    The permutation acts on the response only, so cell scores depend only on
    the response and that cell's design columns.  ``score="rss"`` is the
    projection score normalized by the response variance; ``score="corr"``
    normalizes by the centered response energy (an R-squared scale), which
    orders permutations identically.
    """
    if score not in SCORE_CHOICES:
        raise ValueError(f"unknown score {score!r}; choose from {SCORE_CHOICES}")
    if plan.n != data.n_samples:
        raise ValueError(
            f"plan is over {plan.n} samples but data has {data.n_samples}"
        )
    yc = data.y - data.y.mean()
    denom = data.y_variance() if score == "rss" else float(yc @ yc)
    perm_y = yc[plan.elements]  # (k, n); centering commutes with permutation

    bases, singular = cell_bases(data.x, data.partition)
    n_cells = data.partition.n_cells
    cell_base = np.full(n_cells, np.nan)
    cell_perm = np.full((plan.k, n_cells), np.nan)
    for g, q in enumerate(bases):
        if q is None:
            continue
        base_proj = q.T @ yc
        cell_base[g] = base_proj @ base_proj / denom
        proj = perm_y @ q  # (k, |g|)
        cell_perm[:, g] = np.einsum("kc,kc->k", proj, proj) / denom

    units, bad_cols = centered_unit_columns(data.x)
    variable_base = (units.T @ yc) ** 2 / denom
    variable_perm = (perm_y @ units) ** 2 / denom
    variable_base[bad_cols] = np.nan
    variable_perm[:, bad_cols] = np.nan
    for g in singular:
        cols = list(data.partition.cells[g])
        variable_base[cols] = np.nan
        variable_perm[:, cols] = np.nan
    return ScoredPermutations(
        cell_base=cell_base,
        cell_perm=cell_perm,
        variable_base=variable_base,
        variable_perm=variable_perm,
        skipped_cells=singular,
    )


def exceedance_fraction(scores: ScoredPermutations, kind: str, index: int) -> float:
    """Fraction of sampled permutations whose score is >= the observed score.

    Ties count toward the fraction, so values live on {0, 1/K, ..., 1} and
    larger means less extreme.
    """
    if kind == "cell":
        base, perm = scores.cell_base[index], scores.cell_perm[:, index]
    elif kind == "variable":
        base, perm = scores.variable_base[index], scores.variable_perm[:, index]
    else:
        raise ValueError(f"kind must be 'cell' or 'variable', got {kind!r}")
    return float(np.count_nonzero(perm >= base)) / scores.k


def conditional_exceedance(
    scores: ScoredPermutations,
    v: int,
    g: int,
    theta_g: float,
    epsilon_g: float,
) -> float:
    """Index-level exceedance among permutations whose own cell statistic
    clears the inflated cell threshold.

    The conditioning set uses ``theta_g + epsilon_g`` and the numerator uses
    ``theta_g + 2 epsilon_g``; cell statistics of permuted datasets are the
    pooled-rank fractions.  Raises when the conditioning set is empty, which
    signals that ``theta_g`` is too small for this K.
    """
    ranks = scores.cell_rank_fractions[:, g]
    n_hat = float(np.count_nonzero(ranks <= theta_g + epsilon_g)) / scores.k
    if n_hat == 0.0:
        raise EmptyConditioningSetError(
            f"no sampled permutation of cell {g} has statistic <= "
            f"{theta_g + epsilon_g:.4g}; increase K or theta_g"
        )
    qualified = ranks <= theta_g + 2.0 * epsilon_g
    exceeds = scores.variable_perm[:, v] >= scores.variable_base[v]
    numerator = float(np.count_nonzero(qualified & exceeds)) / scores.k
    return numerator / n_hat


def finite_sample_fwer_bound(
    n_vars: int,
    nu_g: int,
    j_bound: int,
    k: int,
    theta_g: float,
    epsilon_g: float,
    theta_v: float,
    theta_v_prime: float,
) -> float:
    """FWER bound of the K-permutation randomized test.

    Two Hoeffding terms charge for the Monte-Carlo evaluation of the cell
    statistics, and the ``(K (theta_g + epsilon_g) theta_v + 1) / (K + 1)``
    term carries an irreducible 1/(K+1) discreteness floor per index.
    Requires ``epsilon_g > 1/(K-1)``; not clamped.
    """
    if k < 2:
        raise ValueError("k must be >= 2")
    if epsilon_g <= 1.0 / (k - 1):
        raise ValueError(
            f"epsilon_g must exceed 1/(K-1) = {1.0 / (k - 1):.3g}, got {epsilon_g}"
        )
    hoeffding = math.exp(-2.0 * k * epsilon_g**2) + k * math.exp(
        -2.0 * (k - 1) * (epsilon_g - 1.0 / (k - 1)) ** 2
    )
    per_index = (k * (theta_g + epsilon_g) * theta_v + 1.0) / (k + 1.0)
    return n_vars * (hoeffding + per_index) + j_bound * nu_g * theta_v_prime


def default_epsilon_g(k: int, n_vars: int, alpha: float) -> float:
    """Cell-statistic inflation sized so the two Hoeffding terms together
    consume at most half of the per-index error budget ``alpha / (2 n_vars)``.

    The K-prefactored term dominates, so its inversion drives the value.
    """
    if k < 3:
        raise ValueError("k must be >= 3")
    e_plain = math.sqrt(math.log(8.0 * n_vars / alpha) / (2.0 * k))
    e_prefixed = 1.0 / (k - 1) + math.sqrt(
        math.log(8.0 * k * n_vars / alpha) / (2.0 * (k - 1))
    )
    return max(2.0 / (k - 1), e_plain, e_prefixed)


def parametric_tail_ratio(thresholds: CtfThresholds, nu_g: int) -> float:
    """Ratio of index-level to cell-level type-I rates of a parametric
    configuration; fixes the shape of the permutation thresholds."""
    if thresholds.regime != "parametric":
        raise ValueError("ratio is derived from a parametric configuration")
    return chi2_sf(thresholds.theta_v, 1) / chi2_sf(thresholds.theta_g, nu_g)


def choose_permutation_thresholds(
    alpha: float,
    n_vars: int,
    nu_g: int,
    j_bound: int,
    k: int,
    ratio_theta_v_over_theta_g: float,
    bound: str = FINITE,
    epsilon_g: float | None = None,
) -> CtfThresholds:
    """Thresholds with the FWER budget split evenly between the double-null
    term and the active-cell marginal term, at a fixed theta_v / theta_g
    ratio.

    ``bound="finite"`` equates the K-permutation bound to alpha exactly;
    it is infeasible whenever ``n_vars / (K + 1)`` exceeds ``alpha / 2``
    (the discreteness floor) or the Hoeffding overhead eats the budget.
    ``bound="ideal"`` uses the K -> infinity limit ``n_vars * theta_g *
    theta_v = alpha / 2``, which any K can run but only approximately
    controls.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    ratio = ratio_theta_v_over_theta_g
    if ratio <= 0:
        raise ValueError(f"ratio must be positive, got {ratio}")
    if bound not in (FINITE, IDEAL):
        raise ValueError(f"bound must be 'finite' or 'ideal', got {bound!r}")
    eps = default_epsilon_g(k, n_vars, alpha) if epsilon_g is None else epsilon_g
    theta_v_prime = alpha / (2.0 * j_bound * nu_g)

    if bound == IDEAL:
        theta_g = math.sqrt(alpha / (2.0 * n_vars * ratio))
        theta_v = ratio * theta_g
    else:
        if eps <= 1.0 / (k - 1):
            raise InfeasibleThresholdsError(
                f"epsilon_g = {eps:.3g} is not above 1/(K-1); increase K"
            )
        hoeffding = math.exp(-2.0 * k * eps**2) + k * math.exp(
            -2.0 * (k - 1) * (eps - 1.0 / (k - 1)) ** 2
        )
        budget = alpha / (2.0 * n_vars) - hoeffding
        if budget <= 1.0 / (k + 1):
            raise InfeasibleThresholdsError(
                f"per-index budget {alpha / (2 * n_vars):.3g} cannot cover the "
                f"1/(K+1) = {1.0 / (k + 1):.3g} discreteness floor plus "
                f"Hoeffding overhead {hoeffding:.3g} at K = {k}; increase K "
                f"to at least ~{math.ceil(4 * n_vars / alpha)} or use the "
                f"ideal-bound calibration"
            )
        # K r tg^2 + K r eps tg - (budget (K+1) - 1) = 0, solved for tg > 0
        a_coef = k * ratio
        b_coef = k * ratio * eps
        c_coef = -(budget * (k + 1.0) - 1.0)
        theta_g = (-b_coef + math.sqrt(b_coef**2 - 4 * a_coef * c_coef)) / (
            2 * a_coef
        )
        theta_v = ratio * theta_g

    if not (0.0 < theta_g < 1.0 and 0.0 < theta_v < 1.0):
        raise InfeasibleThresholdsError(
            f"calibrated thresholds ({theta_g:.3g}, {theta_v:.3g}) leave (0, 1); "
            f"the ratio {ratio:.3g} is incompatible with alpha = {alpha}"
        )
    return CtfThresholds(
        theta_g=theta_g,
        theta_v=theta_v,
        regime=NONPARAMETRIC,
        theta_v_prime=theta_v_prime,
        epsilon_g=eps,
    )


def run_permutation_test(
    data: Dataset,
    plan: PermutationPlan,
    thresholds: CtfThresholds,
    score: str = "rss",
    fwer_bound_value: float | None = None,
    scores: ScoredPermutations | None = None,
) -> DiscoverySet:
    """Apply the three-part permutation rule to a dataset.

    ``v`` is detected when its cell's exceedance fraction is <= theta_g, its
    conditional statistic is <= theta_v and its marginal exceedance fraction
    is <= theta_v_prime.  Conditional statistics are only evaluated inside
    cells that pass the first stage.  Cells with empty conditioning sets are
    skipped and reported alongside rank-deficient ones.
    """
    if thresholds.regime != NONPARAMETRIC:
        raise ValueError("run_permutation_test needs nonparametric thresholds")
    if scores is None:
        scores = permutation_scores(data, plan, score)
    k = scores.k
    cell_stat = (
        np.count_nonzero(scores.cell_perm >= scores.cell_base, axis=0) / k
    )
    var_stat = (
        np.count_nonzero(scores.variable_perm >= scores.variable_base, axis=0) / k
    )
    detected: set[int] = set()
    per_index: dict[int, IndexStats] = {}
    skipped = list(scores.skipped_cells)
    for g, cell in enumerate(data.partition.cells):
        if g in scores.skipped_cells:
            continue
        tg_hat = float(cell_stat[g])
        if tg_hat > thresholds.theta_g:
            continue
        try:
            conds = {
                v: conditional_exceedance(
                    scores, v, g, thresholds.theta_g, thresholds.epsilon_g
                )
                for v in cell
            }
        except EmptyConditioningSetError:
            warnings.warn(
                f"cell {g} passed the first stage but has an empty "
                f"conditioning set; skipping it",
                stacklevel=2,
            )
            skipped.append(g)
            continue
        for v in cell:
            tv_hat = float(var_stat[v])
            per_index[v] = IndexStats(
                cell_stat=tg_hat, index_stat=tv_hat, conditional_stat=conds[v]
            )
            if conds[v] <= thresholds.theta_v and tv_hat <= thresholds.theta_v_prime:
                detected.add(v)
    return DiscoverySet(
        detected=frozenset(detected),
        per_index=per_index,
        thresholds=thresholds,
        fwer_bound_value=fwer_bound_value,
        skipped_cells=tuple(skipped),
    )
