"""Family-wise error bounds for the two-stage parametric test, threshold
optimization along level curves of the bound, and the decision rule itself.

The two-stage rule declares an index ``v`` a discovery when its cell's score
exceeds ``theta_g`` and its own score exceeds ``theta_v``.  The FWER bound has
two parts: a quadrant bound on the joint probability that an entirely
inactive cell and one of its indices both clear their thresholds
(survivorship bias makes this joint probability larger than the product of
the marginals), plus a marginal term for inactive indexes living in active
cells, scaled by the assumed bound ``j_bound`` on the number of active cells.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .distributions import (
    TailBoundInput,
    beta_sf,
    chi2_sf,
    log_quadrant_constant,
    nc_chi2_lower_tail_bound,
)
from .errors import InfeasibleThresholdsError
from .linear_model import Dataset, Partition, cell_bases, centered_unit_columns

PARAMETRIC = "parametric"
NONPARAMETRIC = "nonparametric"


@dataclass(frozen=True)
class CtfThresholds:
    """Decision constants of the two-stage rule.

    Parametric regime: ``theta_g > theta_v > 0`` on the score scale.
    Non-parametric regime: all thresholds are probabilities in (0, 1) and
    ``theta_v_prime`` / ``epsilon_g`` are required.
    """

    theta_g: float
    theta_v: float
    regime: str = PARAMETRIC
    theta_v_prime: float | None = None
    epsilon_g: float | None = None

    def __post_init__(self):
        if self.regime == PARAMETRIC:
            if not self.theta_g > self.theta_v > 0:
                raise ValueError(
                    f"parametric thresholds need theta_g > theta_v > 0, got "
                    f"({self.theta_g}, {self.theta_v})"
                )
        elif self.regime == NONPARAMETRIC:
            if self.theta_v_prime is None or self.epsilon_g is None:
                raise ValueError(
                    "nonparametric thresholds need theta_v_prime and epsilon_g"
                )
            for name in ("theta_g", "theta_v", "theta_v_prime"):
                val = getattr(self, name)
                if not 0.0 < val < 1.0:
                    raise ValueError(f"{name} must lie in (0, 1), got {val}")
            if not 0.0 <= self.epsilon_g < 1.0:
                raise ValueError(f"epsilon_g must lie in [0, 1), got {self.epsilon_g}")
        else:
            raise ValueError(f"unknown regime {self.regime!r}")


@dataclass(frozen=True)
class PowerTarget:
    """Design alternative the thresholds are tuned for.

    ``rho_g`` / ``rho_v`` are per-sample noncentrality rates for the cell and
    index scores; the score distributions under the alternative are
    approximated as noncentral chi-square with noncentralities ``n * rho``.
    """

    rho_g: float
    rho_v: float
    n: int
    nu_g: int
    j_bound: int

    def __post_init__(self):
        if not self.rho_g >= self.rho_v > 0:
            raise ValueError("need rho_g >= rho_v > 0")
        if self.j_bound < 1:
            raise ValueError("j_bound must be >= 1")
        if self.n < 1 or self.nu_g < 1:
            raise ValueError("n and nu_g must be >= 1")

    @classmethod
    def default(cls, n: int, nu_g: int, j_bound: int) -> "PowerTarget":
        """Near-noiseless default: cell rate twice the index rate, both 1/J."""
        return cls(rho_g=2.0 / j_bound, rho_v=1.0 / j_bound, n=n, nu_g=nu_g,
                   j_bound=j_bound)

    @property
    def cap_g(self) -> float:
        """Largest theta_g where the power bound is valid."""
        return self.n * self.rho_g + self.nu_g

    @property
    def cap_v(self) -> float:
        return self.n * self.rho_v + 1.0


@dataclass(frozen=True)
class IndexStats:
    """Per-index statistics recorded by a test run."""

    cell_stat: float
    index_stat: float
    conditional_stat: float | None = None


@dataclass(frozen=True)
class DiscoverySet:
    """Indices declared active, with the statistics that justified them."""

    detected: frozenset[int]
    per_index: dict[int, IndexStats]
    thresholds: CtfThresholds
    fwer_bound_value: float | None = None
    skipped_cells: tuple[int, ...] = field(default_factory=tuple)

    def validate(self) -> None:
        """Check every detection against the regime's joint rejection rule."""
        t = self.thresholds
        for v in self.detected:
            s = self.per_index[v]
            if t.regime == PARAMETRIC:
                ok = s.cell_stat > t.theta_g and s.index_stat > t.theta_v
            else:
                ok = (
                    s.cell_stat <= t.theta_g
                    and s.conditional_stat is not None
                    and s.conditional_stat <= t.theta_v
                    and s.index_stat <= t.theta_v_prime
                )
            if not ok:
                raise ValueError(f"detected index {v} violates the rejection rule")


def _log_phi(nu_g: int, theta_g: float, theta_v: float) -> float:
    """Log of the smooth part of the quadrant bound."""
    x = min(theta_v / theta_g, 1.0)
    tail = beta_sf(x, 0.5, (nu_g + 1) / 2.0)
    if tail == 0.0:
        return -math.inf
    return (
        log_quadrant_constant(nu_g)
        - theta_g / 2.0
        + (nu_g / 2.0) * math.log(theta_g)
        + math.log(tail)
    )


def quadrant_bound(theta_g: float, theta_v: float, nu_g: int) -> float:
    """Bound on the double-null joint probability that a cell score exceeds
    ``theta_g`` while one of its index scores exceeds ``theta_v``.

    Clamped to [0, 1].  The second term is 1 whenever
    ``theta_g <= nu_g - 1``, which makes the bound vacuous there.
    """
    if not theta_g > theta_v > 0:
        raise ValueError(
            f"need theta_g > theta_v > 0, got ({theta_g}, {theta_v})"
        )
    smooth = math.exp(_log_phi(nu_g, theta_g, theta_v))
    remainder = chi2_sf(theta_g - nu_g + 1, 1) if theta_g > nu_g - 1 else 1.0
    return min(1.0, smooth + remainder)


def index_tail_bound(theta_v: float) -> float:
    """Bound on P(index score > theta_v) for an inactive index: the
    chi-square(1) upper tail."""
    if theta_v < 0:
        raise ValueError(f"theta_v must be >= 0, got {theta_v}")
    return chi2_sf(theta_v, 1)


def fwer_bound(
    theta_g: float, theta_v: float, n_vars: int, nu_g: int, j_bound: int
) -> float:
    """Family-wise error bound of the two-stage rule with uniform cell size.

    ``n_vars * quadrant_bound + j_bound * nu_g * index_tail_bound``; not
    clamped, so values above 1 indicate a vacuous configuration.
    """
    return n_vars * quadrant_bound(theta_g, theta_v, nu_g) + (
        j_bound * nu_g * index_tail_bound(theta_v)
    )


def fwer_bound_variable_cells(
    partition: Partition, theta_g: float, theta_v: float, j_bound: int
) -> float:
    """FWER bound for partitions with heterogeneous cell sizes.

    Each cell of size ``|g|`` contributes ``|g| * phi(|g|, sqrt(|g|) *
    theta_g, theta_v)`` where phi is the smooth part of the quadrant bound;
    the marginal term uses the largest cell size.
    """
    if theta_g <= 0 or theta_v <= 0:
        raise ValueError("thresholds must be positive")
    total = 0.0
    for cell in partition.cells:
        size = len(cell)
        total += size * math.exp(_log_phi(size, math.sqrt(size) * theta_g, theta_v))
    return total + j_bound * partition.nu_g_max * index_tail_bound(theta_v)


def power_lower_bound(theta_1: float, theta_2: float, target: PowerTarget) -> float:
    """Lower bound on the probability that both stages detect a planted
    signal at the target rates.

    Equals ``1 - b1 - b2`` with ``b_i`` the noncentral chi-square lower-tail
    bounds at ``(n rho_g, nu_g)`` and ``(n rho_v, 1)``.  May be negative
    (vacuous but valid); requires ``theta_i`` below the respective caps.
    """
    b1 = nc_chi2_lower_tail_bound(
        TailBoundInput(theta=theta_1, rho=target.n * target.rho_g, nu=target.nu_g)
    )
    b2 = nc_chi2_lower_tail_bound(
        TailBoundInput(theta=theta_2, rho=target.n * target.rho_v, nu=1)
    )
    return 1.0 - b1 - b2


def _solve_theta_v(
    theta_g: float,
    alpha: float,
    n_vars: int,
    nu_g: int,
    j_bound: int,
    theta_v_cap: float,
) -> float | None:
    """Smallest theta_v with fwer_bound <= alpha at this theta_g, or None.

    The bound is monotone decreasing in theta_v, so this is a level-curve
    point found by bisection; None means even ``theta_v_cap`` is infeasible.
    """
    hi = min(theta_v_cap, theta_g * (1.0 - 1e-12))
    if hi <= 0:
        return None
    f_hi = fwer_bound(theta_g, hi, n_vars, nu_g, j_bound) - alpha
    if f_hi > 0:
        return None
    lo = 1e-12 * hi
    if fwer_bound(theta_g, lo, n_vars, nu_g, j_bound) <= alpha:
        return lo  # whole range feasible; cannot happen for alpha < 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if fwer_bound(theta_g, mid, n_vars, nu_g, j_bound) > alpha:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * hi:
            break
    return hi


def optimize_thresholds(
    alpha: float,
    n_vars: int,
    nu_g: int,
    target: PowerTarget,
    grid_points: int = 256,
) -> CtfThresholds:
    """Thresholds maximizing the power lower bound subject to
    ``fwer_bound <= alpha`` and the bound-validity caps.

    Strategy: sweep ``theta_g`` over a log-spaced grid up to its cap, solve
    for the level-curve ``theta_v`` by bisection (the bound is monotone in
    ``theta_v``), take the grid argmax of the power bound and refine
    ``theta_g`` by golden-section search.  Points with
    ``theta_g <= nu_g - 1`` are excluded outright: there the quadrant bound
    is vacuous and a feasible-looking threshold would be meaningless.
    Among near-equal optima the smaller ``theta_v`` wins.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0, 1), got {alpha}")
    if target.nu_g != nu_g:
        raise ValueError("target.nu_g disagrees with nu_g")
    cap_g, cap_v = target.cap_g, target.cap_v
    lo_g = max(nu_g - 1.0, 1e-3) * (1.0 + 1e-9)
    if cap_g <= lo_g:
        raise InfeasibleThresholdsError(
            f"theta_g cap {cap_g:.3g} does not exceed the vacuous region "
            f"boundary {lo_g:.3g}; increase n or the target rates"
        )

    def level_point(theta_g: float) -> float | None:
        return _solve_theta_v(theta_g, alpha, n_vars, nu_g, target.j_bound, cap_v)

    def objective(theta_g: float) -> tuple[float, float] | None:
        tv = level_point(theta_g)
        if tv is None or tv > cap_v or tv >= theta_g:
            return None
        return power_lower_bound(theta_g, tv, target), tv

    best: tuple[float, float, float] | None = None  # (power, theta_g, theta_v)
    grid = np.geomspace(lo_g, cap_g, grid_points)
    feasible_idx: list[int] = []
    for i, tg in enumerate(grid):
        res = objective(float(tg))
        if res is None:
            continue
        feasible_idx.append(i)
        pw, tv = res
        if (
            best is None
            or pw > best[0]
            or (pw == best[0] and tv < best[2])
        ):
            best = (pw, float(tg), tv)
    if best is None:
        raise InfeasibleThresholdsError(
            f"no (theta_g, theta_v) within the caps ({cap_g:.3g}, {cap_v:.3g}) "
            f"satisfies fwer_bound <= {alpha}; the most permissive point is "
            f"theta_g = {cap_g:.3g}"
        )

    # Golden-section refinement of theta_g around the grid argmax.
    i_best = int(np.argmin(np.abs(grid - best[1])))
    lo = grid[max(i_best - 1, feasible_idx[0])]
    hi = grid[min(i_best + 1, grid_points - 1)]
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c, d = b - inv_phi * (b - a), a + inv_phi * (b - a)
    for _ in range(60):
        fc = objective(c)
        fd = objective(d)
        pc = fc[0] if fc else -math.inf
        pd = fd[0] if fd else -math.inf
        if pc >= pd:
            b, d = d, c
            c = b - inv_phi * (b - a)
        else:
            a, c = c, d
            d = a + inv_phi * (b - a)
        if b - a <= 1e-10 * max(1.0, b):
            break
    tg = 0.5 * (a + b)
    res = objective(tg)
    if res and (res[0] > best[0] or (res[0] == best[0] and res[1] < best[2])):
        best = (res[0], tg, res[1])
    return CtfThresholds(theta_g=best[1], theta_v=best[2], regime=PARAMETRIC)


def parametric_scores(
    data: Dataset,
) -> tuple[np.ndarray, np.ndarray, tuple[int, ...]]:
    """Cell and variable scores for a whole dataset in one pass.

    Returns ``(cell_scores, variable_scores, singular_cells)``; scores of
    singular cells (and their variables) are NaN.
    """
    yc = data.y - data.y.mean()
    sigma_sq = data.y_variance()
    bases, singular = cell_bases(data.x, data.partition)
    n_cells = data.partition.n_cells
    cell_scores = np.full(n_cells, np.nan)
    for g, q in enumerate(bases):
        if q is None:
            continue
        proj = q.T @ yc
        cell_scores[g] = proj @ proj / sigma_sq

    units, bad_cols = centered_unit_columns(data.x)
    var_scores = (units.T @ yc) ** 2 / sigma_sq
    var_scores[bad_cols] = np.nan
    for g in singular:
        var_scores[list(data.partition.cells[g])] = np.nan
    return cell_scores, var_scores, singular


def run_parametric_test(
    data: Dataset,
    thresholds: CtfThresholds,
    fwer_bound_value: float | None = None,
) -> DiscoverySet:
    """Apply the two-stage parametric rule to a dataset.

    Detects ``v`` when its cell's score strictly exceeds ``theta_g`` and its
    own score strictly exceeds ``theta_v``.  Cells with singular designs are
    skipped with a warning and reported in ``skipped_cells``.
    """
    if thresholds.regime != PARAMETRIC:
        raise ValueError("run_parametric_test needs parametric thresholds")
    cell_scores, var_scores, singular = parametric_scores(data)
    if singular:
        warnings.warn(
            f"skipping {len(singular)} rank-deficient cell(s): {singular}",
            stacklevel=2,
        )
    detected: set[int] = set()
    per_index: dict[int, IndexStats] = {}
    for g, cell in enumerate(data.partition.cells):
        cs = cell_scores[g]
        if np.isnan(cs) or cs <= thresholds.theta_g:
            continue
        for v in cell:
            vs = var_scores[v]
            per_index[v] = IndexStats(cell_stat=float(cs), index_stat=float(vs))
            if vs > thresholds.theta_v:
                detected.add(v)
    return DiscoverySet(
        detected=frozenset(detected),
        per_index=per_index,
        thresholds=thresholds,
        fwer_bound_value=fwer_bound_value,
        skipped_cells=singular,
    )
