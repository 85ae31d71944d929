"""High-confidence upper bound on the number of active cells.

Cell p-values are uniform for inactive cells and essentially zero for
strongly active ones, so the count of p-values below a grid point t behaves
like (|G| - J) t + J plus centered noise with a Brownian-bridge covariance.
Inverting a deviation bound for that noise process yields an estimate J-hat
that exceeds the true number of active cells with probability at least
1 - epsilon; running the two-stage test at every j_bound <= J-hat and
intersecting the discoveries then controls the FWER at level alpha + epsilon
without assuming J is known.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .distributions import chi2_sf
from .errors import InfeasibleThresholdsError, SingularDesignError
from .linear_model import Dataset, cell_score
from .parametric import (
    DiscoverySet,
    IndexStats,
    PowerTarget,
    fwer_bound,
    optimize_thresholds,
    run_parametric_test,
)

DEFAULT_GRID = (0.5, 0.6, 0.7, 0.8, 0.9)

# thresholds depend only on the problem shape, which repeats across the
# per-j_bound runs and across replicates
_optimize_cached = lru_cache(maxsize=512)(optimize_thresholds)


@dataclass(frozen=True)
class ActiveCellEstimate:
    """Grid, counts, randomization draw and the resulting estimate."""

    grid: tuple[float, ...]
    counts: tuple[int, ...]
    z_draw: float
    c: float
    epsilon: float
    j_hat: int
    n_cells: int

    def __post_init__(self):
        if any(b < a for a, b in zip(self.counts, self.counts[1:])):
            raise ValueError("counts must be nondecreasing along the grid")
        if not 0 <= self.j_hat <= self.n_cells:
            raise ValueError("j_hat must lie in [0, n_cells]")


def cell_pvalue(data: Dataset, g: int) -> float:
    """One minus the chi-square CDF of the cell score, |g| degrees of freedom.

    Uniform on [0, 1] when the cell is inactive and the response variance is
    known; near zero for strongly active cells.
    """
    score = cell_score(data, g)
    return chi2_sf(score, len(data.partition.cells[g]))


def all_cell_pvalues(data: Dataset) -> np.ndarray:
    """Cell p-values for the whole partition (NaN for singular cells)."""
    out = np.full(data.partition.n_cells, np.nan)
    for g in range(data.partition.n_cells):
        try:
            out[g] = cell_pvalue(data, g)
        except SingularDesignError:
            warnings.warn(f"cell {g} is rank deficient; p-value undefined",
                          stacklevel=2)
    return out


def threshold_counts(pvalues: np.ndarray, grid: tuple[float, ...]) -> tuple[int, ...]:
    """Number of cells with p-value <= t for each grid point t."""
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("grid must be strictly increasing")
    p = np.asarray(pvalues, dtype=float)
    return tuple(int(np.count_nonzero(p <= t)) for t in grid)


def inactive_count_root(
    c: float, z: float, t: float, count: int, n_cells: int
) -> float:
    """Positive root, squared, of the quadratic that bounds the inactive-cell
    count from the observed count at grid point t.

    With exact counts and no noise (c = z = 0) this returns the number of
    inactive cells exactly.
    """
    if not t < 1.0:
        raise ValueError(f"grid point must be < 1, got {t}")
    if count > n_cells:
        raise ValueError("count cannot exceed the number of cells")
    shift = t * z + c
    disc = shift * shift + 4.0 * (1.0 - t) * (n_cells - count)
    root = (-shift + math.sqrt(disc)) / (2.0 * (1.0 - t))
    return root * root


def estimate_active_cells(
    pvalues: np.ndarray,
    epsilon: float,
    seed: int,
    grid: tuple[float, ...] = DEFAULT_GRID,
) -> ActiveCellEstimate:
    """Upper bound J-hat on the number of active cells at confidence
    1 - epsilon.

    Draws a single standard normal randomization value shared by all grid
    points, computes the deviation constant ``c = sqrt(-2 t_max ln
    epsilon)`` and returns ``ceil(n_cells - max_i root_i)`` clamped to
    [0, n_cells].
    """
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must be in (0, 1), got {epsilon}")
    if not all(0.0 < t < 1.0 for t in grid):
        raise ValueError("grid points must lie strictly inside (0, 1)")
    p = np.asarray(pvalues, dtype=float)
    if np.isnan(p).any():
        raise ValueError("p-values contain NaN; resolve singular cells first")
    n_cells = p.shape[0]
    counts = threshold_counts(p, grid)
    z = float(np.random.default_rng(seed).standard_normal())
    c = math.sqrt(-2.0 * grid[-1] * math.log(epsilon))
    best = max(
        inactive_count_root(c, z, t, cnt, n_cells)
        for t, cnt in zip(grid, counts)
    )
    j_hat = min(max(int(math.ceil(n_cells - best)), 0), n_cells)
    return ActiveCellEstimate(
        grid=tuple(grid),
        counts=counts,
        z_draw=z,
        c=c,
        epsilon=epsilon,
        j_hat=j_hat,
        n_cells=n_cells,
    )


def plausibility_check(
    pvalues: np.ndarray, t0: float, width: float = 0.1, z_crit: float = 4.0
) -> bool:
    """Heuristic check that active cells sit well below the grid.

    Counts p-values just below ``t0``; a large excess over the uniform
    expectation suggests weakly active cells are leaking into the grid
    region, where the estimate is not trustworthy.
    """
    p = np.asarray(pvalues, dtype=float)
    n = p.shape[0]
    observed = np.count_nonzero((p > t0 - width) & (p <= t0))
    expected = n * width
    return observed <= expected + z_crit * math.sqrt(max(expected, 1.0))


def adjusted_discovery(
    data: Dataset,
    alpha: float,
    epsilon: float,
    seed: int,
    grid: tuple[float, ...] = DEFAULT_GRID,
    rho_g: float | None = None,
    rho_v: float | None = None,
) -> tuple[DiscoverySet, ActiveCellEstimate]:
    """Two-stage parametric testing with a data-driven active-cell bound.

    Estimates J-hat from the cell p-values, then runs the test once per
    ``j_bound = 1 .. J-hat`` and intersects the discovery sets, which keeps
    the FWER at ``alpha + epsilon`` even though J-hat came from the data.
    Falls back to ``J-hat = n_cells`` when the strong-signal premise looks
    violated.  A j_bound whose threshold optimization is infeasible is
    excluded with a warning (the intersection over the remaining bounds is
    reported); if none is feasible the error propagates.
    """
    pvalues = all_cell_pvalues(data)
    if np.isnan(pvalues).any():
        raise SingularDesignError("cannot estimate active cells: singular cells")
    estimate = estimate_active_cells(pvalues, epsilon, seed, grid)
    if not plausibility_check(pvalues, grid[0]):
        warnings.warn(
            "many cell p-values sit just below the grid; falling back to the "
            "fully conservative bound j_hat = n_cells",
            stacklevel=2,
        )
        estimate = ActiveCellEstimate(
            grid=estimate.grid,
            counts=estimate.counts,
            z_draw=estimate.z_draw,
            c=estimate.c,
            epsilon=epsilon,
            j_hat=estimate.n_cells,
            n_cells=estimate.n_cells,
        )

    nu_g = data.partition.nu_g_max
    n_vars = data.n_vars
    n = data.n_samples
    if estimate.j_hat == 0:
        empty = DiscoverySet(
            detected=frozenset(),
            per_index={},
            thresholds=_optimize_cached(
                alpha, n_vars, nu_g, _target(n, nu_g, 1, rho_g, rho_v)
            ),
            fwer_bound_value=alpha + epsilon,
        )
        return empty, estimate

    intersection: frozenset[int] | None = None
    per_index: dict[int, IndexStats] = {}
    last: DiscoverySet | None = None
    failures: list[int] = []
    for j_prime in range(1, estimate.j_hat + 1):
        target = _target(n, nu_g, j_prime, rho_g, rho_v)
        try:
            thresholds = _optimize_cached(alpha, n_vars, nu_g, target)
        except InfeasibleThresholdsError:
            failures.append(j_prime)
            continue
        result = run_parametric_test(
            data,
            thresholds,
            fwer_bound_value=fwer_bound(
                thresholds.theta_g, thresholds.theta_v, n_vars, nu_g, j_prime
            ),
        )
        last = result
        per_index.update(result.per_index)
        intersection = (
            result.detected if intersection is None
            else intersection & result.detected
        )
    if failures:
        warnings.warn(
            f"threshold optimization infeasible for j_bound in {failures}; "
            f"those runs are excluded from the intersection",
            stacklevel=2,
        )
    if last is None or intersection is None:
        raise InfeasibleThresholdsError(
            f"threshold optimization failed for every j_bound <= {estimate.j_hat}"
        )
    combined = DiscoverySet(
        detected=intersection,
        per_index={v: per_index[v] for v in sorted(per_index)},
        thresholds=last.thresholds,
        fwer_bound_value=alpha + epsilon,
        skipped_cells=last.skipped_cells,
    )
    return combined, estimate


def _target(
    n: int, nu_g: int, j_bound: int, rho_g: float | None, rho_v: float | None
) -> PowerTarget:
    if rho_g is None or rho_v is None:
        return PowerTarget.default(n, nu_g, j_bound)
    return PowerTarget(rho_g=rho_g, rho_v=rho_v, n=n, nu_g=nu_g, j_bound=j_bound)
