"""Seeded simulation experiments: power sweeps and null error-rate checks.

Experiments are replicate-parallel.  Every replicate derives its own seed
from the experiment seed through a splitting function, so results are
byte-identical no matter how many workers run them.  Detection rates are
pooled over active-index trials with normal-approximation binomial
confidence intervals; the family-wise error rate is the fraction of
replicates that produced at least one false discovery.
"""

from __future__ import annotations

import dataclasses
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import bonferroni_reject, holm_reject
from .distributions import chi2_sf
from .errors import InfeasibleThresholdsError
from .linear_model import SimConfig, generate_dataset
from .parametric import (
    CtfThresholds,
    PowerTarget,
    fwer_bound,
    optimize_thresholds,
    parametric_scores,
)
from .permutation import (
    FINITE,
    IDEAL,
    choose_permutation_thresholds,
    finite_sample_fwer_bound,
    parametric_tail_ratio,
    permutation_scores,
    run_permutation_test,
    sample_permutations,
)

REGIMES = ("parametric", "nonparametric", "both")
TARGET_MODES = ("default", "oracle")

Z_95 = 1.959963984540054  # two-sided 95% normal quantile


def derive_seed(master: int, *key: int) -> int:
    """Independent child seed for a (sweep, replicate, stream) coordinate."""
    seq = np.random.SeedSequence(master, spawn_key=tuple(key))
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class ExperimentSpec:
    """Full description of a simulation experiment.

    ``sweep`` lists actives-per-cell values; each value is run as its own
    configuration with ``j_bound = n_active / value`` unless ``j_bound``
    overrides it.  ``target_rates`` picks the power target handed to the
    threshold optimizer: "default" is the near-noiseless ``(2/J, 1/J)``
    choice, "oracle" derives the true per-sample rates from the simulation
    parameters.  ``np_bound`` selects finite-sample or idealized calibration
    for the permutation lane.
    """

    sim: SimConfig
    alpha: float
    replicates: int
    sweep: tuple[int, ...]
    seed: int
    regime: str = "parametric"
    k_perms: int = 0
    epsilon: float | None = None
    j_bound: int | None = None
    np_bound: str = FINITE
    target_rates: str = "default"
    score: str = "rss"

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.replicates < 1:
            raise ValueError("replicates must be >= 1")
        if not self.sweep or any(a < 1 for a in self.sweep):
            raise ValueError("sweep must be a nonempty list of values >= 1")
        if self.regime not in REGIMES:
            raise ValueError(f"regime must be one of {REGIMES}")
        if self.regime != "parametric" and self.k_perms < 2:
            raise ValueError("nonparametric experiments need k_perms >= 2")
        if self.np_bound not in (FINITE, IDEAL):
            raise ValueError(f"np_bound must be '{FINITE}' or '{IDEAL}'")
        if self.target_rates not in TARGET_MODES:
            raise ValueError(f"target_rates must be one of {TARGET_MODES}")
        object.__setattr__(self, "sweep", tuple(int(a) for a in self.sweep))

    @property
    def methods(self) -> tuple[str, ...]:
        par = ("ctf_parametric", "holm", "bonferroni")
        nonpar = ("ctf_permutation", "holm_perm", "bonferroni_perm")
        if self.regime == "parametric":
            return par
        if self.regime == "nonparametric":
            return nonpar
        return par + nonpar


@dataclass(frozen=True)
class PowerTable:
    """Detection rates per sweep value and method, plus pooled FWER rows."""

    sweep_values: tuple[int, ...]
    methods: tuple[str, ...]
    rows: dict[int, dict[str, tuple[float, float]]]
    fwer_rows: dict[str, tuple[float, float]]
    replicates: int
    active_trials: dict[int, int] = field(default_factory=dict)


@dataclass(frozen=True)
class _SweepSetup:
    """Per-sweep-value configuration shared by all replicates."""

    sweep_index: int
    actives_per_cell: int
    sim: SimConfig
    j_bound: int
    par_thresholds: CtfThresholds | None
    np_thresholds: CtfThresholds | None
    par_bound_value: float | None
    np_bound_value: float | None


def _oracle_target(
    sim: SimConfig, a: int, n: int, nu_g: int, j_bound: int
) -> PowerTarget:
    if sim.n_active == 0:
        raise ValueError("oracle targets need a nonzero active set")
    signal = sim.coef**2 * sim.var_x
    var_minus_v = (sim.n_active - 1) * signal + sim.var_noise
    var_minus_g = (sim.n_active - a) * signal + sim.var_noise
    return PowerTarget(
        rho_g=a * signal / var_minus_g,
        rho_v=signal / var_minus_v,
        n=n,
        nu_g=nu_g,
        j_bound=j_bound,
    )


def _sweep_setup(spec: ExperimentSpec, sweep_index: int) -> _SweepSetup:
    a = spec.sweep[sweep_index]
    sim = spec.sim
    if sim.n_active % a != 0:
        raise ValueError(
            f"sweep value {a} does not divide n_active = {sim.n_active}"
        )
    sim = dataclasses.replace(sim, actives_per_cell=a)
    nu_g = sim.cell_size
    derived_j = sim.n_active // a if sim.n_active else 0
    j_bound = spec.j_bound if spec.j_bound is not None else derived_j
    if j_bound < 1:
        raise ValueError(
            "j_bound must be >= 1; under a global null pass it explicitly"
        )
    if spec.target_rates == "oracle":
        target = _oracle_target(sim, a, sim.n_samples, nu_g, j_bound)
    else:
        target = PowerTarget.default(sim.n_samples, nu_g, j_bound)
    par = optimize_thresholds(spec.alpha, sim.n_vars, nu_g, target)
    par_value = fwer_bound(par.theta_g, par.theta_v, sim.n_vars, nu_g, j_bound)
    np_thresholds = None
    np_value = None
    if spec.regime != "parametric":
        ratio = parametric_tail_ratio(par, nu_g)
        np_thresholds = choose_permutation_thresholds(
            spec.alpha, sim.n_vars, nu_g, j_bound, spec.k_perms, ratio,
            bound=spec.np_bound,
        )
        try:
            np_value = finite_sample_fwer_bound(
                sim.n_vars, nu_g, j_bound, spec.k_perms,
                np_thresholds.theta_g, np_thresholds.epsilon_g,
                np_thresholds.theta_v, np_thresholds.theta_v_prime,
            )
        except ValueError:
            np_value = None  # epsilon_g at or below the Hoeffding floor
    return _SweepSetup(
        sweep_index=sweep_index,
        actives_per_cell=a,
        sim=sim,
        j_bound=j_bound,
        par_thresholds=None if spec.regime == "nonparametric" else par,
        np_thresholds=np_thresholds,
        par_bound_value=par_value,
        np_bound_value=np_value,
    )


def _replicate(args: tuple[ExperimentSpec, _SweepSetup, int]) -> dict[str, tuple[int, bool]]:
    """One replicate: per-method (active detections, any false discovery)."""
    spec, setup, rep = args
    try:
        data_seed = derive_seed(spec.seed, setup.sweep_index, rep, 0)
        sim = dataclasses.replace(setup.sim, seed=data_seed)
        data = generate_dataset(sim)
        active = data.true_active or frozenset()
        out: dict[str, tuple[int, bool]] = {}

        if setup.par_thresholds is not None:
            cell_scores, var_scores, _ = parametric_scores(data)
            cell_of = data.partition.var_cell_map
            pass_cell = cell_scores > setup.par_thresholds.theta_g
            detected_mask = pass_cell[cell_of] & (
                var_scores > setup.par_thresholds.theta_v
            )
            detected = set(np.flatnonzero(detected_mask).tolist())
            out["ctf_parametric"] = _summarize(detected, active)
            pvals = {
                v: chi2_sf(float(s), 1) for v, s in enumerate(var_scores)
                if not np.isnan(s)
            }
            out["holm"] = _summarize(holm_reject(pvals, spec.alpha), active)
            out["bonferroni"] = _summarize(
                bonferroni_reject(pvals, spec.alpha), active
            )

        if setup.np_thresholds is not None:
            plan_seed = derive_seed(spec.seed, setup.sweep_index, rep, 1)
            plan = sample_permutations(data.n_samples, spec.k_perms, plan_seed)
            scores = permutation_scores(data, plan, spec.score)
            result = run_permutation_test(
                data, plan, setup.np_thresholds, spec.score, scores=scores
            )
            out["ctf_permutation"] = _summarize(result.detected, active)
            k = scores.k
            var_stat = (
                np.count_nonzero(
                    scores.variable_perm >= scores.variable_base, axis=0
                ) / k
            )
            perm_pvals = {
                v: float(s) for v, s in enumerate(var_stat)
                if not np.isnan(scores.variable_base[v])
            }
            out["holm_perm"] = _summarize(
                holm_reject(perm_pvals, spec.alpha), active
            )
            out["bonferroni_perm"] = _summarize(
                bonferroni_reject(perm_pvals, spec.alpha), active
            )
        return out
    except Exception as exc:  # attach the replicate coordinate
        raise RuntimeError(
            f"replicate {rep} of sweep value {setup.actives_per_cell} failed: {exc}"
        ) from exc


def _summarize(detected: set, active: frozenset[int]) -> tuple[int, bool]:
    hits = len(active.intersection(detected))
    false = any(v not in active for v in detected)
    return hits, false


def _run_tasks(tasks, threads: int):
    if threads <= 1:
        return [_replicate(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_replicate, tasks))


def binomial_ci_half_width(p: float, n: int, z: float = Z_95) -> float:
    """Normal-approximation half width of a binomial proportion interval."""
    if n <= 0:
        return math.nan
    return z * math.sqrt(max(p * (1.0 - p), 0.0) / n)


def run_power_experiment(spec: ExperimentSpec, threads: int = 1) -> PowerTable:
    """Detection-rate sweep over actives-per-cell values.

    For every sweep value and replicate, generates a dataset, runs the
    configured methods and records per-active-index detections plus whether
    any inactive index was declared.  Output depends only on the spec.
    """
    setups = [_sweep_setup(spec, i) for i in range(len(spec.sweep))]
    rows: dict[int, dict[str, tuple[float, float]]] = {}
    active_trials: dict[int, int] = {}
    false_counts = {m: 0 for m in spec.methods}
    total_reps = 0
    for setup in setups:
        tasks = [(spec, setup, rep) for rep in range(spec.replicates)]
        outcomes = _run_tasks(tasks, threads)
        n_active = setup.sim.n_active
        trials = n_active * spec.replicates
        active_trials[setup.actives_per_cell] = trials
        row: dict[str, tuple[float, float]] = {}
        for method in spec.methods:
            hits = sum(o[method][0] for o in outcomes)
            rate = hits / trials if trials else math.nan
            row[method] = (rate, binomial_ci_half_width(rate, trials))
            false_counts[method] += sum(o[method][1] for o in outcomes)
        rows[setup.actives_per_cell] = row
        total_reps += spec.replicates
    fwer_rows = {
        m: (
            false_counts[m] / total_reps,
            binomial_ci_half_width(false_counts[m] / total_reps, total_reps),
        )
        for m in spec.methods
    }
    return PowerTable(
        sweep_values=spec.sweep,
        methods=spec.methods,
        rows=rows,
        fwer_rows=fwer_rows,
        replicates=spec.replicates,
        active_trials=active_trials,
    )


def run_null_fwer_experiment(
    spec: ExperimentSpec, threads: int = 1
) -> dict[str, tuple[float, float]]:
    """Empirical FWER per method: the fraction of replicates with at least
    one false discovery, with a binomial confidence half-width.

    Meant for global-null specs (``n_active = 0`` with an explicit
    ``j_bound``), but any spec works: discoveries outside the planted set
    count as false.
    """
    if spec.sim.n_active == 0 and spec.j_bound is None:
        raise ValueError("a global-null experiment needs an explicit j_bound")
    setup = _sweep_setup(spec, 0)
    tasks = [(spec, setup, rep) for rep in range(spec.replicates)]
    outcomes = _run_tasks(tasks, threads)
    out: dict[str, tuple[float, float]] = {}
    for method in spec.methods:
        falses = sum(o[method][1] for o in outcomes)
        rate = falses / spec.replicates
        out[method] = (rate, binomial_ci_half_width(rate, spec.replicates))
    return out
