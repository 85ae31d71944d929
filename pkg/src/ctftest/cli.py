"""Command-line interface.

Subcommands: ``thresholds`` (optimize and print decision constants),
``test`` (two-stage parametric test on CSV files), ``permtest`` (permutation
variant), ``estimate-j`` (active-cell bound from cell p-values),
``simulate`` (power sweep to CSV), ``null-check`` (empirical FWER).
Exit status: 0 success, 1 usage or file error, 2 numerical infeasibility.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import io as ctio
from .active_cells import estimate_active_cells
from .errors import (
    CtfError,
    EmptyConditioningSetError,
    FileFormatError,
    InfeasibleThresholdsError,
)
from .harness import run_null_fwer_experiment, run_power_experiment
from .parametric import (
    CtfThresholds,
    PowerTarget,
    fwer_bound,
    optimize_thresholds,
    power_lower_bound,
    run_parametric_test,
)
from .permutation import run_permutation_test, sample_permutations


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 instead of argparse's 2
        raise _UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


def _emit(obj: dict, path: str | None) -> None:
    if path:
        ctio.write_json(path, obj)
    else:
        json.dump(obj, sys.stdout, indent=2, sort_keys=True)
        sys.stdout.write("\n")


def _cmd_thresholds(args) -> int:
    target = PowerTarget(
        rho_g=args.rho_g if args.rho_g is not None else 2.0 / args.j,
        rho_v=args.rho_v if args.rho_v is not None else 1.0 / args.j,
        n=args.n,
        nu_g=args.cell_size,
        j_bound=args.j,
    )
    thresholds = optimize_thresholds(args.alpha, args.n_vars, args.cell_size, target)
    report = {
        "format_version": ctio.FORMAT_VERSION,
        "theta_g": thresholds.theta_g,
        "theta_v": thresholds.theta_v,
        "fwer_bound": fwer_bound(
            thresholds.theta_g, thresholds.theta_v, args.n_vars,
            args.cell_size, args.j,
        ),
        "power_bound": power_lower_bound(
            thresholds.theta_g, thresholds.theta_v, target
        ),
        "alpha": args.alpha,
        "j_bound": args.j,
        "inputs": {
            "n_vars": args.n_vars,
            "cell_size": args.cell_size,
            "n": args.n,
            "rho_g": target.rho_g,
            "rho_v": target.rho_v,
        },
    }
    _emit(report, args.output)
    return 0


def _cmd_test(args) -> int:
    data, var_ids = ctio.load_dataset(args.data, args.partition, args.sigma_y_sq)
    thresholds = CtfThresholds(
        theta_g=args.theta_g, theta_v=args.theta_v, regime="parametric"
    )
    result = run_parametric_test(data, thresholds)
    report = ctio.discovery_to_json(
        result, detected_ids=[var_ids[v] for v in sorted(result.detected)]
    )
    _emit(report, args.output)
    return 0


def _cmd_permtest(args) -> int:
    data, var_ids = ctio.load_dataset(args.data, args.partition, args.sigma_y_sq)
    thresholds = CtfThresholds(
        theta_g=args.theta_g,
        theta_v=args.theta_v,
        regime="nonparametric",
        theta_v_prime=args.theta_v_prime,
        epsilon_g=args.epsilon_g,
    )
    plan = sample_permutations(data.n_samples, args.k, args.seed)
    result = run_permutation_test(data, plan, thresholds, score=args.score)
    report = ctio.discovery_to_json(
        result,
        k=args.k,
        seed=args.seed,
        score=args.score,
        detected_ids=[var_ids[v] for v in sorted(result.detected)],
    )
    _emit(report, args.output)
    return 0


def _cmd_estimate_j(args) -> int:
    pvalues, _ = ctio.load_cell_pvalues(args.pvalues)
    grid = tuple(float(t) for t in args.grid.split(","))
    estimate = estimate_active_cells(pvalues, args.epsilon, args.seed, grid)
    _emit(ctio.estimate_to_json(estimate), args.output)
    return 0


def _cmd_simulate(args) -> int:
    spec = ctio.load_spec(args.spec)
    table = run_power_experiment(spec, threads=args.threads)
    text = ctio.power_table_to_csv(table)
    if args.output:
        with open(args.output, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    if args.json:
        report = {
            "format_version": ctio.FORMAT_VERSION,
            "spec": ctio.spec_to_json(spec),
            "rows": {
                str(k): {m: list(v) for m, v in row.items()}
                for k, row in table.rows.items()
            },
            "fwer": {m: list(v) for m, v in table.fwer_rows.items()},
        }
        ctio.write_json(args.json, report)
    return 0


def _cmd_null_check(args) -> int:
    spec = ctio.load_spec(args.spec)
    rates = run_null_fwer_experiment(spec, threads=args.threads)
    report = {
        "format_version": ctio.FORMAT_VERSION,
        "alpha": spec.alpha,
        "replicates": spec.replicates,
        "fwer": {m: list(v) for m, v in rates.items()},
    }
    _emit(report, args.output)
    return 0


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get("CTF_THREADS", "1")))
    except ValueError:
        return 1


def build_parser() -> _Parser:
    parser = _Parser(prog="ctftest", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("thresholds", help="optimize decision thresholds")
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--n-vars", type=int, required=True)
    p.add_argument("--cell-size", type=int, required=True)
    p.add_argument("--j", type=int, required=True, help="active-cell bound")
    p.add_argument("--n", type=int, required=True, help="sample count")
    p.add_argument("--rho-g", type=float, default=None)
    p.add_argument("--rho-v", type=float, default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_thresholds)

    p = sub.add_parser("test", help="two-stage parametric test on CSV data")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--theta-g", type=float, required=True)
    p.add_argument("--theta-v", type=float, required=True)
    p.add_argument("--sigma-y-sq", type=float, default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_test)

    p = sub.add_parser("permtest", help="two-stage permutation test on CSV data")
    p.add_argument("--data", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--k", type=int, required=True, help="sampled permutations")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--theta-g", type=float, required=True)
    p.add_argument("--theta-v", type=float, required=True)
    p.add_argument("--theta-v-prime", type=float, required=True)
    p.add_argument("--epsilon-g", type=float, required=True)
    p.add_argument("--score", choices=("rss", "corr"), default="rss")
    p.add_argument("--sigma-y-sq", type=float, default=None)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_permtest)

    p = sub.add_parser("estimate-j", help="active-cell bound from cell p-values")
    p.add_argument("--pvalues", required=True, help="cell_id,p_value CSV")
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--grid", default="0.5,0.6,0.7,0.8,0.9")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_estimate_j)

    p = sub.add_parser("simulate", help="power sweep from an experiment spec")
    p.add_argument("--spec", required=True)
    p.add_argument("-o", "--output", default=None, help="table CSV path")
    p.add_argument("--json", default=None, help="optional JSON report path")
    p.add_argument("--threads", type=int, default=_default_threads())
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("null-check", help="empirical FWER under the spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--threads", type=int, default=_default_threads())
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=_cmd_null_check)

    return parser


def cli_main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"ctftest: {exc}", file=sys.stderr)
        return 1
    except FileFormatError as exc:
        print(f"ctftest: {exc}", file=sys.stderr)
        return 1
    except (InfeasibleThresholdsError, EmptyConditioningSetError) as exc:
        print(f"ctftest: infeasible: {exc}", file=sys.stderr)
        return 2
    except (ValueError, CtfError) as exc:
        print(f"ctftest: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(cli_main(sys.argv[1:]))


if __name__ == "__main__":
    main()
