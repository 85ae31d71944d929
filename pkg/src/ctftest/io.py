"""File formats: dataset/partition CSV, report JSON, spec JSON, table CSV.

Formats (all versioned through a ``format_version`` field or column):

* dataset CSV -- header ``y,<id>,<id>,...``; one row per sample, first
  column the response, remaining columns the design, named by variable id.
* partition CSV -- header ``variable_id,cell_id``; one row per variable.
  Cells are ordered by first appearance; variables keep dataset column order.
* cell p-value CSV -- header ``cell_id,p_value``.
* discovery report JSON -- thresholds, per-index statistics, detections.
* active-cell estimate JSON -- grid, counts, draw, constant, j_hat.
* experiment spec JSON -- mirrors :class:`~ctftest.harness.ExperimentSpec`.
* power table CSV -- fixed columns
  ``format_version,row_type,sweep_value,method,value,ci_half_width,n``.
"""

from __future__ import annotations

import csv
import dataclasses
import json
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FileFormatError
from .harness import ExperimentSpec, PowerTable
from .linear_model import Dataset, Partition, SimConfig
from .parametric import CtfThresholds, DiscoverySet, IndexStats

FORMAT_VERSION = 1


# ---------------------------------------------------------------- datasets


def load_dataset(
    dataset_path: str | Path,
    partition_path: str | Path,
    sigma_y_sq: float | None = None,
) -> tuple[Dataset, list[str]]:
    """Read a dataset CSV plus its partition CSV.

    Returns the dataset and the variable ids in column order.  Raises
    :class:`FileFormatError` with a line number on malformed input.
    """
    dataset_path, partition_path = Path(dataset_path), Path(partition_path)
    with open(dataset_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(str(dataset_path), "empty file") from None
        if not header or header[0] != "y":
            raise FileFormatError(
                str(dataset_path), "first column must be named 'y'", line=1
            )
        var_ids = header[1:]
        if not var_ids:
            raise FileFormatError(
                str(dataset_path), "no variable columns", line=1
            )
        if len(set(var_ids)) != len(var_ids):
            raise FileFormatError(
                str(dataset_path), "duplicate variable ids", line=1
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise FileFormatError(
                    str(dataset_path),
                    f"expected {len(header)} fields, found {len(row)}",
                    line=lineno,
                )
            try:
                rows.append([float(v) for v in row])
            except ValueError as exc:
                raise FileFormatError(
                    str(dataset_path), f"non-numeric value: {exc}", line=lineno
                ) from None
    if len(rows) < 3:
        raise FileFormatError(str(dataset_path), "need at least 3 data rows")
    matrix = np.asarray(rows)

    cell_order: list[str] = []
    cell_members: dict[str, list[int]] = {}
    seen: dict[str, int] = {}
    with open(partition_path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header2 = next(reader)
        except StopIteration:
            raise FileFormatError(str(partition_path), "empty file") from None
        if [h.strip() for h in header2] != ["variable_id", "cell_id"]:
            raise FileFormatError(
                str(partition_path),
                "header must be exactly 'variable_id,cell_id'",
                line=1,
            )
        col_index = {vid: i for i, vid in enumerate(var_ids)}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FileFormatError(
                    str(partition_path), "expected 2 fields", line=lineno
                )
            vid, cid = row[0].strip(), row[1].strip()
            if vid not in col_index:
                raise FileFormatError(
                    str(partition_path),
                    f"variable id {vid!r} not present in the dataset",
                    line=lineno,
                )
            if vid in seen:
                raise FileFormatError(
                    str(partition_path),
                    f"variable id {vid!r} assigned twice (first at line {seen[vid]})",
                    line=lineno,
                )
            seen[vid] = lineno
            if cid not in cell_members:
                cell_order.append(cid)
                cell_members[cid] = []
            cell_members[cid].append(col_index[vid])
    missing = [vid for vid in var_ids if vid not in seen]
    if missing:
        raise FileFormatError(
            str(partition_path),
            f"variables missing from the partition: {missing[:5]}",
        )
    partition = Partition(
        tuple(tuple(sorted(cell_members[cid])) for cid in cell_order)
    )
    data = Dataset(
        y=matrix[:, 0],
        x=matrix[:, 1:],
        partition=partition,
        sigma_y_sq=sigma_y_sq,
    )
    return data, var_ids


def write_dataset(
    data: Dataset,
    dataset_path: str | Path,
    partition_path: str | Path,
    var_ids: list[str] | None = None,
) -> None:
    """Inverse of :func:`load_dataset` (ids default to v0, v1, ...)."""
    ids = var_ids or [f"v{i}" for i in range(data.n_vars)]
    with open(dataset_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", *ids])
        for i in range(data.n_samples):
            writer.writerow(
                [repr(float(data.y[i])), *(repr(float(v)) for v in data.x[i])]
            )
    with open(partition_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variable_id", "cell_id"])
        for g, cell in enumerate(data.partition.cells):
            for v in cell:
                writer.writerow([ids[v], f"g{g}"])


def load_cell_pvalues(path: str | Path) -> tuple[np.ndarray, list[str]]:
    """Read a ``cell_id,p_value`` CSV; returns p-values and cell ids."""
    ids: list[str] = []
    values: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FileFormatError(str(path), "empty file") from None
        if [h.strip() for h in header] != ["cell_id", "p_value"]:
            raise FileFormatError(
                str(path), "header must be exactly 'cell_id,p_value'", line=1
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise FileFormatError(str(path), "expected 2 fields", line=lineno)
            try:
                p = float(row[1])
            except ValueError:
                raise FileFormatError(
                    str(path), f"non-numeric p-value {row[1]!r}", line=lineno
                ) from None
            if not 0.0 <= p <= 1.0:
                raise FileFormatError(
                    str(path), f"p-value {p} outside [0, 1]", line=lineno
                )
            ids.append(row[0].strip())
            values.append(p)
    if not values:
        raise FileFormatError(str(path), "no p-value rows")
    return np.asarray(values), ids


# ---------------------------------------------------------------- reports


def thresholds_to_json(t: CtfThresholds) -> dict[str, Any]:
    return {
        "theta_g": t.theta_g,
        "theta_v": t.theta_v,
        "regime": t.regime,
        "theta_v_prime": t.theta_v_prime,
        "epsilon_g": t.epsilon_g,
    }


def thresholds_from_json(obj: dict[str, Any]) -> CtfThresholds:
    return CtfThresholds(
        theta_g=obj["theta_g"],
        theta_v=obj["theta_v"],
        regime=obj.get("regime", "parametric"),
        theta_v_prime=obj.get("theta_v_prime"),
        epsilon_g=obj.get("epsilon_g"),
    )


def discovery_to_json(result: DiscoverySet, **extra: Any) -> dict[str, Any]:
    """JSON-ready report for a discovery set; ``extra`` lands at top level."""
    return {
        "format_version": FORMAT_VERSION,
        "thresholds": thresholds_to_json(result.thresholds),
        "fwer_bound": result.fwer_bound_value,
        "detected": sorted(result.detected),
        "skipped_cells": list(result.skipped_cells),
        "per_index": {
            str(v): {
                "cell_stat": s.cell_stat,
                "index_stat": s.index_stat,
                "conditional_stat": s.conditional_stat,
            }
            for v, s in sorted(result.per_index.items())
        },
        **extra,
    }


def discovery_from_json(obj: dict[str, Any]) -> DiscoverySet:
    per_index = {
        int(v): IndexStats(
            cell_stat=s["cell_stat"],
            index_stat=s["index_stat"],
            conditional_stat=s.get("conditional_stat"),
        )
        for v, s in obj.get("per_index", {}).items()
    }
    return DiscoverySet(
        detected=frozenset(obj["detected"]),
        per_index=per_index,
        thresholds=thresholds_from_json(obj["thresholds"]),
        fwer_bound_value=obj.get("fwer_bound"),
        skipped_cells=tuple(obj.get("skipped_cells", ())),
    )


def estimate_to_json(est) -> dict[str, Any]:
    return {
        "format_version": FORMAT_VERSION,
        "grid": list(est.grid),
        "counts": list(est.counts),
        "z_draw": est.z_draw,
        "c": est.c,
        "epsilon": est.epsilon,
        "j_hat": est.j_hat,
        "n_cells": est.n_cells,
    }


# ---------------------------------------------------------------- specs


def spec_to_json(spec: ExperimentSpec) -> dict[str, Any]:
    out = dataclasses.asdict(spec)
    out["sim"] = dataclasses.asdict(spec.sim)
    out["sweep"] = list(spec.sweep)
    out["format_version"] = FORMAT_VERSION
    return out


def spec_from_json(obj: dict[str, Any], path: str = "<spec>") -> ExperimentSpec:
    try:
        sim = SimConfig(**obj["sim"])
        fields = {f.name for f in dataclasses.fields(ExperimentSpec)}
        kwargs = {k: v for k, v in obj.items() if k in fields and k != "sim"}
        kwargs["sweep"] = tuple(obj.get("sweep", (1,)))
        return ExperimentSpec(sim=sim, **kwargs)
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(path, f"bad experiment spec: {exc}") from exc


def load_spec(path: str | Path) -> ExperimentSpec:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FileFormatError(str(path), str(exc), line=exc.lineno) from None
    return spec_from_json(obj, path=str(path))


# ---------------------------------------------------------------- tables

TABLE_COLUMNS = (
    "format_version",
    "row_type",
    "sweep_value",
    "method",
    "value",
    "ci_half_width",
    "n",
)


def power_table_to_csv(table: PowerTable) -> str:
    """Render a power table with the fixed column set, deterministically."""
    lines = [",".join(TABLE_COLUMNS)]
    for sweep in table.sweep_values:
        for method in table.methods:
            rate, hw = table.rows[sweep][method]
            n = table.active_trials.get(sweep, 0)
            lines.append(
                f"{FORMAT_VERSION},power,{sweep},{method},{rate:.10g},"
                f"{hw:.10g},{n}"
            )
    total = table.replicates * len(table.sweep_values)
    for method in table.methods:
        rate, hw = table.fwer_rows[method]
        lines.append(
            f"{FORMAT_VERSION},fwer,,{method},{rate:.10g},{hw:.10g},{total}"
        )
    return "\n".join(lines) + "\n"


def write_json(path: str | Path, obj: dict[str, Any]) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
