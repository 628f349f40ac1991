"""Versioned JSON reports and plot-data CSV tables.

Every artifact carries the schema tag, the command that produced it, the
seeds, and an echo of the resolved configuration, so a report is
reproducible from itself.  JSON is written with sorted keys and fixed
indentation; CSVs are UTF-8 with a mandatory header row, comma separator,
and ``.`` decimals.  Given fixed seeds the bytes are stable across runs.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

SCHEMA = "weakloc-report/1"

__all__ = ["SCHEMA", "write_json", "write_csv", "jsonable",
           "sweep_gap_rows", "taylor_residual_rows", "decay_profile_rows",
           "wegner_kappa_rows", "margin_rows"]


def jsonable(value):
    """Recursively convert numpy scalars/arrays and mappings for json."""
    if isinstance(value, Mapping):
        return {str(k): jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [jsonable(v) for v in value.tolist()]
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, float) and value != value:
        return None                      # NaN has no JSON spelling
    return value


def write_json(path, payload: Mapping, command: str, seed=None) -> Path:
    path = Path(path)
    body = {"schema": SCHEMA, "command": command}
    if seed is not None:
        body["seed"] = seed
    body.update(payload)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(jsonable(body), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(c) for c in row])
    return path


def _cell(value):
    if isinstance(value, (np.floating, np.integer)):
        value = value.item()
    if isinstance(value, float):
        return repr(value)
    return value


# ---------------------------------------------------------------------------
# plot-data extractors: two-column tables ready for any plotting tool


def sweep_gap_rows(sweep, lambda0: float) -> list[tuple]:
    """(epsilon, gap to the unperturbed cell value) per ladder point."""
    return [(row.epsilon, lambda0 - row.minimum) for row in sweep.rows]


def taylor_residual_rows(check) -> list[tuple]:
    """(delta, value residual) from an expansion Taylor check."""
    return list(zip(check.deltas, check.value_residuals))


def decay_profile_rows(profile) -> list[tuple]:
    """(distance, log block norm) from a decay profile fit."""
    out = []
    for d, v in zip(profile.distances, profile.norms):
        if v > 0:
            out.append((float(d), float(np.log(v))))
    return out


def wegner_kappa_rows(reports) -> list[tuple]:
    """(kappa, empirical probability, bound) rows for one probe energy."""
    return [(r.kappa, r.empirical_count / r.samples, r.theoretical_bound)
            for r in reports]


def margin_rows(instances) -> list[tuple]:
    """Canonical margin table: one row per checked instance."""
    rows = []
    for inst in instances:
        rows.append((inst["instance_id"], inst["seed"], inst["epsilon"],
                     inst["n_cells"], inst["lhs"], inst["rhs"],
                     inst["margin"],
                     "ok" if inst["margin"] >= inst["tolerance"] else
                     "violated"))
    return rows


MARGIN_HEADER = ("instance_id", "seed", "epsilon", "N", "lhs", "rhs",
                 "margin", "status")
