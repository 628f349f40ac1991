"""Batch front-end: parse one TOML config, run one experiment, write reports.

A run is a subcommand plus a config file with five sections:

* ``[grid]`` geometry: ``mode`` ("whole-space" or "layer"), ``lateral_dim``,
  ``cell_lengths`` (or scalar ``cell_length``), ``mesh_lateral``, and in layer
  mode ``width``, ``mesh_transversal``, ``transversal_bc``.
* ``[model]`` the perturbation family: ``kind``, coefficient expressions under
  ``[model.params]`` in the node coordinates (``x``, ``y`` lateral, ``z``
  transversal), optionally a background ``v0`` expression in ``z``.
* ``[disorder]`` the single-site law: ``b`` plus either ``law = "uniform"`` or
  a ``density`` expression in ``x`` on [b, 1].
* ``[experiment]`` command parameters; the seed is mandatory so every number
  in a report is reproducible from the config alone.
* ``[output]`` ``directory`` and ``formats`` (any of "json", "csv").

Artifacts per run: ``<command>.json`` (schema "weakloc-report/1", carries the
resolved config echo), plot-data CSVs, and ``summary.txt`` with one PASS/FAIL
line per check.  Exit codes: 0 every check passed, 1 a check failed, 2 a
regime or precondition guard tripped, 3 the invocation or config is malformed
(TOML syntax errors keep the parser's line/column diagnostics).
"""

from __future__ import annotations

import argparse
import copy
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

try:
    import tomllib as _toml
except ModuleNotFoundError:                      # Python < 3.11
    import tomli as _toml

from . import boxes, disorder, expansion, expressions, grids, models, reports

EXIT_PASS = 0
EXIT_CHECK_FAILED = 1
EXIT_REGIME = 2
EXIT_CONFIG = 3

COMMANDS = ("expand", "sweep-spectrum", "lower-bound", "wegner", "ise",
            "msa-hypotheses", "hk-feasibility")

_SEED_LIMIT = 2 ** 63                 # counter-based sampler key space
_MISSING = object()


class ConfigError(ValueError):
    """Malformed configuration; the message carries the offending key."""


# ---------------------------------------------------------------------------
# config parsing and canonical serialization


def parse_config(text: str) -> dict:
    try:
        return _toml.loads(text)
    except _toml.TOMLDecodeError as exc:
        # tomli's message already names the line and column
        raise ConfigError(f"invalid TOML: {exc}") from exc


def read_config(path) -> dict:
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(raw)


def _format_value(value) -> str:
    if isinstance(value, bool):               # bool is an int subclass
        return "true" if value else "false"
    if isinstance(value, int):
        return repr(value)
    if isinstance(value, float):
        return repr(value)                     # shortest round-trip form
    if isinstance(value, str):
        return json.dumps(value)               # valid TOML basic string
    if isinstance(value, (list, tuple)):
        return "[" + ", ".join(_format_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize config value of type {type(value).__name__}")


def serialize_config(cfg: dict) -> str:
    """Canonical text form: sorted tables, sorted keys, repr scalars.

    parse(serialize(parse(text))) equals parse(text) for any config built
    from scalars, lists of scalars, and nested tables.
    """
    lines: list[str] = []

    def emit(prefix: str, table: dict):
        scalars = {k: v for k, v in table.items() if not isinstance(v, dict)}
        subs = {k: v for k, v in table.items() if isinstance(v, dict)}
        if prefix:
            lines.append(f"[{prefix}]")
        for key in sorted(scalars):
            lines.append(f"{key} = {_format_value(scalars[key])}")
        for key in sorted(subs):
            if prefix or lines:
                lines.append("")
            emit(f"{prefix}.{key}" if prefix else key, subs[key])

    emit("", cfg)
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# section access helpers


def _section(cfg: dict, name: str) -> dict:
    try:
        sec = cfg[name]
    except KeyError:
        raise ConfigError(f"missing [{name}] section") from None
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def _get(sec: dict, where: str, key: str, default=_MISSING):
    if key in sec:
        return sec[key]
    if default is _MISSING:
        raise ConfigError(f"{where}: missing required key {key!r}")
    return default


def _number(sec, where, key, default=_MISSING) -> float:
    val = _get(sec, where, key, default)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    return float(val)


def _integer(sec, where, key, default=_MISSING, minimum=None) -> int:
    val = _get(sec, where, key, default)
    if isinstance(val, bool) or not isinstance(val, int):
        raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
    if minimum is not None and val < minimum:
        raise ConfigError(f"{where}.{key}: must be >= {minimum}, got {val}")
    return val


def _number_list(sec, where, key, default=_MISSING) -> list[float]:
    val = _get(sec, where, key, default)
    if not isinstance(val, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in val):
        raise ConfigError(f"{where}.{key}: expected a list of numbers")
    return [float(v) for v in val]


def _ladder(sec, where, key, t0: float, default=_MISSING) -> list[float]:
    """Coupling ladder confined to (0, t0]."""
    values = _number_list(sec, where, key, default)
    for v in values:
        if not 0.0 < v <= t0:
            raise ConfigError(
                f"{where}.{key}: coupling {v} outside (0, {t0}]")
    return values


def _compile(value, variables, where: str):
    """Accept a literal number or an expression string in ``variables``."""
    if isinstance(value, bool):
        raise ConfigError(f"{where}: expected a number or expression")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return expressions.compile_expression(value, variables)
        except expressions.ExpressionError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}: expected a number or expression string")


# ---------------------------------------------------------------------------
# building the run context from the config


@dataclass
class RunContext:
    """Everything a command handler needs, validated once up front."""

    cfg: dict
    command: str
    spec: grids.GridSpec
    variables: tuple[str, ...]
    model: models.PerturbationModel
    v0: Callable | None
    v0_sup: float
    law: disorder.DisorderLaw
    t0: float
    seed: int
    threads: int
    outdir: Path
    formats: tuple[str, ...]

    @property
    def experiment(self) -> dict:
        return self.cfg["experiment"]

    @property
    def alpha(self) -> tuple[int, ...]:
        return (0,) * self.spec.lateral_dim


def build_grid_spec(cfg: dict) -> tuple[grids.GridSpec, tuple[str, ...]]:
    sec = _section(cfg, "grid")
    mode = _get(sec, "grid", "mode", grids.WHOLE_SPACE)
    if mode == "whole_space":
        mode = grids.WHOLE_SPACE
    if "cell_lengths" in sec:
        lengths = tuple(_number_list(sec, "grid", "cell_lengths"))
    else:
        lengths = (_number(sec, "grid", "cell_length", 1.0),)
    lateral_dim = _integer(sec, "grid", "lateral_dim", len(lengths))
    kwargs = dict(mode=mode, lateral_dim=lateral_dim, cell_lengths=lengths,
                  mesh_lateral=_integer(sec, "grid", "mesh_lateral", 16))
    if mode == grids.LAYER:
        bc = _get(sec, "grid", "transversal_bc",
                  [grids.DIRICHLET, grids.DIRICHLET])
        if not (isinstance(bc, list) and len(bc) == 2):
            raise ConfigError("grid.transversal_bc: expected two entries")
        kwargs.update(width=_number(sec, "grid", "width"),
                      mesh_transversal=_integer(sec, "grid",
                                                "mesh_transversal", 16),
                      transversal_bc=tuple(bc))
    try:
        spec = grids.GridSpec(**kwargs)
    except grids.GridError as exc:
        raise ConfigError(f"grid: {exc}") from exc
    names = ("x", "y")[:lateral_dim]
    if mode == grids.LAYER:
        names = names + ("z",)
    return spec, names


def build_model_section(cfg: dict, spec: grids.GridSpec,
                        variables: tuple[str, ...]):
    sec = _section(cfg, "model")
    kind = _get(sec, "model", "kind")
    if kind not in models.KINDS:
        raise ConfigError(f"model.kind: unknown family {kind!r}")
    raw = _get(sec, "model", "params", {})
    if not isinstance(raw, dict):
        raise ConfigError("model.params must be a table")
    params: dict = {}
    for key, val in raw.items():
        where = f"model.params.{key}"
        if key == "a":
            if not isinstance(val, list):
                raise ConfigError(f"{where}: expected one expression per axis")
            params[key] = tuple(_compile(v, variables, f"{where}[{i}]")
                                for i, v in enumerate(val))
        else:
            params[key] = _compile(val, variables, where)

    grid = grids.build_cell_grid(spec)
    v0 = None
    v0_sup = 0.0
    if "v0" in sec:
        if spec.mode != grids.LAYER:
            raise ConfigError("model.v0: a background needs layer mode")
        v0 = _compile(sec["v0"], ("z",), "model.v0")
        z = grid.axes[-1].coords
        vals = np.full(z.shape, v0) if np.isscalar(v0) else np.asarray(v0(z))
        v0_sup = float(np.abs(vals).max(initial=0.0))
    try:
        model = models.build_model(kind, params, grid)
    except models.ModelError as exc:
        raise ConfigError(f"model: {exc}") from exc
    return model, v0, v0_sup


def build_law(cfg: dict) -> disorder.DisorderLaw:
    sec = _section(cfg, "disorder")
    b = _number(sec, "disorder", "b", 0.0)
    try:
        if "density" in sec:
            fn = _compile(sec["density"], ("x",), "disorder.density")
            return disorder.DisorderLaw.from_density(fn, b)
        law_name = _get(sec, "disorder", "law", "uniform")
        if law_name != "uniform":
            raise ConfigError(f"disorder.law: unknown law {law_name!r}")
        return disorder.DisorderLaw.uniform(b)
    except disorder.DisorderError as exc:
        raise ConfigError(f"disorder: {exc}") from exc


def build_context(cfg: dict, command: str, args) -> RunContext:
    spec, variables = build_grid_spec(cfg)
    model, v0, v0_sup = build_model_section(cfg, spec, variables)
    law = build_law(cfg)
    exp = _section(cfg, "experiment")
    declared = exp.get("command")
    if declared is not None and declared != command:
        raise ConfigError(
            f"experiment.command is {declared!r} but {command!r} was invoked")
    t0 = _number(exp, "experiment", "t0", boxes.T0_MAX)
    if not 0.0 < t0 <= boxes.T0_MAX:
        raise ConfigError(f"experiment.t0: must lie in (0, {boxes.T0_MAX}]")
    seed = args.seed if args.seed is not None else _get(
        exp, "experiment", "seed")
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("experiment.seed: an explicit integer seed is "
                          "required; wall-clock defaults are not allowed")
    if not 0 <= seed < _SEED_LIMIT:
        raise ConfigError(f"seed {seed} outside [0, 2^63)")
    threads = args.threads if args.threads is not None else _integer(
        exp, "experiment", "threads", 1)
    if threads < 1:
        raise ConfigError("threads must be >= 1")

    out_sec = cfg.get("output", {})
    if not isinstance(out_sec, dict):
        raise ConfigError("[output] must be a table")
    outdir = Path(args.out) if args.out else Path(
        _get(out_sec, "output", "directory", "weakloc-out"))
    formats = _get(out_sec, "output", "formats", ["json", "csv"])
    if (not isinstance(formats, list)
            or any(f not in ("json", "csv") for f in formats)):
        raise ConfigError('output.formats: entries must be "json" or "csv"')

    resolved = copy.deepcopy(cfg)
    resolved.setdefault("experiment", {})["seed"] = seed
    resolved["experiment"]["threads"] = threads
    resolved.setdefault("output", {})["directory"] = str(outdir)
    return RunContext(resolved, command, spec, variables, model, v0, v0_sup,
                      law, t0, int(seed), int(threads), outdir,
                      tuple(formats))


# ---------------------------------------------------------------------------
# command handlers: each returns (payload, checks, csv tables)

Check = tuple[str, bool]
CsvTable = tuple[str, tuple, list]


def _cmd_expand(ctx: RunContext):
    e = ctx.experiment
    rep = expansion.expand(ctx.model, ctx.v0, ctx.law.b)
    payload = {"expansion": rep.scalars()}
    checks: list[Check] = []
    csvs: list[CsvTable] = []

    deltas = _ladder(e, "experiment", "deltas", ctx.t0,
                     [2.0 ** -k for k in range(3, 10)])
    if deltas:
        tc = expansion.verify_taylor(ctx.model, ctx.v0, deltas)
        payload["taylor"] = {
            "deltas": list(tc.deltas),
            "value_slope": tc.value_slope,
            "field_slope": tc.field_slope,
            "floor": tc.floor,
            "value_exact": tc.value_exact,
        }
        csvs.append(("taylor_residuals.csv", ("delta", "value_residual"),
                     reports.taylor_residual_rows(tc)))
        if "slope_range" in e:
            lo, hi = _number_list(e, "experiment", "slope_range")
            ok = tc.value_exact or (tc.value_slope is not None
                                    and lo <= tc.value_slope <= hi)
            checks.append(("taylor_slope_in_range", bool(ok)))
    if "expected_case" in e:
        checks.append(("case_matches",
                       rep.case == str(e["expected_case"])))
    if "epsilon" in e:
        eps = _number(e, "experiment", "epsilon")
        if not 0.0 < eps <= ctx.t0:
            raise ConfigError(f"experiment.epsilon outside (0, {ctx.t0}]")
        best, dgrid, vals = expansion.minimizer_over_delta(
            ctx.model, ctx.v0, eps, ctx.law.b)
        payload["minimizer"] = {"epsilon": eps, "best_delta": best,
                               "endpoint_is_minimum": best == eps}
        csvs.append(("minimizer_profile.csv", ("delta", "cell_minimum"),
                     list(zip(dgrid, vals))))
    return payload, checks, csvs


def _cmd_sweep(ctx: RunContext):
    e = ctx.experiment
    eps_list = _ladder(e, "experiment", "epsilons", ctx.t0)
    n_cells = _integer(e, "experiment", "n_cells", 4, minimum=1)
    samples = _integer(e, "experiment", "samples", 50, minimum=0)
    tol = _number(e, "experiment", "tolerance", 1e-9)
    two_periodic = bool(e.get("two_periodic", True))

    rep = expansion.expand(ctx.model, ctx.v0, ctx.law.b)
    if rep.case == expansion.CASE_OTHER:
        raise boxes.RegimeError("sweep needs a linear or quadratic "
                                "splitting case")
    checks: list[Check] = []
    csvs: list[CsvTable] = []
    try:
        sweep = boxes.spectral_minimum_sweep(
            ctx.model, eps_list, n_cells, samples=samples, seed=ctx.seed,
            two_periodic=two_periodic, b=ctx.law.b, v0=ctx.v0, tol=tol)
    except boxes.BoxError as exc:
        # an undercut of the cell minimum is a finding, not a crash
        checks.append(("minimum_not_undercut", False))
        return {"sweep": {"error": str(exc)}}, checks, csvs
    checks.append(("minimum_not_undercut", True))
    checks.append(("attained_at_uniform",
                   all(r.attained_at_ones for r in sweep.rows)))
    if "rate_range" in e:
        lo, hi = _number_list(e, "experiment", "rate_range")
        checks.append(("rate_in_range", sweep.rate is not None
                       and lo <= sweep.rate <= hi))
    payload = {"sweep": {
        "lambda0": sweep.lambda0,
        "rate": sweep.rate,
        "rows": [{"epsilon": r.epsilon, "minimum": r.minimum,
                  "lambda_eps": r.lambda_eps,
                  "attained_at_ones": r.attained_at_ones,
                  "n_configs": r.n_configs} for r in sweep.rows],
    }}
    csvs.append(("sweep_gap.csv", ("epsilon", "gap"),
                 reports.sweep_gap_rows(sweep, sweep.lambda0)))
    return payload, checks, csvs


def _cmd_lower_bound(ctx: RunContext):
    e = ctx.experiment
    n_list = [int(n) for n in _number_list(e, "experiment", "n_cells",
                                           [2.0, 4.0])]
    if any(n < 2 for n in n_list):
        raise ConfigError("experiment.n_cells: boxes need at least 2 cells")
    instances = _integer(e, "experiment", "instances", 100, minimum=1)
    cal_samples = _integer(e, "experiment", "calibration_samples", 200,
                           minimum=1)
    tol = _number(e, "experiment", "margin_tolerance", 1e-9)
    safety = _number(e, "experiment", "safety", 0.9)
    if not 0.0 < safety < 1.0:
        raise ConfigError("experiment.safety must lie in (0, 1)")

    rep = expansion.expand(ctx.model, ctx.v0, ctx.law.b)
    if rep.case == expansion.CASE_OTHER:
        raise boxes.RegimeError("no lower bound outside the splitting "
                                "regimes")
    cal = boxes.calibrate_c0(ctx.model, rep, n_list=tuple(n_list),
                             samples=cal_samples, seed=ctx.seed,
                             v0=ctx.v0, b=ctx.law.b)
    power = -2 if rep.case == expansion.CASE_LINEAR else -4
    rng = np.random.default_rng(ctx.seed + 1)
    rows: list[dict] = []
    by_n = []
    for big_n in n_list:
        eps = min(safety * cal.c0 * big_n ** power, 0.99 * boxes.T0_MAX)
        closure, lam_eps = expansion.matched_closure(ctx.model, ctx.v0, eps)
        by_n.append({"n_cells": big_n, "epsilon": eps, "lambda_eps": lam_eps})
        for _ in range(instances):
            xi = boxes.uniform_configuration(ctx.alpha, big_n, ctx.law.b, rng)
            op = boxes.assemble_box_operator(ctx.model, ctx.alpha, big_n, eps,
                                             xi, grids.MEZINCESCU, ctx.v0,
                                             closure)
            gb = boxes.ground_state_gap_bound(op, lam_eps, rep, cal.c0)
            rows.append({"instance_id": len(rows), "seed": ctx.seed + 1,
                         "epsilon": eps, "n_cells": big_n, "lhs": gb.lhs,
                         "rhs": gb.rhs, "margin": gb.margin,
                         "tolerance": -tol * (1.0 + abs(gb.lhs))})
    worst = min(rows, key=lambda r: r["margin"] - r["tolerance"])
    all_clear = all(r["margin"] >= r["tolerance"] for r in rows)
    payload = {
        "calibration": {"c0": cal.c0, "n1": cal.n1, "samples": cal.samples,
                        "seed": cal.seed, "case": cal.case},
        "by_n": by_n,
        "instances": len(rows),
        "margin_min": worst["margin"],
    }
    checks = [("margins_clear_tolerance", all_clear)]
    csvs = [("margins.csv", reports.MARGIN_HEADER, reports.margin_rows(rows))]
    return payload, checks, csvs


def _wegner_grid(ctx: RunContext, consts, lambda0):
    """(E, kappa) probe points, energy-major, from explicit or scaled kappas."""
    e = ctx.experiment
    energies = _number_list(e, "experiment", "energies")
    if "kappas" in e:
        kappas = _number_list(e, "experiment", "kappas")
        return [(en, k) for en in energies for k in kappas], \
               [len(kappas)] * len(energies)
    factors = _number_list(e, "experiment", "kappa_factors")
    if any(not 0.0 < f <= 1.0 for f in factors):
        raise ConfigError("experiment.kappa_factors must lie in (0, 1]")
    points = []
    for en in energies:
        if consts.d_constant > 0.0:
            cap = consts.d_constant * ctx_eps(ctx) ** consts.regime_power / 4.0
        else:
            cap = (lambda0 - en) / 4.0
        points.extend((en, f * cap) for f in factors)
    return points, [len(factors)] * len(energies)


def ctx_eps(ctx: RunContext) -> float:
    eps = _number(ctx.experiment, "experiment", "epsilon")
    if not 0.0 < eps <= ctx.t0:
        raise ConfigError(f"experiment.epsilon outside (0, {ctx.t0}]")
    return eps


def _cmd_wegner(ctx: RunContext):
    e = ctx.experiment
    eps = ctx_eps(ctx)
    n_cells = _integer(e, "experiment", "n_cells", 4, minimum=2)
    samples = _integer(e, "experiment", "samples", 500, minimum=200)
    consts = disorder.wegner_constants(ctx.model, eps, ctx.law,
                                       ctx.model.grid, v0=ctx.v0,
                                       v0_sup=ctx.v0_sup)
    rep = expansion.expand(ctx.model, ctx.v0, ctx.law.b)
    c_weyl = boxes.calibrate_weyl(ctx.spec, v0=ctx.v0)
    points, group_sizes = _wegner_grid(ctx, consts, rep.lambda0)

    def probe(item):
        idx, (energy, kappa) = item
        return disorder.wegner_empirical(
            ctx.model, eps, ctx.law, energy, kappa, ctx.alpha, n_cells,
            samples, ctx.seed + 7919 * idx, v0=ctx.v0, v0_sup=ctx.v0_sup,
            c_weyl=c_weyl)

    if ctx.threads > 1:
        with ThreadPoolExecutor(max_workers=ctx.threads) as pool:
            results = list(pool.map(probe, enumerate(points)))
    else:
        results = [probe(item) for item in enumerate(points)]

    payload = {
        "epsilon": eps,
        "n_cells": n_cells,
        "constants": consts.to_dict(),
        "c_weyl": c_weyl,
        "regime_edge": consts.regime_edge(rep.lambda0),
        "points": [r.to_dict() for r in results],
    }
    try:
        window = disorder.localization_window(
            ctx.model, eps,
            {"D": consts.d_constant, "mean_abs": ctx.law.mean_abs,
             "cubic_regime": consts.cubic_regime},
            v0=ctx.v0, b=ctx.law.b)
        payload["localization_window"] = window.to_dict()
    except expansion.ExpansionError:
        pass                                    # no window outside I/II
    checks = [
        ("counting_bound_holds", all(r.passed for r in results)),
        ("kappa_halving_ratio",
         all(r.ratio_ok is not False for r in results)),
    ]
    csvs: list[CsvTable] = []
    start = 0
    for idx, size in enumerate(group_sizes):
        group = results[start:start + size]
        start += size
        csvs.append((f"wegner_E{idx}.csv",
                     ("kappa", "empirical_probability", "bound"),
                     reports.wegner_kappa_rows(group)))
    return payload, checks, csvs


def _cmd_ise(ctx: RunContext):
    e = ctx.experiment
    if ctx.spec.lateral_dim != 1:
        raise ConfigError("ise: decay events need one lateral dimension")
    eps = ctx_eps(ctx)
    ladder = [int(n) for n in _number_list(e, "experiment", "n_ladder",
                                           [8.0, 16.0, 32.0])]
    if any(n < 3 for n in ladder):
        raise ConfigError("experiment.n_ladder: events need >= 3 cells")
    samples = _integer(e, "experiment", "samples", 40, minimum=1)
    tau = _number(e, "experiment", "tau", 0.0) or None
    c0 = _number(e, "experiment", "c0", 1.0)
    endpoint_scale = _number(e, "experiment", "endpoint_scale", 1.0)
    e_width = _number(e, "experiment", "e_width", 0.0) or None
    c2_scale = _number(e, "experiment", "c2_scale", 1.0)
    min_success = _number(e, "experiment", "min_success", 0.95)

    runs = []
    for j, n_cells in enumerate(ladder):
        runs.append(disorder.ise_empirical(
            ctx.model, eps, ctx.law, n_cells, tau, samples,
            ctx.seed + 104729 * j, c0=c0, v0=ctx.v0,
            endpoint_scale=endpoint_scale, e_width=e_width,
            c2_scale=c2_scale))
    payload = {"epsilon": eps, "ladder": [r.to_dict() for r in runs]}
    checks = [("success_frequency_final",
               runs[-1].success_freq >= min_success)]
    if e.get("require_monotone", False):
        freqs = [r.success_freq for r in runs]
        checks.append(("success_monotone",
                       all(b >= a for a, b in zip(freqs, freqs[1:]))))
    if e.get("require_membership", False):
        checks.append(("coupling_in_admissible_interval",
                       all(r.membership["member"] for r in runs)))
    csvs = [("ise_ladder.csv",
             ("n_cells", "success_freq", "freq_lower_ci", "threshold"),
             [(r.n_cells, r.success_freq, r.freq_lower_ci, r.threshold)
              for r in runs])]
    return payload, checks, csvs


def _cmd_msa(ctx: RunContext):
    e = ctx.experiment
    eps = ctx_eps(ctx)
    instances = _integer(e, "experiment", "instances", 30, minimum=1)
    l_inner = _integer(e, "experiment", "l_inner", 7, minimum=7)
    l_outer = _integer(e, "experiment", "l_outer", 13, minimum=13)
    l_big = _integer(e, "experiment", "l_big", 3 * l_inner,
                     minimum=3 * l_inner)
    n_pairs = _integer(e, "experiment", "n_pairs", 20, minimum=1)
    edi_draws = _integer(e, "experiment", "edi_draws", 2, minimum=1)
    ne_list = [int(n) for n in _number_list(e, "experiment", "ne_n_cells",
                                            [2.0, 4.0, 8.0])]
    offset = _number(e, "experiment", "energy_offset", 0.5)
    ct_offsets = _number_list(e, "experiment", "ct_offsets",
                              [0.25, 0.5, 1.0])
    ct_cells = _integer(e, "experiment", "ct_n_cells", 12, minimum=4)
    r2_min = _number(e, "experiment", "r2_min", 0.9)

    lam_eps, _ = expansion.cell_eigenvalue(ctx.model, ctx.v0, eps)
    energy = lam_eps - offset
    rng = np.random.default_rng(ctx.seed)
    checks: list[Check] = []
    payload: dict = {"epsilon": eps, "probe_energy": energy}

    # two-box resolvent inequality on random configurations
    beta = tuple(a + 3 for a in ctx.alpha)
    sli_rows, sli_skipped, sli_fail = [], 0, None
    tries = 0
    while len(sli_rows) < instances and tries < 5 * instances:
        tries += 1
        xi = boxes.uniform_configuration(ctx.alpha, l_outer, ctx.law.b, rng)
        try:
            chk = boxes.verify_sli(ctx.model, eps, xi, ctx.alpha, l_outer,
                                   beta, l_inner, energy, v0=ctx.v0,
                                   v0_sup=ctx.v0_sup)
        except boxes.BoxError as exc:
            if "resonant" in str(exc):
                sli_skipped += 1
                continue
            sli_fail = str(exc)
            break
        sli_rows.append({"lhs": chk.lhs, "rhs": chk.rhs, "slack": chk.slack,
                         "theta": chk.theta})
    checks.append(("sli_holds",
                   sli_fail is None and len(sli_rows) == instances))
    payload["sli"] = {"instances": len(sli_rows), "skipped": sli_skipped,
                      "theta": sli_rows[0]["theta"] if sli_rows else None,
                      "min_slack": min((r["slack"] for r in sli_rows),
                                       default=None),
                      "failure": sli_fail}

    # eigenfunction decay proxy over the low modes of a wider box
    center = tuple(a + (l_big - l_inner) // 2 for a in ctx.alpha)
    edi_total, edi_skipped, edi_fail = 0, 0, None
    for _ in range(edi_draws):
        xi = boxes.uniform_configuration(ctx.alpha, l_big, ctx.law.b, rng)
        try:
            sweep = boxes.verify_edi(ctx.model, eps, xi, ctx.alpha, l_big,
                                     center, l_inner, n_pairs=n_pairs,
                                     v0=ctx.v0, v0_sup=ctx.v0_sup)
        except boxes.BoxError as exc:
            edi_fail = str(exc)
            break
        edi_total += len(sweep.instances)
        edi_skipped += sweep.skipped
    checks.append(("edi_holds", edi_fail is None))
    payload["edi"] = {"instances": edi_total, "skipped": edi_skipped,
                      "failure": edi_fail}

    # eigenvalue counting against the Weyl-type budget
    consts = disorder.wegner_constants(ctx.model, eps, ctx.law,
                                       ctx.model.grid, v0=ctx.v0,
                                       v0_sup=ctx.v0_sup)
    c_weyl = boxes.calibrate_weyl(ctx.spec, v0=ctx.v0)
    closure, _ = expansion.matched_closure(ctx.model, ctx.v0, eps)
    ne_rows, ne_fail = [], None
    for n_cells in ne_list:
        xi = boxes.uniform_configuration(ctx.alpha, n_cells, ctx.law.b, rng)
        op = boxes.assemble_box_operator(ctx.model, ctx.alpha, n_cells, eps,
                                         xi, grids.MEZINCESCU, ctx.v0,
                                         closure)
        try:
            ne = boxes.verify_ne(op, consts.c_b, ctx.v0_sup, c_weyl)
        except boxes.BoxError as exc:
            ne_fail = str(exc)
            break
        ne_rows.append({"n_cells": n_cells, "count": ne.count,
                        "bound": ne.bound, "threshold": ne.threshold})
    checks.append(("ne_within_budget", ne_fail is None))
    payload["ne"] = {"rows": ne_rows, "c_weyl": c_weyl, "c_b": consts.c_b,
                     "failure": ne_fail}

    # resolvent decay rate against the spectral distance
    xi = boxes.uniform_configuration(ctx.alpha, ct_cells, ctx.law.b, rng)
    op = boxes.assemble_box_operator(ctx.model, ctx.alpha, ct_cells, eps, xi,
                                     grids.DIRICHLET, ctx.v0)
    ct_rows = []
    profile = None
    for off in sorted(ct_offsets):
        try:
            profile = boxes.combes_thomas_profile(op, lam_eps - off)
        except boxes.BoxError:
            continue                       # resonant probe, skip the offset
        if profile.degenerate:
            continue
        ct_rows.append({"offset": off, "rate": profile.rate,
                        "r_squared": profile.r_squared})
    rates = [r["rate"] for r in ct_rows]
    checks.append(("ct_fit_quality", bool(ct_rows) and
                   all(r["r_squared"] >= r2_min for r in ct_rows)))
    checks.append(("ct_rate_monotone",
                   all(b >= a - 1e-9 for a, b in zip(rates, rates[1:]))))
    payload["combes_thomas"] = {"rows": ct_rows}
    csvs: list[CsvTable] = []
    if profile is not None and not profile.degenerate:
        csvs.append(("ct_profile.csv", ("distance", "log_norm"),
                     reports.decay_profile_rows(profile)))
    return payload, checks, csvs


def _cmd_hk(ctx: RunContext):
    e = ctx.experiment
    kind = _get(e, "experiment", "rate_kind")
    constant = _number(e, "experiment", "rate_constant")
    if "sup_a_sq" in e:
        sup_a_sq = _number(e, "experiment", "sup_a_sq")
        source = "config"
    elif ctx.model.kind == "magnetic":
        sup_a_sq = float(ctx.model.form_bounds[0][0]) ** 2
        source = "model"
    else:
        raise ConfigError("hk-feasibility: sup_a_sq is required unless the "
                          "model is magnetic")
    try:
        rep = disorder.hk_feasibility(kind, constant, sup_a_sq)
    except disorder.DisorderError as exc:
        raise ConfigError(f"hk-feasibility: {exc}") from exc
    payload = {"hk": rep.to_dict(), "sup_a_sq_source": source}
    return payload, [("window_feasible", rep.feasible)], []


_HANDLERS = {
    "expand": _cmd_expand,
    "sweep-spectrum": _cmd_sweep,
    "lower-bound": _cmd_lower_bound,
    "wegner": _cmd_wegner,
    "ise": _cmd_ise,
    "msa-hypotheses": _cmd_msa,
    "hk-feasibility": _cmd_hk,
}


# ---------------------------------------------------------------------------
# plot-data emission (public so reports can be re-emitted without a rerun)


def emit_plot_data(report, kind: str, outdir) -> list[Path]:
    """Write the two-column plot tables for one in-memory report object."""
    outdir = Path(outdir)
    if kind == "sweep":
        return [reports.write_csv(outdir / "sweep_gap.csv",
                                  ("epsilon", "gap"),
                                  reports.sweep_gap_rows(report,
                                                         report.lambda0))]
    if kind == "taylor":
        return [reports.write_csv(outdir / "taylor_residuals.csv",
                                  ("delta", "value_residual"),
                                  reports.taylor_residual_rows(report))]
    if kind == "decay":
        return [reports.write_csv(outdir / "ct_profile.csv",
                                  ("distance", "log_norm"),
                                  reports.decay_profile_rows(report))]
    if kind == "wegner":
        paths = []
        by_energy: dict[float, list] = {}
        for rep in report:
            by_energy.setdefault(rep.energy, []).append(rep)
        for idx, energy in enumerate(sorted(by_energy)):
            paths.append(reports.write_csv(
                outdir / f"wegner_E{idx}.csv",
                ("kappa", "empirical_probability", "bound"),
                reports.wegner_kappa_rows(by_energy[energy])))
        return paths
    raise ValueError(f"unknown plot kind {kind!r}")


# ---------------------------------------------------------------------------
# entry point


class _UsageError(Exception):
    def __init__(self, message: str, parser: argparse.ArgumentParser):
        super().__init__(message)
        self.parser = parser


class _Parser(argparse.ArgumentParser):
    # argparse would sys.exit(2); remap every usage problem to exit 3
    def error(self, message):
        raise _UsageError(message, self)


def _build_parser() -> _Parser:
    parser = _Parser(prog="weakloc",
                     description="Finite-volume verification runs for "
                                 "weak-disorder spectral estimates.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} pipeline")
        p.add_argument("--config", required=True,
                       help="path to the TOML run configuration")
        p.add_argument("--out", default=None,
                       help="output directory (overrides [output])")
        p.add_argument("--threads", type=int, default=None,
                       help="parallel probes (overrides [experiment])")
        p.add_argument("--seed", type=int, default=None,
                       help="seed override (overrides [experiment])")
    return parser


def _write_artifacts(ctx: RunContext, payload: dict, checks, csvs) -> None:
    body = dict(payload)
    body["config"] = ctx.cfg
    body["checks"] = {name: ok for name, ok in checks}
    if "json" in ctx.formats:
        reports.write_json(ctx.outdir / f"{ctx.command}.json", body,
                           ctx.command, ctx.seed)
    if "csv" in ctx.formats:
        for name, header, rows in csvs:
            reports.write_csv(ctx.outdir / name, header, rows)
    lines = [f"{'PASS' if ok else 'FAIL'} {name}" for name, ok in checks]
    overall = all(ok for _, ok in checks)
    lines.append(f"OVERALL {'PASS' if overall else 'FAIL'}")
    ctx.outdir.mkdir(parents=True, exist_ok=True)
    (ctx.outdir / "summary.txt").write_text("\n".join(lines) + "\n",
                                            encoding="utf-8")


def run(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc.parser.format_usage(), end="", file=sys.stderr)
        print(f"weakloc: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command is None:
        print(parser.format_usage(), end="", file=sys.stderr)
        print("weakloc: error: a subcommand is required", file=sys.stderr)
        return EXIT_CONFIG

    try:
        cfg = read_config(args.config)
        ctx = build_context(cfg, args.command, args)
        payload, checks, csvs = _HANDLERS[args.command](ctx)
    except ConfigError as exc:
        print(f"weakloc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (models.ModelError, grids.GridError,
            expressions.ExpressionError) as exc:
        print(f"weakloc: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (disorder.RegimeViolation, disorder.DegenerateLaw,
            boxes.RegimeError, expansion.ExpansionError) as exc:
        print(f"weakloc: regime error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except boxes.BoxError as exc:
        # geometry and resonance preconditions surface here; inequality
        # violations are caught per command and reported as failed checks
        print(f"weakloc: precondition error: {exc}", file=sys.stderr)
        return EXIT_REGIME
    except disorder.DisorderError as exc:
        print(f"weakloc: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED

    _write_artifacts(ctx, payload, checks, csvs)
    for name, ok in checks:
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    if all(ok for _, ok in checks):
        print("OVERALL PASS")
        return EXIT_PASS
    print("OVERALL FAIL")
    return EXIT_CHECK_FAILED


def main(argv=None) -> int:
    return run(argv)


if __name__ == "__main__":
    sys.exit(main())
