"""End-to-end checks of the command line front-end.

Each test drives ``cli.run()`` in process with a config written through the
canonical serializer, then inspects exit codes and artifact files.  The
second-order coefficient of the cosine fixture is checked against its
closed form -1/(8 pi^2).
"""

import json
import math
from pathlib import Path

import pytest

from weakloc import cli

LAM2_COS = -1.0 / (8.0 * math.pi ** 2)


def base_config(outdir, **experiment):
    cfg = {
        "grid": {"mode": "whole-space", "lateral_dim": 1,
                 "cell_length": 1.0, "mesh_lateral": 16},
        "model": {"kind": "potential", "params": {"w1": "-1"}},
        "disorder": {"law": "uniform", "b": 0.0},
        "experiment": {"seed": 11, **experiment},
        "output": {"directory": str(outdir)},
    }
    return cfg


def write_config(tmp_path, cfg, name="run.toml") -> Path:
    path = tmp_path / name
    path.write_text(cli.serialize_config(cfg), encoding="utf-8")
    return path


def run_cli(command, config_path, *extra):
    return cli.run([command, "--config", str(config_path), *extra])


# ---------------------------------------------------------------------------
# expand


def test_expand_cos_reports_lambda2(tmp_path):
    cfg = base_config(tmp_path / "out")
    cfg["grid"]["mesh_lateral"] = 128
    cfg["model"]["params"] = {"w1": "cos(2 * pi * x)"}
    cfg["experiment"]["expected_case"] = "II"
    code = run_cli("expand", write_config(tmp_path, cfg))
    assert code == 0
    body = json.loads((tmp_path / "out" / "expand.json").read_text())
    lam2 = body["expansion"]["lambda2"]
    assert abs(lam2 - LAM2_COS) <= 1e-3 * abs(LAM2_COS)
    assert body["expansion"]["case"] == "II"
    assert body["schema"] == "weakloc-report/1"
    assert body["checks"]["case_matches"] is True


def test_expand_linear_case_and_minimizer(tmp_path):
    cfg = base_config(tmp_path / "out", expected_case="I", epsilon=0.125)
    code = run_cli("expand", write_config(tmp_path, cfg))
    assert code == 0
    body = json.loads((tmp_path / "out" / "expand.json").read_text())
    assert body["expansion"]["case"] == "I"
    assert abs(body["expansion"]["lambda1"] - (-1.0)) <= 1e-12
    assert body["minimizer"]["best_delta"] == 0.125
    assert body["minimizer"]["endpoint_is_minimum"] is True


def test_expand_artifacts_and_summary(tmp_path):
    cfg = base_config(tmp_path / "out", slope_range=[2.7, 3.3])
    cfg["grid"]["mesh_lateral"] = 128
    cfg["model"]["params"] = {"w1": "cos(2 * pi * x)", "w3": "1"}
    code = run_cli("expand", write_config(tmp_path, cfg))
    assert code == 0
    out = tmp_path / "out"
    lines = (out / "summary.txt").read_text().splitlines()
    assert "PASS taylor_slope_in_range" in lines
    assert lines[-1] == "OVERALL PASS"
    csv_lines = (out / "taylor_residuals.csv").read_text().splitlines()
    assert csv_lines[0] == "delta,value_residual"
    assert len(csv_lines) == 8          # header + seven ladder points


# ---------------------------------------------------------------------------
# invocation and config failure modes


def test_unknown_subcommand_exits_3_with_usage(capsys):
    assert cli.run(["bogus"]) == 3
    err = capsys.readouterr().err
    assert "usage:" in err


def test_missing_subcommand_exits_3(capsys):
    assert cli.run([]) == 3
    assert "usage:" in capsys.readouterr().err


def test_malformed_toml_reports_line_and_column(tmp_path, capsys):
    path = tmp_path / "bad.toml"
    path.write_text('[grid\nmode = "x"\n', encoding="utf-8")
    assert run_cli("expand", path) == 3
    err = capsys.readouterr().err
    assert "line 1" in err and "column" in err


def test_missing_seed_is_config_error(tmp_path):
    cfg = base_config(tmp_path / "out")
    del cfg["experiment"]["seed"]
    assert run_cli("expand", write_config(tmp_path, cfg)) == 3


def test_rejected_expression_is_config_error(tmp_path):
    cfg = base_config(tmp_path / "out")
    cfg["model"]["params"] = {"w1": "__import__('os')"}
    assert run_cli("expand", write_config(tmp_path, cfg)) == 3


def test_command_mismatch_is_config_error(tmp_path):
    cfg = base_config(tmp_path / "out", command="wegner")
    assert run_cli("expand", write_config(tmp_path, cfg)) == 3


def test_seed_flag_overrides_config(tmp_path):
    cfg = base_config(tmp_path / "out")
    code = run_cli("expand", write_config(tmp_path, cfg), "--seed", "99")
    assert code == 0
    body = json.loads((tmp_path / "out" / "expand.json").read_text())
    assert body["seed"] == 99
    assert body["config"]["experiment"]["seed"] == 99


# ---------------------------------------------------------------------------
# config round-trip and byte stability


def test_config_roundtrip_is_identity(tmp_path):
    cfg = base_config(tmp_path / "out", epsilons=[0.02, 0.1],
                      two_periodic=True, rate_range=[0.9, 1.1])
    cfg["model"]["params"]["w2"] = "0.5 * cos(2 * pi * x)"
    text = cli.serialize_config(cfg)
    parsed = cli.parse_config(text)
    assert parsed == cfg
    assert cli.serialize_config(parsed) == text
    # a second trip through parse keeps the canonical form fixed
    assert cli.parse_config(cli.serialize_config(parsed)) == parsed


def test_golden_bytes_stable_across_runs(tmp_path):
    cfg = base_config(tmp_path / "out", epsilon=0.125)
    path = write_config(tmp_path, cfg)
    blobs = []
    for _ in range(2):
        assert run_cli("expand", path) == 0
        out = tmp_path / "out"
        blobs.append(b"".join(
            (out / name).read_bytes()
            for name in ("expand.json", "taylor_residuals.csv",
                         "minimizer_profile.csv", "summary.txt")))
    assert blobs[0] == blobs[1]


# ---------------------------------------------------------------------------
# sweep-spectrum


def test_sweep_writes_gap_csv(tmp_path):
    cfg = base_config(tmp_path / "out", epsilons=[0.02, 0.06, 0.1],
                      samples=10, rate_range=[0.9, 1.1])
    assert run_cli("sweep-spectrum", write_config(tmp_path, cfg)) == 0
    lines = (tmp_path / "out" / "sweep_gap.csv").read_text().splitlines()
    assert lines[0] == "epsilon,gap"
    assert len(lines) == 4


def test_empty_sweep_emits_header_only_csv(tmp_path):
    cfg = base_config(tmp_path / "out", epsilons=[])
    assert run_cli("sweep-spectrum", write_config(tmp_path, cfg)) == 0
    lines = (tmp_path / "out" / "sweep_gap.csv").read_text().splitlines()
    assert lines == ["epsilon,gap"]


# ---------------------------------------------------------------------------
# wegner


def _wegner_config(outdir):
    return base_config(outdir, epsilon=0.1, n_cells=4, samples=200,
                       energies=[-0.04, -0.06], kappa_factors=[0.25, 0.02])


def test_wegner_one_csv_per_energy(tmp_path):
    cfg = _wegner_config(tmp_path / "out")
    assert run_cli("wegner", write_config(tmp_path, cfg)) == 0
    for idx in range(2):
        lines = (tmp_path / "out" / f"wegner_E{idx}.csv"
                 ).read_text().splitlines()
        assert lines[0] == "kappa,empirical_probability,bound"
        assert len(lines) == 3
        for row in lines[1:]:
            prob = float(row.split(",")[1])
            assert 0.0 <= prob <= 1.0
    body = json.loads((tmp_path / "out" / "wegner.json").read_text())
    assert len(body["points"]) == 4
    assert body["checks"]["counting_bound_holds"] is True


def test_wegner_threads_agree_with_serial(tmp_path):
    path = write_config(tmp_path, _wegner_config(tmp_path / "out"))
    results = []
    for threads in ("1", "2"):
        assert run_cli("wegner", path, "--threads", threads) == 0
        body = json.loads((tmp_path / "out" / "wegner.json").read_text())
        results.append(body["points"])
    assert results[0] == results[1]


def test_wegner_above_edge_is_regime_exit(tmp_path):
    cfg = _wegner_config(tmp_path / "out")
    cfg["experiment"]["energies"] = [0.5]
    assert run_cli("wegner", write_config(tmp_path, cfg)) == 2


# ---------------------------------------------------------------------------
# remaining commands


def test_lower_bound_margin_table(tmp_path):
    cfg = base_config(tmp_path / "out", n_cells=[2, 4], instances=10,
                      calibration_samples=50)
    assert run_cli("lower-bound", write_config(tmp_path, cfg)) == 0
    lines = (tmp_path / "out" / "margins.csv").read_text().splitlines()
    assert lines[0] == "instance_id,seed,epsilon,N,lhs,rhs,margin,status"
    assert len(lines) == 21
    assert all(row.endswith(",ok") for row in lines[1:])


def test_ise_ladder_artifacts(tmp_path):
    cfg = base_config(tmp_path / "out", epsilon=0.2, n_ladder=[8],
                      samples=10, c0=1.0, endpoint_scale=0.04,
                      e_width=0.00625, require_membership=True)
    assert run_cli("ise", write_config(tmp_path, cfg)) == 0
    lines = (tmp_path / "out" / "ise_ladder.csv").read_text().splitlines()
    assert lines[0] == "n_cells,success_freq,freq_lower_ci,threshold"
    assert len(lines) == 2


def test_msa_hypotheses_smoke(tmp_path):
    cfg = base_config(tmp_path / "out", epsilon=0.1, instances=3,
                      edi_draws=1, n_pairs=8)
    assert run_cli("msa-hypotheses", write_config(tmp_path, cfg)) == 0
    body = json.loads((tmp_path / "out" / "msa-hypotheses.json").read_text())
    assert body["sli"]["instances"] == 3
    assert body["checks"]["ne_within_budget"] is True
    assert (tmp_path / "out" / "ct_profile.csv").exists()


def test_hk_infeasible_is_check_failure(tmp_path):
    cfg = base_config(tmp_path / "out", rate_kind="quadratic",
                      rate_constant=1.0, sup_a_sq=2.0)
    assert run_cli("hk-feasibility", write_config(tmp_path, cfg)) == 1
    lines = (tmp_path / "out" / "summary.txt").read_text().splitlines()
    assert lines == ["FAIL window_feasible", "OVERALL FAIL"]
