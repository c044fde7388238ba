"""Config grammar, subcommand artifacts, exit codes, and the manifest."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hopf_critic import cli
from hopf_critic.config import ConfigError, load_config, parse_config

GOLDEN = """\
[system]
n 2
drift 1 0 1 -1.0
drift 1 3 0 -1.0
drift 1 1 2 -1.0
drift 2 1 0 1.0
drift 2 2 1 -1.0
drift 2 0 3 -1.0
sigma 1 1 0 0 1.0
sigma 1 1 1 0 1.5
sigma 2 2 0 0 1.0

[run]
epsilon 1e-1
T 0.5
dt 1e-2
paths 30
seed 0
checkpoints 0.25 0.5

[output]
directory out
formats csv json
"""

REPO_CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path, text=GOLDEN, name="system.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def test_minimal_config_fills_defaults():
    cfg = parse_config("[system]\nn 2\n")
    assert cfg.n == 2
    assert cfg.m == 2
    assert cfg.includes_mu is False
    assert cfg.epsilons == (1e-2,)
    assert cfg.T == 1.0
    assert cfg.dt == 1e-3
    assert cfg.paths == 100
    assert cfg.seed == 0
    assert cfg.rho0 == 1.0
    assert cfg.delta == 0.05
    assert cfg.nmax == 10.0
    assert cfg.big_delta == 2.0
    assert cfg.beta == 0.4
    assert cfg.checkpoints == (1.0,)
    assert cfg.workers is None
    assert cfg.out_dir == "out"
    assert cfg.formats == ("csv", "json")
    assert cfg.plot is False


def test_config_builds_the_declared_polynomials():
    cfg = parse_config(GOLDEN)
    assert_allclose(cfg.drift(np.array([1.0, 0.0])), [-1.0, 1.0])
    assert_allclose(cfg.sigma(np.zeros(2)).reshape(2, 2), np.eye(2))
    assert_allclose(cfg.sigma(np.array([1.0, 0.0])).reshape(2, 2),
                    [[2.5, 0.0], [0.0, 1.0]])
    assert cfg.checkpoints == (0.25, 0.5)


def test_checkpoints_default_to_the_horizon():
    cfg = parse_config("[system]\nn 2\n[run]\nT 2.0\n")
    assert cfg.checkpoints == (2.0,)


def test_parse_collects_every_error_with_line_numbers():
    text = """\
[system]
n 1
drift 1 0 -1.0
bogus 3
[run]
epsilon 2.0
dt -1
[output]
plot maybe
"""
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    errors = exc.value.errors
    assert len(errors) >= 5
    assert any("line 2" in e and "n must be" in e for e in errors)
    assert any("line 3" in e and "drift" in e for e in errors)
    assert any("line 4" in e and "bogus" in e for e in errors)
    assert any("line 6" in e and "epsilon" in e for e in errors)
    assert any("line 9" in e and "plot" in e for e in errors)


def test_parse_rejects_duplicate_scalar_keys():
    text = "[system]\nn 2\n[run]\nT 1.0\nT 2.0\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert any("duplicate key 'T'" in e for e in exc.value.errors)


def test_parse_rejects_keys_outside_sections():
    with pytest.raises(ConfigError) as exc:
        parse_config("n 2\n[system]\nn 2\n")
    assert any("outside any section" in e for e in exc.value.errors)


def test_parse_rejects_out_of_range_indices():
    text = "[system]\nn 2\ndrift 3 0 0 1.0\nsigma 1 5 0 0 1.0\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    assert any("row 3 out of range" in e for e in exc.value.errors)
    assert any("column 5 out of range" in e for e in exc.value.errors)


def test_parameter_flag_extends_drift_exponents():
    text = """\
[system]
n 2
mu true
drift 1 0 1 0 -1.0
drift 1 1 0 1 1.0
sigma 1 1 0 0 1.0
"""
    cfg = parse_config(text)
    assert cfg.includes_mu is True
    assert cfg.drift.n_in == 3
    assert cfg.drift.n_out == 2
    assert_allclose(cfg.drift(np.array([1.0, 0.5, 0.25])), [-0.25, 0.0])


def test_shipped_example_configs_parse():
    planar = load_config(REPO_CONFIGS / "hopf2d.cfg")
    assert planar.n == 2
    assert planar.epsilons == (1e-1, 1e-2)
    coupled = load_config(REPO_CONFIGS / "coupled3d.cfg")
    assert coupled.n == 3
    assert coupled.drift.n_in == 3


def test_check_reports_verdicts_and_exits_zero(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["check", "--config", cfg, "--out", str(out)]) == 0
    text = capsys.readouterr().out
    assert "critical_point: true" in text
    assert "supercritical: true" in text
    assert "transversality: unknown" in text
    record = json.loads((out / "hypotheses.json").read_text())
    assert record["verdict_sigma_nonzero_at_origin"] is True
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "check"


def test_check_flags_subcritical_system_but_still_exits_zero(tmp_path,
                                                             capsys):
    text = GOLDEN.replace("-1.0", "1.0").replace("drift 1 0 1 1.0",
                                                 "drift 1 0 1 -1.0")
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["check", "--config", cfg, "--out", str(out)]) == 0
    assert "supercritical: false" in capsys.readouterr().out


def test_check_with_parameter_reports_transversality(tmp_path, capsys):
    text = """\
[system]
n 2
mu true
drift 1 0 1 0 -1.0
drift 2 1 0 0 1.0
drift 1 3 0 0 -1.0
drift 1 1 2 0 -1.0
drift 2 2 1 0 -1.0
drift 2 0 3 0 -1.0
drift 1 1 0 1 1.0
drift 2 0 1 1 1.0
sigma 1 1 0 0 1.0
sigma 2 2 0 0 1.0
"""
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    assert cli.main(["check", "--config", cfg, "--out", str(out)]) == 0
    assert "transversality: true" in capsys.readouterr().out
    assert cli.main(["normal-form", "--config", cfg, "--out",
                     str(out)]) == 0
    record = json.loads((out / "normal_form.json").read_text())
    assert_allclose(record["radial_cubic_coefficient"], -1.0, atol=1e-12)


def test_normal_form_writes_reduction_artifacts(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    assert cli.main(["normal-form", "--config", cfg, "--out",
                     str(out)]) == 0
    record = json.loads((out / "normal_form.json").read_text())
    assert_allclose(record["lam0"], 1.0)
    assert_allclose(record["radial_cubic_coefficient"], -1.0, atol=1e-12)
    assert_allclose(record["limit"]["s"], 1.0, atol=1e-12)
    assert isinstance(record["reduced_terms"], list)
    assert record["stable_block"] == []


def test_simulate_writes_one_trajectory_file_per_epsilon(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["simulate", "--config", cfg, "--out", str(out),
                     "--epsilon", "0.1", "0.05", "--paths", "5",
                     "--dt", "0.01", "--T", "0.1",
                     "--checkpoints", "0.1"])
    assert code == 0
    for eps in ("0.1", "0.05"):
        lines = (out / f"trajectory_eps{eps}.csv").read_text().strip()
        lines = lines.split("\n")
        assert lines[0] == "path,t,z1,z2,stopped"
        assert len(lines) == 1 + 5 * 11
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["outputs"] == ["trajectory_eps0.05.csv",
                                   "trajectory_eps0.1.csv"]


def test_converge_artifacts_do_not_depend_on_worker_count(tmp_path):
    cfg = write_config(tmp_path)
    runs = {}
    for workers in ("1", "3"):
        out = tmp_path / f"w{workers}"
        code = cli.main(["converge", "--config", cfg, "--out", str(out),
                         "--paths", "40", "--epsilon", "0.1",
                         "--checkpoints", "0.25", "--workers", workers])
        assert code == 0
        runs[workers] = out
    for name in ("convergence.csv", "convergence.json"):
        assert (runs["1"] / name).read_bytes() == \
            (runs["3"] / name).read_bytes()
    first = json.loads((runs["1"] / "manifest.json").read_text())
    second = json.loads((runs["3"] / "manifest.json").read_text())
    assert first.pop("workers") == 1
    assert second.pop("workers") == 3
    assert first == second


def test_converge_summary_and_manifest_contents(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["converge", "--config", cfg, "--out", str(out),
                     "--paths", "24", "--epsilon", "0.1",
                     "--checkpoints", "0.25", "--seed", "7"])
    assert code == 0
    text = capsys.readouterr().out
    assert "eps=0.1" in text
    assert "verdicts:" in text
    rows = (out / "convergence.csv").read_text().strip().split("\n")
    assert rows[0].split(",")[5] == "n_paths"
    assert rows[1].split(",")[5] == "24"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["paths"] == 24
    assert manifest["backend"] in ("numba", "numpy")
    assert manifest["config_sha256"] == hashlib.sha256(
        Path(cfg).read_bytes()).hexdigest()
    assert set(manifest["versions"]) == {"package", "python", "numpy",
                                         "scipy", "numba"}


def test_converge_plot_writes_svg(tmp_path):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["converge", "--config", cfg, "--out", str(out),
                     "--paths", "16", "--epsilon", "0.2", "0.1",
                     "--checkpoints", "0.25", "--plot"])
    assert code == 0
    assert (out / "convergence.svg").read_text().startswith("<svg")
    manifest = json.loads((out / "manifest.json").read_text())
    assert "convergence.svg" in manifest["outputs"]


def test_reduce_writes_rows_per_epsilon(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["reduce", "--config", cfg, "--out", str(out),
                     "--paths", "10", "--epsilon", "0.1", "0.05"])
    assert code == 0
    assert "u_median" in capsys.readouterr().out
    rows = (out / "reduction.csv").read_text().strip().split("\n")
    assert len(rows) == 3
    record = json.loads((out / "reduction.json").read_text())
    assert [r["epsilon"] for r in record["rows"]] == [0.1, 0.05]


def test_missing_config_file_exits_one(tmp_path, capsys):
    code = cli.main(["check", "--config", str(tmp_path / "absent.cfg")])
    assert code == 1
    assert "error: CONFIG:" in capsys.readouterr().err


def test_invalid_config_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path, "[system]\nn 2\n[run]\nepsilon 3.0\n")
    assert cli.main(["check", "--config", cfg]) == 1
    err = capsys.readouterr().err
    assert "error: CONFIG:" in err
    assert "epsilon" in err


def test_flag_override_out_of_range_exits_one(tmp_path, capsys):
    cfg = write_config(tmp_path)
    code = cli.main(["converge", "--config", cfg, "--dt", "-0.5"])
    assert code == 1
    assert "dt must lie in (0, T]" in capsys.readouterr().err


def test_usage_errors_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        cli.main(["converge"])
    assert exc.value.code == 1
    assert "error: CONFIG:" in capsys.readouterr().err


def test_runtime_failures_exit_two_with_error_code(tmp_path, capsys):
    text = GOLDEN.replace("[run]", "drift 1 2 0 0.5\n\n[run]")
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    code = cli.main(["reduce", "--config", cfg, "--out", str(out),
                     "--paths", "2"])
    assert code == 2
    err = capsys.readouterr().err
    assert err.startswith("error: ")
    assert "REDUCED_CUBIC_MISMATCH" in err or \
        "NON_TRIVIAL_QUADRATIC" in err


def test_report_covers_both_studies(tmp_path, capsys):
    cfg = write_config(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["report", "--config", cfg, "--out", str(out),
                     "--paths", "20", "--epsilon", "0.1",
                     "--checkpoints", "0.5"])
    assert code == 0
    text = (out / "report.txt").read_text()
    assert "convergence to the limit law" in text
    assert "reduction errors" in text
    assert text == capsys.readouterr().out
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "report"


def test_report_notes_skipped_reduction_for_mixed_quadratic(tmp_path):
    # the quadratic is large enough to trip the reduction gate but too
    # small to push the reduced cubic off the normal form
    text = GOLDEN.replace("[run]", "drift 1 2 0 1e-6\n\n[run]")
    cfg = write_config(tmp_path, text)
    out = tmp_path / "out"
    code = cli.main(["report", "--config", cfg, "--out", str(out),
                     "--paths", "12", "--epsilon", "0.1",
                     "--checkpoints", "0.25"])
    assert code == 0
    text = (out / "report.txt").read_text()
    assert "skipped" in text
    assert "reduction errors" not in text
