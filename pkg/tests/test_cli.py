import subprocess
import sys
from pathlib import Path

import pytest
import yaml

from stochriemann import cli

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def strip_runtime(text):
    return [line.rsplit(",", 1)[0] for line in text.splitlines()]


def test_list(capsys):
    assert cli.main(["list"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()[1:]
    assert len(lines) >= 10
    for line in lines:
        sid, tol, anchor = line.split(None, 2)
        assert sid in cli.SCENARIOS
        assert float(tol) > 0
        assert anchor


def test_validate_echoes_resolved_config(tmp_path, capsys):
    assert cli.main(["validate", write(tmp_path, "scenario: spde_baseline\n")]) == 0
    cfg = yaml.safe_load(capsys.readouterr().out)
    assert cfg["levels"] == [6, 7, 8]
    assert cfg["tolerance"] == 0.05
    assert cfg["driver"]["kind"] == "wiener"


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.yaml")))
def test_shipped_configs_validate(name):
    cli.load_config(CONFIGS / name)


def test_all_problems_reported(tmp_path, capsys):
    text = "scenario: fubini\npaths: 10\ndriver: {kind: fbm, H: 0.4}\nintegrnd: gauss_xs\n"
    assert cli.main(["validate", write(tmp_path, text)]) == 2
    err = capsys.readouterr().err
    assert "H out of (1/2,1)" in err
    assert "M below statistical floor" in err
    assert "unknown key 'integrnd'" in err and "did you mean 'integrand'" in err


def test_missing_and_invalid(tmp_path, capsys):
    assert cli.main(["validate", str(tmp_path / "nope.yaml")]) == 2
    assert cli.main(["validate", write(tmp_path, "paths: 100\n")]) == 2
    assert cli.main(["validate", write(tmp_path, "scenario: semigroup\nt: -1\n")]) == 2
    assert cli.main(["validate", write(tmp_path, "scenario: [\n")]) == 2
    assert "missing required key 'scenario'" in capsys.readouterr().err


def test_unknown_scenario_suggests(tmp_path, capsys):
    assert cli.main(["run", write(tmp_path, "scenario: fubbini\n")]) == 2
    assert "fubini" in capsys.readouterr().err


def test_catalog_names_checked(tmp_path, capsys):
    assert cli.main(["validate", write(tmp_path, "scenario: spde_baseline\nforcing: gaus\n")]) == 2
    assert "gauss_x" in capsys.readouterr().err


def test_run_writes_reports(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", write(tmp_path, "scenario: quasi_norm\npaths: 1000\n"), "--out", str(out)])
    assert code == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "scenario,check_id,paper_anchor,level,metric,value,tolerance,verdict,runtime_ms"
    anchor = cli.SCENARIOS["quasi_norm"].anchor
    assert all(line.split(",")[0] == "quasi_norm" and anchor in line for line in lines[1:])
    ids = [line.split(",")[1] for line in lines[1:]]
    assert ids == sorted(ids)
    verdicts = (out / "verdicts.csv").read_text().splitlines()
    assert verdicts[0] == "scenario,check_id,verdict"
    assert verdicts[-1] == "quasi_norm,overall,pass"


def test_output_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env_out"))
    assert cli.main(["run", write(tmp_path, "scenario: semigroup\n")]) == 0
    assert (tmp_path / "env_out" / "report.csv").exists()


def test_failing_check_exit_1(tmp_path):
    text = "scenario: semigroup\nconstant_tolerance: 1.0e-20\n"
    assert cli.main(["run", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 1
    assert "semigroup,overall,fail" in (tmp_path / "o" / "verdicts.csv").read_text()


def test_inconclusive_exit_3(tmp_path):
    text = "scenario: parts\npaths: 1000\nlevels: [2, 3, 4]\n"
    assert cli.main(["run", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 3
    assert "inconclusive" in (tmp_path / "o" / "report.csv").read_text()


def test_zero_data_residuals_exactly_zero(tmp_path):
    text = "scenario: spde_baseline\npaths: 200\ninitial: zero\nforcing: zero\nsanity: false\nlevels: [4, 5, 6]\n"
    assert cli.main(["run", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 0
    rows = [l.split(",") for l in (tmp_path / "o" / "report.csv").read_text().splitlines()[1:]]
    residuals = [r for r in rows if r[1] == "weak_residual"]
    assert len(residuals) == 3 and all(float(r[5]) == 0.0 for r in residuals)


def test_level_flag(tmp_path):
    text = "scenario: triangle\npaths: 200\n"
    assert cli.main(["run", write(tmp_path, text), "--out", str(tmp_path / "o"), "--level", "7"]) == 0
    levels = {l.split(",")[3] for l in (tmp_path / "o" / "report.csv").read_text().splitlines()[1:]}
    assert {"5", "6", "7"} <= levels and "8" not in levels


def test_seed_and_paths_overrides_are_deterministic(tmp_path):
    cfg = write(tmp_path, "scenario: fubini\n")
    outs = []
    for i, extra in enumerate([[], ["--workers", "3"]]):
        out = tmp_path / f"o{i}"
        assert cli.main(["run", cfg, "--seed", "5", "--paths", "2500", "--out", str(out)] + extra) == 0
        outs.append(strip_runtime((out / "report.csv").read_text()))
    assert outs[0] == outs[1]
    other = tmp_path / "o_other"
    cli.main(["run", cfg, "--seed", "6", "--paths", "2500", "--out", str(other)])
    assert strip_runtime((other / "report.csv").read_text()) != outs[0]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "stochriemann", "list"], capture_output=True, text=True)
    assert proc.returncode == 0 and "spde_baseline" in proc.stdout
