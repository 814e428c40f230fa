import subprocess
import sys

import numpy as np
import pandas as pd
import pytest
from oracles import ols

from mnarstack.cli import main
from mnarstack.config import KEYS, SUBCOMMAND_KEYS, parse_grid


@pytest.fixture
def incomplete_csv(tmp_path):
    rng = np.random.default_rng(0)
    n = 120
    z2 = rng.standard_normal(n)
    z1 = 0.5 * z2 + rng.standard_normal(n)
    z3 = rng.standard_normal(n)
    df = pd.DataFrame({"y": z1, "x": z2, "w": z3})
    df.loc[rng.random(n) < 0.35, "y"] = np.nan
    df.loc[rng.random(n) < 0.1, "x"] = np.nan
    path = tmp_path / "data.csv"
    df.to_csv(path, index=False, na_rep="NA")
    return path


def analyze_args(path, out, *extra):
    return [
        "analyze", "--input", str(path), "--out-dir", str(out), "--m", "5", "--seed", "3",
        "--set", "target=y", "--set", "analysis=linear", "--set", "outcome=y", "--set", "covariates=x,w",
        "--set", "iterations=3", *extra,
    ]


def test_parse_grid():
    assert parse_grid("-0.2:0.2:0.1") == [-0.2, -0.1, 0.0, 0.1, 0.2]
    assert parse_grid("1,0,0.5,1") == [0.0, 0.5, 1.0]
    with pytest.raises(ValueError):
        parse_grid("0:1:0")


@pytest.mark.parametrize("command", sorted(SUBCOMMAND_KEYS))
def test_help_lists_every_key(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for key in SUBCOMMAND_KEYS[command]:
        assert f"  {key}: {KEYS[key].help}" in out


def test_module_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "mnarstack", "--version"], capture_output=True, text=True)
    assert proc.returncode == 0 and "mnarstack" in proc.stdout


def test_unknown_key_exits_before_work(incomplete_csv, tmp_path, capsys):
    out = tmp_path / "out"
    code = main(analyze_args(incomplete_csv, out, "--set", "bogus=1"))
    assert code == 2
    assert not out.exists()
    err = capsys.readouterr().err
    assert "bogus" in err and len([l for l in err.splitlines() if l.startswith("mnarstack:")]) == 1


def test_missing_required_key(incomplete_csv, tmp_path):
    assert main(["analyze", "--input", str(incomplete_csv), "--out-dir", str(tmp_path)]) == 2


def test_parse_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b\n1,zz\n")
    assert main(["impute", "--input", str(bad), "--out-dir", str(tmp_path)]) == 2
    assert "parse error" in capsys.readouterr().err


def test_config_file_and_flag_override(incomplete_csv, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(f"# sensitivity run\ninput = {incomplete_csv}\nm = 50\nseed = 1\n")
    out = tmp_path / "imp"
    assert main(["impute", "--config", str(cfg), "--m", "3", "--out-dir", str(out)]) == 0
    imps = pd.read_csv(out / "imputations.csv")
    assert sorted(imps["imputation"].unique()) == [1, 2, 3]


def test_analyze_grid_blocks_ordered(incomplete_csv, tmp_path):
    out = tmp_path / "a"
    assert main(analyze_args(incomplete_csv, out, "--phi1-grid=-0.2:0.2:0.1", "--se", "louis,jackknife")) == 0
    res = pd.read_csv(out / "results.csv")
    assert list(res.columns) == ["method", "phi1", "parameter", "estimate", "se_method", "se", "ci_low", "ci_high"]
    assert list(res["phi1"].drop_duplicates()) == [-0.2, -0.1, 0.0, 0.1, 0.2]
    assert res["phi1"].is_monotonic_increasing
    assert len(res) == 5 * 2 * 3
    assert np.all(res["ci_low"] < res["estimate"]) and np.all(res["estimate"] < res["ci_high"])


def test_analyze_rerun_byte_identical(incomplete_csv, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ("--phi1-grid", "0,1", "--se", "bootstrap", "--boot-reps", "20")
    assert main(analyze_args(incomplete_csv, a, *args)) == 0
    assert main(analyze_args(incomplete_csv, b, *args)) == 0
    assert (a / "results.csv").read_bytes() == (b / "results.csv").read_bytes()


def test_analyze_complete_data_equals_direct_fit(tmp_path):
    rng = np.random.default_rng(5)
    x = rng.standard_normal(60)
    y = 1 + 2 * x + rng.standard_normal(60)
    path = tmp_path / "complete.csv"
    pd.DataFrame({"y": y, "x": x}).to_csv(path, index=False)
    out = tmp_path / "out"
    args = [
        "analyze", "--input", str(path), "--out-dir", str(out), "--m", "3", "--phi1-grid", "0",
        "--set", "target=y", "--set", "analysis=linear", "--set", "outcome=y", "--set", "covariates=x",
    ]
    assert main(args) == 0
    res = pd.read_csv(out / "results.csv")
    beta, cov, _ = ols(np.column_stack([np.ones(60), x]), y)
    np.testing.assert_allclose(res["estimate"], beta, rtol=1e-10)
    np.testing.assert_allclose(res["se"], np.sqrt(np.diag(cov)), rtol=1e-8)


def test_weight_writes_stack(incomplete_csv, tmp_path):
    out = tmp_path / "w"
    assert main(["weight", "--input", str(incomplete_csv), "--out-dir", str(out), "--m", "4", "--phi1", "1", "--set", "target=y"]) == 0
    st = pd.read_csv(out / "stack.csv")
    assert list(st.columns[:3]) == ["subject", "imputation", "weight"]
    np.testing.assert_allclose(st.groupby("subject")["weight"].sum(), 1.0, rtol=1e-12)


def test_weight_reuses_imputations(incomplete_csv, tmp_path):
    imp_dir, out = tmp_path / "imp", tmp_path / "w"
    assert main(["impute", "--input", str(incomplete_csv), "--out-dir", str(imp_dir), "--m", "3"]) == 0
    args = ["weight", "--input", str(incomplete_csv), "--out-dir", str(out), "--set", "target=y",
            "--imputations", str(imp_dir / "imputations.csv"), "--set", "link=probit", "--phi1", "0.5"]
    assert main(args) == 0
    assert pd.read_csv(out / "stack.csv")["imputation"].max() == 3


def test_simulate_single_replicate(tmp_path, capsys):
    out = tmp_path / "sim"
    args = [
        "simulate", "--out-dir", str(out), "--seed", "4", "--m", "5", "--phi1-grid", "0,1",
        "--set", "n=100", "--set", "replicates=1", "--se", "louis", "--set", "iterations=2",
    ]
    assert main(args) == 0
    summary = pd.read_csv(out / "summary.csv")
    assert (summary["n_replicates"] == 1).all()
    assert not summary.duplicated(["method", "se_method", "assumed_phi1", "parameter"]).any()
    assert (out / "estimates_vs_phi1.svg").exists() and (out / "coverage_vs_m.svg").exists()
    first = (out / "results.csv").read_bytes()
    assert main(args + ["--no-plots"]) == 0
    assert (out / "results.csv").read_bytes() == first
    assert "mean_estimate" in capsys.readouterr().out


def test_simulate_mar_only(tmp_path):
    out = tmp_path / "mar"
    args = [
        "simulate", "--out-dir", str(out), "--m", "3", "--set", "n=80", "--set", "replicates=2",
        "--set", "methods=mar", "--se", "jackknife", "--no-plots", "--set", "iterations=2",
    ]
    assert main(args) == 0
    res = pd.read_csv(out / "results.csv")
    assert set(res["method"]) == {"mar"}
