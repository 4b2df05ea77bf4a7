"""CLI 命令测试。"""

import json

import numpy as np
import pandas as pd
import pytest
from click.testing import CliRunner

from src.cli import cli
from src.core.ingest import load_individual
from src.estimators.closed_form import first_stage, tsls

FAST = ["--mc-samples", "20", "--burn-in", "5", "--max-iters", "5"]


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def simulated(runner, tmp_path):
    """用 simulate 命令生成数据、真值与汇总统计。"""
    paths = {
        "data": tmp_path / "data.csv",
        "truth": tmp_path / "truth.csv",
        "summary": tmp_path / "summary.csv",
    }
    result = runner.invoke(
        cli,
        [
            "simulate", "--n", "200", "--J", "5", "--seed", "3",
            "--output", str(paths["data"]),
            "--truth-out", str(paths["truth"]),
            "--summary-out", str(paths["summary"]),
        ],
    )
    assert result.exit_code == 0, result.output
    return paths


def _manifest(path):
    return json.loads(path.with_name(path.name + ".manifest.json").read_text(encoding="utf-8"))


class TestSimulate:
    """simulate 命令测试。"""

    def test_writes_files_and_manifest(self, simulated):
        frame = pd.read_csv(simulated["data"])
        truth = pd.read_csv(simulated["truth"])
        manifest = _manifest(simulated["data"])

        assert list(frame.columns) == ["z1", "z2", "z3", "z4", "z5", "d", "y"]
        assert len(frame) == 200
        assert list(truth.columns) == ["variant", "gamma", "alpha", "xi", "beta"]
        assert pd.read_csv(simulated["summary"]).shape == (5, 3)
        assert manifest["command"] == "simulate"
        assert manifest["seed"] == 3
        assert manifest["extra"]["scenario"]["J"] == 5

    def test_default_output_dir(self, runner, tmp_path):
        result = runner.invoke(cli, ["simulate", "--n", "30", "--J", "2"])

        assert result.exit_code == 0, result.output
        assert (tmp_path / "output" / "simulated.csv").exists()


class TestEstimate:
    """estimate 命令测试。"""

    def test_tsls_matches_library(self, runner, simulated, tmp_path):
        out = tmp_path / "est.csv"

        result = runner.invoke(cli, ["estimate", "--input", str(simulated["data"]), "--estimator", "tsls",
                                     "--output", str(out)])

        assert result.exit_code == 0, result.output
        data = load_individual(simulated["data"])
        assert pd.read_csv(out)["beta_hat"].iloc[0] == pytest.approx(tsls(data, first_stage(data)), rel=1e-15)

    def test_same_seed_same_bytes(self, runner, simulated, tmp_path):
        out = tmp_path / "est.csv"
        args = ["estimate", "--input", str(simulated["data"]), "--output", str(out), "--seed", "9", *FAST]
        contents = []

        for _ in range(2):
            result = runner.invoke(cli, args)
            assert result.exit_code == 0, result.output
            manifest_path = out.with_name(out.name + ".manifest.json")
            contents.append((out.read_bytes(), manifest_path.read_bytes()))

        assert contents[0] == contents[1]
        manifest = _manifest(out)
        assert manifest["seed"] == 9
        assert manifest["config"]["mcem"]["mc_samples"] == 20
        assert str(simulated["data"]) in manifest["inputs"]

    def test_manifest_argv_comes_from_parsed_command(self, runner, simulated, tmp_path, monkeypatch):
        monkeypatch.setattr("sys.argv", ["pytest", "--host-only-flag"])
        out = tmp_path / "est.csv"

        result = runner.invoke(cli, ["estimate", "--input", str(simulated["data"]), "--estimator", "tsls",
                                     "-o", str(out)])

        assert result.exit_code == 0, result.output
        argv = _manifest(out)["argv"]
        assert argv[0] == "estimate"
        assert "--host-only-flag" not in argv
        assert argv[argv.index("--input") + 1] == str(simulated["data"])
        assert argv[argv.index("--estimator") + 1] == "tsls"
        assert argv[argv.index("--output") + 1] == str(out)
        assert "--seed" not in argv

    def test_trace_outputs(self, runner, simulated, tmp_path):
        chain = tmp_path / "chain.csv"
        em = tmp_path / "em.csv"

        result = runner.invoke(
            cli,
            ["estimate", "--input", str(simulated["data"]), "--estimator", "eb-gaussian",
             "--trace-out", str(chain), "--em-trace-out", str(em), *FAST],
        )

        assert result.exit_code == 0, result.output
        assert pd.read_csv(chain).columns[:3].tolist() == ["iteration", "step", "alpha1"]
        assert pd.read_csv(em).columns.tolist() == ["iteration", "beta", "mu_alpha", "p0"]

    def test_data_error_exit_code(self, runner, write_csv):
        path = write_csv("bad.csv", "z1,d,y\n1,1,2\n2,abc,4\n3,3,6\n")

        result = runner.invoke(cli, ["estimate", "--input", str(path), "--estimator", "tsls"])

        assert result.exit_code == 3
        assert "parse failure" in result.output

    def test_numerical_error_exit_code(self, runner, write_csv):
        rows = "".join(f"{v},{v},{v + 0.5 * (i % 2)},{i % 3}\n" for i, v in enumerate([1, 4, 2, 8, 5, 7]))
        path = write_csv("dup.csv", "z1,z2,d,y\n" + rows)

        result = runner.invoke(cli, ["estimate", "--input", str(path), "--estimator", "tsls"])

        assert result.exit_code == 4
        assert "rank deficiency" in result.output

    def test_invalid_setting_is_usage_error(self, runner, simulated):
        result = runner.invoke(cli, ["estimate", "--input", str(simulated["data"]), "--mc-samples", "0"])

        assert result.exit_code == 2


class TestEstimateSummary:
    """estimate-summary 命令测试。"""

    def test_runs_on_summary_file(self, runner, simulated, tmp_path):
        out = tmp_path / "summary_est.csv"

        result = runner.invoke(
            cli, ["estimate-summary", "--input", str(simulated["summary"]), "--output", str(out), *FAST]
        )

        assert result.exit_code == 0, result.output
        row = pd.read_csv(out).iloc[0]
        assert row["estimator"] == "mr-eb-summary"
        assert np.isfinite(row["beta_hat"])
        assert _manifest(out)["command"] == "estimate-summary"


class TestGrid:
    """grid 命令测试。"""

    def test_requires_exactly_one_source(self, runner):
        result = runner.invoke(cli, ["grid"])

        assert result.exit_code == 2
        assert "exactly one of --spec or --preset" in result.output

    def test_spec_file(self, runner, write_csv, tmp_path):
        spec = write_csv("grid.yaml", "seed: 1\nreplicates: 1\nestimators: [tsls]\nn: 80\nJ: 4\np0: [0.0, 0.5]\n")
        out = tmp_path / "grid.csv"

        result = runner.invoke(cli, ["grid", "--spec", str(spec), "--workers", "1", "--output", str(out)])

        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out)
        assert len(frame) == 2
        assert set(frame["estimator"]) == {"tsls"}
        assert _manifest(out)["extra"]["replicates"] == 1


class TestPriorSample:
    """prior-sample 命令测试。"""

    def test_writes_draws(self, runner, tmp_path):
        out = tmp_path / "prior.csv"

        result = runner.invoke(
            cli,
            ["prior-sample", "--p0", "0.8", "--tau2", "0.01", "--nu0", "0.001", "--mu-alpha", "0.2",
             "--count", "100", "--output", str(out)],
        )

        assert result.exit_code == 0, result.output
        frame = pd.read_csv(out)
        assert frame.columns.tolist() == ["alpha"]
        assert len(frame) == 100

    def test_invalid_probability(self, runner):
        result = runner.invoke(
            cli, ["prior-sample", "--p0", "1.5", "--tau2", "0.01", "--nu0", "0.001", "--mu-alpha", "0.2"]
        )

        assert result.exit_code == 2


class TestDiagnose:
    """diagnose 命令测试。"""

    def test_single_mode_with_truth(self, runner, simulated, tmp_path):
        out = tmp_path / "diag.csv"

        result = runner.invoke(
            cli,
            ["diagnose", "--input", str(simulated["data"]), "--tau2", "0.1", "--sigma2-eta", "1.0",
             "--mu-alpha", "0.2", "--truth", str(simulated["truth"]), "--output", str(out)],
        )

        assert result.exit_code == 0, result.output
        row = pd.read_csv(out).iloc[0]
        assert 0.0 < row["c_star"] < 1.0
        assert bool(row["assumption_ok"]) is True
        assert row["bound_total"] >= 0.0
        assert row["abs_error"] >= 0.0

    def test_mixture_mode_reports_double_star(self, runner, simulated, tmp_path):
        out = tmp_path / "diag.csv"

        result = runner.invoke(
            cli,
            ["diagnose", "--input", str(simulated["data"]), "--tau2", "0.1", "--sigma2-eta", "1.0",
             "--mode", "mixture", "--xi", "1,0,1,0,1", "--output", str(out)],
        )

        assert result.exit_code == 0, result.output
        row = pd.read_csv(out).iloc[0]
        assert row["c_double_star"] <= row["c_star"] + 1e-12
        assert "c**" in result.output

    def test_mixture_requires_xi(self, runner, simulated):
        result = runner.invoke(
            cli,
            ["diagnose", "--input", str(simulated["data"]), "--tau2", "0.1", "--sigma2-eta", "1.0",
             "--mode", "mixture"],
        )

        assert result.exit_code == 2

    def test_xi_length_checked(self, runner, simulated):
        result = runner.invoke(
            cli,
            ["diagnose", "--input", str(simulated["data"]), "--tau2", "0.1", "--sigma2-eta", "1.0",
             "--mode", "mixture", "--xi", "1,0"],
        )

        assert result.exit_code == 2


def test_version(runner):
    result = runner.invoke(cli, ["--version"])

    assert result.exit_code == 0
    assert "0.1.0" in result.output


def test_unknown_config_key_is_data_error(runner, simulated, write_csv):
    config = write_csv("bad.yaml", "bogus: 1\n")

    result = runner.invoke(
        cli, ["estimate", "--input", str(simulated["data"]), "--estimator", "tsls", "--config", str(config)]
    )

    assert result.exit_code == 3
    assert "unknown config key" in result.output
