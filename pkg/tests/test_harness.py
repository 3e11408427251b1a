"""Tests for the experiment harness: configs, summaries, grid runners,
emission determinism, verification suites, and the CLI."""

import json
import math

import pytest

import dwtree as dw
from dwtree.cli import main
from dwtree.errors import ConfigError
from dwtree.experiments import (
    CSV_HEADER,
    BetaFit,
    ExperimentConfig,
    ExperimentResult,
    GridSpec,
    StatSummary,
    emit,
    estimate_beta,
    run_experiment,
)
from dwtree.verify import SUITES, CheckResult, VerifyReport, verify


def _nu_config(**over):
    base = dict(
        kind="NuGrid",
        grid=GridSpec(family="exponential", param="c", values=(2.0, 4.0)),
        n=300,
        samples=8,
        seed=17,
    )
    base.update(over)
    return ExperimentConfig(**base)


class TestStatSummary:
    def test_moments_and_stderr_invariant(self):
        s = StatSummary.from_values([1.0, 2.0, 3.0, 4.0])
        assert s.count == 4
        assert s.mean == 2.5
        assert s.variance == pytest.approx(5.0 / 3.0, rel=1e-15)
        assert s.stderr == math.sqrt(s.variance / s.count)
        assert (s.minimum, s.maximum) == (1.0, 4.0)
        assert s.values is None

    def test_recomputable_from_kept_values(self):
        s = StatSummary.from_values([0.3, 1.7, 2.2, 9.1, 4.4], keep=True)
        again = StatSummary.from_values(s.values)
        assert (again.mean, again.variance, again.stderr) == (
            s.mean,
            s.variance,
            s.stderr,
        )

    def test_single_value(self):
        s = StatSummary.from_values([7.5])
        assert (s.variance, s.stderr) == (0.0, 0.0)
        assert s.mean == 7.5

    def test_empty_rejected(self):
        with pytest.raises(ValueError, match="at least one"):
            StatSummary.from_values([])


class TestEstimateBeta:
    def test_exact_half_power(self):
        fit = estimate_beta([(n, n**0.5) for n in (10, 100, 1000, 10_000)])
        assert fit.slope == pytest.approx(0.5, rel=1e-12)
        assert fit.residual == pytest.approx(0.0, abs=1e-12)

    def test_exact_linear(self):
        fit = estimate_beta([(n, 3.0 * n) for n in (50, 500, 5000)])
        assert fit.slope == pytest.approx(1.0, rel=1e-12)
        assert fit.intercept == pytest.approx(math.log(3.0), rel=1e-12)

    def test_validation(self):
        with pytest.raises(ValueError, match="at least 3"):
            estimate_beta([(10, 5.0), (100, 9.0)])
        with pytest.raises(ValueError, match="positive"):
            estimate_beta([(10, 5.0), (100, 9.0), (1000, -1.0)])
        with pytest.raises(ValueError, match="equal"):
            estimate_beta([(10, 5.0), (10, 6.0), (10, 7.0)])

    def test_is_dataclass_payload(self):
        fit = estimate_beta([(n, n**0.25) for n in (10, 100, 1000)])
        assert isinstance(fit, BetaFit)
        assert 0.2 < fit.slope < 0.3


class TestExperimentConfig:
    def test_json_round_trip(self):
        cfg = _nu_config(threads=2, out="results/nu")
        again = ExperimentConfig.from_json(cfg.to_json())
        assert again == cfg

    def test_single_spec_round_trip(self):
        cfg = ExperimentConfig(
            kind="SuperExpStabilize",
            weights=dw.factorial_power(2.0),
            n_grid=(1_000, 10_000),
            samples=100,
            seed=1,
        )
        assert ExperimentConfig.from_json(cfg.to_json()) == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(ConfigError, match="unknown keys"):
            ExperimentConfig.from_dict({"kind": "DepthLaw", "wat": 1})
        with pytest.raises(ConfigError, match="unknown keys"):
            ExperimentConfig.from_dict(
                {"kind": "DepthLaw", "weights": {"family": "constant", "prms": {}}}
            )

    def test_kind_and_field_validation(self):
        with pytest.raises(ConfigError, match="unknown experiment kind"):
            ExperimentConfig(kind="DepthLore", weights=dw.constant(1.0), n=100)
        with pytest.raises(ConfigError, match="needs a weights spec"):
            ExperimentConfig(kind="DepthLaw", n=100)
        with pytest.raises(ConfigError, match="needs a grid"):
            ExperimentConfig(kind="NuGrid", n=100)
        with pytest.raises(ConfigError, match="takes a grid"):
            _nu_config(weights=dw.constant(1.0))
        with pytest.raises(ConfigError, match="n must be >= 2"):
            ExperimentConfig(kind="DepthLaw", weights=dw.constant(1.0), n=1)
        with pytest.raises(ConfigError, match="samples"):
            _nu_config(samples=0)
        with pytest.raises(ConfigError, match="statistic"):
            _nu_config(statistic="beta_hat")
        with pytest.raises(ConfigError, match="at least two checkpoints"):
            ExperimentConfig(
                kind="SuperExpStabilize", weights=dw.factorial_power(2.0), n_grid=(500,)
            )
        with pytest.raises(ConfigError, match="ascending"):
            ExperimentConfig(
                kind="DepthLaw", weights=dw.constant(1.0), n_grid=(500, 200)
            )
        with pytest.raises(ConfigError, match="suite"):
            ExperimentConfig(kind="VerifySuite")

    def test_grid_expansion(self):
        grid = GridSpec(family="exponential", param="c", start=1.1, stop=15.0, step=0.1)
        vals = grid.value_list()
        assert len(vals) == 140
        assert vals[0] == pytest.approx(1.1)
        assert vals[-1] == pytest.approx(15.0)
        small = GridSpec(
            family="sub_exp_quotient", param="c", start=0.1, stop=2.5, step=0.1
        )
        assert len(small.value_list()) == 25

    def test_grid_validation(self):
        with pytest.raises(ConfigError, match="values or start/stop/step"):
            GridSpec(family="exponential", param="c", start=1.0, stop=2.0)
        with pytest.raises(ConfigError, match="step must be positive"):
            GridSpec(family="exponential", param="c", start=1.0, stop=2.0, step=0.0)
        with pytest.raises(ConfigError, match="non-empty"):
            GridSpec(family="exponential", param="c", values=())


class TestRunExperiment:
    def test_depth_law_band(self):
        cfg = ExperimentConfig(
            kind="DepthLaw", weights=dw.constant(1.0), n=300, samples=30, seed=11
        )
        res = run_experiment(cfg)
        assert len(res.rows) == 1
        row = res.rows[0]
        assert row.statistic == "d_over_ln_n"
        assert row.n == 300
        assert row.summary.count == 30
        # the limit is e; small-n bias keeps the band generous
        assert 1.5 < row.summary.mean < 4.0

    def test_depth_law_checkpoints_share_one_run(self):
        cfg = ExperimentConfig(
            kind="DepthLaw",
            weights=dw.constant(1.0),
            n_grid=(150, 300),
            samples=10,
            seed=11,
            statistic="depth",
        )
        res = run_experiment(cfg)
        assert [row.n for row in res.rows] == [150, 300]
        # depth is monotone in n within a single growing run, so the means
        # must also be ordered sample by sample
        assert res.rows[0].summary.mean <= res.rows[1].summary.mean

    def test_determinism_and_worker_independence(self):
        base = _nu_config()
        csv_a = run_experiment(base).csv_text()
        csv_b = run_experiment(base).csv_text()
        csv_c = run_experiment(_nu_config(threads=3)).csv_text()
        assert csv_a == csv_b == csv_c

    def test_nu_grid_rows(self):
        res = run_experiment(_nu_config())
        assert [row.param for row in res.rows] == ["2.0", "4.0"]
        means = [row.summary.mean for row in res.rows]
        assert all(0.0 < m < 1.0 for m in means)
        assert means[0] < means[1]  # deeper trees as the weight ratio grows

    def test_beta_grid_rows(self):
        cfg = ExperimentConfig(
            kind="BetaGrid",
            grid=GridSpec(family="sub_exp_quotient", param="c", values=(0.5, 2.0)),
            n=500,
            samples=8,
            seed=23,
        )
        res = run_experiment(cfg)
        assert [row.statistic for row in res.rows] == ["beta_hat", "beta_hat"]
        for row in res.rows:
            assert 0.0 < row.summary.mean < 1.0

    def test_superexp_ratio_row(self):
        cfg = ExperimentConfig(
            kind="SuperExpRatio",
            weights=dw.factorial_power(1.0),
            n=600,
            samples=12,
            seed=5,
        )
        res = run_experiment(cfg)
        (row,) = res.rows
        assert row.statistic == "gap_over_In"
        # (n - d) / I_n approaches 1 only slowly; at n=600 the mean still
        # sits near 1.7.  The tight band belongs to the large-n checks --
        # here we only care that the statistic is wired up and finite.
        assert 0.5 < row.summary.mean < 3.0

    def test_superexp_needs_bounded_psi(self):
        cfg = ExperimentConfig(
            kind="SuperExpRatio", weights=dw.constant(1.0), n=600, samples=5
        )
        with pytest.raises(ConfigError, match="bounded influence"):
            run_experiment(cfg)

    def test_superexp_stabilize_rows(self):
        cfg = ExperimentConfig(
            kind="SuperExpStabilize",
            weights=dw.factorial_power(2.0),
            n_grid=(200, 600),
            samples=15,
            seed=5,
        )
        res = run_experiment(cfg)
        stats = [row.statistic for row in res.rows]
        assert stats == ["n_minus_d", "n_minus_d", "stabilized_frac"]
        frozen = res.rows[-1]
        assert frozen.n == 600
        assert frozen.summary.mean >= 0.8  # a=2 freezes well before n=200

    def test_verify_suite_kind(self):
        cfg = ExperimentConfig(kind="VerifySuite", suite="regression", seed=0)
        res = run_experiment(cfg)
        assert res.ok
        assert res.verify_report is not None
        assert res.rows and all(r.summary.mean == 1.0 for r in res.rows)
        assert {r.statistic for r in res.rows} == {"check_passed"}


class TestEmit:
    def test_files_and_byte_identical_csv(self, tmp_path):
        cfg = _nu_config()
        paths_a = emit(run_experiment(cfg), str(tmp_path / "a" / "run"))
        paths_b = emit(run_experiment(cfg), str(tmp_path / "b" / "run"))
        csv_a = (tmp_path / "a" / "run.csv").read_bytes()
        csv_b = (tmp_path / "b" / "run.csv").read_bytes()
        assert csv_a == csv_b
        assert paths_a[0].endswith("run.csv")
        assert paths_a[1].endswith("run.manifest.json")
        man_a = json.loads((tmp_path / "a" / "run.manifest.json").read_text())
        man_b = json.loads((tmp_path / "b" / "run.manifest.json").read_text())
        # wall time is the documented volatile key; everything else matches
        assert man_a.pop("wall_time_s") != ""
        assert man_b.pop("wall_time_s") != ""
        assert man_a == man_b

    def test_manifest_echoes_config(self, tmp_path):
        cfg = _nu_config(out=str(tmp_path / "run"))
        res = run_experiment(cfg)
        emit(res, cfg.out)
        man = json.loads((tmp_path / "run.manifest.json").read_text())
        assert ExperimentConfig.from_dict(man["config"]) == cfg
        assert set(man["versions"]) == {"python", "numpy", "numba", "dwtree"}
        assert man["rows"] == len(res.rows)

    def test_empty_result_is_header_only(self, tmp_path):
        cfg = _nu_config()
        empty = ExperimentResult(config=cfg, rows=[], wall_time_s=0.0)
        emit(empty, str(tmp_path / "empty"))
        assert (tmp_path / "empty.csv").read_text() == CSV_HEADER + "\n"
        man = json.loads((tmp_path / "empty.manifest.json").read_text())
        assert man["rows"] == 0

    def test_csv_header_and_row_shape(self):
        res = run_experiment(_nu_config())
        lines = res.csv_text().splitlines()
        assert lines[0] == "param,n,statistic,mean,stderr,samples,seed"
        first = lines[1].split(",")
        assert first[0] == "2.0"
        assert first[1] == "300"
        assert first[2] == "d_over_n"
        assert int(first[5]) == 8
        assert int(first[6]) == 17
        # shortest round-trip float text survives a parse untouched
        assert repr(float(first[3])) == first[3]


class TestVerifySuites:
    @pytest.mark.parametrize("suite", sorted(SUITES))
    def test_suite_passes(self, suite):
        report = verify(suite, seed=0)
        assert report.suite == suite
        assert report.checks
        assert report.passed, report.to_text()

    def test_report_text(self):
        report = verify("regression", seed=0)
        text = report.to_text()
        assert text.startswith("suite regression")
        assert "PASS" in text and "FAIL" not in text

    def test_failure_is_verdict_not_exception(self):
        report = VerifyReport(
            suite="demo",
            seed=0,
            checks=[CheckResult("bad", observed=2.0, bound=1.0, passed=False)],
        )
        assert not report.passed
        assert "FAIL" in report.to_text()

    def test_unknown_suite(self):
        with pytest.raises(ConfigError, match="unknown verify suite"):
            verify("nope")


class TestCli:
    def test_simulate_json(self, capsys):
        code = main(
            [
                "simulate",
                "--family",
                "constant",
                "--param",
                "value=1.0",
                "-n",
                "50",
                "--seed",
                "1",
                "--track-tau",
            ]
        )
        assert code == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["n"] == 50
        assert payload["spec"]["family"] == "constant"
        assert payload["tau"] > 0.0
        assert sum(payload["profile"]) == 50

    def test_simulate_bad_family_exits_2(self, capsys):
        code = main(["simulate", "--family", "nope", "-n", "10"])
        assert code == 2
        assert "unknown weight family" in capsys.readouterr().err

    def test_experiment_then_analyze_beta(self, tmp_path, capsys):
        cfg = {
            "kind": "DepthLaw",
            "weights": {"family": "constant", "params": {"value": 1.0}},
            "n_grid": [100, 200, 400],
            "samples": 6,
            "seed": 9,
            "statistic": "depth",
            "out": str(tmp_path / "depth"),
        }
        cfg_path = tmp_path / "config.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["experiment", str(cfg_path)]) == 0
        capsys.readouterr()
        assert (tmp_path / "depth.csv").exists()
        assert (tmp_path / "depth.manifest.json").exists()
        assert main(["analyze", "beta", str(tmp_path / "depth.csv")]) == 0
        fit = json.loads(capsys.readouterr().out)
        assert set(fit) == {"slope", "intercept", "residual"}
        assert 0.0 < fit["slope"] < 1.0  # log depth grows sublinearly in log n

    def test_analyze_nu(self, tmp_path, capsys):
        cfg = {
            "kind": "NuGrid",
            "grid": {"family": "exponential", "param": "c", "values": [2.0, 4.0, 8.0]},
            "n": 300,
            "samples": 6,
            "seed": 3,
            "out": str(tmp_path / "nu"),
        }
        cfg_path = tmp_path / "nu.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["experiment", str(cfg_path)]) == 0
        capsys.readouterr()
        assert main(["analyze", "nu", str(tmp_path / "nu.csv")]) == 0
        out = capsys.readouterr().out
        assert "non-decreasing after 3-point smoothing: True" in out

    def test_experiment_seed_override(self, tmp_path, capsys):
        cfg = {
            "kind": "NuGrid",
            "grid": {"family": "exponential", "param": "c", "values": [2.0]},
            "n": 200,
            "samples": 5,
            "seed": 1,
            "out": str(tmp_path / "run"),
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(cfg))
        assert main(["experiment", str(cfg_path), "--seed", "2"]) == 0
        capsys.readouterr()
        man = json.loads((tmp_path / "run.manifest.json").read_text())
        assert man["config"]["seed"] == 2
        row = (tmp_path / "run.csv").read_text().splitlines()[1]
        assert row.endswith(",2")

    def test_verify_cli_pass(self, capsys):
        assert main(["verify", "regression"]) == 0
        assert "PASS" in capsys.readouterr().out

    def test_verify_cli_failure_exits_1(self, capsys, monkeypatch):
        monkeypatch.setitem(
            SUITES,
            "zz-fail",
            lambda seed: [CheckResult("doomed", observed=1.0, bound=0.0, passed=False)],
        )
        assert main(["verify", "zz-fail"]) == 1
        assert "FAIL" in capsys.readouterr().out

    def test_experiment_missing_config_exits_2(self, capsys):
        assert main(["experiment", "/nonexistent/cfg.json"]) == 2
        assert "error:" in capsys.readouterr().err

    def test_experiment_invalid_json_exits_2(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert main(["experiment", str(bad)]) == 2
        assert "not valid JSON" in capsys.readouterr().err

    def test_analyze_beta_needs_usable_rows(self, tmp_path, capsys):
        csv_path = tmp_path / "odd.csv"
        csv_path.write_text("param,n,statistic,mean,stderr,samples,seed\n1.0,10,d_over_n,0.5,0.1,3,0\n")
        assert main(["analyze", "beta", str(csv_path)]) == 2
        assert "no usable rows" in capsys.readouterr().err
