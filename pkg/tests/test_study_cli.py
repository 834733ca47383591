import csv
import json

import numpy as np
import pytest

from sievecox import cli, study
from sievecox.data import SimScenario, generate, load_csv, write_csv
from sievecox.study import ScenarioSpec, StudyConfig, emit, run_scenario, run_study


def micro_config(reps=3, n=60):
    return StudyConfig(scenarios=(
        ScenarioSpec(beta0=0.0, censor_covariates=("x1", "x2", "v"), n=n,
                     reps=reps, seed=500),
        ScenarioSpec(beta0=1.5, censor_covariates=("x2", "v"), n=n,
                     reps=reps, seed=900),
    ))


class TestScenarioSpec:
    def test_labels_follow_star_convention(self):
        ok = ScenarioSpec(0.0, ("x1", "x2", "v"), 50, 2, 1)
        assert ok.label == "T|V, C|x1,x2,v"
        assert ok.t_model_correct and ok.c_model_correct
        bad = ScenarioSpec(1.5, ("x2", "v"), 50, 2, 1)
        assert bad.label == "T|V*, C|x2,v*"
        assert not bad.t_model_correct and not bad.c_model_correct

    def test_validation(self):
        with pytest.raises(ValueError):
            ScenarioSpec(0.0, ("x1",), 50, 0, 1)
        with pytest.raises(ValueError):
            ScenarioSpec(0.0, ("x7",), 50, 2, 1)


class TestRunStudy:
    @pytest.fixture(scope="class")
    def report(self):
        return run_study(micro_config(), n_jobs=2)

    def test_aggregates(self, report):
        assert len(report.scenarios) == 2
        for sc in report.scenarios:
            assert sc.completed == 3 and not sc.failures
            assert len(sc.alphas) == 3
            assert 0.0 <= sc.coverage95 <= 1.0
            assert sc.median_se_hat > 0
            assert sum(c for *_, c in sc.histogram) == sc.completed

    def test_deterministic_across_parallelism(self, report):
        again = run_study(micro_config(), n_jobs=1)
        assert again.to_dict() == report.to_dict()

    def test_single_rep_has_no_sd(self):
        cfg = StudyConfig(scenarios=(
            ScenarioSpec(0.0, ("x1", "x2", "v"), 60, 1, 123),))
        rep = run_study(cfg, n_jobs=1)
        sc = rep.scenarios[0]
        assert sc.alpha_sd is None
        assert sc.alpha_mean == sc.alphas[0]
        assert sc.median_se_hat == sc.ses[0]

    def test_failure_threshold_aborts(self, monkeypatch):
        calls = {"k": 0}
        real = study._one_rep

        def flaky(spec, fit_config, rep):
            if rep == 0:
                return ("fail", rep, "RuntimeError: boom")
            return real(spec, fit_config, rep)

        monkeypatch.setattr(study, "_one_rep", flaky)
        spec = ScenarioSpec(0.0, ("x1", "x2", "v"), 60, 3, 500)
        with pytest.raises(RuntimeError, match="boom"):
            run_scenario(spec, micro_config(), n_jobs=1)


class TestEmit:
    def test_files_and_shapes(self, tmp_path):
        report = run_study(micro_config(reps=2), n_jobs=2)
        written = emit(report, tmp_path)
        names = {p.split("/")[-1] for p in map(str, written)}
        assert {"summary.csv", "hist_scenario0.csv", "hist_scenario1.csv",
                "report.json"} <= names
        with open(tmp_path / "summary.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["beta0", "working_models", "naive", "alpha_mean",
                           "alpha_sd", "med_se", "coverage"]
        assert all(len(r) == 7 for r in rows)
        with open(tmp_path / "report.json") as fh:
            raw = json.load(fh)
        assert len(raw["scenarios"]) == 2
        with open(tmp_path / "hist_scenario0.csv") as fh:
            hist = list(csv.reader(fh))
        assert hist[0] == ["bin_left", "bin_right", "count"]
        assert sum(int(r[2]) for r in hist[1:]) == report.scenarios[0].completed


class TestStudyConfigIO:
    def test_from_dict_defaults(self):
        cfg = StudyConfig.from_dict({
            "scenarios": [{"beta0": 1.5, "n": 100, "reps": 2, "seed": 7}]})
        spec = cfg.scenarios[0]
        assert spec.censor_covariates == ("x1", "x2", "v")
        assert cfg.m == 3 and cfg.kn == 5 and cfg.penalty_weight == 1e-3
        assert cfg.alpha_true == 1.0


class TestCli:
    def test_simulate_roundtrip(self, tmp_path):
        out = tmp_path / "sim.csv"
        assert cli.main(["simulate", "--beta0", "1.5", "--n", "80",
                         "--seed", "4", "--out", str(out)]) == 0
        ds = load_csv(out, tau=1.0)
        assert ds.n == 80 and ds.d == 2
        direct = generate(SimScenario(beta0=1.5, n=80, seed=4))
        np.testing.assert_allclose(ds.y, direct.y, atol=1e-15)

    def test_fit_deterministic_report(self, tmp_path):
        data = tmp_path / "data.csv"
        write_csv(generate(SimScenario(beta0=0.0, n=70, seed=9)), data)
        out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
        for out in (out1, out2):
            rc = cli.main(["fit", "--data", str(data), "--tau", "1.0",
                           "--out", str(out)])
            assert rc == 0
        assert out1.read_bytes() == out2.read_bytes()
        raw = json.loads(out1.read_text())
        assert abs(raw["alpha_hat"]) <= 10.0
        assert raw["se"] > 0
        assert raw["converged"] is True

    def test_fit_missing_file_errors(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            cli.main(["fit", "--data", str(tmp_path / "nope.csv"),
                      "--out", str(tmp_path / "r.json")])

    def test_study_command(self, tmp_path):
        cfg = {
            "scenarios": [{"beta0": 0.0, "censor_covariates": ["x1", "x2", "v"],
                           "n": 60, "reps": 2, "seed": 11}],
            "sieve": {"m": 3, "kn": 5},
        }
        cfg_path = tmp_path / "study.json"
        cfg_path.write_text(json.dumps(cfg))
        out_dir = tmp_path / "out"
        assert cli.main(["study", "--config", str(cfg_path),
                         "--out", str(out_dir)]) == 0
        assert (out_dir / "summary.csv").exists()
        assert (out_dir / "report.json").exists()

    def test_fit_no_se(self, tmp_path):
        data = tmp_path / "data.csv"
        write_csv(generate(SimScenario(beta0=0.0, n=70, seed=9)), data)
        out = tmp_path / "r.json"
        assert cli.main(["fit", "--data", str(data), "--tau", "1.0",
                         "--no-se", "--out", str(out)]) == 0
        raw = json.loads(out.read_text())
        assert "se" not in raw
