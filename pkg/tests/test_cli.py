"""CLI subcommands: file round-trips, exit codes, library equivalence."""

import json

import numpy as np
import pytest

from pstarmax import (GridSpec, ModelSpec, ParameterVector, SimulationConfig,
                      build_grid_4nn, fit, simulate_path)
from pstarmax.cli import main
from pstarmax.estimate import FitResult
from pstarmax.panel_io import load_panel_csv, save_covariates_csv, save_panel_csv
from pstarmax.weights import load_csv

TABLE1_LINEAR = ParameterVector(delta=[5.0], alpha=([0.2, 0.1],), beta=([0.2, 0.1],))
SPEC11 = ModelSpec("linear", a=(1,), b=(1,))


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "model.json").write_text(SPEC11.to_json())
    (tmp_path / "theta.json").write_text(json.dumps(TABLE1_LINEAR.to_dict()))
    assert main(["weights", "build", "--kind", "grid4nn", "--n", "3",
                 "--out", str(tmp_path / "w.csv")]) == 0
    return tmp_path


class TestWeightsCommands:
    def test_build_then_validate(self, workdir):
        assert main(["weights", "validate", str(workdir / "w.csv")]) == 0

    def test_validate_rejects_bad_file(self, tmp_path):
        bad = tmp_path / "w.csv"
        bad.write_text("order,row,col,weight\n0,0,0,1.0\n0,1,1,1.0\n1,0,1,0.5\n1,1,0,1.0\n")
        assert main(["weights", "validate", str(bad)]) == 1

    def test_build_directional(self, tmp_path):
        out = tmp_path / "wd.csv"
        assert main(["weights", "build", "--kind", "grid-directional", "--n", "4",
                     "--out", str(out)]) == 0
        assert len(load_csv(out)) == 3

    def test_build_adjacency(self, tmp_path):
        doc = {"p": 3, "edges": [[0, 1], [1, 2]]}
        adj = tmp_path / "adj.json"
        adj.write_text(json.dumps(doc))
        out = tmp_path / "wa.csv"
        assert main(["weights", "build", "--kind", "adjacency", "--adjacency",
                     str(adj), "--out", str(out)]) == 0
        W = load_csv(out)
        np.testing.assert_allclose(W.dense(1)[1], [0.5, 0.0, 0.5])


class TestSimulateCommand:
    def test_simulate_matches_library(self, workdir):
        out = workdir / "y.csv"
        lam_out = workdir / "lam.csv"
        code = main(["simulate", "--model", str(workdir / "model.json"),
                     "--weights", str(workdir / "w.csv"),
                     "--theta", str(workdir / "theta.json"),
                     "--T", "40", "--seed", "123",
                     "--copula", "clayton", "--copula-param", "2.0",
                     "--out", str(out), "--intensity-out", str(lam_out)])
        assert code == 0
        from pstarmax.copulas import CopulaSpec
        W = build_grid_4nn(GridSpec(3))
        sim = simulate_path(TABLE1_LINEAR, SPEC11, W,
                            cfg=SimulationConfig(T=40, seed=123,
                                                 copula=CopulaSpec("clayton", 2.0)))
        np.testing.assert_array_equal(load_panel_csv(out), sim.counts)
        np.testing.assert_allclose(load_panel_csv(lam_out), sim.intensity)

    def test_seed_required(self, workdir, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--model", str(workdir / "model.json"),
                  "--weights", str(workdir / "w.csv"),
                  "--theta", str(workdir / "theta.json"),
                  "--T", "10", "--out", str(workdir / "y.csv")])
        assert exc.value.code == 2


class TestFitCommand:
    def test_fit_roundtrip_and_equivalence(self, workdir):
        W = build_grid_4nn(GridSpec(3))
        sim = simulate_path(TABLE1_LINEAR, SPEC11, W,
                            cfg=SimulationConfig(T=150, seed=9))
        data = workdir / "y.csv"
        save_panel_csv(data, sim.counts)
        out = workdir / "fit.json"
        code = main(["fit", "--model", str(workdir / "model.json"),
                     "--weights", str(workdir / "w.csv"),
                     "--data", str(data), "--out", str(out)])
        assert code == 0
        cli_fit = FitResult.from_json(out.read_text())
        lib_fit = fit(SPEC11, W, sim.counts)
        np.testing.assert_array_equal(cli_fit.theta_flat, lib_fit.theta_flat)
        assert cli_fit.loglik == lib_fit.loglik
        assert cli_fit.data_fingerprint == lib_fit.data_fingerprint

    def test_insufficient_observations_exit_2(self, workdir):
        data = workdir / "tiny.csv"
        save_panel_csv(data, np.ones((9, 2)))
        code = main(["fit", "--model", str(workdir / "model.json"),
                     "--weights", str(workdir / "w.csv"),
                     "--data", str(data), "--out", str(workdir / "f.json")])
        assert code == 2

    def test_malformed_data_json_error(self, workdir, capsys):
        data = workdir / "bad.csv"
        data.write_text("t,location,value\n0,1,1\n0,2,nonsense\n")
        code = main(["fit", "--model", str(workdir / "model.json"),
                     "--weights", str(workdir / "w.csv"),
                     "--data", str(data), "--out", str(workdir / "f.json")])
        assert code == 2
        err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
        assert "error" in err


class TestTestAndForecastCommands:
    @pytest.fixture()
    def fitted(self, workdir):
        W = build_grid_4nn(GridSpec(3))
        sim = simulate_path(TABLE1_LINEAR, SPEC11, W,
                            cfg=SimulationConfig(T=200, seed=10))
        data = workdir / "y.csv"
        save_panel_csv(data, sim.counts)
        out = workdir / "fit.json"
        assert main(["fit", "--model", str(workdir / "model.json"),
                     "--weights", str(workdir / "w.csv"),
                     "--data", str(data), "--out", str(out)]) == 0
        return workdir, data, out

    def test_single_param_test(self, fitted, capsys):
        workdir, _, fitjson = fitted
        assert main(["test", "--fit", str(fitjson), "--param", "3"]) == 0
        doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert set(doc) == {"statistic", "df", "p_value", "boundary_adjusted"}
        assert doc["boundary_adjusted"] is True

    def test_contrast_test(self, fitted, capsys, tmp_path):
        workdir, _, fitjson = fitted
        C = tmp_path / "C.csv"
        np.savetxt(C, np.array([[0.0, 0, 0, 1.0, -1.0]]), delimiter=",")
        assert main(["test", "--fit", str(fitjson), "--contrast", str(C)]) == 0
        doc = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert doc["df"] == 1

    def test_forecast_metrics(self, fitted, capsys):
        workdir, data, fitjson = fitted
        pred = workdir / "pred.csv"
        metrics_out = workdir / "metrics.json"
        code = main(["forecast", "--fit", str(fitjson), "--data", str(data),
                     "--test-split", "150", "--out", str(pred),
                     "--metrics-out", str(metrics_out)])
        assert code == 0
        metrics = json.loads(metrics_out.read_text())
        assert set(metrics) >= {"mspe", "mae", "explained_deviance"}
        assert metrics["t_start"] == 150
        lines = pred.read_text().strip().splitlines()
        assert lines[0] == "t,location,y,lambda_hat"
        assert len(lines) == 1 + 9 * 51  # times 150..200


class TestSimulateFitRoundTrip:
    def test_estimates_within_3se_in_most_runs(self, tmp_path):
        # simulate -> fit through the CLI on the Table-1 linear setting at
        # T = 500; coordinate-wise |theta_hat - truth| <= 3 SE in >= 90%
        # of 20 seeded runs
        (tmp_path / "model.json").write_text(SPEC11.to_json())
        (tmp_path / "theta.json").write_text(json.dumps(TABLE1_LINEAR.to_dict()))
        assert main(["weights", "build", "--kind", "grid4nn", "--n", "9",
                     "--out", str(tmp_path / "w.csv")]) == 0
        truth = np.array([5.0, 0.2, 0.1, 0.2, 0.1])
        hits = 0
        for seed in range(20):
            y_path = tmp_path / f"y{seed}.csv"
            fit_path = tmp_path / f"fit{seed}.json"
            assert main(["simulate", "--model", str(tmp_path / "model.json"),
                         "--weights", str(tmp_path / "w.csv"),
                         "--theta", str(tmp_path / "theta.json"),
                         "--T", "500", "--seed", str(2000 + seed),
                         "--copula", "clayton", "--copula-param", "2.0",
                         "--out", str(y_path)]) == 0
            assert main(["fit", "--model", str(tmp_path / "model.json"),
                         "--weights", str(tmp_path / "w.csv"),
                         "--data", str(y_path), "--out", str(fit_path)]) == 0
            res = FitResult.from_json(fit_path.read_text())
            assert res.converged
            if np.all(np.abs(res.theta_flat - truth) <= 3 * res.std_errors):
                hits += 1
        assert hits >= 18


class TestStudyCommand:
    def test_study_run(self, tmp_path):
        from pstarmax import FitTask, StudyPlan, WeightsRef
        from pstarmax.copulas import CopulaSpec
        task = FitTask(name="fit", spec=SPEC11, weights=WeightsRef("grid4nn", n=3),
                       true_flat=(5.0, 0.2, 0.1, 0.2, 0.1))
        plan = StudyPlan(kind="custom", true_spec=SPEC11,
                         true_theta_flat=(5.0, 0.2, 0.1, 0.2, 0.1),
                         weights=WeightsRef("grid4nn", n=3), T=50, replicates=2,
                         master_seed=3, copula=CopulaSpec("independent"),
                         fits=(task,))
        plan_path = tmp_path / "plan.json"
        plan_path.write_text(plan.to_json())
        outdir = tmp_path / "report"
        assert main(["study", "run", str(plan_path), "--out", str(outdir)]) == 0
        report = json.loads((outdir / "report.json").read_text())
        assert report["aggregates"]["models"]["fit"]["n"] == 2
        assert (outdir / "replicates.csv").exists()

    def test_missing_seed_rejected(self, tmp_path):
        plan_path = tmp_path / "plan.json"
        doc = {"kind": "custom"}
        plan_path.write_text(json.dumps(doc))
        assert main(["study", "run", str(plan_path),
                     "--out", str(tmp_path / "r")]) == 2


class TestCovariateRoundTrip:
    def test_covariates_csv(self, tmp_path):
        X = np.random.default_rng(1).uniform(size=(2, 3, 5))
        path = tmp_path / "x.csv"
        save_covariates_csv(path, X)
        from pstarmax.panel_io import load_covariates_csv
        np.testing.assert_allclose(load_covariates_csv(path), X)
