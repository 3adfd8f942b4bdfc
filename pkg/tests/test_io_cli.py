import csv
import hashlib
import json

import numpy as np
import pytest

from bsnmani import io
from bsnmani.cli import EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, main
from bsnmani.model import Dataset
from bsnmani.numerics import ConfigurationError, DimensionError, NumericalError, n_from_p
from bsnmani.sampler import SamplerConfig, run_joint
from bsnmani.simulate import SimConfig, generate
from bsnmani.twostage import run_twostage

SIM_ARGS = ["--n-nodes", "6", "--rank", "2", "--n-subjects", "24", "--snr-y", "2", "--seed", "4"]
FIT_ARGS = ["--q", "2", "--iters", "80", "--burn-in", "40"]


def digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def digests(directory):
    return {p.relative_to(directory).as_posix(): digest(p) for p in sorted(directory.rglob("*")) if p.is_file()}


@pytest.fixture
def sim_dir(tmp_path):
    out = tmp_path / "data"
    assert main(["simulate", "--out", str(out)] + SIM_ARGS) == EXIT_OK
    return out


class TestDatasetFiles:
    def test_roundtrip_exact(self, tmp_path):
        data, _ = generate(SimConfig(n_nodes=7, rank=2, n_subjects=5, seed=1))
        io.write_networks(data, tmp_path / "n.csv")
        io.write_clinical(data, tmp_path / "c.csv")
        io.write_meta(data, tmp_path / "meta.json")
        back = io.read_dataset(tmp_path / "n.csv", tmp_path / "c.csv", tmp_path / "meta.json")
        np.testing.assert_array_equal(back.Y, data.Y)
        np.testing.assert_array_equal(back.C, data.C)
        np.testing.assert_array_equal(back.Z, data.Z)

    def test_header_order(self, tmp_path):
        data, _ = generate(SimConfig(n_nodes=4, rank=1, n_subjects=3, seed=1))
        io.write_networks(data, tmp_path / "n.csv")
        with open(tmp_path / "n.csv") as f:
            header = f.readline().strip().split(",")
        assert header == ["subject_id", "e_2_1", "e_3_1", "e_4_1", "e_3_2", "e_4_2", "e_4_3"]

    def test_wrong_column_order(self, tmp_path):
        (tmp_path / "n.csv").write_text("subject_id,e_3_1,e_2_1,e_3_2\na,1,2,3\n")
        with pytest.raises(ConfigurationError):
            io.read_networks(tmp_path / "n.csv")

    def test_blank_outcomes(self, tmp_path):
        data, _ = generate(SimConfig(n_nodes=4, rank=1, n_subjects=3, seed=1))
        test = Dataset(data.Y, None, data.Z, ["x", "y", "z"])
        io.write_networks(test, tmp_path / "n.csv")
        io.write_clinical(test, tmp_path / "c.csv")
        back = io.read_dataset(tmp_path / "n.csv", tmp_path / "c.csv")
        assert back.C is None and back.r == data.r

    def test_clinical_matched_by_id(self, tmp_path):
        (tmp_path / "n.csv").write_text("subject_id,e_2_1\na,1\nb,2\n")
        (tmp_path / "c.csv").write_text("subject_id,outcome,z_1\nb,20,0.5\na,10,0.25\n")
        d = io.read_dataset(tmp_path / "n.csv", tmp_path / "c.csv")
        np.testing.assert_array_equal(d.C, [10, 20])
        np.testing.assert_array_equal(d.Z[:, 0], [0.25, 0.5])

    def test_meta_mismatch(self, tmp_path):
        (tmp_path / "n.csv").write_text("subject_id,e_2_1\na,1\n")
        (tmp_path / "meta.json").write_text(json.dumps({"N": 3}))
        with pytest.raises(DimensionError):
            io.read_dataset(tmp_path / "n.csv", meta_path=tmp_path / "meta.json")

    def test_truth_roundtrip(self, tmp_path):
        _, truth = generate(SimConfig(n_nodes=6, rank=2, n_subjects=4, heteroscedastic=True, seed=2))
        io.write_truth(truth, tmp_path)
        back = io.read_truth(tmp_path)
        for f in ("u_true", "lambdas_true", "beta_true", "alpha_true", "edge_variances"):
            np.testing.assert_array_equal(getattr(back, f), getattr(truth, f))
        assert back.sigma_sq_true == truth.sigma_sq_true and back.tau_sq_true == truth.tau_sq_true


class TestDrawFiles:
    @pytest.mark.parametrize("sampler", [run_joint, run_twostage])
    def test_roundtrip(self, tmp_path, sampler):
        data, _ = generate(SimConfig(n_nodes=6, rank=2, n_subjects=12, seed=3))
        draws = sampler(data, SamplerConfig(iters=60, burn_in=30, thin=2, q=2))
        io.write_draws(draws, tmp_path)
        io.write_run(draws, SamplerConfig(iters=60, burn_in=30, thin=2, q=2), tmp_path, data)
        back = io.read_draws(tmp_path)
        for f in ("u", "lambdas", "beta", "alpha", "sigma_sq", "tau_sq", "tau_lambda_sq", "tau_beta_sq",
                  "tau_alpha_sq", "iterations", "step_size", "log_joint"):
            np.testing.assert_array_equal(getattr(back, f), getattr(draws, f))
        np.testing.assert_array_equal(back.accepted, draws.accepted)

    def test_u_rows_are_row_major(self, tmp_path):
        data, _ = generate(SimConfig(n_nodes=5, rank=2, n_subjects=8, seed=3))
        draws = run_joint(data, SamplerConfig(iters=12, burn_in=10, q=2))
        io.write_draws(draws, tmp_path)
        with open(tmp_path / "u_draws.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0][:5] == ["iteration", "n", "q", "u_1_1", "u_1_2"]
        assert float(rows[1][4]) == draws.u[0, 0, 1]


class TestConfigFiles:
    def test_sampler_toml(self, tmp_path):
        p = tmp_path / "s.toml"
        p.write_text("iters = 300\nburn_in = 100\nq = 2\n[mala]\nk0 = 25\n[hyper]\nnu0 = 3.0\n")
        cfg = io.sampler_config_from_dict(io.load_toml(p))
        assert (cfg.iters, cfg.burn_in, cfg.q, cfg.mala.k0, cfg.hyper.nu0) == (300, 100, 2, 25, 3.0)

    def test_unknown_key(self):
        with pytest.raises(ConfigurationError, match="iterations"):
            io.sampler_config_from_dict({"iterations": 5})
        with pytest.raises(ConfigurationError):
            io.sampler_config_from_dict({"hyper": {"nu": 1.0}})

    def test_sim_config_inf(self):
        cfg = io.sim_config_from_dict({"snr_c": "inf"})
        assert np.isinf(cfg.snr_c)
        assert io.sim_config_dict(cfg)["snr_c"] == "inf"

    def test_bad_toml(self, tmp_path):
        p = tmp_path / "bad.toml"
        p.write_text("iters = = 3\n")
        with pytest.raises(ConfigurationError):
            io.load_toml(p)


class TestSimulateCommand:
    def test_artifacts(self, sim_dir):
        assert (sim_dir / "networks.csv").is_file()
        assert (sim_dir / "clinical.csv").is_file()
        assert (sim_dir / "truth" / "u_true.csv").is_file()
        meta = json.loads((sim_dir / "meta.json").read_text())
        assert meta["vecl_order"] == "column-major-strict-lower"
        with open(sim_dir / "networks.csv") as f:
            n_cols = len(f.readline().split(","))
        assert meta["N"] == n_from_p(n_cols - 1) == 6

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "sim.toml"
        cfg.write_text("n_nodes = 6\nrank = 2\nn_subjects = 10\nseed = 2\n")
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "d")]) == EXIT_OK
        assert json.loads((tmp_path / "d" / "meta.json").read_text())["M"] == 10

    def test_deterministic(self, tmp_path, sim_dir):
        again = tmp_path / "again"
        main(["simulate", "--out", str(again)] + SIM_ARGS)
        assert digests(again) == digests(sim_dir)

    def test_missing_out(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["simulate"])
        assert exc.value.code == EXIT_USAGE
        assert "usage" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path):
        assert main(["simulate", "--out", str(tmp_path / "x"), "--rank", "0"]) == EXIT_VALIDATION


class TestFitPredictCommands:
    def fit(self, sim_dir, out, sampler="joint"):
        return main(["fit", "--networks", str(sim_dir / "networks.csv"), "--clinical", str(sim_dir / "clinical.csv"),
                     "--sampler", sampler, "--out", str(out)] + FIT_ARGS)

    def test_fit_joint(self, tmp_path, sim_dir):
        out = tmp_path / "post"
        assert self.fit(sim_dir, out) == EXIT_OK
        run = json.loads((out / "run.json").read_text())
        assert run["n_draws"] == 40 and run["config"]["q"] == 2
        assert "runtime_seconds" in json.loads((out / "timing.json").read_text())

    def test_fit_twostage(self, tmp_path, sim_dir):
        out = tmp_path / "post"
        assert self.fit(sim_dir, out, "twostage") == EXIT_OK
        run = json.loads((out / "run.json").read_text())
        assert run["info"]["sampler"] == "twostage"
        assert 0 <= run["info"]["imh_acceptance_rate"] <= 1

    def test_fit_deterministic(self, tmp_path, sim_dir):
        self.fit(sim_dir, tmp_path / "a")
        self.fit(sim_dir, tmp_path / "b")
        da, db = digests(tmp_path / "a"), digests(tmp_path / "b")
        da.pop("timing.json"), db.pop("timing.json")
        assert da == db

    def test_numerical_failure_cleans_up(self, tmp_path, sim_dir, monkeypatch):
        def boom(*args, **kwargs):
            raise NumericalError("non-finite log density at iteration 7")

        monkeypatch.setattr("bsnmani.cli.fit", boom)
        out = tmp_path / "post"
        assert self.fit(sim_dir, out) == EXIT_NUMERICAL
        assert not out.exists()

    def test_missing_files(self, tmp_path):
        assert main(["fit", "--networks", str(tmp_path / "none.csv"), "--clinical", str(tmp_path / "none.csv"),
                     "--out", str(tmp_path / "o")]) == EXIT_VALIDATION

    def test_predict(self, tmp_path, sim_dir):
        post = tmp_path / "post"
        self.fit(sim_dir, post)
        args = ["predict", "--posterior", str(post), "--networks", str(sim_dir / "networks.csv"),
                "--clinical", str(sim_dir / "clinical.csv")]
        assert main(args + ["--out", str(tmp_path / "p1.csv"), "--samples", str(tmp_path / "s.csv")]) == EXIT_OK
        assert main(args + ["--out", str(tmp_path / "p2.csv")]) == EXIT_OK
        assert digest(tmp_path / "p1.csv") == digest(tmp_path / "p2.csv")
        with open(tmp_path / "p1.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["subject_id", "prediction", "predictive_sd"] and len(rows) == 25
        with open(tmp_path / "s.csv") as f:
            assert len(list(csv.reader(f))) == 41

    def test_predict_node_mismatch(self, tmp_path, sim_dir, capsys):
        post = tmp_path / "post"
        self.fit(sim_dir, post)
        other = tmp_path / "other"
        main(["simulate", "--out", str(other), "--n-nodes", "9", "--rank", "3", "--n-subjects", "5"])
        code = main(["predict", "--posterior", str(post), "--networks", str(other / "networks.csv"),
                     "--clinical", str(other / "clinical.csv"), "--out", str(tmp_path / "p.csv")])
        assert code == EXIT_VALIDATION
        err = capsys.readouterr().err
        assert "N=9" in err and "N=6" in err


class TestCvCommand:
    def cv(self, sim_dir, out, *extra):
        return main(["cv", "--networks", str(sim_dir / "networks.csv"), "--clinical", str(sim_dir / "clinical.csv"),
                     "--out", str(out), "--q", "2", "--iters", "30", "--burn-in", "15"] + list(extra))

    def test_rows_and_summary(self, tmp_path, sim_dir):
        out = tmp_path / "cv.csv"
        assert self.cv(sim_dir, out, "--folds", "5", "--repeats", "10") == EXIT_OK
        with open(out) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 51
        assert rows[-1]["repeat"] == "summary"
        again = tmp_path / "cv2.csv"
        self.cv(sim_dir, again, "--folds", "5", "--repeats", "10")
        assert digest(out) == digest(again)

    def test_one_fold_rejected(self, tmp_path, sim_dir):
        assert self.cv(sim_dir, tmp_path / "cv.csv", "--folds", "1") == EXIT_VALIDATION
