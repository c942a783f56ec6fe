"""Configuration parsing and the command-line subcommands."""

import copy
import csv
import json
from importlib import resources

import pytest

from meddesign.cli import config_from_dict, main, parse_config
from meddesign.designs import read_design_csv, write_design_csv
from meddesign.errors import ConfigError

CONFIGS = resources.files("meddesign") / "data" / "configs"
DESIGNS = resources.files("meddesign") / "data" / "designs"


def case_raw():
    return json.loads((CONFIGS / "case_study.json").read_text())


@pytest.fixture
def case_config(tmp_path):
    path = tmp_path / "case.json"
    path.write_text(json.dumps(case_raw()))
    return path


def write_config(tmp_path, raw):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return path


class TestParseConfig:
    def test_case_study(self):
        cfg = parse_config(CONFIGS / "case_study.json")
        assert cfg.model.dim == 8
        assert cfg.levels == (10.0, 50.0)
        assert cfg.q == 2.0

    @pytest.mark.parametrize("name", ["case_study.json", "scenario2.json", "robustness2_bayes.json"])
    def test_shipped_configs_load(self, name):
        parse_config(CONFIGS / name)

    def test_bayes_config_has_prior(self):
        cfg = parse_config(CONFIGS / "robustness2_bayes.json")
        assert cfg.prior is not None
        assert cfg.objective == "bayes"

    def test_negative_ed50(self):
        raw = case_raw()
        raw["model"]["c"]["params"][1] = -5.83
        with pytest.raises(ConfigError) as info:
            config_from_dict(raw)
        assert info.value.field == "model.c.params"

    def test_q_below_one(self):
        raw = case_raw()
        raw["criterion"]["q"] = 0.5
        with pytest.raises(ConfigError) as info:
            config_from_dict(raw)
        assert info.value.field == "criterion.q"

    @pytest.mark.parametrize(
        "mutate, field",
        [
            (lambda r: r.update(extra=1), "extra"),
            (lambda r: r["model"].update(delta=1), "model.delta"),
            (lambda r: r["optimizer"].update(swarm=5), "optimizer.swarm"),
            (lambda r: r["criterion"].update(levels=[0, 50]), "criterion.levels"),
            (lambda r: r["criterion"].update(measure="spline"), "criterion.measure"),
            (lambda r: r["criterion"].update(contour_grid=1), "criterion.contour_grid"),
            (lambda r: r["region"].update(c_max="x"), "region.c_max"),
            (lambda r: r["model"]["c"].update(kind="hill"), "model.c.kind"),
            (lambda r: r["simulation"].update(sigma=-1), "simulation.sigma"),
            (lambda r: r.pop("region"), "region"),
        ],
    )
    def test_field_paths(self, mutate, field):
        raw = case_raw()
        mutate(raw)
        with pytest.raises(ConfigError) as info:
            config_from_dict(raw)
        assert info.value.field == field

    def test_defaults_recorded(self):
        raw = case_raw()
        del raw["criterion"]["q"]
        cfg = config_from_dict(raw)
        assert cfg.q == 2.0
        assert any(line.startswith("criterion.q") for line in cfg.defaults)

    def test_prior_needs_one_kind(self):
        raw = case_raw()
        raw["prior"] = {"gammas": [0.0], "thetas": [[0] * 8]}
        with pytest.raises(ConfigError):
            config_from_dict(raw)

    def test_digest_is_order_independent(self):
        raw = case_raw()
        shuffled = dict(reversed(list(copy.deepcopy(raw).items())))
        assert config_from_dict(raw).digest == config_from_dict(shuffled).digest

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "nope.json")


class TestExitCodes:
    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2
        assert "usage" in capsys.readouterr().err

    def test_config_error(self, tmp_path):
        raw = case_raw()
        raw["criterion"]["q"] = 0.5
        assert main(["contour", str(write_config(tmp_path, raw)), "--out", str(tmp_path)]) == 2

    def test_range_error(self, tmp_path, case_config):
        design = tmp_path / "two.csv"
        design.write_text("c,d,weight\n5,2,0.5\n20,7,0.5\n")
        assert main(["verify", str(case_config), str(design), "--out", str(tmp_path)]) == 2

    def test_infeasible(self, tmp_path, case_config):
        args = ["optimize", str(case_config), "--out", str(tmp_path), "--n-points", "1",
                "--swarm", "10", "--iters", "5", "--restarts", "1"]
        assert main(args) == 3


class TestSubcommands:
    def test_contour(self, tmp_path, case_config):
        assert main(["contour", str(case_config), "--out", str(tmp_path)]) == 0
        with open(tmp_path / "contour.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert {float(r["level"]) for r in rows} == {10.0, 50.0}
        manifest = json.loads((tmp_path / "run.json").read_text())
        assert manifest["subcommand"] == "contour"
        assert manifest["atoms"] == len(rows)
        assert len(manifest["config_sha256"]) == 64

    def test_efficiency_ray(self, tmp_path, case_config, capsys):
        with resources.as_file(DESIGNS / "case_study" / "ray4_2.csv") as cand, resources.as_file(
            DESIGNS / "case_study" / "med_10_50.csv"
        ) as ref:
            assert main(["efficiency", str(case_config), str(cand), str(ref), "--out", str(tmp_path)]) == 0
        printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert printed["ratio"] == pytest.approx(0.07, abs=0.03)
        assert json.loads((tmp_path / "efficiency.json").read_text())["ratio"] == printed["ratio"]

    def test_verify_optimized_design(self, tmp_path, case_config, optimized_10_50, capsys):
        path = tmp_path / "opt.csv"
        write_design_csv(optimized_10_50.design, path)
        assert main(["verify", str(case_config), str(path), "--out", str(tmp_path)]) == 0
        body = json.loads((tmp_path / "verify.json").read_text())
        assert body["elb"] >= 0.99
        assert body["elb"] == pytest.approx(optimized_10_50.report.elb, abs=1e-6)
        for key in ("criterion", "max_psi", "argmax", "support_residuals"):
            assert key in body

    def test_optimize_d(self, tmp_path, case_config):
        args = ["optimize", str(case_config), "--out", str(tmp_path), "--objective", "d",
                "--swarm", "20", "--iters", "40", "--restarts", "1", "--seed", "4"]
        assert main(args) == 0
        design = read_design_csv(tmp_path / "design.csv")
        assert design.weights.sum() == pytest.approx(1.0)
        result = json.loads((tmp_path / "result.json").read_text())
        assert result["objective"] == "d"
        manifest = json.loads((tmp_path / "run.json").read_text())
        assert manifest["seed"] == 4
        assert manifest["pso"]["swarm_size"] == 20

    def test_simulate(self, tmp_path):
        cfg = tmp_path / "s2.json"
        cfg.write_text((CONFIGS / "scenario2.json").read_text())
        with resources.as_file(DESIGNS / "scenario2" / "factorial3x3.csv") as f3:
            args = ["simulate", str(cfg), f"f3={f3}", "--reps", "2", "--n", "27", "--seed", "1",
                    "--out", str(tmp_path)]
            assert main(args) == 0
        with open(tmp_path / "simulation.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2
        assert {r["design"] for r in rows} == {"f3"}
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert set(summary["f3@27"]) >= {"median", "q25", "q75", "failures"}

    def test_threads_from_environment(self, tmp_path, monkeypatch):
        from meddesign import cli

        class Args:
            threads = None

        monkeypatch.setenv("MEDDESIGN_THREADS", "3")
        assert cli._threads(Args()) == 3
        Args.threads = 0
        assert cli._threads(Args()) >= 1
