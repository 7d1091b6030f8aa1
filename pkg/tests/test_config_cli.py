from __future__ import annotations

import copy
import json
import os

import pytest
import yaml

from fspde_lab.cli import EXIT_CHECK, EXIT_INPUT, EXIT_NUMERIC, EXIT_OK, main
from fspde_lab.config import (ConfigError, build_model, dump_config, parse_config,
                              parse_tree)
from fspde_lab.runner import run_experiment

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, os.pardir, "configs")
HEAT = os.path.join(CONFIGS, "heat_delay.yaml")
DEGEN = os.path.join(CONFIGS, "degenerate_scalar.yaml")

BASE = {
    "model": {"kind": "nondegenerate", "r0": 0.5, "m": 8, "delta_reg": 0.2, "L": 0.3,
              "spectral": {"power_law": {"n": 3}},
              "drift": {"kind": "distributed", "atoms": [-0.5], "weights": [1.0],
                        "gain": 0.3}},
    "run": {"seed": 1, "T": 1.0, "M": 20},
    "checks": {"experiments": ["conditions"]},
}


def tree(**patch):
    t = copy.deepcopy(BASE)
    for dotted, val in patch.items():
        node = t
        keys = dotted.split("__")
        for k in keys[:-1]:
            node = node[k]
        if val is None:
            node.pop(keys[-1])
        else:
            node[keys[-1]] = val
    return t


class TestParse:
    def test_base(self):
        cfg = parse_tree(tree())
        assert cfg.seed == 1 and cfg.model.dim == 3
        assert cfg.run["workers"] == 1 and cfg.output["dir"] == "out"

    def test_missing_seed(self):
        with pytest.raises(ConfigError, match="run.seed"):
            parse_tree(tree(run__seed=None))

    def test_unknown_key(self):
        t = tree()
        t["run"]["sedd"] = 3
        with pytest.raises(ConfigError, match="run.sedd"):
            parse_tree(t)

    def test_unknown_nested(self):
        t = tree()
        t["model"]["drift"]["bogus"] = 1
        with pytest.raises(ConfigError, match="model.drift.bogus"):
            parse_tree(t)

    def test_bad_seed(self):
        with pytest.raises(ConfigError):
            parse_tree(tree(run__seed=-1))
        with pytest.raises(ConfigError):
            parse_tree(tree(run__seed=True))

    def test_unknown_experiment(self):
        with pytest.raises(ConfigError, match="experiment"):
            parse_tree(tree(checks__experiments=["nope"]))

    def test_model_errors_wrapped(self):
        with pytest.raises(ConfigError):
            parse_tree(tree(model__L=0.1))

    def test_dimension_error(self):
        t = yaml.safe_load(open(DEGEN))
        t["model"]["B"] = [[1.0], [1.0]]
        with pytest.raises(ConfigError, match="model.B"):
            build_model(t["model"])

    def test_round_trip(self):
        for path in (HEAT, DEGEN):
            cfg = parse_config(path)
            again = parse_tree(yaml.safe_load(dump_config(cfg)))
            assert again.tree == cfg.tree
            assert again.config_hash() == cfg.config_hash()

    def test_with_seed(self):
        cfg = parse_tree(tree())
        other = cfg.with_seed(9)
        assert other.seed == 9 and cfg.seed == 1
        assert other.config_hash() != cfg.config_hash()

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            parse_config(tmp_path / "none.yaml")
        bad = tmp_path / "bad.yaml"
        bad.write_text("model: [unclosed")
        with pytest.raises(ConfigError):
            parse_config(bad)


class TestRunner:
    def test_checks_only(self, tmp_path):
        man = run_experiment(parse_tree(tree()), str(tmp_path))
        assert sorted(man.files) == ["conditions.kv", "conditions.txt"]
        assert man.conditions_passed is True
        data = json.loads((tmp_path / "manifest.json").read_text())
        assert data["seed"] == 1 and data["experiments"] == ["conditions"]

    def test_harnack_needs_degenerate(self, tmp_path):
        t = tree(checks__experiments=["harnack"])
        t["checks"]["harnack"] = {"t0": 1.0, "pair_bar": [0.0, 0.0, 0.0]}
        with pytest.raises(ConfigError):
            run_experiment(parse_tree(t), str(tmp_path))

    def test_workers_do_not_change_outputs(self, tmp_path):
        t = tree(checks__experiments=["fernique"])
        t["checks"]["fernique"] = {"t0": 1.0, "r_grid": [1.0, 2.0], "M": 1500, "m": 8}
        cfg = parse_tree(t)
        run_experiment(cfg, str(tmp_path / "a"), workers=1)
        run_experiment(cfg, str(tmp_path / "b"), workers=3)
        for name in ("tail.csv", "fernique_coeffs.kv", "manifest.json"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


class TestCli:
    def _write(self, tmp_path, t):
        p = tmp_path / "cfg.yaml"
        p.write_text(yaml.safe_dump(t))
        return str(p)

    def test_check_ok(self, tmp_path, capsys):
        p = self._write(tmp_path, tree())
        assert main(["check", "--config", p, "--out", str(tmp_path / "o")]) == EXIT_OK
        assert "conditions.txt" in capsys.readouterr().out

    def test_check_failed(self, tmp_path):
        # lambda1 = 1, L = 1, r0 = 1: sup_s (s - L e^{s r0}) < 0
        t = tree(model__L=1.0, model__r0=1.0)
        t["model"]["drift"] = {"kind": "distributed", "atoms": [-1.0], "weights": [1.0],
                               "gain": 1.0}
        p = self._write(tmp_path, t)
        assert main(["check", "--config", p, "--out", str(tmp_path / "o")]) == EXIT_CHECK

    def test_input_error(self, tmp_path, capsys):
        p = self._write(tmp_path, tree(run__seed=None))
        assert main(["check", "--config", p]) == EXIT_INPUT
        assert "run.seed" in capsys.readouterr().err

    def test_bad_flags(self, tmp_path):
        p = self._write(tmp_path, tree())
        assert main(["check", "--config", p, "--workers", "0"]) == EXIT_INPUT
        assert main(["check", "--config", p, "--seed", "-3"]) == EXIT_INPUT

    def test_numeric_failure(self, tmp_path):
        t = yaml.safe_load(open(DEGEN))
        t["model"]["B"] = [[0.0]]
        t["model"]["K1"] = 0.0
        t["model"]["drift2"]["K1"] = 0.0
        t["model"]["drift2"]["x_part"] = None
        t["checks"]["experiments"] = ["harnack"]
        p = self._write(tmp_path, t)
        assert main(["harnack", "--config", p, "--out", str(tmp_path / "o")]) == EXIT_NUMERIC

    def test_seed_override(self, tmp_path):
        p = self._write(tmp_path, tree())
        assert main(["check", "--config", p, "--seed", "42", "--out", str(tmp_path / "o")]) == 0
        assert json.loads((tmp_path / "o" / "manifest.json").read_text())["seed"] == 42

    def test_simulate_degenerate(self, tmp_path):
        out = tmp_path / "o"
        assert main(["simulate", "--config", DEGEN, "--out", str(out)]) == EXIT_OK
        assert (out / "path.csv").read_text().startswith("time,supnorm,supnorm_x,supnorm_y")
