"""Experiment configuration: a strict YAML tree and the objects built from it.

Unknown keys are rejected with their dotted path (``run.sedd``); missing
required keys are reported the same way.  The parsed tree is kept verbatim so
that serializing and re-parsing is the identity.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np
import yaml

from .drifts import drift_from_dict
from .fspde_sim import Segment
from .spectral_model import DegenerateModel, NondegenerateModel, SpectralData, TailLaw

EXPERIMENTS = ("conditions", "simulate", "couple", "harnack", "fernique", "contract",
               "concentrate", "invariant")


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


REQUIRED = object()

SPECTRAL_KEYS = {"eigenvalues": None, "noise_coeffs": None, "tail_law": None,
                 "power_law": None}
POWER_LAW_KEYS = {"n": REQUIRED, "a": 1.0, "p": 2.0, "b": 1.0, "q": 0.0, "tail": True}
TAIL_LAW_KEYS = {"a": REQUIRED, "p": REQUIRED, "b": 1.0, "q": 0.0}

DRIFT_KEYS = {
    "discrete": {"kind": REQUIRED, "delays": REQUIRED, "matrices": REQUIRED, "offset": None},
    "distributed": {"kind": REQUIRED, "atoms": REQUIRED, "weights": REQUIRED, "gain": REQUIRED},
    "sup": {"kind": REQUIRED, "g": REQUIRED, "direction": REQUIRED},
    "pair": {"kind": REQUIRED, "x_part": None, "y_part": None, "K1": REQUIRED, "K2": REQUIRED},
    "joint_sup": {"kind": REQUIRED, "K1": REQUIRED, "K2": REQUIRED, "direction": REQUIRED},
}

MODEL_COMMON = {"kind": REQUIRED, "r0": REQUIRED, "m": 64, "delta_reg": REQUIRED,
                "spectral": REQUIRED}
MODEL_KEYS = {
    "nondegenerate": dict(MODEL_COMMON, L=REQUIRED, drift=REQUIRED),
    "degenerate": dict(MODEL_COMMON, A1=REQUIRED, B=REQUIRED, A0=REQUIRED, drift2=REQUIRED,
                       K1=REQUIRED, K2=REQUIRED, delta_drift=REQUIRED, sigma_inv=None),
}

RUN_KEYS = {"seed": REQUIRED, "T": 1.0, "M": 100, "burn_in": None, "workers": 1,
            "initial": None}

CHECKS_KEYS = {
    "experiments": ["conditions"],
    "b4_times": [0.5, 1.0],
    "couple": None, "harnack": None, "fernique": None, "contract": None,
    "concentrate": None, "invariant": None,
}
EXP_KEYS = {
    "couple": {"xi": None, "eta": REQUIRED, "T": None},
    "harnack": {"t0": REQUIRED, "pair_bar": REQUIRED, "M": None},
    "fernique": {"t0": REQUIRED, "r_grid": REQUIRED, "M": None, "lam_factor": 0.9,
                 "m": 64},
    "contract": {"t_min": None, "eta": None, "T": None},
    "concentrate": {"eps_grid": REQUIRED, "t_grid": REQUIRED, "M": None},
    "invariant": {"eps": 0.1, "M": None},
}
OUTPUT_KEYS = {"dir": "out", "formats": ["csv", "kv"]}
TOP_KEYS = {"model": REQUIRED, "run": REQUIRED, "checks": None, "output": None}


def _check_keys(tree, allowed: dict, path: str) -> None:
    if not isinstance(tree, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping")
    for k in tree:
        if k not in allowed:
            raise ConfigError(f"unknown key {_join(path, k)!r}")
    for k, default in allowed.items():
        if default is REQUIRED and k not in tree:
            raise ConfigError(f"missing required key {_join(path, k)!r}")


def _join(path, key):
    return f"{path}.{key}" if path else str(key)


def _check_drift(tree, path):
    if not isinstance(tree, dict) or "kind" not in tree:
        raise ConfigError(f"missing required key {_join(path, 'kind')!r}")
    kind = tree["kind"]
    if kind not in DRIFT_KEYS:
        raise ConfigError(f"{_join(path, 'kind')}: unknown drift kind {kind!r}")
    _check_keys(tree, DRIFT_KEYS[kind], path)
    for sub in ("x_part", "y_part"):
        if tree.get(sub) is not None:
            _check_drift(tree[sub], _join(path, sub))


def _check_spectral(tree, path):
    _check_keys(tree, SPECTRAL_KEYS, path)
    if "power_law" in tree:
        if "eigenvalues" in tree or "noise_coeffs" in tree:
            raise ConfigError(f"{path}: give either power_law or explicit eigenvalues")
        _check_keys(tree["power_law"], POWER_LAW_KEYS, _join(path, "power_law"))
    else:
        for k in ("eigenvalues", "noise_coeffs"):
            if k not in tree:
                raise ConfigError(f"missing required key {_join(path, k)!r}")
    if tree.get("tail_law") is not None:
        _check_keys(tree["tail_law"], TAIL_LAW_KEYS, _join(path, "tail_law"))


def validate_tree(tree: dict) -> None:
    _check_keys(tree, TOP_KEYS, "")
    model = tree["model"]
    if not isinstance(model, dict) or "kind" not in model:
        raise ConfigError("missing required key 'model.kind'")
    kind = model["kind"]
    if kind not in MODEL_KEYS:
        raise ConfigError(f"model.kind: expected one of {sorted(MODEL_KEYS)}, got {kind!r}")
    _check_keys(model, MODEL_KEYS[kind], "model")
    _check_spectral(model["spectral"], "model.spectral")
    _check_drift(model["drift"] if kind == "nondegenerate" else model["drift2"],
                 "model.drift" if kind == "nondegenerate" else "model.drift2")
    _check_keys(tree["run"], RUN_KEYS, "run")
    seed = tree["run"]["seed"]
    if not isinstance(seed, int) or isinstance(seed, bool) or not 0 <= seed < 2 ** 64:
        raise ConfigError("run.seed: expected an integer in [0, 2^64)")
    workers = tree["run"].get("workers", 1)
    if not isinstance(workers, int) or workers < 1:
        raise ConfigError("run.workers: expected a positive integer")
    checks = tree.get("checks") or {}
    _check_keys(checks, CHECKS_KEYS, "checks")
    for e in checks.get("experiments", []):
        if e not in EXPERIMENTS:
            raise ConfigError(f"checks.experiments: unknown experiment {e!r}")
    for name, keys in EXP_KEYS.items():
        if checks.get(name) is not None:
            _check_keys(checks[name], keys, f"checks.{name}")
    _check_keys(tree.get("output") or {}, OUTPUT_KEYS, "output")


def _spectral(tree) -> SpectralData:
    if "power_law" in tree:
        p = dict(POWER_LAW_KEYS, **tree["power_law"])
        return SpectralData.power_law(int(p["n"]), p["a"], p["p"], p["b"], p["q"], p["tail"])
    law = tree.get("tail_law")
    tail = None if law is None else TailLaw(**dict(TAIL_LAW_KEYS, **law))
    return SpectralData(tree["eigenvalues"], tree["noise_coeffs"], tail)


def build_model(tree: dict):
    t = tree
    try:
        spec = _spectral(t["spectral"])
        m = int(t.get("m", 64))
        if t["kind"] == "nondegenerate":
            return NondegenerateModel(spec, float(t["delta_reg"]), drift_from_dict(t["drift"]),
                                      float(t["L"]), float(t["r0"]), m)
        n1 = len(t["A1"])
        B = np.atleast_2d(np.asarray(t["B"], dtype=float))
        if B.shape[0] != n1:
            raise ConfigError(f"model.B: has {B.shape[0]} rows but A1 is {n1}x{n1}")
        if B.shape[1] != spec.n_modes:
            raise ConfigError(f"model.B: has {B.shape[1]} columns but the spectrum has "
                              f"{spec.n_modes} modes")
        return DegenerateModel(A1=t["A1"], A2_spectral=spec, B=B, A0=t["A0"],
                               drift2=drift_from_dict(t["drift2"]), K1=float(t["K1"]),
                               K2=float(t["K2"]), delta_drift=float(t["delta_drift"]),
                               r0=float(t["r0"]), delta_reg=float(t["delta_reg"]),
                               sigma_inv=t.get("sigma_inv"), m=m)
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"model: {exc}") from exc


def constant_initial(model, spec):
    """Initial data from a config entry.

    Nondegenerate: a vector (constant segment) or None (zero).  Degenerate: a
    mapping with ``x`` and ``y`` vectors.
    """
    grid = model.grid
    if isinstance(model, NondegenerateModel):
        if spec is None:
            return np.zeros((grid.m + 1, model.dim))
        vec = np.asarray(spec, dtype=float)
        if vec.shape != (model.dim,):
            raise ConfigError(f"initial data must have {model.dim} entries")
        return Segment.constant(grid, vec).values
    spec = spec or {}
    if not isinstance(spec, dict) or set(spec) - {"x", "y"}:
        raise ConfigError("degenerate initial data must be a mapping with keys x, y")
    x = np.asarray(spec.get("x", np.zeros(model.n1)), dtype=float)
    y = np.asarray(spec.get("y", np.zeros(model.n2)), dtype=float)
    if x.shape != (model.n1,) or y.shape != (model.n2,):
        raise ConfigError(f"initial x needs {model.n1} entries and y needs {model.n2}")
    return Segment.constant(grid, x).values, Segment.constant(grid, y).values


@dataclass
class ExperimentConfig:
    tree: dict
    model: object

    @property
    def run(self) -> dict:
        return dict({k: v for k, v in RUN_KEYS.items() if v is not REQUIRED},
                    **self.tree["run"])

    @property
    def checks(self) -> dict:
        c = self.tree.get("checks") or {}
        base = {k: v for k, v in CHECKS_KEYS.items()}
        base.update(c)
        return base

    def exp(self, name: str) -> dict:
        d = {k: v for k, v in EXP_KEYS[name].items() if v is not REQUIRED}
        d.update(self.checks.get(name) or {})
        return d

    @property
    def output(self) -> dict:
        return dict(OUTPUT_KEYS, **(self.tree.get("output") or {}))

    @property
    def seed(self) -> int:
        return int(self.tree["run"]["seed"])

    def with_seed(self, seed: int) -> "ExperimentConfig":
        tree = json.loads(json.dumps(self.tree))
        tree["run"]["seed"] = int(seed)
        return parse_tree(tree)

    def config_hash(self) -> str:
        return config_hash(self.tree)


def config_hash(tree: dict) -> str:
    canon = json.dumps(tree, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def parse_tree(tree: dict) -> ExperimentConfig:
    if tree is None:
        raise ConfigError("empty configuration")
    validate_tree(tree)
    return ExperimentConfig(tree, build_model(tree["model"]))


def parse_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            tree = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return parse_tree(tree)


def dump_config(cfg: ExperimentConfig | dict) -> str:
    tree = cfg.tree if isinstance(cfg, ExperimentConfig) else cfg
    return yaml.safe_dump(tree, sort_keys=True, default_flow_style=None)


__all__ = ["ConfigError", "ExperimentConfig", "EXPERIMENTS", "parse_config", "parse_tree",
           "dump_config", "config_hash", "build_model", "constant_initial", "validate_tree"]
