"""Experiment orchestration: run the requested checkers and experiments and
emit flat files plus a manifest."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, constant_initial
from .coupling_harnack import (bound_ratios, build_plan, couple_batch, harnack_from_run,
                               pair_distance, run_plan_batch, synchronous_couple)
from .ergodics import (estimate_concentration, fit_contraction_rate, model_rate,
                       sample_invariant)
from .fernique import compute_coeffs, empirical_sup_tail
from .fspde_sim import fmt17, simulate_degenerate, simulate_nondegenerate, write_csv
from .spectral_model import (DegenerateModel, NondegenerateModel, check_degenerate,
                             check_nondegenerate)

log = logging.getLogger(__name__)


@dataclass
class RunManifest:
    config_hash: str
    seed: int
    version: str
    files: list = field(default_factory=list)
    experiments: list = field(default_factory=list)
    conditions_passed: bool | None = None

    def to_dict(self):
        return {"config_hash": self.config_hash, "seed": self.seed, "version": self.version,
                "files": sorted(self.files), "experiments": list(self.experiments),
                "conditions_passed": self.conditions_passed}


def _write_lines(path, lines):
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


class _Emitter:
    def __init__(self, out_dir):
        self.out_dir = out_dir
        self.files = []

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.out_dir, name)

    def lines(self, name, lines):
        _write_lines(self.path(name), lines)


def _spectral_of(model):
    return model.spectral if isinstance(model, NondegenerateModel) else model.A2_spectral


def _exp_conditions(cfg, em, ctx):
    model = cfg.model
    if isinstance(model, NondegenerateModel):
        rep = check_nondegenerate(model)
    else:
        rep = check_degenerate(model, cfg.checks["b4_times"])
    em.lines("conditions.txt", rep.lines())
    em.lines("conditions.kv", rep.key_values())
    ctx["conditions_passed"] = rep.passed


def _exp_simulate(cfg, em, ctx):
    model, seed = cfg.model, cfg.seed
    init = ctx["initial"]
    T = float(cfg.run["T"])
    if isinstance(model, NondegenerateModel):
        rec = simulate_nondegenerate(model, init, T, seed, keep_modes=True)
    else:
        rec = simulate_degenerate(model, init, T, seed, keep_modes=True)
    rec.to_csv(em.path("path.csv"))


def _couple_eta(cfg, spec):
    model = cfg.model
    try:
        return constant_initial(model, spec)
    except ConfigError as exc:
        raise ConfigError(f"checks.couple.eta: {exc}") from exc


def _exp_couple(cfg, em, ctx):
    p = cfg.exp("couple")
    xi = ctx["initial"] if p.get("xi") is None else constant_initial(cfg.model, p["xi"])
    eta = _couple_eta(cfg, p["eta"])
    T = float(p.get("T") or cfg.run["T"])
    rec = synchronous_couple(cfg.model, xi, eta, T, cfg.seed)
    rec.to_csv(em.path("coupling.csv"))
    em.lines("coupling.kv", [f"gap0_x={fmt17(rec.gap0_x)}", f"gap0_y={fmt17(rec.gap0_y)}",
                             f"bound_ratio={fmt17(rec.bound_ratio)}",
                             f"bound_ok={fmt17(rec.bound_ok) if rec.bound_ok is not None else 'na'}"])


def _exp_contract(cfg, em, ctx):
    p = cfg.exp("contract")
    model = cfg.model
    couple = cfg.exp("couple") if cfg.checks.get("couple") else {}
    eta_spec = p.get("eta") if p.get("eta") is not None else couple.get("eta")
    if eta_spec is None:
        raise ConfigError("checks.contract.eta: required (or checks.couple.eta)")
    eta = _couple_eta(cfg, eta_spec)
    T = float(p.get("T") or cfg.run["T"])
    M = int(cfg.run["M"])
    batch = couple_batch(model, ctx["initial"], eta, T, cfg.seed, range(M))
    t_min = float(p.get("t_min") or model.r0)
    fit = fit_contraction_rate(batch, t_min, model=model)
    lines = fit.key_values()
    if isinstance(model, NondegenerateModel):
        ratios = bound_ratios(model, batch)
        if ratios is not None:
            lines.append(f"max_bound_ratio={fmt17(float(ratios.max()))}")
            lines.append(f"violations={int(np.sum(ratios.max(axis=1) > 1 + 10 * model.grid.dt))}")
    em.lines("contraction.kv", lines)
    write_csv(em.path("contraction_mean.csv"), ["time", "mean_gap"],
              np.column_stack([batch.times, batch.weighted.mean(axis=0)]))


def _exp_harnack(cfg, em, ctx):
    model = cfg.model
    if not isinstance(model, DegenerateModel):
        raise ConfigError("checks.harnack: needs a degenerate model")
    p = cfg.exp("harnack")
    pair = ctx["initial"]
    pair_bar = constant_initial(model, p["pair_bar"])
    M = int(p.get("M") or cfg.run["M"])
    plan = build_plan(model, pair, pair_bar, float(p["t0"]))
    run = run_plan_batch(plan, model, cfg.seed, range(M))
    rep = harnack_from_run(run, pair_distance(pair, pair_bar))
    em.lines("harnack.kv", rep.key_values())
    rep.to_csv(em.path("harnack_f.csv"))
    write_csv(em.path("girsanov.csv"), ["path", "log_R", "stoch_integral", "phi_sq_integral"],
              [(int(k), a, b, c) for k, a, b, c in zip(run.paths, run.log_R, run.stoch,
                                                       run.phi_sq)])


def _exp_fernique(cfg, em, ctx):
    p = cfg.exp("fernique")
    model = cfg.model
    spec = _spectral_of(model)
    coeffs = compute_coeffs(spec, model.delta_reg, model.r0, float(p["t0"]))
    em.lines("fernique_coeffs.kv", coeffs.key_values())
    M = int(p.get("M") or cfg.run["M"])
    lam = float(p["lam_factor"]) * coeffs.lambda_tilde
    rep = empirical_sup_tail(spec, float(p["t0"]), model.r0, M, p["r_grid"], cfg.seed,
                             lam=lam, m=int(p["m"]), coeffs=coeffs,
                             workers=int(ctx["workers"]))
    rep.to_csv(em.path("tail.csv"))


def _exp_concentrate(cfg, em, ctx):
    p = cfg.exp("concentrate")
    M = int(p.get("M") or cfg.run["M"])
    tab = estimate_concentration(cfg.model, p["eps_grid"], p["t_grid"], M, cfg.seed,
                                 initial=ctx["initial"])
    tab.to_csv(em.path("concentration.csv"))


def _exp_invariant(cfg, em, ctx):
    p = cfg.exp("invariant")
    M = int(p.get("M") or cfg.run["M"])
    burn = cfg.run.get("burn_in")
    summ = sample_invariant(cfg.model, None if burn is None else float(burn), M, cfg.seed,
                            eps=float(p["eps"]), initial=ctx["initial"])
    em.lines("invariant.kv", summ.key_values() + [f"rate={fmt17(model_rate(cfg.model))}"])


RUNNERS = {"conditions": _exp_conditions, "simulate": _exp_simulate, "couple": _exp_couple,
           "harnack": _exp_harnack, "fernique": _exp_fernique, "contract": _exp_contract,
           "concentrate": _exp_concentrate, "invariant": _exp_invariant}


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None,
                   experiments=None, workers: int | None = None) -> RunManifest:
    """Run ``experiments`` (default: the config's list) and write the manifest.

    ``workers`` overrides ``run.workers`` without touching the config hash;
    outputs do not depend on it.
    """
    out_dir = out_dir or cfg.output["dir"]
    os.makedirs(out_dir, exist_ok=True)
    experiments = list(experiments or cfg.checks["experiments"])
    em = _Emitter(out_dir)
    ctx = {"initial": constant_initial(cfg.model, cfg.run.get("initial")),
           "workers": workers or cfg.run["workers"]}
    for name in experiments:
        if name not in RUNNERS:
            raise ConfigError(f"unknown experiment {name!r}")
        log.info("running %s", name)
        try:
            RUNNERS[name](cfg, em, ctx)
        except (ConfigError, ArithmeticError):
            raise
        except ValueError as exc:
            raise ValueError(f"experiment {name}: {exc}") from exc
    man = RunManifest(cfg.config_hash(), cfg.seed, __version__, list(em.files), experiments,
                      ctx.get("conditions_passed"))
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(man.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    return man


__all__ = ["RunManifest", "run_experiment", "RUNNERS"]
