"""Long-run statistics: contraction fits, exponential moments, W-Cauchy gaps,
invariant-measure sampling.

Monte Carlo gates in this module are two-sided 3-standard-error checks with
pinned seeds.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp
from scipy.stats import linregress

from .fspde_sim import (DegenerateEngine, NondegenerateEngine, _initial_values, fmt17, n_steps,
                        write_csv)
from .rng import chunks, path_rng
from .spectral_model import (DegenerateModel, NondegenerateModel, check_degenerate_gap,
                             compute_lambda_prime, compute_rate_lambda)

LOG_FLOOR = 1e-300
LOG_MAX = math.log(np.finfo(float).max)


@dataclass
class ContractionFit:
    fitted_rate: float
    r_squared: float
    theoretical_rate: float
    relative_gap: float
    intercept: float = math.nan
    floored: bool = False
    n_points: int = 0

    def key_values(self) -> list[str]:
        vals = {"fitted_rate": self.fitted_rate, "r_squared": self.r_squared,
                "theoretical_rate": self.theoretical_rate, "relative_gap": self.relative_gap,
                "intercept": self.intercept, "floored": self.floored,
                "n_points": self.n_points}
        return [f"{k}={fmt17(v)}" for k, v in vals.items()]


def model_rate(model) -> float:
    if isinstance(model, NondegenerateModel):
        return compute_rate_lambda(model.spectral.lambda1, model.L, model.r0).rate
    lam_p = compute_lambda_prime(model.delta_drift, model.K1, model.K2, model.B_norm)
    return check_degenerate_gap(lam_p, model.A2_spectral.lambda1, model.r0).rate


def fit_log_linear(t, y, theoretical_rate: float = math.nan) -> ContractionFit:
    """Least-squares slope of log(y) against t; the rate is minus the slope."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    if t.size < 2 or not np.any(y > 0):
        raise ValueError("degenerate fit input")
    floored = bool(np.any(y < LOG_FLOOR))
    logs = np.log(np.maximum(y, LOG_FLOOR))
    if np.ptp(logs) == 0.0:
        rate, r2, icpt = 0.0, 1.0, float(logs[0])
    else:
        res = linregress(t, logs)
        rate, r2, icpt = -float(res.slope), float(res.rvalue ** 2), float(res.intercept)
    rel = (rate - theoretical_rate) / abs(theoretical_rate) if theoretical_rate else math.nan
    return ContractionFit(rate, min(1.0, max(0.0, r2)), theoretical_rate, rel, icpt, floored,
                          t.size)


def fit_contraction_rate(records, t_min: float, theoretical_rate: float | None = None,
                         model=None, t_max: float | None = None,
                         weighted: bool = True) -> ContractionFit:
    """Fit the decay rate of mean gaps over [t_min, t_max].

    ``records`` is a :class:`CouplingBatch` or a list of :class:`CouplingRecord`
    sharing one time grid.  Degenerate records use the weighted gap
    ``alpha gapX + gapY`` unless ``weighted`` is False.
    """
    if isinstance(records, (list, tuple)):
        if not records:
            raise ValueError("degenerate fit input")
        times = records[0].times
        gaps = np.stack([r.weighted if weighted else r.gapX for r in records])
        gap0 = max(max(r.gap0_x, r.gap0_y) for r in records)
    else:
        times = records.times
        gaps = records.weighted if weighted else records.gapX
        gaps = np.atleast_2d(gaps)
        gap0 = max(records.gap0_x, records.gap0_y)
    if gap0 == 0:
        raise ValueError("degenerate fit input")
    if model is not None:
        if t_min < model.r0 - 1e-12:
            raise ValueError("t_min must be at least r0")
        if theoretical_rate is None:
            theoretical_rate = model_rate(model)
    if theoretical_rate is None:
        theoretical_rate = math.nan
    mean = gaps.mean(axis=0)
    sel = times >= t_min - 1e-12
    if t_max is not None:
        sel &= times <= t_max + 1e-12
    return fit_log_linear(times[sel], mean[sel], theoretical_rate)


def _histories(model, initial, T, seed, paths, noiseless=False, chunk=1024):
    """Yield (block, node_norms) for batches of paths run to time T."""
    grid = model.grid
    n = n_steps(T, grid.dt)
    paths = list(paths)
    if isinstance(model, NondegenerateModel):
        init = _initial_values(initial, grid, model.dim)
        eng = NondegenerateEngine(model, noiseless)
        for blk in chunks(len(paths), chunk):
            ids = paths[blk.start:blk.stop]
            noise = np.stack([path_rng(seed, k).standard_normal((n, model.dim)) for k in ids])
            H = eng.run(np.broadcast_to(init, (len(ids),) + init.shape), noise)
            yield blk, H, None
    else:
        x0 = _initial_values(initial[0], grid, model.n1)
        y0 = _initial_values(initial[1], grid, model.n2)
        eng = DegenerateEngine(model, noiseless)
        for blk in chunks(len(paths), chunk):
            ids = paths[blk.start:blk.stop]
            M = len(ids)
            noise = np.stack([path_rng(seed, k).standard_normal((n, model.n2)) for k in ids])
            HX, HY = eng.run(np.broadcast_to(x0, (M,) + x0.shape),
                             np.broadcast_to(y0, (M,) + y0.shape), noise)
            yield blk, HX, HY


def _node_norms(HX, HY):
    if HY is None:
        return np.linalg.norm(HX, axis=-1)
    return np.sqrt(np.sum(HX * HX, axis=-1) + np.sum(HY * HY, axis=-1))


def _zero_initial(model):
    g = model.grid
    if isinstance(model, NondegenerateModel):
        return np.zeros((g.m + 1, model.dim))
    return np.zeros((g.m + 1, model.n1)), np.zeros((g.m + 1, model.n2))


@dataclass
class ConcentrationTable:
    eps_grid: np.ndarray
    t_grid: np.ndarray
    values: np.ndarray
    se: np.ndarray
    overflow: np.ndarray
    M: int
    seed: int

    @property
    def monotone_in_eps(self) -> bool:
        ok = True
        for j in range(self.t_grid.size):
            col = self.values[:, j]
            good = ~self.overflow[:, j]
            ok &= bool(np.all(np.diff(col[good]) >= 0))
        return ok

    def stable(self, ratio: float = 2.0) -> np.ndarray:
        """Per epsilon: max over t of the entry <= ratio times the last-time entry."""
        out = np.zeros(self.eps_grid.size, dtype=bool)
        for i in range(self.eps_grid.size):
            if np.any(self.overflow[i]):
                continue
            out[i] = self.values[i].max() <= ratio * self.values[i, -1]
        return out

    def to_csv(self, path) -> None:
        rows = []
        for i, e in enumerate(self.eps_grid):
            for j, t in enumerate(self.t_grid):
                rows.append((e, t, self.values[i, j], self.se[i, j], bool(self.overflow[i, j])))
        write_csv(path, ["epsilon", "time", "mean_exp", "se", "overflow"], rows)


def gaussian_floor(eps: float, v: float) -> float:
    """E exp(eps G^2) for G ~ N(0, v); requires 2 eps v < 1."""
    if 2.0 * eps * v >= 1.0:
        return math.inf
    return 1.0 / math.sqrt(1.0 - 2.0 * eps * v)


def estimate_concentration(model, eps_grid, t_grid, M: int, seed: int, initial=None,
                           chunk: int = 1024) -> ConcentrationTable:
    """Table of E exp(eps ||X_t||_inf^2) over an epsilon grid and time grid."""
    eps_grid = np.asarray(eps_grid, dtype=float)
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(eps_grid < 0):
        raise ValueError("epsilon must be nonnegative")
    if np.any(np.diff(eps_grid) < 0):
        raise ValueError("epsilon grid must be nondecreasing")
    if model_rate(model) <= 0:
        warnings.warn("rate is not positive; the concentration table may not stabilize",
                      stacklevel=2)
    grid = model.grid
    idx = np.array([n_steps(t, grid.dt) for t in t_grid])
    T = float(t_grid.max()) if t_grid.size else 0.0
    if initial is None:
        initial = _zero_initial(model)
    sup2 = np.empty((M, t_grid.size))
    for blk, HX, HY in _histories(model, initial, T, seed, range(M), chunk=chunk):
        norms = _node_norms(HX, HY)
        for j, k in enumerate(idx):
            sup2[blk.start:blk.stop, j] = norms[:, k:k + grid.m + 1].max(axis=-1) ** 2
    values = np.empty((eps_grid.size, t_grid.size))
    se = np.empty_like(values)
    over = np.zeros_like(values, dtype=bool)
    for i, e in enumerate(eps_grid):
        for j in range(t_grid.size):
            expo = e * sup2[:, j]
            log_mean = float(logsumexp(expo) - math.log(M))
            if expo.max() > LOG_MAX or log_mean > LOG_MAX:
                values[i, j], se[i, j], over[i, j] = math.inf, math.inf, True
                continue
            w = np.exp(expo)
            values[i, j] = w.mean()
            se[i, j] = w.std(ddof=1) / math.sqrt(M) if M > 1 else 0.0
    return ConcentrationTable(eps_grid, t_grid, values, se, over, M, seed)


def eps_threshold(lambda_tilde: float, rate: float) -> float:
    """Heuristic concentration threshold 0.5 lambda_tilde min(1, rate^2)."""
    return 0.5 * lambda_tilde * min(1.0, rate * rate)


@dataclass
class WassersteinEstimate:
    t1: float
    t2: float
    mean_gap: float
    se: float
    ci_low: float
    ci_high: float
    M: int

    def key_values(self) -> list[str]:
        return [f"{k}={fmt17(getattr(self, k))}" for k in
                ("t1", "t2", "mean_gap", "se", "ci_low", "ci_high", "M")]


def w_cauchy_gap(model, xi, t1: float, t2: float, M: int, seed: int,
                 chunk: int = 1024) -> WassersteinEstimate:
    """Mean sup-norm gap between X_{t2}(xi) and a copy started from xi at t2 - t1.

    Both runs share the noise on the overlap [t2 - t1, t2].
    """
    if not t2 >= t1 > 0:
        raise ValueError("need t2 >= t1 > 0")
    grid = model.grid
    m = grid.m
    n2 = n_steps(t2, grid.dt)
    n1 = n_steps(t1, grid.dt)
    lag = n2 - n1
    gaps = np.empty(M)
    deg = isinstance(model, DegenerateModel)
    if deg:
        x0 = _initial_values(xi[0], grid, model.n1)
        y0 = _initial_values(xi[1], grid, model.n2)
        eng = DegenerateEngine(model)
        dim = model.n2
    else:
        init = _initial_values(xi, grid, model.dim)
        eng = NondegenerateEngine(model)
        dim = model.dim
    for blk in chunks(M, chunk):
        B = len(blk)
        noise = np.stack([path_rng(seed, k).standard_normal((n2, dim)) for k in blk])
        if deg:
            ax, ay = eng.run(np.broadcast_to(x0, (B,) + x0.shape),
                             np.broadcast_to(y0, (B,) + y0.shape), noise)
            bx, by = eng.run(np.broadcast_to(x0, (B,) + x0.shape),
                             np.broadcast_to(y0, (B,) + y0.shape), noise[:, lag:])
            dx = ax[:, -m - 1:] - bx[:, -m - 1:]
            dy = ay[:, -m - 1:] - by[:, -m - 1:]
            d = np.sqrt(np.sum(dx * dx, axis=-1) + np.sum(dy * dy, axis=-1))
        else:
            a = eng.run(np.broadcast_to(init, (B,) + init.shape), noise)
            b = eng.run(np.broadcast_to(init, (B,) + init.shape), noise[:, lag:])
            d = np.linalg.norm(a[:, -m - 1:] - b[:, -m - 1:], axis=-1)
        gaps[blk.start:blk.stop] = d.max(axis=-1)
    mean = float(gaps.mean())
    se = float(gaps.std(ddof=1) / math.sqrt(M)) if M > 1 else 0.0
    return WassersteinEstimate(t1, t2, mean, se, max(0.0, mean - 1.96 * se), mean + 1.96 * se, M)


def w_cauchy_decay(model, xi, t1_grid, lag: float, M: int, seed: int,
                   theoretical_rate: float | None = None) -> tuple[ContractionFit, list]:
    """Regress log mean W-Cauchy gaps on t1 with t2 = t1 + lag."""
    ests = [w_cauchy_gap(model, xi, t1, t1 + lag, M, seed) for t1 in t1_grid]
    if theoretical_rate is None:
        theoretical_rate = model_rate(model)
    fit = fit_log_linear([e.t1 for e in ests], [e.mean_gap for e in ests], theoretical_rate)
    return fit, ests


@dataclass
class InvariantSummary:
    burn_in: float
    M: int
    sup_mean: float
    sup_var: float
    sup_mean_se: float
    coord_var: np.ndarray
    coord_var_se: np.ndarray
    eps: float
    exp_moment: float
    exp_moment_se: float
    seed: int

    def key_values(self) -> list[str]:
        out = [f"{k}={fmt17(getattr(self, k))}" for k in
               ("burn_in", "M", "seed", "sup_mean", "sup_mean_se", "sup_var", "eps",
                "exp_moment", "exp_moment_se")]
        for i, (v, s) in enumerate(zip(self.coord_var, self.coord_var_se), 1):
            out.append(f"coord_{i}.var={fmt17(v)}")
            out.append(f"coord_{i}.var_se={fmt17(s)}")
        return out


def default_burn_in(model) -> float:
    rate = model_rate(model)
    if rate <= 0:
        raise ValueError("rate is not positive; burn_in must be given explicitly")
    return 10.0 / rate


def sample_invariant(model, burn_in: float | None = None, M: int = 1000, seed: int = 0,
                     eps: float = 0.1, initial=None, chunk: int = 1024) -> InvariantSummary:
    """Terminal segments after ``burn_in`` (rounded up to the grid)."""
    grid = model.grid
    if burn_in is None:
        burn_in = default_burn_in(model)
    T = math.ceil(burn_in / grid.dt - 1e-9) * grid.dt
    if initial is None:
        initial = _zero_initial(model)
    sups = np.empty(M)
    coords = None
    for blk, HX, HY in _histories(model, initial, T, seed, range(M), chunk=chunk):
        norms = _node_norms(HX, HY)
        sups[blk.start:blk.stop] = norms[:, -grid.m - 1:].max(axis=-1)
        now = HX[:, -1] if HY is None else np.hstack([HX[:, -1], HY[:, -1]])
        if coords is None:
            coords = np.empty((M, now.shape[-1]))
        coords[blk.start:blk.stop] = now
    # per-coordinate second moment about the sample mean, with delta-method SE
    mu = coords.mean(axis=0)
    dev2 = (coords - mu) ** 2
    w = np.exp(eps * sups ** 2)
    return InvariantSummary(burn_in=T, M=M, sup_mean=float(sups.mean()),
                            sup_var=float(sups.var(ddof=1)),
                            sup_mean_se=float(sups.std(ddof=1) / math.sqrt(M)),
                            coord_var=dev2.sum(axis=0) / (M - 1),
                            coord_var_se=dev2.std(axis=0, ddof=1) / math.sqrt(M),
                            eps=eps, exp_moment=float(w.mean()),
                            exp_moment_se=float(w.std(ddof=1) / math.sqrt(M)), seed=seed)


__all__ = [
    "ContractionFit", "model_rate", "fit_log_linear", "fit_contraction_rate",
    "ConcentrationTable", "gaussian_floor", "estimate_concentration", "eps_threshold",
    "WassersteinEstimate", "w_cauchy_gap", "w_cauchy_decay", "InvariantSummary",
    "default_burn_in", "sample_invariant",
]
