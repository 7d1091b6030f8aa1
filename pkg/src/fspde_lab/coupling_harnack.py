"""Synchronous couplings and the change-of-measure (Harnack) coupling.

The Harnack coupling steers a second degenerate system started from
``(xi_bar, eta_bar)`` onto the first one by time ``t0``.  The Y-difference is
prescribed as ``e^{tA2} g(t)`` with

    g(t) = d_eta (T-t)^+/T + t (T-t)^+ B^T e^{t A0^T} e,   T = t0 - r0,

and the shift ``e`` is chosen so that the X-difference vanishes at ``T``.  The
barred Y is simulated with the exact discrete correction that realizes this
difference on the grid, and the Girsanov weight is accumulated for the
discrete scheme, so that E[R] = 1 holds exactly for the simulated chain.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec
from scipy.linalg import cho_factor, cho_solve
from scipy.special import logsumexp

from .fspde_sim import (DegenerateEngine, NondegenerateEngine, _initial_values, fmt17,
                        n_steps, window_sup, write_csv)
from .linalg import expm
from .rng import chunks, path_rng
from .spectral_model import (DegenerateModel, NondegenerateModel, check_degenerate_gap,
                             compute_alpha, compute_lambda_prime, compute_rate_lambda,
                             controllability_gramian)

COND_MAX = 1e12
TERMINAL_TOL = 1e-6
GL_NODES = 8


class SingularGramian(ArithmeticError):
    pass


@dataclass
class CouplingRecord:
    times: np.ndarray
    gapX: np.ndarray
    gapY: np.ndarray | None
    gap0_x: float
    gap0_y: float
    seed: int
    path: int = 0
    alpha: float | None = None
    bound_ratio: float = math.nan
    bound_ok: bool | None = None

    @property
    def weighted(self) -> np.ndarray:
        if self.gapY is None:
            return self.gapX
        a = 1.0 if self.alpha is None else self.alpha
        return a * self.gapX + self.gapY

    def to_csv(self, path) -> None:
        cols = [self.times, self.gapX]
        header = ["time", "gap_x"]
        if self.gapY is not None:
            cols += [self.gapY, self.weighted]
            header += ["gap_y", "weighted"]
        write_csv(path, header, np.column_stack(cols))


@dataclass
class CouplingBatch:
    times: np.ndarray
    gapX: np.ndarray
    gapY: np.ndarray | None
    gap0_x: float
    gap0_y: float
    alpha: float | None = None

    @property
    def weighted(self) -> np.ndarray:
        if self.gapY is None:
            return self.gapX
        a = 1.0 if self.alpha is None else self.alpha
        return a * self.gapX + self.gapY


def _sup_gap(h1, h2, m):
    return window_sup(np.linalg.norm(h1 - h2, axis=-1), m)


def _segment_gap(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a) - np.asarray(b), axis=-1).max())


def couple_batch(model, xi, eta, T: float, seed: int, paths, chunk: int = 1024) -> CouplingBatch:
    """Two solutions per path driven by the same noise; segment sup-norm gaps.

    For a degenerate model ``xi`` and ``eta`` are ``(X0, Y0)`` pairs.
    """
    paths = list(paths)
    grid = model.grid
    m = grid.m
    n = n_steps(T, grid.dt)
    times = grid.dt * np.arange(n + 1)
    if isinstance(model, NondegenerateModel):
        a = _initial_values(xi, grid, model.dim)
        b = _initial_values(eta, grid, model.dim)
        eng = NondegenerateEngine(model)
        gx = np.empty((len(paths), n + 1))
        for blk in chunks(len(paths), chunk):
            ids = paths[blk.start:blk.stop]
            noise = np.stack([path_rng(seed, k).standard_normal((n, model.dim)) for k in ids])
            shape = (len(ids),) + a.shape
            h1 = eng.run(np.broadcast_to(a, shape), noise)
            h2 = eng.run(np.broadcast_to(b, shape), noise)
            gx[blk.start:blk.stop] = _sup_gap(h1, h2, m)
        return CouplingBatch(times, gx, None, _segment_gap(a, b), 0.0)
    if isinstance(model, DegenerateModel):
        x1 = _initial_values(xi[0], grid, model.n1)
        y1 = _initial_values(xi[1], grid, model.n2)
        x2 = _initial_values(eta[0], grid, model.n1)
        y2 = _initial_values(eta[1], grid, model.n2)
        eng = DegenerateEngine(model)
        gx = np.empty((len(paths), n + 1))
        gy = np.empty((len(paths), n + 1))
        for blk in chunks(len(paths), chunk):
            ids = paths[blk.start:blk.stop]
            noise = np.stack([path_rng(seed, k).standard_normal((n, model.n2)) for k in ids])
            M = len(ids)
            hx1, hy1 = eng.run(np.broadcast_to(x1, (M,) + x1.shape),
                               np.broadcast_to(y1, (M,) + y1.shape), noise)
            hx2, hy2 = eng.run(np.broadcast_to(x2, (M,) + x2.shape),
                               np.broadcast_to(y2, (M,) + y2.shape), noise)
            gx[blk.start:blk.stop] = _sup_gap(hx1, hx2, m)
            gy[blk.start:blk.stop] = _sup_gap(hy1, hy2, m)
        alpha = None
        if model.B_norm > 0:
            alpha = compute_alpha(model.delta_drift, model.K1, model.K2, model.B_norm)
        return CouplingBatch(times, gx, gy, _segment_gap(x1, x2), _segment_gap(y1, y2), alpha)
    raise TypeError("unsupported model type")


def contraction_envelope(model: NondegenerateModel, times: np.ndarray, gap0: float):
    """e^{lambda1 r0} e^{-lambda t} ||xi - eta||; None when the rate is not positive."""
    rate = compute_rate_lambda(model.spectral.lambda1, model.L, model.r0)
    if not rate.positive:
        return None
    return math.exp(model.spectral.lambda1 * model.r0) * np.exp(-rate.rate * times) * gap0


def bound_ratios(model: NondegenerateModel, batch: CouplingBatch):
    env = contraction_envelope(model, batch.times, batch.gap0_x)
    if env is None or batch.gap0_x == 0:
        return None
    return batch.gapX / env


def synchronous_couple(model, xi, eta, T: float, seed: int, path: int = 0) -> CouplingRecord:
    batch = couple_batch(model, xi, eta, T, seed, [path])
    rec = CouplingRecord(batch.times, batch.gapX[0],
                         None if batch.gapY is None else batch.gapY[0],
                         batch.gap0_x, batch.gap0_y, seed, path, batch.alpha)
    if isinstance(model, NondegenerateModel):
        ratios = bound_ratios(model, batch)
        if ratios is not None:
            rec.bound_ratio = float(ratios.max())
            rec.bound_ok = bool(rec.bound_ratio <= 1.0 + 10.0 * model.grid.dt)
    return rec


def qtilde_matrix(model: DegenerateModel, T: float) -> np.ndarray:
    """int_0^T s(T-s) e^{sA0} B B^T e^{sA0^T} ds, with a singularity guard."""
    if not T > 0:
        raise ValueError("T must be positive")
    q = controllability_gramian(model.A0, model.B, T, weight=lambda s: s * (T - s))
    eig = np.linalg.eigvalsh(q)
    if eig[-1] <= 0 or eig[0] <= eig[-1] / COND_MAX:
        raise SingularGramian(f"weighted Gramian is singular at T={T} (eigenvalues {eig})")
    return q


@dataclass
class HarnackPlan:
    t0: float
    T: float
    qtilde: np.ndarray
    e_vec: np.ndarray
    d_xi: np.ndarray
    d_eta: np.ndarray
    times: np.ndarray
    g: np.ndarray
    ydiff: np.ndarray
    xdiff: np.ndarray
    corr: np.ndarray
    kink_step: int
    initial: tuple
    initial_bar: tuple
    meta: dict = field(default_factory=dict)

    def h(self, t: float, B: np.ndarray, A0: np.ndarray) -> np.ndarray:
        return t * max(self.T - t, 0.0) * (B.T @ expm(t * A0.T) @ self.e_vec)

    @property
    def trivial(self) -> bool:
        return not (np.any(self.d_xi) or np.any(self.d_eta))


def build_plan(model: DegenerateModel, pair, pair_bar, t0: float,
               dt: float | None = None) -> HarnackPlan:
    grid = model.grid
    if dt is not None and abs(dt - grid.dt) > 1e-12 * grid.dt:
        raise ValueError(f"dt={dt} must equal the segment spacing {grid.dt}")
    if not t0 > model.r0:
        raise ValueError("t0 must exceed r0")
    T = t0 - model.r0
    kink = n_steps(T, grid.dt)
    n = n_steps(t0, grid.dt)
    x0 = _initial_values(pair[0], grid, model.n1)
    y0 = _initial_values(pair[1], grid, model.n2)
    xb = _initial_values(pair_bar[0], grid, model.n1)
    yb = _initial_values(pair_bar[1], grid, model.n2)
    d_xi = xb[-1] - x0[-1]
    d_eta = yb[-1] - y0[-1]
    A0, A1, B = model.A0, model.A1, model.B
    lam2 = model.A2_spectral.eigenvalues

    q = qtilde_matrix(model, T)
    fac = cho_factor(q)
    if np.any(d_eta):
        v, _ = quad_vec(lambda s: (T - s) / T * (expm(s * A0) @ B @ d_eta), 0.0, T,
                        epsabs=0.0, epsrel=1e-12)
    else:
        v = np.zeros(model.n1)
    e = -cho_solve(fac, d_xi + v)

    def g_of(t):
        w = max(T - t, 0.0)
        return d_eta * (w / T) + t * w * (B.T @ expm(t * A0.T) @ e)

    times = grid.dt * np.arange(n + 1)
    g = np.array([g_of(t) for t in times])
    ydiff = np.exp(-np.outer(times, lam2)) * g
    corr = np.exp(-np.outer(times[1:], lam2)) * (g[1:] - g[:-1])

    # X-difference e^{tA1}(d_xi + int_0^t e^{sA0} B g(s) ds); the integrand
    # vanishes beyond T
    cum = np.zeros((n + 1, model.n1))
    if np.any(d_xi) or np.any(d_eta):
        # composite Gauss-Legendre on each grid interval of [0, T]; the
        # integrand is smooth there
        nodes, weights = np.polynomial.legendre.leggauss(GL_NODES)
        h = grid.dt
        for k in range(kink):
            a = times[k]
            pts = a + 0.5 * h * (nodes + 1.0)
            part = sum(w * (expm(s * A0) @ B @ g_of(s)) for s, w in zip(pts, weights))
            cum[k + 1] = cum[k] + 0.5 * h * part
        cum[kink + 1:] = cum[kink]
    xdiff = np.array([expm(t * A1) @ (d_xi + c) for t, c in zip(times, cum)])
    return HarnackPlan(t0=t0, T=T, qtilde=q, e_vec=e, d_xi=d_xi, d_eta=d_eta, times=times,
                       g=g, ydiff=ydiff, xdiff=xdiff, corr=corr, kink_step=kink,
                       initial=(x0, y0), initial_bar=(xb, yb),
                       meta={"qtilde_cond": float(np.linalg.cond(q))})


@dataclass
class GirsanovRecord:
    log_R: float
    phi_sq_integral: float
    stoch_integral: float
    seed: int
    path: int = 0

    @property
    def R(self) -> float:
        return math.exp(self.log_R)


@dataclass
class PlanRun:
    """Batched output of a coupled run; arrays indexed by path."""

    times: np.ndarray
    gapX: np.ndarray
    gapY: np.ndarray
    log_R: np.ndarray
    stoch: np.ndarray
    phi_sq: np.ndarray
    terminal_x: np.ndarray
    terminal_y: np.ndarray
    terminal_xbar: np.ndarray
    terminal_ybar: np.ndarray
    paths: list
    seed: int


def _run_plan_block(plan: HarnackPlan, model: DegenerateModel, noise: np.ndarray):
    eng = DegenerateEngine(model)
    m = model.grid.m
    M, n = noise.shape[0], noise.shape[1]
    x0, y0 = plan.initial
    xb, yb = plan.initial_bar
    HX = np.empty((M, m + 1 + n, model.n1))
    HY = np.empty((M, m + 1 + n, model.n2))
    GX = np.empty_like(HX)
    GY = np.empty_like(HY)
    HX[:, :m + 1], HY[:, :m + 1] = x0, y0
    GX[:, :m + 1], GY[:, :m + 1] = xb, yb
    inv = model.sigma_inv / eng.unit_std
    stoch = np.zeros(M)
    sq = np.zeros(M)
    bp = {0, plan.kink_step}
    for k in range(n):
        i = k + m
        b = eng.drift(HX[:, k:k + m + 1], HY[:, k:k + m + 1])
        bb = eng.drift(GX[:, k:k + m + 1], GY[:, k:k + m + 1])
        nk = noise[:, k]
        HY[:, i + 1] = eng.y_next(HY[:, i], b, nk)
        GY[:, i + 1] = eng.decay * GY[:, i] + eng.coef * b + plan.corr[k] + eng.std * nk
        kappa = (eng.coef * (b - bb) + plan.corr[k]) * inv
        stoch += np.sum(kappa * nk, axis=-1)
        sq += np.sum(kappa * kappa, axis=-1)
        lin = k in bp
        HX[:, i + 1] = eng.x_next(HX[:, i], HY[:, i - 1], HY[:, i], HY[:, i + 1], lin)
        GX[:, i + 1] = eng.x_next(GX[:, i], GY[:, i - 1], GY[:, i], GY[:, i + 1], lin)
    log_R = -stoch - 0.5 * sq
    return HX, HY, GX, GY, stoch, sq, log_R


def run_plan_batch(plan: HarnackPlan, model: DegenerateModel, seed: int, paths,
                   chunk: int = 1024) -> PlanRun:
    paths = list(paths)
    m = model.grid.m
    n = plan.times.size - 1
    M = len(paths)
    gx = np.empty((M, n + 1))
    gy = np.empty((M, n + 1))
    out = {k: np.empty(M) for k in ("log_R", "stoch", "sq")}
    tx = np.empty((M, m + 1, model.n1))
    ty = np.empty((M, m + 1, model.n2))
    txb = np.empty_like(tx)
    tyb = np.empty_like(ty)
    for blk in chunks(M, chunk):
        ids = paths[blk.start:blk.stop]
        noise = np.stack([path_rng(seed, k).standard_normal((n, model.n2)) for k in ids])
        HX, HY, GX, GY, stoch, sq, log_R = _run_plan_block(plan, model, noise)
        sl = slice(blk.start, blk.stop)
        gx[sl] = _sup_gap(HX, GX, m)
        gy[sl] = _sup_gap(HY, GY, m)
        out["log_R"][sl], out["stoch"][sl], out["sq"][sl] = log_R, stoch, sq
        tx[sl], ty[sl] = HX[:, -m - 1:], HY[:, -m - 1:]
        txb[sl], tyb[sl] = GX[:, -m - 1:], GY[:, -m - 1:]
    return PlanRun(plan.times, gx, gy, out["log_R"], out["stoch"], out["sq"], tx, ty, txb, tyb,
                   paths, seed)


def run_plan(plan: HarnackPlan, model: DegenerateModel, seed: int,
             path: int = 0) -> tuple[CouplingRecord, GirsanovRecord]:
    run = run_plan_batch(plan, model, seed, [path])
    x0, y0 = plan.initial
    xb, yb = plan.initial_bar
    rec = CouplingRecord(run.times, run.gapX[0], run.gapY[0], _segment_gap(x0, xb),
                         _segment_gap(y0, yb), seed, path)
    gir = GirsanovRecord(float(run.log_R[0]), float(run.phi_sq[0]), float(run.stoch[0]),
                         seed, path)
    return rec, gir


def terminal_gaps(run: PlanRun) -> tuple[np.ndarray, np.ndarray]:
    """Present-time gaps |X_bar(t0) - X(t0)|, |Y_bar(t0) - Y(t0)| per path."""
    gx = np.linalg.norm(run.terminal_xbar[:, -1] - run.terminal_x[:, -1], axis=-1)
    gy = np.linalg.norm(run.terminal_ybar[:, -1] - run.terminal_y[:, -1], axis=-1)
    return gx, gy


def default_f_bank():
    """Five bounded functionals of the terminal segment pair ``(x, y)``."""

    def one(x, y):
        return np.ones(x.shape[0])

    def clip_x(x, y):
        return np.minimum(1.0, np.linalg.norm(x, axis=-1).max(axis=-1))

    def clip_y(x, y):
        return np.minimum(1.0, np.linalg.norm(y, axis=-1).max(axis=-1))

    def cos_x(x, y):
        return np.cos(x[:, -1, 0])

    def tanh_mean_y(x, y):
        return np.tanh(y[:, :, 0].mean(axis=-1))

    return {"one": one, "clip_sup_x": clip_x, "clip_sup_y": clip_y, "cos_x_now": cos_x,
            "tanh_mean_y": tanh_mean_y}


@dataclass
class HarnackReport:
    M: int
    dist: float
    ER: float
    ER_se: float
    ER2: float
    ER2_se: float
    log_ER2: float
    c_hat: float
    f_names: list
    lhs: np.ndarray
    rhs: np.ndarray
    seed: int

    @property
    def slack(self) -> np.ndarray:
        return self.rhs - self.lhs

    @property
    def holds(self) -> np.ndarray:
        # exact inequality up to floating-point rounding of the sums
        return self.lhs <= self.rhs * (1.0 + 1e-12)

    def key_values(self) -> list[str]:
        vals = {"M": self.M, "seed": self.seed, "dist": self.dist, "ER": self.ER,
                "ER_se": self.ER_se, "ER2": self.ER2, "ER2_se": self.ER2_se,
                "log_ER2": self.log_ER2, "c_hat": self.c_hat,
                "all_hold": bool(np.all(self.holds))}
        return [f"{k}={fmt17(v)}" for k, v in vals.items()]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("f,lhs,rhs,slack,holds\n")
            for name, a, b, s, h in zip(self.f_names, self.lhs, self.rhs, self.slack,
                                        self.holds):
                fh.write(f"{name},{fmt17(a)},{fmt17(b)},{fmt17(s)},{fmt17(bool(h))}\n")


def harnack_from_run(run: PlanRun, dist: float, f_bank=None) -> HarnackReport:
    """Cauchy-Schwarz form (mean(R f))^2 <= mean(R^2) mean(f^2) on one sample set."""
    f_bank = f_bank or default_f_bank()
    M = run.log_R.size
    R = np.exp(run.log_R)
    R2 = R * R
    names, lhs, rhs = [], [], []
    for name, f in f_bank.items():
        fv = np.asarray(f(run.terminal_x, run.terminal_y), dtype=float)
        if np.any(np.abs(fv) > 1.0 + 1e-12) or not np.all(np.isfinite(fv)):
            raise ValueError(f"test function {name!r} is not bounded by 1")
        names.append(name)
        lhs.append(np.mean(R * fv) ** 2)
        rhs.append(np.mean(R2) * np.mean(fv * fv))
    log_er2 = float(logsumexp(2.0 * run.log_R) - math.log(M))
    c_hat = log_er2 / dist ** 2 if dist > 0 else 0.0
    return HarnackReport(M=M, dist=dist, ER=float(R.mean()), ER_se=float(R.std(ddof=1) / math.sqrt(M)),
                         ER2=float(R2.mean()), ER2_se=float(R2.std(ddof=1) / math.sqrt(M)),
                         log_ER2=log_er2, c_hat=c_hat, f_names=names, lhs=np.array(lhs),
                         rhs=np.array(rhs), seed=run.seed)


def pair_distance(pair, pair_bar) -> float:
    """Sup over nodes of the joint Euclidean norm of the pair difference."""
    dx = np.asarray(pair_bar[0], dtype=float) - np.asarray(pair[0], dtype=float)
    dy = np.asarray(pair_bar[1], dtype=float) - np.asarray(pair[1], dtype=float)
    return float(np.sqrt(np.sum(dx * dx, axis=-1) + np.sum(dy * dy, axis=-1)).max())


def estimate_harnack(model: DegenerateModel, pair1, pair2, t0: float, f_bank=None,
                     M: int = 10_000, seed: int = 0) -> HarnackReport:
    plan = build_plan(model, pair1, pair2, t0)
    run = run_plan_batch(plan, model, seed, range(M))
    return harnack_from_run(run, pair_distance(plan.initial, plan.initial_bar), f_bank)


def degenerate_rate(model: DegenerateModel):
    lam_p = compute_lambda_prime(model.delta_drift, model.K1, model.K2, model.B_norm)
    return check_degenerate_gap(lam_p, model.A2_spectral.lambda1, model.r0)


__all__ = [
    "SingularGramian", "CouplingRecord", "CouplingBatch", "couple_batch", "contraction_envelope",
    "bound_ratios", "synchronous_couple", "qtilde_matrix", "HarnackPlan", "build_plan",
    "GirsanovRecord", "PlanRun", "run_plan_batch", "run_plan", "terminal_gaps",
    "default_f_bank", "HarnackReport", "harnack_from_run", "pair_distance", "estimate_harnack",
    "degenerate_rate",
]
