"""Spectral Galerkin simulation of the delay systems.

Each mode is advanced by exponential Euler with the drift frozen over the step
and an exactly sampled Ornstein-Uhlenbeck increment, so the linear semigroup is
reproduced without error.  The time step equals the segment spacing
``dt = r0/m``; delay reads therefore never interpolate.

Batched runs keep the whole path history ``H`` of shape ``(M, m+1+n, D)``:
``H[:, k:k+m+1]`` is the segment at step ``k`` (a sliding window over the same
buffer), which is the ring buffer of the single-path API.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .drifts import GridMismatch, SegmentGrid
from .linalg import decay_coeff, ou_step_std, phi_matrices
from .rng import chunks, path_rng
from .spectral_model import DegenerateModel, NondegenerateModel, SpectralData


@dataclass
class Segment:
    grid: SegmentGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.values.shape[0] != self.grid.m + 1:
            raise GridMismatch(f"segment needs {self.grid.m + 1} rows, got {self.values.shape[0]}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("segment values must be finite")

    @classmethod
    def constant(cls, grid: SegmentGrid, vec) -> "Segment":
        vec = np.atleast_1d(np.asarray(vec, dtype=float))
        return cls(grid, np.tile(vec, (grid.m + 1, 1)))

    @classmethod
    def zeros(cls, grid: SegmentGrid, dim: int) -> "Segment":
        return cls(grid, np.zeros((grid.m + 1, dim)))

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def present(self) -> np.ndarray:
        return self.values[-1]


def segment_sup_norm(seg) -> float | np.ndarray:
    """Max over theta-nodes of the Euclidean norm across modes.

    Accepts a :class:`Segment` or an array ``(..., m+1, D)``.
    """
    vals = seg.values if isinstance(seg, Segment) else np.asarray(seg, dtype=float)
    out = np.linalg.norm(vals, axis=-1).max(axis=-1)
    return float(out) if np.ndim(out) == 0 else out


def window_sup(node_norms: np.ndarray, m: int) -> np.ndarray:
    """Segment sup-norms from a history of pointwise norms (last axis = time)."""
    return sliding_window_view(node_norms, m + 1, axis=-1).max(axis=-1)


@dataclass
class PathRecord:
    times: np.ndarray
    supnorms: np.ndarray
    seed: int
    dt_sim: float
    path: int = 0
    components: dict = field(default_factory=dict)
    modes: np.ndarray | None = None

    def to_csv(self, path) -> None:
        header = ["time", "supnorm"] + list(self.components)
        cols = [self.times, self.supnorms] + [self.components[k] for k in self.components]
        if self.modes is not None:
            header += [f"mode_{i + 1}" for i in range(self.modes.shape[1])]
            cols += [self.modes[:, i] for i in range(self.modes.shape[1])]
        write_csv(path, header, np.column_stack(cols))


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in (rows if isinstance(rows, list) else np.atleast_2d(rows)):
            w.writerow([fmt17(v) for v in row])


def fmt17(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def n_steps(T: float, dt: float) -> int:
    if T < 0:
        raise ValueError("T must be nonnegative")
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not a multiple of the step dt={dt}")
    return n


class NondegenerateEngine:
    """Vectorized exponential-Euler stepping for a batch of paths."""

    def __init__(self, model: NondegenerateModel, noiseless: bool = False):
        self.model = model
        self.grid = model.grid
        lam = model.spectral.eigenvalues
        dt = self.grid.dt
        self.decay = np.exp(-lam * dt)
        self.coef = decay_coeff(lam, dt)
        self.std = 0.0 * lam if noiseless else model.spectral.noise_coeffs * ou_step_std(lam, dt)

    def advance(self, seg_values, noise_k):
        b = self.model.drift.evaluate(seg_values, self.grid)
        return self.decay * seg_values[..., -1, :] + self.coef * b + self.std * noise_k

    def run(self, init: np.ndarray, noise: np.ndarray) -> np.ndarray:
        m = self.grid.m
        init = np.asarray(init, dtype=float)
        M, n = noise.shape[0], noise.shape[1]
        H = np.empty((M, m + 1 + n, init.shape[-1]))
        H[:, :m + 1] = init
        for k in range(n):
            H[:, k + m + 1] = self.advance(H[:, k:k + m + 1], noise[:, k])
        return H


class DegenerateEngine:
    """Lock-step (X, Y) stepping; X is integrated exactly against a polynomial
    interpolant of Y (quadratic through three nodes, linear after a breakpoint)."""

    def __init__(self, model: DegenerateModel, noiseless: bool = False):
        self.model = model
        self.grid = model.grid
        h = self.grid.dt
        lam = model.A2_spectral.eigenvalues
        self.decay = np.exp(-lam * h)
        self.coef = decay_coeff(lam, h)
        self.unit_std = ou_step_std(lam, h)
        s = model.A2_spectral.noise_coeffs
        self.std = 0.0 * lam if noiseless else s * self.unit_std
        p0, p1, p2, p3 = phi_matrices(model.A1, h, 3)
        B = model.B
        self.E1T = p0.T
        self.quad = ((h * (p2 / 2 + p3) @ B).T, (h * (p1 - 2 * p3) @ B).T,
                     (h * (p3 - p2 / 2) @ B).T)
        self.lin = ((h * p2 @ B).T, (h * (p1 - p2) @ B).T)

    def drift(self, xseg, yseg):
        return self.model.drift2.evaluate(xseg, yseg, self.grid)

    def y_next(self, y_k, b, noise_k):
        return self.decay * y_k + self.coef * b + self.std * noise_k

    def x_next(self, x_k, y_prev, y_k, y_next, linear: bool):
        out = x_k @ self.E1T
        if linear:
            wp, w0 = self.lin
            return out + y_next @ wp + y_k @ w0
        wp, w0, wm = self.quad
        return out + y_next @ wp + y_k @ w0 + y_prev @ wm

    def run(self, X0, Y0, noise, breakpoints=(0,)):
        m = self.grid.m
        M, n = noise.shape[0], noise.shape[1]
        HX = np.empty((M, m + 1 + n, self.model.n1))
        HY = np.empty((M, m + 1 + n, self.model.n2))
        HX[:, :m + 1] = X0
        HY[:, :m + 1] = Y0
        bp = set(breakpoints)
        for k in range(n):
            i = k + m
            b = self.drift(HX[:, k:k + m + 1], HY[:, k:k + m + 1])
            HY[:, i + 1] = self.y_next(HY[:, i], b, noise[:, k])
            HX[:, i + 1] = self.x_next(HX[:, i], HY[:, i - 1], HY[:, i], HY[:, i + 1], k in bp)
        return HX, HY


def step_nondegenerate(state: Segment, model: NondegenerateModel, dt: float, noise) -> Segment:
    """One exponential-Euler step; the oldest node is dropped."""
    grid = model.grid
    if state.grid != grid:
        raise GridMismatch("segment grid differs from the model grid")
    if abs(dt - grid.dt) > 1e-12 * grid.dt:
        raise ValueError(f"dt={dt} must equal the segment spacing {grid.dt}")
    noise = np.asarray(noise, dtype=float)
    if noise.shape != (model.dim,):
        raise ValueError(f"noise must have length {model.dim}")
    if np.any(np.isnan(noise)):
        raise ValueError("noise contains NaN")
    new = NondegenerateEngine(model).advance(state.values, noise)
    return Segment(grid, np.vstack([state.values[1:], new]))


def _initial_values(initial, grid, dim):
    vals = initial.values if isinstance(initial, Segment) else np.asarray(initial, dtype=float)
    vals = np.atleast_2d(vals)
    if vals.shape != (grid.m + 1, dim):
        raise GridMismatch(f"initial segment must have shape {(grid.m + 1, dim)}")
    if not np.all(np.isfinite(vals)):
        raise ValueError("initial data must be finite")
    return vals


def simulate_nondegenerate(model: NondegenerateModel, initial, T: float, seed: int,
                           path: int = 0, keep_modes: bool = False,
                           noiseless: bool = False) -> PathRecord:
    grid = model.grid
    init = _initial_values(initial, grid, model.dim)
    n = n_steps(T, grid.dt)
    noise = path_rng(seed, path).standard_normal((n, model.dim))[None]
    H = NondegenerateEngine(model, noiseless).run(init[None], noise)[0]
    norms = np.linalg.norm(H, axis=-1)
    return PathRecord(times=grid.dt * np.arange(n + 1), supnorms=window_sup(norms, grid.m),
                      seed=seed, dt_sim=grid.dt, path=path,
                      modes=H[grid.m:].copy() if keep_modes else None)


def simulate_nondegenerate_batch(model: NondegenerateModel, initial, T: float, seed: int,
                                 n_paths: int, noiseless: bool = False,
                                 chunk: int = 2048) -> np.ndarray:
    """Full histories ``(n_paths, m+1+n, D)`` for paths ``0..n_paths-1``."""
    grid = model.grid
    init = _initial_values(initial, grid, model.dim)
    n = n_steps(T, grid.dt)
    eng = NondegenerateEngine(model, noiseless)
    out = np.empty((n_paths, grid.m + 1 + n, model.dim))
    for block in chunks(n_paths, chunk):
        noise = np.stack([path_rng(seed, k).standard_normal((n, model.dim)) for k in block])
        out[block.start:block.stop] = eng.run(np.broadcast_to(init, (len(block),) + init.shape),
                                              noise)
    return out


def simulate_degenerate(model: DegenerateModel, initial, T: float, seed: int, path: int = 0,
                        keep_modes: bool = False, noiseless: bool = False) -> PathRecord:
    grid = model.grid
    x0 = _initial_values(initial[0], grid, model.n1)
    y0 = _initial_values(initial[1], grid, model.n2)
    n = n_steps(T, grid.dt)
    noise = path_rng(seed, path).standard_normal((n, model.n2))[None]
    HX, HY = DegenerateEngine(model, noiseless).run(x0[None], y0[None], noise)
    HX, HY = HX[0], HY[0]
    nx, ny = np.linalg.norm(HX, axis=-1), np.linalg.norm(HY, axis=-1)
    joint = np.sqrt(nx ** 2 + ny ** 2)
    modes = np.hstack([HX[grid.m:], HY[grid.m:]]) if keep_modes else None
    return PathRecord(times=grid.dt * np.arange(n + 1), supnorms=window_sup(joint, grid.m),
                      seed=seed, dt_sim=grid.dt, path=path,
                      components={"supnorm_x": window_sup(nx, grid.m),
                                  "supnorm_y": window_sup(ny, grid.m)},
                      modes=modes)


def simulate_degenerate_batch(model: DegenerateModel, initial, T: float, seed: int,
                              n_paths: int, noiseless: bool = False, chunk: int = 2048):
    grid = model.grid
    x0 = _initial_values(initial[0], grid, model.n1)
    y0 = _initial_values(initial[1], grid, model.n2)
    n = n_steps(T, grid.dt)
    eng = DegenerateEngine(model, noiseless)
    HX = np.empty((n_paths, grid.m + 1 + n, model.n1))
    HY = np.empty((n_paths, grid.m + 1 + n, model.n2))
    for block in chunks(n_paths, chunk):
        noise = np.stack([path_rng(seed, k).standard_normal((n, model.n2)) for k in block])
        M = len(block)
        hx, hy = eng.run(np.broadcast_to(x0, (M,) + x0.shape), np.broadcast_to(y0, (M,) + y0.shape),
                         noise)
        HX[block.start:block.stop] = hx
        HY[block.start:block.stop] = hy
    return HX, HY


def stoch_conv_path(spec: SpectralData, t_end: float, dt: float, seed: int,
                    r0: float | None = None, path: int = 0) -> PathRecord:
    """Per-mode stochastic convolution Z(t) started at 0, exact OU transitions.

    With ``r0`` given, ``supnorms`` are sup-norms of the segments
    ``Z_t(theta) = Z((t+theta)^+)``; otherwise pointwise norms.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    m = None
    if r0 is not None:
        m = int(round(r0 / dt))
        if m < 1 or abs(m * dt - r0) > 1e-9 * r0:
            raise ValueError("dt must divide r0")
    n = n_steps(t_end, dt)
    lam, s = spec.eigenvalues, spec.noise_coeffs
    decay = np.exp(-lam * dt)
    std = s * ou_step_std(lam, dt)
    noise = path_rng(seed, path).standard_normal((n, spec.n_modes))
    Z = np.zeros((n + 1, spec.n_modes))
    for k in range(n):
        Z[k + 1] = decay * Z[k] + std * noise[k]
    norms = np.linalg.norm(Z, axis=-1)
    if m is not None:
        # (t+theta)^+ truncation: times before 0 read Z(0) = 0
        norms = window_sup(np.concatenate([np.zeros(m), norms]), m)
    return PathRecord(times=dt * np.arange(n + 1), supnorms=norms, seed=seed, dt_sim=dt,
                      path=path, modes=Z)


def stoch_conv_segments(spec: SpectralData, t0: float, r0: float, m: int, seed: int,
                        paths) -> np.ndarray:
    """Exact samples of the segment Z_{t0} on m+1 nodes, shape ``(len(paths), m+1, N)``.

    The marginal at the window start is drawn from its Gaussian law, then the
    window is traversed with exact transitions.
    """
    dt = r0 / m
    lam, s = spec.eigenvalues, spec.noise_coeffs
    decay = np.exp(-lam * dt)
    std = s * ou_step_std(lam, dt)
    start = t0 - r0
    if start >= 0:
        first = 0
        sd0 = s * ou_step_std(lam, start)
    else:
        first = int(round(-start / dt))
        if abs(first * dt + start) > 1e-9 * r0:
            raise ValueError("t0 must sit on the window grid when t0 < r0")
        sd0 = 0.0 * lam
    paths = list(paths)
    out = np.zeros((len(paths), m + 1, spec.n_modes))
    nz = np.stack([path_rng(seed, k).standard_normal((m + 1, spec.n_modes)) for k in paths])
    out[:, first] = sd0 * nz[:, 0]
    for j in range(first, m):
        out[:, j + 1] = decay * out[:, j] + std * nz[:, j + 1]
    return out


__all__ = [
    "Segment", "PathRecord", "segment_sup_norm", "window_sup", "write_csv", "fmt17", "n_steps",
    "NondegenerateEngine", "DegenerateEngine", "step_nondegenerate", "simulate_nondegenerate",
    "simulate_nondegenerate_batch", "simulate_degenerate", "simulate_degenerate_batch",
    "stoch_conv_path", "stoch_conv_segments",
]
