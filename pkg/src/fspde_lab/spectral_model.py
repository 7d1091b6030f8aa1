"""Model parameters and the closed-form sufficient-condition checkers.

The linear part is diagonal in an eigenbasis: ``A e_i = -lambda_i e_i`` and the
noise acts mode-wise with amplitude ``s_i = |sigma^* e_i|``.  Checkers here are
pure functions returning plain numbers or a :class:`ConditionReport`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad_vec

from .drifts import SegmentGrid
from .linalg import expm, op_norm

RATE_GRID_FALLBACK = 10_000
B4_RESIDUAL_TOL = 1e-8
C3_RTOL = 1e-10


@dataclass(frozen=True)
class TailLaw:
    """Power-law extrapolation lambda_i ~ a i^p, s_i ~ b i^q beyond the explicit modes."""

    a: float
    p: float
    b: float = 1.0
    q: float = 0.0

    def __post_init__(self):
        if not self.p > 0:
            raise ValueError("tail law exponent p must be positive")
        if not self.a > 0:
            raise ValueError("tail law prefactor a must be positive")


@dataclass
class SpectralData:
    eigenvalues: np.ndarray
    noise_coeffs: np.ndarray
    tail_law: TailLaw | None = None

    def __post_init__(self):
        self.eigenvalues = np.atleast_1d(np.asarray(self.eigenvalues, dtype=float))
        self.noise_coeffs = np.atleast_1d(np.asarray(self.noise_coeffs, dtype=float))
        if self.eigenvalues.shape != self.noise_coeffs.shape:
            raise ValueError("eigenvalues and noise_coeffs must have equal length")
        if self.eigenvalues.size == 0:
            raise ValueError("at least one mode is required")
        if np.any(self.eigenvalues <= 0) or not np.all(np.isfinite(self.eigenvalues)):
            raise ValueError("eigenvalues must be finite and strictly positive")
        if np.any(np.diff(self.eigenvalues) < 0):
            raise ValueError("eigenvalues must be nondecreasing")
        if np.any(self.noise_coeffs < 0):
            raise ValueError("noise coefficients must be nonnegative")

    @classmethod
    def power_law(cls, n: int, a: float = 1.0, p: float = 2.0, b: float = 1.0,
                  q: float = 0.0, tail: bool = True) -> "SpectralData":
        i = np.arange(1, n + 1, dtype=float)
        return cls(a * i ** p, b * i ** q, TailLaw(a, p, b, q) if tail else None)

    @property
    def n_modes(self) -> int:
        return self.eigenvalues.size

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[0])

    def to_dict(self):
        d = {"eigenvalues": self.eigenvalues.tolist(), "noise_coeffs": self.noise_coeffs.tolist()}
        if self.tail_law is not None:
            t = self.tail_law
            d["tail_law"] = {"a": t.a, "p": t.p, "b": t.b, "q": t.q}
        return d


@dataclass
class NondegenerateModel:
    """dX = (AX + b(X_t))dt + sigma dW on a Galerkin truncation."""

    spectral: SpectralData
    delta_reg: float
    drift: object
    L: float
    r0: float
    m: int = 64

    def __post_init__(self):
        if not 0 < self.delta_reg < 1:
            raise ValueError("delta_reg must lie in (0, 1)")
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if self.L < 0:
            raise ValueError("Lipschitz constant L must be nonnegative")
        lip = self.drift.lipschitz(self.spectral.n_modes)
        if lip > self.L * (1 + 1e-12) + 1e-15:
            raise ValueError(f"drift Lipschitz bound {lip} exceeds declared L={self.L}")

    @property
    def grid(self) -> SegmentGrid:
        return SegmentGrid(self.r0, self.m)

    @property
    def dim(self) -> int:
        return self.spectral.n_modes


@dataclass
class DegenerateModel:
    """dX = (A1 X + B Y)dt,  dY = (A2 Y + b(X_t, Y_t))dt + sigma dW."""

    A1: np.ndarray
    A2_spectral: SpectralData
    B: np.ndarray
    A0: np.ndarray
    drift2: object
    K1: float
    K2: float
    delta_drift: float
    r0: float
    delta_reg: float
    sigma_inv: np.ndarray | None = None
    m: int = 64

    def __post_init__(self):
        self.A1 = np.atleast_2d(np.asarray(self.A1, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.A0 = np.atleast_2d(np.asarray(self.A0, dtype=float))
        n1, n2 = self.n1, self.n2
        if self.A1.shape != (n1, n1):
            raise ValueError(f"A1 must be square, got {self.A1.shape}")
        if self.B.shape != (n1, n2):
            raise ValueError(f"B has shape {self.B.shape}, expected ({n1}, {n2})")
        if self.A0.shape != (n1, n1):
            raise ValueError(f"A0 has shape {self.A0.shape}, expected ({n1}, {n1})")
        if min(self.K1, self.K2, self.delta_drift) < 0:
            raise ValueError("K1, K2 and delta_drift must be nonnegative")
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if not 0 < self.delta_reg < 1:
            raise ValueError("delta_reg must lie in (0, 1)")
        s = self.A2_spectral.noise_coeffs
        if self.sigma_inv is None:
            if np.any(s == 0):
                raise ValueError("sigma must be invertible: zero noise coefficient")
            self.sigma_inv = 1.0 / s
        self.sigma_inv = np.asarray(self.sigma_inv, dtype=float)
        if self.sigma_inv.shape != s.shape or np.max(np.abs(s * self.sigma_inv - 1.0)) > 1e-12:
            raise ValueError("sigma * sigma_inv differs from the identity")
        k1, k2 = self.drift2.lipschitz(n1, n2)
        if k1 > self.K1 * (1 + 1e-12) + 1e-15 or k2 > self.K2 * (1 + 1e-12) + 1e-15:
            raise ValueError(f"drift Lipschitz bounds ({k1}, {k2}) exceed (K1, K2)")

    @property
    def n1(self) -> int:
        return self.A1.shape[0]

    @property
    def n2(self) -> int:
        return self.A2_spectral.n_modes

    @property
    def grid(self) -> SegmentGrid:
        return SegmentGrid(self.r0, self.m)

    @property
    def B_norm(self) -> float:
        return op_norm(self.B)


@dataclass
class ConditionEntry:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass
class ConditionReport:
    entries: list = field(default_factory=list)

    def add(self, name: str, passed: bool, value: float, detail: str = "") -> None:
        if any(e.name == name for e in self.entries):
            raise ValueError(f"condition {name!r} reported twice")
        value = float(value)
        if not math.isfinite(value):
            raise ValueError(f"condition {name!r} produced a non-finite scalar")
        self.entries.append(ConditionEntry(name, bool(passed), value, detail))

    def __getitem__(self, name: str) -> ConditionEntry:
        for e in self.entries:
            if e.name == name:
                return e
        raise KeyError(name)

    def __contains__(self, name: str) -> bool:
        return any(e.name == name for e in self.entries)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def merge(self, other: "ConditionReport", prefix: str = "") -> "ConditionReport":
        for e in other.entries:
            self.add(prefix + e.name, e.passed, e.value, e.detail)
        return self

    def lines(self) -> list[str]:
        return [f"{'PASS' if e.passed else 'FAIL'} {e.name} value={e.value!r} {e.detail}".rstrip()
                for e in self.entries]

    def key_values(self) -> list[str]:
        out = []
        for e in self.entries:
            out.append(f"{e.name}.passed={str(e.passed).lower()}")
            out.append(f"{e.name}.value={e.value!r}")
        return out


@dataclass(frozen=True)
class RateResult:
    rate: float
    argmax_s: float
    positive: bool


def check_noise_regularity(spec: SpectralData, delta_reg: float) -> ConditionReport:
    """Summability of s_i^2 / lambda_i^(1-delta) over explicit modes plus a tail bound."""
    if not 0 < delta_reg < 1:
        raise ValueError("delta_reg must lie in (0, 1)")
    power = 1.0 - delta_reg
    partial = float(np.sum(spec.noise_coeffs ** 2 / spec.eigenvalues ** power))
    report = ConditionReport()
    law = spec.tail_law
    if law is None:
        report.add("noise_series", True, partial,
                   f"{spec.n_modes} explicit modes, no tail law")
    else:
        kappa = law.p * power - 2.0 * law.q
        c = law.b ** 2 / law.a ** power
        n = spec.n_modes
        if c == 0.0:
            tail, ok = 0.0, True
        elif kappa > 1.0:
            tail, ok = c * n ** (1.0 - kappa) / (kappa - 1.0), True
        else:
            tail, ok = math.inf, False
        detail = f"partial={partial!r} tail_bound={tail!r}"
        report.add("noise_series", ok, partial + tail if ok else partial, detail)
        report.add("noise_tail_exponent", ok, kappa,
                   "terms decay like i^-kappa; summable iff kappa > 1")
    report.add("holder_eps_max", True, delta_reg / (1.0 - delta_reg),
               "admissible epsilon range (0, delta/(1-delta)]")
    return report


def compute_rate_lambda(lambda1: float, L: float, r0: float) -> RateResult:
    """sup over s in (0, lambda1] of s - L exp(s r0).

    The supremum is taken on the closure [0, lambda1]; ``argmax_s == 0`` means
    the supremum is the limit at the open end and is not attained.
    """
    if not lambda1 > 0:
        raise ValueError("lambda1 must be positive")
    if L < 0 or r0 < 0:
        raise ValueError("L and r0 must be nonnegative")

    def f(s):
        return s - L * math.exp(s * r0)

    lr = L * r0
    if lr == 0.0:
        s_star = lambda1
    elif math.isfinite(lr) and lr > 0:
        s_star = min(max(math.log(1.0 / lr) / r0, 0.0), lambda1)
    else:
        grid = np.linspace(0.0, lambda1, RATE_GRID_FALLBACK)
        s_star = float(grid[np.argmax(grid - L * np.exp(grid * r0))])
    rate = f(s_star)
    return RateResult(rate, s_star, rate > 0)


def compute_lambda_prime(delta_drift: float, K1: float, K2: float, B_norm: float) -> float:
    if min(delta_drift, K1, K2, B_norm) < 0:
        raise ValueError("inputs must be nonnegative")
    disc = math.sqrt((K2 - delta_drift) ** 2 + 4.0 * K1 * B_norm)
    return 0.5 * (delta_drift + K2 + disc)


def compute_alpha(delta_drift: float, K1: float, K2: float, B_norm: float) -> float:
    """Weight alpha balancing the X and Y gaps in the degenerate contraction."""
    if min(delta_drift, K1, K2, B_norm) < 0:
        raise ValueError("inputs must be nonnegative")
    if B_norm == 0:
        raise ValueError("alpha is undefined for ||B|| = 0")
    d = delta_drift - K2
    disc = math.sqrt(d * d + 4.0 * K1 * B_norm)
    if d >= 0:
        alpha = (d + disc) / (2.0 * B_norm)
    else:
        # rationalized form, avoids cancellation when K1*||B|| is small
        alpha = 2.0 * K1 / (disc - d) if disc - d > 0 else 0.0
    lam_p = compute_lambda_prime(delta_drift, K1, K2, B_norm)
    r1 = abs(alpha * delta_drift + K1 - lam_p * alpha)
    r2 = abs(alpha * B_norm + K2 - lam_p)
    s1 = max(abs(alpha * delta_drift), K1, abs(lam_p * alpha), 1e-300)
    s2 = max(abs(alpha * B_norm), K2, lam_p, 1e-300)
    if r1 > C3_RTOL * s1 or r2 > C3_RTOL * s2:
        raise ArithmeticError(f"weight identities violated: residuals {r1}, {r2}")
    return alpha


def check_degenerate_gap(lambda_prime: float, lambda1: float, r0: float) -> RateResult:
    if lambda_prime < 0 or r0 < 0:
        raise ValueError("inputs must be nonnegative")
    res = compute_rate_lambda(lambda1, lambda_prime, r0)
    s_peak = lambda1 if r0 == 0 else min(1.0 / r0, lambda1)
    strict = lambda_prime < s_peak * math.exp(-s_peak * r0)
    return RateResult(res.rate, res.argmax_s, strict)


def dirichlet_lower_bound(d: int, R: float, frac_alpha: float) -> float:
    """Lower bound (d pi^2)^alpha / R^(2 alpha) on the first eigenvalue of (-Laplacian)^alpha."""
    if not R > 0:
        raise ValueError("domain diameter R must be positive")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if frac_alpha <= d / 2:
        import warnings
        warnings.warn(f"alpha={frac_alpha} <= d/2: the identity noise is not Hilbert-Schmidt "
                      "regularized", stacklevel=2)
    return (d * math.pi ** 2) ** frac_alpha * R ** (-2.0 * frac_alpha)


def controllability_gramian(A0: np.ndarray, B: np.ndarray, t: float, weight=None) -> np.ndarray:
    """int_0^t w(s) e^{s A0} B B^* e^{s A0^*} ds by adaptive quadrature."""
    bb = B @ B.T

    def integrand(s):
        e = expm(s * A0)
        val = e @ bb @ e.T
        return val if weight is None else weight(s) * val

    val, _ = quad_vec(integrand, 0.0, t, epsabs=0.0, epsrel=1e-12)
    return 0.5 * (val + val.T)


def check_B4(model: DegenerateModel, sample_times) -> ConditionReport:
    times = [float(t) for t in sample_times]
    if not times or min(times) <= 0:
        raise ValueError("sample times must be positive")
    A1, B, A0 = model.A1, model.B, model.A0
    lam2 = model.A2_spectral.eigenvalues
    worst_res, worst_eig = 0.0, math.inf
    for t in times:
        lhs = B * np.exp(-t * lam2)[None, :]
        rhs = expm(t * A1) @ expm(t * A0) @ B
        scale = max(1.0, float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))))
        worst_res = max(worst_res, float(np.max(np.abs(lhs - rhs))) / scale)
        q = controllability_gramian(A0, B, t)
        worst_eig = min(worst_eig, float(np.linalg.eigvalsh(q)[0]))
    report = ConditionReport()
    report.add("B4_commutation", worst_res <= B4_RESIDUAL_TOL, worst_res,
               "max |B e^{tA2} - e^{tA1} e^{tA0} B| relative to entry scale")
    report.add("B4_gramian_min_eig", worst_eig > 0, worst_eig, "min eigenvalue of Q_t")
    return report


def check_nondegenerate(model: NondegenerateModel) -> ConditionReport:
    report = ConditionReport()
    report.merge(check_noise_regularity(model.spectral, model.delta_reg), "A1_")
    lip = model.drift.lipschitz(model.dim)
    report.add("A2_lipschitz", lip <= model.L * (1 + 1e-12) + 1e-15, lip,
               f"computed bound vs declared L={model.L}")
    s_min = float(np.min(model.spectral.noise_coeffs))
    report.add("A3_invertible", s_min > 0, s_min, "smallest noise coefficient")
    rate = compute_rate_lambda(model.spectral.lambda1, model.L, model.r0)
    report.add("rate_lambda", rate.positive, rate.rate, f"argmax_s={rate.argmax_s!r}")
    return report


def check_degenerate(model: DegenerateModel, sample_times=(0.5, 1.0)) -> ConditionReport:
    report = ConditionReport()
    report.merge(check_noise_regularity(model.A2_spectral, model.delta_reg), "B1_")
    k1, k2 = model.drift2.lipschitz(model.n1, model.n2)
    report.add("B2_K1", k1 <= model.K1 * (1 + 1e-12) + 1e-15, k1, f"declared K1={model.K1}")
    report.add("B2_K2", k2 <= model.K2 * (1 + 1e-12) + 1e-15, k2, f"declared K2={model.K2}")
    sym = 0.5 * (model.A1 + model.A1.T)
    top = float(np.linalg.eigvalsh(sym)[-1])
    margin = model.delta_drift - model.A2_spectral.lambda1 - top
    report.add("B3_margin", margin >= -1e-12, margin, "delta - lambda1 - max eig sym(A1)")
    report.merge(check_B4(model, sample_times))
    lam_p = compute_lambda_prime(model.delta_drift, model.K1, model.K2, model.B_norm)
    gap = check_degenerate_gap(lam_p, model.A2_spectral.lambda1, model.r0)
    report.add("lambda_prime", gap.positive, lam_p, "strict inequality of the rate condition")
    report.add("rate_lambda", gap.positive, gap.rate, f"argmax_s={gap.argmax_s!r}")
    return report


__all__ = [
    "TailLaw", "SpectralData", "NondegenerateModel", "DegenerateModel", "ConditionEntry",
    "ConditionReport", "RateResult", "check_noise_regularity", "compute_rate_lambda",
    "compute_lambda_prime", "compute_alpha", "check_degenerate_gap", "dirichlet_lower_bound",
    "controllability_gramian", "check_B4", "check_nondegenerate", "check_degenerate"
]
