"""Gaussian supremum tail bounds for stochastic convolutions.

For a cylindrical Gaussian process on [0, 1] with mode processes ``gamma_i``
the bound is assembled from per-mode scales ``delta_i = Gamma_i + (2+sqrt2)
int_1^inf phi_i(e^{-s^2}) ds``, the weight ``theta = sum delta_i^2
log(e + 1/delta_i)`` and the admissible rate ``lambda_tilde``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import minimize_scalar
from scipy.special import erfc, log_ndtr
from statsmodels.stats.proportion import proportion_confint

from .fspde_sim import fmt17, stoch_conv_segments, write_csv
from .rng import chunks
from .spectral_model import SpectralData

SQRT5 = math.sqrt(5.0)
# int_r^inf e^{-s^2/2} ds <= e^{-r^2/2}/sqrt5 for r >= sqrt5, times 5e/2
C1_TAIL = SQRT5 * math.e / 2.0
SPREAD = 2.0 + math.sqrt(2.0)
MIN_SAMPLES = 1000


@dataclass(frozen=True)
class BoundValue:
    value: float
    vacuous: bool
    threshold: float = 0.0
    level: float = math.nan

    def __float__(self):
        return self.value


@lru_cache(maxsize=None)
def holder_constant(r: float) -> float:
    """c(r) = sup_{u>0} (1 - e^{-u}) / u^r, so |e^{-s}-e^{-t}| <= c(r)|s-t|^r."""
    if not 0 < r < 1:
        raise ValueError("Holder exponent must lie in (0, 1)")

    def neg(logu):
        u = math.exp(logu)
        return -(-math.expm1(-u)) * math.exp(-r * logu)

    # the maximizer solves u e^{-u}/(1-e^{-u}) = r, so u* lies in (0, 1/r + 1)
    hi = math.log(1.0 / r + 2.0)
    res = minimize_scalar(neg, bounds=(-40.0, hi), method="bounded",
                          options={"xatol": 1e-10})
    return -float(res.fun)


def one_dim_fernique_bound(Gamma: float, theta1: float, r: float) -> BoundValue:
    """P(max |gamma| >= r(Gamma + (2+sqrt2) theta1)) <= (5e/2) int_r^inf e^{-s^2/2} ds."""
    if Gamma < 0 or theta1 < 0 or r < 0:
        raise ValueError("inputs must be nonnegative")
    level = r * (Gamma + SPREAD * theta1)
    if r < SQRT5:
        return BoundValue(1.0, True, SQRT5, level)
    # sqrt(2 pi) * standard normal upper tail, evaluated in log space
    val = 2.5 * math.e * math.sqrt(2.0 * math.pi) * math.exp(float(log_ndtr(-r)))
    return BoundValue(min(1.0, val), False, SQRT5, level)


def gaussian_tail_integral(a: float) -> float:
    """int_1^inf e^{-a s^2} ds."""
    return 0.5 * math.sqrt(math.pi / a) * float(erfc(math.sqrt(a)))


def theta_of(deltas) -> float:
    """sum delta_i^2 log(e + 1/delta_i); terms with delta_i = 0 vanish by continuity."""
    d = np.asarray(deltas, dtype=float)
    pos = d[d > 0]
    return float(np.sum(pos ** 2 * np.log(math.e + 1.0 / pos)))


def lambda_tilde_of(deltas, theta: float) -> float:
    d = np.asarray(deltas, dtype=float)
    pos = d[d > 0]
    if pos.size == 0 or theta == 0:
        return math.inf
    return float(np.min(np.log(math.e + 1.0 / pos)) / (2.0 * theta))


@dataclass
class FerniqueCoeffs:
    gammas: np.ndarray
    phi_coeffs: np.ndarray
    phi_exponent: float
    deltas: np.ndarray
    theta: float
    lambda_tilde: float
    series_converges: bool = True
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_deltas(cls, deltas) -> "FerniqueCoeffs":
        """Coefficients determined by prescribed delta_i alone (unit-scale hook)."""
        d = np.atleast_1d(np.asarray(deltas, dtype=float))
        if np.any(d < 0):
            raise ValueError("delta_i must be nonnegative")
        theta = theta_of(d)
        return cls(gammas=d.copy(), phi_coeffs=np.zeros_like(d), phi_exponent=0.0, deltas=d,
                   theta=theta, lambda_tilde=lambda_tilde_of(d, theta))

    @property
    def phi_envelope(self):
        return [(float(c), self.phi_exponent) for c in self.phi_coeffs]

    def key_values(self) -> list[str]:
        out = [f"theta={fmt17(self.theta)}", f"lambda_tilde={fmt17(self.lambda_tilde)}",
               f"series_converges={str(self.series_converges).lower()}",
               f"phi_exponent={fmt17(self.phi_exponent)}"]
        out += [f"{k}={fmt17(v)}" for k, v in self.meta.items()]
        for i, (g, c, d) in enumerate(zip(self.gammas, self.phi_coeffs, self.deltas), 1):
            out.append(f"mode_{i}.gamma={fmt17(g)}")
            out.append(f"mode_{i}.phi_coeff={fmt17(c)}")
            out.append(f"mode_{i}.delta={fmt17(d)}")
        return out


def holder_c1(delta_reg: float, r0: float) -> float:
    """Constant c1 with E|gamma_i(t)-gamma_i(t')|^2 <= c1 |t-t'|^{delta/2} s_i^2 / lambda_i^{1-delta/2}."""
    cq = holder_constant(delta_reg / 4.0)
    ch = holder_constant(delta_reg / 2.0)
    return 0.5 * (cq ** 2 * r0 ** (delta_reg / 2.0) + ch * (2.0 * r0) ** (delta_reg / 2.0))


def compute_coeffs(spec: SpectralData, delta_reg: float, r0: float, t0: float) -> FerniqueCoeffs:
    """Coefficients for the window process gamma(t) = Z((t0 - t r0)^+), t in [0, 1].

    The envelopes do not depend on t0; it is kept for the record.
    """
    if not 0 < delta_reg < 1:
        raise ValueError("delta_reg must lie in (0, 1)")
    if not r0 > 0 or t0 < 0:
        raise ValueError("r0 must be positive and t0 nonnegative")
    lam, s = spec.eigenvalues, spec.noise_coeffs
    gammas = s / np.sqrt(2.0 * lam)
    c1 = holder_c1(delta_reg, r0)
    expo = delta_reg / 4.0
    phi_c = math.sqrt(c1) * s / lam ** (0.5 - expo)
    integral = gaussian_tail_integral(expo)
    deltas = gammas + SPREAD * phi_c * integral
    theta = theta_of(deltas)
    converges = True
    law = spec.tail_law
    if law is not None and law.b > 0:
        # delta_i ~ i^{q - p(1/2 - delta/4)}; squares times a log are summable iff
        # the squared exponent is below -1
        converges = 2.0 * (law.q - law.p * (0.5 - expo)) < -1.0
    return FerniqueCoeffs(gammas=gammas, phi_coeffs=phi_c, phi_exponent=expo, deltas=deltas,
                          theta=theta, lambda_tilde=lambda_tilde_of(deltas, theta),
                          series_converges=converges,
                          meta={"c1_holder": c1, "gauss_integral": integral, "r0": r0,
                                "t0": t0, "delta_reg": delta_reg})


def tail_threshold(coeffs: FerniqueCoeffs, lam: float) -> float:
    """Smallest r^2 for which the explicit bound applies."""
    if coeffs.theta == 0 or math.isinf(coeffs.lambda_tilde):
        return 0.0
    lt = coeffs.lambda_tilde
    return 5.0 * coeffs.theta * lt / (lt - lam)


def tail_bound(coeffs: FerniqueCoeffs, lam: float, r: float) -> BoundValue:
    """c1 e^{-lam r^2} sum_i exp(-r^2 (log(e + 1/delta_i)/(2 theta) - lam)).

    Below the threshold the bound is returned as the vacuous value 1.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    if lam >= coeffs.lambda_tilde:
        raise ValueError(f"lam={lam} must be below lambda_tilde={coeffs.lambda_tilde}")
    if r < 0:
        raise ValueError("r must be nonnegative")
    thr = tail_threshold(coeffs, lam)
    r2 = r * r
    if r2 < thr:
        return BoundValue(1.0, True, thr)
    d = coeffs.deltas[coeffs.deltas > 0]
    if d.size == 0:
        return BoundValue(0.0, False, thr)
    expo = -lam * r2 - r2 * (np.log(math.e + 1.0 / d) / (2.0 * coeffs.theta) - lam)
    return BoundValue(float(C1_TAIL * np.sum(np.exp(expo))), False, thr)


def ou_window_scale(lam: float, s: float, r0: float) -> tuple[float, float]:
    """(Gamma, theta1) of a stationary OU mode read over a window of length r0.

    phi(r)^2 = 2 v (1 - e^{-lam r0 r}) with v = s^2/(2 lam); theta1 =
    int_1^inf phi(e^{-u^2}) du.
    """
    v = s * s / (2.0 * lam)
    gamma = math.sqrt(v)

    def phi_at(u):
        return math.sqrt(2.0 * v * -math.expm1(-lam * r0 * math.exp(-u * u)))

    theta1, _ = quad(phi_at, 1.0, math.inf, epsabs=1e-14, epsrel=1e-12)
    return gamma, theta1


def sample_window_sups(spec: SpectralData, t0: float, r0: float, M: int, seed: int,
                       m: int = 64, chunk: int = 4096, workers: int = 1) -> np.ndarray:
    """Grid sup over the window of |Z|, one value per sample path.

    Blocks are independent (per-path streams), so ``workers`` threads give the
    same result as one.
    """
    out = np.empty(M)

    def fill(block):
        seg = stoch_conv_segments(spec, t0, r0, m, seed, block)
        out[block.start:block.stop] = np.linalg.norm(seg, axis=-1).max(axis=-1)

    blocks = list(chunks(M, chunk))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    else:
        for block in blocks:
            fill(block)
    return out


@dataclass
class TailReport:
    r_grid: np.ndarray
    bound: np.ndarray
    vacuous: np.ndarray
    counts: np.ndarray
    M: int
    wilson_lower: np.ndarray
    wilson_upper: np.ndarray
    verdict: np.ndarray
    lam: float = math.nan

    @property
    def empirical(self) -> np.ndarray:
        return self.counts / self.M

    @property
    def dominated(self) -> bool:
        return bool(np.all(self.verdict))

    @property
    def consistent(self) -> np.ndarray:
        """bound >= Wilson lower bound: the data do not refute the bound."""
        return self.bound >= self.wilson_lower

    def to_csv(self, path) -> None:
        rows = [(r, b, e, wu, bool(v), int(c), wl, bool(vac), bool(cons))
                for r, b, e, wu, v, c, wl, vac, cons in
                zip(self.r_grid, self.bound, self.empirical, self.wilson_upper, self.verdict,
                    self.counts, self.wilson_lower, self.vacuous, self.consistent)]
        header = ["r", "bound", "empirical", "wilson_upper", "verdict", "count",
                  "wilson_lower", "vacuous", "consistent"]
        write_csv(path, header, rows)


def tail_report(sups: np.ndarray, r_grid, bound_fn, lam: float = math.nan) -> TailReport:
    """Exceedance counts of ``sups`` over ``r_grid`` against ``bound_fn(r) -> BoundValue``."""
    sups = np.asarray(sups, dtype=float)
    M = sups.size
    if M < MIN_SAMPLES:
        raise ValueError(f"need at least {MIN_SAMPLES} samples, got {M}")
    r_grid = np.sort(np.asarray(r_grid, dtype=float))
    srt = np.sort(sups)
    counts = M - np.searchsorted(srt, r_grid, side="left")
    lo, hi = proportion_confint(counts, M, alpha=0.05, method="wilson")
    lo, hi = np.atleast_1d(lo).astype(float), np.atleast_1d(hi).astype(float)
    vals = [bound_fn(r) for r in r_grid]
    bound = np.array([v.value for v in vals])
    vac = np.array([v.vacuous for v in vals])
    verdict = vac | (bound >= hi)
    return TailReport(r_grid, bound, vac, counts, M, lo, hi, verdict, lam)


def empirical_sup_tail(spec: SpectralData, t0: float, r0: float, M: int, r_grid, seed: int,
                       delta_reg: float = 0.2, lam: float | None = None, m: int = 64,
                       coeffs: FerniqueCoeffs | None = None, workers: int = 1) -> TailReport:
    """Empirical tail of sup_t |gamma(t)| against the explicit bound at rate ``lam``.

    ``lam`` defaults to 0.9 lambda_tilde.
    """
    if M < MIN_SAMPLES:
        raise ValueError(f"M must be at least {MIN_SAMPLES}")
    if coeffs is None:
        coeffs = compute_coeffs(spec, delta_reg, r0, t0)
    if lam is None:
        lam = 0.9 * coeffs.lambda_tilde if math.isfinite(coeffs.lambda_tilde) else 1.0
    sups = sample_window_sups(spec, t0, r0, M, seed, m, workers=workers)
    return tail_report(sups, r_grid, lambda r: tail_bound(coeffs, lam, r), lam)


__all__ = [
    "BoundValue", "holder_constant", "one_dim_fernique_bound", "gaussian_tail_integral",
    "theta_of", "lambda_tilde_of", "FerniqueCoeffs", "holder_c1", "compute_coeffs",
    "tail_threshold", "tail_bound", "ou_window_scale", "sample_window_sups", "TailReport",
    "tail_report", "empirical_sup_tail", "C1_TAIL",
]
