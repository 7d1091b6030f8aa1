"""Matrix exponentials, phi-functions and exact OU step coefficients."""
from __future__ import annotations

import math

import numpy as np
from scipy.linalg import expm as _expm

SMALL_RATE = 1e-8


def is_diagonal(a: np.ndarray) -> bool:
    a = np.asarray(a)
    return a.ndim == 2 and np.count_nonzero(a - np.diag(np.diagonal(a))) == 0


def expm(a: np.ndarray) -> np.ndarray:
    """exp(a); scaling-and-squaring Pade(13) with a diagonal fast path."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if is_diagonal(a):
        return np.diag(np.exp(np.diagonal(a)))
    return _expm(a)


def scalar_phi(k: int, z):
    """phi_k(z) = sum_j z^j/(j+k)! evaluated elementwise."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    small = np.abs(z) < 0.5
    if np.any(small):
        zs = z[small]
        acc = np.zeros_like(zs)
        term = np.full_like(zs, 1.0 / math.factorial(k))
        for j in range(25):
            acc += term
            term = term * zs / (j + k + 1)
        out[small] = acc
    big = ~small
    if np.any(big):
        zb = z[big]
        val = np.exp(zb)
        for j in range(1, k + 1):
            val = (val - 1.0 / math.factorial(j - 1)) / zb
        out[big] = val
    return out


def phi_matrices(a: np.ndarray, h: float, order: int) -> list[np.ndarray]:
    """[phi_0(hA), ..., phi_order(hA)] via one augmented exponential."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    n = a.shape[0]
    if is_diagonal(a):
        z = h * np.diagonal(a)
        return [np.diag(scalar_phi(k, z)) for k in range(order + 1)]
    size = n * (order + 1)
    big = np.zeros((size, size))
    big[:n, :n] = h * a
    for k in range(order):
        big[k * n:(k + 1) * n, (k + 1) * n:(k + 2) * n] = np.eye(n)
    e = _expm(big)
    return [e[:n, k * n:(k + 1) * n] for k in range(order + 1)]


def decay_coeff(lam, dt: float):
    """(1 - exp(-lam dt)) / lam, with the dt limit for tiny lam*dt."""
    lam = np.asarray(lam, dtype=float)
    x = lam * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        full = -np.expm1(-x) / lam
    series = dt * (1.0 - 0.5 * x)
    return np.where(np.abs(x) < SMALL_RATE, series, full)


def ou_step_std(lam, dt: float):
    """Standard deviation of int_0^dt exp(-lam (dt-s)) dW(s)."""
    lam = np.asarray(lam, dtype=float)
    x = 2.0 * lam * dt
    with np.errstate(divide="ignore", invalid="ignore"):
        full = -np.expm1(-x) / (2.0 * lam)
    series = dt * (1.0 - 0.5 * x)
    return np.sqrt(np.where(np.abs(x) < SMALL_RATE, series, full))


def ou_variance(lam, s, t):
    """Variance of a unit-started-at-zero OU mode after time t."""
    lam = np.asarray(lam, dtype=float)
    return np.asarray(s, dtype=float) ** 2 * ou_step_std(lam, t) ** 2


def op_norm(a: np.ndarray) -> float:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.size == 0:
        return 0.0
    return float(np.linalg.norm(a, 2))
