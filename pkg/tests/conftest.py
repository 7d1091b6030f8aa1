from __future__ import annotations

import numpy as np
import pytest

from fspde_lab.drifts import DiscreteDelay, DistributedDelay, PairDrift
from fspde_lab.spectral_model import DegenerateModel, NondegenerateModel, SpectralData

ACCEPTANCE: dict = {}


def record(criterion: str, passed: bool, detail: str = "") -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"criterion {criterion}: {'PASS' if passed else 'FAIL'} {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def key(k):
        digits = "".join(ch for ch in k if ch.isdigit())
        return (int(digits or 0), k)

    for k in sorted(ACCEPTANCE, key=key):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} {detail}")


def contraction_model(m: int = 64) -> NondegenerateModel:
    """lambda_i = 2 i^2, L = 0.5, r0 = 0.5, distributed linear delay."""
    spec = SpectralData(2.0 * np.arange(1, 5) ** 2, np.ones(4))
    drift = DistributedDelay([-0.5, -0.25], [0.5, 0.5], 0.5)
    return NondegenerateModel(spec, 0.2, drift, 0.5, 0.5, m)


def scalar_degenerate(r0: float = 0.25, m: int = 25, K1: float = 0.2,
                      K2: float = 0.1) -> DegenerateModel:
    spec = SpectralData([1.0], [1.0])
    drift = PairDrift(DiscreteDelay([r0], [[[K1]]]), DiscreteDelay([0.0], [[[K2]]]), K1, K2)
    return DegenerateModel(A1=[[-1.0]], A2_spectral=spec, B=[[1.0]], A0=[[0.0]], drift2=drift,
                           K1=K1, K2=K2, delta_drift=0.0, r0=r0, delta_reg=0.5, m=m)


def diagonal_degenerate(r0: float = 0.25, m: int = 250) -> DegenerateModel:
    """A1 = A2 = diag(-1, -2), B = I, A0 = 0, small linear delay drift."""
    spec = SpectralData([1.0, 2.0], [1.0, 0.5])
    drift = PairDrift(DiscreteDelay([r0], [0.1]), DiscreteDelay([0.0], [0.2]), 0.1, 0.2)
    return DegenerateModel(A1=np.diag([-1.0, -2.0]), A2_spectral=spec, B=np.eye(2),
                           A0=np.zeros((2, 2)), drift2=drift, K1=0.1, K2=0.2,
                           delta_drift=0.0, r0=r0, delta_reg=0.5, m=m)


def const(grid, vec):
    return np.tile(np.asarray(vec, dtype=float), (grid.m + 1, 1))


@pytest.fixture
def crit4_model():
    return contraction_model()


@pytest.fixture
def scalar_deg():
    return scalar_degenerate()
