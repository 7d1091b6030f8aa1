"""Delay drift functionals b acting on discretized segments.

A segment is stored as an array of shape ``(..., m+1, D)``; row ``j`` holds the
value at ``theta = -r0 + j*dt`` so row ``m`` is the present.  Every drift maps
such an array to ``(..., D_out)`` and reports an operator-norm Lipschitz bound
with respect to the grid sup-norm.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import op_norm


class GridMismatch(ValueError):
    pass


@dataclass(frozen=True)
class SegmentGrid:
    r0: float
    m: int = 64

    def __post_init__(self):
        if not self.r0 > 0:
            raise ValueError("r0 must be positive")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")

    @property
    def dt(self) -> float:
        return self.r0 / self.m

    @property
    def theta_nodes(self) -> np.ndarray:
        return -self.r0 + self.dt * np.arange(self.m + 1)

    def node_index(self, theta: float) -> int:
        """Row index of ``theta`` in [-r0, 0]; it must sit on a node."""
        if theta > 1e-12 * self.r0 or theta < -self.r0 * (1 + 1e-12):
            raise GridMismatch(f"theta={theta} outside [-r0, 0]")
        steps = -theta / self.dt
        k = int(round(steps))
        if abs(steps - k) > 1e-9 * max(1.0, steps):
            raise GridMismatch(f"theta={theta} is not a grid node (dt={self.dt})")
        return self.m - k


def _as_matrix(c, dim_in: int | None = None) -> np.ndarray:
    c = np.asarray(c, dtype=float)
    if c.ndim == 0:
        if dim_in is None:
            raise ValueError("scalar coefficient needs a dimension")
        return float(c) * np.eye(dim_in)
    return np.atleast_2d(c)


@dataclass
class DiscreteDelay:
    """b(xi) = offset + sum_k C_k xi(-tau_k)."""

    delays: list
    matrices: list
    offset: np.ndarray | None = None
    kind: str = field(default="discrete", init=False)

    def __post_init__(self):
        if len(self.delays) != len(self.matrices):
            raise ValueError("one coefficient matrix per delay")
        if any(t < 0 for t in self.delays):
            raise ValueError("delays must be nonnegative")

    def _mats(self, dim_in):
        return [_as_matrix(c, dim_in) for c in self.matrices]

    def lipschitz(self, dim_in: int | None = None) -> float:
        return float(sum(op_norm(c) for c in self._mats(dim_in or 1)))

    def evaluate(self, values: np.ndarray, grid: SegmentGrid) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        _check_rows(values, grid)
        dim_in = values.shape[-1]
        out = None
        for tau, c in zip(self.delays, self._mats(dim_in)):
            term = values[..., grid.node_index(-tau), :] @ c.T
            out = term if out is None else out + term
        if out is None:
            out = np.zeros(values.shape[:-2] + (dim_in,))
        if self.offset is not None:
            out = out + np.asarray(self.offset, dtype=float)
        return out

    def to_dict(self):
        d = {"kind": self.kind, "delays": [float(t) for t in self.delays],
             "matrices": [np.asarray(c, dtype=float).tolist() for c in self.matrices]}
        if self.offset is not None:
            d["offset"] = np.asarray(self.offset, dtype=float).tolist()
        return d


@dataclass
class DistributedDelay:
    """b(xi) = gain * sum_k w_k xi(theta_k), a signed atomic measure of mass <= 1."""

    atoms: list
    weights: list
    gain: float
    kind: str = field(default="distributed", init=False)

    def __post_init__(self):
        if len(self.atoms) != len(self.weights):
            raise ValueError("one weight per atom")
        if sum(abs(w) for w in self.weights) > 1 + 1e-12:
            raise ValueError("total variation of the delay measure exceeds 1")
        if self.gain < 0:
            raise ValueError("gain must be nonnegative")

    def lipschitz(self, dim_in: int | None = None) -> float:
        return float(self.gain * sum(abs(w) for w in self.weights))

    def evaluate(self, values: np.ndarray, grid: SegmentGrid) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        _check_rows(values, grid)
        out = np.zeros(values.shape[:-2] + values.shape[-1:])
        for theta, w in zip(self.atoms, self.weights):
            out = out + w * values[..., grid.node_index(theta), :]
        return self.gain * out

    def to_dict(self):
        return {"kind": self.kind, "atoms": [float(a) for a in self.atoms],
                "weights": [float(w) for w in self.weights], "gain": float(self.gain)}


@dataclass
class SupForm:
    """b(xi) = direction * max_j <xi(theta_j), g(theta_j)>.

    ``g`` is either one vector used at every node or an ``(m+1, D)`` array.
    The scalar sup is embedded along ``direction`` (a unit vector).
    """

    g: np.ndarray
    direction: np.ndarray
    kind: str = field(default="sup", init=False)

    def __post_init__(self):
        self.g = np.asarray(self.g, dtype=float)
        self.direction = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-12:
            raise ValueError("direction must be a unit vector")

    def lipschitz(self, dim_in: int | None = None) -> float:
        g = np.atleast_2d(self.g)
        return float(np.max(np.linalg.norm(g, axis=-1)))

    def evaluate(self, values: np.ndarray, grid: SegmentGrid) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        _check_rows(values, grid)
        if self.g.ndim == 2 and self.g.shape[0] != grid.m + 1:
            raise GridMismatch("weight function g has the wrong number of nodes")
        inner = np.sum(values * self.g, axis=-1)
        return inner.max(axis=-1)[..., None] * self.direction

    def to_dict(self):
        return {"kind": self.kind, "g": self.g.tolist(), "direction": self.direction.tolist()}


def _check_rows(values, grid):
    if values.ndim < 2 or values.shape[-2] != grid.m + 1:
        raise GridMismatch(f"segment has {values.shape[-2] if values.ndim >= 2 else 0} "
                           f"nodes, grid expects {grid.m + 1}")


@dataclass
class PairDrift:
    """b(xi, eta) = x_part(xi) + y_part(eta) for the degenerate system."""

    x_part: object | None
    y_part: object | None
    K1: float
    K2: float
    kind: str = field(default="pair", init=False)

    def lipschitz(self, n1: int, n2: int) -> tuple[float, float]:
        k1 = self.x_part.lipschitz(n1) if self.x_part is not None else 0.0
        k2 = self.y_part.lipschitz(n2) if self.y_part is not None else 0.0
        return k1, k2

    def evaluate(self, xvals, yvals, grid: SegmentGrid) -> np.ndarray:
        yvals = np.asarray(yvals, dtype=float)
        out = np.zeros(yvals.shape[:-2] + yvals.shape[-1:])
        if self.x_part is not None:
            out = out + self.x_part.evaluate(xvals, grid)
        if self.y_part is not None:
            out = out + self.y_part.evaluate(yvals, grid)
        return out

    def to_dict(self):
        return {"kind": self.kind, "K1": float(self.K1), "K2": float(self.K2),
                "x_part": None if self.x_part is None else self.x_part.to_dict(),
                "y_part": None if self.y_part is None else self.y_part.to_dict()}


@dataclass
class JointSupForm:
    """b(xi, eta) = ||K1 xi + K2 eta||_inf * direction (needs n1 == n2)."""

    K1: float
    K2: float
    direction: np.ndarray
    kind: str = field(default="joint_sup", init=False)

    def __post_init__(self):
        self.direction = np.asarray(self.direction, dtype=float)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-12:
            raise ValueError("direction must be a unit vector")

    def lipschitz(self, n1: int, n2: int) -> tuple[float, float]:
        return float(self.K1), float(self.K2)

    def evaluate(self, xvals, yvals, grid: SegmentGrid) -> np.ndarray:
        xvals = np.asarray(xvals, dtype=float)
        yvals = np.asarray(yvals, dtype=float)
        if xvals.shape[-1] != yvals.shape[-1]:
            raise ValueError("joint sup form needs n1 == n2")
        _check_rows(xvals, grid)
        _check_rows(yvals, grid)
        comb = self.K1 * xvals + self.K2 * yvals
        sup = np.linalg.norm(comb, axis=-1).max(axis=-1)
        return sup[..., None] * self.direction

    def to_dict(self):
        return {"kind": self.kind, "K1": float(self.K1), "K2": float(self.K2),
                "direction": self.direction.tolist()}


def drift_from_dict(d: dict | None):
    if d is None:
        return None
    d = dict(d)
    kind = d.pop("kind")
    if kind == "discrete":
        return DiscreteDelay(d["delays"], d["matrices"], d.get("offset"))
    if kind == "distributed":
        return DistributedDelay(d["atoms"], d["weights"], d["gain"])
    if kind == "sup":
        return SupForm(d["g"], d["direction"])
    if kind == "pair":
        return PairDrift(drift_from_dict(d.get("x_part")), drift_from_dict(d.get("y_part")),
                         d["K1"], d["K2"])
    if kind == "joint_sup":
        return JointSupForm(d["K1"], d["K2"], d["direction"])
    raise ValueError(f"unknown drift kind {kind!r}")
