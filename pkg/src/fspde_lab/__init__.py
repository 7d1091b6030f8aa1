"""Simulation and verification tools for delay stochastic PDEs on a spectral
Galerkin truncation."""
from __future__ import annotations

__version__ = "0.1.0"

from .drifts import (DiscreteDelay, DistributedDelay, GridMismatch, JointSupForm, PairDrift,
                     SegmentGrid, SupForm)
from .spectral_model import (ConditionReport, DegenerateModel, NondegenerateModel, RateResult,
                             SpectralData, TailLaw, check_B4, check_degenerate_gap,
                             check_noise_regularity, compute_alpha, compute_lambda_prime,
                             compute_rate_lambda, dirichlet_lower_bound)
from .fspde_sim import (PathRecord, Segment, segment_sup_norm, simulate_degenerate,
                        simulate_nondegenerate, step_nondegenerate, stoch_conv_path)

__all__ = [
    "__version__", "DiscreteDelay", "DistributedDelay", "GridMismatch", "JointSupForm",
    "PairDrift", "SegmentGrid", "SupForm", "ConditionReport", "DegenerateModel",
    "NondegenerateModel", "RateResult", "SpectralData", "TailLaw", "check_B4",
    "check_degenerate_gap", "check_noise_regularity", "compute_alpha", "compute_lambda_prime",
    "compute_rate_lambda", "dirichlet_lower_bound", "PathRecord", "Segment", "segment_sup_norm",
    "simulate_degenerate", "simulate_nondegenerate", "step_nondegenerate", "stoch_conv_path",
]
