"""End-to-end estimation: denoise, extract paths, re-estimate gains, localize."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .denoiser import DenoiserSolution, SolverSettings, default_epsilon, solve_denoiser
from .geometry import ChannelParams, Point2D
from .localize import LocalizationResult, WeightMatrix, hessian_weight, localize
from .signal import SystemConfig
from .vandermonde import PairingResult, decompose_2level, estimate_gains, pair_sides, params_from_freqs


@dataclass
class ChannelEstimate:
    params: ChannelParams  # sorted LOS-first, gains filled in
    denoiser: DenoiserSolution
    pairing: PairingResult


@dataclass
class EstimationReport:
    channel: ChannelEstimate
    weight: WeightMatrix
    location: LocalizationResult


def estimate_channel(y: np.ndarray, pilots: np.ndarray, sys: SystemConfig, settings: SolverSettings,
                     n_paths: Optional[int] = None) -> ChannelEstimate:
    n_paths = sys.n_paths if n_paths is None else n_paths
    sol = solve_denoiser(y, pilots, sys, settings)
    rx = decompose_2level(sol.u_hat, n_paths)
    tx = decompose_2level(sol.v_hat, n_paths)
    pairing = pair_sides(rx, tx)
    eta = params_from_freqs(pairing.triplets, sys)
    gains = estimate_gains(eta, y, pilots, sys)
    return ChannelEstimate(eta.with_gains(gains), sol, pairing)


def estimate(y: np.ndarray, pilots: np.ndarray, sys: SystemConfig, bs: Point2D,
             settings: Optional[SolverSettings] = None, weighting: str = "hessian") -> EstimationReport:
    """Run the full chain on one received block.

    ``weighting`` is ``"hessian"`` (curvature of the data fit) or ``"identity"``.
    Without explicit settings the regularization follows ``sys.noise_var``.
    """
    if settings is None:
        settings = SolverSettings(epsilon=default_epsilon(float(np.sqrt(sys.noise_var)), sys))
    ch = estimate_channel(y, pilots, sys, settings)
    if weighting == "hessian":
        weight = hessian_weight(ch.params, ch.params.gains, y, pilots, sys, settings.epsilon)
    elif weighting == "identity":
        weight = WeightMatrix.identity(ch.params.n_paths)
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    loc = localize(ch.params, weight, bs, sys)
    return EstimationReport(ch, weight, loc)
