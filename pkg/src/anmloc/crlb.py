"""Numerical Cramér-Rao bounds for the channel parameters and the scene geometry.

Parameter ordering of the channel-domain Fisher matrix::

    (toa_0..toa_K, aod_0..aod_K, aoa_0..aoa_K, Re g_0..Re g_K, Im g_0..Im g_K)

and of the geometry-domain one::

    (p_x, p_y, orientation, s_1x, s_1y, ..., Re g_0..Re g_K, Im g_0..Im g_K)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .geometry import ChannelParams, SceneConfig, forward_map, wrap_angle
from .localize import eta_steps
from .signal import SystemConfig, channel_blocks
from .vandermonde import gain_design


class SingularFisherError(np.linalg.LinAlgError):
    pass


@dataclass
class FisherMatrix:
    ordering: List[str]
    matrix: np.ndarray

    @property
    def n_paths(self) -> int:
        return len(self.ordering) // 5


def channel_ordering(n: int) -> List[str]:
    names = []
    for kind in ("toa", "aod", "aoa", "re_gain", "im_gain"):
        names += [f"{kind}_{k}" for k in range(n)]
    return names


def _mean(eta: np.ndarray, gains: np.ndarray, pilots: np.ndarray, sys: SystemConfig) -> np.ndarray:
    return (channel_blocks(ChannelParams.from_eta(eta, gains), sys) @ pilots).ravel()


def mean_jacobian(params: ChannelParams, pilots: np.ndarray, sys: SystemConfig) -> np.ndarray:
    """Derivatives of the noiseless signal w.r.t. every channel parameter, one column each."""
    eta = params.eta()
    h = eta_steps(params.n_paths, sys)
    cols = []
    for i in range(eta.size):
        e = np.zeros_like(eta)
        e[i] = h[i]
        cols.append((_mean(eta + e, params.gains, pilots, sys) - _mean(eta - e, params.gains, pilots, sys)) / (2 * h[i]))
    b = gain_design(params, pilots, sys)
    return np.concatenate([np.stack(cols, axis=1), b, 1j * b], axis=1)


def fim_channel(params: ChannelParams, pilots: np.ndarray, sys: SystemConfig) -> FisherMatrix:
    """Fisher information of the channel parameters under circular Gaussian noise of variance ``sys.noise_var``."""
    if sys.noise_var <= 0:
        raise ValueError("Fisher information needs a positive noise variance")
    d = mean_jacobian(params, pilots, sys)
    fim = (2.0 / sys.noise_var) * np.real(d.conj().T @ d)
    return FisherMatrix(channel_ordering(params.n_paths), 0.5 * (fim + fim.T))


def _safe_inverse(a: np.ndarray, names: List[str]) -> np.ndarray:
    scale = np.sqrt(np.abs(np.diag(a)))
    scale = np.where(scale > 0, scale, 1.0)
    a_n = a / np.outer(scale, scale)
    w, q = np.linalg.eigh(a_n)
    if w[0] <= 1e-13 * w[-1]:
        null = q[:, 0]
        top = np.argsort(-np.abs(null))[:3]
        desc = ", ".join(f"{names[i]}={null[i]:+.2f}" for i in top)
        raise SingularFisherError(f"Fisher matrix is singular along ({desc})")
    return np.linalg.inv(a_n) / np.outer(scale, scale)


@dataclass
class ChannelBounds:
    toa: np.ndarray
    aod: np.ndarray
    aoa: np.ndarray


def crlb_channel(fim: FisherMatrix) -> ChannelBounds:
    """Square roots of the diagonal of the inverse full Fisher matrix."""
    n = fim.n_paths
    sd = np.sqrt(np.diag(_safe_inverse(fim.matrix, fim.ordering)))
    return ChannelBounds(sd[:n], sd[n:2 * n], sd[2 * n:3 * n])


def geometry_jacobian(scene: SceneConfig, c: float, rel: float = 1e-6) -> np.ndarray:
    """``d eta / d (p, orientation, s_k)`` by central differences of the forward map."""
    x = scene.to_vector()
    cols = []
    for i in range(x.size):
        h = rel * max(1.0, abs(x[i]))
        e = np.zeros_like(x)
        e[i] = h
        plus = forward_map(SceneConfig.from_vector(x + e, scene.bs), c).eta()
        minus = forward_map(SceneConfig.from_vector(x - e, scene.bs), c).eta()
        diff = plus - minus
        n = len(diff) // 3
        diff[n:] = wrap_angle(diff[n:])
        cols.append(diff / (2 * h))
    return np.stack(cols, axis=1)


def geometry_ordering(n: int) -> List[str]:
    names = ["p_x", "p_y", "orientation"]
    for k in range(1, n):
        names += [f"s{k}_x", f"s{k}_y"]
    names += [f"re_gain_{k}" for k in range(n)] + [f"im_gain_{k}" for k in range(n)]
    return names


def transform_fim(fim: FisherMatrix, scene: SceneConfig, sys: SystemConfig) -> FisherMatrix:
    n = fim.n_paths
    geo = geometry_jacobian(scene, sys.c)
    t = np.zeros((5 * n, geo.shape[1] + 2 * n))
    t[:3 * n, :geo.shape[1]] = geo
    t[3 * n:, geo.shape[1]:] = np.eye(2 * n)
    return FisherMatrix(geometry_ordering(n), t.T @ fim.matrix @ t)


@dataclass
class LocationBounds:
    position: float
    orientation: float
    scatterers: np.ndarray  # per-scatterer sqrt(trace) of its 2x2 block
    covariance: np.ndarray


def crlb_location(fim: FisherMatrix, scene: SceneConfig, sys: SystemConfig) -> LocationBounds:
    tf = transform_fim(fim, scene, sys)
    cov = _safe_inverse(tf.matrix, tf.ordering)
    n = fim.n_paths
    scat = np.array([np.sqrt(cov[3 + 2 * k, 3 + 2 * k] + cov[4 + 2 * k, 4 + 2 * k]) for k in range(n - 1)])
    return LocationBounds(float(np.sqrt(cov[0, 0] + cov[1, 1])), float(np.sqrt(cov[2, 2])), scat, cov)
