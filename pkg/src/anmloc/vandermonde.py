"""Two-level Vandermonde decomposition, cross-side pairing and gain re-estimation."""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import ChannelParams, PathParams
from .signal import SystemConfig, angle_freq, channel_blocks, delay_freq
from .toeplitz import Toeplitz2Param, toeplitz2

COLLISION_TOL = 1e-6
PAIRING_COST_TOL = 0.05
MAX_COND = 1e12
# Mixing weight of the two shift operators in the joint eigendecomposition.
_PENCIL_MIX = 0.6180339887


class DecompositionError(ValueError):
    pass


class IdentifiabilityWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FrequencyPair:
    f1: float
    f2: float
    power: float


def wrap_unit(f):
    """Wrap onto (0, 1]."""
    w = np.mod(f, 1.0)
    return np.where(w == 0.0, 1.0, w)


def wrap_half(f):
    """Wrap onto (-1/2, 1/2]."""
    w = -np.mod(-np.asarray(f, dtype=float) + 0.5, 1.0) + 0.5
    return w


def circ_dist(a, b):
    d = np.abs(np.asarray(a) - np.asarray(b)) % 1.0
    return np.minimum(d, 1.0 - d)


def vandermonde_2level(m1: int, m2: int, f1, f2) -> np.ndarray:
    """Columns ``a_m1(f1_k) kron a_m2(f2_k)``, shape ``(m1*m2, r)``."""
    f1 = np.atleast_1d(f1)
    f2 = np.atleast_1d(f2)
    i = np.repeat(np.arange(m1), m2)
    a = np.tile(np.arange(m2), m1)
    return np.exp(-2j * np.pi * (np.outer(i, f1) + np.outer(a, f2))) / math.sqrt(m1 * m2)


def _shift_operator(e_lo: np.ndarray, e_hi: np.ndarray) -> np.ndarray:
    return np.linalg.lstsq(e_lo, e_hi, rcond=None)[0]


def decompose_2level(p: Toeplitz2Param, r: int) -> List[FrequencyPair]:
    """Recover ``r`` paired frequency atoms from a PSD 2-level Toeplitz matrix.

    The signal subspace is taken from the ``r`` leading eigenvectors; the
    level-1 and level-2 shift-invariance operators are diagonalized jointly so
    the two frequencies of each atom share an eigenvector and come out paired.
    """
    if r == 0:
        return []
    m1, m2 = p.m1, p.m2
    if r > min((m1 - 1) * m2, m1 * (m2 - 1)):
        raise DecompositionError(f"order {r} exceeds the shift-invariance limit of a {m1}x{m2} grid")
    t = toeplitz2(p)
    w, q = np.linalg.eigh(t)
    w, q = w[::-1], q[:, ::-1]
    if w[0] <= 0:
        raise DecompositionError("matrix has no positive eigenvalue; achievable rank 0")
    achievable = int(np.sum(w > 1e-12 * w[0]))
    if achievable < r:
        raise DecompositionError(f"numerical rank {achievable} is below the requested order {r}")
    if r < len(w) and w[r] > 1e-3 * w[r - 1]:
        warnings.warn(f"weak identifiability: eigenvalue {r + 1} is {w[r] / w[r - 1]:.2e} of eigenvalue {r}",
                      IdentifiabilityWarning, stacklevel=2)

    e = q[:, :r].reshape(m1, m2, r)
    psi1 = _shift_operator(e[:-1].reshape(-1, r), e[1:].reshape(-1, r))
    psi2 = _shift_operator(e[:, :-1].reshape(-1, r), e[:, 1:].reshape(-1, r))
    _, vecs = np.linalg.eig(psi1 + _PENCIL_MIX * psi2)
    inv = np.linalg.inv(vecs)
    phi1 = np.diag(inv @ psi1 @ vecs)
    phi2 = np.diag(inv @ psi2 @ vecs)
    f1 = wrap_unit(-np.angle(phi1) / (2 * np.pi))
    f2 = wrap_half(-np.angle(phi2) / (2 * np.pi))

    if r > 1:
        d = circ_dist(f1[:, None], f1[None, :])[np.triu_indices(r, 1)]
        if d.min() < COLLISION_TOL:
            raise DecompositionError(f"two atoms share the level-1 frequency (separation {d.min():.2e})")

    a = vandermonde_2level(m1, m2, f1, f2)
    ap = np.linalg.pinv(a)
    powers = np.maximum(np.real(np.diag(ap @ t @ ap.conj().T)), 0.0)
    order = np.argsort(f1)
    return [FrequencyPair(float(f1[k]), float(f2[k]), float(powers[k])) for k in order]


@dataclass(frozen=True)
class Triplet:
    delay: float
    rx: float
    tx: float


@dataclass
class PairingResult:
    triplets: List[Triplet]
    cost: float
    flagged: bool


def pair_sides(rx: Sequence[FrequencyPair], tx: Sequence[FrequencyPair],
               max_cost: float = PAIRING_COST_TOL) -> PairingResult:
    """Match receive-side and transmit-side atoms through their delay frequency.

    The transmit side carries the negated delay frequency, so ``rx.f1`` is
    compared with ``-tx.f1`` on the circle. The returned delay frequency is the
    circular mean of the two matched estimates.
    """
    if len(rx) != len(tx):
        raise ValueError("both sides must carry the same number of atoms")
    n = len(rx)
    if n == 0:
        return PairingResult([], 0.0, False)
    f_rx = np.array([a.f1 for a in rx])
    f_tx = wrap_unit(-np.array([a.f1 for a in tx]))
    cost = circ_dist(f_rx[:, None], f_tx[None, :])
    if n <= 6:
        best = min(itertools.permutations(range(n)), key=lambda perm: cost[np.arange(n), perm].sum())
        cols = np.array(best)
    else:
        _, cols = linear_sum_assignment(cost)
    total = float(cost[np.arange(n), cols].sum())
    triplets = []
    for i, j in enumerate(cols):
        z = np.exp(2j * np.pi * f_rx[i]) + np.exp(2j * np.pi * f_tx[j])
        delay = float(wrap_unit(np.angle(z) / (2 * np.pi)))
        triplets.append(Triplet(delay, rx[i].f2, tx[j].f2))
    flagged = bool(np.max(cost[np.arange(n), cols]) > max_cost)
    if flagged:
        warnings.warn(f"pairing cost {total:.3g} exceeds {max_cost} cycles per pair", IdentifiabilityWarning,
                      stacklevel=2)
    return PairingResult(triplets, total, flagged)


def params_from_freqs(triplets: Sequence[Triplet], sys: SystemConfig) -> ChannelParams:
    """Delays and principal-branch angles, sorted so the shortest delay comes first."""
    ratio = sys.wavelength / sys.antenna_spacing
    paths = []
    for t in triplets:
        s_rx, s_tx = t.rx * ratio, t.tx * ratio
        for s in (s_rx, s_tx):
            if abs(s) > 1 + 1e-9:
                raise ValueError(f"angle frequency maps to sin(theta) = {s:.6f}, outside [-1, 1]")
        paths.append(PathParams(t.delay * sys.delay_span,
                                math.asin(max(-1.0, min(1.0, s_tx))),
                                math.asin(max(-1.0, min(1.0, s_rx)))))
    paths.sort(key=lambda p: p.toa)
    return ChannelParams(paths)


def freqs_from_params(params: ChannelParams, sys: SystemConfig) -> List[Triplet]:
    return [Triplet(float(delay_freq(p.toa, sys)), float(angle_freq(p.aoa, sys)), float(angle_freq(p.aod, sys)))
            for p in params.paths]


def gain_design(params: ChannelParams, pilots: np.ndarray, sys: SystemConfig) -> np.ndarray:
    """Columns are the vectorized noiseless signal of each path with unit gain."""
    cols = []
    for k in range(params.n_paths):
        unit = ChannelParams([params.paths[k]], np.ones(1, dtype=complex))
        cols.append((channel_blocks(unit, sys) @ pilots).ravel())
    return np.stack(cols, axis=1)


def estimate_gains(params: ChannelParams, y: np.ndarray, pilots: np.ndarray, sys: SystemConfig) -> np.ndarray:
    """Least-squares channel coefficients for fixed delays and angles."""
    if params.n_paths > y.size:
        raise ValueError("more paths than observations")
    b = gain_design(params, pilots, sys)
    cond = np.linalg.cond(b)
    if not np.isfinite(cond) or cond > MAX_COND:
        raise np.linalg.LinAlgError(f"gain design is ill-conditioned (condition number {cond:.3e})")
    return np.linalg.lstsq(b, y.ravel(), rcond=None)[0]
