"""Atomic-norm denoising of the virtual channel matrix by ADMM.

Solves::

    minimize    eps/2 * tr(J) + 1/2 * sum_n ||Y[n] - H[n] S[n]||_F^2
    subject to  J = [[T2(u), Hv], [Hv^H, T2(v)]] >= 0

with ``Hv`` block-Hankel in the sub-carrier blocks ``H[n]``. The Hankel
constraint holds by construction because only the blocks are variables.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .signal import SystemConfig
from .toeplitz import Toeplitz2Param, lag_multiplicity, toeplitz2, toeplitz2_adjoint
from .virtual import VirtualChannelMatrix, antidiagonal_counts, hankel_average

log = logging.getLogger(__name__)

# Chosen by `anmloc calibrate-epsilon` (reference scene, 10 dB, 20 trials, base 0.08): best median TOA RMSE.
DEFAULT_EPSILON_SCALE = 0.04


RHO_FLOOR = 1e-8
BALANCE = 10.0
ADAPT_UNTIL = 2000


class ConvergenceWarning(UserWarning):
    pass


@dataclass
class SolverSettings:
    epsilon: float
    rho: float = 1.0
    max_iter: int = 5000
    tol_abs: float | None = None
    tol_rel: float = 1e-6
    relax: float = 1.0
    adaptive: bool = True

    def __post_init__(self):
        if self.epsilon < 0 or self.rho <= 0 or self.max_iter < 1 or self.tol_rel <= 0:
            raise ValueError("solver settings must be positive")
        if self.tol_abs is not None and self.tol_abs <= 0:
            raise ValueError("tol_abs must be positive")


@dataclass
class Diagnostics:
    iterations: int
    primal_residual: float
    dual_residual: float
    objective: float
    converged: bool
    min_eig_ratio: float = float("nan")


@dataclass
class DenoiserSolution:
    u_hat: Toeplitz2Param
    v_hat: Toeplitz2Param
    h_v_hat: VirtualChannelMatrix
    diagnostics: Diagnostics
    scale: float = 1.0

    def j_matrix(self) -> np.ndarray:
        return assemble_j(self.u_hat, self.v_hat, self.h_v_hat.materialize())


def assemble_j(u: Toeplitz2Param, v: Toeplitz2Param, hv: np.ndarray) -> np.ndarray:
    return np.block([[toeplitz2(u), hv], [hv.conj().T, toeplitz2(v)]])


def epsilon_multiplier(sys: SystemConfig) -> float:
    dim = sys.m ** 2 * sys.n_rx * sys.n_tx
    return math.sqrt(dim * math.log(dim))


def default_epsilon(sigma: float, sys: SystemConfig, scale: float = DEFAULT_EPSILON_SCALE) -> float:
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return scale * sigma * epsilon_multiplier(sys)


def data_misfit(y: np.ndarray, pilots: np.ndarray, blocks: np.ndarray) -> float:
    return 0.5 * float(np.sum(np.abs(y - blocks @ pilots) ** 2))


def _psd_project(x: np.ndarray) -> np.ndarray:
    w, q = np.linalg.eigh(x)
    pos = w > 0
    qp = q[:, pos]
    return (qp * w[pos]) @ qp.conj().T


def solve_denoiser(y: np.ndarray, pilots: np.ndarray, sys: SystemConfig,
                   settings: SolverSettings) -> DenoiserSolution:
    """Atomic-norm denoiser of the virtual channel matrix.

    ``y`` is ``(N, N_r, G)`` and ``pilots`` ``(N, N_t, G)``. The problem is
    solved on a copy scaled to unit RMS data; the returned solution is in the
    caller's units and ``scale`` records the factor used.
    """
    n, nr, g = y.shape
    nt = pilots.shape[1]
    m = sys.m
    d1, d2 = m * nr, m * nt
    dim = d1 + d2
    if n != sys.n_sub or nr != sys.n_rx or nt != sys.n_tx or pilots.shape != (n, nt, g):
        raise ValueError("received signal and pilots do not match the system configuration")

    scale = float(np.linalg.norm(y) / math.sqrt(y.size))
    if scale == 0.0:
        zero = VirtualChannelMatrix(np.zeros((n, nr, nt), dtype=complex))
        diag = Diagnostics(0, 0.0, 0.0, 0.0, True, 0.0)
        return DenoiserSolution(Toeplitz2Param.zeros(m, nr), Toeplitz2Param.zeros(m, nt), zero, diag, 0.0)

    ys = y / scale
    eps = settings.epsilon / scale
    rho = settings.rho * max(eps, RHO_FLOOR)
    tol_abs = settings.tol_abs if settings.tol_abs is not None else 1e-7 * math.sqrt(dim)
    tol_rel = settings.tol_rel

    counts = antidiagonal_counts(m)
    ysh = ys @ pilots.conj().transpose(0, 2, 1)  # Y S^H, (N, N_r, N_t)
    gram = pilots @ pilots.conj().transpose(0, 2, 1)  # S S^H, (N, N_t, N_t)
    eye = np.eye(nt)
    def ridge_inverse(rho):
        return np.linalg.inv(gram + 2 * rho * counts[:, None, None] * eye)

    inv = ridge_inverse(rho)

    mult_u = lag_multiplicity(m, nr)
    mult_v = lag_multiplicity(m, nt)
    zu = (m - 1, nr - 1)
    zv = (m - 1, nt - 1)

    z = np.zeros((dim, dim), dtype=complex)
    lam = np.zeros((dim, dim), dtype=complex)
    blocks = np.zeros((n, nr, nt), dtype=complex)
    u = Toeplitz2Param.zeros(m, nr)
    v = Toeplitz2Param.zeros(m, nt)
    converged = False
    r_norm = s_norm = float("inf")
    it = 0
    for it in range(1, settings.max_iter + 1):
        t = z - lam / rho
        wbar = hankel_average(t[:d1, d1:], nr, nt).blocks
        blocks = (ysh + 2 * rho * counts[:, None, None] * wbar) @ inv

        au = toeplitz2_adjoint(t[:d1, :d1], m, nr).values / mult_u
        au[zu] = au[zu].real - eps / (2 * rho)
        u = Toeplitz2Param(m, nr, au).hermitian_part()
        av = toeplitz2_adjoint(t[d1:, d1:], m, nt).values / mult_v
        av[zv] = av[zv].real - eps / (2 * rho)
        v = Toeplitz2Param(m, nt, av).hermitian_part()

        hv = VirtualChannelMatrix(blocks).materialize()
        j = assemble_j(u, v, hv)
        z_old = z
        jr = settings.relax * j + (1 - settings.relax) * z_old
        z = _psd_project(jr + lam / rho)
        lam = lam + rho * (jr - z)

        r_norm = float(np.linalg.norm(j - z))
        s_norm = float(rho * np.linalg.norm(z - z_old))
        eps_pri = tol_abs + tol_rel * max(np.linalg.norm(j), np.linalg.norm(z))
        eps_dual = tol_abs + tol_rel * np.linalg.norm(lam)
        if r_norm <= eps_pri and s_norm <= eps_dual:
            converged = True
            break
        if settings.adaptive and it % 10 == 0 and it <= ADAPT_UNTIL:
            if r_norm > BALANCE * s_norm:
                rho *= 2.0
            elif s_norm > BALANCE * r_norm:
                rho /= 2.0
            else:
                continue
            inv = ridge_inverse(rho)

    objective = scale * (eps / 2 * float(np.trace(j).real)) + scale ** 2 * data_misfit(ys, pilots, blocks)
    eigs = np.linalg.eigvalsh(j)
    ratio = float(eigs[0] / eigs[-1]) if eigs[-1] > 0 else 0.0
    diag = Diagnostics(it, r_norm * scale, s_norm * scale, objective, converged, ratio)
    if not converged:
        warnings.warn(f"ADMM stopped at max_iter={settings.max_iter} (primal {r_norm:.2e}, dual {s_norm:.2e})",
                      ConvergenceWarning, stacklevel=2)
    log.debug("denoiser: %d iterations, primal %.3e, dual %.3e", it, r_norm, s_norm)
    return DenoiserSolution(scale * u, scale * v, VirtualChannelMatrix(scale * blocks), diag, scale)
