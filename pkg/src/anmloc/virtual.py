"""Block-Hankel virtual channel matrix built from the sub-carrier channels.

Block ``(i, j)`` (1-based) of the ``M*N_r x M*N_t`` virtual matrix is the
channel of sub-carrier ``i + j - 2``. The N generating blocks are the stored
state; the dense matrix is only materialized on request.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import block_diag

from .geometry import ChannelParams
from .signal import SystemConfig, angle_freq, channel_blocks, check_delay, delay_freq, fourier_vec


def antidiagonal_counts(m: int) -> np.ndarray:
    """How many ``(i, j)`` block positions of an ``m x m`` grid share ``i + j = n``."""
    n = np.arange(2 * m - 1)
    return np.minimum(n + 1, 2 * m - 1 - n)


@dataclass(frozen=True)
class VirtualChannelMatrix:
    blocks: np.ndarray  # (N, N_r, N_t)

    def __post_init__(self):
        b = np.asarray(self.blocks, dtype=complex)
        if b.ndim != 3 or b.shape[0] % 2 == 0:
            raise ValueError(f"expected an odd number of 2-D blocks, got shape {b.shape}")
        object.__setattr__(self, "blocks", b)

    @property
    def m(self) -> int:
        return (self.blocks.shape[0] + 1) // 2

    @property
    def shape(self):
        _, r, t = self.blocks.shape
        return self.m * r, self.m * t

    def block(self, i: int, j: int) -> np.ndarray:
        """Block ``(i, j)`` with 1-based indices."""
        return self.blocks[i + j - 2]

    def materialize(self) -> np.ndarray:
        m = self.m
        _, r, t = self.blocks.shape
        idx = np.add.outer(np.arange(m), np.arange(m))
        return self.blocks[idx].transpose(0, 2, 1, 3).reshape(m * r, m * t)

    def __add__(self, other: "VirtualChannelMatrix") -> "VirtualChannelMatrix":
        return VirtualChannelMatrix(self.blocks + other.blocks)

    def __mul__(self, a) -> "VirtualChannelMatrix":
        return VirtualChannelMatrix(a * self.blocks)

    __rmul__ = __mul__


def virtual_gains(gains, sys: SystemConfig) -> np.ndarray:
    """Atom weights of the virtual matrix, ``M * gamma_k``."""
    return sys.m * np.asarray(gains, dtype=complex)


def atom_rx(tau, theta_rx, sys: SystemConfig) -> np.ndarray:
    """Unit-norm receive-side atom ``a_M(tau/(N T_s)) kron alpha(theta_rx)``."""
    return np.kron(fourier_vec(sys.m, delay_freq(tau, sys)), fourier_vec(sys.n_rx, angle_freq(theta_rx, sys)))


def atom_tx(tau, theta_tx, sys: SystemConfig) -> np.ndarray:
    """Unit-norm transmit-side atom ``a_M(-tau/(N T_s)) kron beta(theta_tx)``."""
    return np.kron(fourier_vec(sys.m, -delay_freq(tau, sys)), fourier_vec(sys.n_tx, angle_freq(theta_tx, sys)))


def build_virtual(params: ChannelParams, sys: SystemConfig) -> VirtualChannelMatrix:
    if params.n_paths:
        check_delay(params.toas, sys)
    return VirtualChannelMatrix(channel_blocks(params, sys))


def build_virtual_dense(params: ChannelParams, sys: SystemConfig) -> np.ndarray:
    """Dense virtual matrix as a sum of weighted rank-one atoms (independent of the block route)."""
    check_delay(params.toas, sys)
    out = np.zeros((sys.m * sys.n_rx, sys.m * sys.n_tx), dtype=complex)
    for path, l in zip(params.paths, virtual_gains(params.gains, sys)):
        out += l * np.outer(atom_rx(path.toa, path.aoa, sys), atom_tx(path.toa, path.aod, sys).conj())
    return out


def automorphism_g(v: VirtualChannelMatrix) -> np.ndarray:
    """Block-diagonal stacked channel ``diag(H^(0), ..., H^(N-1))``."""
    return block_diag(*v.blocks)


def hankel_average(raw: np.ndarray, n_rx: int, n_tx: int) -> VirtualChannelMatrix:
    """Euclidean projection of a dense matrix onto block-Hankel matrices."""
    rows, cols = raw.shape
    m = rows // n_rx
    if rows != m * n_rx or cols != m * n_tx:
        raise ValueError(f"shape {raw.shape} incompatible with {n_rx}x{n_tx} blocks")
    grid = raw.reshape(m, n_rx, m, n_tx).transpose(0, 2, 1, 3)
    sums = np.zeros((2 * m - 1, n_rx, n_tx), dtype=complex)
    idx = np.add.outer(np.arange(m), np.arange(m)).ravel()
    np.add.at(sums, idx, grid.reshape(m * m, n_rx, n_tx))
    return VirtualChannelMatrix(sums / antidiagonal_counts(m)[:, None, None])
