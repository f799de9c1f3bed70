"""MIMO-OFDM system constants, steering vectors and received-signal synthesis.

Arrays follow one layout throughout the package:

* pilots ``S``: shape ``(N, N_t, G)``, ``S[n]`` is the ``N_t x G`` pilot block of sub-carrier ``n``
* received ``Y``: shape ``(N, N_r, G)``
* channel blocks ``H``: shape ``(N, N_r, N_t)``
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from .geometry import ChannelParams, SceneConfig, forward_map


class DelayRangeError(ValueError):
    """Delay outside the unambiguous range (0, N*T_s]."""


@dataclass(frozen=True)
class SystemConfig:
    fc: float = 60e9
    bw: float = 100e6
    n_sub: int = 15
    n_rx: int = 16
    n_tx: int = 16
    n_pilot: int = 16
    n_nlos: int = 2
    c: float = 3e8
    antenna_spacing: float | None = None
    noise_var: float = 0.0

    def __post_init__(self):
        if self.n_sub < 1 or self.n_sub % 2 == 0:
            raise ValueError(f"number of sub-carriers must be odd, got {self.n_sub}")
        if min(self.n_rx, self.n_tx, self.n_pilot) < 1 or self.n_nlos < 0:
            raise ValueError("antenna, pilot and path counts must be positive")
        if not 0 < self.bw < self.fc:
            raise ValueError("bandwidth must be positive and below the carrier")
        if self.noise_var < 0:
            raise ValueError("noise variance must be non-negative")
        if self.antenna_spacing is None:
            object.__setattr__(self, "antenna_spacing", self.wavelength / 2)

    @property
    def ts(self) -> float:
        return 1.0 / self.bw

    @property
    def wavelength(self) -> float:
        return self.c / self.fc

    @property
    def m(self) -> int:
        """Number of block rows/columns of the virtual channel matrix, (N+1)/2."""
        return (self.n_sub + 1) // 2

    @property
    def n_paths(self) -> int:
        return self.n_nlos + 1

    @property
    def delay_span(self) -> float:
        """N * T_s, the unambiguous delay range."""
        return self.n_sub * self.ts

    def with_noise(self, noise_var: float) -> "SystemConfig":
        return replace(self, noise_var=float(noise_var))

    def to_dict(self) -> dict:
        return asdict(self)


def fourier_vec(length: int, f) -> np.ndarray:
    """``exp(-2j*pi*k*f)/sqrt(length)`` for k = 0..length-1; vectorised over ``f`` (last axis = k)."""
    if length < 1:
        raise ValueError("length must be >= 1")
    k = np.arange(length)
    f = np.asarray(f, dtype=float)
    return np.exp(-2j * np.pi * np.multiply.outer(f, k)) / math.sqrt(length)


def angle_freq(theta, sys: SystemConfig):
    return sys.antenna_spacing * np.sin(theta) / sys.wavelength


def delay_freq(tau, sys: SystemConfig):
    return np.asarray(tau, dtype=float) / sys.delay_span


def steering_rx(theta, sys: SystemConfig) -> np.ndarray:
    return fourier_vec(sys.n_rx, angle_freq(theta, sys))


def steering_tx(theta, sys: SystemConfig) -> np.ndarray:
    return fourier_vec(sys.n_tx, angle_freq(theta, sys))


def check_delay(tau, sys: SystemConfig) -> None:
    f = delay_freq(tau, sys)
    if np.any(f <= 0) or np.any(f > 1 + 1e-12):
        raise DelayRangeError(f"delay frequency {f} outside (0, 1]")


def delay_vec(tau, sys: SystemConfig) -> np.ndarray:
    """Delay steering vector ``sqrt(2/(N+1)) * a_M(tau/(N T_s))`` of length M."""
    check_delay(tau, sys)
    return math.sqrt(2.0 / (sys.n_sub + 1)) * fourier_vec(sys.m, delay_freq(tau, sys))


def subcarrier_phases(params: ChannelParams, sys: SystemConfig) -> np.ndarray:
    """``exp(-2j*pi*n*tau_k/(N T_s))`` with shape ``(N, K+1)``."""
    n = np.arange(sys.n_sub)
    return np.exp(-2j * np.pi * np.outer(n, delay_freq(params.toas, sys)))


def channel_blocks(params: ChannelParams, sys: SystemConfig) -> np.ndarray:
    """All sub-carrier channel matrices stacked as ``(N, N_r, N_t)``; delays must lie in ``(0, N T_s]``."""
    if params.n_paths == 0:
        return np.zeros((sys.n_sub, sys.n_rx, sys.n_tx), dtype=complex)
    check_delay(params.toas, sys)
    a = steering_rx(params.aoas, sys)  # (K+1, N_r)
    b = steering_tx(params.aods, sys)  # (K+1, N_t)
    w = subcarrier_phases(params, sys) * params.gains[None, :]
    return np.einsum("nk,kr,kt->nrt", w, a, b.conj())


def subcarrier_channel(n: int, params: ChannelParams, sys: SystemConfig) -> np.ndarray:
    if not 0 <= n < sys.n_sub:
        raise IndexError(f"sub-carrier index {n} out of range")
    return channel_blocks(params, sys)[n]


def free_space_loss(path_length, wavelength: float):
    return (4 * np.pi * np.asarray(path_length, dtype=float) / wavelength) ** 2


def make_gains(scene: SceneConfig, sys: SystemConfig, rng: np.random.Generator,
               nlos_loss_db: float = 6.0) -> np.ndarray:
    """Free-space-loss channel coefficients with random unit-modulus phases."""
    toas = forward_map(scene, sys.c).toas
    rho = free_space_loss(sys.c * toas, sys.wavelength)
    rho[1:] *= 10 ** (nlos_loss_db / 10)
    h = np.exp(2j * np.pi * rng.random(len(toas)))
    return math.sqrt(sys.n_tx * sys.n_rx) * h / np.sqrt(rho)


def make_pilots(sys: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Unit-modulus pilots with uniform phase, shape ``(N, N_t, G)``."""
    return np.exp(2j * np.pi * rng.random((sys.n_sub, sys.n_tx, sys.n_pilot)))


def noiseless_signal(params: ChannelParams, pilots: np.ndarray, sys: SystemConfig) -> np.ndarray:
    return channel_blocks(params, sys) @ pilots


def noise_var_for_snr(params: ChannelParams, pilots: np.ndarray, sys: SystemConfig, snr_db: float) -> float:
    """sigma^2 such that ||HS||_F^2 / (sigma^2 N N_r G) equals the requested SNR."""
    energy = np.sum(np.abs(noiseless_signal(params, pilots, sys)) ** 2)
    return float(energy / (sys.n_sub * sys.n_rx * sys.n_pilot * 10 ** (snr_db / 10)))


def synthesize(params: ChannelParams, pilots: np.ndarray, sys: SystemConfig,
               rng: np.random.Generator) -> np.ndarray:
    """Received signal ``Y[n] = H[n] S[n] + W[n]`` with circular Gaussian noise of variance ``sys.noise_var``."""
    y = noiseless_signal(params, pilots, sys)
    if sys.noise_var > 0:
        scale = math.sqrt(sys.noise_var / 2)
        y = y + scale * (rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape))
    return y


def stack(y: np.ndarray) -> np.ndarray:
    """``(N, R, G)`` blocks to the stacked ``(N*R, G)`` matrix."""
    return y.reshape(-1, y.shape[-1])
