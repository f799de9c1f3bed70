"""Scene geometry and the maps between positions and path parameters.

The scene is two-dimensional: a base station (BS) at a known point ``q``,
a target at ``p`` whose antenna array is rotated by ``orientation``, and
one point scatterer per non-line-of-sight path. Path index 0 is always the
line-of-sight (LOS) path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, List, Sequence

import numpy as np

if TYPE_CHECKING:
    from .signal import SystemConfig

PARALLEL_TOL = 1e-9


class GeometryError(ValueError):
    """Degenerate scene or non-invertible geometric configuration."""


def wrap_angle(theta):
    """Wrap angle(s) into (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2 * np.pi) - np.pi
    wrapped = np.where(wrapped == -np.pi, np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


def fold_angle(theta):
    """Map angle(s) onto the principal branch (-pi/2, pi/2] seen by a linear array.

    A uniform linear array only observes ``sin(theta)``, so ``theta`` and
    ``pi - theta`` are indistinguishable.
    """
    t = wrap_angle(theta)
    folded = np.where(t > np.pi / 2, np.pi - t, np.where(t <= -np.pi / 2, -np.pi - t, t))
    if np.ndim(folded) == 0:
        return float(folded)
    return folded


@dataclass(frozen=True)
class Point2D:
    x: float
    y: float

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise GeometryError(f"non-finite point ({self.x}, {self.y})")

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)

    @classmethod
    def from_array(cls, a) -> "Point2D":
        return cls(float(a[0]), float(a[1]))

    def distance(self, other: "Point2D") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass(frozen=True)
class SceneConfig:
    bs: Point2D
    target: Point2D
    orientation: float
    scatterers: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(self.scatterers))
        if self.target.distance(self.bs) <= 0:
            raise GeometryError("target coincides with the base station")
        for s in self.scatterers:
            if s.distance(self.bs) <= 0 or s.distance(self.target) <= 0:
                raise GeometryError(f"scatterer {s} coincides with BS or target")

    @property
    def n_paths(self) -> int:
        return 1 + len(self.scatterers)

    def to_vector(self) -> np.ndarray:
        """Stack as ``[p_x, p_y, orientation, s1_x, s1_y, ...]``."""
        parts = [self.target.x, self.target.y, self.orientation]
        for s in self.scatterers:
            parts += [s.x, s.y]
        return np.array(parts, dtype=float)

    @classmethod
    def from_vector(cls, vec, bs: Point2D) -> "SceneConfig":
        vec = np.asarray(vec, dtype=float)
        scat = [Point2D(vec[3 + 2 * k], vec[4 + 2 * k]) for k in range((len(vec) - 3) // 2)]
        return cls(bs, Point2D(vec[0], vec[1]), float(vec[2]), tuple(scat))


@dataclass(frozen=True)
class PathParams:
    toa: float
    aod: float
    aoa: float


@dataclass
class ChannelParams:
    """Per-path delays and angles; ``gains`` may be empty when only geometry is known."""

    paths: List[PathParams]
    gains: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))

    def __post_init__(self):
        self.paths = list(self.paths)
        self.gains = np.asarray(self.gains, dtype=complex)
        if self.gains.size and self.gains.size != len(self.paths):
            raise ValueError("gains and paths differ in length")

    @property
    def n_paths(self) -> int:
        return len(self.paths)

    @property
    def toas(self) -> np.ndarray:
        return np.array([p.toa for p in self.paths])

    @property
    def aods(self) -> np.ndarray:
        return np.array([p.aod for p in self.paths])

    @property
    def aoas(self) -> np.ndarray:
        return np.array([p.aoa for p in self.paths])

    def eta(self) -> np.ndarray:
        """Parameter vector ordered (toa_0..toa_K, aod_0..aod_K, aoa_0..aoa_K)."""
        return np.concatenate([self.toas, self.aods, self.aoas])

    @classmethod
    def from_eta(cls, eta, gains=None) -> "ChannelParams":
        eta = np.asarray(eta, dtype=float)
        n = len(eta) // 3
        paths = [PathParams(eta[k], eta[n + k], eta[2 * n + k]) for k in range(n)]
        return cls(paths, np.zeros(0, complex) if gains is None else gains)

    def with_gains(self, gains) -> "ChannelParams":
        return ChannelParams(self.paths, np.asarray(gains, dtype=complex))


def forward_map(scene: SceneConfig, c: float = 3e8) -> ChannelParams:
    """Delays and angles of every path for a given scene; gains left empty."""
    q, p = scene.bs.as_array(), scene.target.as_array()
    d = p - q
    los_dir = math.atan2(d[1], d[0])
    paths = [PathParams(float(np.hypot(*d)) / c, wrap_angle(los_dir), wrap_angle(np.pi + los_dir - scene.orientation))]
    for s in scene.scatterers:
        s = s.as_array()
        if np.hypot(*(s - q)) == 0 or np.hypot(*(p - s)) == 0:
            raise GeometryError("scatterer coincides with BS or target")
        toa = (np.hypot(*(q - s)) + np.hypot(*(p - s))) / c
        aod = math.atan2(s[1] - q[1], s[0] - q[0])
        aoa = np.pi + math.atan2(p[1] - s[1], p[0] - s[0]) - scene.orientation
        paths.append(PathParams(float(toa), wrap_angle(aod), wrap_angle(aoa)))
    return ChannelParams(paths)


def los_invert(los: PathParams, q: Point2D, c: float = 3e8):
    """Position and orientation implied by the LOS path alone."""
    if los.toa <= 0:
        raise GeometryError("LOS delay must be positive")
    r = c * los.toa
    p = Point2D(q.x + r * math.cos(los.aod), q.y + r * math.sin(los.aod))
    return p, wrap_angle(np.pi + los.aod - los.aoa)


def scatterer_invert(path: PathParams, p_hat: Point2D, orientation: float, q: Point2D) -> Point2D:
    """Intersect the BS departure ray with the target arrival ray.

    Solved with direction vectors rather than slopes so vertical rays are
    handled; the denominator is the sine of the angle between the rays.
    """
    a = path.aod
    b = path.aoa + orientation
    denom = math.sin(b - a)
    if abs(denom) < PARALLEL_TOL:
        raise GeometryError(f"departure and arrival rays are parallel (denominator {denom:.3e})")
    dx, dy = p_hat.x - q.x, p_hat.y - q.y
    t = (dx * math.sin(b) - dy * math.cos(b)) / denom
    return Point2D(q.x + t * math.cos(a), q.y + t * math.sin(a))


@dataclass(frozen=True)
class SeparationReport:
    rx: float
    tx: float
    delay: float
    rx_threshold: float
    tx_threshold: float
    delay_threshold: float

    @property
    def rx_ok(self) -> bool:
        return self.rx >= self.rx_threshold

    @property
    def tx_ok(self) -> bool:
        return self.tx >= self.tx_threshold

    @property
    def delay_ok(self) -> bool:
        return self.delay >= self.delay_threshold

    @property
    def all_ok(self) -> bool:
        return self.rx_ok and self.tx_ok and self.delay_ok


def wrapped_min_separation(freqs: Sequence[float]) -> float:
    """Smallest pairwise distance on the unit circle; +inf for fewer than two values."""
    f = np.asarray(freqs, dtype=float)
    if f.size < 2:
        return math.inf
    diff = np.abs(f[:, None] - f[None, :]) % 1.0
    diff = np.minimum(diff, 1.0 - diff)
    iu = np.triu_indices(f.size, 1)
    return float(diff[iu].min())


def _threshold(count: int, div: int) -> float:
    base = (count - 1) // div
    return 1.0 / base if base > 0 else math.inf


def min_separations(params: ChannelParams, sys: "SystemConfig") -> SeparationReport:
    ratio = sys.antenna_spacing / sys.wavelength
    return SeparationReport(
        rx=wrapped_min_separation(ratio * np.sin(params.aoas)),
        tx=wrapped_min_separation(ratio * np.sin(params.aods)),
        delay=wrapped_min_separation(params.toas / (sys.n_sub * sys.ts)),
        rx_threshold=_threshold(sys.n_rx, 4),
        tx_threshold=_threshold(sys.n_tx, 4),
        delay_threshold=_threshold(sys.n_sub, 8),
    )


def reference_scene() -> SceneConfig:
    """The evaluation geometry: BS at the origin, target at (20, 5), two scatterers."""
    return SceneConfig(
        bs=Point2D(0.0, 0.0),
        target=Point2D(20.0, 5.0),
        orientation=0.2,
        scatterers=(Point2D(7.45, 8.54), Point2D(19.89, -6.05)),
    )
