"""Position and orientation from estimated path parameters.

The estimated delays and angles are refit through the scene geometry by
weighted least squares, with the weight taken as the finite-difference
Hessian of the data-fit criterion at the estimate. The fit starts from the
closed-form LOS solution plus ray intersections for the scatterers and is
solved with a Levenberg-Marquardt iteration using Fletcher's diagonal scaling.

Angle estimates from a linear array live on the principal branch
``(-pi/2, pi/2]``; geometric angles are folded onto that branch before
residuals are formed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List

import numpy as np

from .geometry import (ChannelParams, GeometryError, PathParams, Point2D, SceneConfig, fold_angle,
                       los_invert, scatterer_invert, wrap_angle)
from .signal import SystemConfig, channel_blocks, check_delay
from .virtual import virtual_gains

log = logging.getLogger(__name__)


@dataclass
class WeightMatrix:
    """Symmetric PSD weight over (toa_0..toa_K, aod_0..aod_K, aoa_0..aoa_K)."""

    d: np.ndarray
    clipped: int = 0

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float)
        if self.d.ndim != 2 or self.d.shape[0] != self.d.shape[1] or self.d.shape[0] % 3:
            raise ValueError(f"weight must be square over 3(K+1) parameters, got {self.d.shape}")

    @classmethod
    def identity(cls, n_paths: int) -> "WeightMatrix":
        return cls(np.eye(3 * n_paths))


@dataclass
class LocalizationResult:
    position: Point2D
    orientation: float
    scatterers: List[Point2D]
    objective: float
    iterations: int
    converged: bool
    initial_objective: float = float("nan")
    fallback_paths: List[int] = field(default_factory=list)

    def scene(self, bs: Point2D) -> SceneConfig:
        return SceneConfig(bs, self.position, self.orientation, tuple(self.scatterers))


def objective_L(eta, gains, y: np.ndarray, pilots: np.ndarray, sys: SystemConfig, eps: float = 0.0) -> float:
    """Denoiser criterion at fixed gains: data misfit plus the (constant) atomic-norm term."""
    params = eta if isinstance(eta, ChannelParams) else ChannelParams.from_eta(eta)
    check_delay(params.toas, sys)
    resid = y - channel_blocks(params.with_gains(gains), sys) @ pilots
    return 0.5 * float(np.vdot(resid, resid).real) + eps * float(np.abs(virtual_gains(gains, sys)).sum())


def eta_steps(n_paths: int, sys: SystemConfig, rel: float = 1e-5) -> np.ndarray:
    return np.concatenate([np.full(n_paths, rel * sys.delay_span), np.full(2 * n_paths, rel)])


def fd_hessian(fun: Callable[[np.ndarray], float], x: np.ndarray, h: np.ndarray) -> np.ndarray:
    """Central-difference Hessian with per-coordinate steps ``h``."""
    x = np.asarray(x, dtype=float)
    n = x.size
    f0 = fun(x)
    hess = np.empty((n, n))
    e = np.eye(n) * h
    fp = np.array([fun(x + e[i]) for i in range(n)])
    fm = np.array([fun(x - e[i]) for i in range(n)])
    for i in range(n):
        hess[i, i] = (fp[i] - 2 * f0 + fm[i]) / h[i] ** 2
        for j in range(i + 1, n):
            v = (fun(x + e[i] + e[j]) - fun(x + e[i] - e[j]) - fun(x - e[i] + e[j]) + fun(x - e[i] - e[j]))
            hess[i, j] = hess[j, i] = v / (4 * h[i] * h[j])
    if not np.all(np.isfinite(hess)):
        raise FloatingPointError("non-finite second differences")
    return hess


def psd_clip(a: np.ndarray):
    a = 0.5 * (a + a.T)
    w, q = np.linalg.eigh(a)
    clipped = int(np.sum(w < 0))
    return (q * np.maximum(w, 0.0)) @ q.T, clipped


def hessian_weight(eta_hat: ChannelParams, gains, y, pilots, sys: SystemConfig, eps: float = 0.0,
                   rel_step: float = 1e-5) -> WeightMatrix:
    x = eta_hat.eta()
    hess = fd_hessian(lambda e: objective_L(e, gains, y, pilots, sys, eps), x, eta_steps(eta_hat.n_paths, sys, rel_step))
    d, clipped = psd_clip(hess)
    return WeightMatrix(d, clipped)


def predicted_eta(x: np.ndarray, q: Point2D, c: float) -> np.ndarray:
    """Folded path parameters for a scene vector ``[p_x, p_y, theta_o, s_1x, s_1y, ...]``."""
    px, py, ori = x[0], x[1], x[2]
    sx, sy = x[3::2], x[4::2]
    toa = np.concatenate([[math.hypot(px - q.x, py - q.y)],
                          np.hypot(q.x - sx, q.y - sy) + np.hypot(px - sx, py - sy)]) / c
    aod = np.concatenate([[math.atan2(py - q.y, px - q.x)], np.arctan2(sy - q.y, sx - q.x)])
    aoa = np.pi + np.concatenate([[aod[0]], np.arctan2(py - sy, px - sx)]) - ori
    return np.concatenate([toa, fold_angle(aod), fold_angle(aoa)])


def eta_residual(eta_hat: np.ndarray, x: np.ndarray, q: Point2D, c: float) -> np.ndarray:
    pred = predicted_eta(x, q, c)
    r = eta_hat - pred
    n = len(r) // 3
    r[n:] = wrap_angle(r[n:])
    return r


def fd_jacobian(fun: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: np.ndarray) -> np.ndarray:
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h[i]
        cols.append((fun(x + e) - fun(x - e)) / (2 * h[i]))
    return np.stack(cols, axis=1)


@dataclass
class LMResult:
    x: np.ndarray
    objective: float
    initial_objective: float
    iterations: int
    converged: bool
    history: List[float]


def lm_fletcher(residual: Callable[[np.ndarray], np.ndarray], weight: np.ndarray, x0: np.ndarray,
                max_iter: int = 200, step_tol: float = 1e-10, grad_tol: float = 1e-10,
                nu: float = 2.0, lam0: float = 1e-3) -> LMResult:
    """Minimize ``r(x)^T W r(x)`` by Levenberg-Marquardt with diagonal (Fletcher) scaling."""
    x = np.asarray(x0, dtype=float).copy()
    xscale = np.maximum(1.0, np.abs(x))
    h = 1e-7 * xscale

    def cost(r):
        return float(r @ weight @ r)

    r = residual(x)
    f = cost(r)
    f0 = f
    history = [f]
    lam = lam0
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = fd_jacobian(residual, x, h)
        a = jac.T @ weight @ jac
        g = jac.T @ weight @ r
        if np.max(np.abs(g) * xscale) <= grad_tol * max(f0, np.finfo(float).tiny):
            converged = True
            break
        diag = np.diag(a).copy()
        diag = np.where(diag > 0, diag, max(diag.max(), 1.0) * 1e-12)
        while True:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= nu
                continue
            if not np.all(np.isfinite(step)):
                lam *= nu
                continue
            break
        x_new = x + step
        try:
            r_new = residual(x_new)
            f_new = cost(r_new)
        except (GeometryError, ValueError):
            f_new = math.inf
        if f_new < f:
            x, r, f = x_new, r_new, f_new
            history.append(f)
            lam /= nu
        else:
            lam *= nu
        if np.linalg.norm(step / xscale) < step_tol:
            converged = True
            break
        if lam > 1e16:
            converged = True
            break
    return LMResult(x, f, f0, it, converged, history)


def arrival_branches(aoa: float):
    """Both geometric arrival angles consistent with a folded estimate."""
    return list(dict.fromkeys([aoa, wrap_angle(np.pi - aoa)]))


def _scatterer_candidates(path: PathParams, p_hat: Point2D, ori: float, q: Point2D, c: float):
    """Ray intersections for both arrival branches, best delay/direction match first."""
    out = []
    for aoa in arrival_branches(path.aoa):
        try:
            s = scatterer_invert(PathParams(path.toa, path.aod, aoa), p_hat, ori, q)
        except GeometryError:
            continue
        if s.distance(q) == 0 or s.distance(p_hat) == 0:
            continue
        toa = (s.distance(q) + s.distance(p_hat)) / c
        dir_tx = math.atan2(s.y - q.y, s.x - q.x)
        dir_rx = math.atan2(p_hat.y - s.y, p_hat.x - s.x)
        score = (abs(toa - path.toa) * c + abs(wrap_angle(dir_tx - path.aod))
                 + abs(wrap_angle(np.pi + dir_rx - ori - aoa)))
        out.append((score, s))
    out.sort(key=lambda t: t[0])
    return [s for _, s in out]


def initial_guesses(eta_hat: ChannelParams, q: Point2D, c: float):
    """Closed-form starting scenes for both branches of the LOS arrival angle.

    Departures stay on the principal branch, i.e. the scene lies in front of
    the BS array; its mirror image behind the array is indistinguishable.
    Scatterers whose rays do not intersect start at the BS-target midpoint and
    are listed in the returned fallback indices.
    """
    los = eta_hat.paths[0]
    guesses = []
    for aoa in arrival_branches(los.aoa):
        p_hat, ori = los_invert(PathParams(los.toa, los.aod, aoa), q, c)
        scat, fallback = [], []
        for k, path in enumerate(eta_hat.paths[1:], start=1):
            cands = _scatterer_candidates(path, p_hat, ori, q, c)
            if cands:
                scat.append(cands[0])
            else:
                scat.append(Point2D(0.5 * (q.x + p_hat.x), 0.5 * (q.y + p_hat.y)))
                fallback.append(k)
        guesses.append((SceneConfig(q, p_hat, ori, tuple(scat)).to_vector(), fallback))
    return guesses


def localize(eta_hat: ChannelParams, weight: WeightMatrix, q: Point2D, sys: SystemConfig,
             max_iter: int = 200) -> LocalizationResult:
    """Weighted least-squares refit of position, orientation and scatterers."""
    toas = eta_hat.toas
    if np.any(np.diff(toas) < 0):
        raise ValueError("paths must be sorted by delay with the LOS path first")
    target = eta_hat.eta()
    best = None
    for x0, fallback in initial_guesses(eta_hat, q, sys.c):
        res = lm_fletcher(lambda x: eta_residual(target, x, q, sys.c), weight.d, x0, max_iter=max_iter)
        if best is None or res.objective < best[0].objective * (1 - 1e-9) - 1e-300:
            best = (res, fallback)
    res, fallback = best
    scene = SceneConfig.from_vector(res.x, q)
    log.debug("localize: objective %.3e -> %.3e in %d iterations", res.initial_objective, res.objective,
              res.iterations)
    return LocalizationResult(scene.target, wrap_angle(scene.orientation), list(scene.scatterers), res.objective,
                              res.iterations, res.converged, res.initial_objective, fallback)
