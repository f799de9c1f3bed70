"""Seeded Monte-Carlo experiments: SNR sweeps, RMSE aggregation and CRLB reference values.

Seed scheme: trial ``i`` at SNR ``s`` draws everything (gains, pilots, noise)
from ``SeedSequence(master_seed, spawn_key=(snr_key(s), i))`` where
``snr_key`` is the SNR in milli-dB as an unsigned 32-bit integer. A trial's
randomness therefore depends only on the master seed, its SNR value and its
index, not on the grid ordering.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
import traceback
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import scipy

from . import __version__
from .crlb import crlb_channel, crlb_location, fim_channel
from .denoiser import DEFAULT_EPSILON_SCALE, SolverSettings, default_epsilon
from .geometry import Point2D, SceneConfig, fold_angle, forward_map, wrap_angle
from .localize import WeightMatrix, localize
from .pipeline import estimate
from .signal import SystemConfig, make_gains, make_pilots, noise_var_for_snr, synthesize

log = logging.getLogger(__name__)

NOISELESS = math.inf
SNR_DEFINITION = "SNR = ||HS||_F^2 / (sigma^2 * N * N_r * G), sigma^2 per complex sample"


class ConfigError(ValueError):
    pass


@dataclass
class SolverConfig:
    epsilon_scale: float = DEFAULT_EPSILON_SCALE
    epsilon: Optional[float] = None
    noiseless_epsilon: float = 1e-8
    rho: float = 1.0
    max_iter: int = 5000
    tol_abs: Optional[float] = None
    tol_rel: float = 1e-6

    def settings(self, sigma: float, sys: SystemConfig) -> SolverSettings:
        if self.epsilon is not None:
            eps = self.epsilon
        elif sigma == 0:
            eps = self.noiseless_epsilon
        else:
            eps = default_epsilon(sigma, sys, self.epsilon_scale)
        return SolverSettings(epsilon=eps, rho=self.rho, max_iter=self.max_iter, tol_abs=self.tol_abs,
                              tol_rel=self.tol_rel)


@dataclass
class ExperimentConfig:
    system: SystemConfig
    scene: SceneConfig
    snr_db: List[float]
    trials: int = 50
    seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    nlos_loss_db: float = 6.0
    weighting: str = "hessian"
    extra_weightings: List[str] = field(default_factory=list)
    output_dir: str = "results"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if not self.snr_db:
            raise ConfigError("SNR grid must not be empty")
        if self.scene.n_paths != self.system.n_paths:
            raise ConfigError(f"scene has {self.scene.n_paths} paths but the system expects {self.system.n_paths}")
        for w in [self.weighting, *self.extra_weightings]:
            if w not in ("hessian", "identity"):
                raise ConfigError(f"unknown weighting {w!r}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        try:
            s = d["system"]
            sys = SystemConfig(fc=s["fc_hz"], bw=s["bw_hz"], n_sub=s["n_sub"], n_rx=s["n_rx"], n_tx=s["n_tx"],
                               n_pilot=s["n_pilot"], n_nlos=s["n_nlos"], c=s.get("c_m_per_s", 3e8),
                               antenna_spacing=s.get("antenna_spacing_m"))
            sc = d["scene"]
            scene = SceneConfig(Point2D(*sc["bs_m"]), Point2D(*sc["target_m"]), sc["orientation_rad"],
                                tuple(Point2D(*p) for p in sc.get("scatterers_m", [])))
            snr = [NOISELESS if str(v).lower() in ("inf", "noiseless") else float(v) for v in d["snr_db"]]
            return cls(system=sys, scene=scene, snr_db=snr, trials=int(d.get("trials", 50)),
                       seed=int(d.get("seed", 0)), solver=SolverConfig(**d.get("solver", {})),
                       nlos_loss_db=float(d.get("nlos_loss_db", 6.0)), weighting=d.get("weighting", "hessian"),
                       extra_weightings=list(d.get("extra_weightings", [])),
                       output_dir=d.get("output_dir", "results"))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid experiment config: {exc!r}") from exc

    def to_dict(self) -> dict:
        s, sc = self.system, self.scene
        return {
            "system": {"fc_hz": s.fc, "bw_hz": s.bw, "n_sub": s.n_sub, "n_rx": s.n_rx, "n_tx": s.n_tx,
                       "n_pilot": s.n_pilot, "n_nlos": s.n_nlos, "c_m_per_s": s.c,
                       "antenna_spacing_m": s.antenna_spacing},
            "scene": {"bs_m": [sc.bs.x, sc.bs.y], "target_m": [sc.target.x, sc.target.y],
                      "orientation_rad": sc.orientation, "scatterers_m": [[p.x, p.y] for p in sc.scatterers]},
            "snr_db": ["inf" if math.isinf(v) else v for v in self.snr_db],
            "trials": self.trials,
            "seed": self.seed,
            "solver": asdict(self.solver),
            "nlos_loss_db": self.nlos_loss_db,
            "weighting": self.weighting,
            "extra_weightings": self.extra_weightings,
            "output_dir": self.output_dir,
        }


def load_config(path: Optional[str] = None) -> ExperimentConfig:
    if path is None:
        text = resources.files("anmloc").joinpath("defaults.json").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return ExperimentConfig.from_dict(json.loads(text))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc


def snr_key(snr_db: float) -> int:
    if math.isinf(snr_db):
        return 0xFFFFFFFF
    return int(round(snr_db * 1000)) & 0xFFFFFFFF


def trial_seed(master: int, snr_db: float, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(snr_key(snr_db), trial))


@dataclass
class TrialRecord:
    snr_db: float
    trial: int
    seed: int
    status: str
    error_class: str = ""
    message: str = ""
    toa_err: List[float] = field(default_factory=list)
    aod_err: List[float] = field(default_factory=list)
    aoa_err: List[float] = field(default_factory=list)
    pos_err: Dict[str, float] = field(default_factory=dict)
    ori_err: Dict[str, float] = field(default_factory=dict)
    position: List[float] = field(default_factory=list)
    orientation: float = math.nan
    scatterers: List[float] = field(default_factory=list)
    crlb_toa: List[float] = field(default_factory=list)
    crlb_aod: List[float] = field(default_factory=list)
    crlb_aoa: List[float] = field(default_factory=list)
    crlb_pos: float = math.nan
    crlb_ori: float = math.nan
    admm_iterations: int = 0
    admm_converged: bool = False
    admm_primal: float = math.nan
    admm_dual: float = math.nan
    pairing_cost: float = math.nan
    lm_iterations: int = 0
    lm_converged: bool = False
    warnings: str = ""
    wall_clock_s: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def run_trial(cfg: ExperimentConfig, snr_db: float, trial: int) -> TrialRecord:
    seq = trial_seed(cfg.seed, snr_db, trial)
    seed_int = int(seq.generate_state(1, np.uint64)[0])
    rng = np.random.default_rng(seq)
    start = time.perf_counter()
    rec = TrialRecord(snr_db, trial, seed_int, "ok")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        _fill_trial(rec, cfg, snr_db, rng)
    rec.warnings = ";".join(sorted({w.category.__name__ for w in caught}))
    rec.wall_clock_s = time.perf_counter() - start
    return rec


def _fill_trial(rec: TrialRecord, cfg: ExperimentConfig, snr_db: float, rng: np.random.Generator) -> None:
    sys = cfg.system
    scene = cfg.scene
    try:
        truth = forward_map(scene, sys.c).with_gains(make_gains(scene, sys, rng, cfg.nlos_loss_db))
        pilots = make_pilots(sys, rng)
        sigma2 = 0.0 if math.isinf(snr_db) else noise_var_for_snr(truth, pilots, sys, snr_db)
        sys_n = sys.with_noise(sigma2)
        y = synthesize(truth, pilots, sys_n, rng)
        settings = cfg.solver.settings(math.sqrt(sigma2), sys)
        report = estimate(y, pilots, sys_n, scene.bs, settings, weighting=cfg.weighting)
        est = report.channel.params
        order = np.argsort(truth.toas, kind="stable")  # estimates come out sorted by delay
        rec.toa_err = list(est.toas - truth.toas[order])
        rec.aod_err = list(wrap_angle(est.aods - fold_angle(truth.aods[order])))
        rec.aoa_err = list(wrap_angle(est.aoas - fold_angle(truth.aoas[order])))
        loc = report.location
        rec.pos_err[cfg.weighting] = loc.position.distance(scene.target)
        rec.ori_err[cfg.weighting] = wrap_angle(loc.orientation - scene.orientation)
        rec.position = [loc.position.x, loc.position.y]
        rec.orientation = loc.orientation
        rec.scatterers = [v for s in loc.scatterers for v in (s.x, s.y)]
        rec.lm_iterations, rec.lm_converged = loc.iterations, loc.converged
        for w in cfg.extra_weightings:
            weight = WeightMatrix.identity(est.n_paths) if w == "identity" else report.weight
            alt = localize(est, weight, scene.bs, sys_n)
            rec.pos_err[w] = alt.position.distance(scene.target)
            rec.ori_err[w] = wrap_angle(alt.orientation - scene.orientation)
        d = report.channel.denoiser.diagnostics
        rec.admm_iterations, rec.admm_converged = d.iterations, d.converged
        rec.admm_primal, rec.admm_dual = d.primal_residual, d.dual_residual
        rec.pairing_cost = report.channel.pairing.cost
        if sigma2 > 0:
            fim = fim_channel(truth, pilots, sys_n)
            cb = crlb_channel(fim)
            lb = crlb_location(fim, scene, sys_n)
            rec.crlb_toa, rec.crlb_aod, rec.crlb_aoa = list(cb.toa[order]), list(cb.aod[order]), list(cb.aoa[order])
            rec.crlb_pos, rec.crlb_ori = lb.position, lb.orientation
    except Exception as exc:  # recorded and excluded from the aggregates
        rec.status = "failed"
        rec.error_class = type(exc).__name__
        rec.message = str(exc).replace("\n", " ")[:200]
        log.debug("trial %s@%s failed:\n%s", rec.trial, snr_db, traceback.format_exc())


def _run_one(args):
    cfg, snr, trial = args
    return run_trial(cfg, snr, trial)


def run_trials(cfg: ExperimentConfig, jobs: int = 1) -> List[TrialRecord]:
    tasks = [(cfg, snr, t) for snr in cfg.snr_db for t in range(cfg.trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = list(pool.map(_run_one, tasks))
    else:
        records = []
        for task in tasks:
            records.append(_run_one(task))
            r = records[-1]
            log.info("snr %s trial %d: %s (%.1f s)", r.snr_db, r.trial, r.status, r.wall_clock_s)
    order = {snr: i for i, snr in enumerate(cfg.snr_db)}
    return sorted(records, key=lambda r: (order[r.snr_db], r.trial))


def rmse(errors) -> float:
    e = np.asarray(errors, dtype=float).ravel()
    return float(np.sqrt(np.mean(e ** 2))) if e.size else math.nan


def median_abs(errors) -> float:
    e = np.asarray(errors, dtype=float).ravel()
    return float(np.median(np.abs(e))) if e.size else math.nan


def summarize(records: Sequence[TrialRecord], weightings: Sequence[str] = ("hessian",)) -> List[dict]:
    """One aggregate row per SNR point, in first-appearance order; points without successes are skipped."""
    rows = []
    snrs = list(dict.fromkeys(r.snr_db for r in records))
    for snr in snrs:
        at = [r for r in records if r.snr_db == snr]
        ok = [r for r in at if r.ok]
        if not ok:
            log.warning("no successful trials at SNR %s dB; point omitted", snr)
            continue
        row = {"snr_db": snr, "n_ok": len(ok), "n_failed": len(at) - len(ok)}
        for kind in ("toa", "aod", "aoa"):
            errs = np.array([getattr(r, f"{kind}_err") for r in ok])
            row[f"rmse_{kind}"] = rmse(errs)
            row[f"median_abs_{kind}"] = median_abs(errs)
            for k in range(errs.shape[1]):
                row[f"rmse_{kind}_{k}"] = rmse(errs[:, k])
            bounds = np.array([getattr(r, f"crlb_{kind}") for r in ok if getattr(r, f"crlb_{kind}")])
            row[f"crlb_{kind}"] = rmse(bounds) if bounds.size else math.nan
            for k in range(errs.shape[1]):
                row[f"crlb_{kind}_{k}"] = rmse(bounds[:, k]) if bounds.size else math.nan
        for w in weightings:
            row[f"rmse_pos_{w}"] = rmse([r.pos_err[w] for r in ok])
            row[f"median_abs_pos_{w}"] = median_abs([r.pos_err[w] for r in ok])
            row[f"rmse_ori_{w}"] = rmse([r.ori_err[w] for r in ok])
            row[f"median_abs_ori_{w}"] = median_abs([r.ori_err[w] for r in ok])
        pos_b = [r.crlb_pos for r in ok if not math.isnan(r.crlb_pos)]
        ori_b = [r.crlb_ori for r in ok if not math.isnan(r.crlb_ori)]
        row["crlb_pos"] = rmse(pos_b) if pos_b else math.nan
        row["crlb_ori"] = rmse(ori_b) if ori_b else math.nan
        rows.append(row)
    return rows


UNITS = {"toa": "s", "aod": "rad", "aoa": "rad", "pos": "m", "ori": "rad"}


def _unit_header(name: str) -> str:
    if name in ("snr_db", "n_ok", "n_failed", "trial", "seed", "status", "error_class", "message"):
        return name
    for kind, unit in UNITS.items():
        if f"_{kind}" in name or name.startswith(kind):
            return f"{name}[{unit}]"
    return name


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(v, (np.floating,)):
        return _fmt(float(v))
    return str(v)


def trial_rows(records: Sequence[TrialRecord], n_paths: int, weightings: Sequence[str]) -> List[dict]:
    rows = []
    nan = [math.nan] * n_paths
    for r in records:
        row = {"snr_db": r.snr_db, "trial": r.trial, "seed": r.seed, "status": r.status,
               "error_class": r.error_class}
        for kind in ("toa", "aod", "aoa"):
            for k, v in enumerate(getattr(r, f"{kind}_err") or nan):
                row[f"err_{kind}_{k}"] = v
        for w in weightings:
            row[f"err_pos_{w}"] = r.pos_err.get(w, math.nan)
            row[f"err_ori_{w}"] = r.ori_err.get(w, math.nan)
        px, py = r.position or [math.nan, math.nan]
        row.update({"est_pos_x": px, "est_pos_y": py, "est_ori": r.orientation})
        for kind in ("toa", "aod", "aoa"):
            for k, v in enumerate(getattr(r, f"crlb_{kind}") or nan):
                row[f"crlb_{kind}_{k}"] = v
        row.update({"crlb_pos": r.crlb_pos, "crlb_ori": r.crlb_ori, "admm_iterations": r.admm_iterations,
                    "admm_converged": r.admm_converged, "pairing_cost": r.pairing_cost,
                    "lm_iterations": r.lm_iterations, "lm_converged": r.lm_converged, "warnings": r.warnings})
        rows.append(row)
    return rows


def write_csv(path: Path, rows: List[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([_unit_header(k) for k in keys])
        for r in rows:
            w.writerow([_fmt(r.get(k, math.nan)) for k in keys])


def manifest(cfg: ExperimentConfig, records: Sequence[TrialRecord]) -> dict:
    return {
        "config": cfg.to_dict(),
        "seed_scheme": "SeedSequence(master_seed, spawn_key=(snr_milli_db mod 2**32, trial)); noiseless key 2**32-1",
        "trial_seeds": [{"snr_db": _fmt(r.snr_db), "trial": r.trial, "seed": r.seed} for r in records],
        "snr_definition": SNR_DEFINITION,
        "angle_convention": "angle errors on the principal branch (-pi/2, pi/2]; sin(theta) is what the arrays observe",
        "code_version": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[str] = None, jobs: int = 1):
    """Run every (SNR, trial) pair and write trials.csv, aggregate.csv, timing.csv and manifest.json."""
    out = Path(out_dir or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    weightings = [cfg.weighting, *cfg.extra_weightings]
    records = run_trials(cfg, jobs)
    rows = summarize(records, weightings)
    write_csv(out / "trials.csv", trial_rows(records, cfg.system.n_paths, weightings))
    write_csv(out / "aggregate.csv", rows)
    write_csv(out / "timing.csv", [{"snr_db": r.snr_db, "trial": r.trial, "wall_clock_s": r.wall_clock_s,
                                    "message": r.message} for r in records])
    (out / "manifest.json").write_text(json.dumps(manifest(cfg, records), indent=2) + "\n")
    return records, rows


def crlb_table(cfg: ExperimentConfig) -> List[dict]:
    """Bounds only: average (RMS) CRLB over the per-trial gain and pilot draws at each SNR."""
    rows = []
    sys, scene = cfg.system, cfg.scene
    for snr in cfg.snr_db:
        if math.isinf(snr):
            continue
        toa, aod, aoa, pos, ori = [], [], [], [], []
        for t in range(cfg.trials):
            rng = np.random.default_rng(trial_seed(cfg.seed, snr, t))
            truth = forward_map(scene, sys.c).with_gains(make_gains(scene, sys, rng, cfg.nlos_loss_db))
            pilots = make_pilots(sys, rng)
            sys_n = sys.with_noise(noise_var_for_snr(truth, pilots, sys, snr))
            fim = fim_channel(truth, pilots, sys_n)
            cb = crlb_channel(fim)
            lb = crlb_location(fim, scene, sys_n)
            toa.append(cb.toa), aod.append(cb.aod), aoa.append(cb.aoa), pos.append(lb.position)
            ori.append(lb.orientation)
        rows.append({"snr_db": snr, "crlb_toa": rmse(toa), "crlb_aod": rmse(aod), "crlb_aoa": rmse(aoa),
                     "crlb_pos": rmse(pos), "crlb_ori": rmse(ori)})
    return rows


CALIBRATION_FACTORS = (0.25, 0.5, 1.0, 2.0)
CALIBRATION_BASE = 0.08


def calibrate_epsilon(cfg: ExperimentConfig, snr_db: float = 10.0, trials: int = 20,
                      base: float = CALIBRATION_BASE, factors: Sequence[float] = CALIBRATION_FACTORS) -> List[dict]:
    """Sweep the regularization scale; the best row minimizes the median per-trial TOA RMSE."""
    rows = []
    for f in factors:
        scale = base * f
        sub = ExperimentConfig(cfg.system, cfg.scene, [snr_db], trials, cfg.seed,
                               SolverConfig(**{**asdict(cfg.solver), "epsilon_scale": scale, "epsilon": None}),
                               cfg.nlos_loss_db)
        recs = [r for r in run_trials(sub) if r.ok]
        per_trial = [rmse(r.toa_err) for r in recs]
        rows.append({"epsilon_scale": scale, "n_ok": len(recs),
                     "median_toa_rmse": float(np.median(per_trial)) if per_trial else math.nan,
                     "mean_admm_iterations": float(np.mean([r.admm_iterations for r in recs])) if recs else math.nan})
    return rows
