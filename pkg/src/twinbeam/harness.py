"""Scenario files, experiment commands and their outputs.

A scenario is an INI file whose keys carry their units (``waist_um``,
``duration_ps``).  Each command writes CSV tables (every value next to its
standard error, ``NA`` where no estimate exists), optional PGM images and a
manifest naming the scenario hash and library versions.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import logging
import math
import platform
import time
import warnings
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from . import analytic as an
from .detection import (DetectorSpec, Measured, ObjectMask, classical_baseline, combined_moments,
                        estimate_gamma12, estimate_sigma, estimate_snr, pixel_alpha, poisson_frames)
from .ensemble import LevelEnsemble, PulseMix, SimSetup, gain_levels, pulse_frames, pulse_mix, run_level
from .fieldsim import PRESETS, CrystalSpec, GridSpec, PumpSpec, time_slice_plan, x_fwhm_low_gain
from .oracle import modes_for_mean, two_mode_oracle

log = logging.getLogger(__name__)

ABSENT = "NA"
DESK_MAX_GRID = 64
DESK_MAX_TRAJECTORIES = 2000
SECONDS_PER_TRAJECTORY = 0.4  # desk grid, one core; scaled by grid volume


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.replace(",", " ").split()]


def _bool(text: str) -> bool:
    return text.strip().lower() in ("1", "true", "yes", "on")


@dataclass
class Scenario:
    seed: int
    trajectories: int = 300
    out_dir: str = "out"
    workers: int = 1
    n_steps: int = 32
    gain_step: float = 0.2
    slice_ps: float = 5.0
    pump: PumpSpec = field(default_factory=PumpSpec)
    crystal: CrystalSpec = field(default_factory=PRESETS["BBO-type-II-704nm"])
    grid_n: int = 64
    grid_nt: int = 32
    detection_pitch_um: float = 5.0
    focal_mm: float = 50.0
    detector: DetectorSpec = field(default_factory=lambda: DetectorSpec(eta1=0.9, eta2=0.9))
    object_kind: str = "uniform"
    object_alpha: float = 0.04
    object_path: str = ""
    object_text: str = "T"
    gains: list[float] = field(default_factory=lambda: [1.0, 4.5])
    waists_um: list[float] = field(default_factory=list)
    durations_ps: list[float] = field(default_factory=lambda: [5.0, 25.0, 125.0, 250.0])
    x_shifts_um: list[float] = field(default_factory=lambda: [0.0, 2.5, 5.0, 7.5, 10.0, 15.0, 20.0, 30.0])
    pixel_pitches_um: list[float] = field(default_factory=lambda: [20.0, 40.0])
    gain_duration_pairs: list[tuple[float, float]] = field(default_factory=lambda: [(4.15, 5.0), (1.45, 1000.0)])
    sigma_vs_n_shift_um: float = 4.0
    sigma_vs_n_gains: list[float] = field(default_factory=lambda: [1.2, 1.6, 2.0])
    sigma_vs_n_durations_ps: list[float] = field(default_factory=lambda: [5.0, 50.0, 1000.0])
    image_duration_ps: float = 125.0
    shift_scan_duration_ps: float = 250.0
    alphas: list[float] = field(default_factory=lambda: [0.001, 0.01, 0.04, 0.1, 0.2, 0.5])
    sigmas: list[float] = field(default_factory=lambda: [0.1, 0.25, 1.0])
    excess_noises: list[float] = field(default_factory=lambda: [0.0, 0.5, 100.0])
    mean_n: float = 3500.0
    etas: list[float] = field(default_factory=lambda: [0.9, 0.45])
    oracle: bool = False
    oracle_trials: int = 100_000
    paper_scale: bool = False

    def __post_init__(self):
        if self.seed is None or int(self.seed) != self.seed or self.seed < 0:
            raise ValueError("a non-negative integer seed is required")
        if self.trajectories < 2:
            raise ValueError("at least two trajectories are required")
        for name in ("gains", "durations_ps", "x_shifts_um", "pixel_pitches_um", "alphas", "sigmas",
                     "excess_noises", "etas"):
            if not getattr(self, name):
                raise ValueError(f"sweep list {name} is empty")
        if self.object_kind == "file" and not Path(self.object_path).is_file():
            raise FileNotFoundError(f"object file {self.object_path!r} not found")
        if self.object_kind not in ("uniform", "letter", "file", "none"):
            raise ValueError(f"unknown object kind {self.object_kind!r}")

    # ------------------------------------------------------------ derived

    @property
    def grid(self) -> GridSpec:
        return GridSpec.for_far_field(self.detection_pitch_um, self.focal_mm, self.crystal.wavelength_um,
                                      n=self.grid_n, nt=self.grid_nt, window_ps=self.slice_ps)

    def setup(self, gain: float | None = None, waist_um: float | None = None) -> SimSetup:
        pump = self.pump
        if gain is not None:
            pump = replace(pump, gain=gain)
        if waist_um is not None:
            pump = replace(pump, waist_um=waist_um)
        return SimSetup(self.grid, pump, self.crystal, self.focal_mm, self.n_steps,
                        self.detector.eta1, self.detector.eta2)

    def mask(self) -> ObjectMask | None:
        shape = (self.grid_n, self.grid_n)
        if self.object_kind == "none":
            return None
        if self.object_kind == "uniform":
            return ObjectMask.uniform(shape, self.object_alpha)
        if self.object_kind == "letter":
            cell = max(1, self.grid_n // 8)
            return ObjectMask.letter(shape, self.object_alpha, self.object_text, cell=cell, offset=(cell, cell))
        m = ObjectMask.from_text(self.object_path)
        if m.shape != shape:
            raise ValueError(f"object grid {m.shape} does not match detection grid {shape}")
        return m

    def physics_dict(self) -> dict:
        """Everything that changes results; excludes output location and worker count."""
        d = asdict(self)
        for k in ("out_dir", "workers"):
            d.pop(k)
        if self.object_kind == "file":
            d["object_file_sha256"] = hashlib.sha256(Path(self.object_path).read_bytes()).hexdigest()
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.physics_dict(), sort_keys=True, default=repr)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # ------------------------------------------------------------ loading

    @classmethod
    def from_ini(cls, path: str | Path | None = None, **overrides) -> "Scenario":
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if path is not None:
            if not Path(path).is_file():
                raise FileNotFoundError(f"config {path} not found")
            cp.read(path)
        kw: dict = {}
        get = lambda sec, key: cp.get(sec, key) if cp.has_option(sec, key) else None

        def put(name, sec, key, conv=float):
            v = get(sec, key)
            if v is not None:
                kw[name] = conv(v)

        put("seed", "run", "seed", int)
        put("trajectories", "run", "trajectories", int)
        put("out_dir", "run", "out_dir", str)
        put("workers", "run", "workers", int)
        put("n_steps", "run", "n_steps", int)
        put("gain_step", "run", "gain_step", float)
        put("slice_ps", "run", "slice_ps", float)

        pump = {}
        for key, name in (("waist_um", "waist_um"), ("duration_ps", "duration_ps"), ("gain", "gain"),
                          ("wavelength_um", "wavelength_um")):
            v = get("pump", key)
            if v is not None:
                pump[name] = float(v)
        kw["pump"] = PumpSpec(**pump)

        preset = get("crystal", "preset") or "BBO-type-II-704nm"
        if preset not in PRESETS:
            raise ValueError(f"unknown crystal preset {preset!r}")
        crystal = PRESETS[preset]()
        cr = {}
        for f in fields(CrystalSpec):
            v = get("crystal", f.name)
            if v is not None and f.name != "name":
                cr[f.name] = float(v)
        kw["crystal"] = replace(crystal, **cr)

        put("grid_n", "grid", "n", int)
        put("grid_nt", "grid", "nt", int)
        put("detection_pitch_um", "grid", "detection_pitch_um")
        put("focal_mm", "lens", "focal_mm")

        det = {"eta1": 0.9, "eta2": 0.9}
        for key in ("pixel_pitch_um", "eta1", "eta2", "x_shift_um", "background_var"):
            v = get("detector", key)
            if v is not None:
                det[key] = float(v)
        if get("detector", "binning") is not None:
            det["binning"] = int(get("detector", "binning"))
        if get("detector", "fourier_shift") is not None:
            det["fourier_shift"] = _bool(get("detector", "fourier_shift"))
        kw["detector"] = DetectorSpec(**det)

        put("object_kind", "object", "kind", str)
        put("object_alpha", "object", "alpha")
        put("object_text", "object", "text", str)
        v = get("object", "path")
        if v is not None:
            p = Path(v)
            if not p.is_absolute() and path is not None:
                p = Path(path).parent / p
            kw["object_path"] = str(p)

        for name, key in (("gains", "gains"), ("waists_um", "waists_um"), ("durations_ps", "durations_ps"),
                          ("x_shifts_um", "x_shifts_um"), ("pixel_pitches_um", "pixel_pitches_um"),
                          ("sigma_vs_n_gains", "sigma_vs_n_gains"),
                          ("sigma_vs_n_durations_ps", "sigma_vs_n_durations_ps"),
                          ("alphas", "alphas"), ("sigmas", "sigmas"), ("excess_noises", "excess_noises"),
                          ("etas", "etas")):
            put(name, "sweep", key, _floats)
        v = get("sweep", "gain_duration_pairs")
        if v is not None:
            kw["gain_duration_pairs"] = [tuple(float(x) for x in item.split(":"))
                                         for item in v.replace(",", " ").split()]
        put("sigma_vs_n_shift_um", "sweep", "sigma_vs_n_shift_um")
        put("image_duration_ps", "sweep", "image_duration_ps")
        put("shift_scan_duration_ps", "sweep", "shift_scan_duration_ps")
        put("mean_n", "analytic", "mean_n")
        put("oracle", "analytic", "oracle", _bool)
        put("oracle_trials", "analytic", "oracle_trials", int)

        kw.update({k: v for k, v in overrides.items() if v is not None})
        if "seed" not in kw:
            raise ValueError("a seed is required (config [run] seed or --seed)")
        sc = cls(**kw)
        sc.check_scale()
        return sc

    def check_scale(self) -> None:
        big = self.grid_n > DESK_MAX_GRID or self.trajectories > DESK_MAX_TRAJECTORIES
        if big and not self.paper_scale:
            raise ValueError(f"grid {self.grid_n} / {self.trajectories} trajectories exceed desk scale; "
                             "pass --paper-scale to run anyway")
        if self.paper_scale:
            vol = (self.grid_n / 64) ** 2 * (self.grid_nt / 32)
            est = SECONDS_PER_TRAJECTORY * vol * self.trajectories
            warnings.warn(f"paper-scale run: roughly {est / 60:.0f} min per gain level on one core",
                          stacklevel=2)


def paper_scale(sc: Scenario) -> Scenario:
    """Finer and larger grid with a bigger ensemble."""
    return replace(sc, grid_n=128, grid_nt=64, trajectories=max(sc.trajectories, 1000), paper_scale=True)


# ---------------------------------------------------------------- records

@dataclass
class RunRecord:
    command: str
    scenario_hash: str
    rows: list[dict]
    wall_s: float
    version: str


def _version() -> str:
    try:
        return metadata.version("twinbeam")
    except metadata.PackageNotFoundError:
        return "unknown"


def _cell(v) -> str:
    if v is None:
        return ABSENT
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return ABSENT if not math.isfinite(v) else repr(float(v))
    return str(v)


def _m(row: dict, name: str, m: Measured | None) -> None:
    """Value and its standard error side by side."""
    row[name] = None if m is None else m.value
    row[name + "_stderr"] = None if m is None else m.stderr


def _exact(row: dict, name: str, v) -> None:
    row[name] = v
    row[name + "_stderr"] = 0.0 if v is not None else None


def write_csv(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    if not rows:
        path.write_text("")
        return
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([_cell(r.get(k)) for k in keys])


def write_pgm(path: Path, image: np.ndarray, lo: float, hi: float) -> None:
    """8-bit binary graymap; values mapped linearly from [lo, hi] and clipped."""
    span = hi - lo if hi > lo else 1.0
    img = np.nan_to_num((np.asarray(image, dtype=float) - lo) / span, nan=0.0)
    data = np.clip(np.round(255 * img), 0, 255).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(data.tobytes())


def read_pgm(path: Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError("not a binary PGM")
    w, h = int(parts[1]), int(parts[2])
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


def write_manifest(out: Path, sc: Scenario, record: RunRecord, outputs: list[str]) -> None:
    lines = [
        f"command: {record.command}",
        f"scenario_hash: {record.scenario_hash}",
        f"seed: {sc.seed}",
        f"trajectories: {sc.trajectories}",
        f"twinbeam: {record.version}",
        f"numpy: {np.__version__}",
        f"scipy: {scipy.__version__}",
        f"python: {platform.python_version()}",
        f"wall_time_s: {record.wall_s:.1f}",
        "outputs: " + " ".join(outputs),
        "scenario: " + json.dumps(sc.physics_dict(), sort_keys=True, default=repr),
    ]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")
    with open(out / "records.jsonl", "a") as fh:
        fh.write(json.dumps({"command": record.command, "scenario_hash": record.scenario_hash,
                             "wall_s": round(record.wall_s, 3), "version": record.version,
                             "n_rows": len(record.rows)}) + "\n")


# ---------------------------------------------------------------- level cache

class LevelCache:
    """Gain-level ensembles shared by every pulse of one command.

    ``runner`` has the signature of :func:`run_level`; tests pass a caching
    wrapper so that expensive ensembles survive between sessions.
    """

    def __init__(self, sc: Scenario, mask: ObjectMask | None = None, waist_um: float | None = None,
                 runner=run_level, shifts_um: tuple[float, ...] = ()):
        self.sc = sc
        self.mask = mask
        self.waist_um = waist_um
        self.runner = runner
        self.shifts_um = tuple(shifts_um)
        self._store: dict[float, LevelEnsemble] = {}

    def get(self, gain: float) -> LevelEnsemble:
        key = round(float(gain), 9)
        if key not in self._store:
            sc = self.sc
            # The level index is derived from the gain so results do not depend on request order.
            self._store[key] = self.runner(sc.setup(key, self.waist_um), key, sc.trajectories, sc.seed,
                                           level_index=int(round(key * 1e6)), mask=self.mask,
                                           shifts_um=self.shifts_um, workers=sc.workers)
        return self._store[key]

    @property
    def ensembles(self) -> list[LevelEnsemble]:
        """Every ensemble simulated so far."""
        return list(self._store.values())

    def pulse(self, gain: float, duration_ps: float) -> tuple[list[LevelEnsemble], PulseMix]:
        """Ensembles and slice weights representing one pulse."""
        pump = replace(self.sc.pump, gain=gain, duration_ps=duration_ps)
        if len(time_slice_plan(pump, self.sc.slice_ps)) == 1:
            levels = [gain]
        else:
            # Span the envelope at the pulse edges rather than the actual slice gains so that
            # every multi-slice duration at this gain reuses the same ensembles.
            edge = gain * float(pump.temporal_profile(duration_ps / 2))
            levels = gain_levels([edge, gain], self.sc.gain_step)
        mix = pulse_mix(pump, levels, self.sc.slice_ps)
        return [self.get(g) for g in levels], mix


def pulse_stats(cache: LevelCache, gain: float, duration: float, det: DetectorSpec, seed: int,
                mask: ObjectMask | None = None, classical: bool = False):
    """Correlation and, with an object, SNR reports for one pulse.

    Returns ``(correlation, snr, classical_snr, n_slices)``; the last two
    reports are None when not requested.
    """
    ens, mix = cache.pulse(gain, duration)
    frames, obj, obj_ctl, w = pulse_frames(ens, det, mix, seed)
    corr = estimate_sigma(frames, w, seed=seed)
    snr = cls_snr = None
    if mask is not None:
        pitch = ens[0].pitch_um
        if classical:
            m_ref = combined_moments(frames, w)
            cls_snr, _ = classical_baseline(m_ref.mean1, det, mask, pitch, cache.sc.trajectories, seed,
                                            valid=frames[0].valid)
        snr = estimate_snr(frames, obj, mask, det, pitch, weights=w, obj_control1=obj_ctl,
                           classical=cls_snr, seed=seed)
    return corr, snr, cls_snr, len(mix.slices)


# ---------------------------------------------------------------- commands

def cmd_analytic(sc: Scenario) -> dict[str, list[dict]]:
    rows = []
    for a in sc.alphas:
        for s in sc.sigmas:
            for e in sc.excess_noises:
                stats = an.TwoModeStats(sc.mean_n, e, s)
                th = an.sigma_max(a, e)
                r = {"alpha": a, "sigma": s, "excess_noise": e, "mean_n": sc.mean_n}
                _exact(r, "snr_pdc", an.snr_differential(stats, a))
                _exact(r, "snr_classical", an.snr_classical(sc.mean_n, e, a))
                _exact(r, "snr_sql", an.snr_sql(sc.mean_n, a))
                _exact(r, "R", an.improvement_ratio(stats, a))
                _exact(r, "sigma_max", th.value)
                r["advantage_possible"] = th.advantage_possible
                rows.append(r)
    tol = []
    for eta in sc.etas:
        for e in sc.excess_noises:
            r = {"eta": eta, "excess_noise": e}
            _exact(r, "shift_tolerance", an.shift_tolerance(eta, e) if e >= 0 else None)
            _exact(r, "sigma_balanced", an.sigma_unbalanced(an.ArmEfficiencies(eta, eta), e))
            tol.append(r)
    out = {"analytic.csv": rows, "tolerance.csv": tol}
    if sc.oracle:
        orows = []
        for g in sc.gains:
            for eta in sc.etas:
                m, m_exact = modes_for_mean(sc.mean_n, g, eta)
                if abs(m - m_exact) > 1e-9:
                    warnings.warn(f"mode count {m_exact:.3f} rounded to {m}", stacklevel=2)
                res = two_mode_oracle(g, m, eta, eta, sc.object_alpha, sc.oracle_trials, sc.seed)
                pred = an.TwoModeStats(res.mean_n.value, an.excess_noise_thermal(eta * math.sinh(g) ** 2 * m, m),
                                       an.sigma_unbalanced(an.ArmEfficiencies(eta, eta), 0.0))
                r = {"gain": g, "eta": eta, "modes": m, "alpha": sc.object_alpha}
                for name in ("mean_n", "excess_noise", "sigma", "snr", "snr_classical"):
                    _m(r, "oracle_" + name, Measured(getattr(res, name).value, getattr(res, name).stderr))
                _exact(r, "model_sigma", pred.sigma)
                _exact(r, "model_snr", an.snr_differential(pred, sc.object_alpha))
                orows.append(r)
        out["oracle.csv"] = orows
    return out


def cmd_correlation(sc: Scenario) -> dict[str, list[dict]]:
    profile, summary = [], []
    waists = sc.waists_um or [sc.pump.waist_um]
    for w in waists:
        for g in sc.gains:
            ens = run_level(sc.setup(g, w), g, sc.trajectories, sc.seed, level_index=int(round(g * 1e6)),
                            workers=sc.workers)
            rep = estimate_gamma12(ens.w1, ens.w2, ens.pitch_um, ens.n_time, ens.ctl1, ens.ctl2, seed=sc.seed)
            for d, v, e in zip(rep.gamma_offsets_um, rep.gamma12, rep.gamma12_stderr):
                profile.append({"waist_um": w, "gain": g, "offset_um": float(d), "gamma12": float(v),
                                "gamma12_stderr": float(e)})
            cells = DetectorSpec(pixel_pitch_um=ens.pitch_um, eta1=sc.detector.eta1, eta2=sc.detector.eta2)
            corr = estimate_sigma(ens.frame(cells), seed=sc.seed)
            r = {"waist_um": w, "gain": g}
            _m(r, "fwhm_um", rep.fwhm_um)
            _exact(r, "fwhm_low_gain_um", float(x_fwhm_low_gain(sc.crystal.wavelength_um, sc.focal_mm, w)))
            _m(r, "gamma_peak", rep.gamma_peak)
            _m(r, "cell_sigma", corr.sigma)
            _m(r, "cell_excess_noise", corr.excess_noise)
            r["mean_counts_per_cell"] = corr.mean_counts
            summary.append(r)
    return {"gamma12_profile.csv": profile, "gamma12_summary.csv": summary}


def _det(sc: Scenario, pitch: float, shift: float) -> DetectorSpec:
    return replace(sc.detector, pixel_pitch_um=pitch, binning=1, x_shift_um=shift)


def cmd_sigma_scan(sc: Scenario) -> dict[str, list[dict]]:
    cache = LevelCache(sc)
    scan = []
    for g, tau in sc.gain_duration_pairs:
        for pitch in sc.pixel_pitches_um:
            for xs in sc.x_shifts_um:
                corr, _, _, n_sl = pulse_stats(cache, g, tau, _det(sc, pitch, xs), sc.seed)
                r = {"gain": g, "duration_ps": tau, "slices": n_sl, "pixel_um": pitch, "x_shift_um": xs,
                     "mean_counts": corr.mean_counts}
                _m(r, "sigma", corr.sigma)
                _m(r, "excess_noise", corr.excess_noise)
                scan.append(r)
    vs_n = []
    for tau in sc.sigma_vs_n_durations_ps:
        for g in sc.sigma_vs_n_gains:
            pitch = sc.detector.effective_pitch_um
            corr, _, _, n_sl = pulse_stats(cache, g, tau, _det(sc, pitch, sc.sigma_vs_n_shift_um), sc.seed)
            r = {"duration_ps": tau, "gain": g, "slices": n_sl, "pixel_um": pitch,
                 "x_shift_um": sc.sigma_vs_n_shift_um, "mean_counts": corr.mean_counts}
            _m(r, "sigma", corr.sigma)
            _m(r, "excess_noise", corr.excess_noise)
            vs_n.append(r)
    return {"sigma_vs_shift.csv": scan, "sigma_vs_counts.csv": vs_n}


def sigma_slope(rows: list[dict], duration: float) -> float:
    """Least-squares slope of sigma against mean counts for one pulse duration."""
    pts = [(r["mean_counts"], r["sigma"]) for r in rows if r["duration_ps"] == duration and r["sigma"] is not None]
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])


def cmd_image_experiment(sc: Scenario, images: bool = True) -> tuple[dict[str, list[dict]], dict[str, np.ndarray]]:
    mask = sc.mask()
    if mask is None:
        raise ValueError("the image experiment needs an object")
    g = sc.pump.gain
    cache = LevelCache(sc, mask)
    sweep = []
    for pitch in sc.pixel_pitches_um:
        for tau in sc.durations_ps:
            det = _det(sc, pitch, 0.0)
            corr, snr, cls, n_sl = pulse_stats(cache, g, tau, det, sc.seed, mask, classical=True)
            sweep.append(_snr_row(g, tau, n_sl, pitch, 0.0, corr, snr, cls))
    shift = []
    for pitch in sc.pixel_pitches_um:
        for xs in sc.x_shifts_um:
            det = _det(sc, pitch, xs)
            corr, snr, _, n_sl = pulse_stats(cache, g, sc.shift_scan_duration_ps, det, sc.seed, mask)
            shift.append(_snr_row(g, sc.shift_scan_duration_ps, n_sl, pitch, xs, corr, snr, None))

    pics = {}
    if images:
        pics = _images(sc, cache, mask)
    return {"snr_vs_duration.csv": sweep, "snr_vs_shift.csv": shift}, pics


def _snr_row(g, tau, n_sl, pitch, xs, corr, snr, cls) -> dict:
    r = {"gain": g, "duration_ps": tau, "slices": n_sl, "pixel_um": pitch, "x_shift_um": xs,
         "mean_counts": snr.mean_counts}
    _m(r, "sigma", corr.sigma)
    _m(r, "excess_noise", corr.excess_noise)
    _m(r, "snr", snr.snr)
    _m(r, "snr_classical", cls.snr if cls is not None else None)
    _m(r, "snr_sql", snr.snr_sql)
    _m(r, "R", snr.ratio)
    if corr.sigma is not None and corr.excess_noise is not None:
        alpha = float(np.nanmean(snr.alpha_map[snr.support])) if snr.support.any() else 0.0
        r["R_model"] = an.improvement_ratio_from(max(corr.sigma.value, 0.0), max(corr.excess_noise.value, -1.0), alpha)
        r["R_model_stderr"] = None
    return r


def _images(sc: Scenario, cache: LevelCache, mask: ObjectMask) -> dict[str, np.ndarray]:
    """Ground truth, PDC-retrieved and classical-retrieved absorption at the image duration."""
    det = _det(sc, sc.detector.effective_pitch_um, 0.0)
    ens, mix = cache.pulse(sc.pump.gain, sc.image_duration_ps)
    frames, obj_counts, obj_ctl, w = pulse_frames(ens, det, mix)
    obj = [replace(fr, counts1=o, control1=oc) for fr, o, oc in zip(frames, obj_counts, obj_ctl)]
    m_ref = combined_moments(frames, w)
    m_obj = combined_moments(obj, w)
    with np.errstate(invalid="ignore", divide="ignore"):
        pdc = (m_obj.mean2 - m_obj.mean1) / m_ref.mean2
    pitch = ens[0].pitch_um
    truth = pixel_alpha(mask, det, pitch)
    frame, n1_obj = poisson_frames(m_ref.mean1, m_ref.mean2, sc.trajectories, sc.seed, truth, frames[0].valid)
    with np.errstate(invalid="ignore", divide="ignore"):
        classical = (frame.counts2.mean(0) - n1_obj.mean(0)) / frame.counts2.mean(0)
    valid = frames[0].valid
    return {"alpha_truth": truth, "alpha_pdc": np.where(valid, pdc, np.nan),
            "alpha_classical": np.where(valid, classical, np.nan)}


COMMANDS = {
    "analytic": cmd_analytic,
    "correlation": cmd_correlation,
    "sigma-scan": cmd_sigma_scan,
    "image": cmd_image_experiment,
}


def run(command: str, sc: Scenario) -> RunRecord:
    """Run one command and write its CSVs, images and manifest into ``sc.out_dir``."""
    if command not in COMMANDS:
        raise ValueError(f"unknown command {command!r}")
    out = Path(sc.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    result = COMMANDS[command](sc)
    tables, pics = result if isinstance(result, tuple) else (result, {})
    written = []
    all_rows = []
    for name, rows in tables.items():
        write_csv(out / name, rows)
        written.append(name)
        all_rows += rows
    if pics:
        truth = pics["alpha_truth"]
        # zero absorption is black even when the object is uniform
        lo, hi = min(0.0, float(np.min(truth))), float(np.max(truth))
        for name, img in pics.items():
            write_pgm(out / f"{name}.pgm", img, lo, hi)
            written.append(f"{name}.pgm")
    rec = RunRecord(command, sc.hash, all_rows, time.perf_counter() - t0, _version())
    write_manifest(out, sc, rec, written)
    return rec
