"""Trajectory ensembles at fixed gain and their combination over pulse slices.

Every trajectory is pushed through crystal, lens, detector losses and object
twice: once with the pump on and once with the pump off, driven by the same
vacuum draws.  The pump-off copy is the vacuum reference used by the
estimators in ``detection``.

A long pulse is a sum of independent quasi-stationary slices whose gains all
lie in a narrow band.  Rather than simulating each slice, a handful of gain
levels is simulated once and slice moments are interpolated between levels.
"""

from __future__ import annotations

import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import fft as sfft

from .detection import (DetectorSpec, ObjectMask, PixelFrame, apply_efficiency, apply_object,
                        cell_maps, fourier_translate, pixelize_cells)
from .fieldsim import (CrystalSpec, FieldPair, GridSpec, PumpSpec, TimeSlice, propagate_split_step,
                       sample_vacuum, time_slice_plan, to_far_field)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SimSetup:
    grid: GridSpec
    pump: PumpSpec
    crystal: CrystalSpec
    focal_mm: float = 50.0
    n_steps: int = 32
    eta1: float = 0.9
    eta2: float = 0.9
    single_precision: bool = True

    @property
    def pitch_um(self) -> float:
        return self.grid.detection_pitch(self.focal_mm, self.crystal.wavelength_um)


def propagate_linear(fields: FieldPair, crystal: CrystalSpec) -> FieldPair:
    """Zero-gain crystal transit, done exactly in one step.

    Matches ``propagate_split_step(..., gain=0)`` including its frame phase.
    """
    axes = (-3, -2, -1)
    lc = crystal.length_mm
    hd0 = 0.5 * crystal.delta0_per_mm
    out = []
    for which, c in ((1, fields.c1), (2, fields.c2)):
        d = crystal.dispersion(fields.grid, which) + hd0
        f = sfft.fftn(c, axes=axes, norm="ortho") * np.exp(1j * (d - hd0) * lc)
        out.append(sfft.ifftn(f, axes=axes, norm="ortho"))
    return replace(fields, c1=out[0], c2=out[1], z_mm=fields.z_mm + lc)


class MomentAccumulator:
    """Thread-safe running sums (count, sum, sum of squares) for any array shape."""

    def __init__(self):
        self._lock = threading.Lock()
        self.n = 0
        self.s1 = 0.0
        self.s2 = 0.0

    def add(self, samples: np.ndarray) -> None:
        samples = np.asarray(samples, dtype=float)
        n, s1, s2 = samples.shape[0], samples.sum(axis=0), (samples ** 2).sum(axis=0)
        self.merge_sums(n, s1, s2)

    def merge_sums(self, n, s1, s2) -> None:
        with self._lock:
            self.n += n
            self.s1 = self.s1 + s1
            self.s2 = self.s2 + s2

    def merge(self, other: "MomentAccumulator") -> None:
        self.merge_sums(other.n, other.s1, other.s2)

    @property
    def mean(self):
        return self.s1 / self.n

    @property
    def variance(self):
        return (self.s2 - self.s1 ** 2 / self.n) / (self.n - 1)

    @property
    def stderr(self):
        return np.sqrt(self.variance / self.n)


@dataclass
class LevelEnsemble:
    """Per-trajectory time-integrated Wigner cell maps at one gain.

    Arrays have shape (trajectories, ny, nx); ``ctl_*`` are the pump-off
    references.  ``shifted`` maps an x_shift in um to arm-2 maps that were
    translated by a sub-cell amount at field level.
    """

    gain: float
    w1: np.ndarray
    w2: np.ndarray
    ctl1: np.ndarray
    ctl2: np.ndarray
    pitch_um: float
    n_time: int
    w1_obj: np.ndarray | None = None
    ctl1_obj: np.ndarray | None = None
    shifted: dict = field(default_factory=dict)

    @property
    def n_trajectories(self) -> int:
        return self.w1.shape[0]

    def frame(self, det: DetectorSpec, seed: int | None = None) -> PixelFrame:
        """Pixel frame for ``det``; sub-cell shifts use stored translated maps if present."""
        if det.x_shift_um in self.shifted:
            w2, c2 = self.shifted[det.x_shift_um]
            fr = pixelize_cells(self.w1, w2, det, self.pitch_um, self.n_time, self.ctl1, c2,
                                seed=seed, offset_cells=0)
            off = det.pairing_offset_cells(self.pitch_um)
            reach = int(math.ceil(abs(off))) * (1 if off >= 0 else -1)
            fr.valid &= pixelize_cells(self.w1[:2], self.w2[:2], det, self.pitch_um, self.n_time,
                                       offset_cells=reach).valid
            return fr
        return pixelize_cells(self.w1, self.w2, det, self.pitch_um, self.n_time, self.ctl1, self.ctl2,
                              seed=seed)

    def object_counts(self, det: DetectorSpec, frame: PixelFrame) -> tuple[np.ndarray, np.ndarray]:
        """Arm-1 pixel counts behind the object, matched to ``frame``'s tiling."""
        if self.w1_obj is None:
            raise ValueError("ensemble was produced without an object")
        f = pixelize_cells(self.w1_obj, self.w2, det, self.pitch_um, self.n_time, self.ctl1_obj, self.ctl2,
                           offset_cells=frame.meta["offset_cells"])
        return f.counts1, f.control1

    def subset(self, n: int) -> "LevelEnsemble":
        cut = lambda a: None if a is None else a[:n]
        return replace(self, w1=self.w1[:n], w2=self.w2[:n], ctl1=self.ctl1[:n], ctl2=self.ctl2[:n],
                       w1_obj=cut(self.w1_obj), ctl1_obj=cut(self.ctl1_obj),
                       shifted={k: (v[0][:n], v[1][:n]) for k, v in self.shifted.items()})


def _run_batch(setup: SimSetup, gain: float, trajs: range, seed: int, level_index: int,
               mask: ObjectMask | None, shifts_um: tuple[float, ...]):
    grid = setup.grid
    parts = [sample_vacuum(grid, seed, t, level_index) for t in trajs]
    vac = FieldPair(np.stack([p.c1 for p in parts]), np.stack([p.c2 for p in parts]), grid)
    on = propagate_split_step(vac, setup.pump, setup.crystal, setup.n_steps, gain=gain,
                              single_precision=setup.single_precision)
    off = propagate_linear(vac, setup.crystal)
    lam = setup.crystal.wavelength_um
    ids = list(trajs)
    res = {}
    for tag, f in (("w", on), ("ctl", off)):
        far = to_far_field(f, setup.focal_mm, lam)
        far = apply_efficiency(far, setup.eta1, setup.eta2, seed, ids, level_index)
        res[tag + "1"], res[tag + "2"] = cell_maps(far)
        if mask is not None:
            res[tag + "1_obj"] = cell_maps(apply_object(far, mask, seed, ids, level_index))[0]
        for s in shifts_um:
            c2 = fourier_translate(far.c2, -2.0 * s / far.pitch_um, axis=-1)
            res[(tag, s)] = (c2.real ** 2 + c2.imag ** 2).sum(axis=-3)
    return res


def run_level(setup: SimSetup, gain: float, n_traj: int, seed: int, level_index: int = 0,
              mask: ObjectMask | None = None, shifts_um: tuple[float, ...] = (),
              batch: int = 8, workers: int = 1, dtype=np.float32) -> LevelEnsemble:
    """Simulate ``n_traj`` trajectories at one gain; deterministic for (seed, level_index)."""
    if n_traj < 2:
        raise ValueError("need at least two trajectories")
    batches = [range(s, min(s + batch, n_traj)) for s in range(0, n_traj, batch)]
    job = lambda b: _run_batch(setup, gain, b, seed, level_index, mask, tuple(shifts_um))
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(job, batches))
    else:
        results = [job(b) for b in batches]

    def gather(key):
        if key not in results[0]:
            return None
        return np.concatenate([r[key] for r in results]).astype(dtype)

    shifted = {s: (gather(("w", s)), gather(("ctl", s))) for s in shifts_um}
    log.info("gain %.4f: %d trajectories", gain, n_traj)
    return LevelEnsemble(gain, gather("w1"), gather("w2"), gather("ctl1"), gather("ctl2"),
                         setup.pitch_um, setup.grid.nt, gather("w1_obj"), gather("ctl1_obj"), shifted)


# ---------------------------------------------------------------- slices

def gain_levels(slice_gains, step: float = 0.1) -> np.ndarray:
    """Evenly spaced gains covering ``slice_gains`` with spacing at most ``step``."""
    g = np.asarray(slice_gains, dtype=float)
    lo, hi = g.min(), g.max()
    if hi - lo < 1e-12:
        return np.array([hi])
    n = max(2, int(math.ceil((hi - lo) / step)) + 1)
    return np.linspace(lo, hi, n)


def level_weights(slice_gains, levels) -> np.ndarray:
    """How many slices each level stands for, by Lagrange interpolation in gain.

    Each slice uses the three nearest levels (quadratic), or fewer when fewer
    exist.  A slice sitting on a level gets weight exactly one there.
    """
    levels = np.asarray(levels, dtype=float)
    w = np.zeros(len(levels))
    k = min(3, len(levels))
    for g in np.atleast_1d(slice_gains):
        if g < levels[0] - 1e-9 or g > levels[-1] + 1e-9:
            raise ValueError(f"slice gain {g} outside level range [{levels[0]}, {levels[-1]}]")
        hit = np.flatnonzero(np.abs(levels - g) < 1e-12)
        if hit.size:
            w[hit[0]] += 1.0
            continue
        idx = np.sort(np.argsort(np.abs(levels - g))[:k])
        for i in idx:
            others = [levels[j] for j in idx if j != i]
            w[i] += np.prod([(g - o) / (levels[i] - o) for o in others])
    return w


@dataclass
class PulseMix:
    """A pulse expressed as weighted gain levels."""

    duration_ps: float
    slices: list[TimeSlice]
    weights: np.ndarray


def pulse_mix(pump: PumpSpec, levels, slice_ps: float = 5.0) -> PulseMix:
    plan = time_slice_plan(pump, slice_ps)
    return PulseMix(pump.duration_ps, plan, level_weights([s.gain for s in plan], levels))


def pulse_frames(ensembles: list[LevelEnsemble], det: DetectorSpec, mix: PulseMix, seed: int | None = None):
    """Frames, object counts and weights for the levels a pulse actually uses."""
    frames, obj, obj_ctl, weights = [], [], [], []
    for ens, w in zip(ensembles, mix.weights):
        if w == 0:
            continue
        fr = ens.frame(det, seed)
        frames.append(fr)
        weights.append(float(w))
        if ens.w1_obj is not None:
            o, oc = ens.object_counts(det, fr)
            obj.append(o)
            obj_ctl.append(oc)
    return frames, (obj or None), (obj_ctl or None), weights
