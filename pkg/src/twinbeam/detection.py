"""Detection-plane processing: object, losses, pixels and ensemble estimators.

Frames produced from Wigner fields carry two corrections.  Means are
shifted by half a photon per mode.  Variances need the symmetric-ordering
excess removed: a pixel summing ``m`` modes has its Wigner variance inflated
by ``m/4``.  When a vacuum-reference frame is available (the same noise
pushed through the pipeline with zero gain) its sample moments are subtracted
instead of the analytic values.  This is unbiased and far less noisy.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .fieldsim import FieldPair
from .rng import (STREAM_BACKGROUND, STREAM_BOOTSTRAP, STREAM_LOSS1, STREAM_LOSS2,
                  STREAM_OBJECT, STREAM_POISSON, complex_normal, stream)

N_BOOTSTRAP = 200


# ---------------------------------------------------------------- object mask

@dataclass
class ObjectMask:
    alpha_map: np.ndarray

    def __post_init__(self):
        self.alpha_map = np.asarray(self.alpha_map, dtype=float)
        if self.alpha_map.ndim != 2:
            raise ValueError("alpha map must be two-dimensional")
        if np.any(self.alpha_map < 0) or np.any(self.alpha_map > 1):
            raise ValueError("alpha values must lie in [0, 1]")

    @property
    def shape(self):
        return self.alpha_map.shape

    @property
    def support(self) -> np.ndarray:
        return self.alpha_map > 0

    @property
    def transmission(self) -> np.ndarray:
        return np.sqrt(1.0 - self.alpha_map)

    @classmethod
    def uniform(cls, shape, alpha: float) -> "ObjectMask":
        return cls(np.full(shape, float(alpha)))

    @classmethod
    def rectangle(cls, shape, alpha: float, rows: tuple[int, int], cols: tuple[int, int]) -> "ObjectMask":
        a = np.zeros(shape)
        a[rows[0]:rows[1], cols[0]:cols[1]] = alpha
        return cls(a)

    @classmethod
    def letter(cls, shape, alpha: float, text: str = "T", cell: int = 8, offset=(0, 0)) -> "ObjectMask":
        """Block-letter stencil; each glyph pixel spans ``cell`` x ``cell`` grid cells."""
        a = np.zeros(shape)
        r0, c0 = offset
        for ch in text.upper():
            glyph = _GLYPHS.get(ch)
            if glyph is None:
                raise ValueError(f"no stencil for {ch!r}")
            for i, row in enumerate(glyph):
                for j, bit in enumerate(row):
                    if bit == "#":
                        a[r0 + i * cell: r0 + (i + 1) * cell, c0 + j * cell: c0 + (j + 1) * cell] = alpha
            c0 += (len(glyph[0]) + 1) * cell
        return cls(a[: shape[0], : shape[1]])

    @classmethod
    def from_text(cls, path: str | Path) -> "ObjectMask":
        """Read ``width height`` then ``height`` rows of ``width`` alpha values."""
        lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
        width, height = (int(v) for v in lines[0].split())
        rows = [[float(v) for v in ln.split()] for ln in lines[1:]]
        arr = np.array(rows, dtype=float)
        if arr.shape != (height, width):
            raise ValueError(f"{path}: header says {width}x{height}, body is {arr.shape[1]}x{arr.shape[0]}")
        return cls(arr)

    def to_text(self, path: str | Path) -> None:
        h, w = self.shape
        with open(path, "w") as fh:
            fh.write(f"{w} {h}\n")
            for row in self.alpha_map:
                fh.write(" ".join(f"{v:.6g}" for v in row) + "\n")


_GLYPHS = {
    "T": ["#####", "..#..", "..#..", "..#..", "..#.."],
    "B": ["####.", "#...#", "####.", "#...#", "####."],
    "P": ["####.", "#...#", "####.", "#....", "#...."],
    "D": ["####.", "#...#", "#...#", "#...#", "####."],
    "C": [".####", "#....", "#....", "#....", ".####"],
    "I": ["###", ".#.", ".#.", ".#.", "###"],
    "Q": [".###.", "#...#", "#...#", "#..##", ".####"],
}


# ---------------------------------------------------------------- detector

@dataclass(frozen=True)
class DetectorSpec:
    pixel_pitch_um: float = 20.0
    binning: int = 1
    eta1: float = 0.9
    eta2: float = 0.9
    x_shift_um: float = 0.0
    background_var: float = 0.0
    fourier_shift: bool = False

    def __post_init__(self):
        if self.binning < 1 or int(self.binning) != self.binning:
            raise ValueError("binning must be a positive integer")
        for name in ("eta1", "eta2"):
            v = getattr(self, name)
            if not 0 <= v <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.background_var < 0:
            raise ValueError("background variance must be >= 0")
        if self.pixel_pitch_um <= 0:
            raise ValueError("pixel pitch must be positive")

    @property
    def effective_pitch_um(self) -> float:
        return self.pixel_pitch_um * self.binning

    def cells_per_pixel(self, grid_pitch_um: float) -> int:
        ratio = self.effective_pitch_um / grid_pitch_um
        b = int(round(ratio))
        if b < 1 or abs(ratio - b) > 1e-6:
            raise ValueError(f"pixel {self.effective_pitch_um} um is not a multiple of grid pitch {grid_pitch_um} um")
        return b

    def pairing_offset_cells(self, grid_pitch_um: float) -> float:
        """Displacement of the arm-2 partner, 2 x_shift, in grid cells (unsnapped)."""
        return 2.0 * self.x_shift_um / grid_pitch_um

    def snapped_offset(self, grid_pitch_um: float) -> int:
        off = self.pairing_offset_cells(grid_pitch_um)
        k = int(round(off))
        if abs(off - k) > 1e-9 and not self.fourier_shift:
            warnings.warn(f"x_shift {self.x_shift_um} um moves the partner by {off:.3f} cells; "
                          f"snapped to {k}", stacklevel=2)
        return k


# ---------------------------------------------------------------- field-level ops

def _beam_splitter(c: np.ndarray, t, v: np.ndarray) -> np.ndarray:
    return t * c + 1j * np.sqrt(1.0 - np.asarray(t) ** 2) * v


def _port_vacuum(c: np.ndarray, seed: int, key: int, trajectory, slice_index: int) -> np.ndarray:
    """Fresh vacuum for a beam-splitter port; a sequence of trajectories maps to the batch axis."""
    if np.ndim(trajectory) == 0:
        return complex_normal(stream(seed, key, trajectory, slice_index), c.shape, 0.5)
    if len(trajectory) != c.shape[0]:
        raise ValueError("one trajectory index per batch entry is required")
    return np.stack([complex_normal(stream(seed, key, t, slice_index), c.shape[1:], 0.5)
                     for t in trajectory])


def apply_object(fields: FieldPair, mask: ObjectMask, seed: int, trajectory=0,
                 slice_index: int = 0) -> FieldPair:
    """Arm 1 crosses the absorbing object; the lost fraction is replaced by vacuum."""
    if fields.plane != "far":
        raise ValueError("the object sits in the detection plane")
    if mask.shape != fields.c1.shape[-2:]:
        raise ValueError(f"mask {mask.shape} does not match detection grid {fields.c1.shape[-2:]}")
    if not np.any(mask.support):
        return fields
    v = _port_vacuum(fields.c1, seed, STREAM_OBJECT, trajectory, slice_index)
    return replace(fields, c1=_beam_splitter(fields.c1, mask.transmission, v))


def apply_efficiency(fields: FieldPair, eta1: float, eta2: float | None = None, seed: int = 0,
                     trajectory=0, slice_index: int = 0) -> FieldPair:
    """Detector losses as beam splitters of transmission sqrt(eta) with vacuum ports."""
    eta2 = eta1 if eta2 is None else eta2
    out = []
    for c, eta, key in ((fields.c1, eta1, STREAM_LOSS1), (fields.c2, eta2, STREAM_LOSS2)):
        if not 0 <= eta <= 1:
            raise ValueError("efficiency must lie in [0, 1]")
        if eta == 1:
            out.append(c)
            continue
        v = _port_vacuum(c, seed, key, trajectory, slice_index)
        out.append(_beam_splitter(c, math.sqrt(eta), v))
    return replace(fields, c1=out[0], c2=out[1])


def fourier_translate(c: np.ndarray, cells: float, axis: int = -1) -> np.ndarray:
    """Translate a detection-plane field by a fractional number of cells (unitary)."""
    n = c.shape[axis]
    k = np.fft.fftfreq(n) * 2 * np.pi
    shape = [1] * c.ndim
    shape[axis] = n
    ramp = np.exp(-1j * k * cells).reshape(shape)
    return sfft.ifft(sfft.fft(c, axis=axis) * ramp, axis=axis)


def cell_maps(fields: FieldPair) -> tuple[np.ndarray, np.ndarray]:
    """Time-integrated Wigner intensities per detection cell, (..., ny, nx)."""
    return fields.wigner_intensity(1).sum(axis=-3), fields.wigner_intensity(2).sum(axis=-3)


def mirror(a: np.ndarray) -> np.ndarray:
    """Reflect a centered map through the optical axis: index i -> n - i (mod n)."""
    return np.roll(np.flip(a, axis=(-2, -1)), 1, axis=(-2, -1))


# ---------------------------------------------------------------- frames

@dataclass
class PixelFrame:
    """Per-pixel counts for an ensemble of trajectories, shape (trajectories, py, px).

    ``counts2`` is already re-indexed so that ``counts2[..., j, i]`` is the
    partner of arm-1 pixel ``(j, i)``.  ``control*`` hold the vacuum-reference
    counts when the Wigner pipeline produced them.
    """

    counts1: np.ndarray
    counts2: np.ndarray
    modes_per_pixel: int = 0
    control1: np.ndarray | None = None
    control2: np.ndarray | None = None
    valid: np.ndarray | None = None
    pitch_um: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.counts1.shape != self.counts2.shape:
            raise ValueError("arm count maps differ in shape")
        if self.valid is None:
            self.valid = np.ones(self.counts1.shape[-2:], dtype=bool)

    @property
    def n_trajectories(self) -> int:
        return self.counts1.shape[0]

    @property
    def is_wigner(self) -> bool:
        return self.modes_per_pixel > 0


def _block_sum(a: np.ndarray, b: int) -> np.ndarray:
    ny, nx = a.shape[-2:]
    py, px = ny // b, nx // b
    a = a[..., : py * b, : px * b]
    return a.reshape(a.shape[:-2] + (py, b, px, b)).sum(axis=(-3, -1))


def _valid_pixels(n: int, b: int, offset: int) -> np.ndarray:
    """Pixels whose partner cells n - i + offset stay inside 1..n-1 without wrapping."""
    p = n // b
    ok = np.zeros(p, dtype=bool)
    for j in range(p):
        idx = np.arange(j * b, (j + 1) * b)
        partner = n - idx + offset
        ok[j] = np.all((partner >= 1) & (partner <= n - 1)) and np.all(idx >= 1)
    return ok


def pixelize_cells(w1: np.ndarray, w2: np.ndarray, det: DetectorSpec, grid_pitch_um: float,
                   n_time: int, control1: np.ndarray | None = None, control2: np.ndarray | None = None,
                   seed: int | None = None, offset_cells: int | None = None) -> PixelFrame:
    """Pixel frames from time-integrated Wigner cell maps (trajectories, ny, nx).

    Arm 2 is mirrored about the assumed symmetry center, which sits
    ``x_shift`` away from the true one along x, so partners are displaced by
    ``2 x_shift``.
    """
    b = det.cells_per_pixel(grid_pitch_um)
    ny, nx = w1.shape[-2:]
    if abs(det.x_shift_um) >= 0.5 * nx * grid_pitch_um:
        raise ValueError(f"x_shift {det.x_shift_um} um is not below half the field of view")
    k = det.snapped_offset(grid_pitch_um) if offset_cells is None else offset_cells
    modes = b * b * n_time
    half = 0.5 * modes

    def arm2(a):
        return np.roll(mirror(a), k, axis=-1)

    p1 = _block_sum(w1, b) - half
    p2 = _block_sum(arm2(w2), b) - half
    c1 = c2 = None
    if control1 is not None:
        c1 = _block_sum(control1, b) - half
        c2 = _block_sum(arm2(control2), b) - half
    if det.background_var > 0:
        if seed is None:
            raise ValueError("background noise needs a seed")
        rng = stream(seed, STREAM_BACKGROUND, 0)
        sd = math.sqrt(det.background_var)
        p1 = p1 + sd * rng.standard_normal(p1.shape)
        p2 = p2 + sd * rng.standard_normal(p2.shape)
    valid = _valid_pixels(ny, b, 0)[:, None] & _valid_pixels(nx, b, k)[None, :]
    return PixelFrame(p1, p2, modes, c1, c2, valid, det.effective_pitch_um,
                      meta={"offset_cells": k, "cells_per_pixel": b})


def pixelize(fields: FieldPair, det: DetectorSpec, control: FieldPair | None = None,
             seed: int | None = None) -> PixelFrame:
    """Pixel frames straight from detection-plane fields (batch axis first)."""
    if fields.plane != "far" or fields.pitch_um is None:
        raise ValueError("pixelize needs detection-plane fields")
    pitch = fields.pitch_um
    off = det.pairing_offset_cells(pitch)
    frac_needed = det.fourier_shift and abs(off - round(off)) > 1e-9
    if frac_needed:
        # Sub-cell shift: translate arm 2 in the mirrored frame, keep integer part zero.
        f = replace(fields, c2=fourier_translate(fields.c2, -off, axis=-1))
        ctl = None if control is None else replace(control, c2=fourier_translate(control.c2, -off, axis=-1))
        k = 0
    else:
        f, ctl, k = fields, control, None
    w1, w2 = cell_maps(f)
    if w1.ndim == 2:
        w1, w2 = w1[None], w2[None]
    c1 = c2 = None
    if ctl is not None:
        c1, c2 = cell_maps(ctl)
        if c1.ndim == 2:
            c1, c2 = c1[None], c2[None]
    frame = pixelize_cells(w1, w2, det, pitch, fields.grid.nt, c1, c2, seed=seed, offset_cells=k)
    if frac_needed:
        frame.valid &= pixelize_cells(w1, w2, det, pitch, fields.grid.nt,
                                      offset_cells=int(math.ceil(abs(off)) * np.sign(off))).valid
    return frame


# ---------------------------------------------------------------- moments

@dataclass
class PairMoments:
    """Ordering-corrected per-pixel moments of one frame ensemble."""

    mean1: np.ndarray
    mean2: np.ndarray
    var1: np.ndarray
    var2: np.ndarray
    var_diff: np.ndarray

    def __add__(self, other: "PairMoments") -> "PairMoments":
        return PairMoments(*(a + b for a, b in zip(self.astuple(), other.astuple())))

    def scaled(self, w: float) -> "PairMoments":
        return PairMoments(*(w * a for a in self.astuple()))

    def astuple(self):
        return (self.mean1, self.mean2, self.var1, self.var2, self.var_diff)


def _var(a: np.ndarray) -> np.ndarray:
    return a.var(axis=0, ddof=1)


def frame_moments(frame: PixelFrame, idx: np.ndarray | None = None) -> PairMoments:
    """Moments of ``N1``, ``N2`` and ``N2 - N1`` over trajectories ``idx``."""
    if frame.n_trajectories < 2:
        raise ValueError("need at least two trajectories")
    take = (lambda a: a) if idx is None else (lambda a: a[idx])
    n1, n2 = take(frame.counts1), take(frame.counts2)
    if frame.control1 is not None:
        c1, c2 = take(frame.control1), take(frame.control2)
        return PairMoments(
            (n1 - c1).mean(axis=0), (n2 - c2).mean(axis=0),
            _var(n1) - _var(c1), _var(n2) - _var(c2),
            _var(n2 - n1) - _var(c2 - c1))
    excess = frame.modes_per_pixel / 4.0
    return PairMoments(n1.mean(axis=0), n2.mean(axis=0), _var(n1) - excess, _var(n2) - excess,
                       _var(n2 - n1) - 2 * excess)


def combined_moments(frames, weights=None, rng=None) -> PairMoments:
    """Sum of moments over independent time slices.

    ``frames`` is a sequence of PixelFrame, one per gain level; ``weights``
    how many slices each level stands for.  With ``rng`` the trajectories of
    every level are resampled with replacement (bootstrap replicate).
    """
    weights = [1.0] * len(frames) if weights is None else weights
    total = None
    for fr, w in zip(frames, weights):
        if w == 0:
            continue
        idx = None if rng is None else rng.integers(0, fr.n_trajectories, fr.n_trajectories)
        m = frame_moments(fr, idx).scaled(w)
        total = m if total is None else total + m
    if total is None:
        raise ValueError("all weights are zero")
    return total


# ---------------------------------------------------------------- estimators

@dataclass
class Measured:
    value: float
    stderr: float

    def __format__(self, spec):
        return f"{self.value:{spec}} +/- {self.stderr:{spec}}"


@dataclass
class CorrelationReport:
    sigma: Measured | None
    excess_noise: Measured | None
    mean_counts: float
    sigma_map: np.ndarray | None = None
    gamma_offsets_um: np.ndarray | None = None
    gamma12: np.ndarray | None = None
    gamma12_stderr: np.ndarray | None = None
    fwhm_um: Measured | None = None
    gamma_peak: Measured | None = None


def _as_list(frames):
    if isinstance(frames, PixelFrame):
        return [frames]
    return list(frames)


def _sigma_from(m: PairMoments, valid: np.ndarray, pairs=None):
    denom = m.mean1 + m.mean2
    with np.errstate(invalid="ignore", divide="ignore"):
        sig = np.where(denom > 0, m.var_diff / denom, np.nan)
        en = np.where(m.mean1 > 0, m.var1 / m.mean1 - 1, np.nan)
    s, e = sig[valid], en[valid]
    if pairs is not None:
        s, e = s[pairs], e[pairs]
    return sig, float(np.nanmean(s)) if np.any(np.isfinite(s)) else math.nan, \
        float(np.nanmean(e)) if np.any(np.isfinite(e)) else math.nan


def bootstrap_se(samples: np.ndarray, axis: int = 0) -> np.ndarray:
    """Half-width of the central 68.3% bootstrap interval.

    Equals the standard deviation for normal replicates but is not inflated
    by the occasional resample whose variance estimate lands near zero.
    """
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-nan columns give nan
        lo, hi = np.nanpercentile(samples, [15.865, 84.135], axis=axis)
    return 0.5 * (hi - lo)


def _bootstrap(frames, weights, valid, stat, seed, n_boot=N_BOOTSTRAP):
    rng = stream(seed, STREAM_BOOTSTRAP)
    n_pairs = int(valid.sum())
    out = []
    for _ in range(n_boot):
        m = combined_moments(frames, weights, rng)
        pairs = rng.integers(0, n_pairs, n_pairs)
        out.append(stat(m, pairs))
    return np.array(out)


def estimate_sigma(frames, weights=None, seed: int = 0, n_boot: int = N_BOOTSTRAP) -> CorrelationReport:
    """Noise-reduction factor of symmetric pixel pairs, averaged over valid pairs."""
    frames = _as_list(frames)
    valid = frames[0].valid
    m = combined_moments(frames, weights)
    if not np.any(valid):
        raise ValueError("no valid pixel pairs")
    mean_counts = float(np.mean(0.5 * (m.mean1 + m.mean2)[valid]))
    if mean_counts <= 0 or not np.isfinite(mean_counts):
        return CorrelationReport(None, None, mean_counts)
    sig_map, s, e = _sigma_from(m, valid)
    boots = _bootstrap(frames, weights, valid, lambda mm, p: _sigma_from(mm, valid, p)[1:], seed, n_boot)
    err = bootstrap_se(boots) if n_boot > 1 else (math.nan, math.nan)
    return CorrelationReport(Measured(s, float(err[0])), Measured(e, float(err[1])), mean_counts,
                             sigma_map=np.where(valid, sig_map, np.nan))


def _fwhm(offsets: np.ndarray, profile: np.ndarray) -> float:
    """Full width at half maximum by linear interpolation around the peak."""
    if not np.any(np.isfinite(profile)):
        return math.nan
    k = int(np.nanargmax(profile))
    half = 0.5 * profile[k]

    def edge(step):
        i = k
        while 0 <= i + step < len(profile) and profile[i + step] >= half:
            i += step
        j = i + step
        if not 0 <= j < len(profile):
            return offsets[i]
        frac = (profile[i] - half) / (profile[i] - profile[j])
        return offsets[i] + frac * (offsets[j] - offsets[i])

    return float(edge(1) - edge(-1))


def estimate_gamma12(w1: np.ndarray, w2: np.ndarray, pitch_um: float, n_time: int,
                     control1: np.ndarray | None = None, control2: np.ndarray | None = None,
                     max_offset: int = 6, axis: str = "x", margin: int | None = None,
                     seed: int = 0, n_boot: int = N_BOOTSTRAP) -> CorrelationReport:
    """Cross-section of the normalized signal-idler correlation on single cells.

    Gamma(x1, -x1 + d) is averaged over cells ``x1`` away from the window
    edges and over the ensemble, for d along ``axis`` (x: walk-off direction).
    """
    if w1.shape[0] < 2:
        raise ValueError("need at least two trajectories")
    m2 = mirror(w2)
    mc2 = mirror(control2) if control2 is not None else None
    ax = -1 if axis == "x" else -2
    ny, nx = w1.shape[-2:]
    # keep a core of at least 4 x 4 cells on small windows
    max_offset = min(max_offset, min(ny, nx) // 2 - 4)
    margin = max_offset + 2 if margin is None else margin
    if max_offset < 1 or min(ny, nx) - 2 * margin < 2:
        raise ValueError(f"window {ny}x{nx} too small for offsets up to {max_offset} with margin {margin}")
    core = (slice(None), slice(margin, ny - margin), slice(margin, nx - margin))
    offsets = np.arange(-max_offset, max_offset + 1)

    def profile(idx):
        a1 = w1 if idx is None else w1[idx]
        a2 = m2 if idx is None else m2[idx]
        d1 = a1 - a1.mean(0)
        d2 = a2 - a2.mean(0)
        v1 = (d1[core] ** 2).mean(0)
        v2 = (d2[core] ** 2).mean(0)
        if control1 is not None:
            b1 = control1 if idx is None else control1[idx]
            b2 = mc2 if idx is None else mc2[idx]
            e1 = b1 - b1.mean(0)
            e2 = b2 - b2.mean(0)
            v1 = v1 - (e1[core] ** 2).mean(0)
            v2 = v2 - (e2[core] ** 2).mean(0)
        else:
            v1 = v1 - n_time / 4.0
            v2 = v2 - n_time / 4.0
        norm = math.sqrt(max(v1.mean(), 0) * max(v2.mean(), 0))
        out = []
        for s in offsets:
            c = (d1 * np.roll(d2, -s, axis=ax))[core].mean(0)
            if control1 is not None:
                c = c - (e1 * np.roll(e2, -s, axis=ax))[core].mean(0)
            out.append(c.mean() / norm if norm > 0 else np.nan)
        return np.array(out)

    prof = profile(None)
    rng = stream(seed, STREAM_BOOTSTRAP, 1)
    n = w1.shape[0]
    boots = np.array([profile(rng.integers(0, n, n)) for _ in range(n_boot)])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        peaks = np.nanmax(boots, axis=1)
    fw = np.array([_fwhm(offsets * pitch_um, p) for p in boots])
    return CorrelationReport(
        None, None, float((w1 - (control1 if control1 is not None else n_time / 2)).mean()),
        gamma_offsets_um=offsets * pitch_um, gamma12=prof, gamma12_stderr=bootstrap_se(boots),
        fwhm_um=Measured(_fwhm(offsets * pitch_um, prof), float(bootstrap_se(fw))),
        gamma_peak=Measured(float(np.nanmax(prof)), float(bootstrap_se(peaks))))


# ---------------------------------------------------------------- SNR

@dataclass
class SnrReport:
    snr_map: np.ndarray
    snr: Measured
    snr_classical: Measured | None
    snr_sql: Measured
    ratio: Measured
    mean_counts: float
    alpha_map: np.ndarray
    signal_map: np.ndarray
    support: np.ndarray


def pixel_alpha(mask: ObjectMask, det: DetectorSpec, grid_pitch_um: float) -> np.ndarray:
    b = det.cells_per_pixel(grid_pitch_um)
    return _block_sum(mask.alpha_map, b) / (b * b)


def _snr_stat(m_ref: PairMoments, m_obj: PairMoments, alpha_px, support, pairs=None):
    signal = m_obj.mean2 - m_obj.mean1
    with np.errstate(invalid="ignore", divide="ignore"):
        snr = np.where(m_obj.var_diff > 0, signal / np.sqrt(m_obj.var_diff), np.nan)
        sql = alpha_px * np.sqrt(np.clip(m_ref.mean1, 0, None)) / np.sqrt(2 - alpha_px)
    idx = np.flatnonzero(support)
    if pairs is not None:
        idx = idx[pairs]
    w = np.clip(m_ref.mean1.ravel()[idx], 0, None)
    s = snr.ravel()[idx]
    q = sql.ravel()[idx]
    ok = np.isfinite(s)
    agg = float(np.sum(w[ok] * s[ok]) / np.sum(w[ok])) if np.any(ok) else math.nan
    agg_sql = float(np.sum(w * q) / np.sum(w)) if np.sum(w) > 0 else math.nan
    return snr, agg, agg_sql


def _object_frame(ref: PixelFrame, obj1: np.ndarray, obj_ctl1: np.ndarray | None) -> PixelFrame:
    return replace(ref, counts1=obj1, control1=obj_ctl1 if ref.control1 is not None else None)


def estimate_snr(ref_frames, obj_counts1, mask: ObjectMask, det: DetectorSpec, grid_pitch_um: float,
                 weights=None, obj_control1=None, classical: "SnrReport | None" = None,
                 seed: int = 0, n_boot: int = N_BOOTSTRAP) -> SnrReport:
    """Per-pixel SNR of N2 - N1' and its flux-weighted aggregate over the object.

    ``ref_frames``: frames without object (one per gain level).
    ``obj_counts1``: matching arm-1 pixel counts behind the object (and their
    vacuum references in ``obj_control1``).
    """
    ref_frames = _as_list(ref_frames)
    obj_counts1 = obj_counts1 if isinstance(obj_counts1, (list, tuple)) else [obj_counts1]
    if obj_control1 is None:
        obj_control1 = [None] * len(ref_frames)
    elif not isinstance(obj_control1, (list, tuple)):
        obj_control1 = [obj_control1]
    obj_frames = [_object_frame(r, o, c) for r, o, c in zip(ref_frames, obj_counts1, obj_control1)]
    alpha_px = pixel_alpha(mask, det, grid_pitch_um)
    valid = ref_frames[0].valid
    support = valid & (alpha_px > 0)
    m_ref = combined_moments(ref_frames, weights)
    m_obj = combined_moments(obj_frames, weights)
    snr_map, agg, agg_sql = _snr_stat(m_ref, m_obj, alpha_px, support)

    rng = stream(seed, STREAM_BOOTSTRAP, 2)
    n_sup = int(support.sum())
    boots = []
    for _ in range(n_boot):
        # The same trajectory indices drive reference and object frames.
        state = rng.bit_generator.state
        mr = combined_moments(ref_frames, weights, rng)
        rng.bit_generator.state = state
        mo = combined_moments(obj_frames, weights, rng)
        pairs = rng.integers(0, n_sup, n_sup) if n_sup else None
        _, a, q = _snr_stat(mr, mo, alpha_px, support, pairs)
        boots.append((a, a / q, q))
    boots = np.array(boots)
    err = bootstrap_se(boots) if n_boot > 1 else (math.nan,) * 3
    mean_counts = float(np.mean(m_ref.mean1[support])) if n_sup else math.nan
    return SnrReport(
        snr_map=np.where(support, snr_map, np.nan), snr=Measured(agg, float(err[0])),
        snr_classical=classical.snr if classical is not None else None,
        snr_sql=Measured(agg_sql, float(err[2])),
        ratio=Measured(agg / agg_sql, float(err[1])), mean_counts=mean_counts,
        alpha_map=alpha_px, signal_map=np.where(valid, m_obj.mean2 - m_obj.mean1, np.nan),
        support=support)


def poisson_frames(mean1: np.ndarray, mean2: np.ndarray, trials: int, seed: int,
                   alpha_px: np.ndarray | None = None, valid: np.ndarray | None = None):
    """Independent Poisson arms with the given per-pixel means (coherent split beams).

    Returns the reference frame and, when ``alpha_px`` is given, the arm-1
    counts after binomial thinning by the object.
    """
    rng = stream(seed, STREAM_POISSON)
    shape = (trials,) + np.shape(mean1)
    n1 = rng.poisson(np.clip(mean1, 0, None), size=shape).astype(float)
    n2 = rng.poisson(np.clip(mean2, 0, None), size=shape).astype(float)
    frame = PixelFrame(n1, n2, 0, valid=valid)
    if alpha_px is None:
        return frame, None
    n1_obj = rng.binomial(n1.astype(np.int64), 1.0 - alpha_px).astype(float)
    return frame, n1_obj


def classical_baseline(mean_counts_map: np.ndarray, det: DetectorSpec, mask: ObjectMask,
                       grid_pitch_um: float, trials: int, seed: int,
                       valid: np.ndarray | None = None, n_boot: int = N_BOOTSTRAP) -> tuple[SnrReport, CorrelationReport]:
    """SNR of the same measurement with two independent coherent (Poisson) beams."""
    alpha_px = pixel_alpha(mask, det, grid_pitch_um)
    frame, n1_obj = poisson_frames(mean_counts_map, mean_counts_map, trials, seed, alpha_px, valid)
    snr = estimate_snr(frame, n1_obj, mask, det, grid_pitch_um, seed=seed, n_boot=n_boot)
    corr = estimate_sigma(frame, seed=seed, n_boot=n_boot)
    return snr, corr


# ---------------------------------------------------------------- persistence

def write_frames_csv(frame: PixelFrame, path: str | Path, which: str = "counts") -> None:
    """CSV rows ``trajectory,pixel_x,pixel_y,arm,count`` (ordering-corrected counts)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["trajectory", "pixel_x", "pixel_y", "arm", "count"])
        for arm, arr in ((1, frame.counts1), (2, frame.counts2)):
            t, py, px = arr.shape
            for k in range(t):
                for j in range(py):
                    for i in range(px):
                        w.writerow([k, i, j, arm, repr(float(arr[k, j, i]))])


def read_frames_csv(path: str | Path) -> PixelFrame:
    rows = list(csv.DictReader(open(path, newline="")))
    t = 1 + max(int(r["trajectory"]) for r in rows)
    px = 1 + max(int(r["pixel_x"]) for r in rows)
    py = 1 + max(int(r["pixel_y"]) for r in rows)
    arrs = {1: np.zeros((t, py, px)), 2: np.zeros((t, py, px))}
    for r in rows:
        arrs[int(r["arm"])][int(r["trajectory"]), int(r["pixel_y"]), int(r["pixel_x"])] = float(r["count"])
    return PixelFrame(arrs[1], arrs[2])
