"""Stochastic Wigner simulation of multi-mode parametric down-conversion.

Signal (field 1) and idler (field 2) envelopes are sampled on a periodic
``(t, y, x)`` grid.  Amplitudes are stored in *mode units*: every grid cell is
one orthonormal mode, so a Wigner vacuum cell has ``<|c|^2> = 1/2`` and the
photon number of a cell is ``|c|^2 - 1/2`` on average.  Multiply by
``GridSpec.cell_volume ** -0.5`` to obtain densities in sqrt(photons/(um^2 ps)).

Units: transverse lengths in um, crystal lengths in mm, times in ps,
wavevectors in 1/um, temporal frequencies in rad/ps.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .rng import STREAM_VACUUM, complex_normal, stream

UM_PER_MM = 1000.0


@dataclass(frozen=True)
class GridSpec:
    nx: int
    ny: int
    nt: int
    dx: float  # um, near field
    dy: float  # um, near field
    dt: float  # ps

    def __post_init__(self):
        for name in ("nx", "ny", "nt"):
            n = getattr(self, name)
            if n < 2 or n % 2:
                raise ValueError(f"{name} must be even and >= 2, got {n}")
        for name in ("dx", "dy", "dt"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def for_far_field(
        cls,
        pitch_um: float = 5.0,
        focal_mm: float = 50.0,
        wavelength_um: float = 0.704,
        n: int = 64,
        nt: int = 32,
        window_ps: float = 5.0,
    ) -> "GridSpec":
        """Grid whose far-field sampling step is ``pitch_um`` behind an f-f lens."""
        dx = wavelength_um * focal_mm * UM_PER_MM / (n * pitch_um)
        return cls(nx=n, ny=n, nt=nt, dx=dx, dy=dx, dt=window_ps / nt)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nt, self.ny, self.nx)

    @property
    def dqx(self) -> float:
        return 2 * np.pi / (self.nx * self.dx)

    @property
    def dqy(self) -> float:
        return 2 * np.pi / (self.ny * self.dy)

    @property
    def d_omega(self) -> float:
        return 2 * np.pi / (self.nt * self.dt)

    @property
    def cell_volume(self) -> float:
        """Near-field phase-space cell, um^2 ps."""
        return self.dx * self.dy * self.dt

    @property
    def window_ps(self) -> float:
        return self.nt * self.dt

    def coords(self):
        """Centered near-field coordinates ``(t, y, x)`` broadcastable to ``shape``."""
        t = (np.arange(self.nt) - self.nt // 2) * self.dt
        y = (np.arange(self.ny) - self.ny // 2) * self.dy
        x = (np.arange(self.nx) - self.nx // 2) * self.dx
        return t[:, None, None], y[None, :, None], x[None, None, :]

    def frequencies(self):
        """FFT-ordered ``(omega, qy, qx)`` broadcastable to ``shape``."""
        om = 2 * np.pi * np.fft.fftfreq(self.nt, self.dt)
        qy = 2 * np.pi * np.fft.fftfreq(self.ny, self.dy)
        qx = 2 * np.pi * np.fft.fftfreq(self.nx, self.dx)
        return om[:, None, None], qy[None, :, None], qx[None, None, :]

    def detection_pitch(self, focal_mm: float, wavelength_um: float) -> float:
        """Far-field sampling step (um) under the mapping x = lambda f q / 2 pi."""
        return wavelength_um * focal_mm * UM_PER_MM * self.dqx / (2 * np.pi)

    def check_resolution(self, x_fwhm_um: float, focal_mm: float, wavelength_um: float) -> bool:
        """Warn if fewer than two far-field samples span ``x_fwhm_um``."""
        pitch = self.detection_pitch(focal_mm, wavelength_um)
        ok = x_fwhm_um >= 2 * pitch * (1 - 1e-9)
        if not ok:
            warnings.warn(
                f"far-field pitch {pitch:.2f} um gives {x_fwhm_um / pitch:.2f} samples "
                f"per coherence length {x_fwhm_um:.2f} um (< 2)",
                stacklevel=2,
            )
        return ok


@dataclass(frozen=True)
class PumpSpec:
    waist_um: float = 1500.0
    duration_ps: float = 5.0
    gain: float = 1.0
    wavelength_um: float = 0.352

    def __post_init__(self):
        if not (self.waist_um > 0 and self.duration_ps > 0 and self.wavelength_um > 0):
            raise ValueError("pump waist, duration and wavelength must be positive")
        if not (np.isfinite(self.gain) and self.gain >= 0):
            raise ValueError(f"gain must be finite and >= 0, got {self.gain}")

    @property
    def spatial_bandwidth(self) -> float:
        return 2.0 / self.waist_um

    @property
    def temporal_bandwidth(self) -> float:
        return 2.0 / self.duration_ps

    def spatial_profile(self, grid: GridSpec) -> np.ndarray:
        """Normalized transverse amplitude exp(-(x^2+y^2)/w^2), shape ``(ny, nx)``."""
        _, y, x = grid.coords()
        return np.exp(-(x[0] ** 2 + y[0] ** 2) / self.waist_um**2)

    def temporal_profile(self, t) -> np.ndarray:
        return np.exp(-np.asarray(t) ** 2 / self.duration_ps**2)


@dataclass(frozen=True)
class CrystalSpec:
    """Uniaxial crystal with per-field dispersion expanded around the carriers.

    Field 1 is the ordinary signal, field 2 the extraordinary idler.  The
    longitudinal wavevector of field j is

        k_jz(q, W) - k_j = sqrt(k_j^2 - q^2) - k_j + rho_j q_x
                           + k'_j W + k''_j W^2 / 2
    """

    length_mm: float = 4.0
    delta0_per_mm: float = 0.0
    wavelength_um: float = 0.704
    index1: float = 1.6623
    index2: float = 1.6151
    group_delay1: float = 5.650  # ps/mm
    group_delay2: float = 5.450  # ps/mm
    gvd1: float = 9.0e-5  # ps^2/mm
    gvd2: float = 8.5e-5  # ps^2/mm
    walkoff1: float = 0.0  # rad
    walkoff2: float = 0.068  # rad
    name: str = "custom"

    def __post_init__(self):
        if not self.length_mm > 0:
            raise ValueError("crystal length must be positive")
        if not (self.index1 > 0 and self.index2 > 0 and self.wavelength_um > 0):
            raise ValueError("refractive indices and wavelength must be positive")

    @property
    def k1(self) -> float:
        return 2 * np.pi * self.index1 / self.wavelength_um

    @property
    def k2(self) -> float:
        return 2 * np.pi * self.index2 / self.wavelength_um

    def dispersion(self, grid: GridSpec, which: int, frame_delay: float | None = None) -> np.ndarray:
        """``k_jz(q, W) - k_j`` in 1/mm on the FFT-ordered grid.

        ``frame_delay`` (ps/mm) is subtracted from both fields; it cancels in
        the phase mismatch and only moves the common reference frame.
        """
        om, qy, qx = grid.frequencies()
        if which == 1:
            k, k1p, k2p, rho = self.k1, self.group_delay1, self.gvd1, self.walkoff1
        elif which == 2:
            k, k1p, k2p, rho = self.k2, self.group_delay2, self.gvd2, self.walkoff2
        else:
            raise ValueError("which must be 1 or 2")
        if frame_delay is None:
            frame_delay = 0.5 * (self.group_delay1 + self.group_delay2)
        q2 = qx**2 + qy**2
        if np.any(q2 >= k**2):
            raise ValueError("grid reaches evanescent transverse wavevectors")
        spatial = (np.sqrt(k**2 - q2) - k + rho * qx) * UM_PER_MM
        temporal = (k1p - frame_delay) * om + 0.5 * k2p * om**2
        return spatial + temporal

    def mismatch(self, grid: GridSpec, which: int = 1) -> np.ndarray:
        """Phase mismatch of the pair (q, W)_j, (-q, -W)_other, in 1/mm."""
        d_this = self.dispersion(grid, which)
        d_other = self.dispersion(grid, 3 - which)
        return d_this + reverse(d_other, axes=(-3, -2, -1)) + self.delta0_per_mm


def bbo_type2_704() -> CrystalSpec:
    """4 mm BBO cut for degenerate type-II down-conversion 352 nm -> 704 nm.

    Indices and group delays follow the usual Sellmeier tables for BBO around
    700 nm (ordinary 1.662, extraordinary at the phase-matching angle 1.615;
    o/e group-velocity mismatch 0.2 ps/mm, GVD ~90 fs^2/mm).  The idler walks
    off by 0.068 rad along x.  Collinear degenerate phase matching: delta0 = 0.
    """
    return CrystalSpec(name="BBO-type-II-704nm")


PRESETS = {"BBO-type-II-704nm": bbo_type2_704}


@dataclass
class FieldPair:
    c1: np.ndarray
    c2: np.ndarray
    grid: GridSpec
    z_mm: float = 0.0
    plane: str = "near"  # "near" (crystal) or "far" (detection)
    pitch_um: float | None = None  # detection-plane step when plane == "far"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.c1.shape != self.c2.shape:
            raise ValueError("signal and idler arrays differ in shape")
        if self.c1.shape[-3:] != self.grid.shape:
            raise ValueError(f"array shape {self.c1.shape} does not match grid {self.grid.shape}")

    def copy(self) -> "FieldPair":
        return replace(self, c1=self.c1.copy(), c2=self.c2.copy(), meta=dict(self.meta))

    def wigner_intensity(self, which: int) -> np.ndarray:
        c = self.c1 if which == 1 else self.c2
        return c.real**2 + c.imag**2

    def photon_number(self, which: int) -> np.ndarray:
        """Ordering-corrected photon number summed over the grid (per batch entry)."""
        n_modes = np.prod(self.grid.shape)
        return self.wigner_intensity(which).sum(axis=(-3, -2, -1)) - 0.5 * n_modes

    def density(self, which: int) -> np.ndarray:
        c = self.c1 if which == 1 else self.c2
        return c / np.sqrt(self.grid.cell_volume)


def reverse(a: np.ndarray, axes=(-3, -2, -1)) -> np.ndarray:
    """Index map k -> -k (mod n) on FFT-ordered axes."""
    for ax in axes:
        a = np.roll(np.flip(a, axis=ax), 1, axis=ax)
    return a


def sample_vacuum(grid: GridSpec, seed: int, trajectory: int = 0, slice_index: int = 0,
                  batch: int | None = None) -> FieldPair:
    """Wigner vacuum: i.i.d. circular Gaussian cells with <|c|^2> = 1/2."""
    rng = stream(seed, STREAM_VACUUM, trajectory, slice_index)
    shape = grid.shape if batch is None else (batch,) + grid.shape
    c = complex_normal(rng, (2,) + shape, 0.5)
    return FieldPair(c[0], c[1], grid, z_mm=0.0,
                     meta={"seed": seed, "trajectory": trajectory, "slice": slice_index})


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise FloatingPointError("non-finite field values during propagation")


def propagate_split_step(
    fields: FieldPair,
    pump: PumpSpec,
    crystal: CrystalSpec,
    n_steps: int = 32,
    gain: float | None = None,
    temporal_profile: bool = False,
    single_precision: bool = False,
) -> FieldPair:
    """Integrate the coupled signal/idler equations through the crystal.

    Symmetric splitting: half linear step in Fourier space, exact local
    two-mode squeezing in direct space, and so on.  ``gain`` overrides
    ``pump.gain`` (used for quasi-stationary time slices).  With
    ``temporal_profile`` the Gaussian pulse envelope is applied across the
    time window; otherwise the pump is constant over the window and the
    temporal axis is handled in the frequency domain throughout.
    ``single_precision`` runs the loop in complex64, roughly twice as fast.
    """
    if n_steps < 4:
        raise ValueError("n_steps must be >= 4")
    if fields.plane != "near":
        raise ValueError("propagation requires crystal-plane fields")
    grid = fields.grid
    g = pump.gain if gain is None else float(gain)
    if not np.isfinite(g) or g < 0:
        raise ValueError(f"gain must be finite and >= 0, got {g}")
    lc = crystal.length_mm
    dz = lc / n_steps
    half_delta0 = 0.5 * crystal.delta0_per_mm
    d1 = crystal.dispersion(grid, 1) + half_delta0
    d2 = crystal.dispersion(grid, 2) + half_delta0

    profile = pump.spatial_profile(grid)[None]
    if temporal_profile:
        t, _, _ = grid.coords()
        profile = profile * pump.temporal_profile(t)
    kappa = (g / lc) * profile
    ch = np.cosh(kappa * dz)
    sh = np.sinh(kappa * dz)

    if temporal_profile:
        axes = (-3, -2, -1)
        fwd = lambda a: sfft.fftn(a, axes=axes, norm="ortho")
        inv = lambda a: sfft.ifftn(a, axes=axes, norm="ortho")
        partner = np.conj
        a1, a2 = fields.c1, fields.c2
        lin1, lin2 = d1, d2
    else:
        axes = (-2, -1)
        fwd = lambda a: sfft.fft2(a, axes=axes, norm="ortho")
        inv = lambda a: sfft.ifft2(a, axes=axes, norm="ortho")
        rev_t = (-np.arange(grid.nt)) % grid.nt
        partner = lambda a: np.conj(a[..., rev_t, :, :])
        a1 = sfft.fft(fields.c1, axis=-3, norm="ortho")
        a2 = sfft.fft(fields.c2, axis=-3, norm="ortho")
        lin1, lin2 = d1, d2

    half1, half2 = np.exp(0.5j * lin1 * dz), np.exp(0.5j * lin2 * dz)
    full1, full2 = half1 * half1, half2 * half2
    if single_precision:
        cdt, rdt = np.complex64, np.float32
        half1, half2, full1, full2 = (x.astype(cdt) for x in (half1, half2, full1, full2))
        ch, sh = ch.astype(rdt), sh.astype(rdt)
        a1, a2 = a1.astype(cdt), a2.astype(cdt)
    b1 = fwd(a1) * half1
    b2 = fwd(a2) * half2
    for step in range(n_steps):
        a1 = inv(b1)
        a2 = inv(b2)
        if g > 0:
            a1, a2 = ch * a1 + sh * partner(a2), ch * a2 + sh * partner(a1)
        b1 = fwd(a1)
        b2 = fwd(a2)
        if step < n_steps - 1:
            b1 *= full1
            b2 *= full2
        else:
            b1 *= half1
            b2 *= half2
        if step % 8 == 7:
            _check_finite(b1, b2)
    a1 = inv(b1)
    a2 = inv(b2)
    if not temporal_profile:
        a1 = sfft.ifft(a1, axis=-3, norm="ortho")
        a2 = sfft.ifft(a2, axis=-3, norm="ortho")
    phase = np.exp(-1j * half_delta0 * lc)
    _check_finite(a1, a2)
    return replace(fields, c1=a1 * phase, c2=a2 * phase, z_mm=fields.z_mm + lc,
                   meta={**fields.meta, "gain": g, "n_steps": n_steps})


@dataclass
class PwpGain:
    u1: np.ndarray
    v1: np.ndarray
    u2: np.ndarray
    v2: np.ndarray

    def symplectic_error(self) -> float:
        return float(max(np.max(np.abs(np.abs(self.u1) ** 2 - np.abs(self.v1) ** 2 - 1)),
                         np.max(np.abs(np.abs(self.u2) ** 2 - np.abs(self.v2) ** 2 - 1))))


def _shc(gamma_sq: np.ndarray):
    """cosh(G) and sinh(G)/G for G = sqrt(gamma_sq), real or imaginary."""
    gamma_sq = np.asarray(gamma_sq, dtype=float)
    pos = gamma_sq >= 0
    r = np.sqrt(np.abs(gamma_sq))
    with np.errstate(invalid="ignore", divide="ignore"):
        ch = np.where(pos, np.cosh(r), np.cos(r))
        small = r < 1e-6
        shc_pos = np.where(small, 1 + gamma_sq / 6, np.sinh(r) / np.where(small, 1, r))
        shc_neg = np.where(small, 1 + gamma_sq / 6, np.sin(r) / np.where(small, 1, r))
    return ch, np.where(pos, shc_pos, shc_neg)


def pwp_gains(grid: GridSpec, gain: float, crystal: CrystalSpec) -> PwpGain:
    """Plane-wave-pump two-mode squeezing gains on the FFT-ordered grid.

    For the pair (q, W)_1, (-q, -W)_2 with mismatch D (1/mm) and G^2 = g^2 - (D l/2)^2:
        U = e^{i phi} [cosh G + i (D l / 2) sinh G / G]
        V = e^{i phi} g sinh G / G
    with phi = (d_1 - d_2') l / 2 - delta0 l / 2 matching the split-step frame.
    """
    lc = crystal.length_mm
    hd0 = 0.5 * crystal.delta0_per_mm
    out = []
    for which in (1, 2):
        d_this = crystal.dispersion(grid, which) + hd0
        d_other = reverse(crystal.dispersion(grid, 3 - which)) + hd0
        delta = d_this + d_other
        half = 0.5 * delta * lc
        ch, shc = _shc(gain**2 - half**2)
        phase = np.exp(1j * (0.5 * (d_this - d_other) * lc - hd0 * lc))
        out.append(phase * (ch + 1j * half * shc))
        out.append(phase * gain * shc)
    return PwpGain(*out)


def apply_pwp(fields: FieldPair, gains: PwpGain) -> FieldPair:
    """Exact plane-wave-pump input-output map, pairing (q, W)_1 with (-q, -W)_2."""
    if gains.u1.shape != fields.grid.shape:
        raise ValueError("gain arrays do not match the field grid")
    axes = (-3, -2, -1)
    f1 = sfft.fftn(fields.c1, axes=axes, norm="ortho")
    f2 = sfft.fftn(fields.c2, axes=axes, norm="ortho")
    o1 = gains.u1 * f1 + gains.v1 * np.conj(reverse(f2))
    o2 = gains.u2 * f2 + gains.v2 * np.conj(reverse(f1))
    c1 = sfft.ifftn(o1, axes=axes, norm="ortho")
    c2 = sfft.ifftn(o2, axes=axes, norm="ortho")
    return replace(fields, c1=c1, c2=c2, meta={**fields.meta, "pwp": True})


def to_far_field(fields: FieldPair, focal_mm: float = 50.0, wavelength_um: float = 0.704) -> FieldPair:
    """f-f lens: unitary spatial Fourier transform per time sample, centered.

    Cell (j, i) of the output sits at X = (i - nx/2) * pitch, Y = (j - ny/2) * pitch.
    """
    if fields.plane != "near":
        raise ValueError("fields are already in the detection plane")
    axes = (-2, -1)
    c1 = sfft.fftshift(sfft.fft2(fields.c1, axes=axes, norm="ortho"), axes=axes)
    c2 = sfft.fftshift(sfft.fft2(fields.c2, axes=axes, norm="ortho"), axes=axes)
    pitch = fields.grid.detection_pitch(focal_mm, wavelength_um)
    return replace(fields, c1=c1, c2=c2, plane="far", pitch_um=pitch,
                   meta={**fields.meta, "focal_mm": focal_mm, "wavelength_um": wavelength_um})


def x_fwhm_low_gain(wavelength_um: float, focal_mm: float, waist_um: float) -> float:
    """Far-field width of the signal-idler correlation in the low-gain limit (um)."""
    return np.sqrt(2 * np.log(2)) / np.pi * wavelength_um * focal_mm * UM_PER_MM / waist_um


@dataclass(frozen=True)
class TimeSlice:
    index: int
    t_center_ps: float
    duration_ps: float
    gain: float


def time_slice_plan(pump: PumpSpec, slice_ps: float = 5.0) -> list[TimeSlice]:
    """Split the pulse into quasi-stationary slices of ``slice_ps``.

    The pulse duration is covered by ``round(tau_p / slice_ps)`` slices (at
    least one), each carrying the local peak amplitude g exp(-t_c^2/tau_p^2).
    """
    if not slice_ps > 0:
        raise ValueError("slice length must be positive")
    n = max(1, int(round(pump.duration_ps / slice_ps)))
    if n == 1:
        return [TimeSlice(0, 0.0, pump.duration_ps, pump.gain)]
    span = n * slice_ps
    centers = (np.arange(n) + 0.5) * slice_ps - span / 2
    gains = pump.gain * pump.temporal_profile(centers)
    return [TimeSlice(i, float(c), slice_ps, float(gk)) for i, (c, gk) in enumerate(zip(centers, gains))]


# Trajectory dump: little-endian header followed by interleaved complex128 c1, c2.
_DUMP_MAGIC = b"TWBF"
_DUMP_HEADER = struct.Struct("<4sHHHHddddQ")


def dump_trajectory(fields: FieldPair, path: str | Path, dz_mm: float, seed: int) -> None:
    """Write one trajectory as ``magic, version, nt, ny, nx, dt, dy, dx, dz, seed`` + data.

    Header layout (little-endian): 4s magic "TWBF", uint16 version=1, uint16 nt,
    ny, nx, float64 dt (ps), dy (um), dx (um), dz (mm), uint64 seed.  Payload:
    c1 then c2, each C-ordered (t, y, x) complex128 little-endian.
    """
    g = fields.grid
    if fields.c1.shape != g.shape:
        raise ValueError("dump expects a single trajectory (no batch axis)")
    with open(path, "wb") as fh:
        fh.write(_DUMP_HEADER.pack(_DUMP_MAGIC, 1, g.nt, g.ny, g.nx, g.dt, g.dy, g.dx, dz_mm, seed))
        fh.write(fields.c1.astype("<c16").tobytes())
        fh.write(fields.c2.astype("<c16").tobytes())


def load_trajectory(path: str | Path) -> tuple[FieldPair, dict]:
    raw = Path(path).read_bytes()
    magic, version, nt, ny, nx, dt, dy, dx, dz, seed = _DUMP_HEADER.unpack_from(raw)
    if magic != _DUMP_MAGIC or version != 1:
        raise ValueError(f"{path}: not a trajectory dump")
    grid = GridSpec(nx=nx, ny=ny, nt=nt, dx=dx, dy=dy, dt=dt)
    n = nt * ny * nx
    data = np.frombuffer(raw, dtype="<c16", offset=_DUMP_HEADER.size, count=2 * n)
    c1 = data[:n].reshape(grid.shape).astype(complex)
    c2 = data[n:].reshape(grid.shape).astype(complex)
    return FieldPair(c1, c2, grid), {"dz_mm": dz, "seed": seed}
