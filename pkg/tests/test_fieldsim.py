import math
import struct

import numpy as np
import pytest
from scipy import fft as sfft

from twinbeam.ensemble import propagate_linear
from twinbeam.fieldsim import (CrystalSpec, FieldPair, GridSpec, PumpSpec, apply_pwp, bbo_type2_704,
                               dump_trajectory, load_trajectory, propagate_split_step, pwp_gains, reverse,
                               sample_vacuum, time_slice_plan, to_far_field, x_fwhm_low_gain)

SMALL = GridSpec.for_far_field(n=16, nt=8)


def spectrum(c):
    return sfft.fftn(c, axes=(-3, -2, -1), norm="ortho")


def test_grid_rejects_odd_or_tiny():
    with pytest.raises(ValueError):
        GridSpec(15, 16, 8, 1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        GridSpec(16, 16, 0, 1.0, 1.0, 0.1)
    with pytest.raises(ValueError):
        GridSpec(16, 16, 8, -1.0, 1.0, 0.1)


def test_far_field_grid_pitch():
    g = GridSpec.for_far_field()
    assert g.shape == (32, 64, 64)
    assert g.detection_pitch(50, 0.704) == pytest.approx(5.0)
    assert g.detection_pitch(100, 0.704) == pytest.approx(10.0)
    assert g.dt == pytest.approx(0.15625)


def test_resolution_check_warns_when_coarse():
    g = GridSpec.for_far_field(pitch_um=10.0)
    with pytest.warns(UserWarning):
        assert not g.check_resolution(8.8, 50, 0.704)
    assert GridSpec.for_far_field().check_resolution(10.0, 50, 0.704)


def test_vacuum_statistics():
    g = GridSpec.for_far_field(n=32, nt=16)
    f = sample_vacuum(g, seed=3, batch=8)
    c = f.c1.ravel()
    se = math.sqrt(0.5 / c.size)
    assert abs(c.real.mean()) < 5 * se and abs(c.imag.mean()) < 5 * se
    assert np.mean(np.abs(c) ** 2) == pytest.approx(0.5, rel=0.01)
    other = sample_vacuum(g, seed=4, batch=8).c1.ravel()
    corr = np.mean(c * np.conj(other)) / 0.5
    assert abs(corr) < 5 / math.sqrt(c.size)


def test_vacuum_is_reproducible_per_trajectory():
    a = sample_vacuum(SMALL, seed=9, trajectory=5, slice_index=2)
    b = sample_vacuum(SMALL, seed=9, trajectory=5, slice_index=2)
    c = sample_vacuum(SMALL, seed=9, trajectory=6, slice_index=2)
    assert np.array_equal(a.c1, b.c1)
    assert not np.array_equal(a.c1, c.c1)


def test_zero_gain_conserves_photons_per_mode():
    f = sample_vacuum(SMALL, seed=1, batch=2)
    out = propagate_split_step(f, PumpSpec(gain=0.0), bbo_type2_704(), n_steps=8)
    for a, b in ((f.c1, out.c1), (f.c2, out.c2)):
        pa, pb = np.abs(spectrum(a)) ** 2, np.abs(spectrum(b)) ** 2
        assert np.max(np.abs(pa - pb)) / np.max(pa) < 1e-12
    assert np.allclose(out.photon_number(1), f.photon_number(1), rtol=0, atol=1e-12 * f.c1[0].size)


def test_linear_shortcut_matches_zero_gain_integrator():
    f = sample_vacuum(SMALL, seed=2)
    a = propagate_split_step(f, PumpSpec(gain=0.0), bbo_type2_704(), n_steps=16)
    b = propagate_linear(f, bbo_type2_704())
    assert np.max(np.abs(a.c1 - b.c1)) < 1e-12
    assert np.max(np.abs(a.c2 - b.c2)) < 1e-12


def test_split_step_guards():
    f = sample_vacuum(SMALL, seed=2)
    with pytest.raises(ValueError):
        propagate_split_step(f, PumpSpec(), bbo_type2_704(), n_steps=3)
    with pytest.raises(ValueError):
        propagate_split_step(to_far_field(f), PumpSpec(), bbo_type2_704())


@pytest.mark.parametrize("g", [0.0, 0.5, 1.45, 4.15])
def test_symplectic_identity(g):
    gains = pwp_gains(GridSpec.for_far_field(), g, bbo_type2_704())
    assert gains.symplectic_error() < 1e-9


def test_phase_matched_gain():
    thin = CrystalSpec(length_mm=1e-9)
    for g, n in ((1.0, math.sinh(1.0) ** 2), (1.45, 4.05)):
        v = pwp_gains(SMALL, g, thin)
        assert np.allclose(np.abs(v.v1) ** 2, math.sinh(g) ** 2, rtol=1e-9)
        assert math.sinh(g) ** 2 == pytest.approx(n, abs=1e-2)


def test_pwp_zero_gain_is_linear_propagation():
    f = sample_vacuum(SMALL, seed=4)
    out = apply_pwp(f, pwp_gains(SMALL, 0.0, bbo_type2_704()))
    ref = propagate_linear(f, bbo_type2_704())
    assert np.max(np.abs(out.c1 - ref.c1)) < 1e-12


def test_pwp_identity_when_crystal_vanishes():
    f = sample_vacuum(SMALL, seed=4)
    out = apply_pwp(f, pwp_gains(SMALL, 0.0, CrystalSpec(length_mm=1e-12)))
    assert np.max(np.abs(out.c1 - f.c1)) < 1e-9


def test_pwp_vacuum_photons_per_mode():
    thin = CrystalSpec(length_mm=1e-9)
    f = sample_vacuum(GridSpec.for_far_field(n=32, nt=16), seed=5, batch=16)
    out = apply_pwp(f, pwp_gains(f.grid, 1.0, thin))
    n = np.mean(np.abs(spectrum(out.c1)) ** 2) - 0.5
    se = math.sqrt(2) * math.cosh(1) ** 2 / math.sqrt(out.c1.size) * 2
    assert abs(n - math.sinh(1) ** 2) < 5 * se
    assert math.sinh(1) ** 2 == pytest.approx(1.381, abs=1e-3)


def test_pwp_pairs_are_perfectly_correlated():
    """|c1(q)|^2 - |c2(-q)|^2 is conserved, so the quantum variance of the difference is zero."""
    f = sample_vacuum(SMALL, seed=6, batch=4)
    out = apply_pwp(f, pwp_gains(SMALL, 2.0, bbo_type2_704()))
    d_in = np.abs(spectrum(f.c1)) ** 2 - np.abs(reverse(spectrum(f.c2))) ** 2
    d_out = np.abs(spectrum(out.c1)) ** 2 - np.abs(reverse(spectrum(out.c2))) ** 2
    assert np.max(np.abs(d_out - d_in)) < 1e-9 * np.max(np.abs(spectrum(out.c1)) ** 2)


def test_pwp_shape_mismatch():
    with pytest.raises(ValueError):
        apply_pwp(sample_vacuum(SMALL, 1), pwp_gains(GridSpec.for_far_field(n=32, nt=8), 1.0, bbo_type2_704()))


def test_split_step_matches_plane_wave_limit():
    grid = GridSpec.for_far_field(n=32, nt=16)
    pump = PumpSpec(waist_um=1e9, gain=1.45)
    f = sample_vacuum(grid, seed=7, batch=4)
    a = propagate_split_step(f, pump, bbo_type2_704(), n_steps=32)
    b = apply_pwp(f, pwp_gains(grid, 1.45, bbo_type2_704()))
    na = np.mean(np.abs(spectrum(a.c1)) ** 2, axis=0) - 0.5
    nb = np.mean(np.abs(spectrum(b.c1)) ** 2, axis=0) - 0.5
    assert np.linalg.norm(na - nb) / np.linalg.norm(nb) < 0.02
    # pathwise, too
    assert np.linalg.norm(a.c1 - b.c1) / np.linalg.norm(b.c1) < 0.02


def test_time_resolved_pump_runs_and_conserves_at_zero_gain():
    f = sample_vacuum(SMALL, seed=8)
    out = propagate_split_step(f, PumpSpec(gain=0.0), bbo_type2_704(), n_steps=4, temporal_profile=True)
    assert out.photon_number(1) == pytest.approx(f.photon_number(1), abs=1e-9)


@pytest.mark.parametrize("g", [1.0, 2.0])
def test_halving_step_changes_moments_little(g):
    grid = GridSpec.for_far_field(n=32, nt=16)
    f = sample_vacuum(grid, seed=11, batch=4)
    moments = []
    for n in (16, 32):
        far = to_far_field(propagate_split_step(f, PumpSpec(gain=g), bbo_type2_704(), n_steps=n))
        w = far.wigner_intensity(1).sum(axis=1)
        moments.append((w.mean(), (w ** 2).mean()))
    (m1, s1), (m2, s2) = moments
    assert abs(m1 - m2) / m2 < 5e-3
    assert abs(s1 - s2) / s2 < 5e-3


def test_single_precision_close_to_double():
    f = sample_vacuum(SMALL, seed=12, batch=2)
    a = propagate_split_step(f, PumpSpec(gain=1.45), bbo_type2_704())
    b = propagate_split_step(f, PumpSpec(gain=1.45), bbo_type2_704(), single_precision=True)
    assert np.linalg.norm(a.c1 - b.c1) / np.linalg.norm(a.c1) < 1e-5


def test_far_field_parseval_and_pitch():
    f = sample_vacuum(SMALL, seed=13)
    far = to_far_field(f)
    tot = lambda x: np.sum(np.abs(x) ** 2)
    assert abs(tot(far.c1) - tot(f.c1)) / tot(f.c1) < 1e-10
    assert far.pitch_um == pytest.approx(5.0)
    assert to_far_field(f, focal_mm=100).pitch_um == pytest.approx(2 * far.pitch_um)
    with pytest.raises(ValueError):
        to_far_field(far)


def test_low_gain_fwhm_formula():
    assert round(x_fwhm_low_gain(0.704, 50, 1500), 1) == 8.8
    assert x_fwhm_low_gain(0.704, 50, 3000) == pytest.approx(x_fwhm_low_gain(0.704, 50, 1500) / 2)


def test_time_slices():
    assert len(time_slice_plan(PumpSpec(duration_ps=5))) == 1
    plan = time_slice_plan(PumpSpec(duration_ps=1000, gain=1.45))
    assert len(plan) == 200
    assert all(s.duration_ps == 5 for s in plan)
    assert max(s.gain for s in plan) <= 1.45
    assert min(s.gain for s in plan) >= 1.45 * math.exp(-0.25) - 1e-12
    total = lambda tau: sum(math.sinh(s.gain) ** 2 for s in time_slice_plan(PumpSpec(duration_ps=tau, gain=1.45)))
    assert total(1000) / total(500) == pytest.approx(2.0, rel=0.01)


def test_trajectory_dump_round_trip(tmp_path):
    f = sample_vacuum(SMALL, seed=14)
    p = tmp_path / "t.bin"
    dump_trajectory(f, p, dz_mm=0.125, seed=14)
    raw = p.read_bytes()
    assert raw[:4] == b"TWBF"
    header = struct.unpack_from("<4sHHHHddddQ", raw)
    assert header[1:5] == (1, 8, 16, 16)
    g, meta = load_trajectory(p)
    assert np.array_equal(g.c1, f.c1) and np.array_equal(g.c2, f.c2)
    assert meta == {"dz_mm": 0.125, "seed": 14}
    with pytest.raises(ValueError):
        dump_trajectory(sample_vacuum(SMALL, 1, batch=2), p, 0.1, 1)


def test_field_pair_shape_checks():
    with pytest.raises(ValueError):
        FieldPair(np.zeros((8, 16, 16)), np.zeros((8, 16, 14)), SMALL)
    with pytest.raises(ValueError):
        FieldPair(np.zeros((8, 16, 14)), np.zeros((8, 16, 14)), SMALL)
