"""Headline acceptance criteria, one printed PASS/FAIL line each.

Simulation-backed lines report the compute time of the ensembles they use,
which is the cost of a cold run even when the ensembles come from the cache.
"""

import math
import time

import numpy as np
import pytest
from scipy import fft as sfft

from twinbeam import analytic as an
from twinbeam.detection import DetectorSpec, estimate_gamma12, estimate_sigma, pixelize, poisson_frames
from twinbeam.fieldsim import (GridSpec, PumpSpec, bbo_type2_704, propagate_split_step, pwp_gains,
                               sample_vacuum, to_far_field, x_fwhm_low_gain)
from twinbeam.oracle import modes_for_mean, two_mode_oracle

from conftest import SEED

pytestmark = pytest.mark.acceptance

SHIFTS_TOLERANCE = [2.5 * k for k in range(11)]
SHIFTS_FRAGILE = [0.0, 2.5, 5.0, 7.5, 10.0, 15.0, 20.0, 30.0, 40.0]
DURATIONS = [5.0, 25.0, 125.0, 250.0, 1000.0]


def report(log, name, ok, detail, seconds):
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail} [{seconds:.1f} s]"
    log.append(line)
    print(line)
    assert ok, line


def warm(cache, clock, gain, duration):
    """Simulate (or load) the levels of one pulse; returns their compute seconds."""
    ens, _ = cache.pulse(gain, duration)
    return clock.of(*ens)


def gamma(ens):
    return estimate_gamma12(ens.w1, ens.w2, ens.pitch_um, ens.n_time, ens.ctl1, ens.ctl2, seed=SEED)


def crossing(xs, rs):
    """First x where the piecewise-linear curve falls through 1."""
    for (x0, r0), (x1, r1) in zip(zip(xs, rs), zip(xs[1:], rs[1:])):
        if r0 >= 1 > r1:
            return x0 + (r0 - 1) / (r0 - r1) * (x1 - x0)
    return math.nan


def test_analytic_closure(acceptance_log):
    t0 = time.perf_counter()
    r = an.improvement_ratio(an.TwoModeStats(1.0, 0.5, 0.1), 0.04)
    dt = time.perf_counter() - t0
    report(acceptance_log, "analytic closure", abs(r - 2.90) <= 0.01 and dt < 1,
           f"R(sigma=0.1, E_n=0.5, alpha=0.04) = {r:.4f}, target 2.90 +/- 0.01", dt)


def test_oracle_equivalence(acceptance_log):
    g, eta, alpha = 1.45, 0.9, 0.04
    t0 = time.perf_counter()
    modes, _ = modes_for_mean(3500, g, eta)
    res = two_mode_oracle(g, modes, eta, eta, alpha, 100_000, SEED)
    dt = time.perf_counter() - t0
    photons = math.sinh(g) ** 2
    model = an.TwoModeStats(modes * eta * photons, eta * photons,
                            an.sigma_unbalanced(an.ArmEfficiencies(eta, eta), photons))
    snr = an.snr_differential(model, alpha)
    ok = res.snr.within(snr) and res.sigma.within(model.sigma) and dt < 60
    report(acceptance_log, "oracle equivalence", ok,
           f"M={modes}: SNR {res.snr.value:.4f} +/- {res.snr.stderr:.4f} vs {snr:.4f}; "
           f"sigma {res.sigma.value:.4f} +/- {res.sigma.stderr:.4f} vs {model.sigma:.4f}", dt)


def test_low_gain_coherence_width(acceptance_log, correlation_levels, clock):
    analytic = x_fwhm_low_gain(0.704, 50, 1500)
    ens = correlation_levels[1.0]
    t0 = time.perf_counter()
    fw = gamma(ens).fwhm_um
    dt = clock.of(ens) + time.perf_counter() - t0
    ok = round(analytic, 1) == 8.8 and abs(fw.value - 11) <= 3 and ens.n_trajectories >= 300 and dt <= 900
    report(acceptance_log, "coherence width", ok,
           f"analytic x_FWHM {analytic:.2f} um (target 8.8); simulated g=1 FWHM {fw:.2f} um "
           f"(target 11 +/- 3, {ens.n_trajectories} trajectories)", dt)


def test_gain_broadening(acceptance_log, correlation_levels, clock):
    lo, hi = correlation_levels[1.0], correlation_levels[4.5]
    t0 = time.perf_counter()
    a, b = gamma(lo).fwhm_um, gamma(hi).fwhm_um
    dt = clock.of(lo, hi) + time.perf_counter() - t0
    report(acceptance_log, "gain broadening", b.value >= 2 * a.value,
           f"FWHM g=4.5 {b:.2f} um vs g=1 {a:.2f} um, ratio {b.value / a.value:.2f} (target >= 2)", dt)


def test_sigma_floor(acceptance_log, imaging, pulse, clock):
    sim = warm(imaging, clock, 1.45, 250.0)
    t0 = time.perf_counter()
    corr, _, _, _ = pulse("imaging", 1.45, 250.0, 40.0)
    dt = sim + time.perf_counter() - t0
    s = corr.sigma
    report(acceptance_log, "sigma floor", abs(s.value - 0.10) <= 0.03,
           f"g=1.45, 40 um pixels, x_shift=0: sigma {s:.3f} (target 0.10 +/- 0.03), E_n {corr.excess_noise:.2f}",
           dt)


def test_shift_fragility(acceptance_log, fragile, pulse, clock):
    sim = warm(fragile, clock, 4.15, 5.0)
    t0 = time.perf_counter()
    rows = [pulse("fragile", 4.15, 5.0, 20.0, xs)[0] for xs in SHIFTS_FRAGILE]
    dt = sim + time.perf_counter() - t0
    above = all(r.sigma.value > 1 for xs, r in zip(SHIFTS_FRAGILE, rows) if xs >= 5)
    last = rows[-1]
    sat = 1 + last.excess_noise.value
    se = math.hypot(last.sigma.stderr, last.excess_noise.stderr)
    ok = above and abs(last.sigma.value - sat) <= 3 * se
    curve = ", ".join(f"{xs:g}:{r.sigma.value:.2f}" for xs, r in zip(SHIFTS_FRAGILE, rows))
    report(acceptance_log, "shift fragility", ok,
           f"g=4.15 single slice, 20 um pixels; sigma(x_shift um) {curve}; "
           f"sigma({SHIFTS_FRAGILE[-1]:g}) {last.sigma:.1f} vs 1+E_n {sat:.1f} (3 stderr = {3 * se:.1f})", dt)


def test_imaging_ratio_40um(acceptance_log, imaging, pulse, clock):
    sim = warm(imaging, clock, 1.45, 250.0)
    t0 = time.perf_counter()
    _, snr, _, _ = pulse("imaging", 1.45, 250.0, 40.0)
    dt = sim + time.perf_counter() - t0
    report(acceptance_log, "imaging R, 40 um pixels", abs(snr.ratio.value - 2.9) <= 0.3 and dt <= 1800,
           f"tau_p=250 ps, <N1>={snr.mean_counts:.0f}: R {snr.ratio:.2f} (target 2.9 +/- 0.3)", dt)


def test_imaging_ratio_20um(acceptance_log, imaging, pulse, clock):
    sim = warm(imaging, clock, 1.45, 1000.0)
    t0 = time.perf_counter()
    _, snr, _, _ = pulse("imaging", 1.45, 1000.0, 20.0)
    dt = sim + time.perf_counter() - t0
    report(acceptance_log, "imaging R, 20 um pixels", abs(snr.ratio.value - 1.9) <= 0.3 and dt <= 1800,
           f"tau_p=1000 ps, <N1>={snr.mean_counts:.0f}: R {snr.ratio:.2f} (target 1.9 +/- 0.3)", dt)


def test_snr_square_root_growth(acceptance_log, imaging, pulse, clock):
    sim = warm(imaging, clock, 1.45, 250.0)
    t0 = time.perf_counter()
    reps = [pulse("imaging", 1.45, tau, 40.0)[1] for tau in DURATIONS]
    dt = sim + time.perf_counter() - t0
    n = np.array([r.mean_counts for r in reps])
    s = np.array([r.snr.value for r in reps])
    slope = np.polyfit(np.log(n), np.log(s), 1)[0]
    pts = ", ".join(f"{a:.0f}:{b:.2f}" for a, b in zip(n, s))
    report(acceptance_log, "SNR ~ sqrt(N)", abs(slope - 0.5) <= 0.05 and dt <= 1800,
           f"power-law exponent {slope:.3f} (target 0.5 +/- 0.05) over <N1>:SNR {pts}", dt)


def test_tolerance_crossing(acceptance_log, imaging, pulse, clock):
    sim = warm(imaging, clock, 1.45, 250.0)
    t0 = time.perf_counter()
    rs = [pulse("imaging", 1.45, 250.0, 40.0, xs)[1].ratio.value for xs in SHIFTS_TOLERANCE]
    dt = sim + time.perf_counter() - t0
    x = crossing(SHIFTS_TOLERANCE, rs)
    curve = ", ".join(f"{a:g}:{b:.2f}" for a, b in zip(SHIFTS_TOLERANCE, rs))
    report(acceptance_log, "tolerance crossing", abs(x - 14) <= 4,
           f"R=1 at x_shift {x:.1f} um (target 14 +/- 4); R(x_shift um) {curve}", dt)


def test_calibration(acceptance_log):
    t0 = time.perf_counter()
    checks = {}

    frame, _ = poisson_frames(np.full((4, 4), 500.0), np.full((4, 4), 500.0), 1000, SEED)
    s = estimate_sigma(frame, seed=SEED).sigma
    checks["poisson sigma"] = (abs(s.value - 1) <= 3 * s.stderr, f"{s:.3f}")

    grid = GridSpec.for_far_field(n=16, nt=8)
    f = sample_vacuum(grid, SEED, batch=2)
    out = propagate_split_step(f, PumpSpec(gain=0.0), bbo_type2_704(), n_steps=8)
    per_mode = lambda c: np.abs(sfft.fftn(c, axes=(-3, -2, -1), norm="ortho")) ** 2
    drift = max(np.max(np.abs(per_mode(b) - per_mode(a))) / np.max(per_mode(a))
                for a, b in ((f.c1, out.c1), (f.c2, out.c2)))
    checks["g=0 conservation"] = (drift < 1e-12, f"{drift:.1e}")

    sym = max(pwp_gains(GridSpec.for_far_field(), g, bbo_type2_704()).symplectic_error() for g in (1.45, 4.15))
    checks["|U|^2-|V|^2=1"] = (sym < 1e-9, f"{sym:.1e}")

    vac = to_far_field(sample_vacuum(grid, SEED, batch=256))
    n = pixelize(vac, DetectorSpec(pixel_pitch_um=10)).counts1.reshape(256, -1).mean(axis=1)
    checks["vacuum mean"] = (abs(n.mean()) < 3 * n.std(ddof=1) / math.sqrt(n.size), f"{n.mean():.3f}")

    tot = lambda c: np.sum(np.abs(c) ** 2)
    far = to_far_field(f)
    pars = abs(tot(far.c1) - tot(f.c1)) / tot(f.c1)
    checks["Parseval"] = (pars < 1e-10, f"{pars:.1e}")

    dt = time.perf_counter() - t0
    report(acceptance_log, "calibration", all(ok for ok, _ in checks.values()),
           "; ".join(f"{k} {'ok' if ok else 'FAIL'} ({v})" for k, (ok, v) in checks.items()), dt)
