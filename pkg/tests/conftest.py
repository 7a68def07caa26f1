"""Shared simulated ensembles.

The physics tests need roughly a quarter hour of simulation on one core.
Ensembles are pickled under pytest's cache directory, keyed by the package
source and every run parameter, so a second session reuses them; editing any
simulation module invalidates the cache.  ``pytest
--cache-clear`` forces a full recomputation.
"""

import hashlib
import pickle
import time
from dataclasses import dataclass, field
from pathlib import Path

import pytest

import twinbeam
from twinbeam import harness as hz
from twinbeam.detection import DetectorSpec
from twinbeam.ensemble import run_level

SRC = Path(twinbeam.__file__).parent
# modules that determine ensemble contents
SIM_MODULES = ("rng.py", "fieldsim.py", "detection.py", "ensemble.py")
SRC_HASH = hashlib.sha256(b"".join((SRC / m).read_bytes() for m in SIM_MODULES)).hexdigest()

SEED = 20240611
IMAGING_TRAJ = 400
CORR_TRAJ = 300
SWEEP_TRAJ = 150


@dataclass
class SimClock:
    """Compute seconds spent per ensemble, whether fresh or loaded from cache."""

    seconds: dict = field(default_factory=dict)

    def of(self, *ensembles) -> float:
        return sum(self.seconds[k] for k in {id(e) for e in ensembles})


def pytest_configure(config):
    config._twinbeam_acceptance = []


def pytest_terminal_summary(terminalreporter, config):
    lines = getattr(config, "_twinbeam_acceptance", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config._twinbeam_acceptance


@pytest.fixture(scope="session")
def clock():
    return SimClock()


@pytest.fixture(scope="session")
def runner(request, clock):
    """``run_level`` with an on-disk cache; records compute time per ensemble."""
    root = Path(request.config.cache.mkdir("twinbeam-ensembles"))

    def run(setup, gain, n_traj, seed, level_index=0, mask=None, shifts_um=(), **kw):
        desc = repr((SRC_HASH, setup, gain, n_traj, seed, level_index,
                     None if mask is None else mask.alpha_map.tobytes(), tuple(shifts_um)))
        key = hashlib.sha256(desc.encode()).hexdigest()[:24]
        path = root / f"{key}.pkl"
        if path.is_file():
            with open(path, "rb") as fh:
                ens, secs = pickle.load(fh)
        else:
            t0 = time.perf_counter()
            ens = run_level(setup, gain, n_traj, seed, level_index, mask=mask, shifts_um=shifts_um, **kw)
            secs = time.perf_counter() - t0
            with open(path, "wb") as fh:
                pickle.dump((ens, secs), fh, protocol=pickle.HIGHEST_PROTOCOL)
        clock.seconds[id(ens)] = secs
        return ens

    return run


def _cache(runner, trajectories, mask=True, **kw):
    sc = hz.Scenario(seed=SEED, trajectories=trajectories, **kw)
    return hz.LevelCache(sc, sc.mask() if mask else None, runner=runner)


@pytest.fixture(scope="session")
def imaging(runner):
    """g=1.45 levels with the uniform alpha=0.04 object."""
    return _cache(runner, IMAGING_TRAJ)


@pytest.fixture(scope="session")
def fragile(runner):
    """Single 5 ps slice at g=4.15 with the same object."""
    return _cache(runner, CORR_TRAJ)


@pytest.fixture(scope="session")
def reduced(runner):
    """Coarser 32 x 32 x 16 grid for the sigma versus counts scan."""
    return _cache(runner, CORR_TRAJ, mask=False, grid_n=32, grid_nt=16)


@pytest.fixture(scope="session")
def correlation_levels(runner):
    """No-object ensembles for the correlation function, keyed by gain."""
    cache = _cache(runner, CORR_TRAJ, mask=False)
    out = {g: cache.get(g) for g in (1.0, 4.5)}
    thin = _cache(runner, SWEEP_TRAJ, mask=False)
    out.update({g: thin.get(g) for g in (2.8, 3.7)})
    return out


@pytest.fixture(scope="session")
def narrow_pump(runner):
    """g=1 with the pump waist halved."""
    sc = hz.Scenario(seed=SEED, trajectories=SWEEP_TRAJ)
    return hz.LevelCache(sc, None, waist_um=750.0, runner=runner).get(1.0)


@pytest.fixture(scope="session")
def pulse(imaging, fragile, reduced):
    """Memoized ``pulse_stats`` keyed by (ensemble set, gain, duration, pixel, x_shift)."""
    caches = {"imaging": imaging, "fragile": fragile, "reduced": reduced}
    memo = {}

    def get(name, gain, duration, pixel_um, x_shift_um=0.0, classical=False):
        key = (name, gain, duration, pixel_um, x_shift_um, classical)
        if key not in memo:
            cache = caches[name]
            det = DetectorSpec(pixel_pitch_um=pixel_um, x_shift_um=x_shift_um, eta1=0.9, eta2=0.9)
            memo[key] = hz.pulse_stats(cache, gain, duration, det, SEED, cache.mask, classical)
        return memo[key]

    return get
