"""Monte Carlo two-mode oracle for the closed-form differential model.

Photon pairs are drawn mode by mode from a Bose-Einstein distribution and
copied into both arms, then thinned by the detector efficiencies and, in arm
1, by the object.  Nothing here shares code with ``analytic`` so the two can
check each other.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .rng import STREAM_ORACLE, stream

MAX_TRIALS = 50_000_000
_N_BATCHES = 50


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float

    def within(self, target: float, n_sigma: float = 3.0) -> bool:
        return abs(self.value - target) <= n_sigma * self.stderr


@dataclass(frozen=True)
class OracleResult:
    mean_n: Estimate
    excess_noise: Estimate
    sigma: Estimate
    snr: Estimate
    snr_classical: Estimate
    trials: int
    modes: int


def _batch_estimate(values: np.ndarray) -> Estimate:
    """Mean over batch statistics with batch-means standard error."""
    return Estimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(len(values))))


def _ratio(num, den):
    return num / den if den > 0 else np.nan


def _stats(n1, n2, n1_obj, c1, c2_obj):
    m1, m2 = n1.mean(), n2.mean()
    v1 = n1.var(ddof=1)
    sigma = (n2 - n1).var(ddof=1) / (m1 + m2)
    diff = n2 - n1_obj
    snr = _ratio(diff.mean(), diff.std(ddof=1))
    cdiff = c1 - c2_obj
    snr_c = _ratio(cdiff.mean(), cdiff.std(ddof=1))
    return 0.5 * (m1 + m2), v1 / m1 - 1 if m1 > 0 else np.nan, sigma, snr, snr_c


def two_mode_oracle(gain: float, modes: int, eta1: float, eta2: float, alpha: float,
                    trials: int, seed: int) -> OracleResult:
    """Sample ``trials`` pulses of ``modes`` independent thermal mode pairs.

    Also samples the classical reference: the same thermal light split on a
    50/50 beam splitter into two arms with efficiencies ``eta1``, ``eta2`` and
    mean doubled so that each arm carries the PDC mean.
    """
    if not math.isfinite(gain):
        raise ValueError("gain must be finite")
    if int(trials) != trials or trials < 2:
        raise ValueError("trials must be an integer >= 2")
    if trials > MAX_TRIALS:
        raise ValueError(f"trials capped at {MAX_TRIALS}")
    if int(modes) != modes or modes < 1:
        raise ValueError("modes must be a positive integer")
    for v in (eta1, eta2, alpha):
        if not 0 <= v <= 1:
            raise ValueError("efficiencies and alpha must lie in [0, 1]")
    trials, modes = int(trials), int(modes)
    nbar = math.sinh(gain) ** 2
    rng = stream(seed, STREAM_ORACLE)

    # Sum of `modes` geometric photon numbers is negative binomial; binomial
    # thinning of a sum equals the sum of per-mode thinnings.
    if nbar > 0:
        pairs = rng.negative_binomial(modes, 1.0 / (1.0 + nbar), size=trials)
    else:
        pairs = np.zeros(trials, dtype=np.int64)
    n1 = rng.binomial(pairs, eta1)
    n2 = rng.binomial(pairs, eta2)
    n1_obj = rng.binomial(n1, 1.0 - alpha)

    # Classical twins: thermal source of mean 2 M nbar split 50/50.
    if nbar > 0:
        source = rng.negative_binomial(modes, 1.0 / (1.0 + 2 * nbar), size=trials)
    else:
        source = np.zeros(trials, dtype=np.int64)
    half = rng.binomial(source, 0.5)
    c1 = rng.binomial(half, eta2)
    c2 = rng.binomial(source - half, eta1)
    c2_obj = rng.binomial(c2, 1.0 - alpha)

    n_b = min(_N_BATCHES, trials // 2)
    rows = [_stats(*(a[idx] for a in (n1, n2, n1_obj, c1, c2_obj)))
            for idx in np.array_split(np.arange(trials), n_b)]
    rows = np.array(rows)
    full = _stats(n1, n2, n1_obj, c1, c2_obj)
    err = rows.std(axis=0, ddof=1) / math.sqrt(n_b)
    est = [Estimate(float(v), float(e)) for v, e in zip(full, err)]
    return OracleResult(*est, trials=trials, modes=modes)


def modes_for_mean(target_mean: float, gain: float, eta: float) -> tuple[int, float]:
    """Integer mode count giving ``target_mean`` detected photons; also the exact real value."""
    exact = target_mean / (eta * math.sinh(gain) ** 2)
    return max(1, int(round(exact))), exact
