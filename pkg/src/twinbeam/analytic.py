"""Closed-form two-mode model of the differential absorption measurement.

All quantities are dimensionless photon counts per detector per pulse.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass


@dataclass(frozen=True)
class TwoModeStats:
    mean_n: float
    excess_noise: float = 0.0
    sigma: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.mean_n) and self.mean_n >= 0):
            raise ValueError(f"mean_n must be finite and >= 0, got {self.mean_n}")
        if not (math.isfinite(self.excess_noise) and self.excess_noise >= -1):
            raise ValueError(f"excess_noise must be >= -1, got {self.excess_noise}")
        if not (math.isfinite(self.sigma) and self.sigma >= 0):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")

    @property
    def variance_single(self) -> float:
        return (self.excess_noise + 1) * self.mean_n

    @property
    def variance_difference(self) -> float:
        return 2 * self.sigma * self.mean_n


@dataclass(frozen=True)
class ObjectParams:
    alpha: float

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def transmission(self) -> float:
        return math.sqrt(1.0 - self.alpha)


@dataclass(frozen=True)
class ArmEfficiencies:
    eta1: float
    eta2: float

    def __post_init__(self):
        for name in ("eta1", "eta2"):
            v = getattr(self, name)
            if not (0.0 <= v <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    @property
    def eta_bar(self) -> float:
        return 0.5 * (self.eta1 + self.eta2)


@dataclass(frozen=True)
class ModeBudget:
    mode_count: float

    def __post_init__(self):
        if not (math.isfinite(self.mode_count) and self.mode_count > 0):
            raise ValueError(f"mode_count must be > 0, got {self.mode_count}")


def _as_obj(obj) -> ObjectParams:
    return obj if isinstance(obj, ObjectParams) else ObjectParams(float(obj))


def _check_excess(e_n: float) -> None:
    if not (math.isfinite(e_n) and e_n >= -1):
        raise ValueError(f"excess noise must be >= -1, got {e_n}")


def _check_mean(mean_n: float) -> None:
    if not (math.isfinite(mean_n) and mean_n >= 0):
        raise ValueError(f"mean photon number must be >= 0, got {mean_n}")


def variance_after_object(stats: TwoModeStats, obj) -> float:
    """Variance of N2 - N1' once arm 1 has crossed the object."""
    a = _as_obj(obj).alpha
    return (a * a * stats.variance_single
            + (1 - a) * stats.variance_difference
            + a * (1 - a) * stats.mean_n)


def snr_differential(stats: TwoModeStats, obj) -> float:
    a = _as_obj(obj).alpha
    if a == 0 or stats.mean_n == 0:
        return 0.0
    den = a * a * stats.excess_noise + 2 * stats.sigma * (1 - a) + a
    return a * math.sqrt(stats.mean_n) / math.sqrt(den)


def snr_classical(mean_n: float, excess_noise: float, obj) -> float:
    """Beam-splitter (classical twin) scheme, where sigma = 1 whatever the excess noise."""
    _check_mean(mean_n)
    _check_excess(excess_noise)
    a = _as_obj(obj).alpha
    if a == 0:
        return 0.0
    return a * math.sqrt(mean_n) / math.sqrt(a * a * excess_noise + 2 - a)


def snr_sql(mean_n: float, obj, direct: bool = False) -> float:
    """Shot-noise limit of the differential scheme.

    ``direct=True`` gives the single coherent beam figure alpha sqrt(N), which
    is larger by about sqrt(2).
    """
    _check_mean(mean_n)
    a = _as_obj(obj).alpha
    if a == 0:
        return 0.0
    if direct:
        return a * math.sqrt(mean_n)
    return a * math.sqrt(mean_n) / math.sqrt(2 - a)


def improvement_ratio(stats: TwoModeStats, obj) -> float:
    a = _as_obj(obj).alpha
    den = a * a * stats.excess_noise + 2 * stats.sigma * (1 - a) + a
    if den == 0:
        return math.inf
    return math.sqrt((2 - a) / den)


def improvement_ratio_from(sigma: float, excess_noise: float, alpha: float) -> float:
    return improvement_ratio(TwoModeStats(1.0, excess_noise, sigma), alpha)


@dataclass(frozen=True)
class SigmaThreshold:
    value: float
    advantage_possible: bool


def sigma_max(obj, excess_noise: float) -> SigmaThreshold:
    """Largest sigma still beating the shot-noise limit.

    Returned unclamped; a non-positive value means no sub-shot-noise source can
    beat the classical scheme for this object.
    """
    _check_excess(excess_noise)
    a = _as_obj(obj).alpha
    if a == 1:
        return SigmaThreshold(-math.inf if excess_noise > 0 else 1.0, excess_noise <= 0)
    value = 1 - a * a * excess_noise / (2 * (1 - a))
    return SigmaThreshold(value, value > 0)


def sigma_unbalanced(eff: ArmEfficiencies, excess_noise: float) -> float:
    _check_excess(excess_noise)
    eb = eff.eta_bar
    if eb == 0:
        return 1.0
    return 1 - eb + (eff.eta1 - eff.eta2) ** 2 / (2 * eb) * (excess_noise + 0.5)


def excess_noise_thermal(mean_n: float, modes) -> float:
    _check_mean(mean_n)
    m = modes if isinstance(modes, ModeBudget) else ModeBudget(float(modes))
    return mean_n / m.mode_count


def shift_tolerance(eta: float, excess_noise: float) -> float:
    """x_shift / x_coh at which a linear sigma(x_shift) ramp crosses shot noise."""
    if not (0 < eta <= 1):
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    if not (math.isfinite(excess_noise) and excess_noise >= 0):
        raise ValueError("excess noise must be >= 0 here")
    return 1.0 / (1.0 + excess_noise / eta)


def gamma_peak(sigma: float, excess_noise: float) -> float:
    """Peak of the discretized signal-idler correlation, 1 - sigma/(E_n + 1)."""
    _check_excess(excess_noise)
    if excess_noise == -1:
        raise ValueError("excess noise of exactly -1 leaves the peak undefined")
    value = 1 - sigma / (excess_noise + 1)
    if not -1 <= value <= 1:
        warnings.warn(f"inconsistent (sigma, E_n) = ({sigma}, {excess_noise}); "
                      f"peak {value:.4g} clamped to [-1, 1]", stacklevel=2)
        value = min(1.0, max(-1.0, value))
    return value
