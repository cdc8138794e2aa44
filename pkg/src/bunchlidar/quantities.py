"""Physical constants, tick-based time handling, and spectral/radiometric conversions.

All internal event times are integer picosecond ticks (64-bit). Physical
quantities (seconds, meters, hertz, watts) are plain floats and convert to
ticks only at module boundaries. A signed 64-bit tick count spans about
+/- 9.2e6 seconds, comfortably beyond any scenario this toolkit handles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# 2019 SI exact definitions
SPEED_OF_LIGHT = 299_792_458.0  # m/s
PLANCK_CONSTANT = 6.626_070_15e-34  # J*s

TICKS_PER_SECOND = 10**12  # 1 tick = 1 ps
_TICK_MIN = -(2**63)
_TICK_MAX = 2**63 - 1


class DomainError(ValueError):
    """Argument outside the physical domain of an operation."""


class TickOverflowError(OverflowError):
    """Tick arithmetic left the signed 64-bit range."""


def seconds_to_ticks(t_s: float) -> int:
    """Convert seconds to the nearest integer picosecond tick."""
    ticks = round(t_s * TICKS_PER_SECOND)
    if not _TICK_MIN <= ticks <= _TICK_MAX:
        raise TickOverflowError(f"{t_s} s does not fit in 64-bit picosecond ticks")
    return int(ticks)


def ticks_to_seconds(ticks):
    """Convert integer picosecond ticks (scalar or array) to float seconds."""
    if np.ndim(ticks):
        return np.asarray(ticks, dtype=np.float64) / TICKS_PER_SECOND
    return ticks / TICKS_PER_SECOND


def shift_ticks(times: np.ndarray, delta: int) -> np.ndarray:
    """Add ``delta`` ticks to an int64 time array, raising instead of wrapping."""
    if times.size:
        lo = int(times[0]) + delta
        hi = int(times[-1]) + delta
        if not (_TICK_MIN <= lo <= _TICK_MAX and _TICK_MIN <= hi <= _TICK_MAX):
            raise TickOverflowError("time shift overflows 64-bit ticks")
    return times + np.int64(delta)


@dataclass(frozen=True)
class Medium:
    """Propagation medium, reduced to a single scalar refractive index."""

    refractive_index: float = 1.0

    def __post_init__(self):
        if self.refractive_index < 1.0:
            raise DomainError(f"refractive index must be >= 1, got {self.refractive_index}")


VACUUM = Medium(1.0)


def coherence_time_from_linewidth(linewidth_hz: float) -> float:
    """Coherence time in seconds for an optical linewidth in hertz."""
    if linewidth_hz <= 0:
        raise DomainError(f"linewidth must be positive, got {linewidth_hz}")
    return 1.0 / linewidth_hz


def linewidth_from_coherence_time(coherence_time_s: float) -> float:
    """Optical linewidth in hertz for a coherence time in seconds."""
    if coherence_time_s <= 0:
        raise DomainError(f"coherence time must be positive, got {coherence_time_s}")
    return 1.0 / coherence_time_s


def linewidth_from_wavelength_spread(wavelength_m: float, wavelength_spread_m: float) -> float:
    """Frequency linewidth c*dlambda/lambda^2 in hertz."""
    if wavelength_m <= 0:
        raise DomainError(f"wavelength must be positive, got {wavelength_m}")
    if wavelength_spread_m < 0:
        raise DomainError(f"wavelength spread must be non-negative, got {wavelength_spread_m}")
    return SPEED_OF_LIGHT * wavelength_spread_m / wavelength_m**2


def wavelength_spread_from_linewidth(wavelength_m: float, linewidth_hz: float) -> float:
    """Wavelength spread lambda^2*df/c in meters (inverse of the above)."""
    if wavelength_m <= 0:
        raise DomainError(f"wavelength must be positive, got {wavelength_m}")
    if linewidth_hz < 0:
        raise DomainError(f"linewidth must be non-negative, got {linewidth_hz}")
    return linewidth_hz * wavelength_m**2 / SPEED_OF_LIGHT


def photon_rate_from_power(power_w: float, wavelength_m: float) -> float:
    """Photon flux P*lambda/(h*c) in events per second."""
    if wavelength_m <= 0:
        raise DomainError(f"wavelength must be positive, got {wavelength_m}")
    if power_w < 0:
        raise DomainError(f"power must be non-negative, got {power_w}")
    return power_w * wavelength_m / (PLANCK_CONSTANT * SPEED_OF_LIGHT)


def range_from_delay(delay_s: float, medium: Medium = VACUUM) -> float:
    """One-way target distance in meters for a round-trip delay in seconds.

    Negative delays are allowed and return negative ranges for diagnostics.
    """
    return SPEED_OF_LIGHT * delay_s / (2.0 * medium.refractive_index)


def delay_from_range(distance_m: float, medium: Medium = VACUUM) -> float:
    """Round-trip delay 2*d*n/c in seconds for a one-way distance in meters."""
    return 2.0 * distance_m * medium.refractive_index / SPEED_OF_LIGHT


def g2_model(tau_s, baseline: float, amplitude: float, delay_s: float, coherence_time_s: float):
    """Displaced bunching peak: B + A * exp(-2|tau - tau0| / tau_c).

    Accepts a scalar or array ``tau_s``; returns the matching shape.
    """
    if coherence_time_s <= 0:
        raise DomainError(f"coherence time must be positive, got {coherence_time_s}")
    if amplitude < 0:
        raise DomainError(f"amplitude must be non-negative, got {amplitude}")
    tau = np.asarray(tau_s, dtype=np.float64)
    value = baseline + amplitude * np.exp(-2.0 * np.abs(tau - delay_s) / coherence_time_s)
    return float(value) if np.ndim(tau_s) == 0 else value


@dataclass(frozen=True)
class SourceSpec:
    """Narrowband thermal source parameters.

    ``linewidth_hz`` and ``coherence_time_s`` are tied by df = 1/tau_c; if both
    are given they must agree to 1e-12 relative. If ``power_w`` is given the
    photon rate must equal P*lambda/(h*c) to 1e-9 relative.
    """

    wavelength_m: float
    photon_rate_hz: float
    linewidth_hz: float = 0.0
    coherence_time_s: float = 0.0
    wavelength_spread_m: float | None = None
    power_w: float | None = None

    def __post_init__(self):
        if self.wavelength_m <= 0:
            raise DomainError(f"wavelength must be positive, got {self.wavelength_m}")
        if self.photon_rate_hz < 0:
            raise DomainError(f"photon rate must be non-negative, got {self.photon_rate_hz}")
        lw, tc = self.linewidth_hz, self.coherence_time_s
        if lw <= 0 and tc <= 0:
            raise DomainError("one of linewidth_hz or coherence_time_s must be positive")
        if lw > 0 and tc > 0:
            if abs(lw * tc - 1.0) > 1e-12:
                raise DomainError(f"linewidth * coherence_time = {lw * tc}, expected 1")
        elif lw > 0:
            object.__setattr__(self, "coherence_time_s", 1.0 / lw)
        else:
            object.__setattr__(self, "linewidth_hz", 1.0 / tc)
        if self.power_w is not None:
            expected = photon_rate_from_power(self.power_w, self.wavelength_m)
            if expected > 0 and abs(self.photon_rate_hz / expected - 1.0) > 1e-9:
                raise DomainError(
                    f"photon rate {self.photon_rate_hz} inconsistent with "
                    f"power {self.power_w} W at {self.wavelength_m} m (expect {expected})"
                )

    @classmethod
    def from_power(cls, wavelength_m: float, linewidth_hz: float, power_w: float) -> "SourceSpec":
        """Build a spec with the photon rate derived from optical power."""
        return cls(
            wavelength_m=wavelength_m,
            photon_rate_hz=photon_rate_from_power(power_w, wavelength_m),
            linewidth_hz=linewidth_hz,
            power_w=power_w,
        )
