"""Zadoff-Chu preambles, correlation power-delay profiles, delay-spread statistics.

Everything here is a pure function of its inputs. Returned arrays are marked
read-only so values can be shared freely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from carlab.errors import (
    ConfigError,
    EmptyProfile,
    LengthMismatch,
    NonCoprimeRoot,
    ZeroLength,
    ZeroTotalPower,
)

DEFAULT_ROOT = 7
DEFAULT_LENGTH = 139


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class ZCSequence:
    root_m: int
    length_K: int
    values: np.ndarray

    def __len__(self) -> int:
        return self.length_K


@dataclass(frozen=True)
class PowerDelayProfile:
    """Correlation power per cyclic lag. ``bins[tau]`` covers delay ``tau * sample_period``."""

    bins: np.ndarray
    sample_period: float = 1.0

    @property
    def delays(self) -> np.ndarray:
        return np.arange(len(self.bins)) * self.sample_period


@dataclass(frozen=True)
class PathTap:
    delay_t: float
    power_p: float
    gain: complex = 0j
    aoa_azimuth: float = 0.0
    aoa_elevation: float = 0.0

    def __post_init__(self):
        if not self.power_p >= 0:
            raise ValueError(f"tap power must be >= 0, got {self.power_p}")
        if not self.delay_t >= 0:
            raise ValueError(f"tap delay must be >= 0, got {self.delay_t}")


@dataclass(frozen=True)
class DelayStats:
    mean_delay: float
    rms_spread: float


def gen_zc(root_m: int = DEFAULT_ROOT, length_K: int = DEFAULT_LENGTH) -> ZCSequence:
    """Generate the root-``m`` Zadoff-Chu sequence of length ``K``.

    ``values[k] = exp(-1j * pi * m * k * (k + 1) / K)`` for ``k = 0..K-1``.
    The phase numerator is reduced modulo ``2K`` in integer arithmetic first,
    so long sequences keep full precision.
    """
    m, K = int(root_m), int(length_K)
    if K <= 0:
        raise ZeroLength("sequence length must be positive")
    if m <= 0 or m >= K:
        raise ConfigError(f"root index must satisfy 0 < m < K, got m={m}, K={K}")
    if math.gcd(m, K) != 1:
        raise NonCoprimeRoot(f"root {m} shares a factor with length {K}")
    k = np.arange(K, dtype=np.int64)
    num = (m * ((k * (k + 1)) % (2 * K))) % (2 * K)
    values = np.exp(-1j * np.pi * num / K)
    return ZCSequence(m, K, _frozen(values))


def cyclic_xcorr(received: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Complex cyclic cross-correlation ``c[tau] = sum_i received[(i+tau) % K] * conj(ref[i])``."""
    return np.fft.ifft(np.fft.fft(received) * np.conj(np.fft.fft(ref)))


def correlate_pdp(
    received: Sequence[complex] | np.ndarray,
    ref: ZCSequence,
    sample_period: float = 1.0,
) -> PowerDelayProfile:
    """Power-delay profile of ``received`` against the reference preamble, over every cyclic lag."""
    r = np.asarray(received, dtype=np.complex128)
    if r.ndim != 1 or r.shape[0] != ref.length_K:
        raise LengthMismatch(f"received has shape {r.shape}, reference length is {ref.length_K}")
    c = cyclic_xcorr(r, ref.values)
    bins = c.real**2 + c.imag**2
    return PowerDelayProfile(_frozen(bins), float(sample_period))


def pdp_to_taps(pdp: PowerDelayProfile, floor_db: float = -30.0) -> list[PathTap]:
    """Keep every lag whose power lies within ``floor_db`` of the peak."""
    if floor_db >= 0:
        raise ConfigError("floor_db must be negative (dB below the peak)")
    bins = np.asarray(pdp.bins, dtype=np.float64)
    peak = bins.max(initial=0.0)
    if peak <= 0:
        raise EmptyProfile("power-delay profile has no energy")
    keep = np.flatnonzero(bins >= peak * 10.0 ** (floor_db / 10.0))
    return [
        PathTap(delay_t=float(t * pdp.sample_period), power_p=float(bins[t]),
                gain=complex(math.sqrt(bins[t])))
        for t in keep
    ]


def rms_delay_spread(taps: Sequence[PathTap], literal_eq4: bool = False) -> DelayStats:
    """Power-weighted mean delay and RMS delay spread of a tap set.

    By default the mean delay is the first moment ``sum(p t) / sum(p)``.
    ``literal_eq4=True`` takes the square root of that moment before
    centring, reproducing an alternative printed form of the mean; it is
    only dimensionally meaningful for delays expressed as pure numbers.
    """
    if len(taps) == 0:
        raise ZeroTotalPower("no taps")
    t = np.array([tap.delay_t for tap in taps], dtype=np.float64)
    p = np.array([tap.power_p for tap in taps], dtype=np.float64)
    return delay_stats(t, p, literal_eq4=literal_eq4)


def delay_stats(delays: np.ndarray, powers: np.ndarray, literal_eq4: bool = False) -> DelayStats:
    """Array form of :func:`rms_delay_spread`."""
    t = np.asarray(delays, dtype=np.float64)
    p = np.asarray(powers, dtype=np.float64)
    total = p.sum()
    if not total > 0:
        raise ZeroTotalPower("total tap power must be positive")
    mean = float(np.dot(p, t) / total)
    if literal_eq4:
        mean = math.sqrt(mean)
    spread2 = float(np.dot(p, (t - mean) ** 2) / total)
    return DelayStats(mean, math.sqrt(max(spread2, 0.0)))
