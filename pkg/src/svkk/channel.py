"""Fiber and front-end impairment models.

Chromatic dispersion, polarization rotation, ASE loading to a target OSNR,
and converter impairments (IQ imbalance/skew, bandwidth limit, quantization).
Every operation is pure given an explicit rng, so trials parallelize safely.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.signal import bessel, freqs

from .errors import InvalidConfigError, InvalidInputError
from .signals import RealSignal, Signal, fft_filter, fft_filter_real, fft_grid

C_LIGHT = 299_792_458.0  # m/s
OSNR_REF_BW = 12.5e9  # 0.1 nm at 1550 nm


@dataclass(frozen=True)
class FiberParams:
    length_km: float = 80.0
    dispersion_ps_nm_km: float = 17.0
    wavelength_nm: float = 1550.12

    def __post_init__(self):
        if self.length_km < 0:
            raise InvalidConfigError("fiber length must be >= 0")
        if not 1260.0 <= self.wavelength_nm <= 1650.0:
            raise InvalidConfigError(
                f"wavelength {self.wavelength_nm} nm outside [1260, 1650]"
            )

    @property
    def phase_coeff(self) -> float:
        """pi * lambda^2 * D * L / c, in s^2 (multiplies f^2)."""
        lam = self.wavelength_nm * 1e-9
        d_si = self.dispersion_ps_nm_km * 1e-6  # s/m^2
        return np.pi * lam**2 * d_si * (self.length_km * 1e3) / C_LIGHT


def cd_transfer(fiber: FiberParams, sign: str = "forward"):
    """All-pass quadratic-phase transfer function of the fiber.

    Forward propagation applies exp(-i*pi*lambda^2*D*L*f^2/c); `inverse`
    undoes it exactly.
    """
    if sign not in ("forward", "inverse"):
        raise InvalidInputError(f"sign must be 'forward' or 'inverse', got {sign!r}")
    s = -1.0 if sign == "forward" else 1.0
    coeff = fiber.phase_coeff

    def tf(f: np.ndarray) -> np.ndarray:
        return np.exp(1j * s * coeff * f**2)

    return tf


def apply_cd(x: Signal, fiber: FiberParams, sign: str = "forward") -> Signal:
    if fiber.length_km == 0:
        return x
    return fft_filter(x, cd_transfer(fiber, sign))


@dataclass(frozen=True)
class JonesRotation:
    """Unitary 2x2 polarization rotation."""

    matrix: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.matrix, dtype=np.complex128)
        if u.shape != (2, 2):
            raise InvalidInputError("Jones rotation must be 2x2")
        if np.max(np.abs(u.conj().T @ u - np.eye(2))) > 1e-12:
            raise InvalidInputError("Jones rotation must be unitary to 1e-12")
        u.setflags(write=False)
        object.__setattr__(self, "matrix", u)

    @classmethod
    def identity(cls) -> "JonesRotation":
        return cls(np.eye(2, dtype=np.complex128))

    @classmethod
    def from_angles(cls, theta: float, phi: float = 0.0) -> "JonesRotation":
        c, s = np.cos(theta), np.sin(theta)
        u = np.array(
            [[c, s * np.exp(1j * phi)], [-s * np.exp(-1j * phi), c]],
            dtype=np.complex128,
        )
        return cls(u)

    @classmethod
    def random(cls, rng) -> "JonesRotation":
        """Haar-uniform random SOP via QR of a complex Gaussian matrix."""
        rng = np.random.default_rng(rng)
        a = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        q, r = np.linalg.qr(a)
        d = np.diagonal(r)
        return cls(q * (d / np.abs(d)))

    @property
    def inverse(self) -> "JonesRotation":
        return JonesRotation(self.matrix.conj().T)


def apply_rotation(
    x_pol: Signal, y_pol: Signal, rot: JonesRotation
) -> Tuple[Signal, Signal]:
    """Per-sample Jones matrix multiply; preserves total power exactly."""
    if len(x_pol) != len(y_pol) or x_pol.sample_rate != y_pol.sample_rate:
        raise InvalidInputError("polarizations must share length and rate")
    u = rot.matrix
    out_x = u[0, 0] * x_pol.samples + u[0, 1] * y_pol.samples
    out_y = u[1, 0] * x_pol.samples + u[1, 1] * y_pol.samples
    return x_pol.with_samples(out_x), y_pol.with_samples(out_y)


def load_ase(
    x_pol: Signal,
    y_pol: Signal,
    osnr_db: Optional[float],
    rng,
    ref_bw_hz: float = OSNR_REF_BW,
) -> Tuple[Signal, Signal]:
    """Add white circular Gaussian noise to hit a target OSNR.

    OSNR convention: total dual-polarization signal power over total
    dual-polarization noise power inside ref_bw_hz (0.1 nm by default).
    `osnr_db=None` (or +inf) adds nothing.
    """
    if osnr_db is None or np.isinf(osnr_db):
        return x_pol, y_pol
    if len(x_pol) != len(y_pol) or x_pol.sample_rate != y_pol.sample_rate:
        raise InvalidInputError("polarizations must share length and rate")
    rng = np.random.default_rng(rng)
    p_total = x_pol.power + y_pol.power
    n0_per_pol = p_total / (2.0 * ref_bw_hz * 10.0 ** (osnr_db / 10.0))
    var = n0_per_pol * x_pol.sample_rate  # complex variance per sample per pol
    sigma = np.sqrt(var / 2.0)
    n = len(x_pol)
    noise = sigma * (rng.normal(size=(2, n)) + 1j * rng.normal(size=(2, n)))
    return (
        x_pol.with_samples(x_pol.samples + noise[0]),
        y_pol.with_samples(y_pol.samples + noise[1]),
    )


@dataclass(frozen=True)
class ImpairmentSet:
    """Converter impairments; a zero value switches the stage off."""

    enob_bits: float = 0.0
    bandwidth_3db_hz: float = 0.0
    iq_gain_imbalance_db: float = 0.0
    iq_phase_deg: float = 0.0
    iq_skew_s: float = 0.0

    def __post_init__(self):
        if self.enob_bits < 0:
            raise InvalidConfigError("enob_bits must be >= 0")
        for name in ("bandwidth_3db_hz", "iq_gain_imbalance_db", "iq_phase_deg", "iq_skew_s"):
            if not np.isfinite(getattr(self, name)):
                raise InvalidConfigError(f"{name} must be finite")

    @property
    def all_off(self) -> bool:
        return (
            self.enob_bits == 0
            and self.bandwidth_3db_hz == 0
            and self.iq_gain_imbalance_db == 0
            and self.iq_phase_deg == 0
            and self.iq_skew_s == 0
        )


def quantize(samples: np.ndarray, bits: float, full_scale: Optional[float] = None) -> np.ndarray:
    """Uniform mid-rise quantization of a real array.

    The converter range spans the sample mean +/- full_scale (default: four
    standard deviations, mimicking an auto-ranged digitizer); samples beyond
    it clip.  `bits` may be fractional (effective number of bits).
    """
    samples = np.asarray(samples, dtype=np.float64)
    if bits <= 0:
        return samples.copy()
    mid = float(np.mean(samples))
    fs = 4.0 * float(np.std(samples)) if full_scale is None else float(full_scale)
    if fs <= 0:
        return samples.copy()
    step = 2.0 * fs / (2.0**bits)
    q = step * (np.floor((samples - mid) / step) + 0.5)
    return mid + np.clip(q, -fs + step / 2.0, fs - step / 2.0)


def bessel_lowpass_transfer(bandwidth_3db_hz: float, order: int = 4):
    """Analog Bessel low-pass response with -3 dB magnitude at the cutoff."""
    b, a = bessel(order, 2.0 * np.pi * bandwidth_3db_hz, "low", analog=True, norm="mag")

    def tf(f: np.ndarray) -> np.ndarray:
        _, h = freqs(b, a, worN=2.0 * np.pi * f)
        return h

    return tf


def _fractional_delay_real(samples: np.ndarray, delay_s: float, fs: float) -> np.ndarray:
    sig = RealSignal(samples, fs)
    out = fft_filter_real(sig, lambda f: np.exp(-2j * np.pi * f * delay_s))
    return out.samples


def apply_impairments(x: Signal, imp: ImpairmentSet, rng=None) -> Signal:
    """Transmitter-style impairment chain on a complex waveform.

    Stage order: IQ gain/phase mixing, IQ skew, 4th-order Bessel low-pass,
    per-rail quantization (no dither).  Stages with off values are skipped.
    """
    del rng  # reserved for dithered quantization; dither is off
    if imp.all_off:
        return x
    i = x.samples.real.copy()
    q = x.samples.imag.copy()
    if imp.iq_gain_imbalance_db != 0 or imp.iq_phase_deg != 0:
        gi = 10.0 ** (+imp.iq_gain_imbalance_db / 40.0)
        gq = 10.0 ** (-imp.iq_gain_imbalance_db / 40.0)
        phi = np.deg2rad(imp.iq_phase_deg)
        i, q = gi * i, gq * (np.cos(phi) * q + np.sin(phi) * i)
    if imp.iq_skew_s != 0:
        i = _fractional_delay_real(i, +imp.iq_skew_s / 2.0, x.sample_rate)
        q = _fractional_delay_real(q, -imp.iq_skew_s / 2.0, x.sample_rate)
    out = Signal(i + 1j * q, x.sample_rate)
    if imp.bandwidth_3db_hz > 0:
        out = fft_filter(out, bessel_lowpass_transfer(imp.bandwidth_3db_hz))
    if imp.enob_bits > 0:
        out = out.with_samples(
            quantize(out.samples.real, imp.enob_bits)
            + 1j * quantize(out.samples.imag, imp.enob_bits)
        )
    return out


def apply_rail_impairments(rail: RealSignal, imp: ImpairmentSet) -> RealSignal:
    """Receiver-side digitization of one photodetected rail (low-pass + ENoB).

    IQ imbalance terms do not apply to a single real rail and are ignored.
    """
    out = rail
    if imp.bandwidth_3db_hz > 0:
        out = fft_filter_real(out, bessel_lowpass_transfer(imp.bandwidth_3db_hz))
    if imp.enob_bits > 0:
        out = out.with_samples(quantize(out.samples, imp.enob_bits))
    return out


__all__ = [
    "C_LIGHT",
    "OSNR_REF_BW",
    "FiberParams",
    "cd_transfer",
    "apply_cd",
    "JonesRotation",
    "apply_rotation",
    "load_ase",
    "ImpairmentSet",
    "quantize",
    "bessel_lowpass_transfer",
    "apply_impairments",
    "apply_rail_impairments",
]
