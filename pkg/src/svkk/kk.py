"""Kramers-Kronig complex-field reconstruction from a photodetected power rail.

The transmitted field is a baseband data signal plus a digital carrier above
the band edge.  With the carrier amplitude exceeding the instantaneous data
envelope, the intensity uniquely determines the field: the phase is the
Hilbert transform of half the log-power.  Because the carrier sits on the
upper side of the data band, that analytic-signal factorization reconstructs
the mirrored sideband, so the pipeline ends with a conjugation that restores
the transmitted orientation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .signals import (
    RealSignal,
    Signal,
    fft_filter,
    freq_shift,
    hilbert_imag,
    resample,
    resample_real,
)
from .txdsp import DEFAULT_RRC_SPAN, matched_filter

POWER_FLOOR_REL = 1e-12


@dataclass(frozen=True)
class KKConfig:
    """Knobs of one reconstruction pass."""

    carrier_freq_hz: float
    baud_hz: float
    rolloff: float
    internal_oversampling: int = 1
    power_floor_rel: float = POWER_FLOOR_REL
    output_filter: str = "rrc"  # rrc | brickwall | none
    rrc_span: int = DEFAULT_RRC_SPAN

    def __post_init__(self):
        if not 1 <= self.internal_oversampling <= 8:
            raise InvalidConfigError("internal_oversampling must be in [1, 8]")
        if self.power_floor_rel <= 0:
            raise InvalidConfigError("power_floor_rel must be > 0")
        if self.output_filter not in ("rrc", "brickwall", "none"):
            raise InvalidConfigError("output_filter must be rrc, brickwall, or none")


@dataclass(frozen=True)
class KKDiagnostics:
    clamped_samples: int
    clamped_fraction: float


def kk_reconstruct_full(power: RealSignal, cfg: KKConfig) -> Tuple[Signal, KKDiagnostics]:
    """Reconstruct the complex baseband data field from one power rail.

    Pipeline: oversample, clamp, phase = H{log(power)/2}, assemble
    sqrt(power)*exp(i*phase), remove the carrier line (complex mean),
    downconvert by the carrier frequency, restore sideband orientation,
    resample back, and low-pass with the matched filter.
    """
    if not np.any(power.samples):
        raise InvalidInputError("all-zero power record cannot be reconstructed")
    rate0 = power.sample_rate
    floor = cfg.power_floor_rel * float(np.mean(power.samples))
    p = power
    if cfg.internal_oversampling > 1:
        p = resample_real(p, rate0 * cfg.internal_oversampling)
    clamped = int(np.sum(p.samples < floor))
    ps = np.maximum(p.samples, floor)

    phi = hilbert_imag(RealSignal(0.5 * np.log(ps), p.sample_rate))
    field = np.sqrt(ps) * np.exp(1j * phi.samples)
    field = field - field.mean()

    sig = Signal(field, p.sample_rate)
    sig = freq_shift(sig, -cfg.carrier_freq_hz)
    # the carrier sits above the data band; the minimum-phase factorization
    # hands back the mirrored sideband, undone here
    sig = sig.with_samples(np.conj(sig.samples))
    if cfg.internal_oversampling > 1:
        sig = resample(sig, rate0)
    sig = _output_filter(sig, cfg)
    diag = KKDiagnostics(clamped, clamped / len(p))
    return sig, diag


def kk_reconstruct(power: RealSignal, cfg: KKConfig) -> Signal:
    return kk_reconstruct_full(power, cfg)[0]


def _output_filter(sig: Signal, cfg: KKConfig) -> Signal:
    if cfg.output_filter == "none":
        return sig
    if cfg.output_filter == "brickwall":
        edge = cfg.baud_hz * (1.0 + cfg.rolloff) / 2.0
        return fft_filter(sig, lambda f: (np.abs(f) <= edge).astype(complex))
    return matched_filter(sig, cfg.rolloff, cfg.baud_hz, cfg.rrc_span)


def min_phase_monitor(signal_bb: Signal, carrier_amp: float) -> float:
    """Fraction of samples whose data envelope reaches the carrier amplitude.

    A nonzero fraction flags sufficient-condition violations of the
    phase-retrieval assumption; diagnostic only.
    """
    if carrier_amp <= 0:
        return 1.0 if np.any(signal_bb.samples) else 0.0
    return float(np.mean(np.abs(signal_bb.samples) >= carrier_amp))


__all__ = [
    "KKConfig",
    "KKDiagnostics",
    "kk_reconstruct",
    "kk_reconstruct_full",
    "min_phase_monitor",
]
