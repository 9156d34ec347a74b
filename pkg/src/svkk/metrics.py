"""Decision logic and link-quality metrics: hard decisions, BER, EVM-based
SNR, spectral OSNR estimation, and constellation export."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.signal import welch
from scipy.special import erfc

from .channel import OSNR_REF_BW
from .errors import EstimationUnavailableError, InvalidInputError
from .signals import Signal
from .txdsp import ModFormat, indices_to_bits

SNR_REPORT_CEILING_DB = 60.0


@dataclass(frozen=True)
class LinkResult:
    """Outcome of one end-to-end run."""

    ber: float
    snr_db: float
    bits_counted: int
    errors_counted: int
    ber_x: float
    ber_y: float
    snr_x_db: float
    snr_y_db: float

    def __post_init__(self):
        if self.errors_counted > self.bits_counted:
            raise InvalidInputError("errors cannot exceed bits")

    def wilson_interval(self, z: float = 1.96) -> Tuple[float, float]:
        return wilson_interval(self.errors_counted, self.bits_counted, z)


def wilson_interval(errors: int, bits: int, z: float = 1.96) -> Tuple[float, float]:
    """Wilson score interval for a BER point estimate."""
    if bits <= 0:
        return (0.0, 1.0)
    p = errors / bits
    denom = 1.0 + z**2 / bits
    center = (p + z**2 / (2 * bits)) / denom
    half = (z / denom) * np.sqrt(p * (1 - p) / bits + z**2 / (4 * bits**2))
    return (max(0.0, center - half), min(1.0, center + half))


def decide_indices(symbols: np.ndarray, fmt: ModFormat) -> np.ndarray:
    """Nearest-point decision; exact ties go to the lower constellation index."""
    symbols = np.asarray(symbols, dtype=np.complex128)
    d2 = np.abs(symbols[:, None] - fmt.constellation[None, :]) ** 2
    return np.argmin(d2, axis=1)


def hard_decide(symbols: np.ndarray, fmt: ModFormat) -> np.ndarray:
    """Demap noisy symbols to bits through nearest-point decisions."""
    return indices_to_bits(decide_indices(symbols, fmt), fmt.bits_per_symbol)


def count_errors(symbols: np.ndarray, true_bits: np.ndarray, fmt: ModFormat) -> Tuple[int, int]:
    bits = hard_decide(symbols, fmt)
    true_bits = np.asarray(true_bits, dtype=np.uint8)
    if bits.size != true_bits.size:
        raise InvalidInputError(
            f"decided {bits.size} bits but reference has {true_bits.size}"
        )
    return int(np.sum(bits != true_bits)), int(bits.size)


def aligned_errors(
    symbols: np.ndarray,
    true_bits: np.ndarray,
    fmt: ModFormat,
) -> Tuple[int, int]:
    """Bit errors after scale-aligning the symbols onto the constellation.

    The canonical transmitted points are rebuilt from the true bits, and a
    single complex factor fits the measured symbols onto them before
    deciding.  Any common complex scaling of the measurement therefore
    cancels and leaves the BER unchanged.
    """
    from .txdsp import map_bits

    symbols = np.asarray(symbols, dtype=np.complex128)
    canon = map_bits(true_bits, fmt)
    if canon.size != symbols.size:
        raise InvalidInputError("bit count does not match symbol count")
    denom = np.vdot(symbols, symbols)
    if denom == 0:
        raise InvalidInputError("cannot align all-zero symbols")
    alpha = np.vdot(symbols, canon) / denom
    return count_errors(alpha * symbols, true_bits, fmt)


def evm_snr(symbols: np.ndarray, reference: np.ndarray) -> float:
    """SNR in dB from the error vector against known symbols.

    A single complex scalar aligns the measured symbols to the reference
    first, so global phase and gain do not count as error.  Reported value
    is capped at 60 dB.
    """
    symbols = np.asarray(symbols, dtype=np.complex128)
    reference = np.asarray(reference, dtype=np.complex128)
    if symbols.shape != reference.shape:
        raise InvalidInputError("symbols and reference must have equal length")
    p_ref = np.mean(np.abs(reference) ** 2)
    if p_ref == 0:
        raise InvalidInputError("reference has zero power")
    denom = np.vdot(symbols, symbols)
    if denom == 0:
        return -np.inf
    alpha = np.vdot(symbols, reference) / denom
    err = np.mean(np.abs(alpha * symbols - reference) ** 2)
    if err == 0:
        return SNR_REPORT_CEILING_DB
    return float(min(-10.0 * np.log10(err / p_ref), SNR_REPORT_CEILING_DB))


def estimate_osnr(
    x_pol: Signal,
    y_pol: Signal,
    signal_band: Tuple[float, float],
    ref_bw_hz: float = OSNR_REF_BW,
    nperseg: int = 4096,
) -> float:
    """Periodogram OSNR estimate (dual-pol signal over dual-pol noise in ref_bw).

    The noise floor is the median PSD outside `signal_band`; it is subtracted
    from the in-band power before forming the ratio.  Raises when no spectral
    guard region exists.
    """
    f_lo, f_hi = signal_band
    if f_hi <= f_lo:
        raise InvalidInputError("signal_band must be (low, high) with low < high")
    p_sig_total = 0.0
    n0_total = 0.0
    for pol in (x_pol, y_pol):
        f, psd = welch(
            pol.samples,
            fs=pol.sample_rate,
            nperseg=min(nperseg, len(pol)),
            return_onesided=False,
            detrend=False,
        )
        in_band = (f >= f_lo) & (f <= f_hi)
        guard = ~in_band
        if not np.any(guard) or not np.any(in_band):
            raise EstimationUnavailableError(
                "no spectral guard region outside the signal band"
            )
        n0 = float(np.median(psd[guard]))
        df = pol.sample_rate / psd.size
        p_sig_total += float(np.sum(np.maximum(psd[in_band] - n0, 0.0)) * df)
        n0_total += n0
    if n0_total <= 0 or p_sig_total <= 0:
        return SNR_REPORT_CEILING_DB
    osnr = 10.0 * np.log10(p_sig_total / (n0_total * ref_bw_hz))
    return float(min(osnr, SNR_REPORT_CEILING_DB))


def qam_ber_theory(snr_db: float, m: int) -> float:
    """Exact bit error rate of Gray-labeled square M-QAM in AWGN
    (per-symbol SNR), via the per-axis PAM expansion."""
    sqrt_m = int(round(np.sqrt(m)))
    if sqrt_m * sqrt_m != m:
        raise InvalidInputError(f"square QAM only, got M={m}")
    gamma = 10.0 ** (snr_db / 10.0)
    log2_sqrt_m = int(np.log2(sqrt_m))
    total = 0.0
    for k in range(1, log2_sqrt_m + 1):
        upper = int((1 - 2.0**-k) * sqrt_m) - 1
        for i in range(upper + 1):
            w = (-1.0) ** np.floor(i * 2.0 ** (k - 1) / sqrt_m) * (
                2 ** (k - 1) - np.floor(i * 2.0 ** (k - 1) / sqrt_m + 0.5)
            )
            arg = (2 * i + 1) * np.sqrt(3.0 * gamma / (2.0 * (m - 1)))
            total += w * erfc(arg)
    return float(total / (sqrt_m * log2_sqrt_m))


def dump_constellation(
    path,
    symbols_x: np.ndarray,
    symbols_y: np.ndarray,
    fmt: ModFormat,
    max_points: Optional[int] = None,
) -> None:
    """CSV with columns (re, im, pol, decided_index)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["re", "im", "pol", "decided_index"])
        for pol, syms in (("x", symbols_x), ("y", symbols_y)):
            syms = np.asarray(syms)[:max_points]
            decided = decide_indices(syms, fmt)
            for s, d in zip(syms, decided):
                writer.writerow([repr(float(s.real)), repr(float(s.imag)), pol, int(d)])


__all__ = [
    "LinkResult",
    "wilson_interval",
    "hard_decide",
    "decide_indices",
    "count_errors",
    "aligned_errors",
    "evm_snr",
    "estimate_osnr",
    "qam_ber_theory",
    "dump_constellation",
    "SNR_REPORT_CEILING_DB",
]
