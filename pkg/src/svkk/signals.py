"""Core waveform types and FFT-based spectral primitives.

Everything downstream (pulse shaping, dispersion, phase retrieval) is built
on the two immutable sample-buffer types defined here and a small set of
spectral operations.  All spectral operations treat the record as circular:
one FFT over the full buffer, no block processing.  Frames are expected to
carry discardable guard symbols at both ends so wrap-around never touches
measured payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Union

import numpy as np

from .errors import InvalidInputError, UnsupportedRatioError

TransferFn = Union[Callable[[np.ndarray], np.ndarray], np.ndarray]

DUMP_MAGIC = b"SVKK"
DUMP_VERSION = 1


def _as_locked(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Signal:
    """Uniformly sampled complex baseband waveform.

    Parameters
    ----------
    samples : array_like of complex
        Field amplitude samples (dimensionless).
    sample_rate : float
        Sampling rate in Hz, strictly positive.
    """

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.complex128)
        if samples.ndim != 1 or samples.size < 1:
            raise InvalidInputError("Signal needs a non-empty 1-D sample buffer")
        if not np.isfinite(self.sample_rate) or self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not np.all(np.isfinite(samples.view(np.float64))):
            raise InvalidInputError("Signal samples must be finite")
        object.__setattr__(self, "samples", _as_locked(samples))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def power(self) -> float:
        """Mean of |sample|^2."""
        return float(np.mean(np.abs(self.samples) ** 2))

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> "Signal":
        return Signal(samples, self.sample_rate)


@dataclass(frozen=True)
class RealSignal:
    """Uniformly sampled real-valued waveform (photodetected powers, Stokes rails)."""

    samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise InvalidInputError("RealSignal needs a non-empty 1-D sample buffer")
        if not np.isfinite(self.sample_rate) or self.sample_rate <= 0:
            raise InvalidInputError(f"sample_rate must be > 0, got {self.sample_rate}")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("RealSignal samples must be finite")
        object.__setattr__(self, "samples", _as_locked(samples))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    def __len__(self) -> int:
        return self.samples.size

    @property
    def power(self) -> float:
        return float(np.mean(self.samples**2))

    def with_samples(self, samples: np.ndarray) -> "RealSignal":
        return RealSignal(samples, self.sample_rate)


def fft_grid(n: int, sample_rate: float) -> np.ndarray:
    """Standard FFT bin frequencies (negative frequencies in the upper half)."""
    return np.fft.fftfreq(n, d=1.0 / sample_rate)


def snap_to_grid(freq: float, n: int, sample_rate: float) -> float:
    """Nearest FFT-bin frequency to `freq` for an n-sample record.

    Tones placed on the grid are exactly periodic over the record, which keeps
    circular processing free of wrap-around leakage.
    """
    step = sample_rate / n
    return round(freq / step) * step


def _evaluate_tf(transfer_fn: TransferFn, freqs: np.ndarray) -> np.ndarray:
    if callable(transfer_fn):
        h = np.asarray(transfer_fn(freqs), dtype=np.complex128)
    else:
        h = np.asarray(transfer_fn, dtype=np.complex128)
    if h.shape != freqs.shape:
        raise InvalidInputError(
            f"transfer function shape {h.shape} does not match FFT grid {freqs.shape}"
        )
    return h


def fft_filter(x: Signal, transfer_fn: TransferFn) -> Signal:
    """Apply a frequency-domain transfer function by circular convolution.

    `transfer_fn` is either a callable evaluated on the record's FFT grid or
    a precomputed array on that grid.
    """
    freqs = fft_grid(len(x), x.sample_rate)
    h = _evaluate_tf(transfer_fn, freqs)
    out = np.fft.ifft(np.fft.fft(x.samples) * h)
    return x.with_samples(out)


def fft_filter_real(x: RealSignal, transfer_fn: TransferFn) -> RealSignal:
    """fft_filter for real rails; the transfer function must be Hermitian."""
    freqs = fft_grid(len(x), x.sample_rate)
    h = _evaluate_tf(transfer_fn, freqs)
    out = np.fft.ifft(np.fft.fft(x.samples) * h)
    return x.with_samples(out.real)


def hilbert_imag(x: RealSignal) -> RealSignal:
    """Hilbert transform H{x} such that x + i*H{x} is the analytic signal.

    Frequency-domain rule: multiply the FFT by -i*sgn(f) with sgn(0) = 0 and
    the Nyquist bin (even lengths) treated as 0.  Under this convention the
    analytic signal of cos(wt) is exp(+iwt), and the DC component of the
    output is exactly zero.
    """
    n = len(x)
    spec = np.fft.fft(x.samples)
    mult = -1j * np.sign(fft_grid(n, x.sample_rate))
    if n % 2 == 0:
        mult[n // 2] = 0.0
    out = np.fft.ifft(spec * mult)
    return x.with_samples(out.real)


_MAX_RESAMPLE_DENOMINATOR = 64


def _resample_fraction(ratio: float, max_denominator: int) -> Fraction:
    frac = Fraction(ratio).limit_denominator(max_denominator)
    if frac.numerator <= 0 or abs(float(frac) - ratio) > 1e-9 * ratio:
        raise UnsupportedRatioError(
            f"resampling ratio {ratio!r} is not a small rational "
            f"(denominator bound {max_denominator})"
        )
    return frac


def _fft_resize(samples: np.ndarray, m: int) -> np.ndarray:
    """Spectral zero-pad/truncate a complex record to m samples.

    The Nyquist bin of the shorter record is split (upsampling) or folded
    (downsampling) so that an up-then-down round trip is exact to rounding.
    """
    n = samples.size
    if m == n:
        return samples.copy()
    spec = np.fft.fft(samples)
    out = np.zeros(m, dtype=np.complex128)
    k = min(n, m)  # length of the band-limited record
    if k % 2 == 0:
        npos = k // 2  # DC + strictly positive bins below Nyquist
        nneg = k // 2 - 1
        out[:npos] = spec[:npos]
        if nneg:
            out[-nneg:] = spec[-nneg:]
        if m > n:
            out[k // 2] = 0.5 * spec[k // 2]
            out[m - k // 2] = 0.5 * spec[k // 2]
        else:
            out[k // 2] = spec[k // 2] + spec[n - k // 2]
    else:
        npos = (k + 1) // 2
        nneg = k // 2
        out[:npos] = spec[:npos]
        if nneg:
            out[-nneg:] = spec[-nneg:]
    return np.fft.ifft(out) * (m / n)


def resample(x: Signal, new_rate: float, max_denominator: int = _MAX_RESAMPLE_DENOMINATOR) -> Signal:
    """Band-limited (FFT zero-pad/truncate) resampling to `new_rate`.

    The rate ratio must reduce to a small rational; the output length is
    round(n * new_rate / old_rate).
    """
    if new_rate <= 0:
        raise InvalidInputError(f"new_rate must be > 0, got {new_rate}")
    if new_rate == x.sample_rate:
        return x
    frac = _resample_fraction(new_rate / x.sample_rate, max_denominator)
    m = int(round(len(x) * frac.numerator / frac.denominator))
    if m < 1:
        raise InvalidInputError("resampling would drop below one sample")
    return Signal(_fft_resize(x.samples, m), new_rate)


def resample_real(x: RealSignal, new_rate: float, max_denominator: int = _MAX_RESAMPLE_DENOMINATOR) -> RealSignal:
    """resample() for real rails."""
    if new_rate <= 0:
        raise InvalidInputError(f"new_rate must be > 0, got {new_rate}")
    if new_rate == x.sample_rate:
        return x
    frac = _resample_fraction(new_rate / x.sample_rate, max_denominator)
    m = int(round(len(x) * frac.numerator / frac.denominator))
    return RealSignal(_fft_resize(x.samples.astype(np.complex128), m).real, new_rate)


def freq_shift(x: Signal, f_shift: float) -> Signal:
    """Multiply sample n by exp(i*2*pi*f_shift*n/sample_rate).  Power preserving."""
    if f_shift == 0.0:
        return x
    n = np.arange(len(x))
    rot = np.exp(2j * np.pi * f_shift * n / x.sample_rate)
    return x.with_samples(x.samples * rot)


def rrc_taps(rolloff: float, span_symbols: int, samples_per_symbol: int) -> RealSignal:
    """Root-raised-cosine impulse response, unit energy, symmetric.

    Returns span_symbols*samples_per_symbol + 1 taps.  The returned
    RealSignal's sample_rate is samples_per_symbol (symbol time = 1).
    """
    if not 0.0 <= rolloff <= 1.0:
        raise InvalidInputError(f"rolloff must be in [0, 1], got {rolloff}")
    if span_symbols < 2 or samples_per_symbol < 2:
        raise InvalidInputError("need span_symbols >= 2 and samples_per_symbol >= 2")
    n_taps = span_symbols * samples_per_symbol + 1
    t = (np.arange(n_taps) - (n_taps - 1) / 2) / samples_per_symbol  # symbol units
    beta = rolloff
    taps = np.empty(n_taps)
    for i, ti in enumerate(t):
        if abs(ti) < 1e-12:
            taps[i] = 1.0 - beta + 4.0 * beta / np.pi
        elif beta > 0 and abs(abs(ti) - 1.0 / (4.0 * beta)) < 1e-9:
            taps[i] = (beta / np.sqrt(2.0)) * (
                (1.0 + 2.0 / np.pi) * np.sin(np.pi / (4.0 * beta))
                + (1.0 - 2.0 / np.pi) * np.cos(np.pi / (4.0 * beta))
            )
        else:
            num = np.sin(np.pi * ti * (1.0 - beta)) + 4.0 * beta * ti * np.cos(
                np.pi * ti * (1.0 + beta)
            )
            den = np.pi * ti * (1.0 - (4.0 * beta * ti) ** 2)
            taps[i] = num / den
    taps /= np.sqrt(np.sum(taps**2))
    return RealSignal(taps, float(samples_per_symbol))


def circular_filter(samples: np.ndarray, taps: np.ndarray) -> np.ndarray:
    """Zero-delay circular convolution with a symmetric FIR.

    The center tap is aligned to lag zero, so features stay where they are
    and the wrap-around is confined to half the filter span at each end.
    """
    n = samples.size
    n_taps = taps.size
    if n_taps > n:
        raise InvalidInputError(f"filter ({n_taps} taps) longer than record ({n})")
    center = (n_taps - 1) // 2
    kernel = np.zeros(n, dtype=np.float64)
    kernel[: n_taps - center] = taps[center:]
    if center:
        kernel[-center:] = taps[:center]
    out = np.fft.ifft(np.fft.fft(samples) * np.fft.fft(kernel))
    return out if np.iscomplexobj(samples) else out.real


def upsample_zero_insert(symbols: np.ndarray, factor: int) -> np.ndarray:
    """Insert factor-1 zeros after each symbol."""
    out = np.zeros(symbols.size * factor, dtype=np.complex128)
    out[::factor] = symbols
    return out


def write_signal(path, x: Signal) -> None:
    """Binary dump: magic 'SVKK', u32 LE version, u64 LE count, f64 LE (re, im)
    pairs, trailing f64 LE sample_rate.  Bit-exact across platforms."""
    with open(path, "wb") as fh:
        fh.write(DUMP_MAGIC)
        fh.write(struct.pack("<I", DUMP_VERSION))
        fh.write(struct.pack("<Q", len(x)))
        inter = np.empty(2 * len(x), dtype="<f8")
        inter[0::2] = x.samples.real
        inter[1::2] = x.samples.imag
        fh.write(inter.tobytes())
        fh.write(struct.pack("<d", x.sample_rate))


def read_signal(path) -> Signal:
    """Read a waveform written by write_signal()."""
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != DUMP_MAGIC:
            raise InvalidInputError(f"bad magic {magic!r}, expected {DUMP_MAGIC!r}")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != DUMP_VERSION:
            raise InvalidInputError(f"unsupported dump version {version}")
        (count,) = struct.unpack("<Q", fh.read(8))
        inter = np.frombuffer(fh.read(16 * count), dtype="<f8")
        if inter.size != 2 * count:
            raise InvalidInputError("truncated signal dump")
        (rate,) = struct.unpack("<d", fh.read(8))
    return Signal(inter[0::2] + 1j * inter[1::2], rate)


def spectral_power(x: Signal) -> float:
    """Mean power computed from the spectrum (Parseval check counterpart)."""
    return float(np.sum(np.abs(np.fft.fft(x.samples)) ** 2) / len(x) ** 2)


__all__ = [
    "Signal",
    "RealSignal",
    "fft_grid",
    "snap_to_grid",
    "fft_filter",
    "fft_filter_real",
    "hilbert_imag",
    "resample",
    "resample_real",
    "freq_shift",
    "rrc_taps",
    "circular_filter",
    "upsample_zero_insert",
    "write_signal",
    "read_signal",
    "spectral_power",
]
