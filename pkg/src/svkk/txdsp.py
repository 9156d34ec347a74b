"""Transmit-side DSP: QAM mapping, pulse shaping, digital carrier insertion,
and dual-polarization frame assembly with the Stokes training preamble.

Frame layout (in symbols, per polarization)::

    | guard | slot1 slot2 slot3 slot4 | pilots | payload | guard |

The four training slots carry constant (unshaped) field pairs used by the
receiver to estimate the polarization de-rotation matrix; the digital carrier
is switched off inside them.  Guards at both ends absorb the wrap-around of
the circular spectral operations.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidConfigError, InvalidInputError
from .signals import (
    Signal,
    circular_filter,
    rrc_taps,
    snap_to_grid,
    upsample_zero_insert,
)

# Stokes training slot field values (Ex, Ey), transmitted as flat segments.
# Slot 4 uses a quadrature state so the four measured Stokes vectors span
# rank 4; two equal slots would leave the de-rotation matrix underdetermined.
TRAINING_SLOT_FIELDS: tuple = ((1, 0), (0, 1), (1, 1), (1, 1j))

DEFAULT_RRC_SPAN = 128


@dataclass(frozen=True)
class ModFormat:
    """A modulation format with its fixed bit labeling.

    `constellation[v]` is the point transmitted for the bit group with
    MSB-first integer value v.  Average constellation power is exactly 1.
    """

    name: str
    bits_per_symbol: int
    constellation: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.constellation, dtype=np.complex128)
        if pts.size != 2**self.bits_per_symbol:
            raise InvalidInputError(
                f"{self.name}: {pts.size} points for {self.bits_per_symbol} bits"
            )
        pts = pts / np.sqrt(np.mean(np.abs(pts) ** 2))
        pts.setflags(write=False)
        object.__setattr__(self, "constellation", pts)

    @property
    def size(self) -> int:
        return self.constellation.size


def _gray_axis_codes(bits: int) -> np.ndarray:
    """code[i] for amplitude level index i (levels -(2^b-1) .. +(2^b-1) step 2).

    Uses the cyclic reflected Gray sequence rotated so that code 0 lands on
    the +1 level; adjacent levels always differ in one bit.
    """
    n = 1 << bits
    i0 = n // 2  # index of the +1 level
    j = (np.arange(n) - i0) % n
    return j ^ (j >> 1)


def _axis_levels(bits: int) -> np.ndarray:
    n = 1 << bits
    return np.arange(-(n - 1), n, 2, dtype=float)


def _square_constellation(bits_i: int, bits_q: int) -> np.ndarray:
    """Rectangular grid with independent per-axis Gray labeling."""
    codes_i = _gray_axis_codes(bits_i)
    codes_q = _gray_axis_codes(bits_q)
    lv_i = _axis_levels(bits_i)
    lv_q = _axis_levels(bits_q)
    pts = np.zeros(1 << (bits_i + bits_q), dtype=np.complex128)
    for ii, ci in enumerate(codes_i):
        for qi, cq in enumerate(codes_q):
            pts[(int(ci) << bits_q) | int(cq)] = lv_i[ii] + 1j * lv_q[qi]
    return pts


def _cross32_constellation() -> np.ndarray:
    """Cross 32QAM: 8x4 Gray rectangle with the outer columns folded onto the
    top/bottom wings, (|I|=7, Q) -> (sign(I)*|Q|, sign(Q)*5)."""
    pts = _square_constellation(3, 2)
    out = pts.copy()
    for v, p in enumerate(pts):
        if abs(p.real) > 5:
            out[v] = np.sign(p.real) * abs(p.imag) + 1j * np.sign(p.imag) * 5
    return out


def _build_formats() -> dict:
    table = {
        "QPSK": ModFormat("QPSK", 2, _square_constellation(1, 1)),
        "8QAM": ModFormat("8QAM", 3, _square_constellation(2, 1)),
        "16QAM": ModFormat("16QAM", 4, _square_constellation(2, 2)),
        "32QAM": ModFormat("32QAM", 5, _cross32_constellation()),
        "64QAM": ModFormat("64QAM", 6, _square_constellation(3, 3)),
    }
    return table


_FORMATS = _build_formats()


def get_format(name: str) -> ModFormat:
    try:
        return _FORMATS[name.upper()]
    except KeyError:
        raise InvalidConfigError(
            f"unknown modulation format {name!r}; known: {sorted(_FORMATS)}"
        ) from None


def bits_to_indices(bits: np.ndarray, bits_per_symbol: int) -> np.ndarray:
    bits = np.asarray(bits, dtype=np.uint8)
    if bits.size % bits_per_symbol:
        raise InvalidInputError(
            f"{bits.size} bits not divisible by {bits_per_symbol} bits/symbol"
        )
    groups = bits.reshape(-1, bits_per_symbol)
    weights = 1 << np.arange(bits_per_symbol - 1, -1, -1)
    return groups @ weights


def indices_to_bits(indices: np.ndarray, bits_per_symbol: int) -> np.ndarray:
    indices = np.asarray(indices, dtype=np.int64)
    shifts = np.arange(bits_per_symbol - 1, -1, -1)
    return ((indices[:, None] >> shifts) & 1).astype(np.uint8).ravel()


def map_bits(bits: np.ndarray, fmt: ModFormat) -> np.ndarray:
    """Map a bit sequence (MSB-first groups) to constellation symbols."""
    return fmt.constellation[bits_to_indices(bits, fmt.bits_per_symbol)]


@dataclass(frozen=True)
class CarrierPlan:
    """Digital carrier placement above the upper signal edge."""

    cspr_db: float
    guard_band_hz: float
    carrier_freq_hz: float

    @classmethod
    def for_link(
        cls, baud_hz: float, rolloff: float, cspr_db: float, guard_band_hz: float
    ) -> "CarrierPlan":
        f_c = baud_hz * (1.0 + rolloff) / 2.0 + guard_band_hz
        return cls(cspr_db, guard_band_hz, f_c)

    def amplitude(self, signal_power: float) -> float:
        return float(np.sqrt(signal_power * 10.0 ** (self.cspr_db / 10.0)))


@dataclass(frozen=True)
class FrameLayout:
    """Symbol counts of one frame; guards are per edge."""

    training_slot_symbols: int = 256
    n_training_slots: int = 4
    pilot_symbols: int = 1024
    payload_symbols: int = 65536
    guard_symbols: int = 256

    def __post_init__(self):
        for name in (
            "training_slot_symbols",
            "pilot_symbols",
            "payload_symbols",
            "guard_symbols",
        ):
            if getattr(self, name) < 0:
                raise InvalidConfigError(f"{name} must be >= 0")
        if self.n_training_slots != 4:
            raise InvalidConfigError("frame uses exactly 4 Stokes training slots")

    @property
    def total_symbols(self) -> int:
        return (
            2 * self.guard_symbols
            + self.n_training_slots * self.training_slot_symbols
            + self.pilot_symbols
            + self.payload_symbols
        )

    @property
    def training_start(self) -> int:
        return self.guard_symbols

    def slot_span(self, k: int) -> tuple:
        start = self.training_start + k * self.training_slot_symbols
        return start, start + self.training_slot_symbols

    @property
    def pilot_start(self) -> int:
        return self.training_start + self.n_training_slots * self.training_slot_symbols

    @property
    def payload_start(self) -> int:
        return self.pilot_start + self.pilot_symbols

    @property
    def payload_end(self) -> int:
        return self.payload_start + self.payload_symbols


def pulse_shape(
    symbols: Sequence[complex],
    sps: int,
    rolloff: float,
    baud_hz: float,
    span_symbols: int = DEFAULT_RRC_SPAN,
) -> Signal:
    """Zero-insert upsample then root-raised-cosine shape (circular, zero delay).

    Symbol k sits at sample k*sps of the output; a matched filter plus
    symbol-spaced sampling recovers the symbols up to filter-truncation ISI.
    """
    if sps < 2:
        raise InvalidInputError(f"need sps >= 2, got {sps}")
    taps = rrc_taps(rolloff, span_symbols, sps).samples
    up = upsample_zero_insert(np.asarray(symbols, dtype=np.complex128), sps)
    return Signal(circular_filter(up, taps), sps * baud_hz)


def matched_filter(x: Signal, rolloff: float, baud_hz: float, span_symbols: int = DEFAULT_RRC_SPAN) -> Signal:
    """Receive-side RRC (circular, zero delay)."""
    sps_exact = x.sample_rate / baud_hz
    sps = int(round(sps_exact))
    if abs(sps_exact - sps) > 1e-6 or sps < 2:
        raise InvalidInputError(
            f"matched filter needs an integer >= 2 samples/symbol, got {sps_exact}"
        )
    taps = rrc_taps(rolloff, span_symbols, sps).samples
    return x.with_samples(circular_filter(x.samples, taps))


def insert_carrier(x: Signal, plan: CarrierPlan, reference_power: Optional[float] = None) -> Signal:
    """Add the digital carrier tone A*exp(i*2*pi*f_c*t).

    A is set so that A^2 over the signal power equals the plan's CSPR.  The
    carrier frequency is snapped to the record's FFT grid so the tone is
    exactly periodic over the circular record.  `reference_power` overrides
    the measured signal power (needed when x carries no payload).
    """
    wave, _, _ = _carrier_wave(x, plan, reference_power)
    return x.with_samples(x.samples + wave)


def _carrier_wave(x: Signal, plan: CarrierPlan, reference_power: Optional[float]):
    if plan.carrier_freq_hz >= x.sample_rate / 2.0:
        raise InvalidConfigError(
            f"carrier at {plan.carrier_freq_hz / 1e9:.3f} GHz is not representable "
            f"below Nyquist {x.sample_rate / 2e9:.3f} GHz"
        )
    p_ref = x.power if reference_power is None else float(reference_power)
    if p_ref <= 0:
        raise InvalidConfigError("carrier needs a positive signal power reference")
    amp = plan.amplitude(p_ref)
    f_eff = snap_to_grid(plan.carrier_freq_hz, len(x), x.sample_rate)
    n = np.arange(len(x))
    wave = amp * np.exp(2j * np.pi * f_eff * n / x.sample_rate)
    return wave, amp, f_eff


def papr_db(samples: np.ndarray) -> float:
    """Peak-to-average power ratio in dB."""
    p = np.abs(np.asarray(samples)) ** 2
    return float(10.0 * np.log10(np.max(p) / np.mean(p)))


@dataclass(frozen=True)
class DualPolFrame:
    """Assembled transmit frame plus everything the receiver is allowed to know."""

    x: Signal
    y: Signal
    layout: FrameLayout
    fmt: ModFormat
    baud_hz: float
    sps: int
    rolloff: float
    rrc_span: int
    carrier_freq_hz: float  # grid-snapped effective frequency
    carrier_amp: float
    training_amp: float
    pilot_syms: np.ndarray = field(repr=False)  # (2, pilot_symbols)
    payload_syms: np.ndarray = field(repr=False)  # (2, payload_symbols)
    payload_bits: np.ndarray = field(repr=False)  # (2, payload_symbols*bps)

    @property
    def sample_rate(self) -> float:
        return self.x.sample_rate

    def slot_sample_span(self, k: int) -> tuple:
        a, b = self.layout.slot_span(k)
        return a * self.sps, b * self.sps

    def symbol_sample(self, symbol_index: int) -> int:
        return symbol_index * self.sps


def build_frame(cfg, rng_seed: Optional[int] = None, precomp_transfer=None) -> DualPolFrame:
    """Assemble the dual-polarization transmit frame for a link config.

    Deterministic given the seed.  `precomp_transfer`, when given, is a
    frequency-domain transfer function applied to the complex baseband
    (training, pilots and payload) before carrier insertion; the dispersion
    pre-compensation arm uses it.
    """
    if cfg.cspr_db < 0:
        raise InvalidConfigError(
            f"cspr_db = {cfg.cspr_db} violates the minimum-phase sanity bound (>= 0)"
        )
    fmt = get_format(cfg.modulation)
    layout: FrameLayout = cfg.frame
    seed = cfg.seed if rng_seed is None else rng_seed
    root = np.random.SeedSequence(seed)
    bits_rng, pilot_rng = [np.random.default_rng(s) for s in root.spawn(2)]

    bps = fmt.bits_per_symbol
    payload_bits = bits_rng.integers(0, 2, size=(2, layout.payload_symbols * bps), dtype=np.uint8)
    pilot_bits = pilot_rng.integers(0, 2, size=(2, layout.pilot_symbols * bps), dtype=np.uint8)
    payload_syms = np.stack([map_bits(payload_bits[p], fmt) for p in range(2)])
    pilot_syms = np.stack([map_bits(pilot_bits[p], fmt) for p in range(2)])

    # symbol streams with empty guard and training regions
    total = layout.total_symbols
    sym = np.zeros((2, total), dtype=np.complex128)
    sym[:, layout.pilot_start : layout.payload_start] = pilot_syms
    sym[:, layout.payload_start : layout.payload_end] = payload_syms

    fs = cfg.sps * cfg.baud_hz
    shaped = [
        pulse_shape(sym[p], cfg.sps, cfg.rolloff, cfg.baud_hz, cfg.rrc_span)
        for p in range(2)
    ]
    if precomp_transfer is not None:
        from .signals import fft_filter

        shaped = [fft_filter(s, precomp_transfer) for s in shaped]

    # CSPR reference: mean power of the shaped pilot+payload waveform
    a = layout.pilot_start * cfg.sps
    b = layout.payload_end * cfg.sps
    p_ref = float(
        np.mean([np.mean(np.abs(s.samples[a:b]) ** 2) for s in shaped])
    )
    training_amp = float(np.sqrt(p_ref))

    plan = CarrierPlan.for_link(cfg.baud_hz, cfg.rolloff, cfg.cspr_db, cfg.guard_band_hz)
    n_samples = len(shaped[0])
    if plan.carrier_freq_hz >= fs / 2.0:
        raise InvalidConfigError(
            f"carrier at {plan.carrier_freq_hz / 1e9:.3f} GHz is not representable "
            f"below Nyquist {fs / 2e9:.3f} GHz"
        )
    # The carrier is gated on over pilots + payload + tail guard (the span the
    # KK stage processes as one circular record) and its frequency snapped to
    # that span's FFT grid, so the tone is exactly periodic there and the
    # carrier-line removal inside the reconstruction is exact.
    amp = plan.amplitude(p_ref)
    f_eff = snap_to_grid(plan.carrier_freq_hz, n_samples - a, fs)
    wave = amp * np.exp(2j * np.pi * f_eff * np.arange(n_samples) / fs)
    mask = np.zeros(n_samples)
    mask[a:] = 1.0

    out = []
    for p in range(2):
        samples = shaped[p].samples + wave * mask
        # overwrite training slots with the flat Stokes states, power-matched
        # to the payload so the receiver rails see comparable levels
        for k, fields in enumerate(TRAINING_SLOT_FIELDS):
            s0, s1 = layout.slot_span(k)
            samples[s0 * cfg.sps : s1 * cfg.sps] = training_amp * fields[p]
        out.append(Signal(samples, fs))

    return DualPolFrame(
        x=out[0],
        y=out[1],
        layout=layout,
        fmt=fmt,
        baud_hz=cfg.baud_hz,
        sps=cfg.sps,
        rolloff=cfg.rolloff,
        rrc_span=cfg.rrc_span,
        carrier_freq_hz=f_eff,
        carrier_amp=amp,
        training_amp=training_amp,
        pilot_syms=pilot_syms,
        payload_syms=payload_syms,
        payload_bits=payload_bits,
    )


__all__ = [
    "ModFormat",
    "get_format",
    "map_bits",
    "bits_to_indices",
    "indices_to_bits",
    "CarrierPlan",
    "FrameLayout",
    "pulse_shape",
    "matched_filter",
    "insert_carrier",
    "papr_db",
    "DualPolFrame",
    "build_frame",
    "TRAINING_SLOT_FIELDS",
    "DEFAULT_RRC_SPAN",
]
