"""Stokes-vector receiver front end and training-based polarization de-rotation.

The receiver observes four real rails per sample:

    p_x = |Ex|^2,  p_y = |Ey|^2,  s2 = 2*Re(Ex' Ey),  s3 = 2*Im(Ex' Ey)

(' denoting conjugation).  A fiber SOP rotation acts on these rails as a
4x4 real matrix; four flat training slots with linearly independent Stokes
vectors let the receiver solve for the inverse map directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateTrainingError, InvalidInputError, SyncFailureError
from .signals import RealSignal, Signal
from .txdsp import TRAINING_SLOT_FIELDS, FrameLayout

AVERAGING_WINDOW = 128  # samples, centered in each training slot

COND_WARN = 1e6
COND_FAIL = 1e8


def field_pair_to_stokes(ex: complex, ey: complex) -> np.ndarray:
    """Rail 4-vector of a single fully polarized field state."""
    cross = np.conj(ex) * ey
    return np.array(
        [abs(ex) ** 2, abs(ey) ** 2, 2.0 * cross.real, 2.0 * cross.imag]
    )


TRAINING_STOKES = np.stack(
    [field_pair_to_stokes(ex, ey) for ex, ey in TRAINING_SLOT_FIELDS], axis=1
)  # 4x4, one column per slot


@dataclass(frozen=True)
class StokesRails:
    """The four synchronized receiver rails."""

    p_x: RealSignal
    p_y: RealSignal
    s2: RealSignal
    s3: RealSignal

    def __post_init__(self):
        rails = (self.p_x, self.p_y, self.s2, self.s3)
        n = len(self.p_x)
        rate = self.p_x.sample_rate
        if any(len(r) != n or r.sample_rate != rate for r in rails):
            raise InvalidInputError("rails must share length and sample rate")

    def __len__(self) -> int:
        return len(self.p_x)

    @property
    def sample_rate(self) -> float:
        return self.p_x.sample_rate

    def as_matrix(self) -> np.ndarray:
        """4xN rail matrix."""
        return np.stack(
            [self.p_x.samples, self.p_y.samples, self.s2.samples, self.s3.samples]
        )

    @classmethod
    def from_matrix(cls, rails: np.ndarray, sample_rate: float) -> "StokesRails":
        return cls(*(RealSignal(r, sample_rate) for r in rails))


@dataclass(frozen=True)
class DerotationMatrix:
    """4x4 real map from received rails to transmitted-frame rails."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        if m.shape != (4, 4):
            raise InvalidInputError("de-rotation matrix must be 4x4")
        if not np.all(np.isfinite(m)):
            raise InvalidInputError("de-rotation matrix must be finite")
        cond = float(np.linalg.cond(m))
        if cond > COND_WARN:
            warnings.warn(
                f"de-rotation matrix condition number {cond:.2e} above {COND_WARN:.0e}",
                RuntimeWarning,
                stacklevel=2,
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls) -> "DerotationMatrix":
        return cls(np.eye(4))

    @property
    def condition_number(self) -> float:
        return float(np.linalg.cond(self.matrix))

    def to_row(self) -> np.ndarray:
        """Row-major 16-value serialization used by the CSV debug dump."""
        return self.matrix.reshape(-1).copy()

    @classmethod
    def from_row(cls, row) -> "DerotationMatrix":
        return cls(np.asarray(row, dtype=np.float64).reshape(4, 4))


def detect_stokes(x_pol: Signal, y_pol: Signal) -> StokesRails:
    """Ideal square-law / balanced detection of the four rails."""
    if len(x_pol) != len(y_pol) or x_pol.sample_rate != y_pol.sample_rate:
        raise InvalidInputError("polarizations must share length and rate")
    ex, ey = x_pol.samples, y_pol.samples
    cross = np.conj(ex) * ey
    rate = x_pol.sample_rate
    return StokesRails(
        RealSignal(np.abs(ex) ** 2, rate),
        RealSignal(np.abs(ey) ** 2, rate),
        RealSignal(2.0 * cross.real, rate),
        RealSignal(2.0 * cross.imag, rate),
    )


def _slot_means(
    rails: StokesRails, layout: FrameLayout, sps: int, window: int
) -> np.ndarray:
    mat = rails.as_matrix()
    cols = []
    for k in range(layout.n_training_slots):
        a, b = layout.slot_span(k)
        a, b = a * sps, b * sps
        mid = (a + b) // 2
        lo, hi = mid - window // 2, mid + (window + 1) // 2
        if lo < a or hi > b:
            raise InvalidInputError(
                f"averaging window ({window} samples) does not fit inside "
                f"training slot of {b - a} samples"
            )
        cols.append(mat[:, lo:hi].mean(axis=1))
    return np.stack(cols, axis=1)


def estimate_derotation(
    rails: StokesRails,
    layout: FrameLayout,
    sps: int,
    window: int = AVERAGING_WINDOW,
) -> DerotationMatrix:
    """Solve for the de-rotation matrix from the four training slots.

    Each rail is averaged over a `window`-sample span centered in its slot.
    The measured vectors are normalized by the training launch power (total
    slot power is rotation invariant), so the solved matrix maps received
    rails directly onto transmitted-frame rails in physical units.
    """
    measured = _slot_means(rails, layout, sps, window)
    nominal = TRAINING_STOKES
    scale = np.sum(measured[0] + measured[1]) / np.sum(nominal[0] + nominal[1])
    if scale <= 0:
        raise DegenerateTrainingError("training slots carry no power")
    measured = measured / scale
    cond = float(np.linalg.cond(measured))
    if cond > COND_FAIL:
        raise DegenerateTrainingError(
            f"measured training vectors are rank deficient (cond {cond:.2e})"
        )
    m = np.linalg.solve(measured.T, nominal.T).T
    return DerotationMatrix(m)


def apply_derotation(rails: StokesRails, derot: DerotationMatrix) -> StokesRails:
    """Per-sample 4x4 multiply; the first two output rails feed KK detection."""
    out = derot.matrix @ rails.as_matrix()
    return StokesRails.from_matrix(out, rails.sample_rate)


def jones_to_rails_matrix(rot) -> np.ndarray:
    """Exact 4x4 rail-space representation of a Jones rotation.

    Columns are determined by pushing four independent field states through
    the rotation; the result L satisfies rails(U f) = L @ rails(f).
    """
    u = rot.matrix
    cols_in, cols_out = [], []
    for ex, ey in TRAINING_SLOT_FIELDS:
        f = u @ np.array([ex, ey], dtype=complex)
        cols_in.append(field_pair_to_stokes(ex, ey))
        cols_out.append(field_pair_to_stokes(f[0], f[1]))
    t_in = np.stack(cols_in, axis=1)
    t_out = np.stack(cols_out, axis=1)
    return t_out @ np.linalg.inv(t_in)


def training_power_template(
    layout: FrameLayout, sps: int, n_samples: int, cspr_db: float
) -> np.ndarray:
    """Nominal p_x + p_y profile of a whole frame (training power in slot
    units, carrier-on plateau elsewhere).

    The training region is a carrier-off notch relative to the payload, so
    the carrier level belongs in the template; without it the correlation
    flips sign.
    """
    cspr_lin = 10.0 ** (cspr_db / 10.0)
    template = np.zeros(n_samples)  # head guard: dark
    a = layout.pilot_start * sps
    b = layout.payload_end * sps
    template[a:b] = 2.0 * (1.0 + cspr_lin)
    template[b:] = 2.0 * cspr_lin  # tail guard: carrier only
    totals = TRAINING_STOKES[0] + TRAINING_STOKES[1]
    for k in range(layout.n_training_slots):
        s0, s1 = layout.slot_span(k)
        template[s0 * sps : s1 * sps] = totals[k]
    return template


def frame_sync(
    rails: StokesRails,
    layout: FrameLayout,
    sps: int,
    cspr_db: float,
    min_psr_db: float = 3.0,
) -> int:
    """Locate the frame by circularly correlating total power with the
    nominal frame power template.  Returns the lag (samples) of the capture
    relative to the nominal frame position; ties break toward the smallest
    lag.

    Accumulated dispersion chirps the carrier turn-on edge and can bias this
    estimate by a fraction of the dispersion memory; the pilot-aided
    refinement downstream absorbs that residual, so the coarse stage stays a
    plain sharp correlation (exact on undispersed captures).
    """
    n = len(rails)
    template = training_power_template(layout, sps, n, cspr_db)
    sig = rails.p_x.samples + rails.p_y.samples
    sig = sig - sig.mean()
    template = template - template.mean()
    corr = np.fft.ifft(np.fft.fft(sig) * np.conj(np.fft.fft(template))).real
    lag = int(np.argmax(corr))
    peak = corr[lag]
    # sidelobe zone: beyond the training span, where partial slot overlaps
    # (structurally as high as -1.5 dB) can no longer occur
    guard = (layout.n_training_slots + 1) * layout.training_slot_symbols * sps
    idx = np.arange(n)
    dist = np.minimum((idx - lag) % n, (lag - idx) % n)
    sidelobes = np.abs(corr[dist > guard])
    if sidelobes.size:
        psr_db = 10.0 * np.log10(peak / max(np.max(sidelobes), 1e-300))
        if psr_db < min_psr_db:
            raise SyncFailureError(
                f"correlation peak-to-sidelobe ratio {psr_db:.2f} dB below "
                f"{min_psr_db} dB"
            )
    return lag


def roll_rails(rails: StokesRails, offset: int) -> StokesRails:
    """Undo a circular capture offset found by frame_sync."""
    if offset == 0:
        return rails
    mat = np.roll(rails.as_matrix(), -offset, axis=1)
    return StokesRails.from_matrix(mat, rails.sample_rate)


__all__ = [
    "AVERAGING_WINDOW",
    "StokesRails",
    "DerotationMatrix",
    "detect_stokes",
    "estimate_derotation",
    "apply_derotation",
    "jones_to_rails_matrix",
    "frame_sync",
    "roll_rails",
    "field_pair_to_stokes",
    "TRAINING_STOKES",
    "training_power_template",
]
