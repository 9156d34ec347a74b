"""Adaptive post-reconstruction equalization.

Two structures over the same fractionally spaced input:

* a 4x4 real MIMO LMS operating on (Re Ex, Im Ex, Re Ey, Im Ey), able to
  correct widely linear impairments (IQ imbalance, skew, conjugation) and to
  absorb residual chromatic dispersion given enough taps;
* a conventional 2x2 complex butterfly LMS baseline, strictly linear.

Both are NLMS-normalized, train on pilots (optionally several passes, the
channel being static within a frame) and then run decision directed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np
from numba import njit

from .channel import FiberParams, apply_cd
from .errors import EqualizerDivergedError, InvalidInputError
from .signals import Signal

DIVERGENCE_ENERGY = 1e6
MSE_WINDOW = 500


@dataclass
class RealMimoState:
    """Tap grid and adaptation settings of the 4x4 real equalizer."""

    n_taps: int = 61
    step_size: float = 1e-3
    mode: str = "train"
    taps: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.n_taps < 1 or self.n_taps % 2 == 0:
            raise InvalidInputError("n_taps must be odd (center-referenced)")
        if self.step_size < 0:
            raise InvalidInputError("step_size must be >= 0")
        if self.taps is None:
            self.taps = identity_taps(4, self.n_taps)
        self.taps = np.ascontiguousarray(self.taps, dtype=np.float64)
        if self.taps.shape != (4, 4, self.n_taps):
            raise InvalidInputError(f"taps must be (4, 4, {self.n_taps})")


def identity_taps(n: int, n_taps: int) -> np.ndarray:
    taps = np.zeros((n, n, n_taps))
    taps[np.arange(n), np.arange(n), (n_taps - 1) // 2] = 1.0
    return taps


@dataclass
class EqualizerReport:
    """Symbol-rate outputs plus convergence diagnostics."""

    converged: bool
    final_mse: float
    symbols_to_converge: int
    x_symbols: np.ndarray = field(repr=False)
    y_symbols: np.ndarray = field(repr=False)
    mse_trace: np.ndarray = field(repr=False)
    taps: np.ndarray = field(repr=False)

    def taps_csv(self, path) -> None:
        """16 columns (output x input FIR) by n_taps rows."""
        flat = self.taps.reshape(-1, self.taps.shape[-1]).T
        if np.iscomplexobj(flat):
            cols = [f"h{i}{j}" for i in range(1, 3) for j in range(1, 3)]
            header = ",".join(
                f"{c}_{part}" for c in cols for part in ("re", "im")
            )
            data = np.column_stack([flat.real, flat.imag])
        else:
            header = ",".join(f"h{i}{j}" for i in range(1, 5) for j in range(1, 5))
            data = flat
        np.savetxt(path, data, delimiter=",", header=header, comments="")


@njit(cache=True)
def _real_mimo_kernel(v, taps, d_train, constellation, sps, mu, mu_dd, n_sym, train_passes, dd, update_payload):
    n_taps = taps.shape[2]
    k_train = d_train.shape[1]
    eps = 1e-12
    n_coeff = 4.0 * n_taps  # window sample count; normalizes mu per sample power
    # pilot-only passes, then one full recorded pass
    for _ in range(train_passes):
        for k in range(k_train):
            n0 = k * sps
            y0 = y1 = y2 = y3 = 0.0
            norm = eps
            for j in range(4):
                row = v[j]
                for t in range(n_taps):
                    s = row[n0 + t]
                    norm += s * s
                    y0 += taps[0, j, t] * s
                    y1 += taps[1, j, t] * s
                    y2 += taps[2, j, t] * s
                    y3 += taps[3, j, t] * s
            g = mu * n_coeff / norm
            e0 = (d_train[0, k] - y0) * g
            e1 = (d_train[1, k] - y1) * g
            e2 = (d_train[2, k] - y2) * g
            e3 = (d_train[3, k] - y3) * g
            for j in range(4):
                row = v[j]
                for t in range(n_taps):
                    s = row[n0 + t]
                    taps[0, j, t] += e0 * s
                    taps[1, j, t] += e1 * s
                    taps[2, j, t] += e2 * s
                    taps[3, j, t] += e3 * s
    out = np.zeros((4, n_sym))
    mse = np.zeros(n_sym)
    diverged_at = -1
    for k in range(n_sym):
        n0 = k * sps
        y0 = y1 = y2 = y3 = 0.0
        norm = eps
        for j in range(4):
            row = v[j]
            for t in range(n_taps):
                s = row[n0 + t]
                norm += s * s
                y0 += taps[0, j, t] * s
                y1 += taps[1, j, t] * s
                y2 += taps[2, j, t] * s
                y3 += taps[3, j, t] * s
        out[0, k] = y0
        out[1, k] = y1
        out[2, k] = y2
        out[3, k] = y3
        if k < k_train:
            d0, d1, d2, d3 = d_train[0, k], d_train[1, k], d_train[2, k], d_train[3, k]
            adapt = True
            step = mu
        elif dd:
            zx = complex(y0, y1)
            zy = complex(y2, y3)
            bi = 0
            bd = 1e300
            for c in range(constellation.size):
                dist = abs(zx - constellation[c])
                if dist < bd:
                    bd = dist
                    bi = c
            d0, d1 = constellation[bi].real, constellation[bi].imag
            bi = 0
            bd = 1e300
            for c in range(constellation.size):
                dist = abs(zy - constellation[c])
                if dist < bd:
                    bd = dist
                    bi = c
            d2, d3 = constellation[bi].real, constellation[bi].imag
            adapt = update_payload
            step = mu_dd
        else:
            d0, d1, d2, d3 = y0, y1, y2, y3
            adapt = False
            step = 0.0
        e0 = d0 - y0
        e1 = d1 - y1
        e2 = d2 - y2
        e3 = d3 - y3
        mse[k] = e0 * e0 + e1 * e1 + e2 * e2 + e3 * e3
        if adapt and step > 0.0:
            g = step * n_coeff / norm
            f0, f1, f2, f3 = e0 * g, e1 * g, e2 * g, e3 * g
            for j in range(4):
                row = v[j]
                for t in range(n_taps):
                    s = row[n0 + t]
                    taps[0, j, t] += f0 * s
                    taps[1, j, t] += f1 * s
                    taps[2, j, t] += f2 * s
                    taps[3, j, t] += f3 * s
        if k % 256 == 0:
            energy = 0.0
            for i in range(4):
                for j in range(4):
                    for t in range(n_taps):
                        energy += taps[i, j, t] * taps[i, j, t]
            if not (energy <= DIVERGENCE_ENERGY):  # catches NaN blowups too
                diverged_at = k
                break
    return out, mse, diverged_at


@njit(cache=True)
def _complex_butterfly_kernel(u, taps, d_train, constellation, sps, mu, mu_dd, n_sym, train_passes, dd, update_payload):
    n_taps = taps.shape[2]
    k_train = d_train.shape[1]
    eps = 1e-12
    n_coeff = 2.0 * n_taps
    for _ in range(train_passes):
        for k in range(k_train):
            n0 = k * sps
            y0 = 0.0 + 0.0j
            y1 = 0.0 + 0.0j
            norm = eps
            for j in range(2):
                row = u[j]
                for t in range(n_taps):
                    s = row[n0 + t]
                    norm += s.real * s.real + s.imag * s.imag
                    y0 += taps[0, j, t] * s
                    y1 += taps[1, j, t] * s
            g = mu * n_coeff / norm
            e0 = (d_train[0, k] - y0) * g
            e1 = (d_train[1, k] - y1) * g
            for j in range(2):
                row = u[j]
                for t in range(n_taps):
                    s = np.conj(row[n0 + t])
                    taps[0, j, t] += e0 * s
                    taps[1, j, t] += e1 * s
    out = np.zeros((2, n_sym), dtype=np.complex128)
    mse = np.zeros(n_sym)
    diverged_at = -1
    for k in range(n_sym):
        n0 = k * sps
        y0 = 0.0 + 0.0j
        y1 = 0.0 + 0.0j
        norm = eps
        for j in range(2):
            row = u[j]
            for t in range(n_taps):
                s = row[n0 + t]
                norm += s.real * s.real + s.imag * s.imag
                y0 += taps[0, j, t] * s
                y1 += taps[1, j, t] * s
        out[0, k] = y0
        out[1, k] = y1
        if k < k_train:
            d0, d1 = d_train[0, k], d_train[1, k]
            adapt = True
            step = mu
        elif dd:
            bi = 0
            bd = 1e300
            for c in range(constellation.size):
                dist = abs(y0 - constellation[c])
                if dist < bd:
                    bd = dist
                    bi = c
            d0 = constellation[bi]
            bi = 0
            bd = 1e300
            for c in range(constellation.size):
                dist = abs(y1 - constellation[c])
                if dist < bd:
                    bd = dist
                    bi = c
            d1 = constellation[bi]
            adapt = update_payload
            step = mu_dd
        else:
            d0, d1 = y0, y1
            adapt = False
            step = 0.0
        e0 = d0 - y0
        e1 = d1 - y1
        mse[k] = abs(e0) ** 2 + abs(e1) ** 2
        if adapt and step > 0.0:
            g = step * n_coeff / norm
            f0, f1 = e0 * g, e1 * g
            for j in range(2):
                row = u[j]
                for t in range(n_taps):
                    s = np.conj(row[n0 + t])
                    taps[0, j, t] += f0 * s
                    taps[1, j, t] += f1 * s
        if k % 256 == 0:
            energy = 0.0
            for i in range(2):
                for j in range(2):
                    for t in range(n_taps):
                        energy += abs(taps[i, j, t]) ** 2
            if not (energy <= DIVERGENCE_ENERGY):
                diverged_at = k
                break
    return out, mse, diverged_at


def _prepare(ex: Signal, ey: Signal, pilots: np.ndarray, sps: int, n_symbols):
    if len(ex) != len(ey) or ex.sample_rate != ey.sample_rate:
        raise InvalidInputError("polarizations must share length and rate")
    if sps < 1:
        raise InvalidInputError("samples_per_symbol must be >= 1")
    pilots = np.asarray(pilots, dtype=np.complex128)
    if pilots.ndim != 2 or pilots.shape[0] != 2:
        raise InvalidInputError("pilots must be a (2, K) complex array")
    n_sym = len(ex) // sps if n_symbols is None else int(n_symbols)
    if n_sym * sps > len(ex):
        raise InvalidInputError("n_symbols exceeds the input span")
    if pilots.shape[1] > n_sym:
        raise InvalidInputError("pilot span exceeds the input span")
    # Per-polarization complex alignment onto the pilots: the magnitude comes
    # from the waveform power over the pilot span (stable under dispersion,
    # which is all-pass), the phase from a least-squares fit at the pilot
    # instants.  A dispersed channel decorrelates those instants, so the fit
    # magnitude is useless there, but its phase is still the best single
    # rotation available; either way the center-tap-identity start lands at
    # the right scale and adaptation only learns the residual structure.
    gains = np.ones(2, dtype=np.complex128)
    k = pilots.shape[1]
    if k:
        for p, pol in enumerate((ex, ey)):
            p_wave = np.mean(np.abs(pol.samples[: k * sps]) ** 2)
            p_tgt = np.mean(np.abs(pilots[p]) ** 2)
            if p_wave == 0 or p_tgt == 0:
                continue
            corr = np.vdot(pol.samples[: k * sps : sps], pilots[p])
            phase = corr / abs(corr) if abs(corr) > 0 else 1.0
            gains[p] = phase * np.sqrt(p_tgt / p_wave)
    return pilots, n_sym, gains


def _pad_rails(rails: np.ndarray, center: int) -> np.ndarray:
    return np.pad(rails, ((0, 0), (center, center)))


def _report(out_x, out_y, mse, taps, diverged_at) -> EqualizerReport:
    if diverged_at >= 0:
        raise EqualizerDivergedError(diverged_at, float(np.sum(np.abs(taps) ** 2)))
    w = min(MSE_WINDOW, len(mse))
    final = float(np.mean(mse[-w:]))
    first = float(np.mean(mse[:w]))
    windows = [np.mean(chunk) for chunk in np.array_split(mse, max(len(mse) // w, 1))]
    sym_conv = len(mse)
    for idx, val in enumerate(windows):
        if val <= 2.0 * final:
            sym_conv = idx * w
            break
    converged = final < 0.5 * first or final < 1e-2
    return EqualizerReport(
        converged=bool(converged),
        final_mse=final,
        symbols_to_converge=int(sym_conv),
        x_symbols=out_x,
        y_symbols=out_y,
        mse_trace=mse,
        taps=taps,
    )


def real_mimo_lms(
    ex: Signal,
    ey: Signal,
    pilots: np.ndarray,
    state: Optional[RealMimoState] = None,
    samples_per_symbol: int = 2,
    constellation: Optional[np.ndarray] = None,
    train_passes: int = 1,
    decision_directed: bool = True,
    dd_step_scale: float = 0.125,
    n_symbols: Optional[int] = None,
) -> EqualizerReport:
    """Run the 4x4 real MIMO over one frame.

    The filter sees the stacked rail vector (Re Ex, Im Ex, Re Ey, Im Ey),
    producing symbol-spaced outputs; LMS error comes from `pilots` over the
    training span and from hard decisions afterwards.  Decision-directed
    updates gear-shift to `dd_step_scale` times the training step, keeping
    steady-state misadjustment small and structure independent.
    """
    state = state or RealMimoState()
    pilots, n_sym, gains = _prepare(ex, ey, pilots, samples_per_symbol, n_symbols)
    sx = gains[0] * ex.samples
    sy = gains[1] * ey.samples
    rails = np.ascontiguousarray(np.stack([sx.real, sx.imag, sy.real, sy.imag]))
    v = _pad_rails(rails, (state.n_taps - 1) // 2)
    d_train = np.ascontiguousarray(
        np.stack([pilots[0].real, pilots[0].imag, pilots[1].real, pilots[1].imag])
    )
    if constellation is None:
        constellation = np.unique(pilots.ravel())
    constellation = np.ascontiguousarray(constellation, dtype=np.complex128)
    out, mse, diverged_at = _real_mimo_kernel(
        v,
        state.taps,
        d_train,
        constellation,
        samples_per_symbol,
        state.step_size,
        state.step_size * dd_step_scale,
        n_sym,
        train_passes,
        decision_directed,
        decision_directed,
    )
    state.mode = "decision-directed" if decision_directed else "train"
    return _report(out[0] + 1j * out[1], out[2] + 1j * out[3], mse, state.taps, diverged_at)


def complex_butterfly_lms(
    ex: Signal,
    ey: Signal,
    pilots: np.ndarray,
    n_taps: int = 61,
    step_size: float = 1e-3,
    samples_per_symbol: int = 2,
    constellation: Optional[np.ndarray] = None,
    train_passes: int = 1,
    decision_directed: bool = True,
    taps: Optional[np.ndarray] = None,
    dd_step_scale: float = 0.125,
    n_symbols: Optional[int] = None,
) -> EqualizerReport:
    """Conventional 2x2 complex butterfly LMS (strictly linear baseline)."""
    if n_taps < 1 or n_taps % 2 == 0:
        raise InvalidInputError("n_taps must be odd (center-referenced)")
    pilots, n_sym, gains = _prepare(ex, ey, pilots, samples_per_symbol, n_symbols)
    if taps is None:
        taps = identity_taps(2, n_taps).astype(np.complex128)
    taps = np.ascontiguousarray(taps, dtype=np.complex128)
    if taps.shape != (2, 2, n_taps):
        raise InvalidInputError(f"taps must be (2, 2, {n_taps})")
    center = (n_taps - 1) // 2
    u = np.pad(
        np.stack([gains[0] * ex.samples, gains[1] * ey.samples]),
        ((0, 0), (center, center)),
    )
    if constellation is None:
        constellation = np.unique(pilots.ravel())
    constellation = np.ascontiguousarray(constellation, dtype=np.complex128)
    out, mse, diverged_at = _complex_butterfly_kernel(
        np.ascontiguousarray(u),
        taps,
        np.ascontiguousarray(pilots),
        constellation,
        samples_per_symbol,
        step_size,
        step_size * dd_step_scale,
        n_sym,
        train_passes,
        decision_directed,
        decision_directed,
    )
    return _report(out[0], out[1], mse, taps, diverged_at)


def embed_complex_taps(complex_taps: np.ndarray) -> np.ndarray:
    """Exact 4x4 real embedding of a 2x2 complex filter.

    Each complex tap a+ib becomes the rotation block [[a, -b], [b, a]], so
    the real structure strictly contains every complex butterfly solution.
    """
    complex_taps = np.asarray(complex_taps, dtype=np.complex128)
    if complex_taps.ndim != 3 or complex_taps.shape[:2] != (2, 2):
        raise InvalidInputError("expected (2, 2, n_taps) complex taps")
    n_taps = complex_taps.shape[2]
    real = np.zeros((4, 4, n_taps))
    a, b = complex_taps.real, complex_taps.imag
    for p in range(2):
        for q in range(2):
            real[2 * p, 2 * q] = a[p, q]
            real[2 * p, 2 * q + 1] = -b[p, q]
            real[2 * p + 1, 2 * q] = b[p, q]
            real[2 * p + 1, 2 * q + 1] = a[p, q]
    return real


def static_cd_comp(x: Signal, fiber: FiberParams, where: str = "post_rx") -> Signal:
    """Inverse-dispersion filter; `where` records whether it runs on the
    transmit baseband (pre carrier insertion) or the reconstructed field."""
    if where not in ("pre_tx", "post_rx"):
        raise InvalidInputError("where must be 'pre_tx' or 'post_rx'")
    return apply_cd(x, fiber, "inverse")


__all__ = [
    "RealMimoState",
    "EqualizerReport",
    "real_mimo_lms",
    "complex_butterfly_lms",
    "embed_complex_taps",
    "identity_taps",
    "static_cd_comp",
    "DIVERGENCE_ENERGY",
]
