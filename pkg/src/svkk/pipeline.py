"""End-to-end link execution and parameter sweeps.

One frame travels: transmit frame assembly (optional dispersion
pre-compensation), transmitter converter impairments, fiber dispersion, SOP
rotation, ASE loading, Stokes detection, receiver rail digitization, frame
sync, de-rotation, per-rail Kramers-Kronig reconstruction (on the carrier-on
span: pilots, payload and tail guard), optional dispersion
post-compensation, resampling to the equalizer rate, adaptive MIMO, and bit
decisions against the known payload.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .channel import (
    FiberParams,
    JonesRotation,
    apply_cd,
    apply_impairments,
    apply_rail_impairments,
    apply_rotation,
    cd_transfer,
    load_ase,
)
from .config import LinkConfig, SweepSpec, config_hash
from .equalizer import RealMimoState, complex_butterfly_lms, real_mimo_lms
from .errors import PipelineError, SvkkError, SyncFailureError
from .kk import KKConfig, kk_reconstruct_full, min_phase_monitor
from .metrics import LinkResult, aligned_errors, evm_snr
from .signals import RealSignal, Signal, resample
from .stokes import (
    DerotationMatrix,
    StokesRails,
    apply_derotation,
    detect_stokes,
    estimate_derotation,
    frame_sync,
    roll_rails,
)
from .txdsp import DualPolFrame, build_frame, get_format


@dataclass(frozen=True)
class LinkDiagnostics:
    min_phase_violation_frac: float
    derot_cond: float
    converged: bool
    sync_offset: int
    pilot_lag_symbols: int
    kk_clamped_frac: float


@dataclass(frozen=True)
class RunOutput:
    result: LinkResult
    diagnostics: LinkDiagnostics
    derotation: DerotationMatrix
    equalizer_report: Optional[object] = field(default=None, repr=False)
    x_payload: Optional[np.ndarray] = field(default=None, repr=False)
    y_payload: Optional[np.ndarray] = field(default=None, repr=False)


@contextmanager
def _stage(name: str):
    try:
        yield
    except SvkkError as err:
        raise PipelineError(f"stage {name!r}: {err}") from err


def resolve_rotation(spec) -> JonesRotation:
    if spec.kind == "identity":
        return JonesRotation.identity()
    if spec.kind == "given":
        return JonesRotation.from_angles(spec.theta, spec.phi)
    return JonesRotation.random(spec.seed)


def _tx_min_phase_fraction(frame: DualPolFrame) -> float:
    a = frame.layout.payload_start * frame.sps
    b = frame.layout.payload_end * frame.sps
    n = np.arange(a, b)
    wave = frame.carrier_amp * np.exp(
        2j * np.pi * frame.carrier_freq_hz * n / frame.sample_rate
    )
    fracs = []
    for pol in (frame.x, frame.y):
        bb = Signal(pol.samples[a:b] - wave, frame.sample_rate)
        fracs.append(min_phase_monitor(bb, frame.carrier_amp))
    return float(max(fracs))


def run_link(
    cfg: LinkConfig,
    keep_symbols: bool = False,
    derotation_override: Optional[DerotationMatrix] = None,
) -> RunOutput:
    """Execute one seeded end-to-end run.

    `derotation_override` substitutes the training-based estimate (used by
    validation experiments that compare against the analytic rail matrix).
    """
    fmt = get_format(cfg.modulation)
    fiber: FiberParams = cfg.fiber

    with _stage("transmit"):
        precomp = cd_transfer(fiber, "inverse") if (
            cfg.cd_comp == "pre" and fiber.length_km > 0
        ) else None
        frame = build_frame(cfg, precomp_transfer=precomp)
        min_phase_frac = _tx_min_phase_fraction(frame)
        x, y = frame.x, frame.y
        if not cfg.tx_impairments.all_off:
            x = apply_impairments(x, cfg.tx_impairments)
            y = apply_impairments(y, cfg.tx_impairments)

    with _stage("channel"):
        if fiber.length_km > 0:
            x, y = apply_cd(x, fiber), apply_cd(y, fiber)
        rotation = resolve_rotation(cfg.rotation)
        x, y = apply_rotation(x, y, rotation)
        noise_rng = np.random.default_rng(
            np.random.SeedSequence(entropy=(int(cfg.seed), 0xA5E))
        )
        x, y = load_ase(x, y, cfg.osnr_db, noise_rng)

    with _stage("stokes-receiver"):
        rails = detect_stokes(x, y)
        if not cfg.rx_impairments.all_off:
            rails = StokesRails(
                apply_rail_impairments(rails.p_x, cfg.rx_impairments),
                apply_rail_impairments(rails.p_y, cfg.rx_impairments),
                apply_rail_impairments(rails.s2, cfg.rx_impairments),
                apply_rail_impairments(rails.s3, cfg.rx_impairments),
            )
        offset = frame_sync(rails, cfg.frame, cfg.sps, cfg.cspr_db)
        rails = roll_rails(rails, offset)

    with _stage("derotation"):
        if derotation_override is not None:
            derot = derotation_override
            rails = apply_derotation(rails, derot)
            derot_cond = derot.condition_number
        elif cfg.skip_derotation:
            derot = DerotationMatrix.identity()
            derot_cond = 1.0
        else:
            derot = estimate_derotation(rails, cfg.frame, cfg.sps)
            derot_cond = derot.condition_number
            rails = apply_derotation(rails, derot)

    with _stage("kk-reconstruction"):
        slice_start = cfg.frame.pilot_start * cfg.sps
        fs = frame.sample_rate
        kk_cfg = KKConfig(
            carrier_freq_hz=frame.carrier_freq_hz,
            baud_hz=cfg.baud_hz,
            rolloff=cfg.rolloff,
            internal_oversampling=cfg.kk_oversampling,
            output_filter=cfg.kk_filter,
            rrc_span=cfg.rrc_span,
        )
        fields = []
        clamped = 0.0
        for rail in (rails.p_x, rails.p_y):
            power = RealSignal(rail.samples[slice_start:], fs)
            sig, diag = kk_reconstruct_full(power, kk_cfg)
            clamped = max(clamped, diag.clamped_fraction)
            fields.append(sig)
        ex, ey = fields

    with _stage("cd-compensation"):
        if cfg.cd_comp == "post" and fiber.length_km > 0:
            ex = apply_cd(ex, fiber, "inverse")
            ey = apply_cd(ey, fiber, "inverse")

    with _stage("equalizer"):
        eq = cfg.equalizer
        if eq.samples_per_symbol != cfg.sps:
            ex = resample(ex, cfg.eq_rate)
            ey = resample(ey, cfg.eq_rate)
        pilots = frame.pilot_syms
        pilot_lag = _pilot_lag(ex, ey, pilots, eq.samples_per_symbol)
        if pilot_lag:
            shift = -pilot_lag * eq.samples_per_symbol
            ex = ex.with_samples(np.roll(ex.samples, shift))
            ey = ey.with_samples(np.roll(ey.samples, shift))
        n_eq_symbols = cfg.frame.pilot_symbols + cfg.frame.payload_symbols
        common = dict(
            samples_per_symbol=eq.samples_per_symbol,
            constellation=fmt.constellation,
            train_passes=eq.train_passes,
            decision_directed=eq.dd_after_training,
            n_symbols=n_eq_symbols,
        )
        if eq.kind == "real_mimo":
            state = RealMimoState(n_taps=eq.n_taps, step_size=eq.step_size)
            report = real_mimo_lms(ex, ey, pilots, state, **common)
        else:
            report = complex_butterfly_lms(
                ex, ey, pilots, n_taps=eq.n_taps, step_size=eq.step_size, **common
            )

    with _stage("metrics"):
        n_pilot = cfg.frame.pilot_symbols
        n_payload = cfg.frame.payload_symbols
        span = slice(n_pilot, n_pilot + n_payload)
        out_x = report.x_symbols[span]
        out_y = report.y_symbols[span]
        err_x, bits_x = aligned_errors(out_x, frame.payload_bits[0], fmt)
        err_y, bits_y = aligned_errors(out_y, frame.payload_bits[1], fmt)
        snr_x = evm_snr(out_x, frame.payload_syms[0])
        snr_y = evm_snr(out_y, frame.payload_syms[1])
        err_pooled = np.concatenate(
            [
                _aligned_error_vector(out_x, frame.payload_syms[0]),
                _aligned_error_vector(out_y, frame.payload_syms[1]),
            ]
        )
        p_ref = np.mean(np.abs(np.concatenate(frame.payload_syms)) ** 2)
        snr_total = float(
            min(-10.0 * np.log10(np.mean(err_pooled) / p_ref), 60.0)
        )
        result = LinkResult(
            ber=(err_x + err_y) / (bits_x + bits_y),
            snr_db=snr_total,
            bits_counted=bits_x + bits_y,
            errors_counted=err_x + err_y,
            ber_x=err_x / bits_x,
            ber_y=err_y / bits_y,
            snr_x_db=snr_x,
            snr_y_db=snr_y,
        )

    diagnostics = LinkDiagnostics(
        min_phase_violation_frac=min_phase_frac,
        derot_cond=derot_cond,
        converged=report.converged,
        sync_offset=offset,
        pilot_lag_symbols=pilot_lag,
        kk_clamped_frac=clamped,
    )
    return RunOutput(
        result=result,
        diagnostics=diagnostics,
        derotation=derot,
        equalizer_report=report if keep_symbols else None,
        x_payload=out_x if keep_symbols else None,
        y_payload=out_y if keep_symbols else None,
    )


def _aligned_error_vector(symbols: np.ndarray, reference: np.ndarray) -> np.ndarray:
    alpha = np.vdot(symbols, reference) / np.vdot(symbols, symbols)
    return np.abs(alpha * symbols - reference) ** 2


def _pilot_lag(ex: Signal, ey: Signal, pilots: np.ndarray, sps: int) -> int:
    """Residual integer-symbol misalignment from a pilot cross-correlation.

    Under uncompensated dispersion the correlation profile is the channel
    response, broad and flat, so the estimate is its energy centroid around
    the argmax rather than the argmax itself.
    """
    n_sym = len(ex) // sps
    acc = np.zeros(n_sym)
    for sig, p in ((ex, pilots[0]), (ey, pilots[1])):
        at_sym = sig.samples[: n_sym * sps : sps]
        padded = np.zeros(n_sym, dtype=np.complex128)
        padded[: p.size] = p
        xc = np.fft.ifft(np.fft.fft(at_sym) * np.conj(np.fft.fft(padded)))
        acc += np.abs(xc) ** 2
    k = int(np.argmax(acc))
    half = 64
    rel = np.arange(-half, half + 1)
    w = acc[(k + rel) % n_sym]
    # centroid over the part that stands clear of the correlation floor,
    # otherwise the flat pseudo-random mass drags the estimate around
    floor = float(np.median(acc))
    w = np.where(w > floor + 0.05 * (acc[k] - floor), w - floor, 0.0)
    k_ref = k + int(round(float(np.sum(rel * w) / np.sum(w))))
    lag = k_ref if k_ref <= n_sym // 2 else k_ref - n_sym
    if abs(lag) > n_sym // 4:
        raise SyncFailureError(f"pilot alignment found implausible lag {lag} symbols")
    return lag


SWEEP_COLUMNS = (
    "config_hash",
    "point",
    "trial",
    "ber",
    "snr_db",
    "errors",
    "bits",
    "min_phase_violation_frac",
    "derot_cond",
    "converged",
)


def derive_seed(base_seed: int, point_index: int, trial: int) -> int:
    """Deterministic per-run seed from (base seed, point, trial)."""
    seq = np.random.SeedSequence(entropy=(int(base_seed), point_index, trial))
    return int(seq.generate_state(1, dtype=np.uint64)[0] % (2**63))


def sweep_run_configs(spec: SweepSpec) -> List[Tuple[int, int, dict, LinkConfig]]:
    """All (point_index, trial, point_values, config) tuples of a sweep."""
    out = []
    for p_idx, point in enumerate(spec.points):
        for trial in range(spec.trials):
            cfg = spec.base.replace(
                **point, seed=derive_seed(spec.base.seed, p_idx, trial)
            )
            out.append((p_idx, trial, point, cfg))
    return out


def _format_value(value) -> str:
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _row_for(p_idx: int, trial: int, point: dict, cfg: LinkConfig) -> dict:
    out = run_link(cfg)
    row = {
        "config_hash": config_hash(cfg),
        "point": p_idx,
        "trial": trial,
        "ber": out.result.ber,
        "snr_db": out.result.snr_db,
        "errors": out.result.errors_counted,
        "bits": out.result.bits_counted,
        "min_phase_violation_frac": out.diagnostics.min_phase_violation_frac,
        "derot_cond": out.diagnostics.derot_cond,
        "converged": out.diagnostics.converged,
    }
    for name, value in point.items():
        row[name] = value
    return row


def _worker(args):
    return _row_for(*args)


def _run_rows(runs, axis_names, output: str, jobs: int, log) -> List[dict]:
    """Execute (point, trial, values, config) runs into a sorted CSV.

    Existing rows (matched by config hash) are kept and not re-run, so an
    interrupted sweep resumes.  Rows are written sorted by (point, trial);
    every run is independently seeded, so results do not depend on the
    execution order or the worker count.
    """
    columns = list(SWEEP_COLUMNS) + list(axis_names)
    existing = {}
    if output and os.path.exists(output):
        with open(output) as fh:
            for row in csv.DictReader(fh):
                existing[row["config_hash"]] = row
    todo = []
    rows = []
    for p_idx, trial, point, cfg in runs:
        digest = config_hash(cfg)
        if digest in existing:
            rows.append(existing[digest])
        else:
            todo.append((p_idx, trial, point, cfg))
    if log and existing:
        log(f"resuming: {len(rows)} rows present, {len(todo)} to run")
    if todo:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                fresh = list(pool.map(_worker, todo))
        else:
            fresh = []
            for args in todo:
                fresh.append(_worker(args))
                if log:
                    log(
                        f"point {args[0]} trial {args[1]}: "
                        f"ber={fresh[-1]['ber']:.3e} snr={fresh[-1]['snr_db']:.2f} dB"
                    )
        rows.extend({k: _format_value(v) for k, v in row.items()} for row in fresh)
    rows.sort(key=lambda r: (int(r["point"]), int(r["trial"])))
    if output:
        with open(output, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=columns)
            writer.writeheader()
            writer.writerows(rows)
    return rows


def run_sweep(spec: SweepSpec, jobs: int = 1, log=None) -> List[dict]:
    """Run the Cartesian sweep, write its CSV, return all rows."""
    axis_names = [name for name, _ in spec.axes]
    return _run_rows(sweep_run_configs(spec), axis_names, spec.output, jobs, log)


__all__ = [
    "LinkDiagnostics",
    "RunOutput",
    "run_link",
    "run_sweep",
    "derive_seed",
    "sweep_run_configs",
    "resolve_rotation",
    "SWEEP_COLUMNS",
]
