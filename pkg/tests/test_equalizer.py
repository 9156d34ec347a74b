"""Tests for the 4x4 real MIMO, the complex butterfly, and CD compensation."""

import numpy as np
import pytest

from svkk.channel import FiberParams, ImpairmentSet, apply_cd, apply_impairments
from svkk.equalizer import (
    EqualizerReport,
    RealMimoState,
    complex_butterfly_lms,
    embed_complex_taps,
    identity_taps,
    real_mimo_lms,
    static_cd_comp,
)
from svkk.errors import EqualizerDivergedError, InvalidInputError
from svkk.metrics import aligned_errors, evm_snr
from svkk.signals import Signal
from svkk.txdsp import get_format, map_bits, matched_filter, pulse_shape

BAUD = 27e9
FMT = get_format("16QAM")


def qam_stream(n_sym, seed):
    rng = np.random.default_rng(seed)
    bits = rng.integers(0, 2, 4 * n_sym, dtype=np.uint8)
    return map_bits(bits, FMT), bits


def symbol_signals(n_sym, seed):
    sx, bx = qam_stream(n_sym, seed)
    sy, by = qam_stream(n_sym, seed + 1)
    return (
        Signal(sx, BAUD),
        Signal(sy, BAUD),
        np.stack([sx, sy]),
        np.stack([bx, by]),
    )


def shaped_pair(n_sym, seed, sps=2, rolloff=0.1):
    sx, bx = qam_stream(n_sym, seed)
    sy, by = qam_stream(n_sym, seed + 1)
    return (
        pulse_shape(sx, sps, rolloff, BAUD),
        pulse_shape(sy, sps, rolloff, BAUD),
        np.stack([sx, sy]),
        np.stack([bx, by]),
    )


class TestRealMimo:
    def test_identity_passthrough(self):
        ex, ey, syms, _ = symbol_signals(2000, seed=0)
        state = RealMimoState(n_taps=11, step_size=0.0)
        report = real_mimo_lms(ex, ey, syms[:, :100], state, samples_per_symbol=1)
        assert np.max(np.abs(report.x_symbols - syms[0])) < 1e-12
        assert np.max(np.abs(report.y_symbols - syms[1])) < 1e-12

    def test_recovers_static_real_mixing(self):
        # a fixed well-conditioned 4x4 real mix of the rails must be inverted
        rng = np.random.default_rng(7)
        mix = np.eye(4) + 0.3 * rng.normal(size=(4, 4))
        n_sym = 50_000
        ex, ey, syms, _ = symbol_signals(n_sym, seed=1)
        rails = np.stack(
            [ex.samples.real, ex.samples.imag, ey.samples.real, ey.samples.imag]
        )
        mixed = mix @ rails
        mex = Signal(mixed[0] + 1j * mixed[1], BAUD)
        mey = Signal(mixed[2] + 1j * mixed[3], BAUD)
        state = RealMimoState(n_taps=11, step_size=1e-3)
        report = real_mimo_lms(
            mex, mey, syms, state, samples_per_symbol=1, constellation=FMT.constellation
        )
        tail = report.mse_trace[-2000:]
        assert float(np.mean(tail)) < 1e-3
        assert report.converged
        assert report.symbols_to_converge < n_sym

    def test_residual_cd_absorbed(self):
        # 80 km of dispersion at 27 Gbaud, no static compensation: 61 taps at
        # 2 samples/symbol converge to error-free decisions
        n_sym = 30_000
        ex, ey, syms, bits = shaped_pair(n_sym, seed=2)
        fiber = FiberParams(length_km=80.0)
        ex, ey = apply_cd(ex, fiber), apply_cd(ey, fiber)
        ex, ey = matched_filter(ex, 0.1, BAUD), matched_filter(ey, 0.1, BAUD)
        state = RealMimoState(n_taps=61, step_size=1e-3)
        report = real_mimo_lms(
            ex,
            ey,
            syms[:, :4096],
            state,
            samples_per_symbol=2,
            constellation=FMT.constellation,
            train_passes=2,
        )
        # skip the record edges: this test has no guard symbols, so the
        # equalizer window runs off the zero padding there
        lo, hi = 8192, n_sym - 256
        span = slice(lo, hi)
        ex_err, _ = aligned_errors(report.x_symbols[span], bits[0][4 * lo : 4 * hi], FMT)
        ey_err, _ = aligned_errors(report.y_symbols[span], bits[1][4 * lo : 4 * hi], FMT)
        assert ex_err == 0
        assert ey_err == 0

    def test_determinism(self):
        ex, ey, syms, _ = symbol_signals(5000, seed=3)
        runs = []
        for _ in range(2):
            state = RealMimoState(n_taps=11, step_size=1e-3)
            report = real_mimo_lms(ex, ey, syms[:, :2000], state, samples_per_symbol=1)
            runs.append((report.taps.copy(), report.x_symbols.copy()))
        assert np.array_equal(runs[0][0], runs[1][0])
        assert np.array_equal(runs[0][1], runs[1][1])

    def test_training_mse_monotone(self):
        rng = np.random.default_rng(11)
        mix = np.eye(4) + 0.25 * rng.normal(size=(4, 4))
        ex, ey, syms, _ = symbol_signals(20_000, seed=4)
        rails = np.stack(
            [ex.samples.real, ex.samples.imag, ey.samples.real, ey.samples.imag]
        )
        mixed = mix @ rails
        state = RealMimoState(n_taps=11, step_size=5e-4)
        report = real_mimo_lms(
            Signal(mixed[0] + 1j * mixed[1], BAUD),
            Signal(mixed[2] + 1j * mixed[3], BAUD),
            syms,
            state,
            samples_per_symbol=1,
        )
        windows = report.mse_trace.reshape(20, -1).mean(axis=1)
        assert np.all(np.diff(windows) <= 0.05 * windows[:-1] + 1e-12)

    def test_divergence_alarm(self):
        # a mixing channel makes the error nonzero; a wildly large step must
        # trip the tap-energy alarm instead of returning garbage
        rng = np.random.default_rng(5)
        mix = np.eye(4) + 0.3 * rng.normal(size=(4, 4))
        ex, ey, syms, _ = symbol_signals(20_000, seed=5)
        rails = np.stack(
            [ex.samples.real, ex.samples.imag, ey.samples.real, ey.samples.imag]
        )
        mixed = mix @ rails
        state = RealMimoState(n_taps=11, step_size=400.0)
        with pytest.raises(EqualizerDivergedError):
            real_mimo_lms(
                Signal(mixed[0] + 1j * mixed[1], BAUD),
                Signal(mixed[2] + 1j * mixed[3], BAUD),
                syms,
                state,
                samples_per_symbol=1,
            )

    def test_bad_inputs(self):
        ex, ey, syms, _ = symbol_signals(100, seed=6)
        with pytest.raises(InvalidInputError):
            RealMimoState(n_taps=10)
        with pytest.raises(InvalidInputError):
            real_mimo_lms(ex, ey, syms[:, :200], RealMimoState(n_taps=11))


class TestComplexButterfly:
    def test_identity_passthrough(self):
        ex, ey, syms, _ = symbol_signals(2000, seed=0)
        report = complex_butterfly_lms(
            ex, ey, syms[:, :100], n_taps=11, step_size=0.0, samples_per_symbol=1
        )
        assert np.max(np.abs(report.x_symbols - syms[0])) < 1e-12

    def test_parity_with_real_mimo_when_linear(self):
        # strictly linear channel at a noise-limited operating point: the two
        # structures land within 0.1 dB (noiseless, both floors are set by
        # their own misadjustment, which is not a like-for-like comparison)
        n_sym = 30_000
        ex, ey, syms, _ = shaped_pair(n_sym, seed=7)
        fiber = FiberParams(length_km=40.0)
        ex, ey = apply_cd(ex, fiber), apply_cd(ey, fiber)
        nrng = np.random.default_rng(100)
        sigma = np.sqrt(ex.power * 10 ** (-25 / 10) / 2)
        ex = Signal(
            ex.samples + sigma * (nrng.normal(size=len(ex)) + 1j * nrng.normal(size=len(ex))),
            ex.sample_rate,
        )
        ey = Signal(
            ey.samples + sigma * (nrng.normal(size=len(ey)) + 1j * nrng.normal(size=len(ey))),
            ey.sample_rate,
        )
        ex, ey = matched_filter(ex, 0.1, BAUD), matched_filter(ey, 0.1, BAUD)
        kwargs = dict(samples_per_symbol=2, constellation=FMT.constellation, train_passes=2)
        rep_r = real_mimo_lms(ex, ey, syms[:, :4096], RealMimoState(61, 1e-3), **kwargs)
        rep_c = complex_butterfly_lms(ex, ey, syms[:, :4096], 61, 1e-3, **kwargs)
        span = slice(8192, n_sym - 256)
        snr_r = evm_snr(rep_r.x_symbols[span], syms[0][span])
        snr_c = evm_snr(rep_c.x_symbols[span], syms[0][span])
        assert abs(snr_r - snr_c) < 0.1

    def test_real_beats_complex_under_iq_imbalance(self):
        # a conjugate-type impairment is invisible to the strictly linear
        # butterfly but correctable by the widely linear real structure
        n_sym = 30_000
        ex, ey, syms, _ = shaped_pair(n_sym, seed=8)
        imp = ImpairmentSet(iq_phase_deg=10.0)
        ex, ey = apply_impairments(ex, imp), apply_impairments(ey, imp)
        ex, ey = matched_filter(ex, 0.1, BAUD), matched_filter(ey, 0.1, BAUD)
        kwargs = dict(samples_per_symbol=2, constellation=FMT.constellation, train_passes=2)
        rep_r = real_mimo_lms(ex, ey, syms[:, :4096], RealMimoState(31, 1e-3), **kwargs)
        rep_c = complex_butterfly_lms(ex, ey, syms[:, :4096], 31, 1e-3, **kwargs)
        span = slice(8192, n_sym - 256)
        snr_r = evm_snr(rep_r.x_symbols[span], syms[0][span])
        snr_c = evm_snr(rep_c.x_symbols[span], syms[0][span])
        assert snr_r >= snr_c + 0.5

    def test_embedding_contains_complex_solutions(self):
        # run a short butterfly, embed its taps, and check the real filter
        # reproduces the complex outputs exactly
        ex, ey, syms, _ = shaped_pair(4000, seed=9)
        rep_c = complex_butterfly_lms(
            ex, ey, syms[:, :2000], 21, 1e-3, samples_per_symbol=2,
            constellation=FMT.constellation,
        )
        real_taps = embed_complex_taps(rep_c.taps)
        state = RealMimoState(n_taps=21, step_size=0.0, taps=real_taps)
        rep_r = real_mimo_lms(ex, ey, syms[:, :1], state, samples_per_symbol=2)
        rep_c2 = complex_butterfly_lms(
            ex, ey, syms[:, :1], 21, 0.0, samples_per_symbol=2, taps=rep_c.taps.copy()
        )
        assert np.max(np.abs(rep_r.x_symbols - rep_c2.x_symbols)) < 1e-12
        assert np.max(np.abs(rep_r.y_symbols - rep_c2.y_symbols)) < 1e-12


class TestStaticCdComp:
    def test_inverse_of_forward(self):
        ex, _, _, _ = shaped_pair(4000, seed=10)
        fiber = FiberParams(length_km=80.0)
        out = static_cd_comp(apply_cd(ex, fiber), fiber, "post_rx")
        assert np.max(np.abs(out.samples - ex.samples)) < 1e-9

    def test_zero_length_identity(self):
        ex, _, _, _ = shaped_pair(1000, seed=11)
        assert static_cd_comp(ex, FiberParams(length_km=0.0), "pre_tx") is ex

    def test_where_validated(self):
        ex, _, _, _ = shaped_pair(1000, seed=12)
        with pytest.raises(InvalidInputError):
            static_cd_comp(ex, FiberParams(), "midspan")


class TestReportExport:
    def test_taps_csv(self, tmp_path):
        ex, ey, syms, _ = symbol_signals(2000, seed=13)
        state = RealMimoState(n_taps=11, step_size=1e-3)
        report = real_mimo_lms(ex, ey, syms[:, :500], state, samples_per_symbol=1)
        path = tmp_path / "taps.csv"
        report.taps_csv(path)
        rows = path.read_text().strip().splitlines()
        assert rows[0].startswith("h11,h12")
        assert len(rows) == 1 + 11
        assert len(rows[1].split(",")) == 16
