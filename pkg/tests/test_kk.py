"""Tests for Kramers-Kronig field reconstruction and the min-phase monitor."""

import time

import numpy as np
import pytest

from svkk.errors import InvalidConfigError, InvalidInputError
from svkk.kk import KKConfig, kk_reconstruct, kk_reconstruct_full, min_phase_monitor
from svkk.signals import RealSignal, Signal, hilbert_imag, snap_to_grid
from svkk.txdsp import get_format, matched_filter, pulse_shape

BAUD, BETA = 27e9, 0.1


def make_record(cspr_db, sps=6, n_sym=4096, seed=1, guard_hz=4e9):
    """Shaped 16QAM plus an on-grid carrier; returns (power, truth, cfg)."""
    rng = np.random.default_rng(seed)
    fmt = get_format("16QAM")
    syms = fmt.constellation[rng.integers(0, 16, n_sym)]
    s = pulse_shape(syms, sps, BETA, BAUD)
    amp = np.sqrt(s.power * 10 ** (cspr_db / 10))
    f_c = snap_to_grid(BAUD * (1 + BETA) / 2 + guard_hz, len(s), s.sample_rate)
    n = np.arange(len(s))
    e = s.samples + amp * np.exp(2j * np.pi * f_c * n / s.sample_rate)
    power = RealSignal(np.abs(e) ** 2, s.sample_rate)
    truth = matched_filter(s, BETA, BAUD).samples[::sps]
    cfg = KKConfig(carrier_freq_hz=f_c, baud_hz=BAUD, rolloff=BETA)
    return power, truth, cfg, s, amp


def recon_evm_db(power, truth, cfg, sps):
    got = kk_reconstruct(power, cfg).samples[::sps]
    alpha = np.vdot(got, truth) / np.vdot(got, got)
    err = alpha * got - truth
    return 10 * np.log10(np.mean(np.abs(err) ** 2) / np.mean(np.abs(truth) ** 2))


class TestKkReconstruct:
    def test_constant_power_gives_zero(self):
        cfg = KKConfig(carrier_freq_hz=18.85e9, baud_hz=BAUD, rolloff=BETA)
        power = RealSignal(np.full(4096, 2.5), 162e9)
        out = kk_reconstruct(power, cfg)
        assert np.max(np.abs(out.samples)) < 1e-12

    def test_direct_field_oracle(self):
        # strictly minimum-phase record (max|s| = 0.3 A); the reconstruction
        # must match the directly known field well below -30 dB EVM
        power, truth, cfg, s, _ = make_record(cspr_db=0.0, seed=1)
        amp = np.max(np.abs(s.samples)) / 0.3
        n = np.arange(len(s))
        e = s.samples + amp * np.exp(2j * np.pi * cfg.carrier_freq_hz * n / s.sample_rate)
        power = RealSignal(np.abs(e) ** 2, s.sample_rate)
        t0 = time.monotonic()
        evm = recon_evm_db(power, truth, cfg, sps=6)
        assert time.monotonic() - t0 < 5.0
        assert evm < -30.0
        assert evm < -60.0  # measured ~-85 dB; keep headroom in the assert

    def test_low_cspr_degrades(self):
        # the mechanism behind the CSPR optimum: 0 dB CSPR violates the
        # minimum-phase condition and costs far more than 10 dB of EVM
        power_lo, truth, cfg, _, _ = make_record(cspr_db=0.0, seed=2)
        power_hi, _, _, _, _ = make_record(cspr_db=11.5, seed=2)
        evm_lo = recon_evm_db(power_lo, truth, cfg, sps=6)
        evm_hi = recon_evm_db(power_hi, truth, cfg, sps=6)
        assert evm_lo > evm_hi + 10.0

    def test_oversampling_monotone_improvement(self):
        # at a marginal base rate the nonlinear ops alias; internal
        # oversampling 1 -> 2 -> 4 must not increase the error
        power, truth, cfg, _, _ = make_record(cspr_db=11.5, sps=3, seed=3, guard_hz=2e9)
        evms = []
        for os in (1, 2, 4):
            c = KKConfig(
                carrier_freq_hz=cfg.carrier_freq_hz,
                baud_hz=BAUD,
                rolloff=BETA,
                internal_oversampling=os,
            )
            evms.append(recon_evm_db(power, truth, c, sps=3))
        assert evms[1] <= evms[0] + 0.2
        assert evms[2] <= evms[1] + 0.2
        assert evms[2] < evms[0]

    def test_filter_options(self):
        power, truth, cfg, _, _ = make_record(cspr_db=11.5, seed=4)
        for kind in ("brickwall", "none"):
            c = KKConfig(
                carrier_freq_hz=cfg.carrier_freq_hz,
                baud_hz=BAUD,
                rolloff=BETA,
                output_filter=kind,
            )
            out = kk_reconstruct(power, c)
            assert len(out) == len(power)

    def test_all_zero_rejected(self):
        cfg = KKConfig(carrier_freq_hz=18.85e9, baud_hz=BAUD, rolloff=BETA)
        with pytest.raises(InvalidInputError):
            kk_reconstruct(RealSignal(np.zeros(1024), 162e9), cfg)

    def test_clamp_diagnostic(self):
        cfg = KKConfig(carrier_freq_hz=18.85e9, baud_hz=BAUD, rolloff=BETA)
        p = np.full(4096, 1.0)
        p[100:110] = 0.0  # dropouts hit the log clamp
        _, diag = kk_reconstruct_full(RealSignal(p, 162e9), cfg)
        assert diag.clamped_samples == 10
        assert diag.clamped_fraction == pytest.approx(10 / 4096)

    def test_bad_config(self):
        with pytest.raises(InvalidConfigError):
            KKConfig(carrier_freq_hz=1e9, baud_hz=BAUD, rolloff=BETA, internal_oversampling=9)
        with pytest.raises(InvalidConfigError):
            KKConfig(carrier_freq_hz=1e9, baud_hz=BAUD, rolloff=BETA, output_filter="boxcar")


class TestPhaseRetrieval:
    def test_analytic_two_tone_case(self):
        # E = 1 + 0.5*exp(i*w*t) is minimum phase; the Hilbert-derived phase
        # must match the closed-form arg(E)
        n, fs = 1 << 14, 162e9
        k = n // 64
        t = np.arange(n)
        e = 1.0 + 0.5 * np.exp(2j * np.pi * k * t / n)
        log_p = 0.5 * np.log(np.abs(e) ** 2)
        phi = hilbert_imag(RealSignal(log_p, fs)).samples
        want = np.angle(e)
        assert np.sqrt(np.mean((phi - want) ** 2)) < 1e-3


class TestMinPhaseMonitor:
    def test_huge_carrier(self):
        sig = Signal(np.ones(128), 1e9)
        assert min_phase_monitor(sig, 1e12) == 0.0

    def test_zero_carrier(self):
        sig = Signal(np.ones(128), 1e9)
        assert min_phase_monitor(sig, 0.0) == 1.0

    def test_reference_operating_point(self):
        # 16QAM, rolloff 0.1, CSPR 11.5 dB: violations are rare
        _, _, _, s, amp = make_record(cspr_db=11.5, seed=5)
        assert min_phase_monitor(s, amp) < 0.01
