"""Tests for decisions, BER counting, EVM-SNR, and OSNR estimation."""

import numpy as np
import pytest

from svkk.channel import load_ase
from svkk.errors import EstimationUnavailableError, InvalidInputError
from svkk.metrics import (
    SNR_REPORT_CEILING_DB,
    aligned_errors,
    count_errors,
    decide_indices,
    dump_constellation,
    estimate_osnr,
    evm_snr,
    hard_decide,
    qam_ber_theory,
    wilson_interval,
)
from svkk.signals import Signal
from svkk.txdsp import get_format, map_bits, pulse_shape

ALL_FORMATS = ["QPSK", "8QAM", "16QAM", "32QAM", "64QAM"]


class TestHardDecide:
    @pytest.mark.parametrize("name", ALL_FORMATS)
    def test_clean_round_trip(self, name):
        fmt = get_format(name)
        rng = np.random.default_rng(0)
        bits = rng.integers(0, 2, fmt.bits_per_symbol * 2000, dtype=np.uint8)
        syms = map_bits(bits, fmt)
        errors, counted = count_errors(syms, bits, fmt)
        assert errors == 0
        assert counted == bits.size

    def test_midpoint_tie_goes_low(self):
        # midpoint of (1+1j) and (-1+1j) lands at exactly 1j/sqrt(10), a
        # bit-exact tie; the winner must be the lower constellation index
        fmt = get_format("16QAM")
        a = int(np.argmin(np.abs(fmt.constellation - (1 + 1j) / np.sqrt(10))))
        b = int(np.argmin(np.abs(fmt.constellation - (-1 + 1j) / np.sqrt(10))))
        mid = 0.5 * (fmt.constellation[a] + fmt.constellation[b])
        d2 = np.abs(mid - fmt.constellation) ** 2
        assert d2[a] == d2[b]  # genuinely tied in float
        idx = decide_indices(np.array([mid]), fmt)[0]
        assert idx == min(a, b)

    def test_awgn_tracks_gray_qam_theory(self):
        # High-count operating point: ~3e4 errors over 1e6 bits, so the 20%
        # relative check is statistically meaningful.
        fmt = get_format("16QAM")
        rng = np.random.default_rng(42)
        snr_db = 12.0
        n_sym = 250_000
        bits = rng.integers(0, 2, 4 * n_sym, dtype=np.uint8)
        syms = map_bits(bits, fmt)
        sigma = np.sqrt(10 ** (-snr_db / 10) / 2)
        noisy = syms + sigma * (rng.normal(size=n_sym) + 1j * rng.normal(size=n_sym))
        errors, counted = count_errors(noisy, bits, fmt)
        ber = errors / counted
        assert ber == pytest.approx(qam_ber_theory(snr_db, 16), rel=0.2)

    def test_ber_snr_curve_consistency(self):
        # measured (SNR, BER) pairs stay within 0.5 dB of the analytic curve
        fmt = get_format("16QAM")
        rng = np.random.default_rng(9)
        for snr_db in (11.0, 13.0, 15.0):
            n_sym = 200_000
            bits = rng.integers(0, 2, 4 * n_sym, dtype=np.uint8)
            syms = map_bits(bits, fmt)
            sigma = np.sqrt(10 ** (-snr_db / 10) / 2)
            noisy = syms + sigma * (
                rng.normal(size=n_sym) + 1j * rng.normal(size=n_sym)
            )
            errors, counted = count_errors(noisy, bits, fmt)
            ber = errors / counted
            snr_meas = evm_snr(noisy, syms)
            grid = np.linspace(snr_meas - 1.0, snr_meas + 1.0, 401)
            curve = np.array([qam_ber_theory(s, 16) for s in grid])
            snr_at_ber = grid[np.argmin(np.abs(curve - ber))]
            assert abs(snr_at_ber - snr_meas) <= 0.5

    def test_scale_invariance_with_aligned_reference(self):
        # common complex scaling of symbols and reference cancels exactly in
        # the aligned decision path
        fmt = get_format("16QAM")
        rng = np.random.default_rng(3)
        bits = rng.integers(0, 2, 4 * 5000, dtype=np.uint8)
        syms = map_bits(bits, fmt)
        noisy = syms + 0.15 * (rng.normal(size=5000) + 1j * rng.normal(size=5000))
        e0, _ = aligned_errors(noisy, bits, fmt)
        e1, _ = aligned_errors(1.7 * np.exp(0.3j) * noisy, bits, fmt)
        assert e1 == e0
        assert e0 > 0  # the draw actually exercises decisions near boundaries


class TestEvmSnr:
    def test_equal_inputs_hit_ceiling(self):
        fmt = get_format("16QAM")
        syms = fmt.constellation[np.arange(16)]
        assert evm_snr(syms, syms) == SNR_REPORT_CEILING_DB

    def test_known_noise_variance(self):
        rng = np.random.default_rng(5)
        n = 100_000
        ref = np.exp(2j * np.pi * rng.random(n))  # unit power
        sigma2 = 10 ** (-17.0 / 10.0)
        noisy = ref + np.sqrt(sigma2 / 2) * (
            rng.normal(size=n) + 1j * rng.normal(size=n)
        )
        assert evm_snr(noisy, ref) == pytest.approx(17.0, abs=0.1)

    def test_global_phase_invariance(self):
        rng = np.random.default_rng(6)
        fmt = get_format("16QAM")
        ref = fmt.constellation[rng.integers(0, 16, 10_000)]
        noisy = ref + 0.05 * (rng.normal(size=10_000) + 1j * rng.normal(size=10_000))
        base = evm_snr(noisy, ref)
        rotated = evm_snr(noisy * np.exp(0.7j), ref)
        assert rotated == pytest.approx(base, abs=1e-9)

    def test_zero_reference_rejected(self):
        with pytest.raises(InvalidInputError):
            evm_snr(np.ones(4, dtype=complex), np.zeros(4, dtype=complex))


class TestEstimateOsnr:
    @staticmethod
    def shaped_pair(seed=0, n_sym=1 << 15):
        rng = np.random.default_rng(seed)
        fmt = get_format("16QAM")
        x = pulse_shape(fmt.constellation[rng.integers(0, 16, n_sym)], 6, 0.1, 27e9)
        y = pulse_shape(fmt.constellation[rng.integers(0, 16, n_sym)], 6, 0.1, 27e9)
        return x, y

    def test_closes_loop_with_loader(self):
        x, y = self.shaped_pair()
        nx, ny = load_ase(x, y, 30.0, rng=1)
        est = estimate_osnr(nx, ny, (-15e9, 15e9))
        assert est == pytest.approx(30.0, abs=0.3)

    def test_noiseless_hits_ceiling(self):
        x, y = self.shaped_pair(seed=1)
        assert estimate_osnr(x, y, (-15e9, 15e9)) >= SNR_REPORT_CEILING_DB - 1e-9

    def test_noise_density_doubling(self):
        x, y = self.shaped_pair(seed=2)
        a = estimate_osnr(*load_ase(x, y, 28.0, rng=3), (-15e9, 15e9))
        b = estimate_osnr(*load_ase(x, y, 25.0, rng=3), (-15e9, 15e9))
        assert a - b == pytest.approx(3.0, abs=0.2)

    def test_no_guard_region_rejected(self):
        x, y = self.shaped_pair(seed=3)
        with pytest.raises(EstimationUnavailableError):
            estimate_osnr(x, y, (-x.sample_rate, x.sample_rate))


class TestWilson:
    def test_basic_properties(self):
        lo, hi = wilson_interval(10, 1000)
        assert 0.0 < lo < 0.01 < hi < 0.03
        lo0, hi0 = wilson_interval(0, 1000)
        assert lo0 == 0.0 and hi0 > 0.0

    def test_theory_formula_sanity(self):
        # 16QAM at 20 dB is deep in the waterfall
        assert qam_ber_theory(20.0, 16) < 1e-5
        assert 0.01 < qam_ber_theory(12.0, 16) < 0.05


class TestConstellationDump:
    def test_csv_round_trip(self, tmp_path):
        fmt = get_format("QPSK")
        rng = np.random.default_rng(0)
        syms = fmt.constellation[rng.integers(0, 4, 50)]
        path = tmp_path / "const.csv"
        dump_constellation(path, syms, syms * 1j, fmt)
        rows = path.read_text().strip().splitlines()
        assert rows[0] == "re,im,pol,decided_index"
        assert len(rows) == 1 + 100
        first = rows[1].split(",")
        assert first[2] == "x"
        assert float(first[0]) == pytest.approx(syms[0].real)
