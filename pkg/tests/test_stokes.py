"""Tests for Stokes detection, de-rotation training, and frame sync."""

import numpy as np
import pytest

from svkk.channel import FiberParams, JonesRotation, apply_cd, apply_rotation, load_ase
from svkk.config import LinkConfig
from svkk.errors import DegenerateTrainingError, SyncFailureError
from svkk.signals import RealSignal, Signal
from svkk.stokes import (
    DerotationMatrix,
    StokesRails,
    apply_derotation,
    detect_stokes,
    estimate_derotation,
    field_pair_to_stokes,
    frame_sync,
    jones_to_rails_matrix,
    roll_rails,
)
from svkk.txdsp import FrameLayout, build_frame

RATE = 162e9


def rms(x):
    return float(np.sqrt(np.mean(np.abs(x) ** 2)))


def small_cfg(**kw):
    frame = kw.pop(
        "frame",
        FrameLayout(
            payload_symbols=2048,
            pilot_symbols=256,
            training_slot_symbols=256,
            guard_symbols=128,
        ),
    )
    return LinkConfig(frame=frame, seed=5, **kw)


def frame_rails(cfg, rot=None, fiber=None, osnr_db=None, noise_seed=0):
    frame = build_frame(cfg)
    x, y = frame.x, frame.y
    if fiber is not None:
        x, y = apply_cd(x, fiber), apply_cd(y, fiber)
    if rot is not None:
        x, y = apply_rotation(x, y, rot)
    if osnr_db is not None:
        x, y = load_ase(x, y, osnr_db, rng=noise_seed)
    return frame, detect_stokes(x, y)


class TestDetectStokes:
    def test_basis_states(self):
        assert np.allclose(field_pair_to_stokes(1, 0), [1, 0, 0, 0])
        assert np.allclose(field_pair_to_stokes(0, 1), [0, 1, 0, 0])
        assert np.allclose(field_pair_to_stokes(1, 1), [1, 1, 2, 0])
        assert np.allclose(field_pair_to_stokes(1, 1j), [1, 1, 0, 2])

    def test_constant_fields(self):
        x = Signal(np.ones(64), RATE)
        y = Signal(np.full(64, 1j), RATE)
        rails = detect_stokes(x, y)
        assert np.allclose(rails.p_x.samples, 1.0)
        assert np.allclose(rails.p_y.samples, 1.0)
        assert np.allclose(rails.s2.samples, 0.0)
        assert np.allclose(rails.s3.samples, 2.0)

    def test_pure_state_identity(self):
        rng = np.random.default_rng(0)
        x = Signal(rng.normal(size=512) + 1j * rng.normal(size=512), RATE)
        y = Signal(rng.normal(size=512) + 1j * rng.normal(size=512), RATE)
        rails = detect_stokes(x, y)
        lhs = rails.s2.samples**2 + rails.s3.samples**2
        rhs = 4.0 * rails.p_x.samples * rails.p_y.samples
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * np.max(rhs)


class TestEstimateDerotation:
    def test_identity_channel(self):
        cfg = small_cfg()
        _, rails = frame_rails(cfg)
        m = estimate_derotation(rails, cfg.frame, cfg.sps)
        assert np.max(np.abs(m.matrix - np.eye(4))) < 1e-9

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_known_rotation_inverted(self, seed):
        # Forward-simulate a random SOP, then check the estimated matrix maps
        # received payload rails back onto the transmitted ones.
        cfg = small_cfg()
        rot = JonesRotation.random(seed)
        frame, rails = frame_rails(cfg, rot=rot)
        m = estimate_derotation(rails, cfg.frame, cfg.sps)
        derotated = apply_derotation(rails, m)
        _, clean = frame_rails(cfg)
        a = cfg.frame.payload_start * cfg.sps
        b = cfg.frame.payload_end * cfg.sps
        got = derotated.as_matrix()[:, a:b]
        want = clean.as_matrix()[:, a:b]
        assert rms(got - want) < 1e-6 * rms(want)

    def test_matches_analytic_rail_matrix(self):
        cfg = small_cfg()
        rot = JonesRotation.random(11)
        _, rails = frame_rails(cfg, rot=rot)
        m = estimate_derotation(rails, cfg.frame, cfg.sps)
        analytic = jones_to_rails_matrix(rot.inverse)
        assert np.max(np.abs(m.matrix - analytic)) < 1e-9

    def test_tolerant_to_accumulated_cd(self):
        # flat training slots pass 80 km of dispersion unchanged away from
        # their edges, so the estimate barely moves
        cfg = small_cfg()
        rot = JonesRotation.random(4)
        fiber = FiberParams(length_km=80.0)
        _, rails_cd = frame_rails(cfg, rot=rot, fiber=fiber)
        _, rails_clean = frame_rails(cfg, rot=rot)
        m_cd = estimate_derotation(rails_cd, cfg.frame, cfg.sps)
        m_clean = estimate_derotation(rails_clean, cfg.frame, cfg.sps)
        assert np.max(np.abs(m_cd.matrix - m_clean.matrix)) < 1e-3

    def test_degenerate_training_rejected(self):
        n = FrameLayout(
            payload_symbols=64,
            pilot_symbols=16,
            training_slot_symbols=256,
            guard_symbols=64,
        )
        total = n.total_symbols * 6
        # all four slots identical -> rank-1 measured matrix
        ones = np.zeros(total)
        for k in range(4):
            a, b = n.slot_span(k)
            ones[a * 6 : b * 6] = 1.0
        rails = StokesRails(
            RealSignal(ones, RATE),
            RealSignal(ones, RATE),
            RealSignal(2 * ones, RATE),
            RealSignal(np.full(total, 1e-12), RATE),
        )
        with pytest.raises(DegenerateTrainingError):
            estimate_derotation(rails, n, 6)


class TestApplyDerotation:
    def test_identity(self):
        cfg = small_cfg()
        _, rails = frame_rails(cfg)
        out = apply_derotation(rails, DerotationMatrix.identity())
        assert np.array_equal(out.as_matrix(), rails.as_matrix())

    def test_inverse_composition(self):
        rng = np.random.default_rng(2)
        m = DerotationMatrix(np.eye(4) + 0.2 * rng.normal(size=(4, 4)))
        inv = DerotationMatrix(np.linalg.inv(m.matrix))
        cfg = small_cfg()
        _, rails = frame_rails(cfg)
        out = apply_derotation(apply_derotation(rails, m), inv)
        assert rms(out.as_matrix() - rails.as_matrix()) < 1e-9 * rms(rails.as_matrix())

    def test_serialization_round_trip(self):
        rng = np.random.default_rng(3)
        m = DerotationMatrix(np.eye(4) + 0.1 * rng.normal(size=(4, 4)))
        again = DerotationMatrix.from_row(m.to_row())
        assert np.array_equal(again.matrix, m.matrix)


class TestFrameSync:
    def test_zero_offset(self):
        cfg = small_cfg()
        _, rails = frame_rails(cfg)
        assert frame_sync(rails, cfg.frame, cfg.sps, cfg.cspr_db) == 0

    def test_circular_shift_recovered(self):
        cfg = small_cfg()
        _, rails = frame_rails(cfg)
        shifted = StokesRails.from_matrix(
            np.roll(rails.as_matrix(), 777, axis=1), rails.sample_rate
        )
        offset = frame_sync(shifted, cfg.frame, cfg.sps, cfg.cspr_db)
        assert offset == 777
        restored = roll_rails(shifted, offset)
        assert np.array_equal(restored.as_matrix(), rails.as_matrix())

    def test_under_noise_monte_carlo(self):
        # 100 seeded noise draws at OSNR 25 dB; at most one may miss
        cfg = small_cfg()
        frame = build_frame(cfg)
        hits = 0
        for trial in range(100):
            x, y = load_ase(frame.x, frame.y, 25.0, rng=1000 + trial)
            rails = detect_stokes(x, y)
            try:
                if frame_sync(rails, cfg.frame, cfg.sps, cfg.cspr_db) == 0:
                    hits += 1
            except SyncFailureError:
                pass
        assert hits >= 99

    def test_sync_failure_on_featureless_capture(self):
        layout = small_cfg().frame
        n = layout.total_symbols * 6
        flat = RealSignal(np.ones(n), RATE)
        rails = StokesRails(flat, flat, flat, flat)
        with pytest.raises(SyncFailureError):
            frame_sync(rails, layout, 6, 11.5)
