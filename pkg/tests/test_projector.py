import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import polarproj as pp
from polarproj.projector import BACK_POLARIZER, CHANNEL_MODES


@pytest.fixture
def projector():
    return pp.ProjectorModel(height=4, width=4, i0_per_channel=(1.0, 1.0, 1.0))


class TestValueToAolp:
    def test_endpoints(self, projector):
        assert pp.value_to_aolp(projector, 0) == pytest.approx(3 * np.pi / 4)
        assert pp.value_to_aolp(projector, 255) == pytest.approx(np.pi / 4)

    def test_midpoint_closed_form(self, projector):
        want = 3 * np.pi / 4 - (np.pi / 2 - np.arccos(np.sqrt((128 / 255) ** 2.2)))
        got = pp.value_to_aolp(projector, 128)
        assert got == pytest.approx(want, rel=1e-12)
        assert got == pytest.approx(1.8685691600010372, rel=1e-12)

    def test_strictly_monotone_decreasing(self, projector):
        values = np.arange(256)
        aolp = np.asarray([pp.value_to_aolp(projector, v) for v in values])
        assert (np.diff(aolp) < 0).all()
        assert aolp.min() == pytest.approx(np.pi / 4)
        assert aolp.max() == pytest.approx(3 * np.pi / 4)

    def test_out_of_range_rejected(self, projector):
        with pytest.raises(ValueError):
            pp.value_to_aolp(projector, 256)
        with pytest.raises(ValueError):
            pp.value_to_aolp(projector, -1)

    @given(st.integers(0, 255))
    @settings(deadline=None)
    def test_range_always_achievable(self, v):
        projector = pp.ProjectorModel(height=2, width=2, i0_per_channel=(1.0,))
        aolp = pp.value_to_aolp(projector, v)
        assert BACK_POLARIZER - np.pi / 2 - 1e-12 <= aolp <= BACK_POLARIZER + 1e-12


class TestProjectPattern:
    def test_constant_255(self, projector):
        pattern = pp.ProjectionPattern.constant(255, 4, 4)
        out = pp.project_pattern(projector, pattern)
        assert np.allclose(out.s0, 1.0)
        assert np.allclose(out.s1, 0.0, atol=1e-12)
        assert np.allclose(out.s2, 1.0)

    def test_constant_0(self, projector):
        out = pp.project_pattern(projector, pp.ProjectionPattern.constant(0, 4, 4))
        assert np.allclose(out.s1, 0.0, atol=1e-12)
        assert np.allclose(out.s2, -1.0)

    def test_checkerboard_s0_constant(self, projector):
        values = np.zeros((4, 4, 3), dtype=np.uint8)
        values[::2, 1::2] = 255
        values[1::2, ::2] = 255
        out = pp.project_pattern(projector, pp.ProjectionPattern(values))
        assert np.allclose(out.s0, 1.0)

    def test_fully_polarized_everywhere(self, projector, rng):
        values = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        out = pp.project_pattern(projector, pp.ProjectionPattern(values))
        cues = pp.cues_from_stokes(out)
        assert np.allclose(cues.rho, 1.0)

    def test_s0_pattern_independent(self, projector, rng):
        a = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        b = rng.integers(0, 256, (4, 4, 3), dtype=np.uint8)
        out_a = pp.project_pattern(projector, pp.ProjectionPattern(a))
        out_b = pp.project_pattern(projector, pp.ProjectionPattern(b))
        assert np.array_equal(out_a.s0, out_b.s0)

    def test_resolution_mismatch_rejected(self, projector):
        with pytest.raises(ValueError):
            pp.project_pattern(projector, pp.ProjectionPattern.constant(0, 2, 2))

    def test_depolarization_option(self):
        projector = pp.ProjectorModel(
            height=2, width=2, i0_per_channel=(1.0,), depolarization=0.2
        )
        out = pp.project_pattern(projector, pp.ProjectionPattern.constant(255, 2, 2, 1))
        cues = pp.cues_from_stokes(out)
        assert np.allclose(cues.rho, 0.8)


class TestChannelModes:
    def test_neutral_all_diagonal(self, projector):
        out = pp.channel_polarized_projection(projector, "neutral")
        assert np.allclose(out.s0, 1.0)
        assert np.allclose(out.s2, 1.0)

    def test_red_mode_split(self, projector):
        out = pp.channel_polarized_projection(projector, "red")
        assert np.allclose(out.s2[:, :, 0], 1.0)
        assert np.allclose(out.s2[:, :, 1], -1.0)
        assert np.allclose(out.s2[:, :, 2], -1.0)

    @pytest.mark.parametrize("mode", sorted(CHANNEL_MODES))
    def test_all_modes_white_to_the_eye(self, projector, mode):
        out = pp.channel_polarized_projection(projector, mode)
        assert np.allclose(out.s0, out.s0[..., :1])

    def test_unknown_mode_rejected(self, projector):
        with pytest.raises(ValueError):
            pp.channel_polarized_projection(projector, "ultraviolet")

    def test_monochrome_projector_rejected(self):
        projector = pp.ProjectorModel(height=2, width=2, i0_per_channel=(1.0,))
        with pytest.raises(ValueError):
            pp.channel_polarized_projection(projector, "red")


class TestPattern:
    def test_value_range_enforced(self):
        with pytest.raises(ValueError):
            pp.ProjectionPattern(np.full((2, 2, 1), 1.5))

    def test_save_load_round_trip(self, tmp_path, rng):
        values = rng.integers(0, 256, (4, 6, 3), dtype=np.uint8)
        pattern = pp.ProjectionPattern(values)
        path = tmp_path / "pattern.ppat"
        pattern.save(path)
        assert np.array_equal(pp.ProjectionPattern.load(path).values, values)

    def test_constant_rgb(self):
        pattern = pp.ProjectionPattern.constant_rgb((255, 0, 128), 2, 2)
        assert pattern.values.shape == (2, 2, 3)
        assert (pattern.values[..., 0] == 255).all()
        assert (pattern.values[..., 2] == 128).all()
