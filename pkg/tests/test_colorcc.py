import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

import polarproj as pp
from polarproj.colorcc import WHITE, IlluminantEstimate, angular_error_degrees, wb_gains
from polarproj.projector import CHANNEL_MODES, ProjectionPattern
from polarproj.stokes import StokesImage, PolarCuesImage, stokes_from_cues


def polarized_image(rho_rgb, s0_rgb=(1.0, 1.0, 1.0), h=8, w=8, aolp=0.3):
    s0 = np.broadcast_to(np.asarray(s0_rgb, dtype=float), (h, w, 3)).copy()
    cues = PolarCuesImage(
        np.broadcast_to(np.asarray(rho_rgb, dtype=float), (h, w, 3)).copy(),
        np.full((h, w, 3), aolp),
    )
    return stokes_from_cues(s0, cues)


class TestAngularError:
    def test_identical_is_zero(self):
        assert angular_error_degrees([1, 2, 3], [2, 4, 6]) == pytest.approx(0.0)

    def test_known_value(self):
        # white against a perfectly cyan estimate
        got = angular_error_degrees([1, 1, 1], [0, 1, 1])
        assert got == pytest.approx(np.degrees(np.arccos(2 / np.sqrt(6))), rel=1e-12)
        assert got == pytest.approx(35.26438968, rel=1e-9)

    def test_symmetric(self):
        a, b = [0.2, 0.5, 0.9], [0.8, 0.1, 0.3]
        assert angular_error_degrees(a, b) == pytest.approx(
            angular_error_degrees(b, a), rel=1e-12
        )

    def test_scale_invariant(self):
        a, b = [0.2, 0.5, 0.9], [0.8, 0.1, 0.3]
        assert angular_error_degrees(a, b) == pytest.approx(
            angular_error_degrees(np.asarray(a) * 7.5, b), rel=1e-12
        )

    def test_orthogonal(self):
        assert angular_error_degrees([1, 0, 0], [0, 1, 0]) == pytest.approx(90.0)

    def test_zero_vector_rejected(self):
        with pytest.raises(ValueError):
            angular_error_degrees([0, 0, 0], [1, 1, 1])


class TestEstimate:
    def test_balanced_polarization_reads_white(self):
        img = polarized_image((0.5, 0.5, 0.5))
        est = pp.cc_estimate(img)
        assert not est.degenerate
        np.testing.assert_allclose(est.chroma, WHITE, atol=1e-12)

    def test_channel_imbalance_tilts_estimate(self):
        img = polarized_image((0.8, 0.4, 0.4))
        est = pp.cc_estimate(img)
        want = np.array([0.8, 0.4, 0.4]) / np.linalg.norm([0.8, 0.4, 0.4])
        np.testing.assert_allclose(est.chroma, want, atol=1e-12)

    def test_selects_most_polarized_pixels(self):
        img = polarized_image((0.1, 0.1, 0.1), h=10, w=10)
        # a small, strongly polarized red-tinted region should dominate
        hot = polarized_image((0.9, 0.2, 0.2), h=10, w=10)
        s0 = img.s0
        sel = np.zeros((10, 10, 1), dtype=bool)
        sel[:3, :3] = True
        merged = StokesImage(
            np.where(sel, hot.s0, s0),
            np.where(sel, hot.s1, img.s1),
            np.where(sel, hot.s2, img.s2),
        )
        est = pp.cc_estimate(merged, top_q=0.09)
        assert est.chroma[0] > est.chroma[1]
        np.testing.assert_allclose(est.chroma[1], est.chroma[2], atol=1e-12)

    def test_dark_image_degenerate_white(self):
        img = StokesImage(np.zeros((4, 4, 3)), np.zeros((4, 4, 3)), np.zeros((4, 4, 3)))
        est = pp.cc_estimate(img)
        assert est.degenerate
        np.testing.assert_allclose(est.chroma, WHITE)

    def test_unpolarized_image_degenerate_white(self):
        img = polarized_image((0.0, 0.0, 0.0))
        est = pp.cc_estimate(img)
        assert est.degenerate

    def test_channel_count_enforced(self):
        img = StokesImage(np.ones((4, 4, 1)), np.zeros((4, 4, 1)), np.zeros((4, 4, 1)))
        with pytest.raises(ValueError):
            pp.cc_estimate(img)

    def test_top_q_validated(self):
        img = polarized_image((0.5, 0.5, 0.5))
        with pytest.raises(ValueError):
            pp.cc_estimate(img, top_q=0.0)
        with pytest.raises(ValueError):
            pp.cc_estimate(img, top_q=1.5)

    @given(st.floats(0.05, 1.0), st.floats(0.05, 1.0), st.floats(0.05, 1.0))
    @settings(deadline=None, max_examples=30)
    def test_estimate_matches_rho_weighted_radiance(self, r, g, b):
        img = polarized_image((r, g, b))
        est = pp.cc_estimate(img)
        want = np.array([r, g, b]) / np.linalg.norm([r, g, b])
        np.testing.assert_allclose(est.chroma, want, atol=1e-9)


class TestWhiteBalance:
    def test_gains_anchor_green(self):
        est = IlluminantEstimate(np.array([0.8, 0.4, 0.4]) / np.linalg.norm([0.8, 0.4, 0.4]))
        gains = wb_gains(est)
        assert gains[1] == pytest.approx(1.0)
        assert gains[0] == pytest.approx(0.5)
        assert gains[2] == pytest.approx(1.0)

    def test_white_estimate_identity(self):
        img = polarized_image((0.3, 0.3, 0.3))
        out = pp.white_balance(img, IlluminantEstimate(WHITE.copy()))
        np.testing.assert_allclose(out.s0, img.s0, atol=1e-12)
        np.testing.assert_allclose(out.s1, img.s1, atol=1e-12)

    def test_all_components_scaled_alike(self):
        img = polarized_image((0.5, 0.2, 0.7))
        est = pp.cc_estimate(img)
        out = pp.white_balance(img, est)
        gains = wb_gains(est)
        np.testing.assert_allclose(out.s0, img.s0 * gains, atol=1e-12)
        np.testing.assert_allclose(out.s2, img.s2 * gains, atol=1e-12)

    def test_zero_component_rejected(self):
        est = IlluminantEstimate(np.array([0.0, 1.0, 0.0]))
        with pytest.raises(ValueError):
            wb_gains(est)


@pytest.fixture(scope="module")
def scene():
    return pp.cc_benchmark_scene((48, 48))


class TestChannelAttackOnBenchmark:
    def render(self, scene, mode):
        proj = pp.default_projector(scene)
        pattern = ProjectionPattern.constant_rgb(
            CHANNEL_MODES[mode], scene.height, scene.width
        )
        return pp.add_stokes(
            pp.reflect(scene, pp.project_pattern(proj, pattern)), scene.ambient
        )

    def test_neutral_projection_estimates_white(self, scene):
        est = pp.cc_estimate(self.render(scene, "neutral"))
        assert angular_error_degrees(est.chroma, WHITE) < 0.5

    def test_red_mode_suppresses_red_polarization(self, scene):
        img = self.render(scene, "red")
        cues = pp.cues_from_stokes(img)
        # driven red channel anti-aligns with the polarized environment,
        # the undriven channels reinforce it
        assert cues.rho[..., 0].mean() < cues.rho[..., 1].mean() - 0.1

    def test_red_mode_yields_cyan_estimate_and_red_gain(self, scene):
        est = pp.cc_estimate(self.render(scene, "red"))
        assert not est.degenerate
        assert est.chroma[0] < est.chroma[1]
        assert wb_gains(est)[0] > 1.0
        assert angular_error_degrees(est.chroma, WHITE) > 10.0

    @pytest.mark.parametrize("mode", ["red", "green", "blue"])
    def test_each_mode_biases_its_own_channel(self, scene, mode):
        idx = {"red": 0, "green": 1, "blue": 2}[mode]
        est = pp.cc_estimate(self.render(scene, mode))
        others = [est.chroma[i] for i in range(3) if i != idx]
        assert est.chroma[idx] < min(others)
        gains = wb_gains(est)
        if idx == 1:
            # green anchors the gains, so its suppression shows up as
            # the other channels being pulled below 1 instead
            assert gains[0] < 1.0 and gains[2] < 1.0
        else:
            assert gains[idx] > 1.0
