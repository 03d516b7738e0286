"""Shared fixtures: small deterministic scenes, captures, and models."""

import numpy as np
import pytest

import polarproj as pp


@pytest.fixture
def rng():
    """Counter-based generator, fixed seed."""
    return np.random.Generator(np.random.Philox(42))


@pytest.fixture
def small_scene():
    """32x32 glass-on-background scene, seed 3."""
    return pp.gen_scene(3, (32, 32))


@pytest.fixture
def small_candidates(small_scene):
    """K=4 candidate capture of the small scene."""
    projector = pp.default_projector(small_scene)
    return pp.capture_candidates(
        small_scene, projector, pp.default_drive_values(4)
    )


@pytest.fixture
def random_model():
    """Untrained surrogate with seeded random weights."""
    return pp.init_model(7)


def random_valid_stokes(rng, shape, rho_max=1.0):
    """Random physically valid Stokes image of the given (H, W, C) shape."""
    s0 = rng.uniform(0.05, 3.0, shape)
    rho = rng.uniform(0.0, rho_max, shape)
    phi = rng.uniform(-np.pi / 2, np.pi / 2, shape)
    return pp.stokes_from_cues(s0, pp.PolarCuesImage(rho, phi))
