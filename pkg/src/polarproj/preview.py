"""Quick-look PNG rendering of polarimetric images."""

from __future__ import annotations

import numpy as np
from PIL import Image

from .stokes import StokesImage, cues_from_stokes


def _to_u8(plane):
    return np.clip(np.rint(plane * 255.0), 0, 255).astype(np.uint8)


def intensity_preview(image: StokesImage) -> Image.Image:
    """Channel-mean s0, normalized to its own peak, as grayscale."""
    s0 = image.s0.mean(axis=-1)
    peak = s0.max()
    if peak <= 0:
        return Image.fromarray(np.zeros(s0.shape, dtype=np.uint8), mode="L")
    return Image.fromarray(_to_u8(s0 / peak), mode="L")


def dolp_preview(image: StokesImage) -> Image.Image:
    """Channel-mean degree of polarization on its natural [0, 1] scale."""
    cues = cues_from_stokes(image)
    return Image.fromarray(_to_u8(np.clip(cues.rho.mean(axis=-1), 0.0, 1.0)), mode="L")


def aolp_preview(image: StokesImage) -> Image.Image:
    """Channel-mean angle of polarization as a cyclic hue wheel.

    The angle is periodic over pi, so hue = angle mod pi maps the full
    wheel once; saturation carries the degree of polarization so that
    unpolarized pixels stay gray instead of showing a meaningless hue.
    """
    cues = cues_from_stokes(image)
    phi = cues.phi.mean(axis=-1)
    rho = np.clip(cues.rho.mean(axis=-1), 0.0, 1.0)
    hue = _to_u8(np.mod(phi, np.pi) / np.pi)
    sat = _to_u8(rho)
    val = np.full(phi.shape, 255, dtype=np.uint8)
    hsv = Image.fromarray(np.stack([hue, sat, val], axis=-1), mode="HSV")
    return hsv.convert("RGB")


def save_previews(image: StokesImage, directory, prefix):
    """Write the three standard previews; returns the paths written."""
    from pathlib import Path

    directory = Path(directory)
    paths = []
    for name, render in (
        ("s0", intensity_preview),
        ("dolp", dolp_preview),
        ("aolp", aolp_preview),
    ):
        path = directory / f"{prefix}_{name}.png"
        render(image).save(path)
        paths.append(path)
    return paths
