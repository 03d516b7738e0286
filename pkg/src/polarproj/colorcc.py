"""Polarization-guided color constancy and white balance.

The estimator assumes specular highlights carry the illuminant color:
it selects the most strongly polarized pixels and reads the illuminant
chromaticity from their per-channel polarized radiance.  That reliance
on the degree of polarization per channel is exactly what a
channel-polarized projection subverts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .stokes import DARK_S0, StokesImage, cues_from_stokes

WHITE = np.ones(3) / np.sqrt(3.0)


@dataclass(frozen=True)
class IlluminantEstimate:
    """Unit RGB chromaticity of the estimated illuminant."""

    chroma: np.ndarray
    degenerate: bool = False

    def __post_init__(self):
        chroma = np.asarray(self.chroma, dtype=np.float64)
        if chroma.shape != (3,):
            raise ValueError("chroma must be a 3-vector")
        if (chroma < 0).any():
            raise ValueError("chroma components must be non-negative")
        norm = np.linalg.norm(chroma)
        if not np.isclose(norm, 1.0, atol=1e-9):
            raise ValueError("chroma must be unit length")
        object.__setattr__(self, "chroma", chroma)


def cc_estimate(stokes: StokesImage, top_q: float = 0.1) -> IlluminantEstimate:
    """Estimate the illuminant from the most polarized pixels.

    Pixels in the top ``top_q`` quantile of channel-mean degree of
    polarization are selected as specular-dominated; the per-channel
    estimate is the mean of ``rho_c * s0_c`` over the selection,
    normalized to a unit vector.  A fully dark or fully unpolarized
    image yields the white fallback with ``degenerate`` set.
    """
    if stokes.channels != 3:
        raise ValueError("color constancy needs a 3-channel image")
    if not 0.0 < top_q <= 1.0:
        raise ValueError("top_q must lie in (0, 1]")
    if float(stokes.s0.max()) <= DARK_S0:
        return IlluminantEstimate(WHITE.copy(), degenerate=True)
    cues = cues_from_stokes(stokes)
    mean_rho = cues.rho.mean(axis=-1)
    threshold = np.quantile(mean_rho, 1.0 - top_q)
    selected = mean_rho >= threshold
    raw = (cues.rho * stokes.s0)[selected].mean(axis=0)
    norm = np.linalg.norm(raw)
    if norm <= DARK_S0:
        return IlluminantEstimate(WHITE.copy(), degenerate=True)
    return IlluminantEstimate(raw / norm)


def white_balance(stokes: StokesImage, estimate: IlluminantEstimate) -> StokesImage:
    """Apply von-Kries gains anchored on the green channel.

    Each channel is scaled by ``chroma_G / chroma_c``, all Stokes
    components alike.
    """
    chroma = estimate.chroma
    if (chroma <= 0).any():
        raise ValueError("cannot white-balance with a zero chroma component")
    gains = chroma[1] / chroma
    return StokesImage(stokes.s0 * gains, stokes.s1 * gains, stokes.s2 * gains)


def wb_gains(estimate: IlluminantEstimate) -> np.ndarray:
    """The per-channel white-balance gains for an estimate."""
    chroma = estimate.chroma
    if (chroma <= 0).any():
        raise ValueError("cannot derive gains from a zero chroma component")
    return chroma[1] / chroma


def angular_error_degrees(a, b) -> float:
    """Angle between two chromaticity vectors, in degrees."""
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("angular error of a zero vector is undefined")
    cosine = np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0)
    return float(np.degrees(np.arccos(cosine)))
