"""Linear-polarization algebra on image grids.

Images carry per-pixel, per-channel Stokes components or polarizer-angle
intensities as ``(height, width, channels)`` float64 arrays.  Only the
linear components (s0, s1, s2) are modeled; circular polarization is not
represented anywhere in this package.  All intensities are linear
radiometric values, not gamma-encoded.

The angle convention: a polarization angle ``phi`` lives in
``[-pi/2, pi/2)`` and enters every formula only through ``2*phi``, so any
representative of the same axis gives identical Stokes components.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
from scipy.ndimage import map_coordinates

# Pixels with s0 at or below this are treated as dark (no meaningful cues).
DARK_S0 = 1e-12
# Below this degree of polarization the angle is reported as 0 by convention.
UNPOLARIZED_RHO = 1e-9
# Relative slack allowed on sqrt(s1^2+s2^2) <= s0 before an image counts as
# unphysical.
PHYSICAL_TOL = 1e-9

# Analyzer angles of the four-direction sensor, in radians.
POLARIZER_ANGLES = (0.0, np.pi / 4, np.pi / 2, 3 * np.pi / 4)

# Super-pixel layout of the division-of-focal-plane mosaic, as
# (row offset, column offset) per angle plane:
#   row 0: i90 i45
#   row 1: i135 i0
MOSAIC_OFFSETS = {"i90": (0, 0), "i45": (0, 1), "i135": (1, 0), "i0": (1, 1)}


def _as_plane_stack(a, name):
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(
            f"{name} must have shape (height, width, channels), got {arr.shape}"
        )
    return arr


@dataclass(frozen=True)
class RawPolarImage:
    """Intensities behind the four analyzer angles 0, 45, 90 and 135 degrees."""

    i0: np.ndarray
    i45: np.ndarray
    i90: np.ndarray
    i135: np.ndarray

    def __post_init__(self):
        planes = {}
        for name in ("i0", "i45", "i90", "i135"):
            planes[name] = _as_plane_stack(getattr(self, name), name)
        shapes = {p.shape for p in planes.values()}
        if len(shapes) != 1:
            raise ValueError(f"angle planes disagree in shape: {sorted(shapes)}")
        for name, p in planes.items():
            if (p < 0).any():
                raise ValueError(f"negative intensity in plane {name}")
            object.__setattr__(self, name, p)

    @property
    def height(self):
        return self.i0.shape[0]

    @property
    def width(self):
        return self.i0.shape[1]

    @property
    def channels(self):
        return self.i0.shape[2]

    def planes(self):
        """The four angle planes in the fixed order i0, i45, i90, i135."""
        return (self.i0, self.i45, self.i90, self.i135)


@dataclass(frozen=True)
class StokesImage:
    """Per-pixel linear Stokes components (s0, s1, s2)."""

    s0: np.ndarray
    s1: np.ndarray
    s2: np.ndarray

    def __post_init__(self):
        comps = [_as_plane_stack(getattr(self, n), n) for n in ("s0", "s1", "s2")]
        if not (comps[0].shape == comps[1].shape == comps[2].shape):
            raise ValueError(
                "Stokes components disagree in shape: "
                f"{[c.shape for c in comps]}"
            )
        for name, c in zip(("s0", "s1", "s2"), comps):
            object.__setattr__(self, name, c)

    @property
    def height(self):
        return self.s0.shape[0]

    @property
    def width(self):
        return self.s0.shape[1]

    @property
    def channels(self):
        return self.s0.shape[2]

    def stacked(self):
        """Components as one (height, width, channels, 3) array."""
        return np.stack((self.s0, self.s1, self.s2), axis=-1)

    @classmethod
    def from_stacked(cls, arr):
        arr = np.asarray(arr, dtype=np.float64)
        return cls(arr[..., 0], arr[..., 1], arr[..., 2])

    def physically_valid(self, tol=PHYSICAL_TOL):
        """True when s0 >= 0 and the polarized magnitude never exceeds s0.

        The bound carries a relative slack of ``tol`` so that images
        produced by exact round trips through the sensor model pass.
        """
        if (self.s0 < 0).any():
            return False
        pol = np.hypot(self.s1, self.s2)
        return bool((pol <= self.s0 * (1.0 + tol) + tol).all())

    def __add__(self, other):
        if not isinstance(other, StokesImage):
            return NotImplemented
        return add_stokes(self, other)

    def __mul__(self, factor):
        return scale_stokes(self, factor)

    __rmul__ = __mul__


@dataclass(frozen=True)
class PolarCuesImage:
    """Degree (rho) and angle (phi) of linear polarization per pixel.

    ``degenerate_count`` reports how many pixels were too dark to carry
    cues and were therefore set to rho = 0, phi = 0.
    """

    rho: np.ndarray
    phi: np.ndarray
    degenerate_count: int = 0

    def __post_init__(self):
        rho = _as_plane_stack(self.rho, "rho")
        phi = _as_plane_stack(self.phi, "phi")
        if rho.shape != phi.shape:
            raise ValueError(f"rho/phi shape mismatch: {rho.shape} vs {phi.shape}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "phi", phi)

    @property
    def height(self):
        return self.rho.shape[0]

    @property
    def width(self):
        return self.rho.shape[1]

    @property
    def channels(self):
        return self.rho.shape[2]


def malus_intensity(i0, theta):
    """Transmitted intensity of polarized light through an ideal analyzer.

    Parameters
    ----------
    i0 : scalar or array
        Incident intensity, must be non-negative.
    theta : scalar or array
        Angle between the light's polarization direction and the
        analyzer's transmission axis, radians.

    Returns
    -------
    Intensity ``i0 * cos(theta)**2``, broadcast over the inputs.
    """
    i0 = np.asarray(i0, dtype=np.float64)
    if (i0 < 0).any():
        raise ValueError("incident intensity must be non-negative")
    out = i0 * np.cos(theta) ** 2
    if out.ndim == 0:
        return float(out)
    return out


def stokes_from_raw(raw: RawPolarImage) -> StokesImage:
    """Stokes components from the four analyzer intensities.

    s0 = (i0 + i45 + i90 + i135) / 2,  s1 = i0 - i90,  s2 = i45 - i135.
    """
    s0 = (raw.i0 + raw.i45 + raw.i90 + raw.i135) / 2.0
    s1 = raw.i0 - raw.i90
    s2 = raw.i45 - raw.i135
    return StokesImage(s0, s1, s2)


def sense(stokes: StokesImage) -> RawPolarImage:
    """Ideal four-angle sensing of a Stokes image.

    Each analyzer at angle ``theta`` measures
    ``(s0 + s1*cos(2 theta) + s2*sin(2 theta)) / 2``.  The input must be
    physically valid (polarized magnitude not exceeding s0); tiny negative
    results from rounding are clipped to zero.
    """
    if not stokes.physically_valid():
        raise ValueError(
            "cannot sense an unphysical Stokes image "
            "(sqrt(s1^2+s2^2) > s0 somewhere or s0 < 0)"
        )
    s0, s1, s2 = stokes.s0, stokes.s1, stokes.s2
    half = 0.5
    i0 = np.maximum(half * (s0 + s1), 0.0)
    i45 = np.maximum(half * (s0 + s2), 0.0)
    i90 = np.maximum(half * (s0 - s1), 0.0)
    i135 = np.maximum(half * (s0 - s2), 0.0)
    return RawPolarImage(i0, i45, i90, i135)


def cues_from_stokes(stokes: StokesImage) -> PolarCuesImage:
    """Degree and angle of linear polarization from Stokes components.

    rho = sqrt(s1^2 + s2^2) / s0 and phi = atan2(s2, s1) / 2, wrapped
    into [-pi/2, pi/2).  Dark pixels (s0 <= DARK_S0) get rho = 0 and
    phi = 0 and are counted in ``degenerate_count``; pixels with rho
    below UNPOLARIZED_RHO report phi = 0 as well, since the angle of an
    unpolarized pixel is meaningless.
    """
    s0 = stokes.s0
    pol = np.hypot(stokes.s1, stokes.s2)
    dark = s0 <= DARK_S0
    rho = np.divide(pol, s0, out=np.zeros_like(pol), where=~dark)
    phi = 0.5 * np.arctan2(stokes.s2, stokes.s1)
    # atan2 yields (-pi, pi], so phi sits in (-pi/2, pi/2]; fold the top
    # endpoint onto -pi/2 to keep the documented half-open range.
    phi = np.where(phi >= np.pi / 2, phi - np.pi, phi)
    unpolarized = dark | (rho < UNPOLARIZED_RHO)
    rho = np.where(dark, 0.0, rho)
    phi = np.where(unpolarized, 0.0, phi)
    return PolarCuesImage(rho, phi, degenerate_count=int(dark.sum()))


def stokes_from_cues(s0, cues: PolarCuesImage) -> StokesImage:
    """Rebuild Stokes components from intensity plus polarization cues.

    s1 = s0 * rho * cos(2 phi) and s2 = s0 * rho * sin(2 phi).
    """
    s0 = _as_plane_stack(s0, "s0")
    if s0.shape != cues.rho.shape:
        raise ValueError(f"s0 shape {s0.shape} does not match cues {cues.rho.shape}")
    rho = cues.rho
    if ((rho < 0) | (rho > 1.0 + PHYSICAL_TOL)).any():
        raise ValueError("rho must lie in [0, 1]")
    two_phi = 2.0 * cues.phi
    s1 = s0 * rho * np.cos(two_phi)
    s2 = s0 * rho * np.sin(two_phi)
    return StokesImage(s0, s1, s2)


def add_stokes(a: StokesImage, b: StokesImage) -> StokesImage:
    """Componentwise sum; Stokes components of incoherent mixtures add."""
    if a.s0.shape != b.s0.shape:
        raise ValueError(f"shape mismatch: {a.s0.shape} vs {b.s0.shape}")
    return StokesImage(a.s0 + b.s0, a.s1 + b.s1, a.s2 + b.s2)


def scale_stokes(a: StokesImage, factor) -> StokesImage:
    """Scale all components by a non-negative scalar."""
    factor = float(factor)
    if factor < 0:
        raise ValueError("scale factor must be non-negative")
    return StokesImage(a.s0 * factor, a.s1 * factor, a.s2 * factor)


def mosaic(raw: RawPolarImage) -> np.ndarray:
    """Sample the four angle planes into a single-plane sensor mosaic.

    The 2x2 super-pixel layout is fixed: (i90, i45) on the even row,
    (i135, i0) on the odd row.  Image dimensions must be even.

    Returns
    -------
    (height, width, channels) array with one angle sample per pixel.
    """
    h, w = raw.height, raw.width
    if h % 2 or w % 2:
        raise ValueError(f"mosaic needs even dimensions, got {h}x{w}")
    out = np.empty_like(raw.i0)
    for name, (dy, dx) in MOSAIC_OFFSETS.items():
        plane = getattr(raw, name)
        out[dy::2, dx::2] = plane[dy::2, dx::2]
    return out


def demosaic(mosaic_img: np.ndarray) -> RawPolarImage:
    """Reconstruct full-resolution angle planes from a sensor mosaic.

    Each angle's sparse sample grid is interpolated bilinearly back to
    full resolution (edges clamped), so a mosaic of a constant image
    round-trips exactly and a linear ramp is recovered to within one
    ramp step at the borders.
    """
    m = _as_plane_stack(mosaic_img, "mosaic")
    h, w, channels = m.shape
    if h % 2 or w % 2:
        raise ValueError(f"demosaic needs even dimensions, got {h}x{w}")
    rows = np.arange(h, dtype=np.float64)
    cols = np.arange(w, dtype=np.float64)
    planes = {}
    for name, (dy, dx) in MOSAIC_OFFSETS.items():
        sub_r = (rows - dy) / 2.0
        sub_c = (cols - dx) / 2.0
        grid_r, grid_c = np.meshgrid(sub_r, sub_c, indexing="ij")
        plane = np.empty_like(m)
        for c in range(channels):
            sub = m[dy::2, dx::2, c]
            plane[:, :, c] = map_coordinates(
                sub, [grid_r, grid_c], order=1, mode="nearest"
            )
        planes[name] = plane
    return RawPolarImage(**planes)
