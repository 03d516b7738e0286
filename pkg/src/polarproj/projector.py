"""Polarizing projector model.

A consumer LCD projector with its front polarizer removed emits light
whose intensity no longer depends on the commanded drive value; instead
each liquid-crystal cell rotates the (fixed) polarization coming off the
back polarizer.  Commanding a drive value therefore steers the emitted
polarization angle while the screen stays uniformly bright, which is what
makes projected perturbations invisible to the eye.

With the back polarizer at 3*pi/4 and a cell rotation range of pi/2, the
drive-to-angle curve follows from inverting the projector's usual
intensity response (the display gamma) through the analyzer geometry:

    rotation(v) = pi/2 - arccos(sqrt((v/255)**gamma))
    angle(v)    = 3*pi/4 - rotation(v)

so v=0 emits at 3*pi/4 and v=255 at pi/4, monotonically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import formats
from .stokes import StokesImage

BACK_POLARIZER = 3 * np.pi / 4
MAX_ROTATION = np.pi / 2

# Channel-polarized projection presets: the named channels are driven to
# full scale (angle pi/4) while the rest stay at zero (angle 3*pi/4).
# "neutral" drives every channel equally, so no channel stands out.
CHANNEL_MODES = {
    "neutral": (255, 255, 255),
    "red": (255, 0, 0),
    "green": (0, 255, 0),
    "blue": (0, 0, 255),
    "yellow": (255, 255, 0),
    "magenta": (255, 0, 255),
    "cyan": (0, 255, 255),
}


@dataclass(frozen=True)
class ProjectorModel:
    """Geometry and radiometry of the modified projector."""

    height: int
    width: int
    i0_per_channel: tuple = (1.0, 1.0, 1.0)
    back_polarizer_angle: float = BACK_POLARIZER
    max_rotation: float = MAX_ROTATION
    gamma: float = 2.2
    depolarization: float = 0.0

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("projector resolution must be positive")
        i0 = tuple(float(v) for v in self.i0_per_channel)
        if any(v < 0 for v in i0):
            raise ValueError("emitted intensity must be non-negative")
        object.__setattr__(self, "i0_per_channel", i0)
        if not 0.0 <= self.depolarization <= 1.0:
            raise ValueError("depolarization must lie in [0, 1]")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")

    @property
    def channels(self):
        return len(self.i0_per_channel)


@dataclass(frozen=True)
class ProjectionPattern:
    """Commanded 8-bit drive values per pixel and channel."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3:
            raise ValueError(f"pattern must be (height, width, channels), got {arr.shape}")
        if arr.dtype != np.uint8:
            if ((arr < 0) | (arr > 255)).any() or not np.equal(np.mod(arr, 1), 0).all():
                raise ValueError("drive values must be integers in [0, 255]")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "values", arr)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[2]

    @classmethod
    def constant(cls, value, height, width, channels=3):
        """A pattern driving every pixel of every channel to ``value``."""
        return cls(np.full((height, width, channels), value, dtype=np.uint8))

    @classmethod
    def constant_rgb(cls, rgb, height, width):
        """A pattern driving each channel to its own constant value."""
        vals = np.empty((height, width, len(rgb)), dtype=np.uint8)
        for c, v in enumerate(rgb):
            vals[:, :, c] = v
        return cls(vals)

    def save(self, path):
        formats.write_ppat(path, self.values)

    @classmethod
    def load(cls, path):
        return cls(formats.read_ppat(path))


def value_to_aolp(model: ProjectorModel, value):
    """Emitted polarization angle for a drive value (scalar or array).

    Monotonically decreasing from the back-polarizer angle at v=0 down to
    back - max_rotation at v=255.
    """
    v = np.asarray(value, dtype=np.float64)
    if ((v < 0) | (v > 255)).any():
        raise ValueError("drive value out of [0, 255]")
    perceived = (v / 255.0) ** model.gamma
    unit_rotation = np.pi / 2 - np.arccos(np.sqrt(perceived))
    rotation = unit_rotation * (model.max_rotation / (np.pi / 2))
    out = model.back_polarizer_angle - rotation
    if out.ndim == 0:
        return float(out)
    return out


def project_pattern(model: ProjectorModel, pattern: ProjectionPattern) -> StokesImage:
    """Emitted Stokes field for a commanded pattern.

    Every pixel is fully polarized (up to the model's depolarization
    factor) at the drive-dependent angle, with s0 fixed at the per-channel
    emitted intensity regardless of the commanded values.
    """
    if (pattern.height, pattern.width) != (model.height, model.width):
        raise ValueError(
            f"pattern {pattern.height}x{pattern.width} does not match projector "
            f"{model.height}x{model.width}"
        )
    if pattern.channels != model.channels:
        raise ValueError(
            f"pattern has {pattern.channels} channels, projector {model.channels}"
        )
    phi = value_to_aolp(model, pattern.values.astype(np.float64))
    rho = 1.0 - model.depolarization
    i0 = np.asarray(model.i0_per_channel, dtype=np.float64)
    s0 = np.broadcast_to(i0, phi.shape).copy()
    s1 = s0 * rho * np.cos(2.0 * phi)
    s2 = s0 * rho * np.sin(2.0 * phi)
    return StokesImage(s0, s1, s2)


def channel_polarized_projection(model: ProjectorModel, mode: str) -> StokesImage:
    """Full-field projection polarizing the named color channels.

    The preset drives the mode's channels to 255 (angle pi/4) and the
    others to 0 (angle 3*pi/4); "neutral" drives all three alike.  The
    emitted s0 stays equal across channels either way, so every mode
    looks like the same white screen.
    """
    if mode not in CHANNEL_MODES:
        raise ValueError(
            f"unknown channel mode {mode!r}; pick one of {sorted(CHANNEL_MODES)}"
        )
    if model.channels != 3:
        raise ValueError("channel-polarized projection needs a 3-channel projector")
    pattern = ProjectionPattern.constant_rgb(CHANNEL_MODES[mode], model.height, model.width)
    return project_pattern(model, pattern)
