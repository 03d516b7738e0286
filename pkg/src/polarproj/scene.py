"""Scene model, polarimetric reflection, and candidate capture.

A scene is a per-pixel mix of a specular and a diffuse reflector under a
constant environment term.  Specular reflection preserves the incident
polarization up to a mirror flip of s2; diffuse reflection forgets it and
re-emits with the surface's own (usually zero) polarization signature.
Both are linear in the incident Stokes vector, which is what makes the
candidate-difference algebra of the attack exact.

Candidate capture renders the scene under a small set of constant-drive
projections plus a background shot without the projector; the attack
composes adversarial examples from exactly these images.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from . import formats
from .projector import ProjectorModel, ProjectionPattern, project_pattern, value_to_aolp
from .stokes import PolarCuesImage, RawPolarImage, StokesImage, add_stokes, sense, stokes_from_cues, stokes_from_raw

DEFAULT_K = 9
GLASS_KS_RANGE = (0.6, 0.95)
BACKGROUND_KS_RANGE = (0.02, 0.15)


def glass_drive_angles(values=(0, 128, 255), projector: ProjectorModel | None = None):
    """Polarization angles a mirror-like surface shows under given drives.

    Reflection negates s2, so the reflected angle is pi minus the emitted
    one (mod pi).  These are the angles a segmenter trained under the
    given drive values associates with glass.
    """
    model = projector if projector is not None else ProjectorModel(height=1, width=1)
    return tuple((np.pi - value_to_aolp(model, int(v))) % np.pi for v in values)


def _as_map(a, name, channels=None):
    arr = np.asarray(a, dtype=np.float64)
    want = 2 if channels is None else 3
    if arr.ndim != want:
        raise ValueError(f"{name} must be {want}-dimensional, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class SceneModel:
    """Material maps and environment term of a synthetic scene."""

    k_s: np.ndarray            # specular mixing weight, (H, W) in [0, 1]
    albedo: np.ndarray         # diffuse albedo, (H, W, C) in [0, 1]
    spec_reflectance: tuple    # per-channel specular reflectance in [0, 1]
    diffuse_dolp: np.ndarray   # intrinsic diffuse polarization degree, (H, W)
    diffuse_aolp: np.ndarray   # intrinsic diffuse polarization angle, (H, W)
    ambient: StokesImage       # additive environment appearance
    glass_mask: np.ndarray     # (H, W) uint8, 1 on glass pixels

    def __post_init__(self):
        k_s = _as_map(self.k_s, "k_s")
        albedo = _as_map(self.albedo, "albedo", channels=True)
        ddolp = _as_map(self.diffuse_dolp, "diffuse_dolp")
        daolp = _as_map(self.diffuse_aolp, "diffuse_aolp")
        mask = np.asarray(self.glass_mask)
        if mask.ndim != 2:
            raise ValueError("glass_mask must be 2-dimensional")
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("glass_mask must be binary")
        shape = k_s.shape
        if albedo.shape[:2] != shape or ddolp.shape != shape or daolp.shape != shape \
                or mask.shape != shape or (self.ambient.height, self.ambient.width) != shape:
            raise ValueError("scene maps disagree in spatial shape")
        if albedo.shape[2] != self.ambient.channels:
            raise ValueError("albedo channels do not match ambient channels")
        sr = tuple(float(v) for v in self.spec_reflectance)
        if len(sr) != albedo.shape[2]:
            raise ValueError("spec_reflectance length must equal channel count")
        for name, arr, lo, hi in (
            ("k_s", k_s, 0.0, 1.0),
            ("albedo", albedo, 0.0, 1.0),
            ("diffuse_dolp", ddolp, 0.0, 1.0),
        ):
            if ((arr < lo) | (arr > hi)).any():
                raise ValueError(f"{name} must lie in [{lo}, {hi}]")
        if any(v < 0 or v > 1 for v in sr):
            raise ValueError("spec_reflectance must lie in [0, 1]")
        object.__setattr__(self, "k_s", k_s)
        object.__setattr__(self, "albedo", albedo)
        object.__setattr__(self, "spec_reflectance", sr)
        object.__setattr__(self, "diffuse_dolp", ddolp)
        object.__setattr__(self, "diffuse_aolp", daolp)
        object.__setattr__(self, "glass_mask", mask.astype(np.uint8))

    @property
    def height(self):
        return self.k_s.shape[0]

    @property
    def width(self):
        return self.k_s.shape[1]

    @property
    def channels(self):
        return self.albedo.shape[2]

    @property
    def glass_fraction(self):
        return float(self.glass_mask.mean())


def reflect(scene: SceneModel, incident: StokesImage) -> StokesImage:
    """Reflect an incident Stokes field off the scene.

    The specular part scales the incident components by
    ``k_s * spec_reflectance`` and mirrors s2; the diffuse part keeps only
    the incident s0, scaled by ``(1 - k_s) * albedo``, and re-polarizes it
    with the surface's intrinsic diffuse degree and angle.  Linear in the
    incident light.
    """
    if (incident.height, incident.width, incident.channels) != (
        scene.height, scene.width, scene.channels,
    ):
        raise ValueError("incident field does not match scene dimensions")
    ks = scene.k_s[:, :, None]
    sr = np.asarray(scene.spec_reflectance)
    spec_gain = ks * sr
    spec0 = spec_gain * incident.s0
    spec1 = spec_gain * incident.s1
    spec2 = -spec_gain * incident.s2

    diff0 = (1.0 - ks) * scene.albedo * incident.s0
    two_phi = 2.0 * scene.diffuse_aolp[:, :, None]
    dpol = scene.diffuse_dolp[:, :, None]
    diff1 = diff0 * dpol * np.cos(two_phi)
    diff2 = diff0 * dpol * np.sin(two_phi)

    return StokesImage(spec0 + diff0, spec1 + diff1, spec2 + diff2)


def default_drive_values(k=DEFAULT_K):
    """K drive levels spread evenly across [0, 255], rounded to integers."""
    if k < 2:
        raise ValueError("need at least 2 drive values")
    return np.rint(np.linspace(0.0, 255.0, k)).astype(np.int64)


def _check_uniform(values):
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError("drive values must be a 1-d sequence")
    if ((v < 0) | (v > 255)).any():
        raise ValueError("drive values must lie in [0, 255]")
    if v.size >= 2:
        d = np.diff(v)
        if (d <= 0).any():
            raise ValueError("drive values must be strictly increasing")
        # Uniform spacing up to the one-level slack that 8-bit rounding of
        # an even subdivision of [0, 255] can introduce.
        if d.max() - d.min() > 1.0 + 1e-9:
            raise ValueError("drive values must be uniformly spaced")
    return v


@dataclass(frozen=True)
class CandidateSet:
    """Captures of the scene under constant-drive projections.

    ``candidates[i]`` is the capture with the whole projector commanded to
    ``values[i]``; ``background`` is the capture without the projector.
    """

    candidates: tuple
    values: np.ndarray
    background: StokesImage

    def __post_init__(self):
        cands = tuple(self.candidates)
        vals = _check_uniform(self.values)
        if len(cands) != vals.size:
            raise ValueError("one drive value per candidate required")
        shape = (self.background.height, self.background.width, self.background.channels)
        for s in cands:
            if (s.height, s.width, s.channels) != shape:
                raise ValueError("candidate/background shape mismatch")
        object.__setattr__(self, "candidates", cands)
        object.__setattr__(self, "values", vals)

    @property
    def k(self):
        return len(self.candidates)

    @property
    def height(self):
        return self.background.height

    @property
    def width(self):
        return self.background.width

    @property
    def channels(self):
        return self.background.channels


def _sensor_pass(stokes, noise_sigma, bits, rng):
    """Optionally push a capture through the four-angle sensor model."""
    if noise_sigma <= 0 and bits is None:
        return stokes
    raw = sense(stokes)
    planes = []
    full_scale = max(float(max(p.max() for p in raw.planes())), 1e-12)
    for p in raw.planes():
        q = p
        if noise_sigma > 0:
            q = q + rng.normal(0.0, noise_sigma, q.shape)
        if bits is not None:
            levels = (1 << bits) - 1
            q = np.rint(np.clip(q, 0.0, full_scale) / full_scale * levels)
            q = q / levels * full_scale
        planes.append(np.maximum(q, 0.0))
    return stokes_from_raw(RawPolarImage(*planes))


def capture_candidates(
    scene: SceneModel,
    projector: ProjectorModel,
    values=None,
    *,
    sensor_noise=0.0,
    sensor_bits=None,
    seed=0,
) -> CandidateSet:
    """Render the candidate images the attack will compose from.

    Every candidate is ``reflect(scene, constant projection) + ambient``;
    the background is the ambient term alone.  When the sensor options
    are active, each image additionally passes through the four-angle
    sensing model with noise and quantization.
    """
    if values is None:
        values = default_drive_values()
    vals = _check_uniform(values)
    if vals.size < 2:
        raise ValueError("candidate capture needs at least 2 drive values")
    if (projector.height, projector.width) != (scene.height, scene.width):
        raise ValueError("projector resolution must match scene dimensions")
    rng = np.random.Generator(np.random.Philox(seed))
    cands = []
    for v in vals:
        pattern = ProjectionPattern.constant(
            int(round(float(v))), scene.height, scene.width, scene.channels
        )
        shot = add_stokes(reflect(scene, project_pattern(projector, pattern)), scene.ambient)
        cands.append(_sensor_pass(shot, sensor_noise, sensor_bits, rng))
    background = _sensor_pass(scene.ambient, sensor_noise, sensor_bits, rng)
    return CandidateSet(tuple(cands), vals, background)


def default_projector(scene_or_dims, i0=1.0, channels=3) -> ProjectorModel:
    """Projector co-located with the camera, covering the scene pixel for pixel."""
    if isinstance(scene_or_dims, SceneModel):
        h, w, channels = scene_or_dims.height, scene_or_dims.width, scene_or_dims.channels
    else:
        h, w = scene_or_dims
    return ProjectorModel(height=h, width=w, i0_per_channel=(float(i0),) * channels)


@dataclass(frozen=True)
class SceneParams:
    """Knobs of the random scene generator."""

    n_regions: tuple = (1, 4)
    region_half_frac: tuple = (0.12, 0.30)
    glass_ks: tuple = GLASS_KS_RANGE
    bg_ks: tuple = BACKGROUND_KS_RANGE
    glass_albedo: tuple = (0.25, 0.55)
    bg_albedo: tuple = (0.2, 0.85)
    spec_reflectance: tuple = (0.75, 0.95)
    ambient_s0: tuple = (0.15, 0.35)
    ambient_dolp: float = 0.0
    glass_fraction: tuple = (0.3, 0.6)
    texture_amp: float = 0.15
    # Background clutter: patches of intrinsically polarized diffuse
    # material (varnish, plastic) whose DoLP can rival glass but whose
    # angle is set by the surface, not by the projector.  Flat man-made
    # surfaces concentrate around two dominant orientations; a smooth
    # notch keeps the mid-drive mirror angle free of clutter so renders
    # under the middle drive stay unambiguous.
    bg_diffuse_dolp: tuple = (0.05, 0.92)
    # Glass also scatters a little polarized light diffusely (edge and
    # surface scatter), which blurs its angle signature instead of
    # leaving it razor-sharp at the mirrored drive angle.
    glass_diffuse_dolp: tuple = (0.15, 0.6)
    # Two dominant clutter orientations.  The primary sits at 3pi/4; the
    # secondary sits at the mirror angle of a high drive, so strongly
    # off-primary clutter occupies a look the benchmark's renders can
    # also produce, instead of leaving that part of the angle axis
    # unpopulated.
    clutter_angle_modes: tuple = (3 * np.pi / 4,) + glass_drive_angles(values=(223,))
    clutter_mode_frac: float = 0.45
    clutter_mode_sigma: float = 0.08
    # Glassiness level above which clutter locks onto a dominant
    # orientation, and the split point steering locked patches (and
    # glass scatter) between the primary and secondary orientation.
    clutter_lock_threshold: float = 0.55
    lock_split: float = 0.55
    clutter_notch_angles: tuple | None = None
    clutter_notch_width: float = 0.6
    # Correlation length of the clutter fields as a fraction of the
    # image side.  Clutter patches are flat at the scale of a small
    # receptive field; only their boundaries curve.
    clutter_sigma_frac: float = 0.25
    max_tries: int = 100


def _region_mask(rng, h, w, params):
    half_lo, half_hi = params.region_half_frac
    scale = min(h, w)
    hy = rng.uniform(half_lo, half_hi) * scale
    hx = rng.uniform(half_lo, half_hi) * scale
    cy = rng.uniform(hy, h - hy)
    cx = rng.uniform(hx, w - hx)
    yy, xx = np.mgrid[0:h, 0:w]
    if rng.uniform() < 0.5:
        mask = (np.abs(yy - cy) <= hy) & (np.abs(xx - cx) <= hx)
    else:
        mask = ((yy - cy) / hy) ** 2 + ((xx - cx) / hx) ** 2 <= 1.0
    return mask


def _smooth_field(rng, h, w, amp):
    """A gentle multiplicative texture field around 1.0."""
    if amp <= 0:
        return np.ones((h, w))
    noise = rng.normal(0.0, 1.0, (h, w))
    smooth = gaussian_filter(noise, sigma=max(h, w) / 16.0)
    span = max(np.abs(smooth).max(), 1e-9)
    return 1.0 + amp * smooth / span


def _unit_field(rng, h, w, sigma_frac=0.125):
    """Smooth random field normalized into [0, 1]."""
    noise = gaussian_filter(rng.normal(0.0, 1.0, (h, w)), sigma=min(h, w) * sigma_frac)
    lo, hi = noise.min(), noise.max()
    if hi - lo < 1e-12:
        return np.full((h, w), 0.5)
    return (noise - lo) / (hi - lo)


def _angle_field(unit, modes, mode_frac, mode_sigma, notches, notch_width):
    """Map a smooth [0, 1] field to angles with a shaped marginal density.

    The density over [0, pi) mixes wrapped normals at ``modes`` (weight
    ``mode_frac``) with a uniform floor, then multiplies in a smooth dip
    at each notch angle.  The [0, 1] field goes through the inverse CDF,
    so the output stays spatially smooth and has no plateaus or atoms.
    """
    t = np.linspace(0.0, np.pi, 2049)
    density = np.full_like(t, (1.0 - mode_frac) / np.pi)
    for m in modes:
        lobe = np.zeros_like(t)
        for k in (-1, 0, 1):
            lobe += np.exp(-0.5 * ((t - m + k * np.pi) / mode_sigma) ** 2)
        density += mode_frac / len(modes) * lobe / (mode_sigma * np.sqrt(2 * np.pi))
    for a in notches:
        d = (t - a + np.pi / 2) % np.pi - np.pi / 2
        density *= 1.0 - 0.98 * np.exp(-0.5 * (d / (notch_width / 2.0)) ** 2)
    cdf = np.concatenate([[0.0], np.cumsum((density[1:] + density[:-1]) * np.diff(t) / 2.0)])
    cdf /= cdf[-1]
    return np.interp(unit, cdf, t)


def gen_scene(seed, dims, params: SceneParams = SceneParams()) -> SceneModel:
    """Deterministically generate a glass-on-background scene.

    Glass shows up as rectangular or elliptical regions with a high
    specular weight; the background stays mostly diffuse but carries
    patches of intrinsically polarized diffuse material whose angle
    varies smoothly across the frame.  Degree of polarization alone
    therefore does not separate the classes; the angle does.  Region
    draws are retried (deterministically) until the glass pixel fraction
    lands inside ``params.glass_fraction``, unless the region count is
    forced to zero.
    """
    h, w = dims
    if h <= 0 or w <= 0:
        raise ValueError("scene dimensions must be positive")
    lo_n, hi_n = params.n_regions
    frac_lo, frac_hi = params.glass_fraction
    rng = np.random.Generator(np.random.Philox(seed))

    mask = np.zeros((h, w), dtype=bool)
    if hi_n > 0:
        for attempt in range(params.max_tries):
            n = int(rng.integers(max(lo_n, 1), hi_n + 1))
            trial = np.zeros((h, w), dtype=bool)
            for _ in range(n):
                trial |= _region_mask(rng, h, w, params)
            frac = trial.mean()
            if frac_lo <= frac <= frac_hi:
                mask = trial
                break
        else:
            raise RuntimeError(
                f"could not hit glass fraction {params.glass_fraction} in "
                f"{params.max_tries} tries; params look inconsistent"
            )

    maskf = mask[:, :, None].astype(np.float64)
    sf = params.clutter_sigma_frac

    # One smooth "glassiness" field drives the background's albedo,
    # polarization degree, and angle alignment together.  Correlating
    # the three gives the background a contiguous population of patches
    # that are simultaneously bright, strongly polarized, and aligned
    # with the dominant clutter orientation; with independent fields
    # that population's mass would be a product of small fractions.
    u_bg = _unit_field(rng, h, w, sf)

    # Specular strength is a smooth within-scene field for both classes.
    # A near-constant glass k_s would pin the glass region's intensity
    # to a razor-thin band that identifies it regardless of
    # polarization.  Background k_s rides the glassiness field: the most
    # glass-like clutter is also the most mirror-like, so its appearance
    # under different projector drives actually moves.
    u_ks = _unit_field(rng, h, w, sf)
    gk_lo, gk_hi = params.glass_ks
    bk_lo, bk_hi = params.bg_ks
    k_s = np.where(
        mask,
        gk_lo + (gk_hi - gk_lo) * u_ks,
        bk_lo + (bk_hi - bk_lo) * u_bg,
    )
    k_s = np.clip(k_s * _smooth_field(rng, h, w, params.texture_amp / 2), 0.0, 1.0)
    # Keep the material classes inside their bands even after texturing.
    k_s = np.where(mask, np.clip(k_s, *params.glass_ks), np.clip(k_s, *params.bg_ks))

    # Albedo on both sides of the mask is grey (channel-uniform), so
    # clutter polarization is channel-coherent the way a specular
    # reflection is (a per-channel draw would hand the segmenter a
    # trivial colour cue).  Background albedo rides the glassiness
    # field, so bright patches and strongly polarized patches coincide.
    glass_alb = np.full(3, rng.uniform(*params.glass_albedo))
    alo, ahi = params.bg_albedo
    bg_alb = (alo + (ahi - alo) * u_bg)[:, :, None]
    albedo = maskf * glass_alb + (1.0 - maskf) * bg_alb
    albedo = np.clip(albedo * _smooth_field(rng, h, w, params.texture_amp)[:, :, None], 0.0, 1.0)

    spec = (float(rng.uniform(*params.spec_reflectance)),) * 3

    amb_s0 = float(rng.uniform(*params.ambient_s0))
    amb_aolp = float(rng.uniform(-np.pi / 2, np.pi / 2))
    s0_map = np.full((h, w, 3), amb_s0)
    cues = PolarCuesImage(
        np.full((h, w, 3), float(params.ambient_dolp)),
        np.full((h, w, 3), amb_aolp),
    )
    ambient = stokes_from_cues(s0_map, cues)

    # Polarized-diffuse clutter on the background: smooth patches whose
    # polarization degree can rival glass while their angle stays tied
    # to the surface.  Above the lock threshold the material switches
    # discretely (think laminate laid over paint, as abrupt as the glass
    # boundary itself): polarization degree jumps to the band ceiling
    # and the angle snaps exactly onto one of the two dominant
    # orientations.  Below it, clutter stays well under the ceiling so
    # the two populations occupy separated polarization bands.
    dolp_lo, dolp_hi = params.bg_diffuse_dolp
    lock = (~mask) & (u_bg > params.clutter_lock_threshold)
    stretched = np.clip((u_bg - 0.25) / 0.3, 0.0, 1.0)
    general_dolp = dolp_lo + (0.55 * dolp_hi - dolp_lo) * stretched
    locked_dolp = dolp_hi * (1.0 - 0.1 * (1.0 - u_bg))
    diffuse_dolp = np.where(lock, locked_dolp, general_dolp)
    g_lo, g_hi = params.glass_diffuse_dolp
    glass_dolp = g_lo + (g_hi - g_lo) * _unit_field(rng, h, w, sf)
    diffuse_dolp = np.where(mask, glass_dolp, diffuse_dolp)

    notches = params.clutter_notch_angles
    if notches is None:
        notches = glass_drive_angles(values=(128,))
    general = _angle_field(
        _unit_field(rng, h, w, sf), params.clutter_angle_modes,
        params.clutter_mode_frac, params.clutter_mode_sigma,
        notches, params.clutter_notch_width,
    )
    # Locked clutter and glass scatter snap exactly onto one of the two
    # dominant orientations (brushed and laminated surfaces share an
    # orientation to within the sensor's angular resolution); a second
    # smooth field chooses which one patch by patch.
    mode0 = params.clutter_angle_modes[0] % np.pi
    mode1 = params.clutter_angle_modes[-1] % np.pi
    u_split = _unit_field(rng, h, w, sf)
    snapped = np.where(u_split > params.lock_split, mode1, mode0)
    diffuse_aolp = np.where(mask | lock, snapped, general)

    return SceneModel(
        k_s=k_s,
        albedo=albedo,
        spec_reflectance=spec,
        diffuse_dolp=diffuse_dolp,
        diffuse_aolp=diffuse_aolp,
        ambient=ambient,
        glass_mask=mask.astype(np.uint8),
    )


def cc_benchmark_scene(dims=(96, 96), seed=0) -> SceneModel:
    """The specular benchmark scene for the color-constancy attack.

    Strongly specular everywhere, channel-symmetric materials, and an
    environment term with a pronounced polarized component at pi/4.  The
    polarized environment is what lets a channel-polarized projection
    raise the measured polarization of some color channels while
    cancelling others; with channel-symmetric materials a neutral
    projection leaves the channels perfectly balanced.
    """
    h, w = dims
    rng = np.random.Generator(np.random.Philox(seed))
    k_s = np.clip(0.82 + 0.08 * _smooth_field(rng, h, w, 1.0) - 0.08, 0.7, 0.95)
    albedo = np.full((h, w, 3), 0.25)
    ambient = stokes_from_cues(
        np.full((h, w, 3), 0.9),
        PolarCuesImage(np.full((h, w, 3), 0.5), np.full((h, w, 3), np.pi / 4)),
    )
    return SceneModel(
        k_s=k_s,
        albedo=albedo,
        spec_reflectance=(0.9, 0.9, 0.9),
        diffuse_dolp=np.zeros((h, w)),
        diffuse_aolp=np.zeros((h, w)),
        ambient=ambient,
        glass_mask=np.zeros((h, w), dtype=np.uint8),
    )


def degrade(image: StokesImage, noise_sigma=0.0, blur_sigma=0.0, seed=0) -> StokesImage:
    """Optical blur followed by sensor-side Gaussian noise.

    Blur is applied per component and channel with a Gaussian kernel;
    noise is zero-mean and independent per component.  With both sigmas
    at zero the input is returned unchanged.
    """
    if noise_sigma < 0 or blur_sigma < 0:
        raise ValueError("degradation sigmas must be non-negative")
    if noise_sigma == 0 and blur_sigma == 0:
        return image
    comps = [image.s0, image.s1, image.s2]
    if blur_sigma > 0:
        comps = [
            np.stack(
                [gaussian_filter(c[:, :, ch], sigma=blur_sigma) for ch in range(c.shape[2])],
                axis=-1,
            )
            for c in comps
        ]
    if noise_sigma > 0:
        rng = np.random.Generator(np.random.Philox(seed))
        comps = [c + rng.normal(0.0, noise_sigma, c.shape) for c in comps]
    return StokesImage(*comps)


# ---------------------------------------------------------------------------
# Directory persistence


def save_scene(directory, scene: SceneModel, extra=None) -> None:
    """Write a scene as .sraw rasters plus a manifest.json."""
    os.makedirs(directory, exist_ok=True)
    formats.write_sraw(os.path.join(directory, "k_s.sraw"), scene.k_s[None, :, :, None])
    formats.write_sraw(os.path.join(directory, "albedo.sraw"), scene.albedo[None])
    formats.write_sraw(
        os.path.join(directory, "diffuse.sraw"),
        np.stack([scene.diffuse_dolp[:, :, None], scene.diffuse_aolp[:, :, None]]),
    )
    formats.save_stokes(os.path.join(directory, "ambient.sraw"), scene.ambient)
    formats.write_sraw(
        os.path.join(directory, "glass_mask.sraw"),
        scene.glass_mask.astype(np.float64)[None, :, :, None],
    )
    manifest = {
        "kind": "scene",
        "height": scene.height,
        "width": scene.width,
        "channels": scene.channels,
        "spec_reflectance": list(scene.spec_reflectance),
        "glass_fraction": scene.glass_fraction,
        "files": {
            "k_s": "k_s.sraw",
            "albedo": "albedo.sraw",
            "diffuse": "diffuse.sraw",
            "ambient": "ambient.sraw",
            "glass_mask": "glass_mask.sraw",
        },
    }
    if extra:
        manifest.update(extra)
    _write_json(os.path.join(directory, "manifest.json"), manifest)


def load_scene(directory) -> SceneModel:
    manifest = _read_json(os.path.join(directory, "manifest.json"))
    if manifest.get("kind") != "scene":
        raise ValueError(f"{directory} does not hold a scene (kind={manifest.get('kind')!r})")
    k_s = formats.read_sraw(os.path.join(directory, "k_s.sraw"))[0, :, :, 0]
    albedo = formats.read_sraw(os.path.join(directory, "albedo.sraw"))[0]
    diffuse = formats.read_sraw(os.path.join(directory, "diffuse.sraw"))
    ambient = formats.load_stokes(os.path.join(directory, "ambient.sraw"))
    mask = formats.read_sraw(os.path.join(directory, "glass_mask.sraw"))[0, :, :, 0]
    return SceneModel(
        k_s=k_s,
        albedo=albedo,
        spec_reflectance=tuple(manifest["spec_reflectance"]),
        diffuse_dolp=diffuse[0, :, :, 0],
        diffuse_aolp=diffuse[1, :, :, 0],
        ambient=ambient,
        glass_mask=np.rint(mask).astype(np.uint8),
    )


def save_candidates(directory, cs: CandidateSet, extra=None) -> None:
    """Write a candidate set as one .sraw per capture plus a manifest.json."""
    os.makedirs(directory, exist_ok=True)
    names = []
    for i, cand in enumerate(cs.candidates):
        name = f"candidate_{i:02d}.sraw"
        formats.save_stokes(os.path.join(directory, name), cand)
        names.append(name)
    formats.save_stokes(os.path.join(directory, "background.sraw"), cs.background)
    manifest = {
        "kind": "candidates",
        "k": cs.k,
        "values": [float(v) for v in cs.values],
        "height": cs.height,
        "width": cs.width,
        "channels": cs.channels,
        "files": {"candidates": names, "background": "background.sraw"},
    }
    if extra:
        manifest.update(extra)
    _write_json(os.path.join(directory, "manifest.json"), manifest)


def load_candidates(directory) -> CandidateSet:
    manifest = _read_json(os.path.join(directory, "manifest.json"))
    if manifest.get("kind") != "candidates":
        raise ValueError(f"{directory} does not hold candidates")
    cands = tuple(
        formats.load_stokes(os.path.join(directory, name))
        for name in manifest["files"]["candidates"]
    )
    background = formats.load_stokes(os.path.join(directory, manifest["files"]["background"]))
    return CandidateSet(cands, np.asarray(manifest["values"]), background)


def _write_json(path, payload):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_json(path):
    with open(path, "r", encoding="ascii") as fh:
        return json.load(fh)
