"""Grid-perturbation attack on the segmentation surrogate.

The attacker controls one drive-value choice per grid cell of the
projected image.  During optimization the discrete choice is relaxed to
a temperature softmax over the captured candidate images:

    S_ae = sum_i softmax(omega / tau)_i * (S_i - S_b) + S_b*

which is differentiable in the per-cell logits omega, so the whole chain
(composition -> polarization features -> surrogate -> loss) yields exact
gradients for plain gradient ascent.  The final logits are quantized per
cell via argmax into a projector pattern.

Expectation-over-transformations (EOT) averages the ascent gradient over
degraded views of the candidate set: per-candidate blur and noise, plus
a rescaled background standing in for ambient drift.  Because the
mixture weights sum to one per cell, rescaling the background only has
an effect when it enters as the reinstated term (S_b*) while the
subtraction keeps the original background; that is how it is wired here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import CandidateSet, SceneModel, degrade, reflect
from .projector import ProjectorModel, ProjectionPattern, project_pattern
from .stokes import DARK_S0, StokesImage, add_stokes
from .surrogate import ConvSegModel, FEATURES_PER_CHANNEL, _backward_to_input, _forward_batch, features_from_stokes
from .metrics import confusion

GRID_SIZES = (8, 16, 32)
PROB_CLAMP = 1e-7


class NumericFailure(RuntimeError):
    """A numeric quantity that must stay finite did not."""


@dataclass(frozen=True)
class EotConfig:
    """Degradation distribution sampled during robust optimization."""

    noise_sigma: float = 0.005
    blur_sigma: float = 1.0
    bg_scale_range: tuple = (0.9, 1.1)
    samples_per_step: int = 4

    def __post_init__(self):
        lo, hi = self.bg_scale_range
        if not (0.0 < lo <= hi < 2.0):
            raise ValueError("bg_scale_range must satisfy 0 < lo <= hi < 2")
        if self.noise_sigma < 0 or self.blur_sigma < 0 or self.samples_per_step < 1:
            raise ValueError("bad EOT configuration")


@dataclass(frozen=True)
class AttackConfig:
    tau: float = 0.2
    alpha: float = 0.3
    iters: int = 600
    lam: float = 1.0
    grid: int = 8
    seed: int = 0
    eot: EotConfig | None = None

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.grid not in GRID_SIZES:
            raise ValueError(f"grid must be one of {GRID_SIZES}")
        if self.iters < 1:
            raise ValueError("iters must be at least 1")


@dataclass(frozen=True)
class AttackWeights:
    """Per-cell candidate logits, shape (grid_h, grid_w, K)."""

    omega: np.ndarray
    grid: int

    def __post_init__(self):
        omega = np.asarray(self.omega, dtype=np.float64)
        if omega.ndim != 3:
            raise ValueError("omega must be (grid_h, grid_w, K)")
        if not np.isfinite(omega).all():
            raise ValueError("omega must be finite")
        if self.grid not in GRID_SIZES:
            raise ValueError(f"grid must be one of {GRID_SIZES}")
        object.__setattr__(self, "omega", omega)

    @classmethod
    def zeros(cls, image_height, image_width, grid, k):
        gh, gw = cell_grid(image_height, image_width, grid)
        return cls(np.zeros((gh, gw, k)), grid)

    @property
    def k(self):
        return self.omega.shape[2]

    def coefficients(self, tau):
        return softmax_cells(self.omega, tau)


@dataclass(frozen=True)
class Perturbation:
    """Quantized attack: one candidate index per grid cell."""

    indices: np.ndarray
    grid: int
    k: int

    def __post_init__(self):
        idx = np.asarray(self.indices)
        if idx.ndim != 2 or not np.issubdtype(idx.dtype, np.integer):
            raise ValueError("indices must be a 2-d integer array")
        if ((idx < 0) | (idx >= self.k)).any():
            raise ValueError("candidate index out of range")
        object.__setattr__(self, "indices", idx.astype(np.int64))

    def to_pattern(self, values, height, width, channels=3) -> ProjectionPattern:
        """Expand the per-cell choices into a full drive pattern."""
        values = np.asarray(values)
        if values.size != self.k:
            raise ValueError("drive value table does not match candidate count")
        vmap = np.rint(values[self.indices]).astype(np.uint8)
        full = expand_cells(vmap, self.grid, height, width)
        return ProjectionPattern(np.repeat(full[:, :, None], channels, axis=2))


@dataclass(frozen=True)
class AttackResult:
    weights: AttackWeights            # final logits
    losses: np.ndarray                # objective value per iteration
    ious: np.ndarray                  # monitoring IoU per iteration
    bers: np.ndarray                  # monitoring BER per iteration
    weights_history: tuple = ()       # logits at the start of each iteration
    aborted: bool = False
    abort_reason: str = ""


def cell_grid(height, width, grid):
    """Number of cells covering an image, ceiling division."""
    return (-(-height // grid), -(-width // grid))


def expand_cells(cells, grid, height, width):
    """Repeat per-cell values up to pixel resolution and crop."""
    out = np.repeat(np.repeat(cells, grid, axis=0), grid, axis=1)
    return out[:height, :width]


def _sum_cells(pixel_map, grid, gh, gw):
    """Sum a per-pixel map over grid cells; inverse adjoint of expand_cells."""
    h, w = pixel_map.shape[:2]
    pad_h, pad_w = gh * grid - h, gw * grid - w
    if pad_h or pad_w:
        pad = [(0, pad_h), (0, pad_w)] + [(0, 0)] * (pixel_map.ndim - 2)
        pixel_map = np.pad(pixel_map, pad)
    shaped = pixel_map.reshape((gh, grid, gw, grid) + pixel_map.shape[2:])
    return shaped.sum(axis=(1, 3))


def softmax_cells(omega, tau):
    """Temperature softmax over the last axis, numerically shifted."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    z = np.asarray(omega, dtype=np.float64) / tau
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _stack_candidates(cs: CandidateSet):
    return np.stack([c.stacked() for c in cs.candidates])  # (K, H, W, C, 3)


def compose_adversarial(
    weights: AttackWeights,
    cs: CandidateSet,
    tau: float = 0.2,
    background_star: StokesImage | None = None,
) -> StokesImage:
    """Softmax-weighted candidate composition.

    Per pixel: the weighted sum of candidate differences against the
    background, plus the reinstated background (``background_star``,
    defaulting to the capture's own background).
    """
    if weights.k != cs.k:
        raise ValueError(f"weights expect K={weights.k}, candidate set has K={cs.k}")
    gh, gw = cell_grid(cs.height, cs.width, weights.grid)
    if weights.omega.shape[:2] != (gh, gw):
        raise ValueError(
            f"omega grid {weights.omega.shape[:2]} does not tile "
            f"{cs.height}x{cs.width} at cell size {weights.grid}"
        )
    bstar = cs.background if background_star is None else background_star
    diffs = _stack_candidates(cs) - cs.background.stacked()
    coeff = expand_cells(weights.coefficients(tau), weights.grid, cs.height, cs.width)
    mixed = np.einsum("hwk,khwcs->hwcs", coeff, diffs, optimize=True)
    return StokesImage.from_stacked(mixed + bstar.stacked())


def stitch_composition(perturbation: Perturbation, cs: CandidateSet) -> StokesImage:
    """Hard per-cell candidate selection (the digital view of a pattern)."""
    if perturbation.k != cs.k:
        raise ValueError("perturbation and candidate set disagree on K")
    stacked = _stack_candidates(cs)
    idx = expand_cells(perturbation.indices, perturbation.grid, cs.height, cs.width)
    picked = np.take_along_axis(stacked, idx[None, :, :, None, None], axis=0)[0]
    return StokesImage.from_stacked(picked)


def quantize(weights: AttackWeights) -> Perturbation:
    """Argmax per cell; ties resolve to the lowest candidate index."""
    return Perturbation(
        indices=np.argmax(weights.omega, axis=-1), grid=weights.grid, k=weights.k
    )


def random_perturbation(k, cells, seed, grid=8) -> Perturbation:
    """Uniformly random candidate choice per cell."""
    gh, gw = cells
    rng = np.random.Generator(np.random.Philox(seed))
    return Perturbation(indices=rng.integers(0, k, size=(gh, gw)), grid=grid, k=k)


def eot_sample(cs: CandidateSet, eot: EotConfig, seed) -> CandidateSet:
    """One degraded view of a candidate set.

    Every candidate is blurred and noised; the background is rescaled by
    a single draw from the configured range.
    """
    ss = np.random.SeedSequence(seed)
    children = ss.spawn(cs.k + 1)
    cands = tuple(
        degrade(c, eot.noise_sigma, eot.blur_sigma, seed=children[i])
        for i, c in enumerate(cs.candidates)
    )
    rng = np.random.Generator(np.random.Philox(children[cs.k]))
    r = float(rng.uniform(*eot.bg_scale_range))
    scaled = StokesImage(cs.background.s0 * r, cs.background.s1 * r, cs.background.s2 * r)
    return CandidateSet(cands, cs.values, scaled)


def adversarial_loss(pred, target, lam=1.0):
    """Objective the attack ascends: BCE plus a class-balanced flip term.

    The first term is the mean binary cross-entropy of the prediction
    against the true mask; raising it makes predictions wrong wherever
    pixels are plentiful.  The flip term weighs both classes equally so
    that driving background pixels toward positive predictions pays off
    even when background dominates the frame:

        flip = -mean[y=0] log(1 - pred) - mean[y=1] log(pred)

    A class that is absent from the mask simply drops its term.
    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs.
    """
    loss, _ = adversarial_loss_grad(pred, target, lam)
    return loss


def adversarial_loss_grad(pred, target, lam=1.0):
    """Loss value together with its gradient in the prediction plane."""
    pred = np.asarray(pred, dtype=np.float64)
    y = np.asarray(target, dtype=np.float64)
    if pred.shape != y.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {y.shape}")
    p = np.clip(pred, PROB_CLAMP, 1.0 - PROB_CLAMP)
    inside = (pred > PROB_CLAMP) & (pred < 1.0 - PROB_CLAMP)
    n = p.size
    pos = y >= 0.5
    n1 = int(pos.sum())
    n0 = n - n1

    bce = -float(np.sum(y * np.log(p) + (1.0 - y) * np.log1p(-p))) / n
    grad = (-y / p + (1.0 - y) / (1.0 - p)) / n

    flip = 0.0
    if n0:
        flip -= float(np.sum(np.log1p(-p[~pos]))) / n0
        grad[~pos] += lam / (n0 * (1.0 - p[~pos]))
    if n1:
        flip -= float(np.sum(np.log(p[pos]))) / n1
        grad[pos] -= lam / (n1 * p[pos])

    grad = np.where(inside, grad, 0.0)
    return bce + lam * flip, grad


def _feature_backward(stacked, dfeat, peak):
    """Pull a feature-plane gradient back to Stokes components.

    ``stacked`` is the composed image (H, W, C, 3); ``dfeat`` has the
    feature layout of features_from_stokes.  The normalizer ``peak`` is
    treated as a constant: the emitted s0 does not depend on the attack
    weights (that is the stealth property), so its maximum does not
    either, except through EOT noise where the effect is negligible.
    """
    s0 = stacked[..., 0]
    s1 = stacked[..., 1]
    s2 = stacked[..., 2]
    c = s0.shape[-1]
    d_int = dfeat[..., :c]
    d_rho = dfeat[..., c:2 * c]
    d_px = dfeat[..., 2 * c:3 * c]
    d_py = dfeat[..., 3 * c:4 * c]

    lit = s0 > DARK_S0
    inv_s0 = np.divide(1.0, s0, out=np.zeros_like(s0), where=lit)
    px = s1 * inv_s0
    py = s2 * inv_s0
    rho = np.hypot(px, py)
    inv_rho = np.divide(1.0, rho, out=np.zeros_like(rho), where=rho > 0)

    ds0 = d_int / peak - inv_s0 * (d_rho * rho + d_px * px + d_py * py)
    ds1 = inv_s0 * (d_px + d_rho * px * inv_rho)
    ds2 = inv_s0 * (d_py + d_rho * py * inv_rho)
    out = np.stack([ds0, ds1, ds2], axis=-1)
    out[~lit] = 0.0
    return out


def attack_objective_grad(omega, tau, grid, diffs, bstar_stacked, model, y, lam):
    """Value and gradient of the full attack objective at given logits.

    Runs composition, features, the surrogate and the loss forward, then
    the exact adjoint chain back to the per-cell logits.  Returns
    (loss, dloss/domega, probs).
    """
    gh, gw, k = omega.shape
    grid_h, grid_w = diffs.shape[1], diffs.shape[2]
    coeff = softmax_cells(omega, tau)
    coeff_pix = expand_cells(coeff, grid, grid_h, grid_w)
    stacked = np.einsum("hwk,khwcs->hwcs", coeff_pix, diffs, optimize=True) + bstar_stacked

    s0 = stacked[..., 0]
    peak = max(float(s0.max()), DARK_S0)
    feats = _features_from_stacked(stacked, peak)
    probs, cache = _forward_batch(model, feats[None])
    probs = probs[0]
    loss, dprobs = adversarial_loss_grad(probs, y, lam)
    dfeat = _backward_to_input(model, cache, dprobs[None])[0]
    dstacked = _feature_backward(stacked, dfeat, peak)

    dcoeff_pix = np.einsum("hwcs,khwcs->hwk", dstacked, diffs, optimize=True)
    dcoeff = _sum_cells(dcoeff_pix, grid, gh, gw)
    inner = (dcoeff * coeff).sum(axis=-1, keepdims=True)
    domega = coeff * (dcoeff - inner) / tau
    return loss, domega, probs


def _features_from_stacked(stacked, peak):
    s0 = stacked[..., 0]
    lit = s0 > DARK_S0
    inv = np.divide(1.0, s0, out=np.zeros_like(s0), where=lit)
    px = stacked[..., 1] * inv
    py = stacked[..., 2] * inv
    rho = np.hypot(px, py)
    intensity = s0 / peak
    return np.concatenate([intensity, rho, px, py], axis=-1)


def attack_optimize(
    cs: CandidateSet,
    model: ConvSegModel,
    target_mask,
    config: AttackConfig = AttackConfig(),
) -> AttackResult:
    """Gradient-ascend the per-cell logits against the surrogate.

    Logits start at zero (the uniform mixture) and take ``iters`` raw
    ascent steps of size ``alpha``.  With EOT enabled, each step averages
    the gradient over ``samples_per_step`` degraded candidate views in a
    fixed order; candidate blur is hoisted out of the loop since its
    kernel never changes, and fresh noise and background scales are drawn
    per sample from one seeded counter-based stream.

    The per-iteration loss is the sample mean; the monitoring IoU/BER
    trajectory is computed from the first sample's prediction.  A
    non-finite loss aborts the run, returning the trajectory so far with
    ``aborted`` set.
    """
    y = np.asarray(target_mask, dtype=np.float64)
    if y.shape != (cs.height, cs.width):
        raise ValueError("target mask does not match capture dimensions")
    if model.in_channels != FEATURES_PER_CHANNEL * cs.channels:
        raise ValueError(
            f"model expects {model.in_channels} feature channels, captures give "
            f"{FEATURES_PER_CHANNEL * cs.channels}"
        )
    gh, gw = cell_grid(cs.height, cs.width, config.grid)
    omega = np.zeros((gh, gw, cs.k))

    base = _stack_candidates(cs)
    bg = cs.background.stacked()
    if config.eot is not None:
        blurred = np.stack([
            degrade(c, 0.0, config.eot.blur_sigma).stacked() for c in cs.candidates
        ])
        samples = config.eot.samples_per_step
    else:
        blurred = base
        samples = 1
    diffs_clean = blurred - bg
    rng = np.random.Generator(np.random.Philox(config.seed))

    losses, ious, bers, history = [], [], [], []
    aborted = False
    reason = ""
    for it in range(config.iters):
        history.append(omega.copy())
        loss_acc = 0.0
        grad_acc = np.zeros_like(omega)
        first_probs = None
        for s in range(samples):
            if config.eot is not None:
                noise = rng.normal(0.0, config.eot.noise_sigma, base.shape) \
                    if config.eot.noise_sigma > 0 else 0.0
                r = rng.uniform(*config.eot.bg_scale_range)
                diffs = diffs_clean + noise
                bstar = bg * r
            else:
                diffs = diffs_clean
                bstar = bg
            loss, domega, probs = attack_objective_grad(
                omega, config.tau, config.grid, diffs, bstar, model, y, config.lam
            )
            loss_acc += loss
            grad_acc += domega
            if s == 0:
                first_probs = probs
        loss_mean = loss_acc / samples
        m = confusion(first_probs, y)
        losses.append(loss_mean)
        ious.append(m.iou)
        bers.append(m.ber)
        if not np.isfinite(loss_mean):
            aborted = True
            reason = f"non-finite loss at iteration {it}"
            break
        omega = omega + config.alpha * (grad_acc / samples)

    return AttackResult(
        weights=AttackWeights(omega, config.grid),
        losses=np.asarray(losses),
        ious=np.asarray(ious),
        bers=np.asarray(bers),
        weights_history=tuple(AttackWeights(w, config.grid) for w in history),
        aborted=aborted,
        abort_reason=reason,
    )


def apply_physical(
    perturbation: Perturbation,
    scene: SceneModel,
    projector: ProjectorModel,
    cs: CandidateSet,
    *,
    noise_sigma=0.0,
    blur_sigma=0.0,
    seed=0,
) -> StokesImage:
    """Re-render a quantized perturbation through the full scene model.

    The perturbation expands into a projector pattern via the candidate
    drive values and the image is re-simulated from scratch (not stitched
    from the captures), modeling the digital-to-physical gap.  Optional
    degradation adds capture blur and noise.
    """
    pattern = perturbation.to_pattern(
        cs.values, scene.height, scene.width, scene.channels
    )
    shot = add_stokes(reflect(scene, project_pattern(projector, pattern)), scene.ambient)
    if noise_sigma > 0 or blur_sigma > 0:
        shot = degrade(shot, noise_sigma, blur_sigma, seed=seed)
    return shot


def predict_metrics(model: ConvSegModel, image: StokesImage, mask, threshold=0.5):
    """Segment an image and score it against a mask; (metrics, probs)."""
    from .surrogate import seg_forward

    probs = seg_forward(model, features_from_stokes(image))
    return confusion(probs, mask, threshold), probs
