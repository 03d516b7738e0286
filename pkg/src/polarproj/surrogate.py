"""Differentiable glass-segmentation surrogate.

A deliberately small convolutional model over polarization features
stands in for a full glass-segmentation network: three 3x3 convolution
stages (12 -> 12 -> 1 channels) with tanh between them and a sigmoid
output.  Glass regions reflect the projector specularly and therefore
show a high degree of polarization, which is the cue the model learns.

Forward, input gradient and parameter gradient are written out by hand
in numpy.  That keeps every number bitwise reproducible and gives the
attack an exact gradient path from the pixel loss back to the projector
drive weights.  tanh (rather than a kinked nonlinearity) keeps the whole
chain smooth, so central finite differences agree with the analytic
gradients to high precision.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import formats
from .stokes import DARK_S0, StokesImage

HIDDEN_CHANNELS = 12
FEATURES_PER_CHANNEL = 4
# Sigmoid outputs are clipped into the open interval so downstream logs
# never see an exact 0 or 1.
PROB_FLOOR = 1e-12


class TrainingDivergedError(RuntimeError):
    """Training drove the loss non-finite."""

    def __init__(self, iteration, recent_losses):
        super().__init__(
            f"loss became non-finite at iteration {iteration}; "
            f"recent losses: {[float(x) for x in recent_losses]}"
        )
        self.iteration = iteration
        self.recent_losses = list(recent_losses)


def features_from_stokes(stokes: StokesImage) -> np.ndarray:
    """Per-pixel polarization features for the surrogate.

    Four features per color channel, stacked feature-major:
    normalized intensity s0/max(s0), degree of polarization, and the
    polarization vector components s1/s0 and s2/s0 (equal to
    rho*cos(2 phi) and rho*sin(2 phi)).  Dark pixels contribute zeros, a
    fully dark image maps to all-zero features.
    """
    s0, s1, s2 = stokes.s0, stokes.s1, stokes.s2
    peak = float(s0.max()) if s0.size else 0.0
    if peak <= DARK_S0:
        return np.zeros(s0.shape[:2] + (FEATURES_PER_CHANNEL * stokes.channels,))
    lit = s0 > DARK_S0
    inv = np.divide(1.0, s0, out=np.zeros_like(s0), where=lit)
    intensity = s0 / peak
    px = s1 * inv
    py = s2 * inv
    rho = np.hypot(px, py)
    return np.concatenate([intensity, rho, px, py], axis=-1)


@dataclass(frozen=True)
class ConvSegModel:
    """Weights of the three-stage convolutional surrogate."""

    w1: np.ndarray  # (12, in, 3, 3)
    b1: np.ndarray  # (12,)
    w2: np.ndarray  # (12, 12, 3, 3)
    b2: np.ndarray  # (12,)
    w3: np.ndarray  # (1, 12, 3, 3)
    b3: np.ndarray  # (1,)

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValueError(f"non-finite values in {name}")
            object.__setattr__(self, name, arr)
        if self.w1.shape[2:] != (3, 3) or self.w2.shape != (HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3, 3) \
                or self.w3.shape != (1, HIDDEN_CHANNELS, 3, 3):
            raise ValueError("unexpected kernel shapes")

    @property
    def in_channels(self):
        return self.w1.shape[1]

    def params(self):
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)

    def flat(self):
        return np.concatenate([p.ravel() for p in self.params()])

    @classmethod
    def from_flat(cls, vector, in_channels):
        shapes = _param_shapes(in_channels)
        vector = np.asarray(vector, dtype=np.float64)
        total = sum(int(np.prod(s)) for s in shapes)
        if vector.size != total:
            raise ValueError(f"weight vector has {vector.size} entries, expected {total}")
        parts, at = [], 0
        for s in shapes:
            n = int(np.prod(s))
            parts.append(vector[at:at + n].reshape(s))
            at += n
        return cls(*parts)


def _param_shapes(in_channels):
    return (
        (HIDDEN_CHANNELS, in_channels, 3, 3), (HIDDEN_CHANNELS,),
        (HIDDEN_CHANNELS, HIDDEN_CHANNELS, 3, 3), (HIDDEN_CHANNELS,),
        (1, HIDDEN_CHANNELS, 3, 3), (1,),
    )


def init_model(seed=0, in_channels=FEATURES_PER_CHANNEL * 3) -> ConvSegModel:
    """Random small-weight initialization, deterministic in the seed."""
    rng = np.random.Generator(np.random.Philox(seed))
    parts = []
    for shape in _param_shapes(in_channels):
        if len(shape) == 4:
            fan_in = shape[1] * shape[2] * shape[3]
            parts.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape))
        else:
            parts.append(np.zeros(shape))
    return ConvSegModel(*parts)


# ---------------------------------------------------------------------------
# Batched same-padded 3x3 convolution via im2col.


def _im2col(x):
    """(B, H, W, C) -> (B, H, W, C*9) patches with zero padding."""
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B, H, W, C, 3, 3)
    b, h, w = x.shape[:3]
    return win.reshape(b, h, w, -1)


def _conv_forward(x, w, b):
    cols = _im2col(x)
    out = cols @ w.reshape(w.shape[0], -1).T + b
    return out, cols


def _conv_backward_input(g, w):
    """Gradient w.r.t. the convolution input given upstream (B, H, W, Cout)."""
    # Correlating the upstream with the spatially flipped kernels, with
    # in/out channel roles swapped, undoes the forward correlation.
    wt = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)  # (Cin, Cout, 3, 3)
    cols = _im2col(g)
    return cols @ wt.reshape(wt.shape[0], -1).T


def _conv_backward_params(cols, g):
    cout = g.shape[-1]
    gm = g.reshape(-1, cout)
    dw = gm.T @ cols.reshape(gm.shape[0], -1)
    return dw.reshape(cout, -1, 3, 3), gm.sum(axis=0)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _forward_batch(model, x):
    """Forward pass with cached intermediates for the backward passes."""
    z1, cols1 = _conv_forward(x, model.w1, model.b1)
    a1 = np.tanh(z1)
    z2, cols2 = _conv_forward(a1, model.w2, model.b2)
    a2 = np.tanh(z2)
    z3, cols3 = _conv_forward(a2, model.w3, model.b3)
    logits = z3[..., 0]
    probs = np.clip(_sigmoid(logits), PROB_FLOOR, 1.0 - PROB_FLOOR)
    cache = (cols1, a1, cols2, a2, cols3, logits, probs)
    return probs, cache


def _backward_to_input(model, cache, dprobs):
    cols1, a1, cols2, a2, cols3, logits, probs = cache
    dz3 = (dprobs * probs * (1.0 - probs))[..., None]
    da2 = _conv_backward_input(dz3, model.w3)
    dz2 = da2 * (1.0 - a2 * a2)
    da1 = _conv_backward_input(dz2, model.w2)
    dz1 = da1 * (1.0 - a1 * a1)
    return _conv_backward_input(dz1, model.w1)


def _backward_to_params(model, cache, dlogits):
    """Parameter gradients given upstream gradient at the logit plane."""
    cols1, a1, cols2, a2, cols3, logits, probs = cache
    dz3 = dlogits[..., None]
    dw3, db3 = _conv_backward_params(cols3, dz3)
    da2 = _conv_backward_input(dz3, model.w3)
    dz2 = da2 * (1.0 - a2 * a2)
    dw2, db2 = _conv_backward_params(cols2, dz2)
    da1 = _conv_backward_input(dz2, model.w2)
    dz1 = da1 * (1.0 - a1 * a1)
    dw1, db1 = _conv_backward_params(cols1, dz1)
    return dw1, db1, dw2, db2, dw3, db3


def seg_forward(model: ConvSegModel, features: np.ndarray) -> np.ndarray:
    """Per-pixel glass probability for one feature stack (H, W, F)."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 3 or features.shape[2] != model.in_channels:
        raise ValueError(
            f"features must be (H, W, {model.in_channels}), got {features.shape}"
        )
    probs, _ = _forward_batch(model, features[None])
    return probs[0]


def seg_grad(model: ConvSegModel, features: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Gradient of sum(upstream * seg_forward) w.r.t. the features."""
    features = np.asarray(features, dtype=np.float64)
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != features.shape[:2]:
        raise ValueError("upstream must match the spatial shape of the features")
    _, cache = _forward_batch(model, features[None])
    return _backward_to_input(model, cache, upstream[None])[0]


def forward_with_input_grad(model, features, dloss_dprobs):
    """One fused pass: probabilities plus dloss/dfeatures.

    The attack needs both and shares the cached intermediates.
    """
    probs, cache = _forward_batch(model, features[None])
    dfeat = _backward_to_input(model, cache, dloss_dprobs[None])[0]
    return probs[0], dfeat


# ---------------------------------------------------------------------------
# Training


@dataclass(frozen=True)
class TrainConfig:
    """Full-batch training with a fixed step and plateau stopping.

    Plain gradient descent with a fixed step is the default: it is the
    simplest deterministic rule that reaches the plateau, and simplicity
    wins over speed here.  Adam is available for experiments where the
    extra per-parameter scaling is worth the bookkeeping.
    """

    seed: int = 0
    step: float = 0.3
    max_iters: int = 300
    plateau_window: int = 40
    plateau_tol: float = 1e-4
    drive_values: tuple = (0, 128, 255)
    optimizer: str = "gd"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.step <= 0 or self.max_iters < 1:
            raise ValueError("step must be positive and max_iters at least 1")
        if self.optimizer not in ("adam", "gd"):
            raise ValueError("optimizer must be 'adam' or 'gd'")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass(frozen=True)
class TrainResult:
    model: ConvSegModel
    losses: np.ndarray
    stopped_at: int


def training_batch(scenes, drive_values=(0, 128, 255), projector_i0=1.0):
    """Feature/label batch from captures under a few constant projections."""
    from .projector import ProjectionPattern, project_pattern
    from .scene import default_projector, reflect
    from .stokes import add_stokes

    xs, ys = [], []
    for scene in scenes:
        projector = default_projector(scene, i0=projector_i0)
        label = scene.glass_mask.astype(np.float64)
        for v in drive_values:
            pattern = ProjectionPattern.constant(
                int(v), scene.height, scene.width, scene.channels
            )
            shot = add_stokes(reflect(scene, project_pattern(projector, pattern)), scene.ambient)
            xs.append(features_from_stokes(shot))
            ys.append(label)
    return np.stack(xs), np.stack(ys)


def _bce_from_logits(logits, y):
    # log(1 + e^z) - y*z, numerically stable for either sign of z.
    return float(np.mean(np.logaddexp(0.0, logits) - y * logits))


def seg_train(scenes, config: TrainConfig = TrainConfig()) -> TrainResult:
    """Fit the surrogate on rendered captures of the given scenes.

    Full-batch descent on the mean pixel binary cross-entropy; training
    stops early once the best loss stops improving by ``plateau_tol``
    (relative) within ``plateau_window`` iterations.
    """
    x, y = training_batch(scenes, drive_values=config.drive_values)
    model = init_model(config.seed, in_channels=x.shape[-1])
    n = y.size
    m_acc = [np.zeros_like(p) for p in model.params()]
    v_acc = [np.zeros_like(p) for p in model.params()]
    losses = []
    best = np.inf
    best_iter = 0
    for it in range(config.max_iters):
        probs, cache = _forward_batch(model, x)
        logits = cache[5]
        loss = _bce_from_logits(logits, y)
        if not np.isfinite(loss):
            raise TrainingDivergedError(it, losses[-5:] + [loss])
        losses.append(loss)
        if loss < best * (1.0 - config.plateau_tol):
            best = loss
            best_iter = it
        elif it - best_iter >= config.plateau_window:
            break
        dlogits = (probs - y) / n
        grads = _backward_to_params(model, cache, dlogits)
        # Decoupled L2 shrinkage on the conv weights (never the biases):
        # it caps the logit scale so the output stays off the saturated
        # tails of the sigmoid, which keeps downstream gradients alive.
        decay = 1.0 - config.step * config.weight_decay
        if config.optimizer == "gd":
            stepped = [p - config.step * g for p, g in zip(model.params(), grads)]
            model = ConvSegModel(
                *(p * decay if j % 2 == 0 else p for j, p in enumerate(stepped))
            )
            continue
        t = it + 1
        new_params = []
        for j, (p, g) in enumerate(zip(model.params(), grads)):
            m_acc[j] = config.beta1 * m_acc[j] + (1.0 - config.beta1) * g
            v_acc[j] = config.beta2 * v_acc[j] + (1.0 - config.beta2) * g * g
            m_hat = m_acc[j] / (1.0 - config.beta1 ** t)
            v_hat = v_acc[j] / (1.0 - config.beta2 ** t)
            stepped = p - config.step * m_hat / (np.sqrt(v_hat) + config.eps)
            new_params.append(stepped * decay if j % 2 == 0 else stepped)
        model = ConvSegModel(*new_params)
    return TrainResult(model=model, losses=np.asarray(losses), stopped_at=len(losses))


# ---------------------------------------------------------------------------
# Model persistence: a flat weight vector plus a JSON descriptor.


def save_model(directory, model: ConvSegModel, extra=None) -> None:
    os.makedirs(directory, exist_ok=True)
    formats.save_flat(os.path.join(directory, "weights.sraw"), model.flat())
    desc = {
        "kind": "conv_seg_model",
        "in_channels": model.in_channels,
        "hidden_channels": HIDDEN_CHANNELS,
        "kernel": 3,
        "nonlinearity": "tanh",
        "output": "sigmoid",
        "weights": "weights.sraw",
    }
    if extra:
        desc.update(extra)
    with open(os.path.join(directory, "model.json"), "w", encoding="ascii") as fh:
        json.dump(desc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(directory) -> ConvSegModel:
    with open(os.path.join(directory, "model.json"), "r", encoding="ascii") as fh:
        desc = json.load(fh)
    if desc.get("kind") != "conv_seg_model":
        raise ValueError(f"{directory} does not hold a segmentation model")
    vector = formats.load_flat(os.path.join(directory, desc["weights"]))
    return ConvSegModel.from_flat(vector, desc["in_channels"])
