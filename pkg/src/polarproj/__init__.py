"""Simulator and attack workbench for polarization-projecting adversaries.

The package models an LCD projector whose front polarizer has been
removed, so each drive value rotates the angle of linearly polarized
light instead of changing its intensity.  On top of that sit a
polarimetric scene renderer, a differentiable glass-segmentation
surrogate, a grid-constrained whitebox attack, and a channel-polarized
blackbox attack on DoLP-based color constancy.
"""

from .stokes import (
    DARK_S0,
    MOSAIC_OFFSETS,
    PolarCuesImage,
    RawPolarImage,
    StokesImage,
    add_stokes,
    cues_from_stokes,
    demosaic,
    malus_intensity,
    mosaic,
    scale_stokes,
    sense,
    stokes_from_cues,
    stokes_from_raw,
)
from .projector import (
    BACK_POLARIZER,
    CHANNEL_MODES,
    MAX_ROTATION,
    ProjectionPattern,
    ProjectorModel,
    channel_polarized_projection,
    project_pattern,
    value_to_aolp,
)
from .scene import (
    CandidateSet,
    SceneModel,
    SceneParams,
    capture_candidates,
    cc_benchmark_scene,
    default_drive_values,
    default_projector,
    degrade,
    gen_scene,
    load_candidates,
    load_scene,
    reflect,
    save_candidates,
    save_scene,
)
from .surrogate import (
    ConvSegModel,
    TrainConfig,
    TrainingDivergedError,
    TrainResult,
    features_from_stokes,
    init_model,
    load_model,
    save_model,
    seg_forward,
    seg_grad,
    seg_train,
)
from .attack import (
    AttackConfig,
    AttackResult,
    AttackWeights,
    EotConfig,
    GRID_SIZES,
    NumericFailure,
    Perturbation,
    adversarial_loss,
    adversarial_loss_grad,
    apply_physical,
    attack_optimize,
    compose_adversarial,
    eot_sample,
    quantize,
    random_perturbation,
    stitch_composition,
)
from .colorcc import (
    IlluminantEstimate,
    angular_error_degrees,
    cc_estimate,
    wb_gains,
    white_balance,
)
from .metrics import SegMetrics, ber, confusion, iou, report
from .formats import (
    FormatError,
    load_raw,
    load_stokes,
    read_ppat,
    read_sraw,
    save_raw,
    save_stokes,
    write_ppat,
    write_sraw,
)

__version__ = "0.1.0"
