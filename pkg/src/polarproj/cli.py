"""Command-line entry point.

Subcommands cover the full experiment loop: scene generation, candidate
capture, surrogate training, the grid attack, the color-constancy
attack, clean evaluation, and report aggregation.  Every subcommand is
deterministic given its flags; wall-clock timestamps only ever appear in
the single "timestamp" field of a run's config.json (scene generation,
capture and training omit even that, so their outputs are byte-identical
across reruns).

Exit codes: 0 success, 2 usage error, 3 unreadable or inconsistent
input, 4 numeric failure (diverged training, non-finite attack loss).
"""

from __future__ import annotations

import json
import os
from datetime import datetime, timezone

import click
import numpy as np

from . import attack as attack_mod
from . import formats, preview, scene as scene_mod, surrogate
from .colorcc import WHITE, angular_error_degrees, cc_estimate, wb_gains
from .metrics import report as report_op
from .projector import CHANNEL_MODES, channel_polarized_projection
from .stokes import add_stokes


class InputDataError(click.ClickException):
    exit_code = 3


class NumericError(click.ClickException):
    exit_code = 4


def _load(loader, path, what):
    try:
        return loader(path)
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputDataError(f"cannot load {what} from {path}: {exc}")


def _write_json(path, payload):
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_config(out, params, timestamp):
    payload = dict(params)
    if timestamp:
        payload["timestamp"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    _write_json(os.path.join(out, "config.json"), payload)


def _write_trajectory(out, rows):
    lines = ["iteration,loss,iou,ber\n"]
    for i, (loss, iou_v, ber_v) in enumerate(rows):
        lines.append(f"{i},{loss:.10g},{iou_v:.10g},{ber_v:.10g}\n")
    with open(os.path.join(out, "trajectory.csv"), "w", encoding="ascii", newline="") as fh:
        fh.writelines(lines)


def _capture(scene, k, i0):
    projector = scene_mod.default_projector(scene, i0=i0)
    values = scene_mod.default_drive_values(k)
    return projector, scene_mod.capture_candidates(scene, projector, values)


@click.group()
@click.version_option(package_name="polarproj")
def main():
    """Polarization-projector attack workbench."""


@main.command("gen-scene")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--height", type=click.IntRange(min=16), default=128, show_default=True)
@click.option("--width", type=click.IntRange(min=16), default=128, show_default=True)
@click.option(
    "--kind",
    type=click.Choice(["random", "cc-benchmark"]),
    default="random",
    show_default=True,
    help="Random glass-on-background scene, or the specular color-constancy benchmark.",
)
@click.option("--out", required=True, type=click.Path())
def gen_scene_cmd(seed, height, width, kind, out):
    """Generate a synthetic scene into a scene directory."""
    if kind == "cc-benchmark":
        scene = scene_mod.cc_benchmark_scene((height, width), seed)
    else:
        try:
            scene = scene_mod.gen_scene(seed, (height, width))
        except (ValueError, RuntimeError) as exc:
            raise InputDataError(str(exc))
    os.makedirs(out, exist_ok=True)
    scene_mod.save_scene(out, scene, extra={"seed": seed, "generator": kind})
    _write_config(
        out,
        {"subcommand": "gen-scene", "seed": seed, "height": height,
         "width": width, "kind": kind},
        timestamp=False,
    )


@main.command("capture")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--k", type=click.IntRange(min=2), default=scene_mod.DEFAULT_K, show_default=True)
@click.option("--i0", type=float, default=1.0, show_default=True,
              help="Projector radiance per channel.")
@click.option("--noise-sigma", type=float, default=0.0, show_default=True)
@click.option("--bits", type=click.IntRange(min=1, max=16), default=None,
              help="Sensor quantization depth; omit for an ideal sensor.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def capture_cmd(scene_dir, k, i0, noise_sigma, bits, seed, out):
    """Capture the candidate images of a scene under constant drives."""
    scene = _load(scene_mod.load_scene, scene_dir, "scene")
    projector = scene_mod.default_projector(scene, i0=i0)
    cs = scene_mod.capture_candidates(
        scene, projector, scene_mod.default_drive_values(k),
        sensor_noise=noise_sigma, sensor_bits=bits, seed=seed,
    )
    os.makedirs(out, exist_ok=True)
    scene_mod.save_candidates(out, cs, extra={"scene": os.path.abspath(scene_dir)})
    _write_config(
        out,
        {"subcommand": "capture", "scene": os.path.abspath(scene_dir), "k": k,
         "i0": i0, "noise_sigma": noise_sigma, "bits": bits, "seed": seed},
        timestamp=False,
    )


@main.command("train")
@click.option("--scene", "scene_dirs", required=True, multiple=True,
              type=click.Path(exists=True, file_okay=False),
              help="Training scene directory; repeat for more scenes.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--step", type=float, default=surrogate.TrainConfig.step, show_default=True)
@click.option("--max-iters", type=click.IntRange(min=1),
              default=surrogate.TrainConfig.max_iters, show_default=True)
@click.option("--out", required=True, type=click.Path())
def train_cmd(scene_dirs, seed, step, max_iters, out):
    """Train the segmentation surrogate on rendered scene captures."""
    scenes = [_load(scene_mod.load_scene, d, "scene") for d in scene_dirs]
    config = surrogate.TrainConfig(seed=seed, step=step, max_iters=max_iters)
    try:
        result = surrogate.seg_train(scenes, config)
    except surrogate.TrainingDivergedError as exc:
        raise NumericError(str(exc))
    os.makedirs(out, exist_ok=True)
    surrogate.save_model(out, result.model, extra={"stopped_at": result.stopped_at})
    with open(os.path.join(out, "losses.csv"), "w", encoding="ascii", newline="") as fh:
        fh.write("iteration,loss\n")
        for i, loss in enumerate(result.losses):
            fh.write(f"{i},{loss:.10g}\n")
    _write_config(
        out,
        {"subcommand": "train", "scenes": [os.path.abspath(d) for d in scene_dirs],
         "seed": seed, "step": step, "max_iters": max_iters,
         "drive_values": list(config.drive_values)},
        timestamp=False,
    )


def _emit_images(out, before, after):
    formats.save_stokes(os.path.join(out, "before.sraw"), before)
    formats.save_stokes(os.path.join(out, "after.sraw"), after)
    preview.save_previews(before, out, "before")
    preview.save_previews(after, out, "after")


@main.command("attack")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--grid", type=click.Choice([str(g) for g in attack_mod.GRID_SIZES]),
              default="8", show_default=True)
@click.option("--eot/--no-eot", default=False, show_default=True,
              help="Average gradients over degraded candidate views.")
@click.option("--baseline", type=click.Choice(["none", "random"]), default="none",
              show_default=True,
              help="'random' skips optimization and evaluates a random pattern.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--k", type=click.IntRange(min=2), default=scene_mod.DEFAULT_K, show_default=True)
@click.option("--i0", type=float, default=1.0, show_default=True)
@click.option("--iters", type=click.IntRange(min=1),
              default=attack_mod.AttackConfig.iters, show_default=True)
@click.option("--alpha", type=float, default=attack_mod.AttackConfig.alpha, show_default=True)
@click.option("--tau", type=float, default=attack_mod.AttackConfig.tau, show_default=True)
@click.option("--lam", type=float, default=attack_mod.AttackConfig.lam, show_default=True)
@click.option("--phys-noise-sigma", type=float, default=0.005, show_default=True,
              help="Capture noise for the physical-world evaluation.")
@click.option("--phys-blur-sigma", type=float, default=1.0, show_default=True,
              help="Capture blur for the physical-world evaluation.")
@click.option("--name", default=None,
              help="Run name in metrics.json; defaults to eot/plain/random.")
@click.option("--out", required=True, type=click.Path())
def attack_cmd(scene_dir, model_dir, grid, eot, baseline, seed, k, i0, iters,
               alpha, tau, lam, phys_noise_sigma, phys_blur_sigma, name, out):
    """Optimize (or sample) a grid perturbation and evaluate it."""
    grid = int(grid)
    scene = _load(scene_mod.load_scene, scene_dir, "scene")
    model = _load(surrogate.load_model, model_dir, "model")
    projector, cs = _capture(scene, k, i0)
    mask = scene.glass_mask.astype(np.float64)
    if name is None:
        name = "random" if baseline == "random" else ("eot" if eot else "plain")

    os.makedirs(out, exist_ok=True)
    config_payload = {
        "subcommand": "attack", "scene": os.path.abspath(scene_dir),
        "model": os.path.abspath(model_dir), "grid": grid, "eot": eot,
        "baseline": baseline, "seed": seed, "k": k, "i0": i0, "iters": iters,
        "alpha": alpha, "tau": tau, "lam": lam,
        "phys_noise_sigma": phys_noise_sigma, "phys_blur_sigma": phys_blur_sigma,
        "name": name,
    }
    _write_config(out, config_payload, timestamp=True)

    if baseline == "random":
        cells = attack_mod.cell_grid(cs.height, cs.width, grid)
        perturbation = attack_mod.random_perturbation(cs.k, cells, seed, grid)
        digital_img = attack_mod.stitch_composition(perturbation, cs)
        digital, probs = attack_mod.predict_metrics(model, digital_img, mask)
        loss = attack_mod.adversarial_loss(probs, mask, lam)
        _write_trajectory(out, [(loss, digital.iou, digital.ber)])
    else:
        config = attack_mod.AttackConfig(
            tau=tau, alpha=alpha, iters=iters, lam=lam, grid=grid, seed=seed,
            eot=attack_mod.EotConfig() if eot else None,
        )
        result = attack_mod.attack_optimize(cs, model, mask, config)
        _write_trajectory(out, zip(result.losses, result.ious, result.bers))
        if result.aborted:
            raise NumericError(f"attack aborted: {result.abort_reason}")
        # Digital world: the composed adversarial image itself.  The
        # quantized projection only exists in the physical world, where
        # apply_physical re-renders it below.
        digital_img = attack_mod.compose_adversarial(result.weights, cs, tau)
        digital, _ = attack_mod.predict_metrics(model, digital_img, mask)
        perturbation = attack_mod.quantize(result.weights)

    perturbation.to_pattern(cs.values, scene.height, scene.width, scene.channels) \
        .save(os.path.join(out, "perturbation.ppat"))

    clean = cs.candidates[cs.k // 2]
    rerendered = attack_mod.apply_physical(perturbation, scene, projector, cs)
    _emit_images(out, clean, rerendered)

    physical_img = attack_mod.apply_physical(
        perturbation, scene, projector, cs,
        noise_sigma=phys_noise_sigma, blur_sigma=phys_blur_sigma, seed=seed,
    )
    physical, _ = attack_mod.predict_metrics(model, physical_img, mask)

    _write_json(os.path.join(out, "metrics.json"), {
        "name": name,
        "grid": grid,
        "worlds": {
            "digital": {"iou": digital.iou, "ber": digital.ber},
            "physical": {"iou": physical.iou, "ber": physical.ber},
        },
    })


@main.command("cc-attack")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--mode", type=click.Choice(sorted(CHANNEL_MODES)), required=True)
@click.option("--i0", type=float, default=1.0, show_default=True)
@click.option("--top-q", type=click.FloatRange(min=0.0, max=1.0, min_open=True),
              default=0.1, show_default=True)
@click.option("--out", required=True, type=click.Path())
def cc_attack_cmd(scene_dir, mode, i0, top_q, out):
    """Channel-polarized projection attack on DoLP color constancy."""
    scene = _load(scene_mod.load_scene, scene_dir, "scene")
    if scene.channels != 3:
        raise InputDataError(
            f"color-constancy attack needs a 3-channel scene, got {scene.channels}"
        )
    projector = scene_mod.default_projector(scene, i0=i0)

    def rendered(m):
        incident = channel_polarized_projection(projector, m)
        return add_stokes(scene_mod.reflect(scene, incident), scene.ambient)

    before = rendered("neutral")
    after = rendered(mode)
    est_before = cc_estimate(before, top_q)
    est_after = cc_estimate(after, top_q)

    os.makedirs(out, exist_ok=True)
    _write_config(
        out,
        {"subcommand": "cc-attack", "scene": os.path.abspath(scene_dir),
         "mode": mode, "i0": i0, "top_q": top_q},
        timestamp=True,
    )
    _emit_images(out, before, after)
    _write_json(os.path.join(out, "cc_report.json"), {
        "mode": mode,
        "angular_error_deg": angular_error_degrees(est_after.chroma, WHITE),
        "neutral_error_deg": angular_error_degrees(est_before.chroma, WHITE),
        "estimate": [float(v) for v in est_after.chroma],
        "neutral_estimate": [float(v) for v in est_before.chroma],
        "wb_gains": [float(v) for v in wb_gains(est_after)],
        "degenerate": bool(est_after.degenerate),
    })


@main.command("eval")
@click.option("--scene", "scene_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--model", "model_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--k", type=click.IntRange(min=2), default=scene_mod.DEFAULT_K, show_default=True)
@click.option("--i0", type=float, default=1.0, show_default=True)
@click.option("--name", default="clean", show_default=True)
@click.option("--out", required=True, type=click.Path())
def eval_cmd(scene_dir, model_dir, k, i0, name, out):
    """Score the surrogate on a scene under the reference projection."""
    scene = _load(scene_mod.load_scene, scene_dir, "scene")
    model = _load(surrogate.load_model, model_dir, "model")
    _, cs = _capture(scene, k, i0)
    reference = cs.candidates[cs.k // 2]
    metrics, _ = attack_mod.predict_metrics(model, reference, scene.glass_mask)
    os.makedirs(out, exist_ok=True)
    _write_config(
        out,
        {"subcommand": "eval", "scene": os.path.abspath(scene_dir),
         "model": os.path.abspath(model_dir), "k": k, "i0": i0, "name": name},
        timestamp=True,
    )
    preview.save_previews(reference, out, "reference")
    _write_json(os.path.join(out, "metrics.json"), {
        "name": name,
        "grid": None,
        "worlds": {"digital": {"iou": metrics.iou, "ber": metrics.ber}},
    })


@main.command("report")
@click.option("--run", "run_dirs", required=True, multiple=True,
              type=click.Path(exists=True, file_okay=False),
              help="Run directory holding a metrics.json; repeat for more runs.")
@click.option("--paper-reference", is_flag=True, default=False,
              help="Annotate the table with the published clean reference point.")
@click.option("--out", required=True, type=click.Path())
def report_cmd(run_dirs, paper_reference, out):
    """Aggregate run metrics into report.csv / report.json."""
    report_op(list(run_dirs), out, paper_reference=paper_reference)


if __name__ == "__main__":
    main()
