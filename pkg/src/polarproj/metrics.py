"""Segmentation metrics and run-directory reporting."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np

from .colorcc import angular_error_degrees  # re-exported for convenience

__all__ = [
    "SegMetrics", "confusion", "iou", "ber", "angular_error_degrees", "report",
    "PAPER_REFERENCE",
]

# Published clean-model reference point used as a comparison header when
# reporting (glass segmentation on the real benchmark: IoU / BER).
PAPER_REFERENCE = {"name": "reference-clean", "iou": 0.957, "ber": 1.61}

# Report rows follow this fixed column order.
REPORT_COLUMNS = ("name", "grid", "world", "iou", "ber")
_NAME_ORDER = {"clean": 0, "random": 1, "plain": 2, "eot": 3}
_WORLD_ORDER = {"digital": 0, "physical": 1}


@dataclass(frozen=True)
class SegMetrics:
    tp: int
    tn: int
    fp: int
    fn: int
    iou: float
    ber: float


def _binarize(a, threshold):
    arr = np.asarray(a)
    if arr.dtype == bool:
        return arr
    return np.asarray(arr, dtype=np.float64) >= threshold


def confusion(pred, target, threshold=0.5) -> SegMetrics:
    """Confusion counts plus IoU and balanced error rate.

    Probabilistic inputs are binarized at ``threshold``.  IoU of two
    empty masks is 1 by convention.  BER drops the recall term of an
    absent class; if both classes are absent the image carries no
    evaluable signal and an error is raised.
    """
    p = _binarize(pred, threshold)
    t = _binarize(target, threshold)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    tp = int(np.sum(p & t))
    tn = int(np.sum(~p & ~t))
    fp = int(np.sum(p & ~t))
    fn = int(np.sum(~p & t))

    union = tp + fp + fn
    iou_val = 1.0 if union == 0 else tp / union

    pos = tp + fn
    neg = tn + fp
    recalls = []
    if pos > 0:
        recalls.append(tp / pos)
    if neg > 0:
        recalls.append(tn / neg)
    if not recalls:
        raise ValueError("cannot compute BER with no pixels in either class")
    ber_val = 100.0 * (1.0 - sum(recalls) / len(recalls))
    return SegMetrics(tp=tp, tn=tn, fp=fp, fn=fn, iou=iou_val, ber=ber_val)


def iou(pred, target, threshold=0.5) -> float:
    """Intersection over union of the positive class."""
    return confusion(pred, target, threshold).iou


def ber(pred, target, threshold=0.5) -> float:
    """Balanced error rate in percent: 100 * (1 - (TPR + TNR) / 2)."""
    return confusion(pred, target, threshold).ber


def _row_key(row):
    grid = row.get("grid")
    return (
        0 if row["name"] == "clean" else 1,
        grid if isinstance(grid, int) else -1,
        _NAME_ORDER.get(row["name"], 99),
        _WORLD_ORDER.get(row.get("world", ""), 99),
    )


def report(run_dirs, out_dir, paper_reference=False):
    """Aggregate run directories into report.csv and report.json.

    Each run directory must hold a ``metrics.json`` with a ``name``, an
    optional ``grid``, and per-world iou/ber entries.  Missing or
    unreadable runs are listed rather than fatal, and a partial table is
    still emitted.  Returns the report payload.
    """
    rows, missing = [], []
    for rd in run_dirs:
        path = os.path.join(rd, "metrics.json")
        try:
            with open(path, "r", encoding="ascii") as fh:
                payload = json.load(fh)
        except (OSError, json.JSONDecodeError):
            missing.append(str(rd))
            continue
        for world, vals in sorted(payload.get("worlds", {}).items()):
            rows.append({
                "name": payload.get("name", "unknown"),
                "grid": payload.get("grid"),
                "world": world,
                "iou": vals["iou"],
                "ber": vals["ber"],
            })
    rows.sort(key=_row_key)

    os.makedirs(out_dir, exist_ok=True)
    payload = {"columns": list(REPORT_COLUMNS), "rows": rows, "missing": missing}
    if paper_reference:
        payload["reference"] = dict(PAPER_REFERENCE)
    with open(os.path.join(out_dir, "report.json"), "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "report.csv"), "w", encoding="ascii", newline="") as fh:
        if paper_reference:
            fh.write(
                "# reference clean model: iou={iou} ber={ber}\n".format(**PAPER_REFERENCE)
            )
        writer = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    return payload
