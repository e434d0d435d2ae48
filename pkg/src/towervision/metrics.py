"""Detection quality metrics and physical area measurement.

Two metrics over (ground truth, predictions) pairs:

* Any-overlap precision/recall: a kept prediction is correct when its mask
  shares at least one pixel with a same-class ground-truth mask, and a
  ground-truth instance counts as detected when any kept same-class
  prediction touches it. One prediction may validate several targets and
  vice versa.
* Aggregate IoU: intersection and union areas of the per-image mask unions
  are summed over the whole dataset before dividing, instead of averaging
  per-image ratios.

Metrics that are undefined at a threshold (no kept predictions, or no
ground truth) are reported as ``None``, never coerced to 0 or 1.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import ClassLabel, ConfigurationError, Instance, ShapeMismatchError
from .tile import PredictionSet

ALL_CLASSES = None  # class-filter value selecting every class


@dataclass
class EvalPair:
    """Ground truth and full-frame predictions for one image."""

    image_id: str
    ground_truth: list[Instance]
    predictions: PredictionSet

    def __post_init__(self) -> None:
        if self.predictions.window_index is not None:
            raise ShapeMismatchError("evaluation requires full-frame predictions")
        shape = (self.predictions.height, self.predictions.width)
        for inst in self.ground_truth:
            if inst.confidence is not None:
                raise ShapeMismatchError("ground truth must not carry confidences")
            if inst.mask.shape != shape:
                raise ShapeMismatchError(
                    f"ground-truth mask {inst.mask.shape[::-1]} does not match "
                    f"prediction frame {shape[::-1]}"
                )


@dataclass
class ThresholdSweep:
    thresholds: list[float]
    precision: list[Optional[float]]
    recall: list[Optional[float]]
    aggregate_iou: list[Optional[float]]


@dataclass
class ReferenceScale:
    """Pixel-to-physical scale from a component of known size."""

    reference_length: float  # physical units, e.g. millimeters
    reference_extent_px: float  # pixels spanned along the same direction
    units: str = "mm"

    def __post_init__(self) -> None:
        if self.reference_length <= 0 or self.reference_extent_px <= 0:
            raise ConfigurationError("reference length and extent must be positive")

    @property
    def units_per_pixel(self) -> float:
        return self.reference_length / self.reference_extent_px


@dataclass
class AreaMeasurement:
    area: float  # squared physical units
    units: str
    units_per_pixel: float
    # Single-scale conversion assumes the surface is parallel to the image
    # plane; always flagged so downstream reports cannot omit the caveat.
    fronto_parallel_assumed: bool = True


def _validate_threshold(threshold: float) -> None:
    if not 0.0 <= threshold <= 1.0:
        raise ConfigurationError(f"threshold must lie in [0, 1], got {threshold}")


def _kept_predictions(pair: EvalPair, threshold: float, class_filter) -> list[Instance]:
    return [
        inst
        for inst in pair.predictions.instances
        if inst.confidence is not None
        and inst.confidence >= threshold
        and (class_filter is None or inst.label == class_filter)
    ]


def _kept_truth(pair: EvalPair, class_filter) -> list[Instance]:
    return [
        inst
        for inst in pair.ground_truth
        if class_filter is None or inst.label == class_filter
    ]


def _union_by_label(instances: list[Instance], shape) -> dict[ClassLabel, np.ndarray]:
    unions: dict[ClassLabel, np.ndarray] = {}
    for inst in instances:
        if inst.label not in unions:
            unions[inst.label] = np.zeros(shape, dtype=bool)
        unions[inst.label] |= inst.mask
    return unions


def precision_recall(
    pairs: list[EvalPair],
    threshold: float,
    class_filter: Optional[ClassLabel] = ClassLabel.DAMAGE,
) -> tuple[Optional[float], Optional[float]]:
    """Any-overlap precision and recall at one confidence threshold.

    Returns ``None`` for precision when no prediction survives the
    threshold and for recall when there is no ground truth.
    """
    _validate_threshold(threshold)
    kept_total = 0
    correct = 0
    truth_total = 0
    detected = 0
    for pair in pairs:
        shape = (pair.predictions.height, pair.predictions.width)
        kept = _kept_predictions(pair, threshold, class_filter)
        truth = _kept_truth(pair, class_filter)
        truth_unions = _union_by_label(truth, shape)
        kept_unions = _union_by_label(kept, shape)

        kept_total += len(kept)
        for pred in kept:
            union = truth_unions.get(pred.label)
            if union is not None and (pred.mask & union).any():
                correct += 1
        truth_total += len(truth)
        for target in truth:
            union = kept_unions.get(target.label)
            if union is not None and (target.mask & union).any():
                detected += 1

    precision = correct / kept_total if kept_total else None
    recall = detected / truth_total if truth_total else None
    return precision, recall


def aggregate_iou(
    pairs: list[EvalPair],
    threshold: float,
    class_filter: Optional[ClassLabel] = ClassLabel.DAMAGE,
) -> Optional[float]:
    """Dataset-level IoU: areas are summed across images before dividing."""
    _validate_threshold(threshold)
    intersection_total = 0
    union_total = 0
    for pair in pairs:
        shape = (pair.predictions.height, pair.predictions.width)
        predicted = np.zeros(shape, dtype=bool)
        for inst in _kept_predictions(pair, threshold, class_filter):
            predicted |= inst.mask
        labeled = np.zeros(shape, dtype=bool)
        for inst in _kept_truth(pair, class_filter):
            labeled |= inst.mask
        intersection_total += int(np.count_nonzero(predicted & labeled))
        union_total += int(np.count_nonzero(predicted | labeled))
    if union_total == 0:
        return None
    return intersection_total / union_total


def sweep(
    pairs: list[EvalPair],
    thresholds: list[float],
    class_filter: Optional[ClassLabel] = ClassLabel.DAMAGE,
) -> ThresholdSweep:
    """Evaluate both metrics at every threshold of a sorted grid."""
    if not thresholds:
        raise ConfigurationError("threshold list must not be empty")
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ConfigurationError("thresholds must be strictly increasing")
    for t in thresholds:
        _validate_threshold(t)
    precisions = []
    recalls = []
    ious = []
    for t in thresholds:
        p, r = precision_recall(pairs, t, class_filter)
        precisions.append(p)
        recalls.append(r)
        ious.append(aggregate_iou(pairs, t, class_filter))
    return ThresholdSweep(
        thresholds=list(thresholds),
        precision=precisions,
        recall=recalls,
        aggregate_iou=ious,
    )


def default_thresholds(count: int = 101) -> list[float]:
    """The default grid: 0.00 .. 1.00 in equal steps."""
    return [round(i / (count - 1), 10) for i in range(count)]


def measure_area(
    target: Union[Instance, np.ndarray], scale: ReferenceScale
) -> AreaMeasurement:
    """Physical area of a mask under the fronto-parallel assumption."""
    if isinstance(target, Instance):
        pixels = target.area()
    else:
        pixels = int(np.count_nonzero(target))
    per_pixel = scale.units_per_pixel
    return AreaMeasurement(
        area=pixels * per_pixel * per_pixel,
        units=scale.units,
        units_per_pixel=per_pixel,
    )


# --- report artifacts ---

def sweep_to_dict(result: ThresholdSweep) -> dict:
    return {
        "thresholds": result.thresholds,
        "precision": result.precision,
        "recall": result.recall,
        "aggregate_iou": result.aggregate_iou,
    }


def write_sweep_csv(path, result: ThresholdSweep) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["threshold", "precision", "recall", "aggregate_iou"])
        rows = zip(result.thresholds, result.precision, result.recall, result.aggregate_iou)
        for threshold, precision, recall, iou in rows:
            writer.writerow(
                [
                    f"{threshold:.6g}",
                    "" if precision is None else f"{precision:.6g}",
                    "" if recall is None else f"{recall:.6g}",
                    "" if iou is None else f"{iou:.6g}",
                ]
            )


def write_report_json(path, result: ThresholdSweep, meta: Optional[dict] = None) -> None:
    payload = {"sweep": sweep_to_dict(result)}
    if meta:
        payload["meta"] = meta
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")


def overlay_detections(
    image: np.ndarray,
    pair: EvalPair,
    threshold: float,
    class_filter: Optional[ClassLabel] = ClassLabel.DAMAGE,
    opacity: float = 0.5,
) -> np.ndarray:
    """Color-code detection quality onto the image.

    Correctly detected areas are green, undetected labeled areas red, and
    falsely predicted areas yellow.
    """
    shape = (pair.predictions.height, pair.predictions.width)
    if image.shape[:2] != shape:
        raise ShapeMismatchError("overlay image does not match the evaluation frame")
    predicted = np.zeros(shape, dtype=bool)
    for inst in _kept_predictions(pair, threshold, class_filter):
        predicted |= inst.mask
    labeled = np.zeros(shape, dtype=bool)
    for inst in _kept_truth(pair, class_filter):
        labeled |= inst.mask

    out = image.astype(np.float64)
    colors = (
        (labeled & predicted, (0.0, 200.0, 0.0)),
        (labeled & ~predicted, (220.0, 0.0, 0.0)),
        (predicted & ~labeled, (230.0, 210.0, 0.0)),
    )
    for mask, color in colors:
        out[mask] = out[mask] * (1.0 - opacity) + np.array(color) * opacity
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)
