"""Sliding-window subdivision and prediction merging for large images.

Windows all share one size; origins advance by ``size - overlap`` and the
last window per axis is clamped to the image edge, so every pixel is
covered and axis neighbors overlap by at least the configured amount.
Per-window predictions are offset into full-image coordinates and
same-class instances whose masks touch are merged (union mask, max
confidence). A seeded mock detector stands in for the external neural
detector; the prediction interchange JSON schema defined here is the
boundary between the two.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import cv2
import numpy as np
from scipy import ndimage

from .core import (
    ClassLabel,
    ConfigurationError,
    Instance,
    ShapeMismatchError,
    ToolkitError,
    ensure_image,
    rle_decode,
    rle_encode,
)
from .seeds import derive_rng


class InvalidPlanError(ToolkitError):
    """Requested tiling cannot be realized."""


class InterchangeFormatError(ToolkitError):
    """Prediction interchange document violates the schema."""


@dataclass(frozen=True)
class Window:
    x: int
    y: int
    width: int
    height: int

    @property
    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.height), slice(self.x, self.x + self.width)


@dataclass
class TilingPlan:
    image_size: tuple[int, int]  # (W, H)
    window_size: tuple[int, int]  # (w, h)
    overlap: int
    windows: list[Window]


@dataclass
class PredictionSet:
    """Instances in one coordinate frame: the full image or one window."""

    image_id: str
    width: int
    height: int
    instances: list[Instance] = field(default_factory=list)
    window_index: Optional[int] = None

    def __post_init__(self) -> None:
        for i, inst in enumerate(self.instances):
            if inst.mask.shape != (self.height, self.width):
                raise ShapeMismatchError(
                    f"instance {i} mask {inst.mask.shape[::-1]} does not match "
                    f"frame ({self.width}, {self.height})"
                )


def _axis_origins(extent: int, window: int, overlap: int) -> list[int]:
    stride = window - overlap
    origins = []
    position = 0
    while position + window <= extent:
        origins.append(position)
        position += stride
    if origins[-1] + window < extent:
        origins.append(extent - window)
    return origins


def plan_tiling(
    image_size: tuple[int, int], window_size: tuple[int, int], overlap: int
) -> TilingPlan:
    """Plan a row-major grid of equally sized overlapping windows."""
    image_w, image_h = image_size
    win_w, win_h = window_size
    if win_w > image_w or win_h > image_h:
        raise InvalidPlanError(
            f"window {window_size} larger than image {image_size}"
        )
    if win_w < 1 or win_h < 1:
        raise InvalidPlanError("window must be at least 1x1")
    if overlap < 0 or overlap >= min(win_w, win_h):
        raise InvalidPlanError(
            f"overlap {overlap} must satisfy 0 <= overlap < min{window_size}"
        )
    xs = _axis_origins(image_w, win_w, overlap)
    ys = _axis_origins(image_h, win_h, overlap)
    windows = [Window(x, y, win_w, win_h) for y in ys for x in xs]
    return TilingPlan(
        image_size=(image_w, image_h),
        window_size=(win_w, win_h),
        overlap=overlap,
        windows=windows,
    )


def extract_windows(image: np.ndarray, plan: TilingPlan) -> list[np.ndarray]:
    """Pixel-exact crops, one per window, in plan order."""
    ensure_image(image)
    height, width = image.shape[:2]
    if (width, height) != plan.image_size:
        raise ShapeMismatchError(
            f"image is {(width, height)}, plan expects {plan.image_size}"
        )
    return [image[w.slices].copy() for w in plan.windows]


def clip_to_window(instances: list[Instance], window: Window) -> list[Instance]:
    """Ground truth restricted to one window, in window coordinates.

    Instances whose masks do not reach into the window are dropped.
    """
    clipped = []
    for inst in instances:
        fragment = inst.mask[window.slices]
        if fragment.any():
            clipped.append(
                Instance(label=inst.label, mask=fragment.copy(), confidence=inst.confidence)
            )
    return clipped


def resize_mask(mask: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbor mask resize to (W, H); identity when sizes match."""
    width, height = size
    if mask.shape == (height, width):
        return mask.copy()
    return cv2.resize(
        mask.astype(np.uint8), (width, height), interpolation=cv2.INTER_NEAREST
    ).astype(bool)


def downscale_image(image: np.ndarray, factor: float) -> np.ndarray:
    """Bilinear downscale by a factor in (0, 1]."""
    ensure_image(image)
    if not 0.0 < factor <= 1.0:
        raise ConfigurationError(f"scale factor must lie in (0, 1], got {factor}")
    if factor == 1.0:
        return image.copy()
    height, width = image.shape[:2]
    new_w = max(1, round(width * factor))
    new_h = max(1, round(height * factor))
    return cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)


def upscale_predictions(
    predictions: PredictionSet, factor: float, full_size: tuple[int, int]
) -> PredictionSet:
    """Map predictions made on a downscaled image back to full resolution.

    Masks are resized with nearest-neighbor; confidences are unchanged.
    """
    if not 0.0 < factor <= 1.0:
        raise ConfigurationError(f"scale factor must lie in (0, 1], got {factor}")
    width, height = full_size
    instances = [
        Instance(
            label=inst.label,
            mask=resize_mask(inst.mask, full_size),
            confidence=inst.confidence,
        )
        for inst in predictions.instances
    ]
    return PredictionSet(
        image_id=predictions.image_id,
        width=width,
        height=height,
        instances=instances,
        window_index=predictions.window_index,
    )


@dataclass
class MergeSettings:
    min_overlap_pixels: int = 1

    def __post_init__(self) -> None:
        if self.min_overlap_pixels < 1:
            raise ConfigurationError("min_overlap_pixels must be at least 1")


@dataclass
class _Fragment:
    label: ClassLabel
    confidence: float
    x0: int
    y0: int
    mask: np.ndarray  # cropped to its own bounding box

    @property
    def x1(self) -> int:
        return self.x0 + self.mask.shape[1]

    @property
    def y1(self) -> int:
        return self.y0 + self.mask.shape[0]


def _fragment_overlap(a: _Fragment, b: _Fragment) -> int:
    ix0, ix1 = max(a.x0, b.x0), min(a.x1, b.x1)
    iy0, iy1 = max(a.y0, b.y0), min(a.y1, b.y1)
    if ix0 >= ix1 or iy0 >= iy1:
        return 0
    sub_a = a.mask[iy0 - a.y0 : iy1 - a.y0, ix0 - a.x0 : ix1 - a.x0]
    sub_b = b.mask[iy0 - b.y0 : iy1 - b.y0, ix0 - b.x0 : ix1 - b.x0]
    return int(np.count_nonzero(sub_a & sub_b))


def merge_predictions(
    per_window: list[PredictionSet],
    plan: TilingPlan,
    settings: Optional[MergeSettings] = None,
) -> PredictionSet:
    """Offset per-window predictions into the full frame and merge overlaps.

    Same-class instances whose full-frame masks share at least
    ``min_overlap_pixels`` are grouped by transitive closure; each group
    becomes one instance with the union mask and the maximum confidence.
    """
    settings = settings or MergeSettings()
    if len(per_window) != len(plan.windows):
        raise ShapeMismatchError(
            f"{len(per_window)} prediction sets for {len(plan.windows)} windows"
        )
    image_ids = {ps.image_id for ps in per_window}
    if len(image_ids) > 1:
        raise ShapeMismatchError(f"prediction sets span several images: {sorted(image_ids)}")

    fragments: list[_Fragment] = []
    for k, (window, preds) in enumerate(zip(plan.windows, per_window)):
        if preds.window_index != k:
            raise ShapeMismatchError(
                f"prediction set {k} carries window index {preds.window_index}"
            )
        if (preds.width, preds.height) != (window.width, window.height):
            raise ShapeMismatchError(
                f"prediction set {k} frame {(preds.width, preds.height)} does not "
                f"match window size {(window.width, window.height)}"
            )
        for inst in preds.instances:
            if inst.confidence is None:
                raise ShapeMismatchError("merge requires predictions with confidences")
            ys, xs = np.nonzero(inst.mask)
            y0, y1 = int(ys.min()), int(ys.max()) + 1
            x0, x1 = int(xs.min()), int(xs.max()) + 1
            fragments.append(
                _Fragment(
                    label=inst.label,
                    confidence=inst.confidence,
                    x0=window.x + x0,
                    y0=window.y + y0,
                    mask=inst.mask[y0:y1, x0:x1].copy(),
                )
            )

    # Transitive closure of the pairwise-overlap relation (union-find).
    parent = list(range(len(fragments)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(len(fragments)):
        for j in range(i + 1, len(fragments)):
            if fragments[i].label != fragments[j].label:
                continue
            if _fragment_overlap(fragments[i], fragments[j]) >= settings.min_overlap_pixels:
                parent[find(i)] = find(j)

    groups: dict[int, list[_Fragment]] = {}
    for i, frag in enumerate(fragments):
        groups.setdefault(find(i), []).append(frag)

    image_w, image_h = plan.image_size
    merged = []
    for members in groups.values():
        full = np.zeros((image_h, image_w), dtype=bool)
        for frag in members:
            full[frag.y0 : frag.y1, frag.x0 : frag.x1] |= frag.mask
        merged.append(
            Instance(
                label=members[0].label,
                mask=full,
                confidence=max(f.confidence for f in members),
            )
        )

    def sort_key(inst: Instance):
        ys, xs = np.nonzero(inst.mask)
        return (
            inst.label.value,
            int(ys.min()),
            int(xs.min()),
            int(ys.max()),
            int(xs.max()),
            inst.area(),
            -inst.confidence,
        )

    merged.sort(key=sort_key)
    return PredictionSet(
        image_id=per_window[0].image_id if per_window else "",
        width=image_w,
        height=image_h,
        instances=merged,
        window_index=None,
    )


@dataclass
class MockDetectorSettings:
    """Perturbation applied to ground truth by the mock detector."""

    dilation_radius: int = 0
    seed: int = 0
    false_positive_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.dilation_radius < 0:
            raise ConfigurationError("dilation radius must be >= 0")
        if not 0.0 <= self.false_positive_rate < 1.0:
            raise ConfigurationError("false-positive rate must lie in [0, 1)")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")


def mock_detect(
    ground_truth: list[Instance],
    width: int,
    height: int,
    settings: Optional[MockDetectorSettings] = None,
    image_id: str = "",
    window_index: Optional[int] = None,
) -> PredictionSet:
    """Deterministic test double for the external detector.

    Returns the ground-truth masks dilated by a square structuring element,
    seeded confidences in [0.5, 1.0], and seeded rectangular false positives
    placed disjoint from every ground-truth mask. The number of false boxes
    is round(n_true * rate / (1 - rate)), so the expected precision at
    threshold 0 is 1 - rate.
    """
    settings = settings or MockDetectorSettings()
    rng = derive_rng(settings.seed, "mock")
    radius = settings.dilation_radius
    structure = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)

    instances = []
    for truth in ground_truth:
        if truth.mask.shape != (height, width):
            raise ShapeMismatchError("ground-truth mask does not match frame dimensions")
        mask = truth.mask
        if radius > 0:
            mask = ndimage.binary_dilation(mask, structure=structure)
        instances.append(
            Instance(label=truth.label, mask=mask, confidence=float(rng.uniform(0.5, 1.0)))
        )

    n_true = len(ground_truth)
    n_false = round(n_true * settings.false_positive_rate / (1.0 - settings.false_positive_rate))
    if n_false:
        truth_union = np.zeros((height, width), dtype=bool)
        for truth in ground_truth:
            truth_union |= truth.mask
        short_side = min(width, height)
        size_lo = max(2, short_side // 32)
        size_hi = max(size_lo + 1, short_side // 8)
        for _ in range(n_false):
            for _attempt in range(100):
                box_w = int(rng.integers(size_lo, size_hi + 1))
                box_h = int(rng.integers(size_lo, size_hi + 1))
                x = int(rng.integers(0, width - box_w + 1))
                y = int(rng.integers(0, height - box_h + 1))
                if not truth_union[y : y + box_h, x : x + box_w].any():
                    false_mask = np.zeros((height, width), dtype=bool)
                    false_mask[y : y + box_h, x : x + box_w] = True
                    label = (
                        ground_truth[int(rng.integers(n_true))].label
                        if n_true
                        else ClassLabel.DAMAGE
                    )
                    instances.append(
                        Instance(
                            label=label,
                            mask=false_mask,
                            confidence=float(rng.uniform(0.5, 1.0)),
                        )
                    )
                    break

    return PredictionSet(
        image_id=image_id,
        width=width,
        height=height,
        instances=instances,
        window_index=window_index,
    )


# --- interchange JSON: the boundary with the external detector ---

def prediction_set_to_dict(predictions: PredictionSet) -> dict:
    frame = "full" if predictions.window_index is None else {"window": predictions.window_index}
    return {
        "image_id": predictions.image_id,
        "width": predictions.width,
        "height": predictions.height,
        "frame": frame,
        "instances": [
            {
                "class": inst.label.value,
                "confidence": inst.confidence,
                "mask": {
                    "rle": rle_encode(inst.mask),
                    "width": inst.mask.shape[1],
                    "height": inst.mask.shape[0],
                },
            }
            for inst in predictions.instances
        ],
    }


def validate_interchange(doc: dict) -> None:
    """Raise InterchangeFormatError naming the offending key on violation."""

    def fail(path: str, why: str):
        raise InterchangeFormatError(f"{path}: {why}")

    if not isinstance(doc, dict):
        fail("$", "document must be a JSON object")
    if not isinstance(doc.get("image_id"), str):
        fail("image_id", "must be a string")
    for key in ("width", "height"):
        if not isinstance(doc.get(key), int) or isinstance(doc.get(key), bool) or doc[key] < 1:
            fail(key, "must be a positive integer")
    frame = doc.get("frame")
    if frame != "full" and not (
        isinstance(frame, dict)
        and set(frame) == {"window"}
        and isinstance(frame["window"], int)
        and not isinstance(frame["window"], bool)
        and frame["window"] >= 0
    ):
        fail("frame", 'must be "full" or {"window": k}')
    instances = doc.get("instances")
    if not isinstance(instances, list):
        fail("instances", "must be a list")
    for i, inst in enumerate(instances):
        where = f"instances[{i}]"
        if not isinstance(inst, dict):
            fail(where, "must be an object")
        if inst.get("class") not in {label.value for label in ClassLabel}:
            fail(f"{where}.class", f"unknown class {inst.get('class')!r}")
        confidence = inst.get("confidence")
        if not isinstance(confidence, (int, float)) or isinstance(confidence, bool) or not 0.0 <= confidence <= 1.0:
            fail(f"{where}.confidence", "must be a number in [0, 1]")
        mask = inst.get("mask")
        if not isinstance(mask, dict):
            fail(f"{where}.mask", "must be an object")
        if mask.get("width") != doc["width"] or mask.get("height") != doc["height"]:
            fail(f"{where}.mask", "mask dimensions must match the frame dimensions")
        rle = mask.get("rle")
        if not isinstance(rle, list) or not all(
            isinstance(r, int) and not isinstance(r, bool) and r >= 0 for r in rle
        ):
            fail(f"{where}.mask.rle", "must be a list of non-negative integers")
        if sum(rle) != doc["width"] * doc["height"]:
            fail(
                f"{where}.mask.rle",
                f"run lengths sum to {sum(rle)}, expected {doc['width'] * doc['height']}",
            )


def prediction_set_from_dict(doc: dict) -> PredictionSet:
    validate_interchange(doc)
    window_index = None if doc["frame"] == "full" else doc["frame"]["window"]
    instances = [
        Instance(
            label=ClassLabel(inst["class"]),
            mask=rle_decode(inst["mask"]["rle"], inst["mask"]["width"], inst["mask"]["height"]),
            confidence=float(inst["confidence"]),
        )
        for inst in doc["instances"]
    ]
    return PredictionSet(
        image_id=doc["image_id"],
        width=doc["width"],
        height=doc["height"],
        instances=instances,
        window_index=window_index,
    )


def write_predictions(path, predictions: PredictionSet) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(
        json.dumps(prediction_set_to_dict(predictions), indent=2, sort_keys=True) + "\n",
        "utf-8",
    )


def read_predictions(path) -> PredictionSet:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InterchangeFormatError(
            f"malformed JSON at byte offset {exc.pos}: {exc.msg}"
        ) from exc
    return prediction_set_from_dict(doc)


# --- tiling plan serialization ---

def plan_to_dict(plan: TilingPlan) -> dict:
    return {
        "image_size": list(plan.image_size),
        "window_size": list(plan.window_size),
        "overlap": plan.overlap,
        "windows": [
            {"x": w.x, "y": w.y, "width": w.width, "height": w.height} for w in plan.windows
        ],
    }


def plan_from_dict(doc: dict) -> TilingPlan:
    try:
        plan = plan_tiling(
            tuple(doc["image_size"]), tuple(doc["window_size"]), doc["overlap"]
        )
    except (KeyError, TypeError) as exc:
        raise InvalidPlanError(f"malformed tiling plan document: {exc}") from exc
    listed = [Window(w["x"], w["y"], w["width"], w["height"]) for w in doc.get("windows", [])]
    if listed != plan.windows:
        raise InvalidPlanError("plan windows are inconsistent with its parameters")
    return plan


def write_plan(path, plan: TilingPlan) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(plan_to_dict(plan), indent=2, sort_keys=True) + "\n", "utf-8")


def read_plan(path) -> TilingPlan:
    return plan_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
