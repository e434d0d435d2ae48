"""Annotation ingestion: VIA polygon projects and the canonical manifest.

The canonical manifest is this toolkit's own JSON schema (see README):

    {"version": 1, "images": [
        {"path": "...", "width": W | null, "height": H | null,
         "instances": [
             {"class": "damage", "polygon": [[x, y], ...]},
             {"class": "dirt", "mask": {"rle": [...], "width": W, "height": H}}
         ]}]}

Region instances are polygons when they come from an annotator and masks when
they come from the synthetic generator. A dataset manifest replaces "images"
with "training" and "validation" lists of the same image objects.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .core import (
    ClassLabel,
    ConfigurationError,
    ShapeMismatchError,
    ToolkitError,
    as_polygon,
    ensure_mask,
    load_image,
    rasterize,
    rle_decode,
    rle_encode,
)

MANIFEST_VERSION = 1
DEFAULT_CLASS_KEY = "class"


class AnnotationError(ToolkitError):
    """Annotation document cannot be interpreted."""


class UnsupportedShapeError(AnnotationError):
    """Region uses a VIA shape other than polygon."""


class UnknownClassError(AnnotationError):
    """Region class value is not one of the accepted labels."""


class InvalidRegionError(AnnotationError):
    """Region geometry arrays are malformed."""


@dataclass
class PolygonRegion:
    """A labeled polygon outline in image coordinates."""

    label: ClassLabel
    points: np.ndarray

    def __post_init__(self) -> None:
        self.points = as_polygon(self.points)

    def to_mask(self, width: int, height: int) -> np.ndarray:
        return rasterize(self.points, width, height)


@dataclass
class MaskRegion:
    """A labeled occupancy mask at full image resolution."""

    label: ClassLabel
    mask: np.ndarray

    def __post_init__(self) -> None:
        ensure_mask(self.mask)

    def to_mask(self, width: int, height: int) -> np.ndarray:
        if self.mask.shape != (height, width):
            raise ShapeMismatchError(
                f"mask region is {self.mask.shape[::-1]}, image is {(width, height)}"
            )
        return self.mask


Region = Union[PolygonRegion, MaskRegion]


@dataclass
class AnnotatedImage:
    """One image plus its labeled regions.

    Width and height are read from the image file when available; the
    annotation document is never trusted for dimensions.
    """

    path: str
    width: Optional[int] = None
    height: Optional[int] = None
    instances: list[Region] = field(default_factory=list)

    @property
    def image_id(self) -> str:
        return Path(self.path).stem

    def ground_truth_masks(self) -> list[tuple[ClassLabel, np.ndarray]]:
        if self.width is None or self.height is None:
            raise AnnotationError(
                f"image dimensions unknown for {self.path}; resolve sizes first"
            )
        return [(r.label, r.to_mask(self.width, self.height)) for r in self.instances]


@dataclass
class DatasetManifest:
    training: list[AnnotatedImage]
    validation: list[AnnotatedImage]


def parse_via(
    document: Union[str, bytes, dict],
    class_key: str = DEFAULT_CLASS_KEY,
    image_root=None,
) -> list[AnnotatedImage]:
    """Parse a VIA-2 project (full save or flat export) into annotated images.

    Every region must be a polygon with parallel all_points_x/all_points_y
    arrays and a recognized class value under ``class_key`` (case-insensitive
    "damage" or "dirt"). Unknown classes are hard errors rather than silent
    skips. When ``image_root`` is given, image dimensions are read from the
    files found there.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise AnnotationError(
                f"malformed JSON at byte offset {exc.pos}: {exc.msg}"
            ) from exc
    else:
        doc = document
    if not isinstance(doc, dict):
        raise AnnotationError("VIA document must be a JSON object")

    metadata = doc.get("_via_img_metadata", doc)
    if not isinstance(metadata, dict):
        raise AnnotationError("_via_img_metadata must be a JSON object")

    images = []
    for key, entry in metadata.items():
        if key.startswith("_via_"):
            continue
        if not isinstance(entry, dict) or "filename" not in entry:
            raise AnnotationError(f"file entry {key!r} has no filename")
        filename = entry["filename"]
        regions = entry.get("regions", [])
        if not isinstance(regions, list):
            raise AnnotationError(f"regions of {filename!r} must be a list")
        instances = [
            _parse_region(region, index, filename, class_key)
            for index, region in enumerate(regions)
        ]
        annotated = AnnotatedImage(path=str(filename), instances=instances)
        if image_root is not None:
            _resolve_size(annotated, image_root)
        images.append(annotated)
    return images


def load_via(path, class_key: str = DEFAULT_CLASS_KEY, image_root=None) -> list[AnnotatedImage]:
    text = Path(path).read_text(encoding="utf-8")
    root = image_root if image_root is not None else Path(path).parent
    return parse_via(text, class_key=class_key, image_root=root)


def _parse_region(region, index: int, filename: str, class_key: str) -> PolygonRegion:
    where = f"region {index} of {filename!r}"
    if not isinstance(region, dict):
        raise InvalidRegionError(f"{where} is not an object")
    shape = region.get("shape_attributes", {})
    name = shape.get("name")
    if name != "polygon":
        raise UnsupportedShapeError(
            f"{where} has shape {name!r}; only polygon regions are supported"
        )
    xs = shape.get("all_points_x")
    ys = shape.get("all_points_y")
    if not isinstance(xs, list) or not isinstance(ys, list):
        raise InvalidRegionError(f"{where} lacks all_points_x/all_points_y arrays")
    if len(xs) != len(ys):
        raise InvalidRegionError(
            f"{where} has {len(xs)} x values but {len(ys)} y values"
        )
    attributes = region.get("region_attributes", {})
    raw_label = attributes.get(class_key)
    accepted = ", ".join(m.value for m in ClassLabel)
    if not isinstance(raw_label, str):
        raise UnknownClassError(
            f"{where} has no {class_key!r} attribute; accepted values: {accepted}"
        )
    try:
        label = ClassLabel(raw_label.strip().lower())
    except ValueError:
        raise UnknownClassError(
            f"{where} has unknown class {raw_label!r}; accepted values: {accepted}"
        ) from None
    try:
        points = as_polygon(np.column_stack([xs, ys]))
    except ToolkitError as exc:
        raise InvalidRegionError(f"{where}: {exc}") from exc
    return PolygonRegion(label=label, points=points)


def _resolve_size(image: AnnotatedImage, image_root) -> None:
    candidate = Path(image_root) / image.path
    if candidate.is_file():
        pixels = load_image(candidate)
        image.height, image.width = pixels.shape[:2]


def split_manifest(
    images: list[AnnotatedImage], validation_fraction: float, seed: int
) -> DatasetManifest:
    """Randomly partition images into training and validation sets.

    The validation set holds round(fraction * N) images, at least one, chosen
    by a seeded shuffle; the same seed always yields the same split.
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ConfigurationError(
            f"validation fraction must lie strictly in (0, 1), got {validation_fraction}"
        )
    if not images:
        raise ConfigurationError("cannot split an empty image list")
    count = len(images)
    n_validation = min(max(round(validation_fraction * count), 1), count)
    order = np.random.default_rng(seed).permutation(count)
    validation = [images[i] for i in sorted(order[:n_validation])]
    training = [images[i] for i in sorted(order[n_validation:])]
    return DatasetManifest(training=training, validation=validation)


# --- canonical manifest JSON ---

def region_to_dict(region: Region) -> dict:
    if isinstance(region, PolygonRegion):
        return {
            "class": region.label.value,
            "polygon": [[float(x), float(y)] for x, y in region.points],
        }
    height, width = region.mask.shape
    return {
        "class": region.label.value,
        "mask": {"rle": rle_encode(region.mask), "width": width, "height": height},
    }


def region_from_dict(entry: dict) -> Region:
    label = ClassLabel.parse(entry["class"])
    if "polygon" in entry:
        return PolygonRegion(label=label, points=np.asarray(entry["polygon"]))
    if "mask" in entry:
        payload = entry["mask"]
        mask = rle_decode(payload["rle"], payload["width"], payload["height"])
        return MaskRegion(label=label, mask=mask)
    raise AnnotationError("instance entry carries neither polygon nor mask")


def image_to_dict(image: AnnotatedImage) -> dict:
    return {
        "path": image.path,
        "width": image.width,
        "height": image.height,
        "instances": [region_to_dict(r) for r in image.instances],
    }


def image_from_dict(entry: dict) -> AnnotatedImage:
    try:
        return AnnotatedImage(
            path=entry["path"],
            width=entry.get("width"),
            height=entry.get("height"),
            instances=[region_from_dict(r) for r in entry.get("instances", [])],
        )
    except KeyError as exc:
        raise AnnotationError(f"manifest image entry lacks key {exc}") from exc


def write_image_manifest(path, images: list[AnnotatedImage]) -> None:
    payload = {"version": MANIFEST_VERSION, "images": [image_to_dict(i) for i in images]}
    _write_json(path, payload)


def read_image_manifest(path) -> list[AnnotatedImage]:
    payload = _read_json(path)
    _check_version(payload)
    return [image_from_dict(e) for e in payload.get("images", [])]


def write_dataset_manifest(path, manifest: DatasetManifest) -> None:
    payload = {
        "version": MANIFEST_VERSION,
        "training": [image_to_dict(i) for i in manifest.training],
        "validation": [image_to_dict(i) for i in manifest.validation],
    }
    _write_json(path, payload)


def read_dataset_manifest(path) -> DatasetManifest:
    payload = _read_json(path)
    _check_version(payload)
    return DatasetManifest(
        training=[image_from_dict(e) for e in payload.get("training", [])],
        validation=[image_from_dict(e) for e in payload.get("validation", [])],
    )


def _check_version(payload: dict) -> None:
    if payload.get("version") != MANIFEST_VERSION:
        raise AnnotationError(
            f"unsupported manifest version {payload.get('version')!r}"
        )


def _write_json(path, payload: dict) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", "utf-8")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise AnnotationError(
            f"malformed JSON at byte offset {exc.pos}: {exc.msg}"
        ) from exc
