"""Shared geometry and raster primitives.

Images are ``uint8`` arrays of shape ``(H, W, 3)`` (RGB) or ``(H, W, 4)``
(RGBA, alpha marking structure pixels). Binary masks are boolean arrays of
shape ``(H, W)``. Polygons are ``float64`` arrays of shape ``(N, 2)`` holding
``(x, y)`` vertices of an implicitly closed outline. All values are treated
as immutable once constructed; every operation here is a pure function.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np


class ToolkitError(Exception):
    """Base class for all errors raised by this package."""


class InvalidPolygonError(ToolkitError):
    """Polygon has fewer than 3 vertices or non-finite coordinates."""


class CorruptRleError(ToolkitError):
    """Run-length data does not describe a mask of the stated size."""


class ShapeMismatchError(ToolkitError):
    """Operands that must share dimensions do not."""


class ConfigurationError(ToolkitError):
    """A setting or input configuration is unusable."""


class ClassLabel(str, Enum):
    """Detection target classes; anything unlabeled is background."""

    DAMAGE = "damage"
    DIRT = "dirt"

    @classmethod
    def parse(cls, value: str) -> "ClassLabel":
        try:
            return cls(value.strip().lower())
        except ValueError:
            raise ConfigurationError(
                f"unknown class {value!r}; accepted values: "
                + ", ".join(m.value for m in cls)
            ) from None


@dataclass(frozen=True)
class Instance:
    """One segmented object: class, occupancy mask, optional confidence.

    A confidence is present exactly when the instance is a prediction;
    ground-truth instances carry ``confidence=None``.
    """

    label: ClassLabel
    mask: np.ndarray
    confidence: Optional[float] = None

    def __post_init__(self) -> None:
        ensure_mask(self.mask)
        if not self.mask.any():
            raise ShapeMismatchError("instance mask must be non-empty")
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ConfigurationError(
                f"confidence must lie in [0, 1], got {self.confidence}"
            )

    @property
    def is_prediction(self) -> bool:
        return self.confidence is not None

    def area(self) -> int:
        return int(np.count_nonzero(self.mask))


def ensure_image(image: np.ndarray, channels: Sequence[int] = (3, 4)) -> np.ndarray:
    if not isinstance(image, np.ndarray) or image.ndim != 3:
        raise ShapeMismatchError("image must be an (H, W, C) array")
    if image.shape[2] not in channels:
        raise ShapeMismatchError(
            f"image must have {channels} channels, got {image.shape[2]}"
        )
    if image.dtype != np.uint8:
        raise ShapeMismatchError(f"image samples must be uint8, got {image.dtype}")
    if image.shape[0] < 1 or image.shape[1] < 1:
        raise ShapeMismatchError("image must be at least 1x1")
    return image


def ensure_mask(mask: np.ndarray) -> np.ndarray:
    if not isinstance(mask, np.ndarray) or mask.ndim != 2:
        raise ShapeMismatchError("mask must be an (H, W) array")
    if mask.dtype != np.bool_:
        raise ShapeMismatchError(f"mask must be boolean, got {mask.dtype}")
    return mask


def as_polygon(points) -> np.ndarray:
    """Validate and return an (N, 2) float64 vertex array."""
    poly = np.asarray(points, dtype=np.float64)
    if poly.ndim != 2 or poly.shape[1] != 2 or poly.shape[0] < 3:
        raise InvalidPolygonError(
            f"polygon needs at least 3 (x, y) vertices, got shape {poly.shape}"
        )
    if not np.all(np.isfinite(poly)):
        raise InvalidPolygonError("polygon coordinates must be finite")
    return poly


def rasterize(polygon, width: int, height: int) -> np.ndarray:
    """Fill a polygon onto a ``height x width`` grid.

    A pixel ``(row i, col j)`` is set iff its center ``(j + 0.5, i + 0.5)``
    lies inside the outline under the even-odd rule. Vertices may fall
    outside the grid; out-of-range pixels are simply absent from the result.
    """
    poly = as_polygon(polygon)
    if width < 1 or height < 1:
        raise ShapeMismatchError("target grid must be at least 1x1")
    mask = np.zeros((height, width), dtype=bool)

    # Pixels outside the vertex bounding box cannot be inside.
    j0 = max(0, int(np.floor(poly[:, 0].min() - 1.0)))
    j1 = min(width - 1, int(np.ceil(poly[:, 0].max() + 1.0)))
    i0 = max(0, int(np.floor(poly[:, 1].min() - 1.0)))
    i1 = min(height - 1, int(np.ceil(poly[:, 1].max() + 1.0)))
    if j0 > j1 or i0 > i1:
        return mask

    px = np.arange(j0, j1 + 1, dtype=np.float64) + 0.5
    py = np.arange(i0, i1 + 1, dtype=np.float64) + 0.5
    cx = px[np.newaxis, :]
    cy = py[:, np.newaxis]

    inside = np.zeros((py.size, px.size), dtype=bool)
    x1 = poly[:, 0]
    y1 = poly[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)
    with np.errstate(divide="ignore", invalid="ignore"):
        for k in range(poly.shape[0]):
            crosses = (y1[k] > cy) != (y2[k] > cy)
            if not crosses.any():
                continue
            x_hit = (x2[k] - x1[k]) * (cy - y1[k]) / (y2[k] - y1[k]) + x1[k]
            inside ^= crosses & (cx < x_hit)

    mask[i0 : i1 + 1, j0 : j1 + 1] = inside
    return mask


def rle_encode(mask: np.ndarray) -> list[int]:
    """Serialize a mask as row-major run lengths.

    Runs alternate zero-run/one-run starting with the zero-run, whose
    length may be 0. ``rle_decode(rle_encode(m), w, h)`` is the identity.
    """
    ensure_mask(mask)
    flat = mask.ravel().astype(np.int8)
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    edges = np.concatenate(([0], boundaries, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0] == 1:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(runs: Sequence[int], width: int, height: int) -> np.ndarray:
    counts = np.asarray(list(runs), dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise CorruptRleError("run lengths must be non-negative")
    total = int(counts.sum())
    if total != width * height:
        raise CorruptRleError(
            f"run lengths sum to {total}, expected {width}x{height}={width * height}"
        )
    values = np.arange(counts.size, dtype=np.int64) % 2
    flat = np.repeat(values, counts).astype(bool)
    return flat.reshape(height, width)


def mask_overlap(a: np.ndarray, b: np.ndarray) -> tuple[int, int]:
    """Exact intersection and union pixel counts of two equal-size masks."""
    ensure_mask(a)
    ensure_mask(b)
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mask shapes differ: {a.shape} vs {b.shape}")
    intersection = int(np.count_nonzero(a & b))
    union = int(np.count_nonzero(a | b))
    return intersection, union


def load_image(path) -> np.ndarray:
    """Read a PNG/JPEG file into an RGB or RGBA uint8 array."""
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise ToolkitError(f"cannot read image file: {path}")
    if raw.ndim == 2:
        raw = cv2.cvtColor(raw, cv2.COLOR_GRAY2BGR)
    if raw.shape[2] == 4:
        return cv2.cvtColor(raw, cv2.COLOR_BGRA2RGBA)
    return cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)


def save_image(path, image: np.ndarray) -> None:
    ensure_image(image)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    if image.shape[2] == 4:
        encoded = cv2.cvtColor(image, cv2.COLOR_RGBA2BGRA)
    else:
        encoded = cv2.cvtColor(image, cv2.COLOR_RGB2BGR)
    if not cv2.imwrite(str(path), encoded):
        raise ToolkitError(f"cannot write image file: {path}")
