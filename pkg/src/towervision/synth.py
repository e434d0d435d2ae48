"""Synthetic training-image generation.

A sample is a collage background (random crops of unrelated pool images)
with a random number of exemplar crops pasted on top. Each exemplar is
processed in a fixed order - surround crop, rotation, scale, placement -
with every random draw recorded in a generation log, so a sample can be
reproduced either from its seed or by replaying the log without any RNG.

Exemplar crops are RGBA patches whose alpha marks structure pixels; the
target mask marks the damage or dirt pixels proper and is empty for crops
of clean structure, which are pasted as hard negatives and never yield a
ground-truth instance.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import cv2
import numpy as np

from .annot import AnnotatedImage, MaskRegion, write_image_manifest
from .core import (
    ClassLabel,
    ConfigurationError,
    Instance,
    ShapeMismatchError,
    ensure_image,
    ensure_mask,
    load_image,
    rle_decode,
    rle_encode,
    save_image,
)
from .seeds import derive_rng

_CLEAN_CLASS_NAME = "clean"
_POOL_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")


@dataclass
class ExemplarCrop:
    """Alpha-matted example patch used for collage synthesis."""

    patch: np.ndarray
    label: Optional[ClassLabel]
    target_mask: np.ndarray
    source_id: str = ""

    def __post_init__(self) -> None:
        ensure_image(self.patch, channels=(4,))
        ensure_mask(self.target_mask)
        if self.target_mask.shape != self.patch.shape[:2]:
            raise ShapeMismatchError("target mask must match patch dimensions")
        alpha = self.patch[..., 3] > 0
        if not alpha.any():
            raise ConfigurationError("exemplar alpha marks no structure pixels")
        if (self.target_mask & ~alpha).any():
            raise ConfigurationError("target mask must lie inside the alpha region")
        if self.label is None and self.target_mask.any():
            raise ConfigurationError("clean-structure crops must have an empty target mask")
        if self.label is not None and not self.target_mask.any():
            raise ConfigurationError("damage/dirt crops need a non-empty target mask")


@dataclass
class SynthSettings:
    canvas_size: tuple[int, int]  # (W, H)
    background_dir: Optional[str] = None
    exemplar_count: tuple[int, int] = (2, 8)
    scale_range: tuple[float, float] = (0.3, 2.0)
    rotation_range: tuple[float, float] = (-180.0, 180.0)
    surround_crop_range: tuple[float, float] = (0.0, 0.5)
    seed: int = 0
    placement_retries: int = 20
    scale_retries: int = 10

    def __post_init__(self) -> None:
        w, h = self.canvas_size
        if w < 1 or h < 1:
            raise ConfigurationError("canvas must be at least 1x1")
        lo, hi = self.exemplar_count
        if lo < 0 or hi < lo:
            raise ConfigurationError("exemplar count range must satisfy 0 <= min <= max")
        s_lo, s_hi = self.scale_range
        if s_lo <= 0 or s_hi < s_lo:
            raise ConfigurationError("scale range must satisfy 0 < min <= max")
        c_lo, c_hi = self.surround_crop_range
        if not 0.0 <= c_lo <= c_hi <= 1.0:
            raise ConfigurationError("surround-crop range must lie within [0, 1]")
        if self.rotation_range[1] < self.rotation_range[0]:
            raise ConfigurationError("rotation range must be ordered")
        if self.seed < 0:
            raise ConfigurationError("seed must be non-negative")


@dataclass
class SyntheticSample:
    image: np.ndarray
    instances: list[Instance]
    log: list[dict] = field(default_factory=list)


@dataclass
class PlacedExemplar:
    patch: np.ndarray
    target_mask: np.ndarray
    x: int
    y: int


def _jsonable(value):
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


class DrawSource:
    """Sequential random draws with a replayable log.

    In recording mode every draw comes from the generator and is appended
    to ``log``. In replay mode draws are read back from a previous log, so
    generation is reproduced without any RNG.
    """

    def __init__(self, rng: Optional[np.random.Generator] = None, replay=None):
        if (rng is None) == (replay is None):
            raise ConfigurationError("provide exactly one of rng or replay")
        self._rng = rng
        self._replay = list(replay) if replay is not None else None
        self._cursor = 0
        self.log: list[dict] = []

    def draw(self, event: str, sampler: Callable[[np.random.Generator], object], **context):
        if self._replay is None:
            value = _jsonable(sampler(self._rng))
        else:
            value = self._next_replay(event)
        entry = {"event": event, "draw": True, "value": value}
        entry.update({k: _jsonable(v) for k, v in context.items()})
        self.log.append(entry)
        return value

    def note(self, event: str, **context) -> None:
        entry = {"event": event}
        entry.update({k: _jsonable(v) for k, v in context.items()})
        self.log.append(entry)

    def _next_replay(self, event: str):
        while self._cursor < len(self._replay):
            entry = self._replay[self._cursor]
            self._cursor += 1
            if entry.get("draw"):
                if entry["event"] != event:
                    raise ConfigurationError(
                        f"replay log holds draw {entry['event']!r} where {event!r} was requested"
                    )
                return entry["value"]
        raise ConfigurationError(f"replay log exhausted before draw {event!r}")


def load_background_pool(directory) -> list[np.ndarray]:
    root = Path(directory) if directory else None
    if root is None or not root.is_dir():
        raise ConfigurationError(f"background pool directory not found: {directory}")
    paths = sorted(p for p in root.iterdir() if p.suffix.lower() in _POOL_SUFFIXES)
    pool = [load_image(p)[..., :3] for p in paths]
    if not pool:
        raise ConfigurationError(f"background pool is empty: {directory}")
    return pool


def build_background(
    pool: list[np.ndarray],
    canvas_size: tuple[int, int],
    rng: np.random.Generator,
    grid: Optional[tuple[int, int]] = None,
) -> np.ndarray:
    """Cover a canvas with a grid collage of random crops of pool images."""
    return _build_background(pool, canvas_size, DrawSource(rng=rng), grid=grid)


def _build_background(pool, canvas_size, draws: DrawSource, grid=None) -> np.ndarray:
    if not pool:
        raise ConfigurationError("background pool is empty")
    for img in pool:
        ensure_image(img, channels=(3,))
    width, height = canvas_size
    canvas = np.zeros((height, width, 3), dtype=np.uint8)

    if grid is None:
        nx, ny = draws.draw(
            "background_grid", lambda r: [int(r.integers(1, 5)), int(r.integers(1, 5))]
        )
    else:
        nx, ny = grid
        draws.note("background_grid_fixed", value=[int(nx), int(ny)])
    nx = min(max(int(nx), 1), width)
    ny = min(max(int(ny), 1), height)

    x_edges = np.linspace(0, width, nx + 1).round().astype(int)
    y_edges = np.linspace(0, height, ny + 1).round().astype(int)
    for row in range(ny):
        for col in range(nx):
            x0, x1 = x_edges[col], x_edges[col + 1]
            y0, y1 = y_edges[row], y_edges[row + 1]
            cell_w, cell_h = x1 - x0, y1 - y0
            choice = draws.draw(
                "background_image",
                lambda r: int(r.integers(len(pool))),
                cell=[row, col],
            )
            tile = pool[choice]
            tile_h, tile_w = tile.shape[:2]
            if tile_w < cell_w or tile_h < cell_h:
                scale = max(cell_w / tile_w, cell_h / tile_h)
                new_w = max(cell_w, int(np.ceil(tile_w * scale)))
                new_h = max(cell_h, int(np.ceil(tile_h * scale)))
                tile = cv2.resize(tile, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
                tile_h, tile_w = new_h, new_w
                draws.note("background_tile_upscaled", cell=[row, col], size=[new_w, new_h])
            off_x, off_y = draws.draw(
                "background_crop",
                lambda r: [
                    int(r.integers(0, tile_w - cell_w + 1)),
                    int(r.integers(0, tile_h - cell_h + 1)),
                ],
                cell=[row, col],
            )
            canvas[y0:y1, x0:x1] = tile[off_y : off_y + cell_h, off_x : off_x + cell_w]
    return canvas


def _rotate_patch(patch: np.ndarray, target: np.ndarray, angle: float):
    """Rotate patch (bilinear color, nearest alpha/mask) on an expanded canvas.

    Exact multiples of 90 degrees are index permutations and stay lossless.
    """
    if angle % 90.0 == 0.0:
        k = int(round(angle / 90.0)) % 4
        if k == 0:
            return patch, target
        return np.rot90(patch, k).copy(), np.rot90(target, k).copy()

    h, w = patch.shape[:2]
    center = (w / 2.0, h / 2.0)
    matrix = cv2.getRotationMatrix2D(center, angle, 1.0)
    cos = abs(matrix[0, 0])
    sin = abs(matrix[0, 1])
    new_w = int(np.ceil(h * sin + w * cos))
    new_h = int(np.ceil(h * cos + w * sin))
    matrix[0, 2] += new_w / 2.0 - center[0]
    matrix[1, 2] += new_h / 2.0 - center[1]

    color = cv2.warpAffine(
        patch[..., :3], matrix, (new_w, new_h), flags=cv2.INTER_LINEAR, borderValue=0
    )
    alpha = cv2.warpAffine(
        patch[..., 3], matrix, (new_w, new_h), flags=cv2.INTER_NEAREST, borderValue=0
    )
    rotated_target = cv2.warpAffine(
        target.astype(np.uint8), matrix, (new_w, new_h), flags=cv2.INTER_NEAREST, borderValue=0
    ).astype(bool)
    return np.dstack([color, alpha]), rotated_target


def _resize_patch(patch: np.ndarray, target: np.ndarray, size: tuple[int, int]):
    new_w, new_h = size
    if (patch.shape[1], patch.shape[0]) == (new_w, new_h):
        return patch, target
    color = cv2.resize(patch[..., :3], (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    alpha = cv2.resize(patch[..., 3], (new_w, new_h), interpolation=cv2.INTER_NEAREST)
    resized_target = cv2.resize(
        target.astype(np.uint8), (new_w, new_h), interpolation=cv2.INTER_NEAREST
    ).astype(bool)
    return np.dstack([color, alpha]), resized_target


def transform_exemplar(
    crop: ExemplarCrop,
    settings: SynthSettings,
    rng: np.random.Generator,
) -> Optional[PlacedExemplar]:
    """Randomly transform one crop and place it inside the canvas.

    Returns None (skip signal) when the patch cannot be made to fit after
    the configured number of rescale attempts.
    """
    return _transform_exemplar(crop, settings, DrawSource(rng=rng), slot=0)


def _transform_exemplar(crop, settings: SynthSettings, draws: DrawSource, slot: int):
    canvas_w, canvas_h = settings.canvas_size
    patch = crop.patch
    target = crop.target_mask

    # 1. Random crop of the surroundings, never cutting into the protected
    # bounding box (target pixels, or the whole structure for clean crops).
    c_lo, c_hi = settings.surround_crop_range
    fractions = draws.draw(
        "surround_crop",
        lambda r: [float(v) for v in r.uniform(c_lo, c_hi, size=4)],
        slot=slot,
    )
    protected = target if target.any() else (patch[..., 3] > 0)
    ys, xs = np.nonzero(protected)
    h, w = patch.shape[:2]
    margin = (xs.min(), ys.min(), w - 1 - xs.max(), h - 1 - ys.max())
    cut = [int(f * m) for f, m in zip(fractions, margin)]
    patch = patch[cut[1] : h - cut[3], cut[0] : w - cut[2]]
    target = target[cut[1] : h - cut[3], cut[0] : w - cut[2]]

    # 2. Rotation; alpha and target follow the same transform.
    a_lo, a_hi = settings.rotation_range
    angle = float(draws.draw("rotation", lambda r: float(r.uniform(a_lo, a_hi)), slot=slot))
    patch, target = _rotate_patch(patch, target, angle)
    alpha = patch[..., 3] > 0
    if not alpha.any():
        draws.note("skipped", slot=slot, reason="alpha-vanished")
        return None
    ys, xs = np.nonzero(alpha)
    patch = patch[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]
    target = target[ys.min() : ys.max() + 1, xs.min() : xs.max() + 1]

    # 3. Scale; resample the factor while the patch exceeds the canvas.
    s_lo, s_hi = settings.scale_range
    h, w = patch.shape[:2]
    size = None
    for attempt in range(settings.scale_retries + 1):
        factor = float(
            draws.draw("scale", lambda r: float(r.uniform(s_lo, s_hi)), slot=slot, attempt=attempt)
        )
        new_w = max(1, round(w * factor))
        new_h = max(1, round(h * factor))
        if new_w <= canvas_w and new_h <= canvas_h:
            size = (new_w, new_h)
            break
    if size is None:
        draws.note("skipped", slot=slot, reason="exceeds-canvas")
        return None
    patch, target = _resize_patch(patch, target, size)
    if not (patch[..., 3] > 0).any():
        draws.note("skipped", slot=slot, reason="alpha-vanished")
        return None

    # 4. Uniform placement keeping the patch fully inside the canvas.
    x, y = draws.draw(
        "placement",
        lambda r: [
            int(r.integers(0, canvas_w - size[0] + 1)),
            int(r.integers(0, canvas_h - size[1] + 1)),
        ],
        slot=slot,
    )
    return PlacedExemplar(patch=patch, target_mask=target, x=x, y=y)


def generate_sample(
    library: list[ExemplarCrop],
    settings: SynthSettings,
    rng: Optional[np.random.Generator] = None,
    pool: Optional[list[np.ndarray]] = None,
    draws: Optional[DrawSource] = None,
) -> SyntheticSample:
    """Generate one synthetic sample: collage background + pasted exemplars.

    Deterministic for a fixed seed; pass ``draws`` with a recorded log to
    replay a previous generation without an RNG.
    """
    if not library:
        raise ConfigurationError("exemplar library is empty")
    if draws is None:
        draws = DrawSource(rng=rng if rng is not None else derive_rng(settings.seed, "synth"))
    if pool is None:
        pool = load_background_pool(settings.background_dir)

    canvas_w, canvas_h = settings.canvas_size
    canvas = _build_background(pool, settings.canvas_size, draws)
    occupied = np.zeros((canvas_h, canvas_w), dtype=bool)

    c_lo, c_hi = settings.exemplar_count
    count = int(draws.draw("exemplar_count", lambda r: int(r.integers(c_lo, c_hi + 1))))

    pastes = []
    for slot in range(count):
        index = int(
            draws.draw("exemplar_choice", lambda r: int(r.integers(len(library))), slot=slot)
        )
        crop = library[index]
        placed = _transform_exemplar(crop, settings, draws, slot=slot)
        if placed is None:
            continue
        alpha = placed.patch[..., 3] > 0
        patch_h, patch_w = alpha.shape
        x, y = placed.x, placed.y

        # Prefer non-overlapping placements; accept overlap after retries.
        retries = 0
        while (occupied[y : y + patch_h, x : x + patch_w] & alpha).any():
            if retries >= settings.placement_retries:
                break
            retries += 1
            x, y = draws.draw(
                "placement",
                lambda r: [
                    int(r.integers(0, canvas_w - patch_w + 1)),
                    int(r.integers(0, canvas_h - patch_h + 1)),
                ],
                slot=slot,
                retry=retries,
            )
        overlapping = bool((occupied[y : y + patch_h, x : x + patch_w] & alpha).any())
        draws.note("placed", slot=slot, x=x, y=y, retries=retries, overlapping=overlapping)

        window = canvas[y : y + patch_h, x : x + patch_w]
        window[alpha] = placed.patch[..., :3][alpha]
        occupied[y : y + patch_h, x : x + patch_w] |= alpha
        pastes.append((crop.label, x, y, alpha, placed.target_mask, slot))

    # Instance masks: pasted targets minus whatever later pastes cover.
    instances = []
    for i, (label, x, y, alpha, target, slot) in enumerate(pastes):
        if label is None:
            continue
        full = np.zeros((canvas_h, canvas_w), dtype=bool)
        full[y : y + target.shape[0], x : x + target.shape[1]] = target
        for _, x2, y2, alpha2, _, _ in pastes[i + 1 :]:
            full[y2 : y2 + alpha2.shape[0], x2 : x2 + alpha2.shape[1]] &= ~alpha2
        if full.any():
            instances.append(Instance(label=label, mask=full))
            draws.note("instance", slot=slot, label=label.value, area=int(full.sum()))
        else:
            draws.note("instance_occluded", slot=slot)

    return SyntheticSample(image=canvas, instances=instances, log=draws.log)


def replay_sample(
    library: list[ExemplarCrop],
    settings: SynthSettings,
    log: list[dict],
    pool: Optional[list[np.ndarray]] = None,
) -> SyntheticSample:
    """Reproduce a sample from its generation log, consuming no randomness."""
    return generate_sample(library, settings, pool=pool, draws=DrawSource(replay=log))


def generate_samples(
    library: list[ExemplarCrop],
    settings: SynthSettings,
    count: int,
    pool: Optional[list[np.ndarray]] = None,
    workers: int = 1,
) -> list[SyntheticSample]:
    """Generate ``count`` samples, optionally in parallel.

    Sample ``i`` draws from the stream (seed, "synth", i), so results are
    identical for any worker count and independent of completion order.
    """
    if pool is None:
        pool = load_background_pool(settings.background_dir)

    def one(index: int) -> SyntheticSample:
        return generate_sample(
            library, settings, rng=derive_rng(settings.seed, "synth", index), pool=pool
        )

    if workers <= 1:
        return [one(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool_exec:
        return list(pool_exec.map(one, range(count)))


def write_dataset(samples: list[SyntheticSample], out_dir, prefix: str = "synthetic") -> Path:
    """Write sample images, generation logs, and a canonical manifest."""
    root = Path(out_dir)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "logs").mkdir(parents=True, exist_ok=True)
    entries = []
    for i, sample in enumerate(samples):
        name = f"{prefix}_{i:05d}"
        save_image(root / "images" / f"{name}.png", sample.image)
        (root / "logs" / f"{name}.json").write_text(
            json.dumps(sample.log, indent=2, sort_keys=True) + "\n", "utf-8"
        )
        height, width = sample.image.shape[:2]
        entries.append(
            AnnotatedImage(
                path=f"images/{name}.png",
                width=width,
                height=height,
                instances=[
                    MaskRegion(label=inst.label, mask=inst.mask) for inst in sample.instances
                ],
            )
        )
    manifest_path = root / "manifest.json"
    write_image_manifest(manifest_path, entries)
    return manifest_path


# --- exemplar library on disk: RGBA image + sidecar JSON per crop ---

def save_exemplar(directory, name: str, crop: ExemplarCrop) -> None:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    save_image(root / f"{name}.png", crop.patch)
    height, width = crop.target_mask.shape
    sidecar = {
        "class": crop.label.value if crop.label is not None else _CLEAN_CLASS_NAME,
        "source_id": crop.source_id,
        "target_mask": {
            "rle": rle_encode(crop.target_mask),
            "width": width,
            "height": height,
        },
    }
    (root / f"{name}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n", "utf-8")


def load_exemplar(sidecar_path) -> ExemplarCrop:
    sidecar_path = Path(sidecar_path)
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    patch = load_image(sidecar_path.with_suffix(".png"))
    if patch.shape[2] != 4:
        raise ConfigurationError(f"exemplar image must be RGBA: {sidecar_path.with_suffix('.png')}")
    raw_class = sidecar["class"]
    label = None if raw_class == _CLEAN_CLASS_NAME else ClassLabel.parse(raw_class)
    mask_doc = sidecar["target_mask"]
    target = rle_decode(mask_doc["rle"], mask_doc["width"], mask_doc["height"])
    return ExemplarCrop(
        patch=patch, label=label, target_mask=target, source_id=sidecar.get("source_id", "")
    )


def load_exemplar_library(directory) -> list[ExemplarCrop]:
    root = Path(directory)
    if not root.is_dir():
        raise ConfigurationError(f"exemplar library directory not found: {directory}")
    crops = [load_exemplar(p) for p in sorted(root.glob("*.json"))]
    if not crops:
        raise ConfigurationError(f"exemplar library is empty: {directory}")
    return crops


def make_exemplar(
    image: np.ndarray,
    structure_mask: np.ndarray,
    label: Optional[ClassLabel],
    target_mask: Optional[np.ndarray] = None,
    source_id: str = "",
) -> ExemplarCrop:
    """Cut an exemplar crop out of a labeled image.

    The crop is the bounding box of the structure mask; pixels outside the
    structure are left transparent.
    """
    ensure_image(image, channels=(3,))
    ensure_mask(structure_mask)
    if structure_mask.shape != image.shape[:2]:
        raise ShapeMismatchError("structure mask must match image dimensions")
    if target_mask is None:
        target_mask = np.zeros_like(structure_mask)
    ensure_mask(target_mask)
    ys, xs = np.nonzero(structure_mask)
    if ys.size == 0:
        raise ConfigurationError("structure mask is empty")
    y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
    alpha = (structure_mask[y0:y1, x0:x1] * np.uint8(255)).astype(np.uint8)
    patch = np.dstack([image[y0:y1, x0:x1], alpha])
    return ExemplarCrop(
        patch=patch,
        label=label,
        target_mask=target_mask[y0:y1, x0:x1] & structure_mask[y0:y1, x0:x1],
        source_id=source_id,
    )


@dataclass
class BasicAugmentSettings:
    """Framework-style augmentation: short-edge rescale, flip, crop."""

    short_edge_sizes: list[int]
    hflip_probability: float = 0.5
    crop_size: Optional[tuple[int, int]] = None  # (W, H)

    def __post_init__(self) -> None:
        if not self.short_edge_sizes:
            raise ConfigurationError("short_edge_sizes must not be empty")
        if not 0.0 <= self.hflip_probability <= 1.0:
            raise ConfigurationError("hflip_probability must lie in [0, 1]")


def basic_augment(
    image: np.ndarray,
    instances: list[Instance],
    settings: BasicAugmentSettings,
    rng: np.random.Generator,
) -> tuple[np.ndarray, list[Instance]]:
    """Apply short-edge scaling, random horizontal flip, and random crop.

    Masks undergo the identical geometric transform (nearest-neighbor);
    instances whose masks become empty after cropping are dropped.
    """
    ensure_image(image, channels=(3,))
    height, width = image.shape[:2]

    target_edge = int(settings.short_edge_sizes[int(rng.integers(len(settings.short_edge_sizes)))])
    if height <= width:
        new_h = target_edge
        new_w = round(width * target_edge / height)
    else:
        new_w = target_edge
        new_h = round(height * target_edge / width)
    out = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    masks = [
        cv2.resize(inst.mask.astype(np.uint8), (new_w, new_h), interpolation=cv2.INTER_NEAREST).astype(bool)
        for inst in instances
    ]

    if float(rng.random()) < settings.hflip_probability:
        out = np.ascontiguousarray(out[:, ::-1])
        masks = [np.ascontiguousarray(m[:, ::-1]) for m in masks]

    if settings.crop_size is not None:
        crop_w, crop_h = settings.crop_size
        if crop_w > new_w or crop_h > new_h:
            raise ConfigurationError(
                f"crop size {settings.crop_size} exceeds scaled image ({new_w}, {new_h})"
            )
        x = int(rng.integers(0, new_w - crop_w + 1))
        y = int(rng.integers(0, new_h - crop_h + 1))
        out = out[y : y + crop_h, x : x + crop_w]
        masks = [m[y : y + crop_h, x : x + crop_w] for m in masks]

    surviving = [
        Instance(label=inst.label, mask=mask, confidence=inst.confidence)
        for inst, mask in zip(instances, masks)
        if mask.any()
    ]
    return np.ascontiguousarray(out), surviving
