"""Independent oracles and fixture builders shared across the test suite.

Everything here deliberately avoids the library's own code paths: the
point-in-polygon check is a scalar loop, the clone-system oracle assembles a
dense matrix from the equation definition and solves it directly, and the
metric oracles work on Python sets of pixel coordinates.
"""

from __future__ import annotations

import numpy as np

from towervision.core import ClassLabel, Instance
from towervision.metrics import EvalPair
from towervision.tile import PredictionSet

NEIGHBOR_STEPS = ((-1, 0), (1, 0), (0, -1), (0, 1))


# --- rasterization oracle ---

def point_in_polygon(px: float, py: float, vertices) -> bool:
    """Scalar even-odd crossing test, written independently of the library."""
    inside = False
    count = len(vertices)
    for k in range(count):
        x1, y1 = vertices[k]
        x2, y2 = vertices[(k + 1) % count]
        if (y1 > py) != (y2 > py):
            x_hit = (x2 - x1) * (py - y1) / (y2 - y1) + x1
            if px < x_hit:
                inside = not inside
    return inside


def rasterize_oracle(vertices, width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for i in range(height):
        for j in range(width):
            mask[i, j] = point_in_polygon(j + 0.5, i + 0.5, vertices)
    return mask


# --- Poisson clone oracle: dense assembly straight from the definition ---

def dense_clone_solve(task) -> np.ndarray:
    """Solve the clone system with dense Gaussian elimination.

    Returns float values of shape (n_region_pixels, 3) in row-major region
    order, matching the layout of ``solve_interior``.
    """
    coords = np.argwhere(task.region)
    n = coords.shape[0]
    index = {(int(i), int(j)): p for p, (i, j) in enumerate(coords)}
    dx, dy = task.offset
    src = task.source.astype(np.float64)
    dst = task.destination.astype(np.float64)

    matrix = np.zeros((n, n), dtype=np.float64)
    rhs = np.zeros((n, 3), dtype=np.float64)
    for p, (i, j) in enumerate(coords):
        matrix[p, p] = 4.0
        for di, dj in NEIGHBOR_STEPS:
            ni, nj = int(i + di), int(j + dj)
            q = index.get((ni, nj))
            if q is not None:
                matrix[p, q] -= 1.0
            else:
                rhs[p] += dst[ni, nj]
            rhs[p] += src[i + dy, j + dx] - src[ni + dy, nj + dx]
    return np.linalg.solve(matrix, rhs)


# --- metric oracles on pixel sets ---

def _pixel_set(mask: np.ndarray) -> set:
    return {(int(i), int(j)) for i, j in np.argwhere(mask)}


def oracle_precision_recall(pairs, threshold, class_filter):
    kept_total = correct = truth_total = detected = 0
    for pair in pairs:
        kept = [
            p
            for p in pair.predictions.instances
            if p.confidence >= threshold and (class_filter is None or p.label == class_filter)
        ]
        truth = [
            g
            for g in pair.ground_truth
            if class_filter is None or g.label == class_filter
        ]
        kept_sets = [(p.label, _pixel_set(p.mask)) for p in kept]
        truth_sets = [(g.label, _pixel_set(g.mask)) for g in truth]
        kept_total += len(kept_sets)
        truth_total += len(truth_sets)
        for label, pixels in kept_sets:
            if any(tl == label and pixels & tp for tl, tp in truth_sets):
                correct += 1
        for label, pixels in truth_sets:
            if any(kl == label and pixels & kp for kl, kp in kept_sets):
                detected += 1
    precision = correct / kept_total if kept_total else None
    recall = detected / truth_total if truth_total else None
    return precision, recall


def oracle_aggregate_iou(pairs, threshold, class_filter):
    intersection = union = 0
    for pair in pairs:
        predicted = set()
        for p in pair.predictions.instances:
            if p.confidence >= threshold and (class_filter is None or p.label == class_filter):
                predicted |= _pixel_set(p.mask)
        labeled = set()
        for g in pair.ground_truth:
            if class_filter is None or g.label == class_filter:
                labeled |= _pixel_set(g.mask)
        intersection += len(predicted & labeled)
        union += len(predicted | labeled)
    return intersection / union if union else None


# --- fixture builders ---

def rect_mask(width: int, height: int, x: int, y: int, w: int, h: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    mask[y : y + h, x : x + w] = True
    return mask


def random_polygon(rng: np.random.Generator, width: int, height: int) -> np.ndarray:
    """Random (possibly self-intersecting) polygon roughly spanning the grid."""
    n = int(rng.integers(3, 13))
    xs = rng.uniform(-2.0, width + 2.0, size=n)
    ys = rng.uniform(-2.0, height + 2.0, size=n)
    if rng.random() < 0.5:
        xs = np.round(xs)
        ys = np.round(ys)
    return np.column_stack([xs, ys])


def random_eval_fixture(rng: np.random.Generator, size: int = 64):
    """Random ground truth and predictions over a square frame."""
    labels = [ClassLabel.DAMAGE, ClassLabel.DIRT]
    truth = []
    for _ in range(int(rng.integers(0, 4))):
        w = int(rng.integers(2, max(3, size // 3)))
        h = int(rng.integers(2, max(3, size // 3)))
        x = int(rng.integers(0, size - w + 1))
        y = int(rng.integers(0, size - h + 1))
        truth.append(
            Instance(
                label=labels[int(rng.integers(2))],
                mask=rect_mask(size, size, x, y, w, h),
            )
        )
    predictions = []
    for _ in range(int(rng.integers(0, 5))):
        w = int(rng.integers(2, max(3, size // 3)))
        h = int(rng.integers(2, max(3, size // 3)))
        x = int(rng.integers(0, size - w + 1))
        y = int(rng.integers(0, size - h + 1))
        predictions.append(
            Instance(
                label=labels[int(rng.integers(2))],
                mask=rect_mask(size, size, x, y, w, h),
                confidence=float(rng.uniform(0.0, 1.0)),
            )
        )
    pair = EvalPair(
        image_id="fixture",
        ground_truth=truth,
        predictions=PredictionSet(
            image_id="fixture", width=size, height=size, instances=predictions
        ),
    )
    return pair
