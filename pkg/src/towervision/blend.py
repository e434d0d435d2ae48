"""Seamless cloning of a source patch into a destination image.

For every pixel p inside the paste region and every channel, the output
satisfies the discrete Poisson equation over the 4-neighborhood N(p):

    4*f(p) - sum_{q in N(p), q in region} f(q)
        = sum_{q in N(p), q outside region} dest(q)
        + sum_{q in N(p)} (src(p) - src(q))

i.e. interior gradients follow the source while the region boundary pins the
destination values. Channels are solved independently with red-black
Gauss-Seidel relaxation; quantization to uint8 happens only after the
relative residual drops below the configured tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    ConfigurationError,
    ShapeMismatchError,
    ToolkitError,
    ensure_image,
    ensure_mask,
)

_NEIGHBOR_STEPS = ((-1, 0), (1, 0), (0, -1), (0, 1))


class InvalidCloneRegionError(ToolkitError):
    """Paste region touches the image border or escapes the source."""


class ConvergenceError(ToolkitError):
    """Relaxation did not reach the requested residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass
class SolverSettings:
    tolerance: float = 1e-4
    max_iterations: int = 10_000

    def __post_init__(self) -> None:
        if self.tolerance <= 0:
            raise ConfigurationError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ConfigurationError("max_iterations must be at least 1")


@dataclass
class CloneTask:
    """Paste ``source`` content into ``destination`` over ``region``.

    ``offset=(dx, dy)`` maps destination coordinates into source
    coordinates: the source sample for destination pixel (x, y) is
    ``source[y + dy, x + dx]``.
    """

    source: np.ndarray
    destination: np.ndarray
    region: np.ndarray
    offset: tuple[int, int] = (0, 0)

    def __post_init__(self) -> None:
        ensure_image(self.source, channels=(3,))
        ensure_image(self.destination, channels=(3,))
        ensure_mask(self.region)
        if self.region.shape != self.destination.shape[:2]:
            raise ShapeMismatchError("region must match destination dimensions")
        if not self.region.any():
            raise InvalidCloneRegionError("paste region is empty")
        if (
            self.region[0, :].any()
            or self.region[-1, :].any()
            or self.region[:, 0].any()
            or self.region[:, -1].any()
        ):
            raise InvalidCloneRegionError(
                "paste region touches the destination border; erode it first"
            )
        rows, cols = np.nonzero(self.region)
        dx, dy = self.offset
        src_h, src_w = self.source.shape[:2]
        # Guidance reads the source at every 4-neighbor of the region, so the
        # one-pixel dilation must fit inside the source after shifting.
        if (
            rows.min() - 1 + dy < 0
            or rows.max() + 1 + dy >= src_h
            or cols.min() - 1 + dx < 0
            or cols.max() + 1 + dx >= src_w
        ):
            raise InvalidCloneRegionError(
                "shifted paste region (plus its one-pixel rim) escapes the source"
            )


@dataclass
class SolveReport:
    iterations: int
    residual: float
    converged: bool
    residuals: list[float] = field(default_factory=list)


def _assemble(task: CloneTask):
    """Index arrays and right-hand side of the interior linear system."""
    rows, cols = np.nonzero(task.region)
    n = rows.size
    index = np.full(task.region.shape, -1, dtype=np.int64)
    index[rows, cols] = np.arange(n)

    dx, dy = task.offset
    src = task.source.astype(np.float64)
    dst = task.destination.astype(np.float64)

    neighbor_index = np.empty((n, 4), dtype=np.int64)
    b = 4.0 * src[rows + dy, cols + dx]
    for k, (di, dj) in enumerate(_NEIGHBOR_STEPS):
        ni = rows + di
        nj = cols + dj
        inside = index[ni, nj]
        neighbor_index[:, k] = np.where(inside >= 0, inside, n)
        outside = inside < 0
        b -= src[ni + dy, nj + dx]
        if outside.any():
            b[outside] += dst[ni[outside], nj[outside]]
    parity = ((rows + cols) % 2).astype(bool)
    return rows, cols, neighbor_index, b, parity


def solve_interior(
    task: CloneTask,
    settings: Optional[SolverSettings] = None,
    record_residuals: bool = False,
) -> tuple[np.ndarray, SolveReport]:
    """Relax the interior system; returns float values per region pixel.

    The returned array has shape (n_region_pixels, 3) in row-major region
    order and is not yet clamped or rounded.
    """
    settings = settings or SolverSettings()
    rows, cols, neighbor_index, b, parity = _assemble(task)
    n = rows.size

    padded = np.zeros((n + 1, 3), dtype=np.float64)
    values = padded[:n]
    values[:] = task.destination[rows, cols]

    b_norm = np.linalg.norm(b, axis=0)
    b_norm[b_norm == 0.0] = 1.0
    halves = (~parity, parity)

    report = SolveReport(iterations=0, residual=np.inf, converged=False)
    for sweep in range(1, settings.max_iterations + 1):
        for half in halves:
            neighbor_sum = padded[neighbor_index[half]].sum(axis=1)
            values[half] = (b[half] + neighbor_sum) / 4.0
        residual_vec = b + padded[neighbor_index].sum(axis=1) - 4.0 * values
        relative = float(
            (np.linalg.norm(residual_vec, axis=0) / b_norm).max()
        )
        report.iterations = sweep
        report.residual = relative
        if record_residuals:
            report.residuals.append(relative)
        if relative <= settings.tolerance:
            report.converged = True
            return values.copy(), report

    raise ConvergenceError(
        f"no convergence after {settings.max_iterations} sweeps; "
        f"relative residual {report.residual:.3e} > {settings.tolerance:.3e}",
        residual=report.residual,
    )


def seamless_clone(task: CloneTask, settings: Optional[SolverSettings] = None) -> np.ndarray:
    """Solve the clone task and return the composited uint8 image.

    Pixels outside the paste region are bit-identical to the destination.
    """
    values, _ = solve_interior(task, settings)
    output = task.destination.copy()
    output[task.region] = np.clip(np.rint(values), 0, 255).astype(np.uint8)
    return output


def residual(task: CloneTask, candidate: np.ndarray) -> float:
    """Max over channels of the relative L2 residual at candidate values."""
    if not isinstance(candidate, np.ndarray) or candidate.shape != task.destination.shape:
        raise ShapeMismatchError("candidate must match destination dimensions")
    rows, cols, neighbor_index, b, _ = _assemble(task)
    n = rows.size
    padded = np.zeros((n + 1, 3), dtype=np.float64)
    padded[:n] = candidate[rows, cols]
    residual_vec = b + padded[neighbor_index].sum(axis=1) - 4.0 * padded[:n]
    b_norm = np.linalg.norm(b, axis=0)
    b_norm[b_norm == 0.0] = 1.0
    return float((np.linalg.norm(residual_vec, axis=0) / b_norm).max())
