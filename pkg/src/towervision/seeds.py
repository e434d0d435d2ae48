"""Named derivation of RNG streams from a single master seed.

Every random draw in the toolkit flows from one non-negative master seed
through ``derive_rng(master, component, index, ...)``, so parallel work is
order-independent and any artifact is reproducible from its logged seed path.
"""

from __future__ import annotations

import zlib

import numpy as np

from .core import ConfigurationError


def derive_rng(master_seed: int, *path) -> np.random.Generator:
    """Return a generator for the stream named by (master_seed, *path).

    Path components may be non-negative integers or strings; strings are
    hashed with CRC-32 so the derivation is stable across processes.
    """
    tokens = [_token(master_seed)]
    tokens.extend(_token(p) for p in path)
    return np.random.default_rng(np.random.SeedSequence(tokens))


def derive_seed(master_seed: int, *path) -> int:
    """Return a derived integer seed for the stream named by the path."""
    tokens = [_token(master_seed)]
    tokens.extend(_token(p) for p in path)
    return int(np.random.SeedSequence(tokens).generate_state(1)[0])


def _token(part) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    value = int(part)
    if value < 0:
        raise ConfigurationError(f"seed path components must be >= 0, got {part!r}")
    return value
