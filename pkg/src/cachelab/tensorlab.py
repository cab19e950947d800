"""Dense float64 arrays, seeded init, and the norms used by every cache formula.

Tensors are plain ``numpy.ndarray`` objects of dtype float64. The random
stream is numpy's PCG64 bit generator, whose output is specified and
stable across platforms for a given seed.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DenominatorUnderflow, ShapeMismatch, ZeroVector

EPS_DEN = 1e-30

DTYPE = np.float64


def make_rng(seed: int) -> np.random.Generator:
    """Single-owner generator for one run; same seed gives the same stream."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def as_tensor(values) -> np.ndarray:
    return np.asarray(values, dtype=DTYPE)


def seeded_init(shape: Sequence[int] | int, seed: int, scale: float = 1.0) -> np.ndarray:
    """Standard-normal entries from a fresh PCG64 stream, times ``scale``."""
    if isinstance(shape, int):
        shape = (shape,)
    shape = tuple(int(s) for s in shape)
    if any(s <= 0 for s in shape):
        raise ValueError(f"extents must be positive, got {shape}")
    if scale < 0:
        raise ValueError("scale must be non-negative")
    return make_rng(seed).standard_normal(shape) * float(scale)


def _check_shapes(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeMismatch(f"shape {a.shape} != {b.shape}")


def l1_norm(t) -> float:
    return float(np.abs(np.asarray(t, dtype=DTYPE)).sum())


def rel_l1(a, b) -> float:
    """``|a - b|_1 / |b|_1``; ``b`` is the reference."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    _check_shapes(a, b)
    den = l1_norm(b)
    if den <= EPS_DEN:
        raise DenominatorUnderflow(f"reference L1 norm {den!r} <= {EPS_DEN}")
    return l1_norm(a - b) / den


def cosine(a, b) -> float:
    a = np.asarray(a, dtype=DTYPE).ravel()
    b = np.asarray(b, dtype=DTYPE).ravel()
    _check_shapes(a, b)
    na = float(np.sqrt(np.dot(a, a)))
    nb = float(np.sqrt(np.dot(b, b)))
    if na <= EPS_DEN or nb <= EPS_DEN:
        raise ZeroVector("cosine of a zero vector is undefined")
    c = float(np.dot(a, b)) / (na * nb)
    return min(1.0, max(-1.0, c))
