"""Token-level refresh selection by per-token change since the last computed step."""

from __future__ import annotations

import math

import numpy as np

from .errors import ShapeMismatch


def token_diffs(x_t, x_ref) -> np.ndarray:
    """Per-row mean absolute difference, shape (N,)."""
    x_t = np.asarray(x_t, dtype=np.float64)
    x_ref = np.asarray(x_ref, dtype=np.float64)
    if x_t.shape != x_ref.shape or x_t.ndim != 2:
        raise ShapeMismatch(f"need equal (N, D) states, got {x_t.shape} and {x_ref.shape}")
    return np.abs(x_t - x_ref).mean(axis=1)


def n_active(n_tokens: int, rho_tok: float) -> int:
    # ceiling (with float slack) so any rho > 0 recomputes at least one token
    return min(n_tokens, max(1, math.ceil(rho_tok * n_tokens - 1e-12)))


def select_tokens(diffs, rho_tok: float) -> list[int]:
    """Indices of the ceil(rho * N) highest-diff tokens, ascending.

    Ties go to the lower index.
    """
    if not 0.0 < rho_tok <= 1.0:
        raise ValueError("rho_tok must lie in (0, 1]")
    diffs = np.asarray(diffs, dtype=np.float64)
    k = n_active(diffs.size, rho_tok)
    # stable sort on -diff keeps lower indices first among equal values
    order = np.argsort(-diffs, kind="stable")
    return sorted(int(i) for i in order[:k])


def token_mask(n_tokens: int, selected) -> np.ndarray:
    mask = np.zeros(n_tokens, dtype=bool)
    mask[list(selected)] = True
    return mask
