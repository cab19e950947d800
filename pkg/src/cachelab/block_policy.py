"""Block-level refresh selection from per-block effect scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DenominatorUnderflow, NoRefreshSteps
from .tensorlab import EPS_DEN, l1_norm


@dataclass(frozen=True)
class BlockEffects:
    """Latest effect per block and how many steps old it is."""

    effects: tuple[float, ...]
    staleness: tuple[int, ...]

    @classmethod
    def from_cache(cls, cache, step: int) -> BlockEffects:
        if any(e is None for e in cache.block_effects):
            raise ValueError("block effects are undefined before the first full step")
        return cls(
            effects=tuple(float(e) for e in cache.block_effects),
            staleness=tuple(step - s for s in cache.block_steps),
        )


def block_effect(inp, out) -> float:
    """Input-output relative change ``|O - I|_1 / |I|_1``."""
    inp = np.asarray(inp, dtype=np.float64)
    out = np.asarray(out, dtype=np.float64)
    if inp.shape != out.shape:
        raise ValueError(f"shape {inp.shape} != {out.shape}")
    den = l1_norm(inp)
    if den <= EPS_DEN:
        raise DenominatorUnderflow("block input has zero L1 norm")
    return l1_norm(out - inp) / den


def select_blocks(effects: Sequence[float], delta_blk: float) -> list[int]:
    """0-based indices of blocks to recompute.

    Effects are summed left to right from the start of the current reused
    run; once the running sum exceeds ``delta_blk`` that block is refreshed
    and the run restarts after it.
    """
    if not delta_blk > 0:
        raise ValueError("delta_blk must be > 0")
    chosen = []
    acc = 0.0
    for l, e in enumerate(effects):
        acc += float(e)
        if acc > delta_blk:
            chosen.append(l)
            acc = 0.0
    return chosen


def refresh_fraction(effects: Sequence[float], delta_blk: float) -> float:
    return len(select_blocks(effects, delta_blk)) / len(effects)


def delta_blk_for_ratio(effect_rows, target: float, iters: int = 100) -> float:
    """Bisect ``delta_blk`` so the mean refreshed fraction over ``effect_rows`` approaches ``target``.

    The fraction is a non-increasing step function of the threshold, so the
    returned value is the largest threshold whose mean fraction is still
    >= ``target`` (hit exactly when the step function allows it).
    """
    rows = [np.asarray(r, dtype=np.float64) for r in effect_rows]
    if not rows:
        raise ValueError("need at least one effect row")
    if not 0.0 <= target <= 1.0:
        raise ValueError("target ratio must lie in [0, 1]")

    def frac(d):
        return float(np.mean([refresh_fraction(r, d) for r in rows]))

    hi = float(max(r.sum() for r in rows)) * 2.0 + 1.0  # selects nothing
    if target <= 0.0:
        return hi
    lo = min(float(r.min()) for r in rows) * 0.5  # below every single effect
    lo = max(lo, 1e-300)
    if frac(lo) < target:
        return lo
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if frac(mid) >= target:
            lo = mid
        else:
            hi = mid
    return lo


def effective_refresh_ratio(block_sets: Sequence, n_blocks: int) -> float:
    """Refreshed blocks over ``n_blocks`` x number of refresh steps."""
    if not block_sets:
        raise NoRefreshSteps("trace has no refresh steps")
    return sum(len(s) for s in block_sets) / (n_blocks * len(block_sets))
