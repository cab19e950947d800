"""Delta cache and reuse-error accumulator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CacheMiss
from .tensorlab import rel_l1


@dataclass
class DeltaCache:
    """Cached residuals from the most recent computed step.

    ``block_deltas[l]`` is block ``l``'s full (N, D) residual from its last
    computation; ``block_steps[l]`` and ``block_effects[l]`` record when and
    how strongly it moved its input. ``ref_input`` is the net input at
    ``t_calc``, the reference for token diffs.
    """

    n_blocks: int
    t_calc: int | None = None
    step_delta: np.ndarray | None = None
    ref_input: np.ndarray | None = None
    block_deltas: list = field(default_factory=list)
    block_steps: list = field(default_factory=list)
    block_effects: list = field(default_factory=list)

    def __post_init__(self):
        if not self.block_deltas:
            self.block_deltas = [None] * self.n_blocks
            self.block_steps = [None] * self.n_blocks
            self.block_effects = [None] * self.n_blocks

    @property
    def empty(self) -> bool:
        return self.step_delta is None


@dataclass
class ErrAccumulator:
    err: float = 0.0
    anchor: int | None = None

    def add(self, increment: float) -> float:
        if increment < 0:
            raise ValueError("reuse-error increments are non-negative")
        self.err += increment
        return self.err


def reuse_step(x_t: np.ndarray, cache: DeltaCache) -> np.ndarray:
    """Skip step: ``x_t + step_delta``; no backbone work, cache untouched."""
    if cache.step_delta is None:
        raise CacheMiss("no step delta cached")
    return x_t + cache.step_delta


def accumulate_err(deltas: Sequence[np.ndarray]) -> float:
    """Sum of relative L1 changes between consecutive deltas, oldest first."""
    if len(deltas) < 2:
        raise ValueError("need at least two deltas")
    total = 0.0
    for prev, cur in zip(deltas[:-1], deltas[1:]):
        total += rel_l1(cur, prev)
    return total


def commit_full(t: int, inp: np.ndarray, out: np.ndarray, traces, cache: DeltaCache,
                acc: ErrAccumulator) -> None:
    if len(traces) != cache.n_blocks:
        raise ValueError("commit_full needs a trace for every block")
    _store(t, inp, out, traces, cache)
    acc.err = 0.0
    acc.anchor = t


def commit_refresh(t: int, inp: np.ndarray, out: np.ndarray, traces, cache: DeltaCache,
                   acc: ErrAccumulator, gamma: float = 0.0) -> None:
    """Partial refresh: computed blocks get new deltas, reused ones keep theirs.

    ``gamma`` in [0, 1] is the share of the accumulated error the refresh
    removes.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must lie in [0, 1]")
    _store(t, inp, out, traces, cache)
    acc.err = (1.0 - gamma) * acc.err


def _store(t, inp, out, traces, cache: DeltaCache) -> None:
    cache.step_delta = out - inp
    cache.ref_input = inp
    cache.t_calc = t
    for tr in traces:
        cache.block_deltas[tr.block] = tr.delta
        cache.block_steps[tr.block] = t
        cache.block_effects[tr.block] = tr.effect
