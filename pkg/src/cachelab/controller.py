"""Dual-threshold step controller, static schedule calibration, and the cached reverse loop.

A schedule assigns one of three modes to every reverse step. The calibrator
scans a per-step reuse-error curve: while the accumulated error stays under
``delta_warn`` steps are skipped, between the two lines they are partially
refreshed, and past ``delta_crit`` a full step resets the error.
"""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .block_policy import BlockEffects, select_blocks
from .cachecore import DeltaCache, ErrAccumulator, commit_full, commit_refresh, reuse_step
from .errors import CurveLengthMismatch, PhaseOverflow
from .tensorlab import cosine, rel_l1
from .token_policy import select_tokens, token_diffs
from .toy_dit import Backbone, FlopMeter, Sampler, StepPlan, net_forward

# floor for pick_r so delta_warn stays positive on a flat curve
R_FLOOR = 1e-6


class StepMode(str, enum.Enum):
    SKIP = "skip"
    REFRESH = "refresh"
    FULL = "full"

    @property
    def letter(self) -> str:
        return self.value[0].upper()


class Phase(str, enum.Enum):
    EARLY = "early"
    MID = "mid"
    LATE = "late"


@dataclass(frozen=True)
class ControllerConfig:
    delta_warn: float
    delta_crit: float
    gamma: float = 0.0
    # None refreshes every block on a refresh step
    delta_blk: float | None = None
    rho_tok: float = 1.0
    max_consecutive_skips: int = 6
    force_last_full: bool = True

    def __post_init__(self):
        if not 0.0 <= self.delta_warn <= self.delta_crit:
            raise ValueError(f"need 0 <= delta_warn <= delta_crit, got {self.delta_warn}, {self.delta_crit}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if self.delta_blk is not None and not self.delta_blk > 0:
            raise ValueError("delta_blk must be > 0")
        if not 0.0 < self.rho_tok <= 1.0:
            raise ValueError("rho_tok must lie in (0, 1]")
        if self.max_consecutive_skips < 1:
            raise ValueError("max_consecutive_skips must be >= 1")

    @property
    def r(self) -> float:
        return self.delta_warn / self.delta_crit if self.delta_crit > 0 else 1.0


@dataclass
class CalibrationCurve:
    """Per-step reuse-error increments for steps 2..T (length T - 1)."""

    increments: np.ndarray
    cosines: np.ndarray
    seed_count: int = 1

    def __post_init__(self):
        self.increments = np.asarray(self.increments, dtype=np.float64)
        self.cosines = np.asarray(self.cosines, dtype=np.float64)
        if self.increments.shape != self.cosines.shape or self.increments.ndim != 1:
            raise CurveLengthMismatch("increments and cosines must be 1-D of equal length")
        if np.any(self.increments < 0):
            raise ValueError("increments must be non-negative")

    def __len__(self) -> int:
        return self.increments.size

    @property
    def steps(self) -> int:
        return self.increments.size + 1

    @classmethod
    def constant(cls, value: float, steps: int) -> CalibrationCurve:
        return cls(np.full(steps - 1, float(value)), np.ones(steps - 1))

    @classmethod
    def from_deltas(cls, deltas: Sequence[np.ndarray]) -> CalibrationCurve:
        inc = [rel_l1(deltas[k], deltas[k - 1]) for k in range(1, len(deltas))]
        cos = [cosine(deltas[k], deltas[k - 1]) for k in range(1, len(deltas))]
        return cls(np.array(inc), np.array(cos))

    @classmethod
    def average(cls, curves: Sequence[CalibrationCurve]) -> CalibrationCurve:
        if not curves:
            raise ValueError("no curves to average")
        if len({len(c) for c in curves}) != 1:
            raise CurveLengthMismatch("curves differ in length")
        return cls(
            np.mean([c.increments for c in curves], axis=0),
            np.mean([c.cosines for c in curves], axis=0),
            seed_count=sum(c.seed_count for c in curves),
        )


@dataclass(frozen=True)
class Schedule:
    modes: tuple[StepMode, ...]
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(StepMode(m) for m in self.modes))
        if not self.modes or self.modes[0] is not StepMode.FULL:
            raise ValueError("a schedule must start with a full step")

    def __len__(self) -> int:
        return len(self.modes)

    def __iter__(self):
        return iter(self.modes)

    def __getitem__(self, i):
        return self.modes[i]

    def count(self, mode: StepMode) -> int:
        return sum(m is mode for m in self.modes)

    @property
    def letters(self) -> str:
        return "".join(m.letter for m in self.modes)

    def to_text(self) -> str:
        lines = [f"# {k}: {json.dumps(v, sort_keys=True)}" for k, v in sorted(self.provenance.items())]
        lines += [f"{k} {m.value}" for k, m in enumerate(self.modes, start=1)]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> Schedule:
        prov, modes = {}, []
        for raw in text.splitlines():
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition(":")
                prov[key.strip()] = json.loads(val)
                continue
            idx, mode = line.split()
            if int(idx) != len(modes) + 1:
                raise ValueError(f"schedule step {idx} out of order")
            modes.append(StepMode(mode))
        return cls(tuple(modes), prov)


def classify(err: float, cfg: ControllerConfig) -> StepMode:
    """Ties at either line go to the mode that computes more."""
    if err >= cfg.delta_crit:
        return StepMode.FULL
    if err >= cfg.delta_warn:
        return StepMode.REFRESH
    return StepMode.SKIP


def scan(curve: CalibrationCurve, cfg: ControllerConfig) -> tuple[list[StepMode], list[float]]:
    """Forward controller scan; returns modes and the error after each step."""
    modes = [StepMode.FULL]
    errs = [0.0]
    err = 0.0
    skips = 0
    T = curve.steps
    for k in range(1, T):
        trial = err + float(curve.increments[k - 1])
        mode = classify(trial, cfg)
        if mode is StepMode.SKIP and skips >= cfg.max_consecutive_skips:
            mode = StepMode.FULL
        if cfg.force_last_full and k == T - 1:
            mode = StepMode.FULL
        if mode is StepMode.SKIP:
            err = trial
            skips += 1
        elif mode is StepMode.REFRESH:
            err = (1.0 - cfg.gamma) * trial
            skips = 0
        else:
            err = 0.0
            skips = 0
        modes.append(mode)
        errs.append(err)
    return modes, errs


def calibrate(curve: CalibrationCurve, cfg: ControllerConfig, steps: int | None = None) -> Schedule:
    if steps is not None and len(curve) != steps - 1:
        raise CurveLengthMismatch(f"curve has {len(curve)} entries, need {steps - 1}")
    modes, _ = scan(curve, cfg)
    prov = {
        "method": "calibrated",
        "seed_count": curve.seed_count,
        "config_hash": config_hash(asdict(cfg)),
    }
    return Schedule(tuple(modes), prov)


def replay_err(modes: Sequence[StepMode], curve: CalibrationCurve | None, gamma: float = 0.0) -> list[float]:
    """Controller error after each step of an arbitrary schedule."""
    if curve is None:
        return [float("nan")] * len(modes)
    errs, err = [], 0.0
    for k, mode in enumerate(modes):
        inc = float(curve.increments[k - 1]) if k > 0 else 0.0
        if mode is StepMode.FULL:
            err = 0.0
        elif mode is StepMode.SKIP:
            err += inc
        else:
            err = (1.0 - gamma) * (err + inc)
        errs.append(err)
    return errs


def pick_r(curve: CalibrationCurve) -> float:
    """Mean increment over the middle third of the curve, clamped to (0, 1]."""
    n = len(curve)
    if n < 3:
        raise CurveLengthMismatch("pick_r needs at least 3 curve entries")
    lo, hi = n // 3, (2 * n) // 3
    r = float(np.mean(curve.increments[lo:hi]))
    return min(1.0, max(R_FLOOR, r))


def uniform_schedule(steps: int, interval: int, force_last_full: bool = True) -> Schedule:
    """Full every ``interval`` steps starting at step 1, skips between; last step full by default."""
    if interval < 2 or steps < 1:
        raise ValueError("need interval >= 2 and steps >= 1")
    modes = [StepMode.FULL if k % interval == 0 else StepMode.SKIP for k in range(steps)]
    if force_last_full:
        modes[-1] = StepMode.FULL
    return Schedule(tuple(modes), {"method": "uniform", "interval": interval})


def phase_injection_schedule(steps: int, phase: Phase | str, skip_count: int) -> Schedule:
    """All-full schedule with one contiguous skip run in the early, middle or late third."""
    phase = Phase(phase)
    if skip_count < 1 or 3 * skip_count >= steps:
        raise PhaseOverflow(f"skip_count {skip_count} must be >= 1 and < steps/3 ({steps}/3)")
    third, two_thirds = steps // 3, (2 * steps) // 3
    # 1-based step windows; step 1 and step T always stay full
    start, stop = {
        Phase.EARLY: (2, third),
        Phase.MID: (third + 1, two_thirds),
        Phase.LATE: (two_thirds + 1, steps - 1),
    }[phase]
    if start + skip_count - 1 > stop:
        raise PhaseOverflow(f"{skip_count} skips do not fit the {phase.value} window {start}..{stop}")
    modes = [StepMode.FULL] * steps
    for k in range(start, start + skip_count):
        modes[k - 1] = StepMode.SKIP
    return Schedule(tuple(modes), {"method": "phase", "phase": phase.value, "skip_count": skip_count})


def config_hash(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class StepRecord:
    step: int
    t: int
    mode: StepMode
    flops: int
    err: float
    blocks: tuple[int, ...] | None = None
    tokens: tuple[int, ...] | None = None
    diffs: np.ndarray | None = None


@dataclass
class ScheduledRun:
    final: np.ndarray
    records: list[StepRecord]
    meter: FlopMeter
    outputs: list[np.ndarray] = field(default_factory=list, repr=False)
    inputs: list[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def modes(self) -> list[StepMode]:
        return [r.mode for r in self.records]

    def count(self, mode: StepMode) -> int:
        return sum(r.mode is mode for r in self.records)

    def refresh_records(self) -> list[StepRecord]:
        return [r for r in self.records if r.mode is StepMode.REFRESH]


def plan_refresh(cache: DeltaCache, inp: np.ndarray, step: int, cfg: ControllerConfig):
    """Pick the block and token sets for a refresh step."""
    L = cache.n_blocks
    if cfg.delta_blk is None:
        blocks = list(range(L))
    else:
        blocks = select_blocks(BlockEffects.from_cache(cache, step).effects, cfg.delta_blk)
    diffs = token_diffs(inp, cache.ref_input)
    tokens = select_tokens(diffs, cfg.rho_tok)
    plan = StepPlan.from_sets(L, blocks, None if len(tokens) == diffs.size else tokens)
    return plan, tuple(blocks), tuple(tokens), diffs


def run_scheduled(backbone: Backbone, sampler: Sampler, schedule: Schedule | Iterable[StepMode],
                  cfg: ControllerConfig, curve: CalibrationCurve | None = None,
                  keep_outputs: bool = False) -> ScheduledRun:
    """Reverse loop under a fixed schedule.

    ``curve`` only feeds the error column of the trace; decisions come from
    the schedule.
    """
    modes = tuple(StepMode(m) for m in schedule)
    T = sampler.steps
    if len(modes) != T:
        raise CurveLengthMismatch(f"schedule has {len(modes)} steps, sampler has {T}")
    if modes[0] is not StepMode.FULL:
        raise ValueError("first step must be full")
    bcfg = backbone.cfg
    cache = DeltaCache(bcfg.n_blocks)
    acc = ErrAccumulator()
    meter = FlopMeter()
    full = StepPlan.full(bcfg.n_blocks)
    x = sampler.initial_latent(bcfg.n_tokens, bcfg.dim)
    records, inputs, outputs = [], [], []
    for k, mode in enumerate(modes, start=1):
        t = sampler.timestep(k)
        inp = backbone.embed_input(x, t, T)
        meter.open_step(k)
        inc = float(curve.increments[k - 2]) if (curve is not None and k > 1) else 0.0
        rec = StepRecord(step=k, t=t, mode=mode, flops=0, err=0.0)
        if mode is StepMode.FULL:
            out, traces = net_forward(backbone, inp, t, T, full, cache, meter, k)
            commit_full(k, inp, out, traces, cache, acc)
        elif mode is StepMode.SKIP:
            out = reuse_step(inp, cache)
            acc.add(inc)
        else:
            plan, rec.blocks, rec.tokens, rec.diffs = plan_refresh(cache, inp, k, cfg)
            out, traces = net_forward(backbone, inp, t, T, plan, cache, meter, k)
            acc.add(inc)
            commit_refresh(k, inp, out, traces, cache, acc, cfg.gamma)
        rec.flops = meter.step_total(k)
        rec.err = acc.err if curve is not None else float("nan")
        records.append(rec)
        if keep_outputs:
            inputs.append(inp)
            outputs.append(out)
        x = sampler.ddim_step(x, backbone.head(out), t)
    return ScheduledRun(final=x, records=records, meter=meter, outputs=outputs, inputs=inputs)
