"""A small seeded DiT-style denoiser and a deterministic DDIM sampler.

The backbone is ``L`` pre-norm transformer blocks (multi-head self-attention
plus a GELU MLP) conditioned on the timestep through an additive AdaLN-style
shift. Weights are untrained and fully determined by ``BackboneConfig``.

Every block can run on a subset of query tokens: the selected rows attend
over all ``N`` current rows (keys and values are always recomputed from the
whole block input) and only the selected rows go through the MLP. Rows that
are not selected come back untouched; the caller overlays cached deltas.

FLOP counting covers the matmuls only, two FLOPs per multiply-add. For a
block run on ``n`` of ``N`` tokens::

    attention    = 4 n D^2 + 4 N D^2 + 4 n N D
    mlp          = 4 m n D^2
    conditioning = 4 D^2            (shift projection, only when n > 0)

The noise head and the DDIM update are sampler overhead and are not
metered, so a skipped step is free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CacheMiss, IndexOutOfRange, ScheduleRange, ShapeMismatch
from .tensorlab import DTYPE, l1_norm, make_rng, seeded_init

CATEGORIES = ("attention", "mlp", "conditioning")

# timestep embedding: amplitude at the net input, and the highest angular
# frequency over t/T in [0, 1]; low frequencies keep adjacent steps similar
EMBED_GAIN = 0.5
EMBED_MAX_FREQ = 5.0
# noise head is identity plus a seeded perturbation of this relative size
HEAD_NOISE = 0.3


@dataclass(frozen=True)
class BackboneConfig:
    n_blocks: int = 4
    n_tokens: int = 16
    dim: int = 32
    n_heads: int = 4
    mlp_ratio: int = 4
    weight_seed: int = 0
    weight_scale: float = 0.02

    def __post_init__(self):
        if self.n_blocks < 1 or self.n_tokens < 1 or self.dim < 1 or self.n_heads < 1:
            raise ValueError("n_blocks, n_tokens, dim and n_heads must be >= 1")
        if self.dim % self.n_heads:
            raise ValueError(f"dim {self.dim} not divisible by n_heads {self.n_heads}")
        if self.mlp_ratio < 1:
            raise ValueError("mlp_ratio must be >= 1")
        if self.weight_scale <= 0:
            raise ValueError("weight_scale must be > 0")


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 10
    beta_start: float = 0.02
    beta_end: float = 0.3
    latent_seed: int = 0

    def __post_init__(self):
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if not (0.0 < self.beta_start < 1.0 and 0.0 < self.beta_end < 1.0):
            raise ValueError("betas must lie in (0, 1)")


def block_flops(cfg: BackboneConfig, n_active: int) -> dict[str, int]:
    n, N, D, m = int(n_active), cfg.n_tokens, cfg.dim, cfg.mlp_ratio
    if n == 0:
        return dict.fromkeys(CATEGORIES, 0)
    return {
        "attention": 4 * n * D * D + 4 * N * D * D + 4 * n * N * D,
        "mlp": 4 * m * n * D * D,
        "conditioning": 4 * D * D,
    }


def full_step_flops(cfg: BackboneConfig) -> int:
    return cfg.n_blocks * sum(block_flops(cfg, cfg.n_tokens).values())


class FlopMeter:
    """Running FLOP totals per category, per step and per run."""

    def __init__(self):
        self.totals = dict.fromkeys(CATEGORIES, 0)
        self.per_step: dict[int, dict[str, int]] = {}

    def charge(self, step: int, counts: dict[str, int]) -> None:
        row = self.per_step.setdefault(step, dict.fromkeys(CATEGORIES, 0))
        for k, v in counts.items():
            if v < 0:
                raise ValueError("negative FLOP charge")
            row[k] += v
            self.totals[k] += v

    def open_step(self, step: int) -> None:
        self.per_step.setdefault(step, dict.fromkeys(CATEGORIES, 0))

    @property
    def total(self) -> int:
        return sum(self.totals.values())

    def step_total(self, step: int) -> int:
        return sum(self.per_step.get(step, {}).values())


@dataclass
class BlockTrace:
    """Snapshot of one computed block: input, output and its effect score."""

    block: int
    inp: np.ndarray
    out: np.ndarray
    effect: float
    active: np.ndarray | None = None  # None means all tokens

    @property
    def delta(self) -> np.ndarray:
        return self.out - self.inp


@dataclass(frozen=True)
class StepPlan:
    """Which blocks run this step and on which tokens (``None`` = all)."""

    compute: tuple[bool, ...]
    tokens: tuple[int, ...] | None = None

    @classmethod
    def full(cls, n_blocks: int) -> StepPlan:
        return cls(compute=(True,) * n_blocks, tokens=None)

    @classmethod
    def from_sets(cls, n_blocks: int, blocks, tokens=None) -> StepPlan:
        blocks = set(int(b) for b in blocks)
        compute = tuple(l in blocks for l in range(n_blocks))
        return cls(compute=compute, tokens=None if tokens is None else tuple(sorted(int(i) for i in tokens)))

    @property
    def is_full(self) -> bool:
        return all(self.compute) and self.tokens is None


def timestep_embedding(t: float, dim: int, horizon: int) -> np.ndarray:
    """Sin/cos features of ``t / horizon`` at log-spaced frequencies in [1, EMBED_MAX_FREQ]."""
    tau = float(t) / float(horizon)
    half = dim // 2
    freqs = np.exp(np.linspace(0.0, math.log(EMBED_MAX_FREQ), max(half, 1)))[:half]
    ang = tau * freqs
    emb = np.concatenate([np.sin(ang), np.cos(ang)])
    if emb.size < dim:
        emb = np.concatenate([emb, np.zeros(dim - emb.size)])
    return emb


def layer_norm(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-6)


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class BlockWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w1: np.ndarray
    w2: np.ndarray
    wc: np.ndarray  # (D, 2D): attention shift | mlp shift


class Backbone:
    """Immutable after construction; share it freely across runs."""

    def __init__(self, cfg: BackboneConfig):
        self.cfg = cfg
        D, m = cfg.dim, cfg.mlp_ratio
        rng = make_rng(cfg.weight_seed)
        unit = 1.0 / math.sqrt(D)
        blocks = []
        for _ in range(cfg.n_blocks):
            blocks.append(
                BlockWeights(
                    wq=rng.standard_normal((D, D)) * unit,
                    wk=rng.standard_normal((D, D)) * unit,
                    wv=rng.standard_normal((D, D)) * unit,
                    wo=rng.standard_normal((D, D)) * cfg.weight_scale,
                    w1=rng.standard_normal((D, m * D)) * unit,
                    w2=rng.standard_normal((m * D, D)) * cfg.weight_scale,
                    wc=rng.standard_normal((D, 2 * D)) * unit,
                )
            )
        self.blocks = tuple(blocks)
        self.w_head = np.eye(D) + rng.standard_normal((D, D)) * (HEAD_NOISE * unit)
        for arr in (self.w_head, *[w for b in blocks for w in vars(b).values()]):
            arr.flags.writeable = False

    @property
    def n_blocks(self) -> int:
        return self.cfg.n_blocks

    def check_state(self, x: np.ndarray) -> None:
        if x.shape != (self.cfg.n_tokens, self.cfg.dim):
            raise ShapeMismatch(f"hidden state shape {x.shape}, expected {(self.cfg.n_tokens, self.cfg.dim)}")

    def cond(self, t: float, horizon: int) -> np.ndarray:
        return timestep_embedding(t, self.cfg.dim, horizon)

    def embed_input(self, x: np.ndarray, t: float, horizon: int) -> np.ndarray:
        """Net input for timestep ``t``: latent plus the scaled embedding."""
        return x + EMBED_GAIN * self.cond(t, horizon)[None, :]

    def head(self, out: np.ndarray) -> np.ndarray:
        return out @ self.w_head

    def _normalize_tokens(self, active_tokens) -> np.ndarray | None:
        if active_tokens is None:
            return None
        idx = np.asarray(sorted(set(int(i) for i in active_tokens)), dtype=np.int64)
        if idx.size and (idx[0] < 0 or idx[-1] >= self.cfg.n_tokens):
            raise IndexOutOfRange(f"token indices must lie in [0, {self.cfg.n_tokens})")
        if idx.size == self.cfg.n_tokens:
            return None
        return idx

    def block_forward(self, l: int, x: np.ndarray, cond: np.ndarray, active_tokens=None,
                      meter: FlopMeter | None = None, step: int = 0) -> np.ndarray:
        """Run block ``l`` on ``active_tokens`` (``None`` = all rows).

        Inactive rows are returned unchanged.
        """
        if not 0 <= l < self.cfg.n_blocks:
            raise IndexOutOfRange(f"block {l} out of range")
        self.check_state(x)
        idx = self._normalize_tokens(active_tokens)
        n_active = self.cfg.n_tokens if idx is None else idx.size
        if meter is not None:
            meter.charge(step, block_flops(self.cfg, n_active))
        if n_active == 0:
            return x.copy()
        w = self.blocks[l]
        D, H = self.cfg.dim, self.cfg.n_heads
        dh = D // H
        shift = cond @ w.wc
        shift_a, shift_m = shift[:D], shift[D:]

        h = layer_norm(x) + shift_a
        rows = x if idx is None else x[idx]
        hq = h if idx is None else h[idx]
        q = (hq @ w.wq).reshape(-1, H, dh).transpose(1, 0, 2)
        k = (h @ w.wk).reshape(-1, H, dh).transpose(1, 0, 2)
        v = (h @ w.wv).reshape(-1, H, dh).transpose(1, 0, 2)
        p = softmax(q @ k.transpose(0, 2, 1) / math.sqrt(dh))
        attn = (p @ v).transpose(1, 0, 2).reshape(-1, D)
        y = rows + attn @ w.wo
        z = y + gelu((layer_norm(y) + shift_m) @ w.w1) @ w.w2

        if idx is None:
            return z
        out = x.copy()
        out[idx] = z
        return out

    def forward(self, x: np.ndarray, t: float, horizon: int) -> np.ndarray:
        """Plain full pass with no tracing or metering."""
        self.check_state(x)
        cond = self.cond(t, horizon)
        for l in range(self.cfg.n_blocks):
            x = self.block_forward(l, x, cond)
        return x


def net_forward(backbone: Backbone, x: np.ndarray, t: float, horizon: int, plan: StepPlan,
                cache=None, meter: FlopMeter | None = None, step: int = 0):
    """Run the block stack under ``plan``; returns ``(output, traces)``.

    Computed blocks run on ``plan.tokens`` and their inactive rows get the
    block's cached per-token delta added. Reused blocks add their whole
    cached delta. ``cache`` needs a ``block_deltas`` sequence whenever the
    plan reuses anything. Traces are returned for computed blocks only.
    """
    backbone.check_state(x)
    if len(plan.compute) != backbone.n_blocks:
        raise ValueError(f"plan covers {len(plan.compute)} blocks, backbone has {backbone.n_blocks}")
    idx = backbone._normalize_tokens(plan.tokens)
    if idx is not None:
        inactive = np.setdiff1d(np.arange(backbone.cfg.n_tokens), idx)
    cond = backbone.cond(t, horizon)
    traces: list[BlockTrace] = []
    if meter is not None:
        meter.open_step(step)
    for l, compute in enumerate(plan.compute):
        needs_cache = (not compute) or idx is not None
        delta = None
        if needs_cache:
            deltas: Sequence = getattr(cache, "block_deltas", None) or ()
            delta = deltas[l] if l < len(deltas) else None
            if delta is None:
                raise CacheMiss(f"block {l} has no cached delta")
        if not compute:
            x = x + delta
            continue
        out = backbone.block_forward(l, x, cond, idx, meter=meter, step=step)
        if idx is not None:
            out[inactive] = x[inactive] + delta[inactive]
        traces.append(BlockTrace(block=l, inp=x, out=out, effect=_effect(x, out), active=idx))
        x = out
    return x, traces


def _effect(inp: np.ndarray, out: np.ndarray) -> float:
    den = l1_norm(inp)
    return l1_norm(out - inp) / den if den > 0 else 0.0


class Sampler:
    """Deterministic DDIM (eta = 0) over a linear beta schedule of ``steps`` entries."""

    def __init__(self, cfg: SamplerConfig):
        self.cfg = cfg
        betas = np.linspace(cfg.beta_start, cfg.beta_end, cfg.steps, dtype=DTYPE)
        # alpha_bar[0] = 1 is the clean end of the trajectory
        self.alpha_bar = np.concatenate([[1.0], np.cumprod(1.0 - betas)])

    @property
    def steps(self) -> int:
        return self.cfg.steps

    def timestep(self, k: int) -> int:
        """Diffusion timestep handled at 1-based run position ``k``."""
        return self.cfg.steps - k + 1

    def initial_latent(self, n_tokens: int, dim: int) -> np.ndarray:
        return seeded_init((n_tokens, dim), self.cfg.latent_seed, 1.0)

    def ddim_step(self, x_t: np.ndarray, eps: np.ndarray, t: int) -> np.ndarray:
        if not 1 <= t <= self.cfg.steps:
            raise ScheduleRange(f"t={t} outside [1, {self.cfg.steps}]")
        return ddim_update(x_t, eps, self.alpha_bar[t], self.alpha_bar[t - 1])


def ddim_update(x_t, eps, ab_t: float, ab_prev: float) -> np.ndarray:
    x0 = (x_t - math.sqrt(1.0 - ab_t) * eps) / math.sqrt(ab_t)
    return math.sqrt(ab_prev) * x0 + math.sqrt(1.0 - ab_prev) * eps


@dataclass
class ReferenceArchive:
    """Everything a full-compute run leaves behind, indexed by run position."""

    final: np.ndarray
    inputs: np.ndarray  # (T, N, D) net inputs I_t
    outputs: np.ndarray  # (T, N, D) net outputs O_t
    block_effects: np.ndarray  # (T, L)
    flops: int
    meta: dict = field(default_factory=dict)

    @property
    def deltas(self) -> np.ndarray:
        return self.outputs - self.inputs

    def __len__(self) -> int:
        return self.inputs.shape[0]

    def save(self, path) -> None:
        np.savez(path, final=self.final, inputs=self.inputs, outputs=self.outputs,
                 block_effects=self.block_effects, flops=np.int64(self.flops))

    @classmethod
    def load(cls, path) -> ReferenceArchive:
        with np.load(path) as z:
            return cls(final=z["final"], inputs=z["inputs"], outputs=z["outputs"],
                       block_effects=z["block_effects"], flops=int(z["flops"]))


def reference_run(backbone: Backbone, sampler: Sampler) -> ReferenceArchive:
    """Every step a full inference; archives net-level I_t, O_t and block effects."""
    cfg = backbone.cfg
    T = sampler.steps
    meter = FlopMeter()
    x = sampler.initial_latent(cfg.n_tokens, cfg.dim)
    inputs = np.empty((T, cfg.n_tokens, cfg.dim))
    outputs = np.empty_like(inputs)
    effects = np.empty((T, cfg.n_blocks))
    full = StepPlan.full(cfg.n_blocks)
    for k in range(1, T + 1):
        t = sampler.timestep(k)
        inp = backbone.embed_input(x, t, T)
        out, traces = net_forward(backbone, inp, t, T, full, meter=meter, step=k)
        inputs[k - 1] = inp
        outputs[k - 1] = out
        effects[k - 1] = [tr.effect for tr in traces]
        x = sampler.ddim_step(x, backbone.head(out), t)
    return ReferenceArchive(final=x, inputs=inputs, outputs=outputs, block_effects=effects, flops=meter.total)
