"""Reference-relative quality, FLOP speedup, U-curves and the per-run report."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .controller import CalibrationCurve, ScheduledRun, StepMode
from .errors import ShapeMismatch, ZeroFlops
from .tensorlab import l1_norm

MAX_PSNR = 200.0

CURVE_COLUMNS = ("step", "t", "mode", "c_t", "cosine", "err", "step_flops")
TRACE_COLUMNS = ("step", "t", "mode", "flops", "n_blocks", "blocks", "n_tokens", "tokens")


def psnr(ref, test, peak: float) -> float:
    ref = np.asarray(ref, dtype=np.float64)
    test = np.asarray(test, dtype=np.float64)
    if ref.shape != test.shape:
        raise ShapeMismatch(f"shape {ref.shape} != {test.shape}")
    if not peak > 0:
        raise ValueError("peak must be > 0")
    mse = float(np.mean((ref - test) ** 2))
    if mse <= 1e-30:
        return MAX_PSNR
    return 10.0 * math.log10(peak * peak / mse)


def final_rel_l1(ref, test) -> float:
    """``|test - ref|_1 / |ref|_1``; 0 when both are identical."""
    ref = np.asarray(ref, dtype=np.float64)
    diff = l1_norm(np.asarray(test) - ref)
    return diff / l1_norm(ref) if diff else 0.0


def speedup(flops_ref: float, flops_run: float) -> float:
    if flops_ref <= 0 or flops_run <= 0:
        raise ZeroFlops(f"speedup needs positive FLOPs, got {flops_ref} and {flops_run}")
    return flops_ref / flops_run


def u_curve(archive) -> CalibrationCurve:
    """Per-step relative L1 change and cosine between consecutive net deltas."""
    return CalibrationCurve.from_deltas(archive.deltas)


def _num(v):
    # JSON has no NaN
    if v is None:
        return None
    v = float(v)
    return None if math.isnan(v) else v


@dataclass
class RunReport:
    method: str
    seed: int
    config_hash: str
    total_flops: int
    reference_flops: int
    speedup: float
    psnr: float
    psnr_peak: float
    rel_l1: float
    n_full: int
    n_refresh: int
    n_skip: int
    block_refresh_ratio: float | None
    token_refresh_ratio: float | None
    curve: list[dict] = field(default_factory=list)
    trace: list[dict] = field(default_factory=list)

    @classmethod
    def build(cls, method: str, seed: int, cfg_hash: str, run: ScheduledRun, reference,
              curve: CalibrationCurve | None, n_blocks: int, n_tokens: int) -> RunReport:
        peak = float(np.max(np.abs(reference.final)))
        refresh = run.refresh_records()
        if refresh:
            block_ratio = sum(len(r.blocks) for r in refresh) / (n_blocks * len(refresh))
            token_ratio = sum(len(r.tokens) for r in refresh) / (n_tokens * len(refresh))
        else:
            block_ratio = token_ratio = None
        rows, trace = [], []
        for rec in run.records:
            k = rec.step
            rows.append({
                "step": k,
                "t": rec.t,
                "mode": rec.mode.value,
                "c_t": _num(curve.increments[k - 2]) if (curve is not None and k > 1) else None,
                "cosine": _num(curve.cosines[k - 2]) if (curve is not None and k > 1) else None,
                "err": _num(rec.err),
                "step_flops": rec.flops,
            })
            trace.append({
                "step": k,
                "t": rec.t,
                "mode": rec.mode.value,
                "flops": rec.flops,
                "blocks": list(rec.blocks) if rec.blocks is not None else None,
                "tokens": list(rec.tokens) if rec.tokens is not None else None,
            })
        return cls(
            method=method,
            seed=int(seed),
            config_hash=cfg_hash,
            total_flops=run.meter.total,
            reference_flops=int(reference.flops),
            speedup=speedup(reference.flops, run.meter.total),
            psnr=psnr(reference.final, run.final, peak),
            psnr_peak=peak,
            rel_l1=final_rel_l1(reference.final, run.final),
            n_full=run.count(StepMode.FULL),
            n_refresh=run.count(StepMode.REFRESH),
            n_skip=run.count(StepMode.SKIP),
            block_refresh_ratio=block_ratio,
            token_refresh_ratio=token_ratio,
            curve=rows,
            trace=trace,
        )

    def summary(self) -> dict:
        d = self.to_dict()
        d.pop("curve")
        d.pop("trace")
        return d

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "total_flops": self.total_flops,
            "reference_flops": self.reference_flops,
            "speedup": self.speedup,
            "psnr": self.psnr,
            "psnr_peak": self.psnr_peak,
            "rel_l1": self.rel_l1,
            "n_full": self.n_full,
            "n_refresh": self.n_refresh,
            "n_skip": self.n_skip,
            "block_refresh_ratio": self.block_refresh_ratio,
            "token_refresh_ratio": self.token_refresh_ratio,
            "curve": self.curve,
            "trace": self.trace,
        }

    def write_json(self, path, header: dict | None = None) -> None:
        write_json(path, self.to_dict(), header)

    def write_curve_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(CURVE_COLUMNS)
            for row in self.curve:
                w.writerow([_cell(row[c]) for c in CURVE_COLUMNS])

    def write_trace_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for row in self.trace:
                blocks, tokens = row["blocks"], row["tokens"]
                w.writerow([
                    row["step"], row["t"], row["mode"], row["flops"],
                    "" if blocks is None else len(blocks), _ids(blocks),
                    "" if tokens is None else len(tokens), _ids(tokens),
                ])


def average_reports(reports: list[RunReport]) -> dict:
    """Seed-averaged summary; ratio fields average over reports that have them."""
    if not reports:
        raise ValueError("no reports to average")

    def mean(key):
        vals = [getattr(r, key) for r in reports if getattr(r, key) is not None]
        return float(np.mean(vals)) if vals else None

    return {
        "method": reports[0].method,
        "config_hash": reports[0].config_hash,
        "seeds": [r.seed for r in reports],
        "speedup": mean("speedup"),
        "psnr": mean("psnr"),
        "rel_l1": mean("rel_l1"),
        "total_flops": mean("total_flops"),
        "n_full": mean("n_full"),
        "n_refresh": mean("n_refresh"),
        "n_skip": mean("n_skip"),
        "block_refresh_ratio": mean("block_refresh_ratio"),
        "token_refresh_ratio": mean("token_refresh_ratio"),
    }


def write_json(path, body: dict, header: dict | None = None) -> None:
    """Report JSON: volatile fields live only under ``header``."""
    doc = {"header": header or {}, "report": body}
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=False)
        f.write("\n")


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return v


def _ids(ids):
    return "" if ids is None else " ".join(str(i) for i in ids)
