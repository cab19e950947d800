"""Experiment orchestration: references, calibration, method runs, sweeps and exports."""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .block_policy import delta_blk_for_ratio
from .config import ExperimentConfig, MethodSettings, SweepSpec
from .controller import (
    CalibrationCurve,
    ControllerConfig,
    Schedule,
    ScheduledRun,
    StepMode,
    calibrate,
    config_hash,
    phase_injection_schedule,
    pick_r,
    run_scheduled,
    uniform_schedule,
)
from .errors import NoRefreshSteps
from .metrics import RunReport, average_reports, u_curve, write_json
from .toy_dit import Backbone, ReferenceArchive, Sampler, SamplerConfig, reference_run

log = logging.getLogger(__name__)

CALIBRATED = ("step_only", "block_only", "token_only", "c2f")
SWEEP_COLUMNS = ("axis", "value", "seed", "speedup", "psnr", "rel_l1", "n_full", "n_refresh", "n_skip",
                 "block_refresh_ratio", "token_refresh_ratio")
MASK_COLUMNS = ("step", "token", "diff", "selected")


def sampler_config(cfg: ExperimentConfig, seed: int) -> SamplerConfig:
    s = cfg.sampler
    return SamplerConfig(steps=s.steps, beta_start=s.beta_start, beta_end=s.beta_end, latent_seed=seed)


class ReferenceStore:
    """Reference archives keyed by a hash of (backbone, sampler, seed), kept on disk and in memory."""

    def __init__(self, cache_dir=None):
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self._mem: dict[str, ReferenceArchive] = {}
        self.computed = 0

    @staticmethod
    def key(backbone: Backbone, scfg: SamplerConfig) -> str:
        return config_hash({"backbone": vars(backbone.cfg), "sampler": vars(scfg)})

    def get(self, backbone: Backbone, scfg: SamplerConfig) -> ReferenceArchive:
        key = self.key(backbone, scfg)
        if key in self._mem:
            return self._mem[key]
        path = self.cache_dir / f"ref_{key}.npz" if self.cache_dir is not None else None
        if path is not None and path.exists():
            arch = ReferenceArchive.load(path)
        else:
            arch = reference_run(backbone, Sampler(scfg))
            self.computed += 1
            if path is not None:
                path.parent.mkdir(parents=True, exist_ok=True)
                arch.save(path)
        self._mem[key] = arch
        return arch


@dataclass
class Prepared:
    """Everything shared by all seeds of one experiment."""

    cfg: ExperimentConfig
    backbone: Backbone
    schedule: Schedule
    controller: ControllerConfig
    curve: CalibrationCurve | None
    r: float | None
    cfg_hash: str


def _calibration_archives(cfg, backbone, store):
    return [store.get(backbone, sampler_config(cfg, s)) for s in cfg.calibration.seeds]


def calibration_curve(cfg: ExperimentConfig, backbone: Backbone, store: ReferenceStore) -> CalibrationCurve:
    if cfg.calibration.curve is not None:
        inc = np.asarray(cfg.calibration.curve, dtype=float)
        return CalibrationCurve(inc, np.full(inc.shape, np.nan), seed_count=0)
    return CalibrationCurve.average([u_curve(a) for a in _calibration_archives(cfg, backbone, store)])


def controller_for(cfg: ExperimentConfig, curve: CalibrationCurve | None, backbone: Backbone,
                   store: ReferenceStore) -> tuple[ControllerConfig, float | None]:
    c, name = cfg.controller, cfg.method.name
    r = None
    if name == "step_only" or name not in CALIBRATED:
        warn = c.delta_crit
    elif c.delta_warn is not None:
        warn = c.delta_warn
    else:
        r = pick_r(curve) if c.r == "auto" else (1.0 if c.r is None else float(c.r))
        warn = r * c.delta_crit
    delta_blk = None
    if name in ("block_only", "c2f"):
        if c.delta_blk is not None:
            delta_blk = c.delta_blk
        elif c.block_ratio is not None:
            rows = [row for a in _calibration_archives(cfg, backbone, store) for row in a.block_effects]
            delta_blk = delta_blk_for_ratio(rows, c.block_ratio)
    rho = 1.0 if name in ("block_only", "step_only") else c.rho_tok
    ctrl = ControllerConfig(
        delta_warn=warn,
        delta_crit=c.delta_crit,
        gamma=c.gamma,
        delta_blk=delta_blk,
        rho_tok=rho,
        max_consecutive_skips=c.max_consecutive_skips,
        force_last_full=c.force_last_full,
    )
    return ctrl, r


def experiment_hash(cfg: ExperimentConfig) -> str:
    d = cfg.to_dict()
    d.pop("output_dir")
    return config_hash(d)


def prepare(cfg: ExperimentConfig, store: ReferenceStore) -> Prepared:
    backbone = Backbone(cfg.backbone)
    T = cfg.sampler.steps
    m = cfg.method
    curve = calibration_curve(cfg, backbone, store) if m.name in CALIBRATED else None
    ctrl, r = controller_for(cfg, curve, backbone, store)
    if m.name == "nocache":
        schedule = Schedule((StepMode.FULL,) * T, {"method": "nocache"})
    elif m.name == "uniform":
        schedule = uniform_schedule(T, m.interval, cfg.controller.force_last_full)
    elif m.name == "phase":
        schedule = phase_injection_schedule(T, m.phase, m.skip_count)
    else:
        schedule = calibrate(curve, ctrl, steps=T)
    return Prepared(cfg, backbone, schedule, ctrl, curve, r, experiment_hash(cfg))


@dataclass
class SeedResult:
    seed: int
    report: RunReport
    run: ScheduledRun
    reference: ReferenceArchive


def run_seed(prep: Prepared, seed: int, store: ReferenceStore) -> SeedResult:
    cfg = prep.cfg
    scfg = sampler_config(cfg, seed)
    ref = store.get(prep.backbone, scfg)
    seed_curve = u_curve(ref)
    run = run_scheduled(prep.backbone, Sampler(scfg), prep.schedule, prep.controller,
                        curve=prep.curve if prep.curve is not None else seed_curve)
    report = RunReport.build(cfg.method.name, seed, prep.cfg_hash, run, ref, seed_curve,
                             cfg.backbone.n_blocks, cfg.backbone.n_tokens)
    return SeedResult(seed, report, run, ref)


def _header(t0=None) -> dict:
    h = {"generated_at": datetime.now(timezone.utc).isoformat(timespec="seconds"), "cachelab": __version__}
    if t0 is not None:
        h["wall_clock_s"] = round(time.perf_counter() - t0, 3)
    return h


def run(cfg: ExperimentConfig, out_dir=None, figures: bool = True, store: ReferenceStore | None = None) -> dict:
    """Run every seed; writes per-seed report/curves/trace/schedule and a summary. Returns the summary."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = store or ReferenceStore(out / "cache")
    t0 = time.perf_counter()
    prep = prepare(cfg, store)
    (out / "config.json").write_text(cfg.dumps())
    (out / "schedule.txt").write_text(prep.schedule.to_text())
    reports = []
    for seed in cfg.seeds:
        s0 = time.perf_counter()
        res = run_seed(prep, seed, store)
        d = out / f"seed_{seed}"
        d.mkdir(exist_ok=True)
        res.report.write_json(d / "report.json", _header(s0))
        res.report.write_curve_csv(d / "curves.csv")
        res.report.write_trace_csv(d / "trace.csv")
        if figures:
            from .figures import plot_run

            plot_run(res.report, d / "run.png", prep.controller.delta_warn, prep.controller.delta_crit)
        log.info("seed %d: speedup %.3f rel-L1 %.5f", seed, res.report.speedup, res.report.rel_l1)
        reports.append(res.report)
    summary = average_reports(reports)
    summary["schedule"] = prep.schedule.letters
    summary["delta_warn"] = prep.controller.delta_warn
    summary["delta_crit"] = prep.controller.delta_crit
    summary["delta_blk"] = prep.controller.delta_blk
    summary["rho_tok"] = prep.controller.rho_tok
    summary["r"] = prep.r
    write_json(out / "summary.json", summary, _header(t0))
    return summary


def calibrate_experiment(cfg: ExperimentConfig, out_dir=None, figures: bool = True,
                         store: ReferenceStore | None = None) -> Prepared:
    """Write the calibration curve and the resulting static schedule."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = store or ReferenceStore(out / "cache")
    backbone = Backbone(cfg.backbone)
    curve = calibration_curve(cfg, backbone, store)
    if cfg.method.name not in CALIBRATED:
        cfg = replace(cfg, method=MethodSettings(name="c2f"))
    prep = prepare(cfg, store)
    with open(out / "calibration.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(("step", "increment", "cosine"))
        for k, (inc, cos) in enumerate(zip(curve.increments, curve.cosines), start=2):
            w.writerow((k, repr(float(inc)), "" if np.isnan(cos) else repr(float(cos))))
    (out / "schedule.txt").write_text(prep.schedule.to_text())
    if figures:
        from .figures import plot_u_curve

        plot_u_curve(curve.increments, curve.cosines, out / "calibration.png",
                     title=f"calibration curve ({curve.seed_count} seeds)")
    return prep


def write_curves(cfg: ExperimentConfig, out_dir=None, figures: bool = True,
                 store: ReferenceStore | None = None) -> dict[int, CalibrationCurve]:
    """Per-seed U-curve tables from the full-compute reference."""
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = store or ReferenceStore(out / "cache")
    backbone = Backbone(cfg.backbone)
    curves = {}
    for seed in cfg.seeds:
        c = u_curve(store.get(backbone, sampler_config(cfg, seed)))
        curves[seed] = c
        with open(out / f"ucurve_seed_{seed}.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("step", "rel_l1", "cosine"))
            for k, (inc, cos) in enumerate(zip(c.increments, c.cosines), start=2):
                w.writerow((k, repr(float(inc)), repr(float(cos))))
        if figures:
            from .figures import plot_u_curve

            plot_u_curve(c.increments, c.cosines, out / f"ucurve_seed_{seed}.png", title=f"U-curve, seed {seed}")
    return curves


def mask_rows(run: ScheduledRun) -> list[tuple]:
    refresh = run.refresh_records()
    if not refresh:
        raise NoRefreshSteps("run has no refresh steps; nothing to export")
    rows = []
    for rec in refresh:
        sel = set(rec.tokens)
        for i, d in enumerate(rec.diffs):
            rows.append((rec.step, i, repr(float(d)), int(i in sel)))
    return rows


def emit_masks(run: ScheduledRun, path) -> int:
    """Token-mask CSV (step, token, diff, selected) for every refresh step; returns row count."""
    rows = mask_rows(run)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MASK_COLUMNS)
        w.writerows(rows)
    return len(rows)


def masks(cfg: ExperimentConfig, out_dir=None, store: ReferenceStore | None = None) -> list[Path]:
    out = Path(out_dir if out_dir is not None else cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = store or ReferenceStore(out / "cache")
    prep = prepare(cfg, store)
    paths = []
    for seed in cfg.seeds:
        res = run_seed(prep, seed, store)
        p = out / f"masks_seed_{seed}.csv"
        emit_masks(res.run, p)
        paths.append(p)
    return paths


def apply_axis(cfg: ExperimentConfig, axis: str, value) -> ExperimentConfig:
    if axis == "r":
        return cfg.with_overrides({"controller.r": value, "controller.delta_warn": None})
    if axis == "phase":
        m = cfg.method
        return replace(cfg, method=MethodSettings(name="phase", phase=value, skip_count=m.skip_count or 1))
    return cfg.with_overrides({f"controller.{axis}": value})


def _row(axis, value, seed, rep) -> dict:
    d = rep if isinstance(rep, dict) else rep.summary()
    return {"axis": axis, "value": value, "seed": seed, **{c: d[c] for c in SWEEP_COLUMNS[3:]}}


def sweep(spec: SweepSpec, out_dir=None, figures: bool = True, store: ReferenceStore | None = None) -> list[dict]:
    """One row per grid point per seed plus a seed-averaged row (seed = "mean")."""
    out = Path(out_dir or spec.output_dir or spec.base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = store or ReferenceStore(out / "cache")
    rows = []
    for value in spec.values:
        cfg = apply_axis(spec.base, spec.axis, value)
        prep = prepare(cfg, store)
        reports = [run_seed(prep, s, store).report for s in cfg.seeds]
        rows += [_row(spec.axis, value, rep.seed, rep) for rep in reports]
        rows.append(_row(spec.axis, value, "mean", average_reports(reports)))
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for row in rows:
            w.writerow(["" if row[c] is None else (repr(row[c]) if isinstance(row[c], float) else row[c])
                        for c in SWEEP_COLUMNS])
    if figures:
        from .figures import plot_sweep

        plot_sweep(rows, spec.axis, out / "sweep.png")
    return rows
