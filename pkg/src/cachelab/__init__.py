"""Toy DiT sampler and a step/block/token feature-caching controller with FLOP and error accounting."""

__version__ = "0.1.0"

from .cachecore import DeltaCache, ErrAccumulator, accumulate_err, commit_full, commit_refresh, reuse_step
from .controller import (
    CalibrationCurve,
    ControllerConfig,
    Phase,
    Schedule,
    StepMode,
    calibrate,
    classify,
    phase_injection_schedule,
    pick_r,
    run_scheduled,
    uniform_schedule,
)
from .metrics import RunReport, psnr, speedup, u_curve
from .toy_dit import Backbone, BackboneConfig, Sampler, SamplerConfig, StepPlan, net_forward, reference_run

__all__ = [
    "Backbone",
    "BackboneConfig",
    "CalibrationCurve",
    "ControllerConfig",
    "DeltaCache",
    "ErrAccumulator",
    "Phase",
    "RunReport",
    "Sampler",
    "SamplerConfig",
    "Schedule",
    "StepMode",
    "StepPlan",
    "accumulate_err",
    "calibrate",
    "classify",
    "commit_full",
    "commit_refresh",
    "net_forward",
    "phase_injection_schedule",
    "pick_r",
    "psnr",
    "reference_run",
    "reuse_step",
    "run_scheduled",
    "speedup",
    "u_curve",
    "uniform_schedule",
]
