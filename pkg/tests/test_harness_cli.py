import csv
import json
import math
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cachelab import cli, config, harness
from cachelab.config import ExperimentConfig
from cachelab.controller import StepMode
from cachelab.errors import NoRefreshSteps
from cachelab.token_policy import select_tokens

ROOT = Path(__file__).resolve().parents[1]

TINY_BACKBONE = {"n_blocks": 3, "n_tokens": 8, "dim": 16, "n_heads": 2, "mlp_ratio": 2, "weight_seed": 11}


def tiny(method, **extra):
    raw = {
        "backbone": dict(TINY_BACKBONE),
        "sampler": {"steps": 10},
        "controller": {"delta_crit": 0.8, "r": 0.3, "block_ratio": 0.67, "rho_tok": 0.5},
        "calibration": {"seeds": [1000, 1001]},
        "seeds": [0, 1],
        "method": method,
    }
    for k, v in extra.items():
        config.set_dotted(raw, k, v)
    return config.from_dict(raw)


def _close(a, b, path="$"):
    """Same structure exactly; floats within 1e-9 relative."""
    if isinstance(a, dict):
        assert isinstance(b, dict) and list(a) == list(b), path
        for k in a:
            _close(a[k], b[k], f"{path}.{k}")
    elif isinstance(a, list):
        assert isinstance(b, list) and len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            _close(x, y, f"{path}[{i}]")
    elif isinstance(a, float) and not isinstance(b, bool):
        assert isinstance(b, (int, float)) and math.isclose(a, b, rel_tol=1e-9, abs_tol=1e-300), path
    else:
        assert type(a) is type(b) and a == b, path


def _csv_close(got: Path, want: Path):
    g, w = list(csv.reader(open(got))), list(csv.reader(open(want)))
    assert g[0] == w[0] and len(g) == len(w)
    for rg, rw in zip(g[1:], w[1:]):
        assert len(rg) == len(rw)
        for a, b in zip(rg, rw):
            if a == b:
                continue
            assert math.isclose(float(a), float(b), rel_tol=1e-9), (a, b)


def test_nocache_summary(tmp_path):
    s = harness.run(tiny({"name": "nocache"}), tmp_path, figures=False)
    assert s["speedup"] == 1.0 and s["rel_l1"] == 0.0
    assert s["schedule"] == "F" * 10


def test_uniform_interval_two(tmp_path):
    s = harness.run(tiny({"name": "uniform", "interval": 2}), tmp_path / "a", figures=False)
    assert s["schedule"] == "FSFSFSFSFF" and s["n_full"] == 6
    s = harness.run(tiny({"name": "uniform", "interval": 2}, **{"controller.force_last_full": False}),
                    tmp_path / "b", figures=False)
    assert s["n_full"] == 5


def test_run_writes_files(tmp_path):
    harness.run(tiny({"name": "c2f"}), tmp_path, figures=True)
    for f in ("config.json", "schedule.txt", "summary.json"):
        assert (tmp_path / f).is_file()
    for s in (0, 1):
        for f in ("report.json", "curves.csv", "trace.csv", "run.png"):
            assert (tmp_path / f"seed_{s}" / f).is_file()
    assert list((tmp_path / "cache").glob("ref_*.npz"))


def test_reference_cache_equivalence(tmp_path):
    cfg = tiny({"name": "c2f"})
    harness.run(cfg, tmp_path / "a", figures=False, store=harness.ReferenceStore(tmp_path / "cache"))
    store = harness.ReferenceStore(tmp_path / "cache")
    harness.run(cfg, tmp_path / "b", figures=False, store=store)
    assert store.computed == 0
    fresh = harness.ReferenceStore(None)
    harness.run(cfg, tmp_path / "c", figures=False, store=fresh)
    assert fresh.computed == 4
    for d in ("b", "c"):
        for s in (0, 1):
            a = json.loads((tmp_path / "a" / f"seed_{s}" / "report.json").read_text())["report"]
            b = json.loads((tmp_path / d / f"seed_{s}" / "report.json").read_text())["report"]
            assert a == b


def test_every_method_runs(tmp_path):
    for m in (
        {"name": "nocache"},
        {"name": "uniform", "interval": 3},
        {"name": "step_only"},
        {"name": "block_only"},
        {"name": "token_only"},
        {"name": "c2f"},
        {"name": "phase", "phase": "mid", "skip_count": 2},
    ):
        s = harness.run(tiny(m), tmp_path / m["name"], figures=False)
        assert s["speedup"] >= 1.0


def test_method_controller_choices():
    store = harness.ReferenceStore(None)
    step = harness.prepare(tiny({"name": "step_only"}), store)
    assert step.controller.delta_warn == step.controller.delta_crit
    assert step.schedule.count(StepMode.REFRESH) == 0
    blk = harness.prepare(tiny({"name": "block_only"}), store)
    assert blk.controller.rho_tok == 1.0 and blk.controller.delta_blk is not None
    tok = harness.prepare(tiny({"name": "token_only"}), store)
    assert tok.controller.delta_blk is None and tok.controller.rho_tok == 0.5
    auto = harness.prepare(tiny({"name": "c2f"}, **{"controller.r": "auto"}), store)
    assert auto.r == pytest.approx(float(np.mean(auto.curve.increments[3:6])))


def test_masks(tmp_path):
    store = harness.ReferenceStore(None)
    prep = harness.prepare(tiny({"name": "c2f"}, **{"controller.rho_tok": 1.0}), store)
    rows = harness.mask_rows(harness.run_seed(prep, 0, store).run)
    assert rows and all(r[3] == 1 for r in rows)

    prep = harness.prepare(tiny({"name": "token_only"}, **{"controller.rho_tok": 0.25}), store)
    res = harness.run_seed(prep, 0, store)
    path = tmp_path / "m.csv"
    n = harness.emit_masks(res.run, path)
    table = list(csv.DictReader(open(path)))
    assert len(table) == n
    by_step = {}
    for row in table:
        by_step.setdefault(int(row["step"]), []).append(row)
    assert by_step
    for step_rows in by_step.values():
        assert sum(int(r["selected"]) for r in step_rows) == 2
        diffs = [float(r["diff"]) for r in step_rows]
        chosen = select_tokens(diffs, 0.25)
        assert [int(r["selected"]) for r in step_rows] == [int(i in chosen) for i in range(8)]


def test_masks_need_refresh_steps():
    store = harness.ReferenceStore(None)
    prep = harness.prepare(tiny({"name": "nocache"}), store)
    with pytest.raises(NoRefreshSteps):
        harness.emit_masks(harness.run_seed(prep, 0, store).run, "/dev/null")


def test_sweep_rows_and_step_only_reduction(tmp_path):
    base = tiny({"name": "c2f"})
    spec = config.SweepSpec(base, "r", (0.1, 0.3, 0.5, 0.9, 1.0))
    rows = harness.sweep(spec, tmp_path, figures=True)
    means = [r for r in rows if r["seed"] == "mean"]
    assert len(means) == 5 and len(rows) == 5 * 3
    assert (tmp_path / "sweep.csv").is_file() and (tmp_path / "sweep.png").is_file()
    step = harness.run(base.with_overrides({"method.name": "step_only"}), tmp_path / "s", figures=False)
    r1 = means[-1]
    for key in ("speedup", "psnr", "rel_l1", "n_full", "n_refresh", "n_skip"):
        assert r1[key] == step[key]


def test_gamma_sweep_full_counts(tmp_path):
    base = tiny({"name": "c2f"}, **{
        "calibration.curve": [0.2] * 9, "controller.r": None, "controller.delta_warn": 0.5,
        "controller.delta_crit": 0.9, "seeds": [0]})
    rows = harness.sweep(config.SweepSpec(base, "gamma", (0.0, 0.5, 1.0)), tmp_path, figures=False)
    fulls = [r["n_full"] for r in rows if r["seed"] == "mean"]
    assert fulls == [3.0, 2.0, 2.0]
    assert all(a >= b for a, b in zip(fulls, fulls[1:]))


def test_phase_sweep(tmp_path):
    base = tiny({"name": "phase", "phase": "early", "skip_count": 2})
    rows = harness.sweep(config.SweepSpec(base, "phase", ("early", "mid", "late")), tmp_path, figures=False)
    means = [r for r in rows if r["seed"] == "mean"]
    assert len({r["speedup"] for r in means}) == 1


def test_golden_outputs(tmp_path, golden_dir):
    cfg = config.load(golden_dir / "tiny_c2f.json")
    harness.run(cfg, tmp_path, figures=False)
    harness.masks(cfg, tmp_path / "masks")
    rep = json.loads((tmp_path / "seed_0" / "report.json").read_text())
    assert list(rep) == ["header", "report"]
    _close(json.loads((golden_dir / "report_seed0.json").read_text()), rep["report"])
    _close(json.loads((golden_dir / "summary.json").read_text()),
           json.loads((tmp_path / "summary.json").read_text())["report"])
    _csv_close(tmp_path / "seed_0" / "curves.csv", golden_dir / "curves_seed0.csv")
    _csv_close(tmp_path / "seed_0" / "trace.csv", golden_dir / "trace_seed0.csv")
    _csv_close(tmp_path / "masks" / "masks_seed_0.csv", golden_dir / "masks_seed0.csv")
    assert (tmp_path / "schedule.txt").read_text() == (golden_dir / "tiny_schedule.txt").read_text()


def test_cli_run_and_overrides(tmp_path, capsys):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(tiny({"name": "c2f"}).dumps())
    rc = cli.main(["run", str(cfgp), "--out", str(tmp_path / "o"), "--no-figures",
                   "--set", "seeds=[3]", "--set", "controller.gamma=0.5"])
    assert rc == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["seeds"] == [3]
    written = config.load(tmp_path / "o" / "config.json")
    assert written.controller.gamma == 0.5


def test_cli_other_subcommands(tmp_path, capsys):
    cfgp = tmp_path / "c.json"
    cfgp.write_text(tiny({"name": "c2f"}).dumps())
    out = str(tmp_path / "o")
    assert cli.main(["calibrate", str(cfgp), "--out", out]) == 0
    assert "schedule" in capsys.readouterr().out
    assert (tmp_path / "o" / "calibration.csv").is_file() and (tmp_path / "o" / "calibration.png").is_file()
    assert cli.main(["curves", str(cfgp), "--out", out]) == 0
    assert (tmp_path / "o" / "ucurve_seed_0.csv").is_file()
    assert cli.main(["masks", str(cfgp), "--out", out]) == 0
    assert (tmp_path / "o" / "masks_seed_1.csv").is_file()
    sweep = tmp_path / "s.json"
    sweep.write_text(json.dumps({"base": "c.json", "axis": "rho_tok", "values": [0.5, 1.0]}))
    assert cli.main(["sweep", str(sweep), "--out", str(tmp_path / "sw"), "--no-figures"]) == 0
    assert "rho_tok=0.5" in capsys.readouterr().out
    assert cli.main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out)["additionalProperties"] is False


def test_cli_errors(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"method": {"name": "c2f"}, "controler": {}}')
    assert cli.main(["run", str(bad), "--no-figures", "--out", str(tmp_path)]) == 2
    assert "SchemaViolation" in capsys.readouterr().err
    assert cli.main(["run", str(tmp_path / "nope.json")]) == 2
    assert "ConfigParse" in capsys.readouterr().err


def test_console_script_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "cachelab.cli", "schema", "--sweep"],
                          capture_output=True, text=True, check=True)
    assert json.loads(proc.stdout)["required"] == ["base", "axis", "values"]


def test_shipped_configs_validate():
    for p in sorted((ROOT / "configs").glob("*.json")):
        if p.name.startswith("sweep"):
            config.load_sweep(p)
        else:
            assert isinstance(config.load(p), ExperimentConfig)
