import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cachelab.toy_dit import Backbone, BackboneConfig, Sampler, SamplerConfig  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def small_backbone():
    return Backbone(BackboneConfig(n_blocks=4, n_tokens=16, dim=32, n_heads=4, mlp_ratio=4, weight_seed=3))


@pytest.fixture(scope="session")
def small_sampler():
    return Sampler(SamplerConfig(steps=10, latent_seed=5))


@pytest.fixture
def golden_dir():
    return GOLDEN


_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    num = int(name.split("_")[2])
    label = " ".join(name.split("_")[3:])
    if report.when == "call" or report.outcome != "passed":
        prev = _CRITERIA.get(num, (label, "PASS"))[1]
        status = "PASS" if report.outcome == "passed" and prev == "PASS" else "FAIL"
        _CRITERIA[num] = (label, status)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        label, status = _CRITERIA[num]
        terminalreporter.write_line(f"criterion {num:2d} {status}  {label}")
