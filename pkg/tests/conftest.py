
import pytest
from hypothesis import HealthCheck, settings

from concatmc.process import process_from_json
from concatmc.spaces import SpacePoint
from concatmc.transfer import ExitPointTable

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def chain(labels, rates=None, kill=None, tag=0):
    """Finite chain from sparse dicts: ``rates = {src: {dst: r}}``, ``kill = {state: c}``."""
    doc = {"kind": "chain", "space": {"kind": "labels", "labels": list(labels)}}
    doc["rates"] = rates or {}
    doc["kill"] = kill or {}
    return process_from_json(doc, tag=tag)


def brownian(dt=1e-3, lo=0.0, hi=1.0, killing=("lo", "hi"), drift="bm"):
    return process_from_json(
        {
            "kind": "diffusion",
            "space": {"kind": "interval", "lo": lo, "hi": hi},
            "drift": drift,
            "sigma": "bm",
            "killing": list(killing),
            "dt": dt,
        },
        tag=0,
    )


def table(rows):
    return ExitPointTable(rows)


@pytest.fixture
def four_state_plan():
    """Two 2-state chains joined by an exit-dependent table kernel (also shipped as a config)."""
    from concatmc.concat import ConcatenationPlan, Stage

    first = chain(["a1", "a2"], {"a1": {"a2": 1.0}, "a2": {"a1": 2.0}}, {"a1": 0.5, "a2": 1.5})
    second = chain(["b1", "b2"], {"b1": {"b2": 1.0}, "b2": {"b1": 1.0}}, {"b1": 1.0, "b2": 2.0})
    k = table({"a1": {"b1": 0.3, "b2": 0.7}, "a2": {"b1": 0.7, "b2": 0.3}})
    return ConcatenationPlan([Stage(first, k), Stage(second)], max_revivals=1)


def sp(tag, value):
    return SpacePoint(tag, value)


def z_ok(est, target, stderr, sigma=3.0):
    return abs(est - target) <= sigma * stderr


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
