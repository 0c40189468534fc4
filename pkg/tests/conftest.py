from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from dynrm.platform import DeviceKind, DeviceSpec, FreqLevel, Platform, ThermalParams  # noqa: E402
from dynrm.profiles import AccuracyEntry, ProfileEntry, ProfileSet  # noqa: E402

ACCEPTANCE_LINES: list[str] = []


def acceptance(name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


THERMAL = ThermalParams(r_th=2.0, c_th=10.0, t_ambient=25.0, t_throttle=85.0, t_release=80.0, throttle_cap=0)


def make_device(device_id, freqs_hz, kind=DeviceKind.CPU_CLUSTER, cores=4, idle=0.1):
    levels = tuple(FreqLevel(f, 0.6 + 0.1 * i, idle * (i + 1)) for i, f in enumerate(freqs_hz))
    return DeviceSpec(device_id, kind, 1 if kind is DeviceKind.GPU else cores, levels)


@pytest.fixture
def sml_platform():
    """One device ``d`` with levels f1=1 GHz, f2=2 GHz."""
    return Platform((make_device("d", [1e9, 2e9]),), THERMAL)


@pytest.fixture
def sml_profiles():
    """Three subnets S/M/L, 2 W busy everywhere."""
    table = {"S": (70.0, 8.0, 5.0), "M": (75.0, 14.0, 9.0), "L": (80.0, 22.0, 14.0)}
    entries = []
    for name, (_, l1, l2) in table.items():
        entries.append(ProfileEntry(name, "d", 1e9, l1, 2.0))
        entries.append(ProfileEntry(name, "d", 2e9, l2, 2.0))
    accs = tuple(AccuracyEntry(name, top1) for name, (top1, _, _) in table.items())
    return ProfileSet(tuple(entries), accs, "sml")
