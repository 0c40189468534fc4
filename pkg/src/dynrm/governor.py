"""Runtime resource manager: joint subnet / device / DVFS selection, plus Linux-style baselines.

Every governor is a pure function of (profiles, platform, live state, target)
returning a Decision. The dynamic governor searches the whole operating-point
space exhaustively; the baselines run one fixed subnet on a designated device
and only move the frequency.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

from .platform import Platform, PlatformState, ThermalParams, check_contention
from .profiles import OperatingPoint, ProfileSet, point_metrics

DEFAULT_HYSTERESIS = 0.02
SCHEDUTIL_HEADROOM = 1.25

GOVERNORS = ("dynamic", "performance", "schedutil")


class Rationale(str, enum.Enum):
    TARGET_MET = "TargetMet"
    BEST_EFFORT = "BestEffort"
    ACCURACY_FLOOR_BINDS = "AccuracyFloorBinds"
    POWER_BUDGET_BINDS = "PowerBudgetBinds"


@dataclass(frozen=True)
class PerformanceTarget:
    latency_ms: float
    min_top1: Optional[float] = None

    def __post_init__(self) -> None:
        if not self.latency_ms > 0:
            raise ValueError(f"target latency must be > 0, got {self.latency_ms}")
        if self.min_top1 is not None and not 0 <= self.min_top1 <= 100:
            raise ValueError(f"min_top1 must be in [0, 100], got {self.min_top1}")


@dataclass(frozen=True)
class Constraints:
    power_budget_w: Optional[float] = None
    thermal: Optional[ThermalParams] = None

    def __post_init__(self) -> None:
        if self.power_budget_w is not None and not self.power_budget_w > 0:
            raise ValueError(f"power budget must be > 0, got {self.power_budget_w}")


@dataclass(frozen=True)
class Candidate:
    point: OperatingPoint
    latency_ms: float
    energy_mj: float
    busy_power_w: float
    top1: float


@dataclass(frozen=True)
class Decision:
    point: OperatingPoint
    predicted_latency_ms: float
    predicted_energy_mj: float
    feasible: bool
    rationale: Rationale


def _throttle_cap(platform: Platform, state: PlatformState, constraints: Optional[Constraints]) -> Optional[int]:
    params = constraints.thermal if constraints is not None and constraints.thermal else platform.thermal
    return params.throttle_cap if state.throttled else None


def _candidates(profiles: ProfileSet, platform: Platform, state: PlatformState, cap: Optional[int]) -> list[Candidate]:
    alpha = check_contention(state.contention)
    out = []
    for subnet in profiles.subnets:
        top1 = profiles.top1(subnet)
        for d in platform.devices:
            if not profiles.has_pair(subnet, d.id):
                continue
            top = d.max_idx if cap is None else min(d.max_idx, cap)
            for idx in range(top + 1):
                point = OperatingPoint(subnet, d.id, idx, d.core_count)
                lat, power, energy = point_metrics(profiles, platform, point, alpha)
                out.append(Candidate(point, lat, energy, power, top1))
    return out


def _passes(c: Candidate, target: PerformanceTarget, budget: Optional[float], floor: bool = True) -> bool:
    if c.latency_ms > target.latency_ms:
        return False
    if floor and target.min_top1 is not None and c.top1 < target.min_top1:
        return False
    if budget is not None and c.busy_power_w > budget:
        return False
    return True


def feasible_points(
    profiles: ProfileSet,
    platform: Platform,
    state: PlatformState,
    target: PerformanceTarget,
    constraints: Optional[Constraints] = None,
) -> list[Candidate]:
    """Every throttle-compliant point meeting the latency target, accuracy floor and power budget."""
    budget = constraints.power_budget_w if constraints is not None else None
    cap = _throttle_cap(platform, state, constraints)
    return [c for c in _candidates(profiles, platform, state, cap) if _passes(c, target, budget)]


def objective_key(c: Candidate) -> tuple:
    """Sort key of the selection objective; the minimum wins."""
    p = c.point
    return (-c.top1, c.energy_mj, p.freq_idx, p.device, p.subnet)


def _min_latency_key(c: Candidate) -> tuple:
    p = c.point
    return (c.latency_ms, c.energy_mj, p.freq_idx, p.device, p.subnet)


def _decision(c: Candidate, feasible: bool, rationale: Rationale) -> Decision:
    return Decision(c.point, c.latency_ms, c.energy_mj, feasible, rationale)


def select_dynamic(
    profiles: ProfileSet,
    platform: Platform,
    state: PlatformState,
    target: PerformanceTarget,
    constraints: Optional[Constraints] = None,
    prev: Optional[OperatingPoint] = None,
    hysteresis: float = DEFAULT_HYSTERESIS,
) -> Decision:
    """Most accurate feasible point, then least energy, lowest frequency, device id, subnet name.

    A feasible ``prev`` with the winner's accuracy is kept while its energy is
    within ``hysteresis`` (a fraction) of the winner's. With nothing feasible,
    the minimum-latency point is returned as a best-effort decision.
    """
    if not profiles.entries:
        raise ValueError("cannot select from an empty profile set")
    if hysteresis < 0:
        raise ValueError("hysteresis must be >= 0")
    budget = constraints.power_budget_w if constraints is not None else None
    cap = _throttle_cap(platform, state, constraints)
    candidates = _candidates(profiles, platform, state, cap)
    if not candidates:
        raise ValueError("no profiled operating point on this platform")
    feasible = [c for c in candidates if _passes(c, target, budget)]

    if not feasible:
        best = min(candidates, key=_min_latency_key)
        if target.min_top1 is not None and any(_passes(c, target, budget, floor=False) for c in candidates):
            rationale = Rationale.ACCURACY_FLOOR_BINDS
        elif budget is not None and any(_passes(c, target, None) for c in candidates):
            rationale = Rationale.POWER_BUDGET_BINDS
        else:
            rationale = Rationale.BEST_EFFORT
        return _decision(best, False, rationale)

    winner = min(feasible, key=objective_key)
    rationale = Rationale.TARGET_MET
    if budget is not None:
        unbudgeted = min((c for c in candidates if _passes(c, target, None)), key=objective_key)
        if unbudgeted.point != winner.point:
            rationale = Rationale.POWER_BUDGET_BINDS

    if prev is not None and prev != winner.point:
        kept = next((c for c in feasible if c.point == prev), None)
        if (
            kept is not None
            and kept.top1 == winner.top1
            and kept.energy_mj <= winner.energy_mj * (1.0 + hysteresis)
        ):
            return _decision(kept, True, rationale)
    return _decision(winner, True, rationale)


def designate_fixed_subnet(
    profiles: ProfileSet, platform: Platform, target_ms: float, device: str
) -> str:
    """The offline static-model choice for the baselines.

    Highest-accuracy subnet meeting ``target_ms`` on ``device`` at maximum
    frequency without contention; the fastest subnet there when none does.
    """
    dev = platform.device(device)
    options = []
    for subnet in profiles.subnets:
        if not profiles.has_pair(subnet, device):
            continue
        point = OperatingPoint(subnet, device, dev.max_idx, dev.core_count)
        lat, _, _ = point_metrics(profiles, platform, point, 1.0)
        options.append((lat, profiles.top1(subnet), subnet))
    if not options:
        raise ValueError(f"no subnet profiled on device {device!r}")
    meeting = [o for o in options if o[0] <= target_ms]
    if meeting:
        return max(meeting, key=lambda o: (o[1], -o[0], o[2]))[2]
    return min(options)[2]


def _fixed_decision(
    profiles: ProfileSet,
    platform: Platform,
    state: PlatformState,
    target: PerformanceTarget,
    subnet: str,
    device: str,
    idx: int,
) -> Decision:
    dev = platform.device(device)
    if state.throttled:
        idx = min(idx, platform.thermal.throttle_cap)
    point = OperatingPoint(subnet, device, idx, dev.core_count)
    lat, _, energy = point_metrics(profiles, platform, point, state.contention)
    ok = lat <= target.latency_ms
    return Decision(point, lat, energy, ok, Rationale.TARGET_MET if ok else Rationale.BEST_EFFORT)


def select_performance_baseline(
    profiles: ProfileSet,
    platform: Platform,
    state: PlatformState,
    target: PerformanceTarget,
    fixed_subnet: str,
    device: str,
) -> Decision:
    """Fixed subnet at the highest frequency the throttle allows."""
    return _fixed_decision(
        profiles, platform, state, target, fixed_subnet, device, platform.device(device).max_idx
    )


def schedutil_index(platform: Platform, device: str, util: float) -> int:
    """Lowest level at or above 1.25 * f_max * util, saturating at f_max."""
    if not 0.0 <= util <= 1.0:
        raise ValueError(f"utilization must be in [0, 1], got {util}")
    dev = platform.device(device)
    request = SCHEDUTIL_HEADROOM * dev.freq_table[-1].freq_hz * util
    for i, level in enumerate(dev.freq_table):
        if level.freq_hz >= request:
            return i
    return dev.max_idx


def select_schedutil_baseline(
    profiles: ProfileSet,
    platform: Platform,
    state: PlatformState,
    target: PerformanceTarget,
    util: float,
    fixed_subnet: str,
    device: str,
) -> Decision:
    return _fixed_decision(
        profiles, platform, state, target, fixed_subnet, device, schedutil_index(platform, device, util)
    )


def energy_per_inference(
    point: OperatingPoint, profiles: ProfileSet, platform: Platform, contention: float = 1.0
) -> float:
    """Busy power times contention-adjusted latency, in mJ."""
    return point_metrics(profiles, platform, point, contention)[2]
