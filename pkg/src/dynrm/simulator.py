"""Fixed-step, trace-driven simulation of one managed workload on the platform.

Each control period: apply due events, update throttling, ask the governor for
an operating point, execute inference requests for the rest of the period,
integrate energy and step the thermal node. Requests may span periods; their
remaining work is carried as a fraction and drained at the rate in effect.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .config import ConfigError, expect_keys, read_json
from .governor import (
    DEFAULT_HYSTERESIS,
    GOVERNORS,
    Constraints,
    Decision,
    PerformanceTarget,
    designate_fixed_subnet,
    select_dynamic,
    select_performance_baseline,
    select_schedutil_baseline,
)
from .platform import (
    Platform,
    PlatformState,
    ThermalParams,
    check_contention,
    parse_platform,
    platform_power,
    step_thermal,
    update_throttle,
)
from .profiles import (
    OperatingPoint,
    ProfileSet,
    ProfileValidationError,
    gen_synthetic,
    load_profiles,
    parse_generator_spec,
    predict_busy_power,
    predict_latency,
    validate_profiles,
)

DEFAULT_CONTROL_PERIOD_S = 0.05
WARMUP_S = 5.0
# Relative slack when comparing a measured latency with its target; absorbs
# the rounding of work carried across period boundaries.
MISS_RTOL = 1e-9
_TIME_EPS = 1e-9

TIMELINE_HEADER = (
    "t_s", "subnet", "device", "freq_hz", "latency_ms", "target_ms",
    "feasible", "temp_c", "alpha", "power_w", "disturbed",
)


class ScenarioError(ConfigError):
    pass


class EventKind(str, enum.Enum):
    TARGET_CHANGE = "target_change"
    CONTENTION_SET = "contention_set"
    AMBIENT_SET = "ambient_set"


@dataclass(frozen=True)
class Event:
    at_s: float
    kind: EventKind
    value: Any  # PerformanceTarget for TARGET_CHANGE, float otherwise

    def __post_init__(self) -> None:
        if not self.at_s >= 0:
            raise ScenarioError(f"event time must be >= 0, got {self.at_s}")
        if self.kind is EventKind.TARGET_CHANGE and not isinstance(self.value, PerformanceTarget):
            raise ScenarioError("target_change carries a PerformanceTarget")
        if self.kind is EventKind.CONTENTION_SET:
            check_contention(self.value)
        if self.kind is EventKind.AMBIENT_SET and not math.isfinite(self.value):
            raise ScenarioError("ambient temperature must be finite")


@dataclass(frozen=True)
class ProfileSource:
    path: Optional[Path] = None
    accuracy_path: Optional[Path] = None
    seed: Optional[int] = None
    generator: Optional[Mapping] = None

    def load(self, platform: Platform, seed: Optional[int] = None) -> ProfileSet:
        if self.path is not None:
            return load_profiles(self.path, platform, self.accuracy_path)
        spec = parse_generator_spec(self.generator, platform)
        pset = gen_synthetic(self.seed if seed is None else seed, spec)
        violations = validate_profiles(pset, platform)
        if violations:
            raise ProfileValidationError(violations)
        return pset


@dataclass(frozen=True)
class GovernorConfig:
    hysteresis_pct: float = DEFAULT_HYSTERESIS * 100
    designated_device: Optional[str] = None
    fixed_subnet: Optional[str] = None
    power_budget_w: Optional[float] = None


@dataclass(frozen=True)
class Scenario:
    duration_s: float
    platform: Platform
    target: PerformanceTarget
    profiles: ProfileSource
    control_period_s: float = DEFAULT_CONTROL_PERIOD_S
    request_mode: str = "back-to-back"
    request_period_s: float = 0.0
    alpha: float = 1.0
    events: tuple[Event, ...] = ()
    governor: GovernorConfig = field(default_factory=GovernorConfig)

    def __post_init__(self) -> None:
        if not self.duration_s > 0:
            raise ScenarioError("duration_s must be > 0")
        if not self.control_period_s > 0:
            raise ScenarioError("control_period_s must be > 0")
        if self.control_period_s > self.platform.thermal.max_dt_s:
            raise ScenarioError(
                f"control_period_s={self.control_period_s} exceeds the thermal stability guard "
                f"{self.platform.thermal.max_dt_s}"
            )
        if self.request_mode not in ("back-to-back", "periodic"):
            raise ScenarioError(f"unknown request mode {self.request_mode!r}")
        if not self.request_period_s >= 0:
            raise ScenarioError("request period must be >= 0")
        check_contention(self.alpha)
        times = [e.at_s for e in self.events]
        if times != sorted(times):
            raise ScenarioError("events must be sorted by time")
        dev = self.governor.designated_device
        if dev is not None and dev not in self.platform.device_ids:
            raise ScenarioError(f"designated_device {dev!r} is not a platform device")
        if self.governor.hysteresis_pct < 0:
            raise ScenarioError("hysteresis_pct must be >= 0")

    @property
    def designated_device(self) -> str:
        return self.governor.designated_device or self.platform.devices[0].id

    @property
    def strictest_target_ms(self) -> float:
        targets = [self.target.latency_ms] + [
            e.value.latency_ms for e in self.events if e.kind is EventKind.TARGET_CHANGE
        ]
        return min(targets)


def _parse_target(doc: Mapping, where: str) -> PerformanceTarget:
    expect_keys(doc, where, required={"latency_ms"}, optional={"min_top1"})
    floor = doc.get("min_top1")
    return PerformanceTarget(float(doc["latency_ms"]), None if floor is None else float(floor))


def _parse_event(doc: Mapping, where: str) -> Event:
    if not isinstance(doc, Mapping) or "kind" not in doc:
        raise ScenarioError(f"{where}: event needs a 'kind'")
    try:
        kind = EventKind(doc["kind"])
    except ValueError:
        raise ScenarioError(f"{where}: unknown event kind {doc['kind']!r}") from None
    if kind is EventKind.TARGET_CHANGE:
        expect_keys(doc, where, required={"at_s", "kind", "latency_ms"}, optional={"min_top1"})
        value: Any = _parse_target({k: doc[k] for k in ("latency_ms", "min_top1") if k in doc}, where)
    elif kind is EventKind.CONTENTION_SET:
        expect_keys(doc, where, required={"at_s", "kind", "alpha"})
        value = float(doc["alpha"])
    else:
        expect_keys(doc, where, required={"at_s", "kind", "t_ambient"})
        value = float(doc["t_ambient"])
    return Event(float(doc["at_s"]), kind, value)


SCENARIO_KEYS = {
    "duration_s", "control_period_s", "requests", "target", "alpha",
    "platform", "profiles", "governor", "events",
}


def parse_scenario(doc: Mapping, base_dir: Path | None = None) -> Scenario:
    """Scenario from its JSON document; relative profile paths resolve against ``base_dir``."""
    expect_keys(
        doc, "scenario",
        required={"duration_s", "target", "platform", "profiles"},
        optional=SCENARIO_KEYS,
    )
    platform = parse_platform(doc["platform"])
    base_dir = Path(base_dir) if base_dir is not None else Path(".")

    req = doc.get("requests", {"mode": "back-to-back"})
    expect_keys(req, "scenario.requests", required={"mode"}, optional={"period_s"})
    mode = req["mode"]
    period = float(req.get("period_s", 0.0))
    if mode == "periodic" and "period_s" not in req:
        raise ScenarioError("scenario.requests: periodic mode needs period_s")

    prof = doc["profiles"]
    if isinstance(prof, Mapping) and "path" in prof:
        expect_keys(prof, "scenario.profiles", required={"path"}, optional={"accuracy_path"})
        acc = prof.get("accuracy_path")
        source = ProfileSource(
            path=base_dir / prof["path"],
            accuracy_path=None if acc is None else base_dir / acc,
        )
    else:
        expect_keys(prof, "scenario.profiles", required={"seed", "generator"})
        parse_generator_spec(prof["generator"], platform)  # fail early on bad specs
        source = ProfileSource(seed=int(prof["seed"]), generator=prof["generator"])

    gov = doc.get("governor", {})
    expect_keys(
        gov, "scenario.governor",
        optional={"hysteresis_pct", "designated_device", "fixed_subnet", "power_budget_w"},
    )
    budget = gov.get("power_budget_w")
    governor = GovernorConfig(
        hysteresis_pct=float(gov.get("hysteresis_pct", DEFAULT_HYSTERESIS * 100)),
        designated_device=gov.get("designated_device"),
        fixed_subnet=gov.get("fixed_subnet"),
        power_budget_w=None if budget is None else float(budget),
    )
    events = tuple(
        _parse_event(e, f"scenario.events[{i}]") for i, e in enumerate(doc.get("events", []))
    )
    return Scenario(
        duration_s=float(doc["duration_s"]),
        platform=platform,
        target=_parse_target(doc["target"], "scenario.target"),
        profiles=source,
        control_period_s=float(doc.get("control_period_s", DEFAULT_CONTROL_PERIOD_S)),
        request_mode=mode,
        request_period_s=period,
        alpha=float(doc.get("alpha", 1.0)),
        events=events,
        governor=governor,
    )


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(read_json(path), base_dir=path.parent)


# --- simulation state ----------------------------------------------------------


@dataclass(frozen=True)
class SimState:
    platform: PlatformState
    thermal: ThermalParams
    target: PerformanceTarget


def apply_event(state: SimState, event: Event) -> SimState:
    if event.kind is EventKind.TARGET_CHANGE:
        return replace(state, target=event.value)
    if event.kind is EventKind.CONTENTION_SET:
        return replace(state, platform=replace(state.platform, contention=event.value))
    return replace(state, thermal=replace(state.thermal, t_ambient=event.value))


@dataclass(frozen=True)
class TimelineRecord:
    """A completed request (latency_ms set) or the end of a control period (latency_ms None)."""

    t_s: float
    subnet: str
    device: str
    freq_hz: float
    latency_ms: Optional[float]
    target_ms: float
    feasible: bool
    temp_c: float
    alpha: float
    power_w: float
    disturbed: bool = False

    @property
    def is_request(self) -> bool:
        return self.latency_ms is not None


@dataclass(frozen=True)
class Metrics:
    total_energy_j: float
    energy_post_warmup_j: float
    duration_s: float
    request_count: int
    mean_latency_ms: float
    p95_latency_ms: float
    deadline_miss_count: int
    deadline_miss_rate: float
    mean_served_top1: float
    subnet_switch_count: int
    freq_switch_count: int
    disturbed_count: int

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping) -> "Metrics":
        expect_keys(doc, "metrics", required={f for f in cls.__dataclass_fields__})
        return cls(**doc)


@dataclass(frozen=True)
class SimResult:
    governor: str
    metrics: Metrics
    timeline: list[TimelineRecord]
    accuracy: Mapping[str, float]


def is_miss(latency_ms: float, target_ms: float) -> bool:
    return latency_ms > target_ms * (1.0 + MISS_RTOL)


def summarize(timeline: Sequence[TimelineRecord], accuracy: Mapping[str, float]) -> Metrics:
    """Aggregate a timeline.

    Energy is the rectangle sum of each period record's average power over the
    span since the previous period record, in the same order ``run`` used.
    A frequency switch is any change of the decided (device, frequency).
    """
    if not timeline:
        raise ValueError("cannot summarize an empty timeline")
    energy = 0.0
    post_warmup = 0.0
    prev_end = 0.0
    prev_point = None
    subnet_switches = freq_switches = 0
    latencies = []
    misses = disturbed = 0
    served = 0.0
    for r in timeline:
        if r.is_request:
            latencies.append(r.latency_ms)
            misses += is_miss(r.latency_ms, r.target_ms)
            disturbed += r.disturbed
            served += accuracy[r.subnet]
            continue
        e = r.power_w * (r.t_s - prev_end)
        energy += e
        if prev_end >= WARMUP_S - _TIME_EPS:
            post_warmup += e
        prev_end = r.t_s
        if prev_point is not None:
            subnet_switches += r.subnet != prev_point[0]
            freq_switches += (r.device, r.freq_hz) != prev_point[1:]
        prev_point = (r.subnet, r.device, r.freq_hz)
    n = len(latencies)
    lat = np.asarray(latencies, dtype=float)
    return Metrics(
        total_energy_j=energy,
        energy_post_warmup_j=post_warmup,
        duration_s=prev_end,
        request_count=n,
        mean_latency_ms=float(lat.mean()) if n else 0.0,
        p95_latency_ms=float(np.percentile(lat, 95)) if n else 0.0,
        deadline_miss_count=misses,
        deadline_miss_rate=misses / n if n else 0.0,
        mean_served_top1=served / n if n else 0.0,
        subnet_switch_count=subnet_switches,
        freq_switch_count=freq_switches,
        disturbed_count=disturbed,
    )


# --- the engine ----------------------------------------------------------------


@dataclass
class _Request:
    point: OperatingPoint
    feasible: bool
    started_s: float
    remaining: float = 1.0  # fraction of the inference still to run
    elapsed_ms: float = 0.0
    disturbed: bool = False
    rate_key: tuple = ()


def baseline_subnet(scenario: Scenario, profiles: ProfileSet) -> str:
    """The subnet the fixed baselines run: the configured override or the designated one."""
    return scenario.governor.fixed_subnet or designate_fixed_subnet(
        profiles, scenario.platform, scenario.strictest_target_ms, scenario.designated_device
    )


class _Governor:
    def __init__(self, name: str, scenario: Scenario, profiles: ProfileSet):
        if name not in GOVERNORS:
            raise ValueError(f"unknown governor {name!r}; valid: {', '.join(GOVERNORS)}")
        self.name = name
        self.scenario = scenario
        self.profiles = profiles
        self.device = scenario.designated_device
        self.fixed_subnet = baseline_subnet(scenario, profiles)
        if not profiles.has_pair(self.fixed_subnet, self.device):
            raise ScenarioError(f"fixed_subnet {self.fixed_subnet!r} is not profiled on {self.device!r}")
        self.hysteresis = scenario.governor.hysteresis_pct / 100.0
        self.prev: Optional[OperatingPoint] = None
        self.util = 1.0

    def decide(self, state: SimState) -> Decision:
        platform = self.scenario.platform
        if self.name == "dynamic":
            constraints = Constraints(self.scenario.governor.power_budget_w, state.thermal)
            d = select_dynamic(
                self.profiles, platform, state.platform, state.target, constraints,
                prev=self.prev, hysteresis=self.hysteresis,
            )
        elif self.name == "performance":
            d = select_performance_baseline(
                self.profiles, platform, state.platform, state.target, self.fixed_subnet, self.device
            )
        else:
            d = select_schedutil_baseline(
                self.profiles, platform, state.platform, state.target, self.util,
                self.fixed_subnet, self.device,
            )
        self.prev = d.point
        return d


def _period_bounds(duration: float, period: float) -> list[tuple[float, float]]:
    n = max(1, math.ceil(duration / period - _TIME_EPS))
    bounds = []
    for k in range(n):
        start = k * period
        end = min((k + 1) * period, duration)
        if end > start:
            bounds.append((start, end))
    return bounds


def run(
    scenario: Scenario,
    governor: str,
    profiles: Optional[ProfileSet] = None,
    seed: Optional[int] = None,
) -> SimResult:
    """Replay ``scenario`` under ``governor``; deterministic in its inputs."""
    platform = scenario.platform
    if profiles is None:
        profiles = scenario.profiles.load(platform, seed)
    gov = _Governor(governor, scenario, profiles)
    accuracy = {a.subnet: a.top1 for a in profiles.accuracies}

    state = SimState(platform.initial_state(scenario.alpha), platform.thermal, scenario.target)
    events = list(scenario.events)
    next_event = 0
    inflight: Optional[_Request] = None
    timeline: list[TimelineRecord] = []
    total_energy = 0.0

    for t_start, t_end in _period_bounds(scenario.duration_s, scenario.control_period_s):
        # (1) events due at this boundary
        changed = False
        while next_event < len(events) and events[next_event].at_s <= t_start + _TIME_EPS:
            state = apply_event(state, events[next_event])
            next_event += 1
            changed = True
        # (2) throttling
        throttled_before = state.platform.throttled
        state = replace(state, platform=update_throttle(state.platform, state.thermal))
        changed |= state.platform.throttled != throttled_before
        # (3) decision
        decision = gov.decide(state)
        if decision.feasible and decision.predicted_latency_ms > state.target.latency_ms:
            raise AssertionError(f"infeasible decision marked feasible: {decision}")
        if state.platform.throttled and decision.point.freq_idx > state.thermal.throttle_cap:
            raise AssertionError(f"decision ignores the throttle cap: {decision}")
        freq_idx = {d.id: 0 for d in platform.devices}
        if inflight is not None and inflight.point.device != decision.point.device:
            freq_idx[inflight.point.device] = state.platform.freq_idx[inflight.point.device]
        freq_idx[decision.point.device] = decision.point.freq_idx
        pstate = replace(state.platform, freq_idx=freq_idx)
        state = replace(state, platform=pstate)
        if inflight is not None and changed:
            inflight.disturbed = True

        # (4) execute requests
        t = t_start
        energy = 0.0
        busy_s = 0.0
        while t < t_end:
            if inflight is None:
                if scenario.request_mode == "periodic" and scenario.request_period_s > 0:
                    period = scenario.request_period_s
                    # frames that arrived while busy are dropped
                    start = max(t, math.ceil(t / period - _TIME_EPS) * period)
                else:
                    start = t
                if start >= t_end:
                    energy += platform_power(platform, pstate) * (t_end - t)
                    t = t_end
                    break
                if start > t:
                    energy += platform_power(platform, pstate) * (start - t)
                    t = start
                inflight = _Request(decision.point, decision.feasible, t)
            req = inflight
            dev = platform.device(req.point.device)
            f = dev.freq_hz(pstate.freq_idx[dev.id])
            rate_key = (f, pstate.contention)
            if req.rate_key and req.rate_key != rate_key:
                req.disturbed = True
            req.rate_key = rate_key
            lat_ms = predict_latency(profiles, req.point.subnet, dev.id, f) / pstate.contention
            busy_w = predict_busy_power(profiles, req.point.subnet, dev.id, f)
            active = OperatingPoint(req.point.subnet, dev.id, pstate.freq_idx[dev.id], dev.core_count)
            p_busy = platform_power(platform, pstate, active, busy_w)
            remaining_ms = req.remaining * lat_ms
            finish = t + remaining_ms / 1000.0
            if finish <= t_end:
                energy += p_busy * (finish - t)
                busy_s += finish - t
                req.elapsed_ms += remaining_ms
                timeline.append(
                    TimelineRecord(
                        t_s=finish,
                        subnet=req.point.subnet,
                        device=dev.id,
                        freq_hz=f,
                        latency_ms=req.elapsed_ms,
                        target_ms=state.target.latency_ms,
                        feasible=req.feasible,
                        temp_c=pstate.temperature,
                        alpha=pstate.contention,
                        power_w=p_busy,
                        disturbed=req.disturbed,
                    )
                )
                inflight = None
                t = finish
            else:
                span = t_end - t
                energy += p_busy * span
                busy_s += span
                req.elapsed_ms += span * 1000.0
                req.remaining -= span * 1000.0 / lat_ms
                t = t_end

        # (5) energy, (6) thermal
        dt = t_end - t_start
        p_avg = energy / dt
        total_energy += p_avg * dt
        gov.util = min(1.0, busy_s / dt)
        temp = step_thermal(pstate, p_avg, dt, state.thermal)
        state = replace(state, platform=replace(pstate, temperature=temp))
        timeline.append(
            TimelineRecord(
                t_s=t_end,
                subnet=decision.point.subnet,
                device=decision.point.device,
                freq_hz=platform.device(decision.point.device).freq_hz(decision.point.freq_idx),
                latency_ms=None,
                target_ms=state.target.latency_ms,
                feasible=decision.feasible,
                temp_c=temp,
                alpha=state.platform.contention,
                power_w=p_avg,
            )
        )

    metrics = summarize(timeline, accuracy)
    if metrics.total_energy_j != total_energy:
        raise AssertionError("energy accounting diverged from the timeline")
    return SimResult(governor, metrics, timeline, accuracy)


# --- knob attribution -------------------------------------------------------------

ATTRIBUTION_VARIANTS = ("frequency_only", "subnet_only", "joint")


def _restrict(profiles: ProfileSet, keep, label: str) -> ProfileSet:
    entries = tuple(e for e in profiles.entries if keep(e))
    names = {e.subnet for e in entries}
    accs = tuple(a for a in profiles.accuracies if a.subnet in names)
    return ProfileSet(entries, accs, f"{profiles.provenance}|{label}")


def knob_attribution(scenario: Scenario, profiles: ProfileSet) -> dict:
    """Whole-run energy saving over the performance baseline with knobs frozen.

    ``frequency_only`` lets the dynamic governor pick only frequencies for the
    baseline's subnet on the designated device; ``subnet_only`` lets it pick
    only subnets, each at its highest profiled frequency on that device;
    ``joint`` is the unrestricted governor. The three savings need not add up.
    """
    device = scenario.designated_device
    fixed = baseline_subnet(scenario, profiles)
    top_freq: dict[str, float] = {}
    for e in profiles.entries:
        if e.device == device:
            top_freq[e.subnet] = max(top_freq.get(e.subnet, 0.0), e.freq_hz)
    variants = {
        "frequency_only": _restrict(profiles, lambda e: e.device == device and e.subnet == fixed, "frequency_only"),
        "subnet_only": _restrict(
            profiles, lambda e: e.device == device and e.freq_hz == top_freq[e.subnet], "subnet_only"
        ),
        "joint": profiles,
    }
    reference = run(scenario, "performance", profiles).metrics
    out: dict[str, Any] = {"reference_energy_j": reference.total_energy_j}
    for name, pset in variants.items():
        m = run(scenario, "dynamic", pset).metrics
        ref = reference.total_energy_j
        out[name] = {
            "energy_j": m.total_energy_j,
            "energy_pct": None if ref == 0 else (ref - m.total_energy_j) / ref * 100.0,
            "deadline_miss_rate": m.deadline_miss_rate,
            "mean_served_top1": m.mean_served_top1,
        }
    return out


# --- timeline serialization ----------------------------------------------------


def format_timeline(timeline: Sequence[TimelineRecord]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(TIMELINE_HEADER)
    for r in timeline:
        w.writerow((
            repr(r.t_s), r.subnet, r.device, repr(r.freq_hz),
            "" if r.latency_ms is None else repr(r.latency_ms),
            repr(r.target_ms), "true" if r.feasible else "false",
            repr(r.temp_c), repr(r.alpha), repr(r.power_w),
            "true" if r.disturbed else "false",
        ))
    return out.getvalue()


def parse_timeline(text: str) -> list[TimelineRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != TIMELINE_HEADER:
        raise ValueError(f"timeline: expected header {','.join(TIMELINE_HEADER)}")
    out = []
    for row in rows[1:]:
        t, subnet, device, f, lat, target, feasible, temp, alpha, power, disturbed = row
        out.append(
            TimelineRecord(
                float(t), subnet, device, float(f), None if lat == "" else float(lat),
                float(target), feasible == "true", float(temp), float(alpha), float(power),
                disturbed == "true",
            )
        )
    return out
