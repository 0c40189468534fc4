"""Device layer: DVFS tables, lumped thermal RC node, throttling and contention."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING, Mapping, Optional

if TYPE_CHECKING:
    from .governor import OperatingPoint


class PlatformError(ValueError):
    """Invalid platform description or state."""


class DeviceKind(str, enum.Enum):
    CPU_CLUSTER = "cpu"
    GPU = "gpu"


@dataclass(frozen=True)
class FreqLevel:
    freq_hz: float
    voltage_v: float
    idle_power_w: float

    def __post_init__(self) -> None:
        if not self.freq_hz > 0:
            raise PlatformError(f"freq_hz must be > 0, got {self.freq_hz}")
        if not self.voltage_v > 0:
            raise PlatformError(f"voltage_v must be > 0, got {self.voltage_v}")
        if not self.idle_power_w >= 0:
            raise PlatformError(f"idle_power_w must be >= 0, got {self.idle_power_w}")


@dataclass(frozen=True)
class DeviceSpec:
    id: str
    kind: DeviceKind
    core_count: int
    freq_table: tuple[FreqLevel, ...]

    def __post_init__(self) -> None:
        if not self.freq_table:
            raise PlatformError(f"device {self.id!r}: empty freq_table")
        for lo, hi in zip(self.freq_table, self.freq_table[1:]):
            if not hi.freq_hz > lo.freq_hz:
                raise PlatformError(f"device {self.id!r}: freq_table not strictly increasing")
            if hi.voltage_v < lo.voltage_v:
                raise PlatformError(f"device {self.id!r}: voltage decreases with frequency")
        if self.core_count < 1:
            raise PlatformError(f"device {self.id!r}: core_count must be >= 1")
        if self.kind is DeviceKind.GPU and self.core_count != 1:
            raise PlatformError(f"device {self.id!r}: a gpu is mapped whole, core_count must be 1")

    @property
    def max_idx(self) -> int:
        return len(self.freq_table) - 1

    def freq_hz(self, idx: int) -> float:
        return self.freq_table[idx].freq_hz

    def index_of(self, freq_hz: float) -> Optional[int]:
        for i, level in enumerate(self.freq_table):
            if level.freq_hz == freq_hz:
                return i
        return None


@dataclass(frozen=True)
class ThermalParams:
    r_th: float
    c_th: float
    t_ambient: float
    t_throttle: float
    t_release: float
    throttle_cap: int

    def __post_init__(self) -> None:
        if not self.r_th > 0:
            raise PlatformError("r_th must be > 0")
        if not self.c_th > 0:
            raise PlatformError("c_th must be > 0")
        if not self.t_release < self.t_throttle:
            raise PlatformError("t_release must be below t_throttle")
        if self.throttle_cap < 0:
            raise PlatformError("throttle_cap must be a non-negative index")

    @property
    def max_dt_s(self) -> float:
        """Largest explicit-Euler step that keeps the RC update monotone."""
        return self.r_th * self.c_th

    def steady_state(self, power_w: float) -> float:
        return self.t_ambient + power_w * self.r_th


@dataclass(frozen=True)
class Platform:
    devices: tuple[DeviceSpec, ...]
    thermal: ThermalParams

    def __post_init__(self) -> None:
        if not self.devices:
            raise PlatformError("platform has no devices")
        ids = [d.id for d in self.devices]
        if len(set(ids)) != len(ids):
            raise PlatformError(f"duplicate device ids in {ids}")
        for d in self.devices:
            if self.thermal.throttle_cap > d.max_idx:
                raise PlatformError(
                    f"throttle_cap {self.thermal.throttle_cap} out of range for device {d.id!r}"
                )

    def device(self, device_id: str) -> DeviceSpec:
        for d in self.devices:
            if d.id == device_id:
                return d
        raise KeyError(device_id)

    @property
    def device_ids(self) -> tuple[str, ...]:
        return tuple(d.id for d in self.devices)

    def initial_state(self, contention: float = 1.0) -> "PlatformState":
        return PlatformState(
            freq_idx={d.id: 0 for d in self.devices},
            temperature=self.thermal.t_ambient,
            contention=contention,
            throttled=False,
        )


@dataclass(frozen=True)
class PlatformState:
    freq_idx: Mapping[str, int]
    temperature: float
    contention: float = 1.0
    throttled: bool = False

    def __post_init__(self) -> None:
        check_contention(self.contention)

    def cap(self, params: ThermalParams) -> Optional[int]:
        return params.throttle_cap if self.throttled else None

    def validate(self, platform: Platform) -> None:
        for d in platform.devices:
            idx = self.freq_idx.get(d.id)
            if idx is None or not 0 <= idx <= d.max_idx:
                raise PlatformError(f"frequency index {idx} invalid for device {d.id!r}")
            if self.throttled and idx > platform.thermal.throttle_cap:
                raise PlatformError(f"device {d.id!r} above throttle cap while throttled")


def check_contention(alpha: float) -> float:
    if not (0.0 < alpha <= 1.0):
        raise PlatformError(f"contention factor must be in (0, 1], got {alpha}")
    return alpha


def step_thermal(state: PlatformState, power_w: float, dt_s: float, params: ThermalParams) -> float:
    """One explicit-Euler step of the lumped RC node; returns the new temperature."""
    if not dt_s > 0:
        raise PlatformError(f"dt_s must be > 0, got {dt_s}")
    if dt_s > params.max_dt_s:
        raise PlatformError(
            f"dt_s={dt_s} exceeds the stability guard r_th*c_th={params.max_dt_s}; "
            "reduce the scenario timestep"
        )
    if not power_w >= 0:
        raise PlatformError(f"power_w must be >= 0, got {power_w}")
    t = state.temperature
    t_next = t + dt_s * (power_w / params.c_th - (t - params.t_ambient) / (params.r_th * params.c_th))
    if not math.isfinite(t_next):
        raise PlatformError("temperature diverged")
    return t_next


def update_throttle(state: PlatformState, params: ThermalParams) -> PlatformState:
    if state.temperature >= params.t_throttle:
        capped = {k: min(v, params.throttle_cap) for k, v in state.freq_idx.items()}
        return replace(state, throttled=True, freq_idx=capped)
    if state.throttled and state.temperature <= params.t_release:
        return replace(state, throttled=False)
    return state


def effective_latency(base_ms: float, contention: float) -> float:
    if not base_ms > 0:
        raise PlatformError(f"base latency must be > 0, got {base_ms}")
    return base_ms / check_contention(contention)


def platform_power(
    platform: Platform,
    state: PlatformState,
    active: Optional["OperatingPoint"] = None,
    busy_power_w: Optional[float] = None,
) -> float:
    """Instantaneous platform power.

    Every device contributes its idle power at its current frequency; while a
    request executes, the busy power replaces the active device's idle term.
    """
    if (active is None) != (busy_power_w is None):
        raise PlatformError("busy_power_w is supplied exactly when a point is active")
    if busy_power_w is not None and not busy_power_w >= 0:
        raise PlatformError(f"busy_power_w must be >= 0, got {busy_power_w}")
    total = 0.0
    for d in platform.devices:
        idle = d.freq_table[state.freq_idx[d.id]].idle_power_w
        if active is not None and active.device == d.id:
            total += max(busy_power_w, idle)
        else:
            total += idle
    return total


def parse_platform(doc: Mapping) -> Platform:
    """Build a Platform from its config-file mapping (``devices`` + ``thermal``)."""
    from .config import expect_keys

    expect_keys(doc, "platform", required={"devices", "thermal"})
    devices = []
    for i, d in enumerate(doc["devices"]):
        where = f"platform.devices[{i}]"
        expect_keys(d, where, required={"id", "kind", "cores", "freqs"})
        levels = []
        for j, f in enumerate(d["freqs"]):
            expect_keys(f, f"{where}.freqs[{j}]", required={"hz", "volts", "idle_w"})
            levels.append(FreqLevel(float(f["hz"]), float(f["volts"]), float(f["idle_w"])))
        try:
            kind = DeviceKind(d["kind"])
        except ValueError:
            raise PlatformError(f"{where}.kind must be one of {[k.value for k in DeviceKind]}") from None
        devices.append(DeviceSpec(str(d["id"]), kind, int(d["cores"]), tuple(levels)))
    th = doc["thermal"]
    expect_keys(
        th, "platform.thermal",
        required={"r_th", "c_th", "t_ambient", "t_throttle", "throttle_cap"},
        optional={"t_release"},
    )
    t_throttle = float(th["t_throttle"])
    thermal = ThermalParams(
        r_th=float(th["r_th"]),
        c_th=float(th["c_th"]),
        t_ambient=float(th["t_ambient"]),
        t_throttle=t_throttle,
        t_release=float(th.get("t_release", t_throttle - DEFAULT_HYSTERESIS_C)),
        throttle_cap=int(th["throttle_cap"]),
    )
    return Platform(tuple(devices), thermal)


def platform_to_doc(platform: Platform) -> dict:
    return {
        "devices": [
            {
                "id": d.id,
                "kind": d.kind.value,
                "cores": d.core_count,
                "freqs": [
                    {"hz": f.freq_hz, "volts": f.voltage_v, "idle_w": f.idle_power_w}
                    for f in d.freq_table
                ],
            }
            for d in platform.devices
        ],
        "thermal": {
            "r_th": platform.thermal.r_th,
            "c_th": platform.thermal.c_th,
            "t_ambient": platform.thermal.t_ambient,
            "t_throttle": platform.thermal.t_throttle,
            "t_release": platform.thermal.t_release,
            "throttle_cap": platform.thermal.throttle_cap,
        },
    }


DEFAULT_HYSTERESIS_C = 5.0
