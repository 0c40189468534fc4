"""Sub-network profiles: latency/power per (subnet, device, frequency) and top-1 accuracy.

Profiles are stored as two flat CSV tables::

    subnet,device,freq_hz,latency_ms,busy_power_w
    subnet,top1

Latency between profiled frequencies is interpolated linearly in 1/f (cycle
time); outside the profiled range the nearest endpoint is scaled by f_end/f.
"""

from __future__ import annotations

import bisect
import csv
import io
import random
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .config import ConfigError, expect_keys
from .platform import DeviceSpec, Platform, effective_latency, parse_platform

PROFILE_HEADER = ("subnet", "device", "freq_hz", "latency_ms", "busy_power_w")
ACCURACY_HEADER = ("subnet", "top1")
PARETO_HEADER = ("latency_ms", "top1", "energy_mj", "subnet", "device", "freq_hz")


class ProfileFormatError(ValueError):
    """A profile table could not be parsed."""


class ProfileValidationError(ValueError):
    """A parsed profile set violates one or more invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__(
            f"{len(self.violations)} profile violation(s):\n  " + "\n  ".join(self.violations)
        )


class GeneratorError(ValueError):
    pass


@dataclass(frozen=True, order=True)
class OperatingPoint:
    """One joint algorithm + hardware choice."""

    subnet: str
    device: str
    freq_idx: int
    cores: int = 1


@dataclass(frozen=True)
class ProfileEntry:
    subnet: str
    device: str
    freq_hz: float
    latency_ms: float
    busy_power_w: float


@dataclass(frozen=True)
class AccuracyEntry:
    subnet: str
    top1: float


@dataclass(frozen=True)
class ParetoPoint:
    point: OperatingPoint
    latency_ms: float
    top1: float
    energy_mj: float


@dataclass(frozen=True)
class _Curve:
    freqs: tuple[float, ...]
    latencies: tuple[float, ...]
    powers: tuple[float, ...]


@dataclass(frozen=True)
class ProfileSet:
    entries: tuple[ProfileEntry, ...]
    accuracies: tuple[AccuracyEntry, ...]
    provenance: str = field(default="", compare=False)

    @cached_property
    def _top1(self) -> dict[str, float]:
        return {a.subnet: a.top1 for a in self.accuracies}

    @cached_property
    def _curves(self) -> dict[tuple[str, str], _Curve]:
        grouped: dict[tuple[str, str], list[ProfileEntry]] = {}
        for e in self.entries:
            grouped.setdefault((e.subnet, e.device), []).append(e)
        curves = {}
        for key, rows in grouped.items():
            rows.sort(key=lambda r: r.freq_hz)
            curves[key] = _Curve(
                tuple(r.freq_hz for r in rows),
                tuple(r.latency_ms for r in rows),
                tuple(r.busy_power_w for r in rows),
            )
        return curves

    @property
    def subnets(self) -> tuple[str, ...]:
        """Subnets in accuracy-table order."""
        return tuple(a.subnet for a in self.accuracies)

    def top1(self, subnet: str) -> float:
        try:
            return self._top1[subnet]
        except KeyError:
            raise KeyError(f"no accuracy for subnet {subnet!r}") from None

    def has_pair(self, subnet: str, device: str) -> bool:
        return (subnet, device) in self._curves

    def curve(self, subnet: str, device: str) -> _Curve:
        try:
            return self._curves[(subnet, device)]
        except KeyError:
            raise KeyError(f"no profile for subnet {subnet!r} on device {device!r}") from None

    def scaled_power(self, factor: float) -> "ProfileSet":
        """Copy with every busy power multiplied by ``factor``."""
        return ProfileSet(
            tuple(
                ProfileEntry(e.subnet, e.device, e.freq_hz, e.latency_ms, e.busy_power_w * factor)
                for e in self.entries
            ),
            self.accuracies,
            self.provenance,
        )


def validate_profiles(pset: ProfileSet, platform: Optional[Platform] = None) -> list[str]:
    """Every invariant violation as a human-readable line (empty when valid)."""
    violations: list[str] = []
    devices = {d.id: d for d in platform.devices} if platform is not None else None
    seen: set[tuple[str, str, float]] = set()
    for i, e in enumerate(pset.entries):
        row = f"row {i + 1}"
        key = (e.subnet, e.device, e.freq_hz)
        if key in seen:
            violations.append(f"{row}: duplicate key (subnet={e.subnet}, device={e.device}, freq_hz={e.freq_hz})")
        seen.add(key)
        if not e.latency_ms > 0:
            violations.append(f"{row}: non-positive latency_ms {e.latency_ms}")
        if not e.busy_power_w > 0:
            violations.append(f"{row}: non-positive busy_power_w {e.busy_power_w}")
        if devices is not None:
            dev = devices.get(e.device)
            if dev is None:
                violations.append(f"{row}: unknown device {e.device!r}")
            elif dev.index_of(e.freq_hz) is None:
                violations.append(f"{row}: freq_hz {e.freq_hz} not in the frequency table of {e.device!r}")
    acc_seen: set[str] = set()
    for a in pset.accuracies:
        if a.subnet in acc_seen:
            violations.append(f"accuracy: duplicate subnet {a.subnet!r}")
        acc_seen.add(a.subnet)
        if not 0.0 <= a.top1 <= 100.0:
            violations.append(f"accuracy: top1 {a.top1} for {a.subnet!r} outside [0, 100]")
    for subnet in sorted({e.subnet for e in pset.entries} - acc_seen):
        violations.append(f"missing accuracy for subnet {subnet!r}")
    return violations


def _float(value: str, where: str) -> float:
    try:
        return float(value)
    except ValueError:
        raise ProfileFormatError(f"{where}: not a number: {value!r}") from None


def _read_table(text: str, header: Sequence[str], where: str) -> list[list[str]]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(c.strip() for c in rows[0]) != tuple(header):
        raise ProfileFormatError(f"{where}: expected header {','.join(header)}")
    body = []
    for n, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ProfileFormatError(f"{where}:{n}: expected {len(header)} fields, got {len(row)}")
        body.append([c.strip() for c in row])
    return body


def parse_profiles(profile_text: str, accuracy_text: str, provenance: str = "") -> ProfileSet:
    entries = []
    for n, (subnet, device, f, lat, p) in enumerate(
        _read_table(profile_text, PROFILE_HEADER, "profiles"), start=2
    ):
        where = f"profiles:{n}"
        entries.append(ProfileEntry(subnet, device, _float(f, where), _float(lat, where), _float(p, where)))
    accs = [
        AccuracyEntry(subnet, _float(top1, f"accuracy:{n}"))
        for n, (subnet, top1) in enumerate(_read_table(accuracy_text, ACCURACY_HEADER, "accuracy"), start=2)
    ]
    return ProfileSet(tuple(entries), tuple(accs), provenance)


def default_accuracy_path(profile_path: Path) -> Path:
    return Path(profile_path).with_name("accuracy.csv")


def load_profiles(
    path: str | Path,
    platform: Optional[Platform],
    accuracy_path: str | Path | None = None,
) -> ProfileSet:
    """Read and validate a profile table plus its accuracy table.

    ``accuracy_path`` defaults to ``accuracy.csv`` next to ``path``.
    Raises ProfileFormatError on malformed text and ProfileValidationError
    listing every violation otherwise.
    """
    path = Path(path)
    accuracy_path = Path(accuracy_path) if accuracy_path is not None else default_accuracy_path(path)
    try:
        profile_text = path.read_text(encoding="utf-8")
        accuracy_text = accuracy_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ProfileFormatError(f"cannot read profiles: {exc}") from exc
    pset = parse_profiles(profile_text, accuracy_text, provenance=str(path))
    violations = validate_profiles(pset, platform)
    if violations:
        raise ProfileValidationError(violations)
    return pset


def format_profiles(pset: ProfileSet) -> tuple[str, str]:
    prof = io.StringIO()
    w = csv.writer(prof, lineterminator="\n")
    w.writerow(PROFILE_HEADER)
    for e in pset.entries:
        w.writerow((e.subnet, e.device, repr(e.freq_hz), repr(e.latency_ms), repr(e.busy_power_w)))
    acc = io.StringIO()
    w = csv.writer(acc, lineterminator="\n")
    w.writerow(ACCURACY_HEADER)
    for a in pset.accuracies:
        w.writerow((a.subnet, repr(a.top1)))
    return prof.getvalue(), acc.getvalue()


def save_profiles(pset: ProfileSet, path: str | Path, accuracy_path: str | Path | None = None) -> None:
    path = Path(path)
    accuracy_path = Path(accuracy_path) if accuracy_path is not None else default_accuracy_path(path)
    prof, acc = format_profiles(pset)
    path.write_text(prof, encoding="utf-8")
    accuracy_path.write_text(acc, encoding="utf-8")


def predict_latency(pset: ProfileSet, subnet: str, device: str, freq_hz: float) -> float:
    """Latency in ms at ``freq_hz``, interpolated linearly in 1/f."""
    c = pset.curve(subnet, device)
    fs, ls = c.freqs, c.latencies
    i = bisect.bisect_left(fs, freq_hz)
    if i < len(fs) and fs[i] == freq_hz:
        return ls[i]
    if i == 0:
        return ls[0] * (fs[0] / freq_hz)
    if i == len(fs):
        return ls[-1] * (fs[-1] / freq_hz)
    x, x_lo, x_hi = 1.0 / freq_hz, 1.0 / fs[i], 1.0 / fs[i - 1]
    # x_lo belongs to the higher frequency fs[i]
    w = (x - x_lo) / (x_hi - x_lo)
    return ls[i] + w * (ls[i - 1] - ls[i])


def predict_busy_power(pset: ProfileSet, subnet: str, device: str, freq_hz: float) -> float:
    """Busy power in W, linear in f between profiled points and held flat outside them."""
    c = pset.curve(subnet, device)
    fs, ps = c.freqs, c.powers
    i = bisect.bisect_left(fs, freq_hz)
    if i < len(fs) and fs[i] == freq_hz:
        return ps[i]
    if i == 0:
        return ps[0]
    if i == len(fs):
        return ps[-1]
    w = (freq_hz - fs[i - 1]) / (fs[i] - fs[i - 1])
    return ps[i - 1] + w * (ps[i] - ps[i - 1])


def point_metrics(
    pset: ProfileSet, platform: Platform, point: OperatingPoint, contention: float
) -> tuple[float, float, float]:
    """(effective latency ms, busy power W, energy per inference mJ) of ``point``."""
    f = platform.device(point.device).freq_hz(point.freq_idx)
    lat = effective_latency(predict_latency(pset, point.subnet, point.device, f), contention)
    power = predict_busy_power(pset, point.subnet, point.device, f)
    return lat, power, power * lat


def enumerate_points(
    pset: ProfileSet, platform: Platform, max_idx: Optional[int] = None
) -> list[OperatingPoint]:
    """All profiled (subnet, device, frequency index) points, optionally index-capped."""
    points = []
    for subnet in pset.subnets:
        for d in platform.devices:
            if not pset.has_pair(subnet, d.id):
                continue
            top = d.max_idx if max_idx is None else min(d.max_idx, max_idx)
            for idx in range(top + 1):
                points.append(OperatingPoint(subnet, d.id, idx, d.core_count))
    return points


def _pareto_key(p: ParetoPoint) -> tuple:
    return (p.latency_ms, -p.top1, p.energy_mj, p.point.subnet, p.point.device, p.point.freq_idx)


def pareto_sweep(candidates: Iterable[ParetoPoint]) -> list[ParetoPoint]:
    """Non-dominated subset in (latency down, accuracy up), ascending latency.

    Points tied on both axes collapse to the lowest-energy one, then the
    lexicographically smallest subnet name.
    """
    frontier: list[ParetoPoint] = []
    best = float("-inf")
    for p in sorted(candidates, key=_pareto_key):
        if p.top1 > best:
            frontier.append(p)
            best = p.top1
    return frontier


def build_pareto(pset: ProfileSet, platform: Platform, contention: float = 1.0) -> list[ParetoPoint]:
    candidates = []
    for point in enumerate_points(pset, platform):
        lat, _, energy = point_metrics(pset, platform, point, contention)
        candidates.append(ParetoPoint(point, lat, pset.top1(point.subnet), energy))
    return pareto_sweep(candidates)


def format_pareto(frontier: Sequence[ParetoPoint], platform: Platform) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(PARETO_HEADER)
    for p in frontier:
        f = platform.device(p.point.device).freq_hz(p.point.freq_idx)
        w.writerow((repr(p.latency_ms), repr(p.top1), repr(p.energy_mj), p.point.subnet, p.point.device, repr(f)))
    return out.getvalue()


def parse_pareto(text: str) -> list[dict]:
    rows = _read_table(text, PARETO_HEADER, "pareto")
    return [
        {
            "latency_ms": float(lat),
            "top1": float(top1),
            "energy_mj": float(e),
            "subnet": subnet,
            "device": device,
            "freq_hz": float(f),
        }
        for lat, top1, e, subnet, device, f in rows
    ]


# --- synthetic profiles -------------------------------------------------------


@dataclass(frozen=True)
class GeneratorSpec:
    subnets: int
    devices: tuple[DeviceSpec, ...]
    base_latency_ms: tuple[float, float]
    power_w: tuple[float, float]
    top1: tuple[float, float] = (60.0, 80.0)

    def __post_init__(self) -> None:
        if self.subnets < 1:
            raise GeneratorError("generator spec needs at least one subnet")
        if not self.devices:
            raise GeneratorError("generator spec needs at least one device")
        for name in ("base_latency_ms", "power_w", "top1"):
            lo, hi = getattr(self, name)
            if not 0 < lo < hi:
                raise GeneratorError(f"{name} must satisfy 0 < lo < hi, got [{lo}, {hi}]")
        if self.top1[1] > 100:
            raise GeneratorError("top1 range must lie within [0, 100]")


GENERATOR_KEYS = {"subnets", "base_latency_ms", "power_w", "top1", "devices"}


def parse_generator_spec(doc: Mapping, platform: Optional[Platform] = None) -> GeneratorSpec:
    """Generator spec from a mapping; ``devices`` may be omitted when a platform is given."""
    required = {"subnets", "base_latency_ms", "power_w"}
    if platform is None:
        required.add("devices")
    expect_keys(doc, "generator", required=required, optional=GENERATOR_KEYS - required)
    if "devices" in doc:
        devices = parse_platform(
            {"devices": doc["devices"], "thermal": _PLACEHOLDER_THERMAL}
        ).devices
    else:
        devices = platform.devices

    def pair(name: str, default=None) -> tuple[float, float]:
        value = doc.get(name, default)
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(f"generator.{name}: expected [lo, hi]")
        return float(value[0]), float(value[1])

    subnets = doc["subnets"]
    if not isinstance(subnets, int) or isinstance(subnets, bool):
        raise ConfigError("generator.subnets: expected an integer")
    return GeneratorSpec(
        subnets=subnets,
        devices=tuple(devices),
        base_latency_ms=pair("base_latency_ms"),
        power_w=pair("power_w"),
        top1=pair("top1", (60.0, 80.0)),
    )


# Devices parsed out of a generator spec carry no thermal section of their own.
_PLACEHOLDER_THERMAL = {"r_th": 1.0, "c_th": 1.0, "t_ambient": 25.0, "t_throttle": 85.0, "throttle_cap": 0}


def _increasing(rng: random.Random, n: int, lo: float, hi: float) -> list[float]:
    """n strictly increasing values strictly inside (lo, hi)."""
    gaps = [rng.uniform(0.5, 1.5) for _ in range(n + 1)]
    total = sum(gaps)
    out, acc = [], 0.0
    for g in gaps[:-1]:
        acc += g
        out.append(lo + (hi - lo) * acc / total)
    return out


def subnet_name(i: int, n: int) -> str:
    return f"subnet-{i:0{len(str(n - 1))}d}"


def gen_synthetic(seed: int, spec: GeneratorSpec) -> ProfileSet:
    """Deterministic synthetic profile set.

    Per device, latency at f is base * (m + (1 - m) * f_max / f) with a
    device-wide frequency-insensitive fraction m, and busy power is the idle
    power of the level plus a dynamic term scaling with V^2 f. Subnet i has
    strictly higher accuracy and latency than subnet i-1 everywhere.
    """
    rng = random.Random(seed)
    n = spec.subnets
    names = [subnet_name(i, n) for i in range(n)]
    top1 = _increasing(rng, n, *spec.top1)
    entries = []
    for dev in spec.devices:
        base = _increasing(rng, n, *spec.base_latency_ms)
        mem_frac = rng.uniform(0.05, 0.3)
        dyn_max = rng.uniform(*spec.power_w)
        top = dev.freq_table[-1]
        for i, name in enumerate(names):
            size = 0.6 + 0.4 * (i + 1) / n
            for level in dev.freq_table:
                ratio = top.freq_hz / level.freq_hz
                lat = base[i] * (mem_frac + (1.0 - mem_frac) * ratio)
                dyn = dyn_max * size * (level.voltage_v / top.voltage_v) ** 2 / ratio
                entries.append(ProfileEntry(name, dev.id, level.freq_hz, lat, level.idle_power_w + dyn))
    accs = tuple(AccuracyEntry(name, a) for name, a in zip(names, top1))
    return ProfileSet(tuple(entries), accs, provenance=f"synthetic:seed={seed}")
