"""Independent reference computations used to check the package.

Nothing here imports the selection, Pareto or simulation code it checks; the
oracles work from the raw profile rows with plain loops or dense numpy.
"""

from __future__ import annotations

import math

import numpy as np


def raw_rows(pset):
    """{(subnet, device, freq_hz): (latency_ms, busy_power_w)} straight from the table."""
    return {(e.subnet, e.device, e.freq_hz): (e.latency_ms, e.busy_power_w) for e in pset.entries}


def raw_points(pset, platform, alpha=1.0, cap=None):
    """Every (subnet, device, idx) whose frequency is profiled, with lat/power/energy/top1."""
    rows = raw_rows(pset)
    top1 = {a.subnet: a.top1 for a in pset.accuracies}
    out = []
    for (subnet, device, f), (lat, power) in rows.items():
        dev = next(d for d in platform.devices if d.id == device)
        idx = [lv.freq_hz for lv in dev.freq_table].index(f)
        if cap is not None and idx > cap:
            continue
        eff = lat / alpha
        out.append(
            dict(subnet=subnet, device=device, idx=idx, lat=eff, power=power,
                 energy=power * eff, top1=top1[subnet])
        )
    return out


def _better_objective(a, b):
    """True when a beats b: accuracy up, energy down, idx down, device, subnet."""
    if a["top1"] != b["top1"]:
        return a["top1"] > b["top1"]
    if a["energy"] != b["energy"]:
        return a["energy"] < b["energy"]
    if a["idx"] != b["idx"]:
        return a["idx"] < b["idx"]
    if a["device"] != b["device"]:
        return a["device"] < b["device"]
    return a["subnet"] < b["subnet"]


def _better_latency(a, b):
    for key, lower in (("lat", True), ("energy", True), ("idx", True), ("device", True), ("subnet", True)):
        if a[key] != b[key]:
            return a[key] < b[key]
    return False


def exhaustive_select(pset, platform, target_ms, alpha=1.0, cap=None, min_top1=None, budget=None):
    """Brute-force dynamic selection with no hysteresis.

    Returns ((subnet, device, idx), feasible).
    """
    points = raw_points(pset, platform, alpha, cap)
    best = None
    for p in points:
        if p["lat"] > target_ms:
            continue
        if min_top1 is not None and p["top1"] < min_top1:
            continue
        if budget is not None and p["power"] > budget:
            continue
        if best is None or _better_objective(p, best):
            best = p
    if best is not None:
        return (best["subnet"], best["device"], best["idx"]), True
    fastest = None
    for p in points:
        if fastest is None or _better_latency(p, fastest):
            fastest = p
    return (fastest["subnet"], fastest["device"], fastest["idx"]), False


def dominance_frontier(lat, acc, energy, names):
    """O(n^2) non-dominated filter (latency down, accuracy up) then tie collapse.

    ``names`` are sortable tie-break tuples. Returns indices ordered by latency.
    """
    lat = np.asarray(lat, dtype=float)
    acc = np.asarray(acc, dtype=float)
    n = len(lat)
    dominated = np.zeros(n, dtype=bool)
    chunk = 512
    for start in range(0, n, chunk):
        li = lat[start:start + chunk, None]
        ai = acc[start:start + chunk, None]
        le = lat[None, :] <= li
        ge = acc[None, :] >= ai
        strict = (lat[None, :] < li) | (acc[None, :] > ai)
        dominated[start:start + chunk] = (le & ge & strict).any(axis=1)
    survivors = [i for i in range(n) if not dominated[i]]
    groups = {}
    for i in survivors:
        key = (lat[i], acc[i])
        j = groups.get(key)
        if j is None or (energy[i], names[i]) < (energy[j], names[j]):
            groups[key] = i
    return sorted(groups.values(), key=lambda i: lat[i])


def thermal_closed_form(t0, power_w, r_th, c_th, t_ambient, t_s):
    steady = t_ambient + power_w * r_th
    return steady + (t0 - steady) * math.exp(-t_s / (r_th * c_th))


def replay_periodic_energy(platform, phases, period_s):
    """Energy (J) of periodic requests under piecewise-constant operating points.

    ``phases`` is a list of (duration_s, device, freq_idx, latency_ms,
    busy_power_w): each request runs at busy power on its device, the device
    idles at the chosen level otherwise, every other device idles at its
    lowest level. Requests must finish inside their own period.
    """
    total = 0.0
    for duration, device, idx, lat_ms, busy in phases:
        n = round(duration / period_s)
        others = sum(d.freq_table[0].idle_power_w for d in platform.devices if d.id != device)
        dev = next(d for d in platform.devices if d.id == device)
        idle = dev.freq_table[idx].idle_power_w
        busy_s = lat_ms / 1000.0
        assert busy_s < period_s
        total += n * (busy_s * (max(busy, idle) + others) + (period_s - busy_s) * (idle + others))
    return total
