from __future__ import annotations

import json
import random
import tempfile
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import THERMAL, make_device
from dynrm.platform import Platform
from dynrm.profiles import (
    AccuracyEntry,
    GeneratorError,
    OperatingPoint,
    ParetoPoint,
    ProfileEntry,
    ProfileFormatError,
    ProfileSet,
    ProfileValidationError,
    build_pareto,
    format_profiles,
    gen_synthetic,
    load_profiles,
    parse_generator_spec,
    parse_profiles,
    pareto_sweep,
    predict_busy_power,
    predict_latency,
    save_profiles,
    validate_profiles,
)
from instances import random_instance
from oracles import dominance_frontier, raw_points

DATA = Path(__file__).parent / "data"
GENERATOR = Path(__file__).parents[1] / "src" / "dynrm" / "scenarios" / "generator.json"


def two_by_two_platform():
    return Platform((make_device("cpu", [1e9, 2e9]), make_device("gpu", [5e8, 1e9])), THERMAL)


def write_tables(tmp_path, rows, accs):
    prof = tmp_path / "profiles.csv"
    prof.write_text("subnet,device,freq_hz,latency_ms,busy_power_w\n" + "".join(r + "\n" for r in rows))
    (tmp_path / "accuracy.csv").write_text("subnet,top1\n" + "".join(a + "\n" for a in accs))
    return prof


def happy_rows():
    rows = []
    for i, s in enumerate(["a", "b", "c"]):
        for dev, freqs in (("cpu", (1e9, 2e9)), ("gpu", (5e8, 1e9))):
            for j, f in enumerate(freqs):
                rows.append(f"{s},{dev},{f},{10 + 5 * i - 3 * j},{1 + i}")
    return rows


class TestLoad:
    def test_happy_path(self, tmp_path):
        prof = write_tables(tmp_path, happy_rows(), ["a,70", "b,72.5", "c,75"])
        pset = load_profiles(prof, two_by_two_platform())
        assert len(pset.entries) == 12 and len(pset.accuracies) == 3

    def test_unknown_device_is_named(self, tmp_path):
        rows = happy_rows() + ["a,npu0,1000000000.0,5,1"]
        prof = write_tables(tmp_path, rows, ["a,70", "b,72.5", "c,75"])
        with pytest.raises(ProfileValidationError, match="npu0"):
            load_profiles(prof, two_by_two_platform())

    def test_duplicate_key_is_cited(self, tmp_path):
        rows = happy_rows() + [happy_rows()[0]]
        prof = write_tables(tmp_path, rows, ["a,70", "b,72.5", "c,75"])
        with pytest.raises(ProfileValidationError, match=r"duplicate key \(subnet=a, device=cpu"):
            load_profiles(prof, two_by_two_platform())

    def test_every_violation_is_listed(self, tmp_path):
        rows = happy_rows() + ["d,cpu,1000000000.0,0,1", "a,cpu,3000000000.0,4,1"]
        prof = write_tables(tmp_path, rows, ["a,70", "b,72.5", "c,75"])
        with pytest.raises(ProfileValidationError) as info:
            load_profiles(prof, two_by_two_platform())
        text = "\n".join(info.value.violations)
        assert "non-positive latency" in text
        assert "missing accuracy for subnet 'd'" in text
        assert "not in the frequency table" in text

    def test_malformed_number(self, tmp_path):
        prof = write_tables(tmp_path, ["a,cpu,fast,10,1"], ["a,70"])
        with pytest.raises(ProfileFormatError, match="not a number"):
            load_profiles(prof, two_by_two_platform())

    def test_wrong_header(self, tmp_path):
        prof = tmp_path / "profiles.csv"
        prof.write_text("subnet,device,latency\n")
        (tmp_path / "accuracy.csv").write_text("subnet,top1\n")
        with pytest.raises(ProfileFormatError, match="header"):
            load_profiles(prof, two_by_two_platform())

    def test_accuracy_out_of_range(self):
        pset = ProfileSet((), (AccuracyEntry("a", 101.0),))
        assert any("outside [0, 100]" in v for v in validate_profiles(pset))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_save_load_round_trip(self, seed):
        rng = random.Random(seed)
        platform, pset = random_instance(rng)
        with tempfile.TemporaryDirectory() as d:
            path = Path(d) / "profiles.csv"
            save_profiles(pset, path)
            assert load_profiles(path, platform) == pset


class TestPredictLatency:
    @pytest.fixture
    def pset(self):
        entries = (ProfileEntry("s", "d", 1e9, 20.0, 2.0), ProfileEntry("s", "d", 2e9, 12.0, 4.0))
        return ProfileSet(entries, (AccuracyEntry("s", 70.0),))

    def test_exact_hit_is_verbatim(self):
        pset = ProfileSet((ProfileEntry("s", "d", 1.4e9, 9.87654321, 1.0),), (AccuracyEntry("s", 1.0),))
        assert predict_latency(pset, "s", "d", 1.4e9) == 9.87654321

    def test_midpoint_in_inverse_frequency(self, pset):
        # 1/f = 0.75 /GHz is midway between 1.0 and 0.5
        assert predict_latency(pset, "s", "d", 4e9 / 3) == pytest.approx(16.0, rel=1e-12)

    def test_clamp_and_scale_below_range(self, pset):
        assert predict_latency(pset, "s", "d", 5e8) == pytest.approx(40.0, rel=1e-12)

    def test_clamp_and_scale_above_range(self, pset):
        assert predict_latency(pset, "s", "d", 4e9) == pytest.approx(6.0, rel=1e-12)

    def test_unknown_pair(self, pset):
        with pytest.raises(KeyError):
            predict_latency(pset, "s", "npu", 1e9)

    def test_power_interpolates_in_frequency(self, pset):
        assert predict_busy_power(pset, "s", "d", 1.5e9) == pytest.approx(3.0)
        assert predict_busy_power(pset, "s", "d", 5e9) == 4.0

    @settings(max_examples=80, deadline=None)
    @given(
        lats=st.lists(st.floats(1.0, 100.0), min_size=2, max_size=6),
        q=st.floats(0.05, 10.0),
    )
    def test_continuous_and_monotone(self, lats, q):
        lats = sorted(lats, reverse=True)  # non-increasing in frequency
        freqs = [1e9 * (i + 1) for i in range(len(lats))]
        pset = ProfileSet(
            tuple(ProfileEntry("s", "d", f, l, 1.0) for f, l in zip(freqs, lats)),
            (AccuracyEntry("s", 50.0),),
        )
        grid = sorted({0.3e9, *freqs, q * 1e9, q * 1e9 * 1.01, 7e9})
        values = [predict_latency(pset, "s", "d", f) for f in grid]
        assert all(b <= a * (1 + 1e-12) for a, b in zip(values, values[1:]))
        for f, l in zip(freqs, lats):
            for side in (f * (1 - 1e-9), f * (1 + 1e-9)):
                assert predict_latency(pset, "s", "d", side) == pytest.approx(l, rel=1e-6)


def pp(lat, top1, energy=1.0, subnet="s"):
    return ParetoPoint(OperatingPoint(subnet, "d", 0), lat, top1, energy)


class TestPareto:
    def test_strict_dominance(self):
        front = pareto_sweep([pp(10, 70), pp(20, 60)])
        assert [(p.latency_ms, p.top1) for p in front] == [(10, 70)]

    def test_empty(self):
        assert build_pareto(ProfileSet((), ()), two_by_two_platform()) == []

    def test_ties_keep_lower_energy_then_name(self):
        front = pareto_sweep([pp(10, 70, 3.0, "a"), pp(10, 70, 2.0, "z"), pp(10, 70, 2.0, "b")])
        assert len(front) == 1 and front[0].point.subnet == "b"

    def test_twenty_random_points_match_oracle(self):
        rng = random.Random(20)
        pts = [pp(rng.choice([5, 10, 15, 20, 25]), rng.choice([60, 65, 70, 75]), rng.random(), f"s{i:02d}") for i in range(20)]
        expected = dominance_frontier(
            [p.latency_ms for p in pts], [p.top1 for p in pts], [p.energy_mj for p in pts],
            [(p.point.subnet,) for p in pts],
        )
        assert pareto_sweep(pts) == [pts[i] for i in expected]

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_sound_and_minimal(self, seed):
        platform, pset = random_instance(random.Random(seed))
        alpha = random.Random(seed).uniform(0.2, 1.0)
        front = build_pareto(pset, platform, alpha)
        for a in front:
            for b in front:
                if a is not b:
                    assert not (a.latency_ms <= b.latency_ms and a.top1 >= b.top1)
        for p in raw_points(pset, platform, alpha):
            assert any(f.latency_ms <= p["lat"] and f.top1 >= p["top1"] for f in front)
        lats = [p.latency_ms for p in front]
        accs = [p.top1 for p in front]
        assert lats == sorted(set(lats)) and accs == sorted(set(accs))

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_matches_dominance_oracle(self, seed):
        platform, pset = random_instance(random.Random(seed))
        pts = raw_points(pset, platform)
        idx = dominance_frontier(
            [p["lat"] for p in pts], [p["top1"] for p in pts], [p["energy"] for p in pts],
            [(p["subnet"], p["device"], p["idx"]) for p in pts],
        )
        expected = [(pts[i]["subnet"], pts[i]["device"], pts[i]["idx"]) for i in idx]
        got = [(p.point.subnet, p.point.device, p.point.freq_idx) for p in build_pareto(pset, platform)]
        assert got == expected


def load_generator(subnets=None):
    doc = json.loads(GENERATOR.read_text())
    if subnets is not None:
        doc["subnets"] = subnets
    return parse_generator_spec(doc)


class TestGenerator:
    def test_same_seed_is_identical(self):
        spec = load_generator()
        a, b = gen_synthetic(7, spec), gen_synthetic(7, spec)
        assert a == b and format_profiles(a) == format_profiles(b)

    def test_seeds_differ(self):
        spec = load_generator()
        assert gen_synthetic(1, spec) != gen_synthetic(2, spec)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**63), n=st.integers(1, 12))
    def test_ordering_enforced(self, seed, n):
        spec = load_generator(n)
        pset = gen_synthetic(seed, spec)
        assert validate_profiles(pset, Platform(spec.devices, THERMAL)) == []
        names = pset.subnets
        tops = [pset.top1(s) for s in names]
        assert all(a < b for a, b in zip(tops, tops[1:]))
        assert all(spec.top1[0] < t < spec.top1[1] for t in tops)
        for d in spec.devices:
            for level in d.freq_table:
                lats = [predict_latency(pset, s, d.id, level.freq_hz) for s in names]
                assert all(a < b for a, b in zip(lats, lats[1:]))
            for s in names:
                curve = [predict_latency(pset, s, d.id, lv.freq_hz) for lv in d.freq_table]
                assert all(a > b for a, b in zip(curve, curve[1:]))

    def test_seed42_golden(self):
        spec = parse_generator_spec(json.loads((DATA / "golden_seed42" / "spec.json").read_text()))
        prof, acc = format_profiles(gen_synthetic(42, spec))
        assert prof == (DATA / "golden_seed42" / "profiles.csv").read_text()
        assert acc == (DATA / "golden_seed42" / "accuracy.csv").read_text()
        tops = [float(line.split(",")[1]) for line in acc.splitlines()[1:]]
        assert tops == [73.60272825400745, 75.26274808508253, 77.71329605073647]

    def test_generated_files_load_cleanly(self, tmp_path):
        spec = load_generator()
        pset = gen_synthetic(3, spec)
        save_profiles(pset, tmp_path / "profiles.csv")
        platform = Platform(spec.devices, THERMAL)
        assert load_profiles(tmp_path / "profiles.csv", platform) == pset

    @pytest.mark.parametrize("field, value", [("subnets", 0), ("devices", []), ("power_w", [5, 1])])
    def test_degenerate_spec(self, field, value):
        doc = json.loads(GENERATOR.read_text())
        doc[field] = value
        with pytest.raises((GeneratorError, ValueError)):
            parse_generator_spec(doc)

    def test_unknown_key(self):
        doc = json.loads(GENERATOR.read_text())
        doc["subnet_count"] = 3
        with pytest.raises(ValueError, match="subnet_count"):
            parse_generator_spec(doc)


def test_parse_tolerates_blank_lines():
    pset = parse_profiles("subnet,device,freq_hz,latency_ms,busy_power_w\na,d,1,2,3\n\n", "subnet,top1\na,50\n")
    assert len(pset.entries) == 1
