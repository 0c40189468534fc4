"""Command-line front end: ``simulate``, ``pareto`` and ``gen-profiles``."""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional, Sequence

from .config import ConfigError, dump_json, read_json
from .governor import GOVERNORS
from .platform import Platform, PlatformError, parse_platform
from .profiles import (
    _PLACEHOLDER_THERMAL,
    GeneratorError,
    ProfileFormatError,
    ProfileSet,
    ProfileValidationError,
    build_pareto,
    format_pareto,
    format_profiles,
    gen_synthetic,
    load_profiles,
    parse_generator_spec,
    validate_profiles,
)
from .simulator import Metrics, Scenario, format_timeline, knob_attribution, load_scenario, run

log = logging.getLogger("dynrm")

EXIT_OK = 0
EXIT_IO = 1
EXIT_INVALID = 2

REPORTS = ("summary", "timeline", "pareto")
DEFAULT_REFERENCE = "performance"

_INVALID = (ConfigError, ProfileFormatError, ProfileValidationError, GeneratorError, PlatformError, ValueError, KeyError)


def bundled_scenario(name: str) -> Optional[Path]:
    """Path of a scenario shipped with the package, by file name (``phases.json``)."""
    ref = resources.files("dynrm") / "scenarios" / name
    return Path(str(ref)) if ref.is_file() else None


def resolve_scenario(path: str) -> Path:
    p = Path(path)
    if p.exists():
        return p
    bundled = bundled_scenario(p.name) or bundled_scenario(p.name + ".json")
    return bundled if bundled is not None else p


def _pct(ref: float, x: float) -> Optional[float]:
    return None if ref == 0 else (ref - x) / ref * 100.0


def comparison_deltas(metrics: Mapping[str, Metrics], reference: str) -> dict:
    """Per-governor deltas against ``reference``; percentages are (ref - x) / ref * 100."""
    ref = metrics[reference]
    out = {}
    for name, m in metrics.items():
        out[name] = {
            "energy_pct": _pct(ref.total_energy_j, m.total_energy_j),
            "energy_post_warmup_pct": _pct(ref.energy_post_warmup_j, m.energy_post_warmup_j),
            "mean_latency_pct": _pct(ref.mean_latency_ms, m.mean_latency_ms),
            "miss_rate_diff": m.deadline_miss_rate - ref.deadline_miss_rate,
            "served_top1_diff": m.mean_served_top1 - ref.mean_served_top1,
        }
    return out


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    log.info("wrote %s", path)


def cmd_simulate(args: argparse.Namespace) -> int:
    scenario_path = resolve_scenario(args.scenario)
    scenario = load_scenario(scenario_path)
    governors = list(dict.fromkeys(args.governor or ["dynamic"]))
    reports = set(args.report or ("summary", "timeline"))
    if len(governors) > 1 and args.reference not in governors:
        log.error("reference governor %r is not among the simulated governors %s", args.reference, governors)
        return EXIT_INVALID
    profiles = scenario.profiles.load(scenario.platform, args.seed)
    out = Path(args.out)

    results = {}
    for name in governors:
        result = run(scenario, name, profiles)
        results[name] = result.metrics
        log.info(
            "%s: energy %.3f J, miss rate %.4f, served top-1 %.3f%%",
            name, result.metrics.total_energy_j, result.metrics.deadline_miss_rate,
            result.metrics.mean_served_top1,
        )
        if "summary" in reports:
            summary = {
                "governor": name,
                "scenario": str(args.scenario),
                "profiles": profiles.provenance,
                "metrics": result.metrics.to_dict(),
            }
            _write(out / name / "summary.json", dump_json(summary))
        if "timeline" in reports:
            _write(out / name / "timeline.csv", format_timeline(result.timeline))

    if "pareto" in reports:
        frontier = build_pareto(profiles, scenario.platform, scenario.alpha)
        _write(out / "pareto.csv", format_pareto(frontier, scenario.platform))
    if len(governors) > 1:
        doc = {
            "reference": args.reference,
            "metrics": {k: m.to_dict() for k, m in results.items()},
            "deltas": comparison_deltas(results, args.reference),
        }
        if "dynamic" in governors:
            doc["attribution"] = knob_attribution(scenario, profiles)
        _write(out / "comparison.json", dump_json(doc))
    return EXIT_OK


def _platform_from_args(args: argparse.Namespace, scenario: Optional[Scenario]) -> Platform:
    if args.platform:
        doc = read_json(args.platform)
        # a scenario file is accepted in place of a bare platform file
        return parse_platform(doc["platform"] if isinstance(doc, Mapping) and "platform" in doc else doc)
    if scenario is not None:
        return scenario.platform
    if args.spec:
        doc = read_json(args.spec)
        if isinstance(doc, Mapping) and "devices" in doc:
            return parse_platform({"devices": doc["devices"], "thermal": _PLACEHOLDER_THERMAL})
    raise ConfigError("pareto needs a platform: pass --platform, --scenario or a --spec with devices")


def _pareto_profiles(args: argparse.Namespace, platform: Platform, scenario: Optional[Scenario]) -> ProfileSet:
    if args.profiles:
        return load_profiles(args.profiles, platform, args.accuracy)
    if args.spec:
        pset = gen_synthetic(args.seed if args.seed is not None else 0,
                             parse_generator_spec(read_json(args.spec), platform))
        violations = validate_profiles(pset, platform)
        if violations:
            raise ProfileValidationError(violations)
        return pset
    if scenario is not None:
        return scenario.profiles.load(platform, args.seed)
    raise ConfigError("pareto needs profiles: pass --profiles, --spec or --scenario")


def cmd_pareto(args: argparse.Namespace) -> int:
    scenario = load_scenario(resolve_scenario(args.scenario)) if args.scenario else None
    platform = _platform_from_args(args, scenario)
    profiles = _pareto_profiles(args, platform, scenario)
    alpha = args.alpha if args.alpha is not None else (scenario.alpha if scenario else 1.0)
    frontier = build_pareto(profiles, platform, alpha)
    _write(Path(args.out) / "pareto.csv", format_pareto(frontier, platform))
    log.info("%d frontier points from %d profile rows", len(frontier), len(profiles.entries))
    return EXIT_OK


def cmd_gen_profiles(args: argparse.Namespace) -> int:
    spec = parse_generator_spec(read_json(args.spec))
    seed = args.seed if args.seed is not None else 0
    pset = gen_synthetic(seed, spec)
    prof, acc = format_profiles(pset)
    out = Path(args.out)
    _write(out / "profiles.csv", prof)
    _write(out / "accuracy.csv", acc)
    return EXIT_OK


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="seed for synthetic profiles")
    parser.add_argument("--out", default=argparse.SUPPRESS if suppress else ".", help="output directory")
    parser.add_argument("--quiet", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dynrm",
        description="Joint dynamic-DNN / DVFS runtime manager simulator.",
    )
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="replay a scenario under one or more governors")
    _global_flags(sim, suppress=True)
    sim.add_argument("--scenario", required=True, help="scenario JSON (bundled names such as phases.json also work)")
    sim.add_argument("--governor", action="append", choices=GOVERNORS,
                     help="governor to run; repeat to compare (default: dynamic)")
    sim.add_argument("--reference", default=DEFAULT_REFERENCE, choices=GOVERNORS,
                     help="reference governor for comparison deltas")
    sim.add_argument("--report", action="append", choices=REPORTS,
                     help="reports to write (default: summary and timeline)")
    sim.set_defaults(func=cmd_simulate)

    par = sub.add_parser("pareto", help="export the latency/accuracy frontier")
    _global_flags(par, suppress=True)
    par.add_argument("--profiles", help="profile table CSV")
    par.add_argument("--accuracy", help="accuracy table CSV (default: accuracy.csv beside --profiles)")
    par.add_argument("--spec", help="generator spec JSON, used with --seed instead of --profiles")
    par.add_argument("--platform", help="platform JSON (or a scenario file)")
    par.add_argument("--scenario", help="take platform and profile source from a scenario")
    par.add_argument("--alpha", type=float, help="contention factor in (0, 1]")
    par.set_defaults(func=cmd_pareto)

    gen = sub.add_parser("gen-profiles", help="write synthetic profile and accuracy tables")
    _global_flags(gen, suppress=True)
    gen.add_argument("--spec", required=True, help="generator spec JSON")
    gen.set_defaults(func=cmd_gen_profiles)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except _INVALID as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("cannot write reports: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
