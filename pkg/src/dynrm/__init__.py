"""Runtime manager that jointly picks dynamic-DNN sub-networks and DVFS operating points."""

from .governor import (
    Constraints,
    Decision,
    PerformanceTarget,
    Rationale,
    energy_per_inference,
    feasible_points,
    select_dynamic,
    select_performance_baseline,
    select_schedutil_baseline,
)
from .platform import (
    DeviceKind,
    DeviceSpec,
    FreqLevel,
    Platform,
    PlatformState,
    ThermalParams,
    effective_latency,
    platform_power,
    step_thermal,
    update_throttle,
)
from .profiles import (
    GeneratorSpec,
    OperatingPoint,
    ParetoPoint,
    ProfileSet,
    build_pareto,
    gen_synthetic,
    load_profiles,
    predict_latency,
)
from .simulator import Event, EventKind, Metrics, Scenario, apply_event, load_scenario, run, summarize

__version__ = "0.1.0"
