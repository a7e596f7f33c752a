"""Capacity analysis and simulation of WDM PONs modelled as multiserver polling systems."""

from .model import (
    GponFrame,
    OnuConfig,
    PacketLaw,
    PeriodicPolling,
    PoissonArrivals,
    PonConfig,
    QueueConfig,
    QueueTraffic,
    RandomPolling,
    TrafficSpec,
    check,
    single_queue_traffic,
    total_load,
    uniform_config,
    validate,
)
from .analysis import (
    MeanFieldSolution,
    NoSolution,
    RegimeError,
    StabilityReport,
    Verdict,
    classical_stability,
    gpon_frame_stability,
    mean_cycle_time,
    mean_field_stability,
    server_limit_stability,
    solve_mean_field,
    uniform_overhead_stability,
)

__version__ = "0.1.0"
