"""Capacity-region probes, convergence sweeps and toy-model checks.

Load space is organised by ONU classes: a ray is a per-class direction
vector and a point on it is ``offset + scale * direction`` (per-ONU loads,
split evenly over each ONU's queues).  Boundaries are reported as the scale.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .analysis import NoSolution, Verdict, mean_field_stability, uniform_overhead_stability
from .model import (
    PacketLaw,
    PonConfig,
    QueueTraffic,
    RandomPolling,
    TrafficSpec,
    uniform_config,
)
from .sim import detect_growth, run
from .sim.report import DEFAULT_GROWTH_THRESHOLD
from .sim.toy import run_homogeneous, tv_from_geometric

log = logging.getLogger(__name__)

WORKERS_ENV = "WDMPON_WORKERS"
DEFAULT_GRANT_TIMES = 1e6
ANALYTIC_RTOL = 1e-10


class ProbeError(RuntimeError):
    """The initial bracket of a boundary search could not be established."""


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


# -- classes of ONUs ------------------------------------------------------------------


@dataclass(frozen=True)
class ClassSpec:
    """A configuration whose ONUs are partitioned into load classes."""

    config: PonConfig
    members: tuple[tuple[int, ...], ...]
    packet_laws: tuple[PacketLaw, ...]  # one per ONU
    names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(tuple(m) for m in self.members))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"class{c + 1}" for c in range(len(self.members))))
        flat = sorted(i for m in self.members for i in m)
        if flat != list(range(self.config.n_onus)):
            raise ValueError("classes must partition the ONUs")
        if len(self.packet_laws) != self.config.n_onus:
            raise ValueError("need one packet law per ONU")

    @property
    def n_classes(self) -> int:
        return len(self.members)

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(m) for m in self.members], dtype=float)

    def class_transmitters(self) -> np.ndarray:
        return np.array([min(self.config.onus[i].transmitters for i in m) for m in self.members], dtype=float)

    def onu_loads(self, class_loads) -> np.ndarray:
        class_loads = np.asarray(class_loads, dtype=float)
        if class_loads.shape != (self.n_classes,):
            raise ValueError(f"expected {self.n_classes} class loads")
        out = np.zeros(self.config.n_onus)
        for c, m in enumerate(self.members):
            out[list(m)] = class_loads[c]
        return out

    def build(self, class_loads) -> TrafficSpec:
        rho = self.onu_loads(class_loads)
        rows = []
        for i, onu in enumerate(self.config.onus):
            share = rho[i] / onu.n_queues
            rows.append(tuple(QueueTraffic.from_intensity(share, self.packet_laws[i]) for _ in range(onu.n_queues)))
        return TrafficSpec(tuple(rows))

    def queues_of(self, classes: Sequence[int]) -> list[tuple[int, int]]:
        return [(i, j) for c in classes for i in self.members[c] for j in range(self.config.onus[i].n_queues)]

    def with_overheads(self, overhead: float) -> "ClassSpec":
        return ClassSpec(self.config.replace_overheads([overhead] * self.config.n_onus), self.members, self.packet_laws, self.names)

    @classmethod
    def classes(
        cls,
        counts: Sequence[int],
        n_wavelengths: int,
        switch_overhead: float = 1.2e-6,
        grant_limit: float = 8e-6,
        packet: PacketLaw = PacketLaw.deterministic(8e-6),
        transmitters: int = 1,
    ) -> "ClassSpec":
        """Single-queue ONUs with common parameters, ``counts[c]`` in class ``c``."""
        n = int(sum(counts))
        config = uniform_config(n, n_wavelengths, switch_overhead, grant_limit, transmitters)
        members, k = [], 0
        for c in counts:
            members.append(tuple(range(k, k + c)))
            k += c
        return cls(config, tuple(members), (packet,) * n)

    @classmethod
    def from_loaded(cls, loaded) -> "ClassSpec":
        """Classes are the ``[group ...]`` sections of a configuration file."""
        laws = tuple(row[0].packet_law for row in loaded.traffic.per_queue)
        return cls(loaded.config, tuple(tuple(m) for m in loaded.group_members()), laws,
                   tuple(g.name for g in loaded.groups))


# -- rays -------------------------------------------------------------------------------


@dataclass
class RayProbe:
    direction: tuple[float, ...]
    boundary_load: float  # scale at the boundary
    bracket: tuple[float, float]  # (stable scale, unstable scale)
    iterations: int
    seeds: tuple[int, ...] = ()
    mode: str = "sim"
    offset: tuple[float, ...] = ()
    history: list[tuple[float, bool]] = field(default_factory=list)  # (scale, unstable)

    def class_loads(self) -> np.ndarray:
        off = np.asarray(self.offset) if self.offset else 0.0
        return off + self.boundary_load * np.asarray(self.direction)


def _check_direction(spec: ClassSpec, direction, offset):
    d = np.asarray(direction, dtype=float)
    if d.shape != (spec.n_classes,):
        raise ValueError(f"direction needs {spec.n_classes} entries")
    if np.any(d < 0) or not np.any(d > 0):
        raise ValueError("direction must be nonnegative with at least one positive entry")
    off = np.zeros(spec.n_classes) if offset is None else np.asarray(offset, dtype=float)
    if off.shape != d.shape or np.any(off < 0):
        raise ValueError("offset must be a nonnegative per-class vector")
    return d, off


def no_overhead_bound(spec: ClassSpec, direction, offset=None) -> float:
    """Largest scale allowed by ``rho_i < t_i`` and, ignoring the offset, ``rho < L``.

    The offset is left out of the total because an overloaded offset class
    only takes its grants, not its load.
    """
    d, off = _check_direction(spec, direction, offset)
    t = spec.class_transmitters()
    pos = d > 0
    per_onu = np.min((t[pos] - off[pos]) / d[pos])
    total = spec.config.n_wavelengths / float(spec.counts @ d)
    return float(min(per_onu, total))


def _monitored(spec, direction, monitor):
    classes = [c for c in range(spec.n_classes) if direction[c] > 0] if monitor is None else list(monitor)
    return classes


def analytic_unstable(spec: ClassSpec, class_loads, monitor_classes, method: str = "mean-field") -> bool:
    traffic = spec.build(class_loads)
    if method == "mean-field":
        try:
            report = mean_field_stability(spec.config, traffic)
        except NoSolution:
            return True
    elif method == "corollary":
        report = uniform_overhead_stability(spec.config, traffic)
    else:
        raise ValueError(f"unknown analytic method {method!r}")
    return any(report.verdict[k] is not Verdict.STABLE for k in spec.queues_of(monitor_classes))


def _bisect(unstable: Callable[[float], bool], lo: float, hi: float, resolution: float, history):
    iterations = 0
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        u = unstable(mid)
        history.append((mid, u))
        if u:
            hi = mid
        else:
            lo = mid
        iterations += 1
    return lo, hi, iterations


def boundary_analytic(
    spec: ClassSpec,
    direction,
    offset=None,
    monitor: Optional[Sequence[int]] = None,
    method: str = "mean-field",
) -> RayProbe:
    """Scale where the first monitored queue stops being stable, by bisection on the analytic verdict."""
    d, off = _check_direction(spec, direction, offset)
    classes = _monitored(spec, d, monitor)
    hi = no_overhead_bound(spec, d, off)
    if not analytic_unstable(spec, off + hi * d, classes, method):
        # the bound itself can round to just inside the region
        hi *= 1 + ANALYTIC_RTOL
        if not analytic_unstable(spec, off + hi * d, classes, method):
            raise ProbeError("analytic verdict is stable at the no-overhead bound")
    history = []
    lo, hi, it = _bisect(lambda s: analytic_unstable(spec, off + s * d, classes, method), 0.0, hi,
                         ANALYTIC_RTOL * hi, history)
    return RayProbe(tuple(d), 0.5 * (lo + hi), (lo, hi), it, (), "analytic", tuple(off), history)


def region_analytic(spec: ClassSpec, directions, offset=None, monitor=None, method: str = "mean-field") -> list[RayProbe]:
    return [boundary_analytic(spec, d, offset, monitor, method) for d in directions]


def default_horizon(spec: ClassSpec, grant_times: float = DEFAULT_GRANT_TIMES) -> float:
    grants = np.concatenate(spec.config.grant_limits())
    return float(grant_times * grants[np.isfinite(grants)].max())


def sim_unstable(
    spec: ClassSpec,
    class_loads,
    monitor_classes,
    seeds: Sequence[int],
    horizon: float,
    warmup: float,
    threshold: float = DEFAULT_GROWTH_THRESHOLD,
    policy=None,
) -> tuple[bool, list[bool]]:
    """Majority verdict of the growth detector over ``seeds``.

    Runs stop as soon as the majority is decided, so the verdict does not
    depend on how many workers are used.
    """
    traffic = spec.build(class_loads)
    monitor = spec.queues_of(monitor_classes)
    need = len(seeds) // 2 + 1

    def one(seed):
        report = run(spec.config, traffic, policy or RandomPolling(), horizon, warmup, seed)
        return detect_growth(report, threshold, monitor)[0]

    votes = []
    if _workers() > 1:
        with ThreadPoolExecutor(_workers()) as pool:
            votes = list(pool.map(one, seeds))
    else:
        for seed in seeds:
            votes.append(one(seed))
            if sum(votes) >= need or len(votes) - sum(votes) >= need:
                break
    return sum(votes) >= need, votes


def probe_boundary_sim(
    spec: ClassSpec,
    direction,
    resolution: Optional[float] = None,
    seeds: Sequence[int] = (0, 1, 2),
    horizon: Optional[float] = None,
    warmup: Optional[float] = None,
    offset=None,
    monitor: Optional[Sequence[int]] = None,
    threshold: float = DEFAULT_GROWTH_THRESHOLD,
    policy=None,
) -> RayProbe:
    """Bisect the scale along ``direction`` between a stable and an unstable simulation.

    Scale 0 leaves the monitored classes unloaded and is taken as stable; the
    upper end starts at the no-overhead bound and must be seen unstable.
    ``resolution`` defaults to 1% of that bound, ``horizon`` to 10^6 grant
    times and ``warmup`` to 10% of the horizon.
    """
    if len(seeds) < 3:
        raise ValueError("a majority verdict needs at least 3 seeds")
    d, off = _check_direction(spec, direction, offset)
    classes = _monitored(spec, d, monitor)
    top = no_overhead_bound(spec, d, off)
    resolution = 0.01 * top if resolution is None else float(resolution)
    horizon = default_horizon(spec) if horizon is None else float(horizon)
    warmup = 0.1 * horizon if warmup is None else float(warmup)
    seeds = tuple(int(s) for s in seeds)

    def unstable(scale):
        verdict, votes = sim_unstable(spec, off + scale * d, classes, seeds, horizon, warmup, threshold, policy)
        log.info("scale %.6g: %s %s", scale, "unstable" if verdict else "stable", votes)
        return verdict

    history = []
    if not unstable(top):
        raise ProbeError(f"no growth detected at the no-overhead bound (scale {top:.6g})")
    history.append((top, True))
    lo, hi, it = _bisect(unstable, 0.0, top, resolution, history)
    return RayProbe(tuple(d), 0.5 * (lo + hi), (lo, hi), it, seeds, "sim", tuple(off), history)


def bisection_steps(span: float, resolution: float) -> int:
    return max(0, math.ceil(math.log2(span / resolution)))


def fraction_rays(n: int) -> list[tuple[float, float]]:
    """``n`` two-class directions evenly spread in angle over the quarter plane."""
    angles = np.linspace(0.0, 0.5 * np.pi, n)
    rays = []
    for a in angles:
        v = np.array([np.cos(a), np.sin(a)])
        v[np.abs(v) < 1e-15] = 0.0
        rays.append(tuple(float(x) for x in v / v.max()))
    return rays


# -- overhead impact -------------------------------------------------------------------


def overhead_impact(
    spec: ClassSpec, overhead_ratios: Sequence[float], directions, grant: Optional[float] = None
) -> dict[float, list[RayProbe]]:
    """One analytic region per overhead-to-grant ratio.

    Every ONU gets ``switch_overhead = ratio * grant`` (``grant`` defaults to
    the largest grant limit).
    """
    if grant is None:
        grant = float(np.concatenate(spec.config.grant_limits()).max())
    return {float(r): region_analytic(spec.with_overheads(r * grant), directions) for r in overhead_ratios}


def regions_nested(family: dict[float, list[RayProbe]], strict: bool = True) -> bool:
    """True when a larger overhead ratio shrinks the boundary on every ray."""
    ratios = sorted(family)
    for a, b in zip(ratios, ratios[1:]):
        for pa, pb in zip(family[a], family[b]):
            if strict and not pb.bracket[1] < pa.bracket[0]:
                return False
            if not strict and pb.boundary_load > pa.boundary_load:
                return False
    return True


# -- convergence of the overhead fraction ------------------------------------------------


@dataclass
class ConvergenceSweep:
    Ns: tuple[int, ...]
    std: tuple[float, ...]  # seed-averaged standard deviation of the windowed overhead fraction
    mean: tuple[float, ...]  # seed-averaged time-average overhead fraction
    per_seed_std: tuple[tuple[float, ...], ...]
    window: float
    load: float
    ratio: float

    def decreasing(self) -> bool:
        return all(b < a for a, b in zip(self.std, self.std[1:]))


def wavelengths_for(n: int, ratio: float) -> int:
    L = n * ratio
    if abs(L - round(L)) > 1e-9 or round(L) < 1:
        raise ValueError(f"L/N = {ratio} gives a non-integer number of wavelengths for N = {n}")
    return int(round(L))


def convergence_sweep(
    Ns: Sequence[int],
    ratio: float = 0.5,
    load: float = 0.2,
    window: float = 1e-3,
    horizon: float = 0.2,
    warmup: float = 0.02,
    seeds: Sequence[int] = (0,),
    switch_overhead: float = 1.2e-6,
    grant_limit: float = 8e-6,
    packet: PacketLaw = PacketLaw.deterministic(8e-6),
) -> ConvergenceSweep:
    """Fluctuation of the fraction of wavelengths in overhead as ``N`` grows."""
    Ls = [wavelengths_for(n, ratio) for n in Ns]
    stds, means, per = [], [], []
    for n, L in zip(Ns, Ls):
        config = uniform_config(n, L, switch_overhead, grant_limit)
        traffic = TrafficSpec.from_intensities([[load]] * n, packet)
        s_seed, m_seed = [], []
        for seed in seeds:
            r = run(config, traffic, RandomPolling(), horizon, warmup, seed, window)
            s_seed.append(float(r.overhead_series.std(ddof=1)))
            m_seed.append(r.mean_overhead_fraction())
        per.append(tuple(s_seed))
        stds.append(float(np.mean(s_seed)))
        means.append(float(np.mean(m_seed)))
    return ConvergenceSweep(tuple(Ns), tuple(stds), tuple(means), tuple(per), window, load, ratio)


# -- toy model ------------------------------------------------------------------------------


@dataclass
class ToyCheck:
    n_queues: int
    n_servers: int
    rho: float
    sup_deviation: tuple[float, ...]
    sup_pass: int
    tv: float
    hitting_times: tuple[float, ...]
    drain_bound: float  # C / (mu s - lam)
    sup_tol: float
    tv_tol: float
    min_pass: int

    @property
    def mean_hitting_time(self) -> float:
        return float(np.mean(self.hitting_times))

    @property
    def sup_ok(self) -> bool:
        return self.sup_pass >= self.min_pass

    @property
    def tv_ok(self) -> bool:
        return self.tv < self.tv_tol

    @property
    def hitting_ok(self) -> bool:
        # every seed hits, and the scaled time respects the bound
        t = np.asarray(self.hitting_times)
        return bool(np.all(np.isfinite(t)) and np.all(t / self.n_queues <= self.drain_bound))

    @property
    def unscaled_hitting_ok(self) -> bool:
        """The stronger reading: the mean drain time itself is within the bound."""
        return bool(self.mean_hitting_time <= self.drain_bound)

    @property
    def passed(self) -> bool:
        return self.sup_ok and self.tv_ok and self.hitting_ok


def verify_toy_meanfield(
    Ns: Sequence[int],
    s: float = 0.5,
    rho: float = 0.3,
    horizon: float = 10.0,
    seeds: Sequence[int] = tuple(range(20)),
    mu: float = 1.0,
    start_level: int = 2,
    sup_tol: float = 0.05,
    tv_tol: float = 0.02,
    pass_fraction: float = 0.9,
) -> list[ToyCheck]:
    """Check the toy model against its independent M/M/1 limit for each ``N``.

    The queue-length marginal is pooled over seeds at the horizon.  The
    overloaded start puts ``start_level`` customers in every queue; its
    drain time is run until the horizon ``max(horizon, 10 * bound)``.
    """
    if not 0 <= rho < s:
        raise ValueError(f"need 0 <= rho < s (got rho={rho}, s={s}): the servers must outnumber the busy queues")
    lam = rho * mu
    bound = start_level / (mu * s - lam)
    out = []
    for n in Ns:
        S = int(round(s * n))
        if S < 1:
            raise ValueError(f"s * N must give at least one server (N={n})")
        devs, finals, hits = [], [], []
        for seed in seeds:
            r = run_homogeneous(n, S, lam, mu, horizon, seed)
            devs.append(r.sup_deviation(rho))
            finals.append(r.final_queues)
            h = run_homogeneous(n, S, lam, mu, max(horizon, 10 * bound), seed, initial=[start_level] * n)
            hits.append(h.hitting_time)
        min_pass = math.ceil(pass_fraction * len(seeds))
        out.append(
            ToyCheck(
                n, S, rho, tuple(devs), int(sum(d < sup_tol for d in devs)),
                tv_from_geometric(np.concatenate(finals), rho), tuple(hits), bound,
                sup_tol, tv_tol, min_pass,
            )
        )
    return out


# -- CSV ------------------------------------------------------------------------------------

RAY_COLUMNS = ["ray", "direction", "offset", "mode", "boundary", "bracket_lo", "bracket_hi", "iterations", "seeds"]


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (tuple, list)):
        return " ".join(_fmt(v) for v in x)
    return str(x)


def _write(path: str, header, rows) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    return path


def write_rays_csv(path: str, probes: Sequence[RayProbe], reference: Optional[Sequence[RayProbe]] = None) -> str:
    """One row per probe; with ``reference`` two columns are added: the
    reference boundary and the relative gap ``(boundary - reference) / reference``."""
    header = list(RAY_COLUMNS)
    if reference is not None:
        header += ["reference", "rel_gap"]
    rows = []
    for k, p in enumerate(probes):
        row = [k, p.direction, p.offset, p.mode, p.boundary_load, p.bracket[0], p.bracket[1], p.iterations, p.seeds]
        if reference is not None:
            ref = reference[k].boundary_load
            row += [ref, (p.boundary_load - ref) / ref]
        rows.append(row)
    return _write(path, header, rows)


def write_convergence_csv(path: str, sweep: ConvergenceSweep) -> str:
    return _write(
        path,
        ["n_onus", "n_wavelengths", "load_per_onu", "window", "std_overhead_fraction", "mean_overhead_fraction"],
        ((n, wavelengths_for(n, sweep.ratio), sweep.load, sweep.window, s, m)
         for n, s, m in zip(sweep.Ns, sweep.std, sweep.mean)),
    )


def write_toy_csv(path: str, checks: Sequence[ToyCheck]) -> str:
    return _write(
        path,
        ["n_queues", "n_servers", "rho", "sup_pass", "seeds", "max_sup_deviation", "tv", "mean_hitting_time",
         "mean_hitting_time_over_n", "drain_bound", "passed"],
        ((c.n_queues, c.n_servers, c.rho, c.sup_pass, len(c.sup_deviation), max(c.sup_deviation), c.tv,
          c.mean_hitting_time, c.mean_hitting_time / c.n_queues, c.drain_bound, c.passed) for c in checks),
    )
