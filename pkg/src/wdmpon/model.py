"""Domain types for a WDM PON seen as a multiserver polling system.

Wavelengths are the servers; ONUs are the stations.  Every service quantity
is a transmission time in seconds on one wavelength, so intensities are
dimensionless and expressed in units of one wavelength's bit rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DETERMINISTIC = "deterministic"
EXPONENTIAL = "exponential"
PACKET_LAWS = (DETERMINISTIC, EXPONENTIAL)


@dataclass(frozen=True)
class QueueConfig:
    grant_limit: float
    weight: float = 1.0


@dataclass(frozen=True)
class OnuConfig:
    transmitters: int
    switch_overhead: float
    queues: tuple[QueueConfig, ...]

    def __post_init__(self):
        object.__setattr__(self, "queues", tuple(self.queues))

    @property
    def n_queues(self) -> int:
        return len(self.queues)


@dataclass(frozen=True)
class PonConfig:
    n_wavelengths: int
    onus: tuple[OnuConfig, ...]

    def __post_init__(self):
        object.__setattr__(self, "onus", tuple(self.onus))

    @property
    def n_onus(self) -> int:
        return len(self.onus)

    @property
    def queue_shape(self) -> tuple[int, ...]:
        return tuple(o.n_queues for o in self.onus)

    @property
    def transmitters(self) -> np.ndarray:
        return np.array([o.transmitters for o in self.onus], dtype=np.int64)

    @property
    def switch_overheads(self) -> np.ndarray:
        return np.array([o.switch_overhead for o in self.onus], dtype=float)

    def grant_limits(self) -> list[np.ndarray]:
        return [np.array([q.grant_limit for q in o.queues], dtype=float) for o in self.onus]

    def replace_overheads(self, overheads: Sequence[float]) -> "PonConfig":
        onus = tuple(
            OnuConfig(o.transmitters, float(d), o.queues) for o, d in zip(self.onus, overheads)
        )
        return PonConfig(self.n_wavelengths, onus)


@dataclass(frozen=True)
class PoissonArrivals:
    """Poisson packet arrivals, ``rate`` in packets per second."""

    rate: float
    kind: str = field(default="poisson", init=False)


@dataclass(frozen=True)
class PacketLaw:
    """Packet transmission-time law; ``mean`` is in seconds."""

    kind: str
    mean: float

    @classmethod
    def deterministic(cls, seconds: float) -> "PacketLaw":
        return cls(DETERMINISTIC, float(seconds))

    @classmethod
    def exponential(cls, mean: float) -> "PacketLaw":
        return cls(EXPONENTIAL, float(mean))


@dataclass(frozen=True)
class QueueTraffic:
    arrival: PoissonArrivals
    packet_law: PacketLaw

    @property
    def intensity(self) -> float:
        return self.arrival.rate * self.packet_law.mean

    @classmethod
    def from_intensity(cls, rho: float, packet_law: PacketLaw) -> "QueueTraffic":
        """Back-solve the Poisson rate that yields intensity ``rho``."""
        return cls(PoissonArrivals(rho / packet_law.mean), packet_law)


@dataclass(frozen=True)
class TrafficSpec:
    per_queue: tuple[tuple[QueueTraffic, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "per_queue", tuple(tuple(row) for row in self.per_queue))

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(row) for row in self.per_queue)

    def intensities(self) -> list[np.ndarray]:
        return [np.array([q.intensity for q in row], dtype=float) for row in self.per_queue]

    def scaled(self, factor: float) -> "TrafficSpec":
        return TrafficSpec(
            tuple(
                tuple(QueueTraffic(PoissonArrivals(q.arrival.rate * factor), q.packet_law) for q in row)
                for row in self.per_queue
            )
        )

    @classmethod
    def from_intensities(cls, rho: Sequence[Sequence[float]], packet_law: PacketLaw) -> "TrafficSpec":
        return cls(tuple(tuple(QueueTraffic.from_intensity(float(r), packet_law) for r in row) for row in rho))


# -- polling policies ---------------------------------------------------------


@dataclass(frozen=True)
class RandomPolling:
    """Next ONU drawn uniformly among those with a free transmitter.

    ``transmitter_weighted`` draws proportionally to the number of free
    transmitters instead.  ``None`` selects weighting automatically whenever
    some ONU has several transmitters but fewer than the number of
    wavelengths.
    """

    transmitter_weighted: Optional[bool] = None


@dataclass(frozen=True)
class PeriodicPolling:
    """Fixed cyclic visit order per wavelength.

    ``orders`` holds one permutation of ONU indices per wavelength; when
    omitted, distinct random permutations are drawn from the run seed.
    """

    orders: Optional[tuple[tuple[int, ...], ...]] = None


@dataclass(frozen=True)
class GponFrame:
    frame: float
    delta_ratios: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "delta_ratios", tuple(float(x) for x in self.delta_ratios))


PollingPolicy = RandomPolling | PeriodicPolling | GponFrame


# -- validation & derived loads ---------------------------------------------


def validate(config: PonConfig, traffic: Optional[TrafficSpec] = None) -> list[str]:
    """Return every invariant violation as a message; empty when consistent."""
    problems = []
    L = config.n_wavelengths
    if not isinstance(L, (int, np.integer)) or L < 1:
        problems.append(f"number of wavelengths must be a positive integer, got {L!r}")
    if config.n_onus < 1:
        problems.append("at least one ONU is required")
    for i, onu in enumerate(config.onus):
        t = onu.transmitters
        if not isinstance(t, (int, np.integer)) or t < 1:
            problems.append(f"transmitters must be a positive integer at ONU {i}, got {t!r}")
        elif isinstance(L, (int, np.integer)) and t > L:
            problems.append(f"transmitters exceed wavelengths at ONU {i} ({t} > {L})")
        if not _finite_nonneg(onu.switch_overhead):
            problems.append(f"switch overhead must be finite and >= 0 at ONU {i}, got {onu.switch_overhead!r}")
        if onu.n_queues < 1:
            problems.append(f"ONU {i} has no queues")
        for j, q in enumerate(onu.queues):
            if not (q.grant_limit > 0):
                problems.append(f"grant limit must be > 0 at queue ({i}, {j}), got {q.grant_limit!r}")
            if not (q.weight > 0 and math.isfinite(q.weight)):
                problems.append(f"weight must be finite and > 0 at queue ({i}, {j}), got {q.weight!r}")
    if traffic is None:
        return problems
    if traffic.shape != config.queue_shape:
        if len(traffic.shape) != config.n_onus:
            problems.append(
                f"traffic shape mismatch: traffic has {len(traffic.shape)} ONUs, config has {config.n_onus}"
            )
        else:
            for i, (a, b) in enumerate(zip(traffic.shape, config.queue_shape)):
                if a != b:
                    problems.append(f"traffic shape mismatch at ONU {i}: {a} queues vs {b} configured")
    for i, row in enumerate(traffic.per_queue):
        for j, q in enumerate(row):
            if q.arrival.kind != "poisson":
                problems.append(f"unsupported arrival process {q.arrival.kind!r} at queue ({i}, {j})")
            if not _finite_nonneg(q.arrival.rate):
                problems.append(f"arrival rate must be finite and >= 0 at queue ({i}, {j})")
            if q.packet_law.kind not in PACKET_LAWS:
                problems.append(f"unknown packet law {q.packet_law.kind!r} at queue ({i}, {j})")
            if not (q.packet_law.mean > 0 and math.isfinite(q.packet_law.mean)):
                problems.append(f"mean packet time must be finite and > 0 at queue ({i}, {j})")
    return problems


def check(config: PonConfig, traffic: Optional[TrafficSpec] = None) -> None:
    """Raise ``ValueError`` listing all violations, if any."""
    problems = validate(config, traffic)
    if problems:
        raise ValueError("invalid PON configuration:\n  " + "\n  ".join(problems))


def onu_load(traffic: TrafficSpec, i: int) -> float:
    return float(sum(q.intensity for q in traffic.per_queue[i]))


def onu_loads(traffic: TrafficSpec) -> np.ndarray:
    return np.array([onu_load(traffic, i) for i in range(len(traffic.per_queue))], dtype=float)


def total_load(traffic: TrafficSpec) -> float:
    return float(sum(onu_load(traffic, i) for i in range(len(traffic.per_queue))))


def _finite_nonneg(x) -> bool:
    try:
        return math.isfinite(x) and x >= 0
    except TypeError:
        return False


# -- convenience constructors -------------------------------------------------


def uniform_config(
    n_onus: int,
    n_wavelengths: int,
    switch_overhead: float | Sequence[float],
    grant_limit: float,
    transmitters: int | Sequence[int] = 1,
    queues_per_onu: int = 1,
) -> PonConfig:
    """Config where every queue shares one grant limit."""
    overheads = np.broadcast_to(np.asarray(switch_overhead, dtype=float), (n_onus,))
    tx = np.broadcast_to(np.asarray(transmitters, dtype=np.int64), (n_onus,))
    onus = tuple(
        OnuConfig(int(tx[i]), float(overheads[i]), tuple(QueueConfig(grant_limit) for _ in range(queues_per_onu)))
        for i in range(n_onus)
    )
    return PonConfig(int(n_wavelengths), onus)


def single_queue_traffic(loads: Sequence[float], packet_law: PacketLaw) -> TrafficSpec:
    return TrafficSpec.from_intensities([[float(x)] for x in loads], packet_law)
