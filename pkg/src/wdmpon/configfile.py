"""Sectioned key/value configuration files.

Example::

    [pon]
    wavelengths = 10
    line_rate = 1Gbps

    [group class1]
    count = 10
    transmitters = 1
    switch_overhead = 1.2us
    grant_limit = 8us
    packet_size = 1000B
    packet_law = deterministic
    load = 0.43

    [policy]
    kind = random

Schema
------
``[pon]``
    ``wavelengths`` (int, required); ``line_rate`` (e.g. ``1Gbps``), needed
    only when sizes are given in bytes or bits.
``[group NAME]`` (one or more, ONUs numbered in file order)
    ``count`` ONUs sharing ``transmitters`` (default 1), ``switch_overhead``
    (time), ``queues`` (default 1), ``grant_limit`` (time, or one per queue,
    comma separated), ``weight`` (default 1, or one per queue),
    ``packet_size`` (time or bytes) and ``packet_law``
    (``deterministic``/``exponential``), plus traffic as either ``load``
    (intensity per queue) or ``rate`` (packets per second per queue); both
    accept one value or one per queue.  Without traffic the load is 0.
``[policy]`` (optional)
    ``kind`` = ``random`` | ``periodic`` | ``gpon``; ``transmitter_weighted``
    = ``auto`` | ``true`` | ``false``; for ``gpon``: ``frame`` (time) and
    ``delta_ratio`` (one value or one per ONU, default overhead / frame).
``[simulation]`` (optional)
    ``horizon``, ``warmup``, ``window`` (times) and ``seed`` (int).

Times need a unit: ``s``, ``ms``, ``us`` (or ``µs``), ``ns``.  Sizes take
``B``/``bytes``, ``kB`` or ``bit``/``bits``; rates ``bps``, ``kbps``,
``Mbps``, ``Gbps`` (``Gb/s`` also accepted).
"""

from __future__ import annotations

import configparser
import re
from decimal import Decimal
from dataclasses import dataclass, field
from typing import Optional

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
    validate,
)


class ConfigError(ValueError):
    pass


# scale factors are kept decimal so that 1.2us is exactly the literal 1.2e-6
TIME_UNITS = {"s": "1", "ms": "1e-3", "us": "1e-6", "µs": "1e-6", "μs": "1e-6", "ns": "1e-9"}
SIZE_UNITS = {"b": "8", "bytes": "8", "byte": "8", "kb": "8e3", "bit": "1", "bits": "1"}
RATE_UNITS = {"bps": "1", "kbps": "1e3", "mbps": "1e6", "gbps": "1e9", "b/s": "1", "kb/s": "1e3", "mb/s": "1e6", "gb/s": "1e9"}

_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(\S*)\s*$")


def _split(text: str) -> tuple[Decimal, str]:
    m = _NUM.match(text)
    if not m:
        raise ConfigError(f"cannot parse quantity {text!r}")
    return Decimal(m.group(1)), m.group(2)


def parse_time(text: str) -> float:
    value, unit = _split(text)
    if unit not in TIME_UNITS:
        raise ConfigError(f"time {text!r} needs a unit among {sorted(TIME_UNITS)}")
    return float(value * Decimal(TIME_UNITS[unit]))


def parse_rate(text: str) -> float:
    """Line rate in bits per second."""
    value, unit = _split(text)
    if unit.lower() not in RATE_UNITS:
        raise ConfigError(f"line rate {text!r} needs a unit among bps, kbps, Mbps, Gbps")
    return float(value * Decimal(RATE_UNITS[unit.lower()]))


def parse_packet(text: str, line_rate: Optional[float]) -> float:
    """Packet size as transmission time; byte sizes need the line rate."""
    value, unit = _split(text)
    if unit in TIME_UNITS:
        return float(value * Decimal(TIME_UNITS[unit]))
    key = "kb" if unit in ("kB", "KB") else unit.lower() if unit in ("B", "bytes", "byte", "bit", "bits") else None
    if key is None:
        raise ConfigError(f"packet size {text!r} needs a time unit or B/bytes/kB/bits")
    if line_rate is None:
        raise ConfigError(f"packet size {text!r} is in bits/bytes but [pon] has no line_rate")
    return float(value * Decimal(SIZE_UNITS[key]) / Decimal(repr(line_rate)))


def _list(text: str, n: int, parse, what: str) -> list:
    items = [x for x in (s.strip() for s in text.split(",")) if x]
    if len(items) == 1:
        items = items * n
    if len(items) != n:
        raise ConfigError(f"{what}: expected 1 or {n} values, got {len(items)}")
    return [parse(x) for x in items]


def _float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


def _rate(text: str) -> float:
    text = text.strip()
    if text.endswith("/s"):
        text = text[:-2]
    return _float(text)


def _int(section, key, default=None) -> int:
    if key not in section:
        if default is None:
            raise ConfigError(f"[{section.name}] missing required key {key!r}")
        return default
    try:
        return int(section[key])
    except ValueError:
        raise ConfigError(f"[{section.name}] {key} must be an integer, got {section[key]!r}") from None


@dataclass
class Group:
    name: str
    first: int
    count: int


@dataclass
class LoadedConfig:
    config: PonConfig
    traffic: TrafficSpec
    policy: object
    groups: list[Group]
    simulation: dict = field(default_factory=dict)
    line_rate: Optional[float] = None

    def group_members(self) -> list[list[int]]:
        return [list(range(g.first, g.first + g.count)) for g in self.groups]


GROUP_KEYS = {
    "count", "transmitters", "switch_overhead", "queues", "grant_limit", "weight",
    "packet_size", "packet_law", "load", "rate",
}


def loads(text: str) -> LoadedConfig:
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed configuration: {exc}") from None
    if "pon" not in parser:
        raise ConfigError("missing [pon] section")
    pon = parser["pon"]
    L = _int(pon, "wavelengths")
    line_rate = parse_rate(pon["line_rate"]) if "line_rate" in pon else None

    onus, rows, groups = [], [], []
    for name in parser.sections():
        if not name.startswith("group"):
            if name not in ("pon", "policy", "simulation"):
                raise ConfigError(f"unknown section [{name}]")
            continue
        sec = parser[name]
        unknown = set(sec) - GROUP_KEYS
        if unknown:
            raise ConfigError(f"[{name}] unknown keys: {', '.join(sorted(unknown))}")
        count = _int(sec, "count", 1)
        nq = _int(sec, "queues", 1)
        if count < 1 or nq < 1:
            raise ConfigError(f"[{name}] count and queues must be >= 1")
        if "switch_overhead" not in sec or "grant_limit" not in sec:
            raise ConfigError(f"[{name}] needs switch_overhead and grant_limit")
        grants = _list(sec["grant_limit"], nq, parse_time, f"[{name}] grant_limit")
        weights = _list(sec.get("weight", "1"), nq, _float, f"[{name}] weight")
        kind = sec.get("packet_law", "deterministic").strip()
        if kind not in ("deterministic", "exponential"):
            raise ConfigError(f"[{name}] packet_law must be deterministic or exponential, got {kind!r}")
        if "packet_size" not in sec:
            raise ConfigError(f"[{name}] needs packet_size")
        law = PacketLaw(kind, parse_packet(sec["packet_size"], line_rate))
        if "load" in sec and "rate" in sec:
            raise ConfigError(f"[{name}] give either load or rate, not both")
        if "rate" in sec:
            rates = _list(sec["rate"], nq, _rate, f"[{name}] rate")
        else:
            rhos = _list(sec.get("load", "0"), nq, _float, f"[{name}] load")
            rates = [r / law.mean for r in rhos]
        onu = OnuConfig(
            _int(sec, "transmitters", 1),
            parse_time(sec["switch_overhead"]),
            tuple(QueueConfig(g, w) for g, w in zip(grants, weights)),
        )
        row = tuple(QueueTraffic(PoissonArrivals(r), law) for r in rates)
        groups.append(Group(name[len("group"):].strip() or f"g{len(groups)}", len(onus), count))
        onus.extend([onu] * count)
        rows.extend([row] * count)
    if not onus:
        raise ConfigError("no [group ...] sections: at least one ONU is required")
    config = PonConfig(L, tuple(onus))
    traffic = TrafficSpec(tuple(rows))
    problems = validate(config, traffic)
    if problems:
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(problems))

    policy = _policy(parser, config)
    simulation = {}
    if "simulation" in parser:
        sec = parser["simulation"]
        for key in ("horizon", "warmup", "window"):
            if key in sec:
                simulation[key] = parse_time(sec[key])
        if "seed" in sec:
            simulation["seed"] = _int(sec, "seed")
    return LoadedConfig(config, traffic, policy, groups, simulation, line_rate)


def _policy(parser, config: PonConfig):
    if "policy" not in parser:
        return RandomPolling()
    sec = parser["policy"]
    kind = sec.get("kind", "random").strip()
    if kind == "random":
        tw = sec.get("transmitter_weighted", "auto").strip().lower()
        if tw not in ("auto", "true", "false"):
            raise ConfigError("[policy] transmitter_weighted must be auto, true or false")
        return RandomPolling(None if tw == "auto" else tw == "true")
    if kind == "periodic":
        return PeriodicPolling()
    if kind == "gpon":
        if "frame" not in sec:
            raise ConfigError("[policy] gpon needs frame")
        frame = parse_time(sec["frame"])
        if "delta_ratio" in sec:
            ratios = _list(sec["delta_ratio"], config.n_onus, _float, "[policy] delta_ratio")
        else:
            ratios = [o.switch_overhead / frame for o in config.onus]
        return GponFrame(frame, tuple(ratios))
    raise ConfigError(f"[policy] unknown kind {kind!r}")


def load(path: str) -> LoadedConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return loads(text)


def _t(x: float) -> str:
    return f"{x!r}s"


def dumps(config: PonConfig, traffic: TrafficSpec, policy=None, simulation: Optional[dict] = None) -> str:
    """Text form that ``loads`` maps back to identical objects.

    Consecutive identical ONUs share one group; times are written in seconds
    and traffic as exact packet rates.
    """
    out = ["[pon]", f"wavelengths = {config.n_wavelengths}", ""]
    k = 0
    rows = traffic.per_queue
    while k < config.n_onus:
        m = k + 1
        while m < config.n_onus and config.onus[m] == config.onus[k] and rows[m] == rows[k]:
            m += 1
        onu, row = config.onus[k], rows[k]
        laws = {q.packet_law for q in row}
        if len(laws) != 1:
            raise ValueError(f"ONU {k}: queues with different packet laws cannot be written")
        law = laws.pop()
        out += [
            f"[group onu{k}]",
            f"count = {m - k}",
            f"transmitters = {onu.transmitters}",
            f"switch_overhead = {_t(onu.switch_overhead)}",
            f"queues = {onu.n_queues}",
            "grant_limit = " + ", ".join(_t(q.grant_limit) for q in onu.queues),
            "weight = " + ", ".join(repr(q.weight) for q in onu.queues),
            f"packet_size = {_t(law.mean)}",
            f"packet_law = {law.kind}",
            "rate = " + ", ".join(repr(q.arrival.rate) for q in row),
            "",
        ]
        k = m
    if policy is not None:
        out.append("[policy]")
        if isinstance(policy, RandomPolling):
            tw = policy.transmitter_weighted
            out += ["kind = random", f"transmitter_weighted = {'auto' if tw is None else str(tw).lower()}"]
        elif isinstance(policy, PeriodicPolling):
            if policy.orders is not None:
                raise ValueError("explicit periodic orders cannot be written")
            out.append("kind = periodic")
        elif isinstance(policy, GponFrame):
            out += ["kind = gpon", f"frame = {_t(policy.frame)}",
                    "delta_ratio = " + ", ".join(repr(x) for x in policy.delta_ratios)]
        out.append("")
    if simulation:
        out.append("[simulation]")
        for key in ("horizon", "warmup", "window"):
            if key in simulation:
                out.append(f"{key} = {_t(simulation[key])}")
        if "seed" in simulation:
            out.append(f"seed = {int(simulation['seed'])}")
        out.append("")
    return "\n".join(out)
