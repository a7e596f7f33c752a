"""Simulation results, the backlog-growth detector and CSV output."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

CSV_FILES = ("queues.csv", "backlog.csv", "cycles.csv", "vacations.csv", "vacation_hist.csv", "overhead.csv")
DEFAULT_GROWTH_THRESHOLD = 0.01


@dataclass(frozen=True)
class OnuIntervalStats:
    count: np.ndarray
    mean: np.ndarray
    var: np.ndarray


@dataclass(frozen=True)
class VacationSummary:
    onu: int
    count: int
    mean: float
    cv: float


@dataclass
class SimReport:
    queue_keys: list[tuple[int, int]]
    offered: np.ndarray  # per-queue intensity
    horizon: float
    warmup: float
    seed: int
    sample_times: np.ndarray
    backlog_work: np.ndarray  # (Q, S) seconds of transmission waiting
    backlog_packets: np.ndarray  # (Q, S)
    served_work: np.ndarray  # per-queue after warmup
    mean_wait: np.ndarray
    cycle_stats: OnuIntervalStats
    vacation_stats: OnuIntervalStats
    vacation_hist: np.ndarray  # (N, bins + 1); last column is overflow
    vacation_bin: float
    window: float
    overhead_series: np.ndarray  # fraction of wavelengths in overhead per window, post-warmup
    overhead_window_starts: np.ndarray
    visits: np.ndarray
    audit: dict[str, int] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    events: int = 0

    @property
    def observed(self) -> float:
        return self.horizon - self.warmup

    @property
    def throughput(self) -> np.ndarray:
        return self.served_work / self.observed

    def _post_warmup(self) -> np.ndarray:
        return self.sample_times >= self.warmup

    @property
    def mean_backlog(self) -> np.ndarray:
        """Time-averaged number of waiting packets per queue."""
        m = self._post_warmup()
        if not m.any():
            return np.zeros(len(self.queue_keys))
        return self.backlog_packets[:, m].mean(axis=1)

    def growth_slopes(self) -> np.ndarray:
        """Least-squares backlog slope per queue over the second half after warmup.

        Backlog is measured in transmission time, so slopes are in the same
        units as the intensities.
        """
        t = self.sample_times
        mid = self.warmup + 0.5 * (self.horizon - self.warmup)
        m = t >= mid
        if m.sum() < 3:
            return np.zeros(len(self.queue_keys))
        x = t[m] - t[m].mean()
        y = self.backlog_work[:, m]
        return (y - y.mean(axis=1, keepdims=True)) @ x / (x @ x)

    def mean_overhead_fraction(self) -> float:
        return float(self.overhead_series.mean()) if self.overhead_series.size else float("nan")


def detect_growth(
    report: SimReport,
    threshold: float = DEFAULT_GROWTH_THRESHOLD,
    monitor: Optional[Sequence[tuple[int, int]]] = None,
) -> tuple[bool, dict[tuple[int, int], bool]]:
    """Flag queues whose backlog grows faster than ``threshold`` times their load.

    The monitored total is flagged the same way against the monitored load.
    Returns the overall verdict and the per-queue flags.
    """
    slopes = report.growth_slopes()
    keys = report.queue_keys
    idx = np.arange(len(keys)) if monitor is None else np.array([keys.index(tuple(k)) for k in monitor])
    offered = report.offered[idx]
    s = slopes[idx]
    flags = (offered > 0) & (s > threshold * offered)
    total = bool(s.sum() > threshold * offered.sum()) if offered.sum() > 0 else False
    return bool(flags.any() or total), {keys[k]: bool(f) for k, f in zip(idx, flags)}


def measure_vacations(report: SimReport) -> list[VacationSummary]:
    """Per-ONU mean vacation and coefficient of variation.

    ONUs never left and revisited after warmup get a zero count and NaN
    statistics.
    """
    out = []
    vs = report.vacation_stats
    for i in range(len(vs.count)):
        n = int(vs.count[i])
        if n == 0:
            out.append(VacationSummary(i, 0, float("nan"), float("nan")))
            continue
        mean = float(vs.mean[i])
        cv = float(np.sqrt(max(vs.var[i], 0.0)) / mean) if mean > 0 else float("nan")
        out.append(VacationSummary(i, n, mean, cv))
    return out


def pooled_mean(stats: OnuIntervalStats) -> float:
    n = stats.count.sum()
    if n == 0:
        return float("nan")
    return float(np.nansum(stats.mean * stats.count) / n)


def interval_stats(count, total, sq) -> OnuIntervalStats:
    count = np.asarray(count)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / np.maximum(count, 1), np.nan)
        var = np.where(count > 1, (sq - count * mean**2) / np.maximum(count - 1, 1), np.nan)
    return OnuIntervalStats(count, mean, np.maximum(var, 0.0))


# -- CSV ----------------------------------------------------------------------

# floats are written with repr so that files round-trip exactly


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return str(x)


def _write(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def write_csv(report: SimReport, directory: str, prefix: str = "") -> list[str]:
    """Write one CSV per statistic family; returns the paths written.

    Column orders are fixed:

    ``queues.csv``        onu, queue, offered_load, throughput, mean_backlog_packets, growth_slope, mean_wait
    ``backlog.csv``       time, then one backlog-work column per queue named ``q<onu>_<queue>``
    ``cycles.csv``        onu, visits, intervisit_count, intervisit_mean, intervisit_var
    ``vacations.csv``     onu, count, mean, var, cv
    ``vacation_hist.csv`` onu, bin_low, bin_high, count (``bin_high`` is ``inf`` for the overflow bin)
    ``overhead.csv``      window_start, window_end, overhead_fraction
    """
    os.makedirs(directory, exist_ok=True)
    paths = [os.path.join(directory, prefix + name) for name in CSV_FILES]
    slopes = report.growth_slopes()
    backlog = report.mean_backlog
    _write(
        paths[0],
        ["onu", "queue", "offered_load", "throughput", "mean_backlog_packets", "growth_slope", "mean_wait"],
        (
            (i, j, report.offered[k], report.throughput[k], backlog[k], slopes[k], report.mean_wait[k])
            for k, (i, j) in enumerate(report.queue_keys)
        ),
    )
    _write(
        paths[1],
        ["time"] + [f"q{i}_{j}" for i, j in report.queue_keys],
        ([t] + list(report.backlog_work[:, s]) for s, t in enumerate(report.sample_times)),
    )
    cs = report.cycle_stats
    _write(
        paths[2],
        ["onu", "visits", "intervisit_count", "intervisit_mean", "intervisit_var"],
        ((i, report.visits[i], cs.count[i], cs.mean[i], cs.var[i]) for i in range(len(cs.count))),
    )
    vs = measure_vacations(report)
    _write(
        paths[3],
        ["onu", "count", "mean", "var", "cv"],
        ((v.onu, v.count, v.mean, report.vacation_stats.var[v.onu], v.cv) for v in vs),
    )
    nb = report.vacation_hist.shape[1] - 1
    b = report.vacation_bin
    _write(
        paths[4],
        ["onu", "bin_low", "bin_high", "count"],
        (
            (i, k * b, (k + 1) * b if k < nb else float("inf"), report.vacation_hist[i, k])
            for i in range(report.vacation_hist.shape[0])
            for k in range(nb + 1)
        ),
    )
    starts = report.overhead_window_starts
    _write(
        paths[5],
        ["window_start", "window_end", "overhead_fraction"],
        ((s, s + report.window, f) for s, f in zip(starts, report.overhead_series)),
    )
    return paths
