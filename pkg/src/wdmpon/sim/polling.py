"""Discrete-event simulation of the multiserver polling model.

Wavelengths circulate among ONUs.  A visit serves every queue of the ONU in
cyclic order under the limited-gated rule (only packets present when the
visit started, at most ``grant_limit`` seconds per queue, whole packets
only), then spends the ONU's switch overhead before the wavelength moves on.
"""

from __future__ import annotations

import logging
from typing import Optional

import numpy as np

from ..model import (
    DETERMINISTIC,
    GponFrame,
    PeriodicPolling,
    PonConfig,
    RandomPolling,
    TrafficSpec,
    check,
)
from . import _kernels
from .report import SimReport, interval_stats

log = logging.getLogger(__name__)

RUNAWAY_PACKETS = 1_000_000
VACATION_BINS = 64


class Arrivals:
    """Pre-generated packet arrivals on ``[0, horizon)`` for every queue.

    Each queue draws from its own child of ``SeedSequence(seed)`` so that
    arrival sample paths do not depend on the routing randomness or on other
    queues.
    """

    def __init__(self, traffic: TrafficSpec, horizon: float, seed: int):
        flat = [q for row in traffic.per_queue for q in row]
        children = np.random.SeedSequence(seed).spawn(len(flat) + 1)
        times, sizes, counts = [], [], []
        for q, child in zip(flat, children):
            rng = np.random.default_rng(child)
            n = rng.poisson(q.arrival.rate * horizon) if q.arrival.rate > 0 else 0
            t = np.sort(rng.uniform(0.0, horizon, n))
            if q.packet_law.kind == DETERMINISTIC:
                s = np.full(n, q.packet_law.mean)
            else:
                s = rng.exponential(q.packet_law.mean, n)
            times.append(t)
            sizes.append(s)
            counts.append(n)
        self.offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.times = np.concatenate(times) if times else np.zeros(0)
        self.sizes = np.concatenate(sizes) if sizes else np.zeros(0)
        self.csum = np.concatenate([[0.0], np.cumsum(self.sizes)])
        self.routing_seed = int(children[-1].generate_state(1, dtype=np.uint32)[0])
        self.routing_rng = np.random.default_rng(children[-1])


def _transmitter_weighted(config: PonConfig, policy) -> bool:
    if isinstance(policy, RandomPolling) and policy.transmitter_weighted is not None:
        return bool(policy.transmitter_weighted)
    if isinstance(policy, PeriodicPolling):
        return False
    L = config.n_wavelengths
    return any(1 < o.transmitters < L for o in config.onus)


def _layout(config: PonConfig):
    counts = np.array(config.queue_shape, dtype=np.int64)
    qstart = np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(np.int64)
    grants = np.concatenate(config.grant_limits())
    keys = [(i, j) for i, o in enumerate(config.onus) for j in range(o.n_queues)]
    return counts, qstart, grants, keys


def run(
    config: PonConfig,
    traffic: TrafficSpec,
    policy=None,
    horizon: float = 1.0,
    warmup: float = 0.0,
    seed: int = 0,
    window: float = 1e-3,
    n_samples: int = 400,
    audit: bool = False,
    vacation_bin: Optional[float] = None,
) -> SimReport:
    """Simulate the polling system and collect statistics after ``warmup``.

    Parameters
    ----------
    policy : RandomPolling (default) or PeriodicPolling.
    horizon, warmup : seconds; ``horizon > warmup >= 0``.
    window : width of the overhead-fraction measurement windows.
    n_samples : number of backlog samples on ``[0, horizon]``.
    audit : check model invariants at every event; violation counts land in
        ``report.audit``.
    vacation_bin : histogram bin width for vacations (defaults to the
        largest switch overhead).
    """
    if policy is None:
        policy = RandomPolling()
    if isinstance(policy, GponFrame):
        raise TypeError("use run_gpon_frame for the frame-based policy")
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if not 0 <= warmup < horizon:
        raise ValueError(f"need 0 <= warmup < horizon, got warmup={warmup}")
    if not window > 0:
        raise ValueError("window must be positive")
    check(config, traffic)

    L = config.n_wavelengths
    counts, qstart, grants, keys = _layout(config)
    arrivals = Arrivals(traffic, horizon, seed)
    caps = np.minimum(config.transmitters, L)

    if _transmitter_weighted(config, policy):
        item_onu = np.repeat(np.arange(config.n_onus), caps).astype(np.int64)
        item_cap = np.ones(item_onu.size, dtype=np.int64)
    else:
        item_onu = np.arange(config.n_onus, dtype=np.int64)
        item_cap = caps.astype(np.int64)

    if isinstance(policy, PeriodicPolling):
        mode = _kernels.PERIODIC
        if policy.orders is None:
            rng = arrivals.routing_rng
            orders = np.array([rng.permutation(item_onu.size) for _ in range(L)], dtype=np.int64)
        else:
            orders = np.array(policy.orders, dtype=np.int64)
            if orders.shape != (L, config.n_onus) or any(
                sorted(row) != list(range(config.n_onus)) for row in orders.tolist()
            ):
                raise ValueError("periodic orders must be one permutation of ONU indices per wavelength")
    else:
        mode = _kernels.RANDOM
        orders = np.zeros((1, 1), dtype=np.int64)

    delta = config.switch_overheads
    if vacation_bin is None:
        vacation_bin = float(delta.max()) if delta.max() > 0 else horizon / VACATION_BINS
    sample_times = np.linspace(0.0, horizon, n_samples + 1)[1:]

    out = _kernels.polling_kernel(
        L, delta, caps.astype(np.int64), qstart, counts, grants,
        arrivals.offsets, arrivals.times, arrivals.sizes, arrivals.csum,
        item_onu, item_cap, mode, orders, arrivals.routing_seed,
        float(horizon), float(warmup), float(window), sample_times,
        float(vacation_bin), VACATION_BINS, bool(audit),
    )
    (bins, bwork, bpkts, ivc, ivs, ivq, vc, vs, vq, vhist, visits,
     wait_sum, wait_count, served, violations, n_idle, n_events) = out

    starts = np.arange(bins.size) * window
    keep = starts >= warmup
    full = starts + window <= horizon + 1e-15 * horizon
    keep &= full
    fraction = bins[keep] / (L * window)

    with np.errstate(invalid="ignore", divide="ignore"):
        mean_wait = np.where(wait_count > 0, wait_sum / np.maximum(wait_count, 1), np.nan)
    offered = np.concatenate(traffic.intensities())
    report = SimReport(
        queue_keys=keys,
        offered=offered,
        horizon=float(horizon),
        warmup=float(warmup),
        seed=int(seed),
        sample_times=sample_times,
        backlog_work=bwork,
        backlog_packets=bpkts,
        served_work=served,
        mean_wait=mean_wait,
        cycle_stats=interval_stats(ivc, ivs, ivq),
        vacation_stats=interval_stats(vc, vs, vq),
        vacation_hist=vhist,
        vacation_bin=float(vacation_bin),
        window=float(window),
        overhead_series=fraction,
        overhead_window_starts=starts[keep],
        visits=visits,
        audit={
            "transmitter_cap": int(violations[_kernels.A_TX_CAP]),
            "gated": int(violations[_kernels.A_GATED]),
            "grant": int(violations[_kernels.A_GRANT]),
            "idle_with_free_transmitter": int(violations[_kernels.A_IDLE]),
            "time_order": int(violations[_kernels.A_ORDER]),
        }
        if audit
        else {},
        events=int(n_events),
    )
    _warn(report, n_idle)
    return report


def _warn(report: SimReport, n_idle: int = 0) -> None:
    if report.warmup == 0:
        report.warnings.append("transient not discarded (warmup = 0)")
    if n_idle:
        report.warnings.append(f"{n_idle} wavelength(s) idle: not enough free transmitters")
    peak = report.backlog_packets.sum(axis=0).max() if report.backlog_packets.size else 0
    if peak > RUNAWAY_PACKETS:
        report.warnings.append(f"backlog reached {int(peak)} packets: possible instability")
    for w in report.warnings:
        log.warning(w)


def run_gpon_frame(
    config: PonConfig,
    traffic: TrafficSpec,
    frame: float = 125e-6,
    delta_ratios=None,
    weights=None,
    horizon: float = 1.0,
    warmup: float = 0.0,
    seed: int = 0,
    n_samples: int = 400,
) -> SimReport:
    """Frame-based allocation with weighted max-min fairness.

    At each frame boundary the capacity ``L * frame * (1 - sum(delta_i))`` is
    shared among queues with backlog (as reported at the boundary) by
    weighted max-min fairness, each ONU capped at
    ``t_i * frame * (1 - delta_i)``.  Whole packets are served within the
    shares; the part of a share too small for the next packet is carried to
    the next frame while that packet is still waiting.

    ``delta_ratios`` defaults to ``switch_overhead / frame`` per ONU;
    ``weights`` default to the configured queue weights.
    """
    if not horizon > 0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if not 0 <= warmup < horizon:
        raise ValueError(f"need 0 <= warmup < horizon, got warmup={warmup}")
    if not frame > 0:
        raise ValueError("frame must be positive")
    check(config, traffic)
    ratios = config.switch_overheads / frame if delta_ratios is None else np.asarray(delta_ratios, float)
    if ratios.shape != (config.n_onus,) or np.any(ratios < 0):
        raise ValueError("need one nonnegative overhead ratio per ONU")
    if ratios.sum() >= 1:
        raise ValueError("overhead ratios sum to >= 1: no capacity remains")
    counts, qstart, grants, keys = _layout(config)
    q_onu = np.repeat(np.arange(config.n_onus), counts).astype(np.int64)
    if weights is None:
        w = np.array([q.weight for o in config.onus for q in o.queues], dtype=float)
    else:
        w = np.asarray([x for row in weights for x in row], dtype=float)
        if w.shape != q_onu.shape:
            raise ValueError("weights must match the queue layout")
    L = config.n_wavelengths
    caps = np.minimum(config.transmitters, L) * frame * (1 - ratios)
    capacity = L * frame * (1 - ratios.sum())
    n_frames = int(np.floor(horizon / frame))
    if n_frames < 2:
        raise ValueError("horizon shorter than two frames")
    arrivals = Arrivals(traffic, horizon, seed)
    sample_every = max(1, n_frames // n_samples)
    st, bwork, bpkts, served, wait_sum, wait_count, used = _kernels.frame_kernel(
        q_onu, w, caps, capacity, float(frame),
        arrivals.offsets, arrivals.times, arrivals.sizes, arrivals.csum,
        n_frames, float(warmup), sample_every,
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        mean_wait = np.where(wait_count > 0, wait_sum / np.maximum(wait_count, 1), np.nan)
    starts = np.arange(n_frames) * frame
    keep = starts >= warmup
    N = config.n_onus
    empty = interval_stats(np.zeros(N, np.int64), np.zeros(N), np.zeros(N))
    observed_horizon = n_frames * frame
    report = SimReport(
        queue_keys=keys,
        offered=np.concatenate(traffic.intensities()),
        horizon=float(observed_horizon),
        warmup=float(warmup),
        seed=int(seed),
        sample_times=st,
        backlog_work=bwork,
        backlog_packets=bpkts,
        served_work=served,
        mean_wait=mean_wait,
        cycle_stats=empty,
        vacation_stats=empty,
        vacation_hist=np.zeros((N, 1), np.int64),
        vacation_bin=float(frame),
        window=float(frame),
        overhead_series=np.full(int(keep.sum()), float(ratios.sum())),
        overhead_window_starts=starts[keep],
        visits=np.zeros(N, np.int64),
    )
    _warn(report)
    return report
