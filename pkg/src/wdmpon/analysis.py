"""Stability conditions and the mean-field fixed point.

All functions are pure.  Per-queue results are keyed by ``(i, j)``, the
ONU index and the queue index within that ONU (both zero-based).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import optimize

from .model import PonConfig, TrafficSpec, check

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERS = 10_000


class NoSolution(ArithmeticError):
    """The offered load leaves no capacity for the mean-field equations."""


class RegimeError(ValueError):
    """Inputs fall outside the regime an analysis applies to."""


class Verdict(enum.Enum):
    STABLE = "stable"
    SATURATED = "saturated"
    INDETERMINATE = "indeterminate"


@dataclass(frozen=True)
class MeanFieldSolution:
    theta: float
    delta: float
    iterations: int
    residual: float
    method: str = "closed-form"


@dataclass(frozen=True)
class StabilityReport:
    verdict: dict[tuple[int, int], Verdict]
    saturated_set: frozenset[tuple[int, int]]
    binding_margin: dict[tuple[int, int], float]
    mean_field: Optional[MeanFieldSolution] = None
    notes: tuple[str, ...] = field(default=())

    @property
    def stable(self) -> bool:
        return all(v is Verdict.STABLE for v in self.verdict.values())

    @property
    def any_saturated(self) -> bool:
        return any(v is Verdict.SATURATED for v in self.verdict.values())

    def queues(self, verdict: Verdict) -> list[tuple[int, int]]:
        return sorted(k for k, v in self.verdict.items() if v is verdict)


def _judge(margin: float) -> Verdict:
    if margin < 0:
        return Verdict.STABLE
    if margin > 0:
        return Verdict.SATURATED
    return Verdict.INDETERMINATE


class _Flat:
    """Queue-level arrays for one config/traffic pair."""

    def __init__(self, config: PonConfig, traffic: TrafficSpec):
        check(config, traffic)
        self.L = config.n_wavelengths
        self.N = config.n_onus
        self.keys = [(i, j) for i, o in enumerate(config.onus) for j in range(o.n_queues)]
        self.onu = np.array([i for i, _ in self.keys], dtype=np.int64)
        self.rho = np.concatenate(traffic.intensities())
        self.grant = np.concatenate(config.grant_limits())
        self.delta = config.switch_overheads
        self.t = config.transmitters.astype(float)

    def onu_sum(self, x: np.ndarray) -> np.ndarray:
        return np.bincount(self.onu, weights=x, minlength=self.N)


# -- classical multiserver polling (no server limits) -------------------------


def classical_stability(config: PonConfig, traffic: TrafficSpec) -> StabilityReport:
    """Limited-gated multiserver polling with ``t_i = L`` for every ONU.

    Queue ``(i, j)`` is stable iff ``rho + rho_ij/d_ij * sum(Delta) < L``.
    When some queues fail, the heaviest violator (largest ``rho_ij/d_ij``)
    joins the saturated set, its load is dropped from ``rho`` and its grant is
    added to the overhead sum, and the check repeats.
    """
    f = _Flat(config, traffic)
    if np.any(f.t != f.L):
        raise RegimeError("classical stability requires t_i = L at every ONU")
    saturated = np.zeros(len(f.keys), dtype=bool)
    while True:
        rho = f.rho[~saturated].sum()
        overhead = f.delta.sum() + f.grant[saturated].sum()
        lhs = rho + f.rho / f.grant * overhead
        margin = lhs - f.L
        candidates = np.flatnonzero(~saturated & (margin > 0) & (f.rho > 0))
        if candidates.size == 0:
            break
        worst = candidates[np.argmax(f.rho[candidates] / f.grant[candidates])]
        saturated[worst] = True
    return _report(f, saturated, margin)


def mean_cycle_time(config: PonConfig, traffic: TrafficSpec) -> float:
    """Mean time between successive wavelength visits to any given ONU."""
    check(config, traffic)
    rho = sum(float(r.sum()) for r in traffic.intensities())
    L = config.n_wavelengths
    if rho >= L:
        raise NoSolution(f"no stationary cycle: total load {rho} >= {L} wavelengths")
    return float(config.switch_overheads.sum()) / (L - rho)


def server_limit_stability(config: PonConfig, traffic: TrafficSpec) -> StabilityReport:
    """Unlimited gated service with transmitter limits: ``rho_i < t_i`` and ``rho < L``.

    ONUs breaking their own limit have all their queues reported saturated.
    A breach of the global condition alone does not identify which queues
    grow, so the remaining queues are reported indeterminate.
    """
    f = _Flat(config, traffic)
    rho_i = f.onu_sum(f.rho)
    rho = rho_i.sum()
    onu_margin = (rho_i - f.t)[f.onu]
    global_margin = rho - f.L
    verdict, margins = {}, {}
    for q, key in enumerate(f.keys):
        margins[key] = float(max(onu_margin[q], global_margin))
        v = _judge(onu_margin[q])
        if v is Verdict.STABLE and global_margin >= 0:
            v = Verdict.INDETERMINATE
        verdict[key] = v
    sat = frozenset(k for k, v in verdict.items() if v is Verdict.SATURATED)
    notes = ("total load reaches the number of wavelengths",) if global_margin >= 0 else ()
    return StabilityReport(verdict, sat, margins, None, notes)


# -- mean field ------------------------------------------------------------------


def _delta_of_theta(theta: float, overhead: np.ndarray, weight: np.ndarray) -> float:
    # visit-weighted mean overhead; weight_i = t_i - rho_i
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        inv = weight / (overhead + theta)
        total = inv.sum()
    if not np.isfinite(total):
        # zero-overhead ONUs dominate as theta -> 0
        return 0.0
    return float(np.dot(inv, overhead) / total)


def _solve_theta(
    overhead: np.ndarray,
    rho_i: np.ndarray,
    t: np.ndarray,
    L: int,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    method: str = "auto",
) -> MeanFieldSolution:
    slots = float(t.sum())
    if slots <= L:
        raise RegimeError(f"mean-field vacation needs more transmitters than wavelengths ({slots:g} <= {L})")
    rho = float(rho_i.sum())
    if rho >= L:
        raise NoSolution(f"total load {rho:.6g} >= {L} wavelengths")
    weight = t - rho_i
    if np.any(weight <= 0):
        raise NoSolution("some ONU load reaches its transmitter count")
    scale = (slots - L) / (L - rho)

    if method == "closed" or (method == "auto" and np.all(overhead == overhead[0])):
        if not np.all(overhead == overhead[0]):
            raise ValueError("closed form requires equal overheads")
        d = float(overhead[0])
        return MeanFieldSolution(scale * d, d, 0, 0.0, "closed-form")

    if overhead.max() == 0:
        return MeanFieldSolution(0.0, 0.0, 0, 0.0, "closed-form")

    def residual(theta):
        return theta - scale * _delta_of_theta(theta, overhead, weight)

    positive = overhead[overhead > 0]
    theta = scale * (overhead.min() if overhead.min() > 0 else positive.min())
    for k in range(1, max_iters + 1):
        new = scale * _delta_of_theta(theta, overhead, weight)
        if new == 0.0:
            return MeanFieldSolution(0.0, 0.0, k, 0.0, "degenerate")
        if abs(new - theta) <= tolerance * abs(new):
            d = _delta_of_theta(new, overhead, weight)
            return MeanFieldSolution(new, d, k, abs(residual(new)) / new, "fixed-point")
        theta = new

    lo, hi = np.finfo(float).tiny, scale * float(overhead.max())
    if residual(lo) >= 0:
        # only possible with zero overheads: their visits dominate and theta = 0
        return MeanFieldSolution(0.0, 0.0, max_iters, 0.0, "degenerate")
    theta = optimize.bisect(residual, lo, hi, xtol=tolerance * hi * 1e-3, maxiter=2000)
    d = _delta_of_theta(theta, overhead, weight)
    return MeanFieldSolution(theta, d, max_iters, abs(residual(theta)) / theta, "bisection")


def solve_mean_field(
    config: PonConfig,
    traffic: TrafficSpec,
    extra_overhead: Optional[Sequence[float]] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iters: int = DEFAULT_MAX_ITERS,
    method: str = "auto",
) -> MeanFieldSolution:
    """Jointly solve the vacation relation and the mean-overhead expression.

    The mean vacation is ``theta = (N - L) * delta / (L - rho)`` and ``delta``
    is the visit-weighted mean of the per-ONU overheads.  ONUs with several
    transmitters count once per transmitter (``N`` becomes ``sum(t_i)``).

    Parameters
    ----------
    extra_overhead : per-ONU seconds added to each switch overhead, e.g. the
        grants of saturated queues.
    method : ``"auto"`` uses the closed form when all overheads are equal,
        ``"iterate"`` forces the fixed-point path, ``"closed"`` the closed form.

    Raises
    ------
    NoSolution
        If ``rho >= L``.
    RegimeError
        If there are no more transmitters than wavelengths; the vacation is
        then identically zero.
    """
    f = _Flat(config, traffic)
    overhead = f.delta.copy()
    if extra_overhead is not None:
        overhead = overhead + np.asarray(extra_overhead, dtype=float)
    return _solve_theta(overhead, f.onu_sum(f.rho), f.t, f.L, tolerance, max_iters, method)


SELECTIONS = ("worst", "ranked", "ranked-theta")


def mean_field_stability(
    config: PonConfig,
    traffic: TrafficSpec,
    selection: str = "worst",
    tolerance: float = DEFAULT_TOLERANCE,
) -> StabilityReport:
    """Per-queue stability under the mean-field assumption.

    Queue ``(i, j)`` is stable when
    ``rho_i + rho_ij / d_ij * (Delta_i + theta) < t_i``.  Saturated queues are
    found greedily: each round one queue joins the saturated set, its grant
    is added to its ONU's overhead, its load is dropped, and ``theta`` is
    solved again.

    ``selection`` controls which queue is tested each round:

    ``"worst"``
        every unsaturated queue is tested and the largest violator saturates;
        the loop stops once all pass.
    ``"ranked"``
        only the queue maximising ``rho_ij / d_ij * Delta_i`` is tested and
        the loop stops as soon as it passes.
    ``"ranked-theta"``
        as ``"ranked"`` with ``Delta_i + theta`` in the ranking.

    With the two literal orderings, unsaturated queues other than the tested
    one are reported from their own margin.
    """
    if selection not in SELECTIONS:
        raise ValueError(f"selection must be one of {SELECTIONS}")
    f = _Flat(config, traffic)
    saturated = np.zeros(len(f.keys), dtype=bool)
    extra = np.zeros(f.N)
    loaded = f.rho > 0
    solution = None
    notes = []
    for _ in range(len(f.keys) + 1):
        rho_q = np.where(saturated, 0.0, f.rho)
        rho_i = f.onu_sum(rho_q)
        overhead = f.delta + extra
        lhs0 = rho_i[f.onu] + f.rho / f.grant * overhead[f.onu]
        open_ = ~saturated & loaded

        # theta >= 0, so failing with theta = 0 means failing for any theta
        # an ONU with no headroom has no finite cycle either
        hopeless = open_ & ((lhs0 > f.t[f.onu]) | (rho_i[f.onu] >= f.t[f.onu]))
        if hopeless.any():
            idx = np.flatnonzero(hopeless)
            saturated[idx[np.argmax((lhs0 - f.t[f.onu])[idx])]] = True
            _saturate_bookkeeping(f, saturated, extra)
            continue

        if rho_i.sum() >= f.L:
            # theta is unbounded as rho -> L; the largest theta coefficient fails first
            idx = np.flatnonzero(open_)
            if idx.size == 0:
                raise NoSolution(f"total load {rho_i.sum():.6g} >= {f.L} wavelengths")
            saturated[idx[np.argmax(f.rho[idx] / f.grant[idx])]] = True
            _saturate_bookkeeping(f, saturated, extra)
            continue

        try:
            solution = _solve_theta(overhead, rho_i, f.t, f.L, tolerance)
            theta = solution.theta
        except RegimeError:
            solution, theta = None, 0.0
            if "theta=0" not in notes:
                notes.append("theta=0")
        lhs = rho_i[f.onu] + f.rho / f.grant * (overhead[f.onu] + theta)
        margin = lhs - f.t[f.onu]

        if selection == "worst":
            violators = np.flatnonzero(open_ & (margin > 0))
            if violators.size == 0:
                break
            pick = violators[np.argmax(margin[violators])]
        else:
            idx = np.flatnonzero(open_)
            if idx.size == 0:
                break
            rank = f.rho[idx] / f.grant[idx] * (overhead[f.onu[idx]] + (theta if selection == "ranked-theta" else 0.0))
            pick = idx[np.argmax(rank)]
            if margin[pick] <= 0:
                break
        saturated[pick] = True
        _saturate_bookkeeping(f, saturated, extra)
    else:  # pragma: no cover - each round saturates one queue
        raise RuntimeError("saturated-set search did not terminate")

    return _report(f, saturated, margin, solution, tuple(notes))


def _saturate_bookkeeping(f: _Flat, saturated: np.ndarray, extra: np.ndarray) -> None:
    extra[:] = f.onu_sum(np.where(saturated, f.grant, 0.0))


def _report(f, saturated, margin, solution=None, notes=()) -> StabilityReport:
    verdict, margins = {}, {}
    for q, key in enumerate(f.keys):
        margins[key] = float(margin[q])
        verdict[key] = Verdict.SATURATED if saturated[q] else _judge(margin[q])
    sat = frozenset(k for q, k in enumerate(f.keys) if saturated[q])
    return StabilityReport(verdict, sat, margins, solution, tuple(notes))


def uniform_overhead_stability(config: PonConfig, traffic: TrafficSpec) -> StabilityReport:
    """Closed-form check for equal switch overheads ``Delta_i = delta``.

    Every queue is stable iff
    ``rho + max_ij rho_ij/d_ij * delta * (N - rho) / (t_i - rho_i) < L``
    (``N`` counts transmitters).  When the condition fails, queues whose own
    term fails are reported saturated and the rest indeterminate, because the
    closed form says nothing once the vacation changes.
    """
    f = _Flat(config, traffic)
    if not np.all(f.delta == f.delta[0]):
        raise ValueError("uniform_overhead_stability requires equal switch overheads")
    delta = float(f.delta[0])
    rho_i = f.onu_sum(f.rho)
    rho = float(rho_i.sum())
    slots = float(f.t.sum())
    headroom = f.t[f.onu] - rho_i[f.onu]
    with np.errstate(divide="ignore", invalid="ignore"):
        if slots > f.L:
            term = f.rho / f.grant * delta * (slots - rho) / headroom
            lhs = rho + term
            margin = np.where(headroom > 0, lhs - f.L, np.inf)
            if rho >= f.L:
                margin = np.maximum(margin, rho - f.L)
        else:
            # no vacations: each active ONU always holds a server
            margin = rho_i[f.onu] + f.rho / f.grant * delta - f.t[f.onu]
    margin = np.where((f.rho == 0) & np.isinf(margin), rho_i[f.onu] - f.t[f.onu], margin)
    if np.all(margin < 0):
        return StabilityReport(
            {k: Verdict.STABLE for k in f.keys}, frozenset(), dict(zip(f.keys, map(float, margin)))
        )
    verdict = {}
    for q, key in enumerate(f.keys):
        if margin[q] > 0 and f.rho[q] > 0:
            verdict[key] = Verdict.SATURATED
        else:
            verdict[key] = Verdict.INDETERMINATE
    sat = frozenset(k for k, v in verdict.items() if v is Verdict.SATURATED)
    return StabilityReport(verdict, sat, dict(zip(f.keys, map(float, margin))))


def gpon_frame_stability(
    config: PonConfig, traffic: TrafficSpec, delta_ratios: Sequence[float]
) -> StabilityReport:
    """Frame-based allocation: ``rho < L(1 - sum delta_i)`` and ``rho_i < t_i(1 - delta_i)``."""
    f = _Flat(config, traffic)
    ratios = np.asarray(delta_ratios, dtype=float)
    if ratios.shape != (f.N,):
        raise ValueError(f"expected {f.N} overhead ratios, got shape {ratios.shape}")
    if np.any(ratios < 0):
        raise ValueError("overhead ratios must be nonnegative")
    if ratios.sum() >= 1:
        raise ValueError("overhead ratios sum to >= 1: no capacity remains")
    rho_i = f.onu_sum(f.rho)
    onu_margin = rho_i - f.t * (1 - ratios)
    global_margin = rho_i.sum() - f.L * (1 - ratios.sum())
    verdict, margins = {}, {}
    for q, key in enumerate(f.keys):
        i = f.onu[q]
        margins[key] = float(max(onu_margin[i], global_margin))
        v = _judge(onu_margin[i])
        if v is Verdict.STABLE and global_margin >= 0:
            v = Verdict.INDETERMINATE
        verdict[key] = v
    sat = frozenset(k for k, v in verdict.items() if v is Verdict.SATURATED)
    return StabilityReport(verdict, sat, margins)
