"""Homogeneous multiserver toy model with instantaneous switchover.

``N`` identical queues with Poisson(``lam``) arrivals and ``S`` servers.  A
server serves exactly one customer (exponential with rate ``mu``) and then
jumps to a queue chosen uniformly among the non-empty queues no other server
is attending, possibly the one it just left.  A server with nowhere to go
idles until an arrival makes some unattended queue non-empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np
from numba import njit


@dataclass
class ToyReport:
    n_queues: int
    n_servers: int
    lam: float
    mu: float
    horizon: float
    seed: int
    grid: np.ndarray
    busy_fraction: np.ndarray  # A_N on the grid
    busy_min: float  # exact extremes of A_N over [0, horizon]
    busy_max: float
    final_queues: np.ndarray
    hitting_time: float  # first time fewer than S queues are non-empty; nan if never
    events: int

    @property
    def rho(self) -> float:
        return self.lam / self.mu

    def sup_deviation(self, target: Optional[float] = None) -> float:
        """``sup_t |A_N(t) - target|``, exact over the whole run."""
        c = self.rho if target is None else target
        return max(abs(self.busy_max - c), abs(self.busy_min - c))


@njit(cache=True, nogil=True)
def _toy_kernel(q, n_servers, lam, mu, horizon, seed, grid):
    np.random.seed(seed)
    N = q.shape[0]
    # attended queues and non-empty unattended queues, each a swap-remove pool
    att = np.empty(N, np.int64)
    att_pos = np.full(N, -1, np.int64)
    n_att = 0
    free = np.empty(N, np.int64)
    free_pos = np.full(N, -1, np.int64)
    n_free = 0
    nonempty = 0
    for i in range(N):
        if q[i] > 0:
            nonempty += 1
            free[n_free] = i
            free_pos[i] = n_free
            n_free += 1
    idle = n_servers
    while idle > 0 and n_free > 0:
        k = int(np.random.random() * n_free)
        i = free[k]
        last = free[n_free - 1]
        free[k] = last
        free_pos[last] = k
        free_pos[i] = -1
        n_free -= 1
        att[n_att] = i
        att_pos[i] = n_att
        n_att += 1
        idle -= 1

    G = grid.shape[0]
    traj = np.zeros(G)
    g = 0
    a_min = nonempty / N
    a_max = a_min
    hit = np.nan
    if nonempty < n_servers:
        hit = 0.0
    t = 0.0
    events = 0
    while True:
        rate = N * lam + n_att * mu
        if rate <= 0.0:
            break
        t_next = t + np.random.exponential(1.0 / rate)
        while g < G and grid[g] < t_next and grid[g] <= horizon:
            traj[g] = nonempty / N
            g += 1
        if t_next > horizon:
            break
        t = t_next
        events += 1
        if np.random.random() * rate < N * lam:
            i = int(np.random.random() * N)
            q[i] += 1
            if q[i] == 1:
                nonempty += 1
                if idle > 0:
                    att[n_att] = i
                    att_pos[i] = n_att
                    n_att += 1
                    idle -= 1
                else:
                    free[n_free] = i
                    free_pos[i] = n_free
                    n_free += 1
        else:
            k = int(np.random.random() * n_att)
            i = att[k]
            q[i] -= 1
            last = att[n_att - 1]
            att[k] = last
            att_pos[last] = k
            att_pos[i] = -1
            n_att -= 1
            if q[i] == 0:
                nonempty -= 1
            else:
                free[n_free] = i
                free_pos[i] = n_free
                n_free += 1
            if n_free > 0:
                k = int(np.random.random() * n_free)
                j = free[k]
                last = free[n_free - 1]
                free[k] = last
                free_pos[last] = k
                free_pos[j] = -1
                n_free -= 1
                att[n_att] = j
                att_pos[j] = n_att
                n_att += 1
            else:
                idle += 1
        a = nonempty / N
        if a < a_min:
            a_min = a
        if a > a_max:
            a_max = a
        if np.isnan(hit) and nonempty < n_servers:
            hit = t
    while g < G:
        traj[g] = nonempty / N
        g += 1
    return traj, a_min, a_max, hit, events


def geometric_start(n_queues: int, rho: float, rng: np.random.Generator) -> np.ndarray:
    """Independent draws from ``P(Q = k) = (1 - rho) rho^k``."""
    if rho <= 0:
        return np.zeros(n_queues, dtype=np.int64)
    # numpy's geometric counts trials, starting at 1
    return rng.geometric(1.0 - rho, n_queues).astype(np.int64) - 1


def run_homogeneous(
    n_queues: int,
    n_servers: int,
    lam: float,
    mu: float,
    horizon: float,
    seed: int = 0,
    initial: Union[str, Sequence[int]] = "geometric",
    n_grid: int = 200,
) -> ToyReport:
    """Simulate the toy model on ``[0, horizon]``.

    ``initial`` is ``"geometric"`` (stationary M/M/1 marginals with
    ``rho = lam / mu``) or an explicit list of queue lengths.
    """
    if not mu > 0:
        raise ValueError(f"service rate must be positive, got {mu}")
    if not lam >= 0:
        raise ValueError(f"arrival rate must be nonnegative, got {lam}")
    if n_queues < 1 or n_servers < 1:
        raise ValueError("need at least one queue and one server")
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    ss = np.random.SeedSequence(seed)
    start_ss, run_ss = ss.spawn(2)
    if isinstance(initial, str):
        if initial != "geometric":
            raise ValueError(f"unknown initial condition {initial!r}")
        if lam >= mu:
            raise ValueError("geometric start needs lam < mu")
        q = geometric_start(n_queues, lam / mu, np.random.default_rng(start_ss))
    else:
        q = np.array(initial, dtype=np.int64)
        if q.shape != (n_queues,) or np.any(q < 0):
            raise ValueError("explicit start needs one nonnegative length per queue")
    grid = np.linspace(0.0, horizon, n_grid + 1)
    routing = int(run_ss.generate_state(1, dtype=np.uint32)[0])
    traj, lo, hi, hit, events = _toy_kernel(q, int(n_servers), float(lam), float(mu), float(horizon), routing, grid)
    return ToyReport(
        n_queues, n_servers, float(lam), float(mu), float(horizon), int(seed),
        grid, traj, float(lo), float(hi), q, float(hit), int(events),
    )


def geometric_pmf(rho: float, kmax: int) -> np.ndarray:
    k = np.arange(kmax + 1)
    return (1.0 - rho) * rho**k


def tv_from_geometric(samples: np.ndarray, rho: float) -> float:
    """Total-variation distance between the empirical law of ``samples`` and Geometric(rho)."""
    samples = np.asarray(samples, dtype=np.int64)
    if samples.size == 0:
        return math.nan
    kmax = int(samples.max())
    emp = np.bincount(samples, minlength=kmax + 1) / samples.size
    if rho <= 0:
        ref = np.zeros(kmax + 1)
        ref[0] = 1.0
        return 0.5 * float(np.abs(emp - ref).sum())
    ref = geometric_pmf(rho, kmax)
    tail = rho ** (kmax + 1)  # mass beyond the largest observation
    return 0.5 * float(np.abs(emp - ref).sum() + tail)
