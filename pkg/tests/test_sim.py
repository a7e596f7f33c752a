import filecmp
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from wdmpon import (
    OnuConfig,
    PacketLaw,
    PeriodicPolling,
    PonConfig,
    QueueConfig,
    RandomPolling,
    GponFrame,
    TrafficSpec,
    mean_cycle_time,
    single_queue_traffic,
    solve_mean_field,
    uniform_config,
)
from wdmpon.sim import detect_growth, measure_vacations, pooled_mean, run, run_gpon_frame, write_csv
from wdmpon.sim import polling
from wdmpon.sim._kernels import max_min_allocate
from wdmpon.sim.toy import geometric_pmf, run_homogeneous, tv_from_geometric

DET = PacketLaw.deterministic(8e-6)
EXP = PacketLaw.exponential(8e-6)


def idle(n, L, delta=1.2e-6):
    return uniform_config(n, L, delta, 8e-6), single_queue_traffic([0.0] * n, DET)


# -- polling: worked examples -------------------------------------------------------------


def test_empty_system_is_all_overhead():
    cfg, tr = idle(10, 5)
    r = run(cfg, tr, horizon=0.02, warmup=0.002, seed=1)
    assert np.allclose(r.overhead_series, 1.0)
    # every wavelength cycles overheads: N * Delta / L between visits to one ONU
    assert pooled_mean(r.cycle_stats) == pytest.approx(10 * 1.2e-6 / 5, rel=0.02)


def test_empty_system_vacation():
    cfg, tr = idle(10, 5)
    r = run(cfg, tr, horizon=0.05, warmup=0.005, seed=2)
    assert pooled_mean(r.vacation_stats) == pytest.approx((10 - 5) * 1.2e-6 / 5, rel=0.05)


def test_single_onu_cycle_time():
    cfg = PonConfig(1, (OnuConfig(1, 1.2e-6, (QueueConfig(math.inf),)),))
    tr = single_queue_traffic([0.5], EXP)
    r = run(cfg, tr, horizon=1.0, warmup=0.05, seed=3)
    assert mean_cycle_time(cfg, tr) == pytest.approx(2.4e-6)
    assert pooled_mean(r.cycle_stats) == pytest.approx(2.4e-6, rel=0.02)


def test_overhead_fraction_tracks_residual_capacity():
    cfg = uniform_config(100, 50, 1.2e-6, 8e-6)
    tr = single_queue_traffic([0.2] * 100, DET)
    r = run(cfg, tr, horizon=0.05, warmup=0.005, seed=4)
    assert r.mean_overhead_fraction() == pytest.approx(0.6, abs=0.02)
    assert np.all((r.overhead_series >= 0) & (r.overhead_series <= 1))


def test_throughput_matches_offered_when_stable():
    cfg = uniform_config(20, 10, 1.2e-6, 8e-6)
    tr = single_queue_traffic([0.3] * 20, EXP)
    r = run(cfg, tr, horizon=0.5, warmup=0.05, seed=5)
    assert r.throughput.sum() == pytest.approx(6.0, rel=0.02)
    assert not detect_growth(r)[0]


def test_littles_law():
    cfg = uniform_config(20, 10, 1.2e-6, 8e-6)
    tr = single_queue_traffic([0.35] * 20, EXP)
    r = run(cfg, tr, horizon=0.5, warmup=0.05, seed=6, n_samples=20000)
    lam = 0.35 / 8e-6
    lhs = r.mean_backlog.mean()
    rhs = lam * np.nanmean(r.mean_wait)
    assert lhs == pytest.approx(rhs, rel=0.05)


def test_mean_vacation_equal_overheads():
    cfg = uniform_config(100, 50, 1.2e-6, 8e-6)
    tr = single_queue_traffic([0.2] * 100, EXP)
    theta = solve_mean_field(cfg, tr).theta
    assert theta == pytest.approx(2e-6)
    r = run(cfg, tr, horizon=0.05, warmup=0.005, seed=7)
    assert pooled_mean(r.vacation_stats) == pytest.approx(theta, rel=0.05)


def test_no_vacations_with_spare_wavelengths():
    cfg = uniform_config(4, 5, 1.2e-6, 8e-6)
    tr = single_queue_traffic([0.3] * 4, EXP)
    r = run(cfg, tr, horizon=0.02, warmup=0.002, seed=8)
    for v in measure_vacations(r):
        assert v.count > 0
        assert v.mean <= 1e-12
    assert any("idle" in w for w in r.warnings)


def test_overload_grows():
    cfg = uniform_config(20, 10, 1.2e-6, 8e-6)
    tr = single_queue_traffic([0.5] * 20, EXP)
    r = run(cfg, tr, horizon=0.2, warmup=0.02, seed=9)
    grows, flags = detect_growth(r)
    assert grows and any(flags.values())


# -- polling: invariants ---------------------------------------------------------------------


def mixed_case():
    onus = (
        OnuConfig(2, 1.0e-6, (QueueConfig(8e-6), QueueConfig(4e-6))),
        OnuConfig(1, 2.0e-6, (QueueConfig(8e-6),)),
        OnuConfig(3, 0.5e-6, (QueueConfig(16e-6), QueueConfig(8e-6), QueueConfig(2e-6))),
        OnuConfig(1, 1.2e-6, (QueueConfig(8e-6),)),
        OnuConfig(2, 0.0, (QueueConfig(8e-6),)),
    )
    cfg = PonConfig(3, onus)
    tr = TrafficSpec.from_intensities([[0.3, 0.2], [0.4], [0.3, 0.3, 0.1], [0.45], [0.6]], EXP)
    return cfg, tr


@pytest.mark.parametrize("policy", [RandomPolling(), RandomPolling(False), PeriodicPolling()])
def test_audit_finds_no_violations(policy):
    cfg, tr = mixed_case()
    r = run(cfg, tr, policy, horizon=0.05, warmup=0.005, seed=10, audit=True)
    assert r.events > 10_000
    assert set(r.audit) == {"transmitter_cap", "gated", "grant", "idle_with_free_transmitter", "time_order"}
    assert all(v == 0 for v in r.audit.values()), r.audit


def test_audit_under_overload():
    cfg, tr = mixed_case()
    r = run(cfg, tr.scaled(3.0), horizon=0.02, warmup=0.002, seed=11, audit=True)
    assert all(v == 0 for v in r.audit.values()), r.audit


def test_oversize_packet_still_served():
    # packets longer than the grant go out one per visit
    cfg = uniform_config(2, 1, 1e-6, 4e-6)
    tr = single_queue_traffic([0.2, 0.2], DET)
    r = run(cfg, tr, horizon=0.05, warmup=0.005, seed=12, audit=True)
    assert r.throughput.sum() == pytest.approx(0.4, rel=0.05)
    assert r.audit["grant"] == 0


def test_same_seed_same_report(tmp_path):
    cfg, tr = mixed_case()
    a = run(cfg, tr, horizon=0.01, warmup=0.001, seed=13)
    b = run(cfg, tr, horizon=0.01, warmup=0.001, seed=13)
    c = run(cfg, tr, horizon=0.01, warmup=0.001, seed=14)
    assert np.array_equal(a.backlog_work, b.backlog_work)
    assert np.array_equal(a.overhead_series, b.overhead_series)
    assert a.events == b.events
    assert not np.array_equal(a.backlog_work, c.backlog_work)
    pa = write_csv(a, str(tmp_path / "a"))
    pb = write_csv(b, str(tmp_path / "b"))
    for x, y in zip(pa, pb):
        assert filecmp.cmp(x, y, shallow=False)


def test_arrivals_do_not_depend_on_policy():
    cfg, tr = mixed_case()
    a = polling.Arrivals(tr, 0.01, 3)
    b = polling.Arrivals(tr, 0.01, 3)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.sizes, b.sizes)
    assert np.all(np.diff(a.times[a.offsets[0]:a.offsets[1]]) >= 0)


def test_periodic_zero_traffic():
    cfg, tr = idle(6, 2)
    orders = ((0, 1, 2, 3, 4, 5), (3, 4, 5, 0, 1, 2))
    r = run(cfg, tr, PeriodicPolling(orders), horizon=0.01, warmup=0.001, seed=0, audit=True)
    assert np.allclose(r.overhead_series, 1.0)
    # the two wavelengths never collide, so each ONU is visited every 3 overheads
    assert pooled_mean(r.cycle_stats) == pytest.approx(3 * 1.2e-6, rel=1e-6)


def test_periodic_rejects_bad_orders():
    cfg, tr = idle(3, 2)
    with pytest.raises(ValueError):
        run(cfg, tr, PeriodicPolling(((0, 1, 2), (0, 0, 1))), horizon=0.01)


@pytest.mark.parametrize("kw", [dict(horizon=0.0), dict(horizon=-1.0), dict(horizon=1.0, warmup=1.0), dict(horizon=1.0, window=0.0)])
def test_run_rejects_bad_times(kw):
    cfg, tr = idle(3, 2)
    with pytest.raises(ValueError):
        run(cfg, tr, **kw)


def test_run_rejects_frame_policy():
    cfg, tr = idle(3, 2)
    with pytest.raises(TypeError):
        run(cfg, tr, GponFrame(125e-6, (0.01,) * 3), horizon=0.01)


def test_warnings(monkeypatch):
    monkeypatch.setattr(polling, "RUNAWAY_PACKETS", 50)
    cfg = uniform_config(4, 2, 1.2e-6, 8e-6)
    tr = single_queue_traffic([0.9] * 4, EXP)
    r = run(cfg, tr, horizon=0.01, seed=1)
    assert any("warmup" in w for w in r.warnings)
    assert any("instability" in w for w in r.warnings)


# -- frame-based allocation -------------------------------------------------------------------


def test_max_min_single_claimant():
    alloc = max_min_allocate(np.array([5.0, 0.0]), np.ones(2), np.array([0, 1]), np.array([3.0, 3.0]), 10.0)
    assert alloc == pytest.approx([3.0, 0.0])
    alloc = max_min_allocate(np.array([2.0, 0.0]), np.ones(2), np.array([0, 1]), np.array([3.0, 3.0]), 10.0)
    assert alloc == pytest.approx([2.0, 0.0])


def test_max_min_symmetric_and_weighted():
    q_onu = np.array([0, 1])
    alloc = max_min_allocate(np.full(2, 1e9), np.ones(2), q_onu, np.full(2, 5.0), 6.0)
    assert alloc == pytest.approx([3.0, 3.0])
    alloc = max_min_allocate(np.full(2, 1e9), np.array([1.0, 3.0]), q_onu, np.full(2, 10.0), 4.0)
    assert alloc == pytest.approx([1.0, 3.0])


def test_max_min_tiny_residual_does_not_stall():
    alloc = max_min_allocate(np.array([0.0, 0.0, 1.0, 5e-324]), np.array([1.0, 1.0, 1.0, 2.0]),
                             np.zeros(4, dtype=np.int64), np.array([1.0]), 1.0)
    assert alloc[2] == pytest.approx(1.0)


@settings(max_examples=60, deadline=None)
@given(
    demand=st.lists(st.floats(0, 10), min_size=1, max_size=8),
    data=st.data(),
)
def test_max_min_feasible_and_maximal(demand, data):
    Q = len(demand)
    weight = np.array(data.draw(st.lists(st.floats(0.1, 5), min_size=Q, max_size=Q)))
    n_onus = data.draw(st.integers(1, Q))
    q_onu = np.array(data.draw(st.lists(st.integers(0, n_onus - 1), min_size=Q, max_size=Q)))
    caps = np.array(data.draw(st.lists(st.floats(0.1, 10), min_size=n_onus, max_size=n_onus)))
    capacity = data.draw(st.floats(0.1, 30))
    demand = np.array(demand)
    alloc = max_min_allocate(demand, weight, q_onu, caps, capacity)
    tol = 1e-9 * (1 + capacity)
    assert np.all(alloc >= -tol) and np.all(alloc <= demand + tol)
    assert alloc.sum() <= capacity + tol
    used = np.bincount(q_onu, weights=alloc, minlength=n_onus)
    assert np.all(used <= caps + tol)
    # no claimant can grow: demand met, ONU full or capacity exhausted
    if alloc.sum() < capacity - 1e-7:
        for q in range(Q):
            assert alloc[q] >= demand[q] - 1e-7 or used[q_onu[q]] >= caps[q_onu[q]] - 1e-7


def test_frame_mode_stable_and_unstable():
    cfg = uniform_config(10, 2, 1e-6, math.inf)
    ratios = [0.01] * 10  # capacity 2 * 0.9 = 1.8, per ONU 0.99
    stable = run_gpon_frame(cfg, single_queue_traffic([0.16] * 10, EXP), 125e-6, ratios, horizon=0.5, warmup=0.05, seed=1)
    over = run_gpon_frame(cfg, single_queue_traffic([0.2] * 10, EXP), 125e-6, ratios, horizon=0.5, warmup=0.05, seed=1)
    assert not detect_growth(stable)[0]
    assert stable.throughput.sum() == pytest.approx(1.6, rel=0.03)
    assert detect_growth(over)[0]


def test_frame_mode_errors():
    cfg, tr = idle(4, 2)
    with pytest.raises(ValueError):
        run_gpon_frame(cfg, tr, 125e-6, [0.3] * 4, horizon=0.01)
    with pytest.raises(ValueError):
        run_gpon_frame(cfg, tr, 125e-6, [0.01] * 3, horizon=0.01)
    with pytest.raises(ValueError):
        run_gpon_frame(cfg, tr, 125e-6, [0.01] * 4, horizon=1e-4)


# -- toy model -------------------------------------------------------------------------------


def test_toy_pure_death_drains():
    r = run_homogeneous(200, 100, 0.0, 1.0, 50.0, seed=1, initial=[2] * 200)
    assert r.busy_fraction[-1] == 0.0
    assert np.all(r.final_queues == 0)
    assert math.isfinite(r.hitting_time)
    assert r.busy_fraction[0] == 1.0


def test_toy_hitting_time_nan_when_never_short():
    r = run_homogeneous(10, 2, 5.0, 1.0, 1.0, seed=0, initial=[50] * 10)
    assert math.isnan(r.hitting_time)


@pytest.mark.parametrize("lam,mu", [(0.3, 0.0), (0.3, -1.0), (-0.1, 1.0)])
def test_toy_rejects_bad_rates(lam, mu):
    with pytest.raises(ValueError):
        run_homogeneous(10, 5, lam, mu, 1.0, initial=[0] * 10)


def test_toy_rejects_bad_start():
    with pytest.raises(ValueError):
        run_homogeneous(3, 1, 0.1, 1.0, 1.0, initial=[1, 2])
    with pytest.raises(ValueError):
        run_homogeneous(3, 1, 1.0, 1.0, 1.0)


def test_toy_deterministic():
    a = run_homogeneous(300, 150, 0.3, 1.0, 5.0, seed=4)
    b = run_homogeneous(300, 150, 0.3, 1.0, 5.0, seed=4)
    assert np.array_equal(a.busy_fraction, b.busy_fraction)
    assert np.array_equal(a.final_queues, b.final_queues)


def test_toy_stays_near_rho():
    r = run_homogeneous(1000, 500, 0.3, 1.0, 10.0, seed=0)
    assert r.busy_min <= r.busy_fraction.min() <= r.busy_fraction.max() <= r.busy_max
    assert r.sup_deviation() < 0.05


def test_tv_point_mass():
    assert tv_from_geometric(np.zeros(100, dtype=int), 0.0) == 0.0
    assert tv_from_geometric(np.ones(10, dtype=int), 0.0) == pytest.approx(1.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 0.9), st.lists(st.integers(0, 30), min_size=1, max_size=200))
def test_tv_is_a_distance(rho, samples):
    tv = tv_from_geometric(np.array(samples), rho)
    assert 0.0 <= tv <= 1.0 + 1e-12


def test_tv_small_for_geometric_samples():
    rng = np.random.default_rng(0)
    x = rng.geometric(0.7, 200_000) - 1
    assert tv_from_geometric(x, 0.3) < 0.01
    assert geometric_pmf(0.3, 200).sum() == pytest.approx(1.0)
