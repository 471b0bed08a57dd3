import math

import numpy as np
import pytest

from sliceopt.queueing import (
    QueueClass,
    QueueConfig,
    QueueStats,
    erlang_c,
    recut_blocking_comparison,
    simulate_queue,
    staffed_queue_config,
    validate_staffing,
)
from sliceopt.scenario import TrafficSpec, desk_queue_scenario
from sliceopt.urllc import ChannelUseVector, channel_use_bound


def test_erlang_c_reference_values():
    # M/M/1 waiting probability equals the utilization
    assert erlang_c(0.5, 1) == pytest.approx(0.5, rel=1e-12)
    # two servers at unit offered load: closed form gives exactly 1/3
    assert erlang_c(1.0, 2) == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert erlang_c(0.0, 4) == 0.0
    assert erlang_c(1e-9, 4) < 1e-9


def test_erlang_c_rejects_unstable():
    with pytest.raises(ValueError):
        erlang_c(2.0, 2)
    with pytest.raises(ValueError):
        erlang_c(1.0, 0)


def test_erlang_c_monotone():
    for c in (1, 2, 4, 8):
        probs = [erlang_c(a, c) for a in np.linspace(0.1, c * 0.95, 12)]
        assert all(x < y for x, y in zip(probs, probs[1:]))
    for rho in (0.3, 0.7):
        probs = [erlang_c(rho * c, c) for c in (1, 2, 4, 8, 16)]
        assert all(x > y for x, y in zip(probs, probs[1:]))


def _poisson_config(servers, offered, service_mean=1.0, deadline=1.0):
    lam = offered / service_mean
    return QueueConfig(servers, (QueueClass(
        TrafficSpec(1.0 / lam, 1.0), deadline, (service_mean,)),), "poisson")


def test_des_matches_erlang_c_simple():
    cfg = _poisson_config(2, 1.0)
    stats = simulate_queue(cfg, horizon_ms=40000, seed=5)
    hw = 3 * math.sqrt(1 / 3 * 2 / 3 / stats.samples_observed)
    assert abs(stats.queueing_prob - 1.0 / 3.0) < max(hw, 0.01)


@pytest.mark.parametrize("servers", [1, 2, 4, 8])
@pytest.mark.parametrize("rho", [0.3, 0.5, 0.7, 0.9])
def test_des_erlang_grid(servers, rho):
    offered = rho * servers
    cfg = _poisson_config(servers, offered)
    stats = simulate_queue(cfg, horizon_ms=25000 / offered,
                           seed=servers * 100 + int(rho * 10))
    want = erlang_c(offered, servers)
    # waiting events are positively correlated within busy periods, so pad
    # the binomial interval
    hw = 6 * math.sqrt(want * (1 - want) / max(stats.samples_observed, 1))
    assert abs(stats.queueing_prob - want) < max(hw, 0.02)


def test_zero_arrivals():
    cfg = QueueConfig(2, (QueueClass(TrafficSpec(math.inf, 1.0), 1.0, (1.0,)),))
    stats = simulate_queue(cfg, horizon_ms=100, seed=0)
    assert stats.queueing_prob == 0.0
    assert stats.blocking_prob == 0.0
    assert stats.samples_observed == 0


def test_batched_mean_one_matches_poisson():
    base = dict(servers=2, offered=1.2)
    cfg_p = _poisson_config(base["servers"], base["offered"])
    cfg_b = QueueConfig(2, cfg_p.classes, "batched")  # mean batch size 1
    sp = simulate_queue(cfg_p, horizon_ms=30000, seed=1)
    sb = simulate_queue(cfg_b, horizon_ms=30000, seed=2)
    hw = 3 * (sp.confidence_halfwidth + sb.confidence_halfwidth)
    assert abs(sp.queueing_prob - sb.queueing_prob) < max(hw, 0.02)


def test_batching_inflates_queueing():
    # equal mean arrival rate, burstier arrivals wait more
    lam = 1.5
    poisson = QueueConfig(2, (QueueClass(TrafficSpec(1.0 / lam, 1.0), 1.0, (1.0,)),),
                          "poisson")
    batched = QueueConfig(2, (QueueClass(TrafficSpec(3.0 / lam, 3.0), 1.0, (1.0,)),),
                          "batched")
    sp = simulate_queue(poisson, horizon_ms=30000, seed=3)
    sb = simulate_queue(batched, horizon_ms=30000, seed=4)
    assert sb.queueing_prob > sp.queueing_prob


def test_queue_stats_invariant():
    with pytest.raises(ValueError):
        QueueStats(queueing_prob=0.1, blocking_prob=0.2,
                   confidence_halfwidth=0.0, samples_observed=10)


def test_blocking_below_queueing_in_des():
    cfg = _poisson_config(2, 1.4, deadline=0.5)
    stats = simulate_queue(cfg, horizon_ms=20000, seed=9)
    assert 0 < stats.blocking_prob <= stats.queueing_prob <= 1


def test_staffed_mapping_counts():
    sc = desk_queue_scenario()
    r = ChannelUseVector.uniform(
        channel_use_bound(160.0, 2e-8, 3.0), sc.urllc_slices)
    cfg, staffing, width = staffed_queue_config(sc, r)
    assert cfg.server_count == round(staffing.total_bandwidth / width)
    # work conservation: offered load in servers equals A / mean width
    assert cfg.offered_load == pytest.approx(staffing.mean_term / width, rel=1e-9)
    stripped, bare, _ = staffed_queue_config(sc, r, strip_margin=True)
    assert bare.safety_coeff == 0.0
    assert stripped.server_count < cfg.server_count


def test_validate_staffing_pass_and_stripped_fail():
    sc = desk_queue_scenario()
    r = ChannelUseVector.uniform(
        channel_use_bound(160.0, 2e-8, 3.0), sc.urllc_slices)
    rep = validate_staffing(sc, r, seed=2, min_arrivals=8000, recut_check=False)
    assert rep.pb_pass and rep.pq_pass
    assert rep.stats.samples_observed >= 8000
    row = rep.to_row()
    assert row["pb_pass"] and not row["stripped_margin"]
    assert "staffed bandwidth" in rep.to_text()

    bare = validate_staffing(sc, r, seed=2, min_arrivals=8000,
                             strip_margin=True, recut_check=False)
    assert not bare.pb_pass  # the safety margin is load-bearing


def test_recut_ordering_moderate_load():
    arrival = TrafficSpec(1.0 / 20.4, 2.0)  # 20.4 packets/ms, batches of 2
    orig, recut = recut_blocking_comparison(
        arrival, deadline_ms=1.0, width_hz=1e5, duration_ms=0.5, q=2,
        server_count=12, horizon_ms=4000, seed=21, batch_mode="batched",
        per_ue_rate=0.1)
    assert recut.blocking_prob <= orig.blocking_prob
    assert orig.samples_observed > 10000
