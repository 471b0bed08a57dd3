import math

import numpy as np
import pytest
from scipy.optimize import brentq

from sliceopt.scenario import TrafficSpec, UrllcSliceSpec
from sliceopt.urllc import (
    ChannelUseVector,
    StaffingResult,
    channel_use_bound,
    finite_blocklength_bits,
    per_ue_bandwidth,
    qfunc_inv,
    recut_prbs,
    staffing_coefficient,
    urllc_total_bandwidth,
)

LN2 = math.log(2.0)


def test_qfunc_inv_reference_points():
    assert qfunc_inv(0.5) == pytest.approx(0.0, abs=1e-14)
    # frozen from scipy.special.ndtri evaluated independently
    assert qfunc_inv(2e-8) == pytest.approx(5.49085175210435, rel=1e-12)
    # relative accuracy across the needed range: invert the normal tail
    from scipy.stats import norm
    for p in (1e-12, 1e-9, 2e-8, 1e-4, 0.3, 0.5):
        assert norm.sf(qfunc_inv(p)) == pytest.approx(p, rel=1e-10)


def test_bits_at_half_error_prob_is_capacity():
    # Q^-1(0.5) = 0 removes the dispersion backoff entirely
    assert finite_blocklength_bits(100, 0.5, 3.0) == pytest.approx(200.0)


def test_bits_frozen_value():
    # frozen: direct arithmetic with Q^-1(2e-8)=5.49085..., V(1)=0.75*ln^2(2)
    assert finite_blocklength_bits(100, 2e-8, 1.0) == pytest.approx(
        67.0393467020821, rel=1e-12)


def test_bits_per_use_approach_capacity():
    snr = 3.0
    ratios = [finite_blocklength_bits(r, 1e-6, snr) / r for r in (1e2, 1e4, 1e6)]
    assert ratios[0] < ratios[1] < ratios[2] < 2.0
    assert ratios[2] == pytest.approx(2.0, abs=1e-2)


def test_channel_use_bound_trivial_and_frozen():
    assert channel_use_bound(160, 0.5, 1.0) == pytest.approx(160.0)
    assert channel_use_bound(160, 2e-8, 3.0) == pytest.approx(
        108.61203124218935, rel=1e-12)
    q2 = qfunc_inv(2e-8) ** 2
    assert channel_use_bound(0, 2e-8, 1.0) == pytest.approx(q2, rel=1e-12)


def test_channel_use_bound_dominates_exact_inversion():
    # oracle: invert the worst-dispersion bit count numerically; the
    # closed-form bound must sit at or above that root
    rng = np.random.default_rng(42)
    for _ in range(50):
        bits = rng.uniform(32, 512)
        snr = rng.uniform(0.5, 10)
        beta = 10 ** rng.uniform(-9, -3)
        c = math.log2(1 + snr)
        q = qfunc_inv(beta)
        root = brentq(lambda r: r * c - q * math.sqrt(r) * LN2 - bits, 1e-9, 1e9)
        assert channel_use_bound(bits, beta, snr) >= root - 1e-9


def test_channel_use_bound_monotonicity():
    rng = np.random.default_rng(3)
    for _ in range(30):
        bits = rng.uniform(32, 512)
        snr = rng.uniform(0.5, 10)
        beta = 10 ** rng.uniform(-9, -3)
        assert channel_use_bound(bits + 1, beta, snr) > channel_use_bound(bits, beta, snr)
        assert channel_use_bound(bits, beta, snr + 0.1) < channel_use_bound(bits, beta, snr)
        assert channel_use_bound(bits, beta / 2, snr) > channel_use_bound(bits, beta, snr)


def test_round_trip_returns_at_least_bits():
    rng = np.random.default_rng(11)
    for _ in range(100):
        bits = rng.uniform(32, 512)
        snr = rng.uniform(0.5, 10)
        beta = 10 ** rng.uniform(-9, -3)
        r = channel_use_bound(bits, beta, snr)
        assert finite_blocklength_bits(r, beta, snr) >= bits - 1e-9


def test_channel_use_bound_rejects_bad_inputs():
    with pytest.raises(ValueError):
        channel_use_bound(160, 0.6, 1.0)
    with pytest.raises(ValueError):
        channel_use_bound(160, 1e-8, 0.0)  # zero capacity


@pytest.mark.parametrize("r, d, kappa, expected", [
    (100.0, 1.0, 5.12e-4, 195312.5),
    (0.0, 1.0, 5.12e-4, 0.0),
])
def test_per_ue_bandwidth(r, d, kappa, expected):
    assert per_ue_bandwidth(r, d, kappa) == pytest.approx(expected)


def test_per_ue_bandwidth_inverse_in_deadline():
    assert per_ue_bandwidth(100, 2.0, 5.12e-4) == pytest.approx(
        per_ue_bandwidth(100, 1.0, 5.12e-4) / 2)
    # the defining relation r = kappa * omega * d holds exactly
    om = per_ue_bandwidth(123.4, 1.7, 5.12e-4)
    assert 5.12e-4 * om * 1.7 == pytest.approx(123.4, rel=1e-12)


def test_recut_prbs():
    assert recut_prbs(1.0, 1.0, 2) == (0.5, 2.0)
    assert recut_prbs(1.0, 1.0, 1) == (1.0, 1.0)
    kappa = 5.12e-4
    for q in (1, 2, 3, 5):
        om, d = recut_prbs(2e5, 0.5, q, deadline_ms=5.0)
        assert kappa * om * d == pytest.approx(kappa * 2e5 * 0.5, rel=1e-12)
    with pytest.raises(ValueError):
        recut_prbs(1.0, 1.0, 3, deadline_ms=2.0)
    with pytest.raises(ValueError):
        recut_prbs(1.0, 1.0, 2, arrival_rate=1.5)
    with pytest.raises(ValueError):
        recut_prbs(1.0, 1.0, 0)


DESK_SLICES = (UrllcSliceSpec(3, 1.0, 1e-5, 2e-8, 160.0),
               UrllcSliceSpec(5, 2.0, 1e-5, 2e-8, 160.0))
DESK_TRAFFIC = (TrafficSpec(10.0, 1.0), TrafficSpec(10.0, 1.0))


def test_staffing_coefficient_frozen():
    c = staffing_coefficient(2e-5, 1e-5, DESK_SLICES, DESK_TRAFFIC)
    assert c == pytest.approx(1.516544757308534, rel=1e-12)


def test_staffing_coefficient_blows_up_at_cap():
    c_far = staffing_coefficient(2e-5, 1e-5, DESK_SLICES, DESK_TRAFFIC)
    c_near = staffing_coefficient(1.0000001e-5, 1e-5, DESK_SLICES, DESK_TRAFFIC)
    assert c_near > 100 * c_far
    with pytest.raises(ValueError):
        staffing_coefficient(1e-5, 1e-5, DESK_SLICES, DESK_TRAFFIC)


def test_staffing_coefficient_single_ue_collapse():
    slices = (UrllcSliceSpec(1, 2.0, 1e-5, 2e-8, 160.0),)
    traffic = (TrafficSpec(10.0, 1.0),)
    lam_d = 0.1 * 2.0
    pre = (1e-5 - 2e-5 * 1e-5) / (2e-5 - 1e-5)
    assert staffing_coefficient(2e-5, 1e-5, slices, traffic) == pytest.approx(
        pre * math.sqrt(lam_d), rel=1e-12)


def test_staffing_coefficient_sqrt_homogeneity():
    base = staffing_coefficient(2e-5, 1e-5, DESK_SLICES, DESK_TRAFFIC)
    for k in (2.0, 4.0):
        scaled_traffic = tuple(TrafficSpec(t.mean_batch_interval_ms / k,
                                           t.mean_batch_size)
                               for t in DESK_TRAFFIC)
        # deadlines must stay admissible: lambda*D < 1 holds for k <= 4
        c = staffing_coefficient(2e-5, 1e-5, DESK_SLICES, scaled_traffic)
        assert c == pytest.approx(base * math.sqrt(k), rel=1e-12)


def test_total_bandwidth_frozen_single_ue():
    slices = (UrllcSliceSpec(1, 1.0, 1e-5, 2e-8, 160.0),)
    traffic = (TrafficSpec(10.0, 1.0),)
    r = ChannelUseVector.uniform(100.0, slices)
    res = urllc_total_bandwidth(r, traffic, [1.0], 5.12e-4, 1.5165)
    assert res.mean_term == pytest.approx(19531.25)
    assert res.total_bandwidth == pytest.approx(113195.19671182318, rel=1e-12)
    # no safety margin collapses to the mean
    bare = urllc_total_bandwidth(r, traffic, [1.0], 5.12e-4, 0.0)
    assert bare.total_bandwidth == pytest.approx(bare.mean_term)


def test_total_bandwidth_additive_mean():
    slices = (UrllcSliceSpec(4, 1.0, 1e-5, 2e-8, 160.0),)
    traffic = (TrafficSpec(10.0, 1.0),)
    r4 = ChannelUseVector.uniform(100.0, slices)
    res = urllc_total_bandwidth(r4, traffic, [1.0], 5.12e-4, 0.0)
    assert res.mean_term == pytest.approx(4 * 19531.25)


def test_total_bandwidth_invariant_under_recut():
    # the staffing bound depends on channel uses only; re-cutting the
    # (width, duration) plane preserves kappa*omega*d, hence the bound
    slices = DESK_SLICES
    r = ChannelUseVector.uniform(120.0, slices)
    res = urllc_total_bandwidth(r, DESK_TRAFFIC, [1.0, 2.0], 5.12e-4, 1.5165)
    kappa = 5.12e-4
    for q in (2, 4):
        r_after = ChannelUseVector({
            k: kappa * math.prod(recut_prbs(
                per_ue_bandwidth(v, [1.0, 2.0][k[1]], kappa),
                [1.0, 2.0][k[1]], q))
            for k, v in r.values.items()})
        again = urllc_total_bandwidth(r_after, DESK_TRAFFIC, [1.0, 2.0],
                                      kappa, 1.5165)
        assert again.total_bandwidth == pytest.approx(res.total_bandwidth,
                                                      rel=1e-12)


def test_staffing_result_invariant():
    with pytest.raises(ValueError):
        StaffingResult(1.0, 1.0, 1.0, 3.0)  # 3 != 1 + 1*sqrt(1)
    with pytest.raises(ValueError):
        ChannelUseVector({(0, 0): -1.0})
