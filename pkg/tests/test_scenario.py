import math

import numpy as np
import pytest

from sliceopt.scenario import (
    EmbbSliceSpec,
    ScenarioConfig,
    TrafficSpec,
    UrllcSliceSpec,
    acceptance_scenario,
    draw_sample_set,
    embb_rate,
    load_scenario,
    paper_scenario,
    path_loss_db,
    place_topology,
    save_scenario,
    snr,
    _shadowing_db,
    _small_scale,
)


def test_rrh_placement_equilateral():
    sc = paper_scenario()
    topo = place_topology(sc, seed=0)
    assert topo.rrh_positions.shape == (3, 2)
    # all on the circle
    radii = np.linalg.norm(topo.rrh_positions, axis=1)
    assert np.allclose(radii, 0.5)
    # pairwise chord of the inscribed equilateral triangle: 0.5*sqrt(3)
    for i in range(3):
        for j in range(i + 1, 3):
            d = np.linalg.norm(topo.rrh_positions[i] - topo.rrh_positions[j])
            assert d == pytest.approx(0.8660254037844386, rel=1e-12)


def test_single_rrh_at_angle_zero():
    sc = acceptance_scenario()
    sc = ScenarioConfig(**{**sc.__dict__, "rrh_count": 1, "power_caps_w": (1.0,)})
    topo = place_topology(sc, seed=3)
    assert np.allclose(topo.rrh_positions[0], [sc.circle_radius_km, 0.0])


def test_topology_deterministic_and_in_disk():
    sc = acceptance_scenario()
    t1 = place_topology(sc, seed=11)
    t2 = place_topology(sc, seed=11)
    for a, b in zip(t1.embb_ue_positions, t2.embb_ue_positions):
        assert np.array_equal(a, b)
    for pos in t1.embb_ue_positions + t1.urllc_ue_positions:
        assert np.all(np.linalg.norm(pos, axis=1) <= sc.circle_radius_km + 1e-12)


@pytest.mark.parametrize("d, expected", [
    (1.0, 128.1),
    (0.1, 90.5),
    (0.5, 116.7812721630343),
])
def test_path_loss_values(d, expected):
    assert path_loss_db(d) == pytest.approx(expected, abs=1e-9)


def test_path_loss_rejects_nonpositive():
    with pytest.raises(ValueError):
        path_loss_db(0.0)


def test_sample_set_count_and_determinism():
    sc = acceptance_scenario()
    topo = place_topology(sc, seed=4)
    s1 = draw_sample_set(sc, topo, seed=9)
    s2 = draw_sample_set(sc, topo, seed=9)
    assert len(s1) == sc.sample_count
    for a, b in zip(s1, s2):
        for key in a.h:
            assert np.array_equal(a.h[key], b.h[key])
    # paper-size sample count
    assert paper_scenario().sample_count == 100


def test_small_scale_unit_power():
    rng = np.random.default_rng(123)
    draws = _small_scale(rng, (100000,))
    mean_power = float(np.mean(np.abs(draws) ** 2))
    assert abs(mean_power - 1.0) < 0.02


def test_shadowing_std_near_10db():
    rng = np.random.default_rng(7)
    sh = _shadowing_db(rng, (200000,))
    assert abs(np.std(sh) - 10.0) / 10.0 < 0.05


@pytest.mark.parametrize("h, w, sigma2, loss, expected", [
    ([1, 0], [2, 0], 1.0, 1.0, 4.0),
    ([1, 0], [2, 0], 1.0, 1.5, 8.0 / 3.0),
    ([1, 1], [1, 1], 1.0, 1.0, 4.0),
])
def test_snr_examples(h, w, sigma2, loss, expected):
    assert snr(h, w, sigma2, loss) == pytest.approx(expected, rel=1e-12)


def test_snr_phase_invariance_and_loss_strictness():
    rng = np.random.default_rng(0)
    h = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    w = rng.standard_normal(4) + 1j * rng.standard_normal(4)
    base = snr(h, w, 1e-3)
    for theta in (0.3, 1.1, 2.9):
        assert snr(h, np.exp(1j * theta) * w, 1e-3) == pytest.approx(base, rel=1e-12)
    assert snr(h, w, 1e-3, loss=1.5) < base


def test_snr_length_mismatch():
    with pytest.raises(ValueError):
        snr([1, 0], [1, 0, 0], 1.0)


@pytest.mark.parametrize("bw, s, expected", [
    (1e6, 3.0, 2e6),
    (5e5, 0.0, 0.0),
    (2.0, 1.0, 2.0),
])
def test_embb_rate_values(bw, s, expected):
    assert embb_rate(bw, s) == pytest.approx(expected, rel=1e-12)


def test_embb_rate_monotone():
    rng = np.random.default_rng(5)
    for _ in range(50):
        bw, s = rng.uniform(0, 1e7), rng.uniform(0, 100)
        assert embb_rate(bw + 1.0, s) >= embb_rate(bw, s)
        assert embb_rate(bw, s + 0.1) >= embb_rate(bw, s)


def test_traffic_spec_consistency():
    t = TrafficSpec(10.0, 2.0)
    assert t.arrival_rate == pytest.approx(0.2)
    with pytest.raises(ValueError):
        TrafficSpec(10.0, 2.0, arrival_rate=0.5)


def test_scenario_validation():
    sc = acceptance_scenario()
    with pytest.raises(ValueError):  # snr loss must exceed 1
        ScenarioConfig(**{**sc.__dict__, "snr_loss": 1.0})
    with pytest.raises(ValueError):  # queueing cap must exceed blocking target
        ScenarioConfig(**{**sc.__dict__, "queueing_prob_cap": 1e-6})
    with pytest.raises(ValueError):  # stability premise lambda * D < 1
        ScenarioConfig(**{**sc.__dict__, "traffic": (TrafficSpec(1.0, 2.0),)})
    with pytest.raises(ValueError):  # one power cap per RRH
        ScenarioConfig(**{**sc.__dict__, "power_caps_w": (1.0,)})


def test_scenario_file_round_trip(tmp_path):
    sc = paper_scenario(seed=42)
    path = tmp_path / "case.scenario"
    save_scenario(sc, path)
    back = load_scenario(path)
    assert back == sc


def test_slice_spec_invariants():
    with pytest.raises(ValueError):
        EmbbSliceSpec(0, 1.0)
    with pytest.raises(ValueError):
        UrllcSliceSpec(1, 1.0, 0.5, 0.6, 160)  # decode error must be < 0.5
