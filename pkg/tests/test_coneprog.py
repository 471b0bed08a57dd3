import math

import numpy as np
import pytest

from sliceopt.builder import (
    OMEGA_SCALE,
    SlackVars,
    build_minislot_problem,
    build_subproblem,
    conic_channel_use_bound,
    dispersion_constant,
    g_name,
    omega_name,
    v_name,
)
from sliceopt.coneprog import (
    AffineCon,
    ConeProgram,
    ExpCon,
    LinExpr,
    ProgramError,
    RsocCon,
    SocCon,
    cone_census,
    embed_hermitian,
    realify_hermitian,
    recover_hermitian,
)
from sliceopt.scenario import (
    EmbbSliceSpec,
    ScenarioConfig,
    TrafficSpec,
    UrllcSliceSpec,
    acceptance_scenario,
    draw_sample_set,
    place_topology,
)


def tiny_scenario(n_embb_ue=1, n_urllc_ue=1, seed=3):
    base = acceptance_scenario(seed=seed)
    embb = (EmbbSliceSpec(n_embb_ue, 2.0),) if n_embb_ue else ()
    urllc = ((UrllcSliceSpec(n_urllc_ue, 1.0, 1e-5, 2e-8, 160.0),)
             if n_urllc_ue else ())
    traffic = (TrafficSpec(10.0, 1.0),) if n_urllc_ue else ()
    return ScenarioConfig(**{**base.__dict__, "embb_slices": embb,
                             "urllc_slices": urllc, "traffic": traffic})


def sample_for(sc, seed=3):
    topo = place_topology(sc, seed)
    return draw_sample_set(sc, topo, seed, count=1)[0]


# -- embedding ---------------------------------------------------------------

def random_hermitian(n, seed, psd=False):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    h = 0.5 * (a + a.conj().T)
    if psd:
        h = a @ a.conj().T
    return h


def test_realify_preserves_psd_and_trace_products():
    h = random_hermitian(4, 0)
    x = random_hermitian(4, 1, psd=True)
    hr, xr = realify_hermitian(h), realify_hermitian(x)
    assert np.all(np.linalg.eigvalsh(xr) > -1e-10)
    want = float(np.real(np.trace(h @ x)))
    assert float(np.sum(embed_hermitian(h) * xr)) == pytest.approx(want, rel=1e-12)


def test_recover_round_trip_and_unstructured_recovery():
    x = random_hermitian(4, 2, psd=True)
    assert np.allclose(recover_hermitian(realify_hermitian(x)), x)
    # an arbitrary symmetric PSD block recovers to a Hermitian PSD matrix
    # attaining identical embedded trace values
    rng = np.random.default_rng(3)
    m = rng.standard_normal((8, 8))
    y = m @ m.T
    rec = recover_hermitian(y)
    assert np.allclose(rec, rec.conj().T)
    assert np.all(np.linalg.eigvalsh(rec) > -1e-10)
    h = random_hermitian(4, 4)
    assert float(np.sum(embed_hermitian(h) * y)) == pytest.approx(
        float(np.real(np.trace(h @ rec))), rel=1e-10)


# -- program plumbing ---------------------------------------------------------

def test_program_validation():
    prog = ConeProgram()
    prog.add_scalar("x")
    prog.add(AffineCon(LinExpr.of("y", 1.0), "le"))
    with pytest.raises(ProgramError):
        prog.validate()
    prog2 = ConeProgram()
    prog2.add_scalar("x")
    prog2.objective.quad.append((-1.0, "x"))
    with pytest.raises(ProgramError):
        prog2.validate()


def test_census_empty_and_additive():
    empty = ConeProgram()
    c = cone_census(empty)
    assert all(v == 0 for v in c.values())
    sc = tiny_scenario()
    prog = build_subproblem(sample_for(sc), None, sc)
    c1 = cone_census(prog)
    # union with itself doubles every constraint family
    both = ConeProgram(scalar_vars=list(prog.scalar_vars),
                       psd_vars=list(prog.psd_vars),
                       constraints=prog.constraints + prog.constraints)
    c2 = cone_census(both)
    for key in ("exp", "soc", "rsoc", "affine_eq", "affine_ineq"):
        assert c2[key] == 2 * c1[key]


def test_serialization_round_trip():
    sc = tiny_scenario()
    prog = build_subproblem(sample_for(sc), None, sc)
    text = prog.to_text()
    back = ConeProgram.from_text(text)
    assert cone_census(back) == cone_census(prog)
    assert back.to_text() == text
    assert back.scalar_vars == prog.scalar_vars


def test_violations_evaluator():
    prog = ConeProgram()
    prog.add_scalar("x")
    prog.add(AffineCon(LinExpr.of("x", 1.0, const=-1.0), "le", label="xle1"))
    prog.add(ExpCon(LinExpr.of("x"), LinExpr(const=1.0), LinExpr(const=0.0),
                    label="xexp"))
    prog.validate()
    assert prog.violations({"x": 0.5}, {}) == [("xexp", pytest.approx(0.5))]
    assert prog.violations({"x": 1.0}, {}) == []
    assert [v[0] for v in prog.violations({"x": 2.0}, {})] == ["xle1"]


# -- builder census -----------------------------------------------------------

def test_census_one_plus_one():
    sc = tiny_scenario(1, 1)
    census = cone_census(build_subproblem(sample_for(sc), None, sc))
    assert census["exp"] == 9  # 1 broadband + 8 per low-latency UE
    assert census["rsoc"] == 1
    assert census["soc"] == 1
    assert census["psd"] == 2


def test_census_no_urllc():
    sc = tiny_scenario(1, 0)
    prog = build_subproblem(sample_for(sc), None, sc)
    census = cone_census(prog)
    assert census["exp"] == 1
    assert census["soc"] == 0  # bandwidth reduces to an affine budget
    assert census["psd"] == 1
    labels = [c.label for c in prog.constraints]
    assert "bandwidth_affine" in labels


def test_psd_block_count_general():
    sc = acceptance_scenario()
    prog = build_subproblem(sample_for(sc), None, sc)
    want = sc.embb_count + sum(sl.ue_count for sl in sc.urllc_slices)
    assert cone_census(prog)["psd"] == want


def test_minislot_census_drops_embb_cones():
    sc = tiny_scenario(1, 1)
    sample = sample_for(sc)
    sub = cone_census(build_subproblem(sample, None, sc))
    mini = cone_census(build_minislot_problem(sample, [1e6], sc))
    assert mini["exp"] == sub["exp"] - 1
    assert mini["rsoc"] == 0
    assert mini["soc"] == sub["soc"]
    assert mini["psd"] == sub["psd"]


def test_minislot_rate_threshold_value():
    # omega 1 MHz at a 2 Mb/s floor: affine threshold 2^2 - 1 = 3
    sc = tiny_scenario(1, 0)
    prog = build_minislot_problem(sample_for(sc), [1e6], sc)
    con = next(c for c in prog.constraints if c.label.startswith("embb_rate_affine"))
    assert con.expr.const == pytest.approx(3.0)


def test_minislot_rejects_overcommitted_bandwidth():
    sc = tiny_scenario(1, 1)
    with pytest.raises(ValueError):
        build_minislot_problem(sample_for(sc), [5e6], sc)


def test_subproblem_rejects_bad_admm_state():
    from sliceopt.admm import AdmmState
    sc = tiny_scenario(1, 1)
    sample = sample_for(sc)
    with pytest.raises(ValueError):
        build_subproblem(sample, AdmmState(np.array([1e6]), np.zeros((1, 2)),
                                           penalty=-1.0), sc)
    state = AdmmState(np.array([1e6, 2e6]), np.zeros((2, 4)), penalty=1.0)
    with pytest.raises(ValueError):  # slice count mismatch
        build_subproblem(sample, state, sc)


def test_objective_quadratic_weights_nonnegative():
    from sliceopt.admm import AdmmState
    sc = acceptance_scenario()
    sample = sample_for(sc)
    state = AdmmState.initial(sc, 1, penalty=2.5)
    prog = build_subproblem(sample, state, sc)
    assert prog.objective.quad
    assert all(w >= 0 for w, _ in prog.objective.quad)
    assert all(n.startswith("omega") for _, n in prog.objective.quad)


def test_feasible_rank1_point_satisfies_program():
    # hand-build a modest rank-1 point and audit it against every cone
    sc = tiny_scenario(1, 1)
    sample = sample_for(sc)
    prog = build_subproblem(sample, None, sc)

    jk = sc.jk
    h_e = sample.stacked("embb", 0, 0)
    h_u = sample.stacked("urllc", 0, 0)
    p_v = 0.2
    p_g = 0.2
    v = math.sqrt(p_v) * h_e / np.linalg.norm(h_e)
    g = math.sqrt(p_g) * h_u / np.linalg.norm(h_u)

    snr_e = abs(np.vdot(h_e, v)) ** 2 / sc.noise_power_w
    snr_u = abs(np.vdot(h_u, g)) ** 2 / (sc.snr_loss * sc.noise_power_w)
    sl = sc.urllc_slices[0]
    y = dispersion_constant(sl.decode_err_prob)
    cap_bits = math.log2(1 + snr_u)
    f_val = conic_channel_use_bound(sl.packet_bits, sl.decode_err_prob, snr_u)

    nm = SlackVars.for_scenario(sc).urllc[(0, 0)]
    lam_bar = math.log2(1 + snr_e)
    omega_mhz = max(2 * sc.embb_slices[0].rate_threshold_mbps / lam_bar, 0.5)
    nu = 0.5 * math.log(1 + 4 * sl.packet_bits * cap_bits / y)
    scalars = {
        omega_name(0): omega_mhz,
        "theta_e0_0": snr_e,
        "lam_e0_0": lam_bar,
        nm["channel_use"]: f_val * 1.001,
        nm["snr"]: snr_u,
        nm["log_capacity"]: -math.log(cap_bits),
        nm["nested_log"]: math.log(1 + snr_u),
        nm["sqrt_term"]: nu,
        nm["log_channel_use"]: math.log(f_val),
        nm["lse2"][0]: math.exp(-2 * nu),
        nm["lse2"][1]: 1 - math.exp(-2 * nu),
        nm["lse3"][0]: sl.packet_bits / (cap_bits * f_val),
        nm["lse3"][1]: y / (2 * cap_bits ** 2 * f_val),
        nm["lse3"][2]: y * math.exp(nu) / (2 * cap_bits ** 2 * f_val),
    }
    matrices = {
        v_name(0): realify_hermitian(np.outer(v, v.conj())),
        g_name(0, 0): realify_hermitian(np.outer(g, g.conj())),
    }
    bad = prog.violations(scalars, matrices, tol=1e-6)
    assert bad == [], bad


def test_conic_bound_looser_than_closed_form():
    from sliceopt.urllc import channel_use_bound
    rng = np.random.default_rng(9)
    for _ in range(30):
        bits = rng.uniform(32, 512)
        snr = rng.uniform(0.5, 10)
        beta = 10 ** rng.uniform(-9, -3)
        assert conic_channel_use_bound(bits, beta, snr) >= channel_use_bound(
            bits, beta, snr) - 1e-9


def test_zero_packet_bits_skips_log_terms():
    sc = tiny_scenario(1, 1)
    sc = ScenarioConfig(**{**sc.__dict__, "urllc_slices":
                           (UrllcSliceSpec(1, 1.0, 1e-5, 2e-8, 0.0),)})
    prog = build_subproblem(sample_for(sc), None, sc)
    census = cone_census(prog)
    assert census["exp"] == 1 + 6  # mu2 and zeta1 terms are omitted
