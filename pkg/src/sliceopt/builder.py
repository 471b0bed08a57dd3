"""Assembly of the two cone programs the pipeline solves.

``build_subproblem`` produces the per-channel-sample program of the
consensus bandwidth stage: broadband utilities and rate chains, per-RRH
power caps, and the low-latency channel-use chain feeding a square-root
staffing cone on the shared bandwidth.  ``build_minislot_problem`` produces
the per-minislot beamforming program with the bandwidth split held fixed,
which turns the broadband rate chain into a single affine threshold.

Bandwidth-like variables live in MHz inside programs (raw Hz coefficients
condition the cones badly); ``OMEGA_SCALE`` converts back.  Hermitian data
enters through the real embedding in :mod:`sliceopt.coneprog`, so every PSD
block has twice the complex dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .coneprog import (
    AffineCon,
    ConeProgram,
    ExpCon,
    LinExpr,
    RsocCon,
    SocCon,
    embed_hermitian,
)
from .urllc import qfunc_inv, staffing_coefficient

__all__ = [
    "OMEGA_SCALE",
    "omega_name",
    "v_name",
    "g_name",
    "SlackVars",
    "LiftedBeamformers",
    "build_subproblem",
    "build_minislot_problem",
    "conic_channel_use_bound",
    "dispersion_constant",
]

OMEGA_SCALE = 1e6  # Hz per program bandwidth unit
LN2 = math.log(2.0)
LNLN2 = math.log(LN2)


def omega_name(s):
    return f"omega_e{s}"


def v_name(s):
    return f"V_e{s}"


def g_name(s, i):
    return f"G_u{s}_{i}"


def dispersion_constant(beta):
    """Y = (Q^-1(beta)/ln 2)^2, precomputed once per slice."""
    return (qfunc_inv(beta) / LN2) ** 2


def conic_channel_use_bound(bits, beta, snr):
    """Channel-use bound the cone chain enforces at tightness:

        L/C + (Y / (2 C^2)) * (1 + sqrt(1 + 4 L C / Y)),   Y = (Q^-1/ln2)^2.

    Slightly looser than ``urllc.channel_use_bound`` (it carries the
    log-domain constant Y); used by the brute-force oracle and the slack
    equivalence tests so both sides of the comparison share one convention.
    """
    if snr <= 0:
        raise ValueError("snr must be positive")
    c = math.log2(1 + snr)
    y = dispersion_constant(beta)
    return bits / c + (y / (2 * c * c)) * (1 + math.sqrt(1 + 4 * bits * c / y))


@dataclass(frozen=True)
class SlackVars:
    """Names of the slack variables attached to one UE, for introspection."""

    embb: dict  # (s, i) -> {"snr": theta, "spectral_eff": lam}
    urllc: dict  # (s, i) -> {"channel_use": f, "snr": tau, ...}

    @classmethod
    def for_scenario(cls, scenario):
        embb = {}
        for s, sl in enumerate(scenario.embb_slices):
            for i in range(sl.ue_count):
                embb[(s, i)] = {
                    "snr": f"theta_e{s}_{i}",
                    "spectral_eff": f"lam_e{s}_{i}",
                }
        urllc = {}
        for s, sl in enumerate(scenario.urllc_slices):
            for i in range(sl.ue_count):
                urllc[(s, i)] = {
                    "channel_use": f"f_u{s}_{i}",
                    "snr": f"tau_u{s}_{i}",
                    "log_capacity": f"d_u{s}_{i}",
                    "nested_log": f"vphi_u{s}_{i}",
                    "sqrt_term": f"nu_u{s}_{i}",
                    "log_channel_use": f"x_u{s}_{i}",
                    "lse2": (f"mu1_u{s}_{i}", f"mu2_u{s}_{i}"),
                    "lse3": (f"zeta1_u{s}_{i}", f"zeta2_u{s}_{i}", f"zeta3_u{s}_{i}"),
                }
        return cls(embb=embb, urllc=urllc)


@dataclass(frozen=True)
class LiftedBeamformers:
    """Lifted matrix variable names plus recovery to Hermitian matrices."""

    v_names: dict  # s -> name
    g_names: dict  # (s, i) -> name

    @classmethod
    def for_scenario(cls, scenario):
        return cls(
            v_names={s: v_name(s) for s in range(scenario.embb_count)},
            g_names={(s, i): g_name(s, i)
                     for s, sl in enumerate(scenario.urllc_slices)
                     for i in range(sl.ue_count)},
        )

    def matrices(self, solution):
        """(V per eMBB slice, G per URLLC UE) as complex Hermitian arrays."""
        v = {s: solution.complex_values[n] for s, n in self.v_names.items()}
        g = {k: solution.complex_values[n] for k, n in self.g_names.items()}
        return v, g


def _rrh_selectors(scenario):
    jk = scenario.jk
    k = scenario.antennas_per_rrh
    sel = []
    for j in range(scenario.rrh_count):
        z = np.zeros((jk, jk))
        z[j * k:(j + 1) * k, j * k:(j + 1) * k] = np.eye(k)
        sel.append(embed_hermitian(z))
    return sel


def _gain_coefficient(sample, kind, s, i, denom, jk):
    h = sample.stacked(kind, s, i)
    if h.shape != (jk,):
        raise ValueError(
            f"channel vector for ({kind},{s},{i}) has shape {h.shape}, want ({jk},)")
    return embed_hermitian(np.outer(h, h.conj()) / denom)


def _check_sample(sample, scenario):
    for s, sl in enumerate(scenario.embb_slices):
        if sample.h[("embb", s)].shape[0] != sl.ue_count:
            raise ValueError(f"sample eMBB slice {s}: UE count mismatch")
    for s, sl in enumerate(scenario.urllc_slices):
        if sample.h[("urllc", s)].shape[0] != sl.ue_count:
            raise ValueError(f"sample URLLC slice {s}: UE count mismatch")


def _staffing_coeff(scenario):
    return staffing_coefficient(
        scenario.queueing_prob_cap, scenario.urllc_slices[0].blocking_prob,
        scenario.urllc_slices, scenario.traffic)


def _add_power_caps(prog, scenario, selectors, v_active, g_active):
    for j, zj in enumerate(selectors):
        expr = LinExpr(const=-scenario.power_caps_w[j])
        for name in v_active:
            expr.add_matrix(name, zj)
        for name in g_active:
            expr.add_matrix(name, zj)
        prog.add(AffineCon(expr, "le", label=f"power_cap[{j}]"))


def _add_urllc_chain(prog, sample, scenario, spill_mhz):
    """Channel-use chain for every URLLC UE plus the staffing bandwidth cone.

    ``spill_mhz`` is the LinExpr for the bandwidth left over for the
    low-latency slices, W - sum(omega), in MHz.  Returns nothing; mutates
    the program.
    """
    jk = scenario.jk
    kappa = scenario.channel_use_density
    names = SlackVars.for_scenario(scenario).urllc

    any_ue = any(sl.ue_count for sl in scenario.urllc_slices)
    if not any_ue:
        # no low-latency UEs: the budget reduces to spill >= 0
        expr = spill_mhz.scaled(-1.0)
        prog.add(AffineCon(expr, "le", label="bandwidth_affine"))
        return

    soc_members = []
    demand_mean = LinExpr()  # A(f) in MHz
    for s, sl in enumerate(scenario.urllc_slices):
        lam = scenario.traffic[s].arrival_rate
        bits = sl.packet_bits
        y = dispersion_constant(sl.decode_err_prob)
        ln_y2 = math.log(y / 2.0)
        for i in range(sl.ue_count):
            nm = names[(s, i)]
            f = prog.add_scalar(nm["channel_use"])
            tau = prog.add_scalar(nm["snr"])
            d = prog.add_scalar(nm["log_capacity"])
            vphi = prog.add_scalar(nm["nested_log"])
            nu = prog.add_scalar(nm["sqrt_term"])
            x = prog.add_scalar(nm["log_channel_use"])
            mu1, mu2 = nm["lse2"]
            z1, z2, z3 = nm["lse3"]
            prog.add_scalar(mu1)
            prog.add_scalar(z2)
            prog.add_scalar(z3)

            hhat = _gain_coefficient(sample, "urllc", s, i,
                                     scenario.snr_loss * scenario.noise_power_w, jk)
            snr_expr = LinExpr().add_matrix(g_name(s, i), -hhat).add_scalar(tau, 1.0)
            prog.add(AffineCon(snr_expr, "le", label=f"urllc_snr[{s},{i}]"))

            one = LinExpr(const=1.0)
            # nested logs linking d to the capacity at SNR tau:
            # exp(-d) <= ln(1 + tau)/ln 2
            prog.add(ExpCon(LinExpr.of(vphi), one.copy(),
                            LinExpr.of(d, -1.0, const=LNLN2),
                            label=f"urllc_cap_outer[{s},{i}]"))
            prog.add(ExpCon(LinExpr.of(tau, const=1.0), one.copy(),
                            LinExpr.of(vphi),
                            label=f"urllc_cap_inner[{s},{i}]"))

            # 2*nu >= ln(1 + 4 L exp(-d) / Y) as a two-term log-sum-exp
            prog.add(ExpCon(LinExpr.of(mu1), one.copy(),
                            LinExpr.of(nu, -2.0),
                            label=f"urllc_sqrt_lse1[{s},{i}]"))
            mu_sum = LinExpr(const=-1.0).add_scalar(mu1, 1.0)
            if bits > 0:
                prog.add_scalar(mu2)
                wexpr = (LinExpr(const=math.log(4 * bits / y))
                         .add_scalar(d, -1.0).add_scalar(nu, -2.0))
                prog.add(ExpCon(LinExpr.of(mu2), one.copy(), wexpr,
                                label=f"urllc_sqrt_lse2[{s},{i}]"))
                mu_sum.add_scalar(mu2, 1.0)
            prog.add(AffineCon(mu_sum, "le", label=f"urllc_sqrt_sum[{s},{i}]"))

            # x >= ln(L e^d + (Y/2) e^{2d} + (Y/2) e^{2d+nu}) as three terms
            zeta_sum = LinExpr(const=-1.0)
            if bits > 0:
                prog.add_scalar(z1)
                wexpr = (LinExpr(const=math.log(bits))
                         .add_scalar(d, 1.0).add_scalar(x, -1.0))
                prog.add(ExpCon(LinExpr.of(z1), one.copy(), wexpr,
                                label=f"urllc_cu_lse1[{s},{i}]"))
                zeta_sum.add_scalar(z1, 1.0)
            w2 = LinExpr(const=ln_y2).add_scalar(d, 2.0).add_scalar(x, -1.0)
            prog.add(ExpCon(LinExpr.of(z2), one.copy(), w2,
                            label=f"urllc_cu_lse2[{s},{i}]"))
            w3 = (LinExpr(const=ln_y2).add_scalar(d, 2.0)
                  .add_scalar(nu, 1.0).add_scalar(x, -1.0))
            prog.add(ExpCon(LinExpr.of(z3), one.copy(), w3,
                            label=f"urllc_cu_lse3[{s},{i}]"))
            zeta_sum.add_scalar(z2, 1.0).add_scalar(z3, 1.0)
            prog.add(AffineCon(zeta_sum, "le", label=f"urllc_cu_sum[{s},{i}]"))

            # f >= e^x closes the chain
            prog.add(ExpCon(LinExpr.of(f), one.copy(), LinExpr.of(x),
                            label=f"urllc_cu_f[{s},{i}]"))

            demand_mean.add_scalar(f, lam / (kappa * OMEGA_SCALE))
            soc_members.append(LinExpr.of(
                f, math.sqrt(lam) / (kappa * math.sqrt(sl.deadline_ms) * OMEGA_SCALE)))

    coeff = _staffing_coeff(scenario)
    radius = spill_mhz.copy()
    for n, c in demand_mean.lin.items():
        radius.add_scalar(n, -c)
    radius = radius.scaled(1.0 / coeff)
    prog.add(SocCon(radius, soc_members, label="bandwidth_soc"))


def _objective_terms(prog, sample, scenario, weight):
    """Negated utilities (minimization form), shared by both builders."""
    jk = scenario.jk
    eta = scenario.energy_coeff
    rho = scenario.slice_priority
    ident = embed_hermitian(np.eye(jk))
    obj = prog.objective.affine
    for s, sl in enumerate(scenario.embb_slices):
        obj.add_matrix(v_name(s), weight * eta * ident)
        for i in range(sl.ue_count):
            hhat = _gain_coefficient(sample, "embb", s, i, scenario.noise_power_w, jk)
            obj.add_matrix(v_name(s), -weight * hhat)
    for s, sl in enumerate(scenario.urllc_slices):
        for i in range(sl.ue_count):
            obj.add_matrix(g_name(s, i), weight * rho * eta * ident)
            hhat = _gain_coefficient(sample, "urllc", s, i,
                                     scenario.snr_loss * scenario.noise_power_w, jk)
            obj.add_matrix(g_name(s, i), -weight * rho * hhat)


def build_subproblem(sample, admm, scenario):
    """Per-sample program of the consensus bandwidth stage.

    ``admm`` carries the consensus state (global bandwidths in Hz, duals,
    penalty); pass ``None`` to build the plain single-sample problem with
    no consensus terms (the no-consensus baseline uses this).
    Minimization objective; utilities enter negated with weight 1/M.
    """
    _check_sample(sample, scenario)
    if admm is not None:
        if admm.penalty <= 0:
            raise ValueError("penalty must be positive")
        if admm.duals.shape != (scenario.embb_count, admm.sample_count):
            raise ValueError("dual array shaped |S^e| x M required")
        if len(admm.omega_global) != scenario.embb_count:
            raise ValueError("one global bandwidth per eMBB slice required")

    prog = ConeProgram()
    jk2 = 2 * scenario.jk
    names = SlackVars.for_scenario(scenario).embb

    for s in range(scenario.embb_count):
        prog.add_scalar(omega_name(s))
        prog.var_scales[omega_name(s)] = OMEGA_SCALE
        prog.add_psd(v_name(s), jk2, complex_dim=scenario.jk)
    for s, sl in enumerate(scenario.urllc_slices):
        for i in range(sl.ue_count):
            prog.add_psd(g_name(s, i), jk2, complex_dim=scenario.jk)

    weight = 1.0 / admm.sample_count if admm is not None else 1.0
    _objective_terms(prog, sample, scenario, weight)

    if admm is not None:
        m = sample.sample_index
        mu = admm.penalty
        for s in range(scenario.embb_count):
            psi = float(admm.duals[s, m])
            center = float(admm.omega_global[s]) / OMEGA_SCALE
            prog.objective.quad.append((mu / 2.0, omega_name(s)))
            prog.objective.affine.add_scalar(omega_name(s), psi - mu * center)
            prog.objective.affine.const += mu / 2.0 * center ** 2 - psi * center

    # broadband rate chain
    for s, sl in enumerate(scenario.embb_slices):
        for i in range(sl.ue_count):
            nm = names[(s, i)]
            theta = prog.add_scalar(nm["snr"])
            lam = prog.add_scalar(nm["spectral_eff"])
            hhat = _gain_coefficient(sample, "embb", s, i, scenario.noise_power_w,
                                     scenario.jk)
            snr_expr = LinExpr().add_matrix(v_name(s), -hhat).add_scalar(theta, 1.0)
            prog.add(AffineCon(snr_expr, "le", label=f"embb_snr[{s},{i}]"))
            prog.add(ExpCon(LinExpr.of(theta, const=1.0), LinExpr(const=1.0),
                            LinExpr.of(lam, LN2),
                            label=f"embb_rate_exp[{s},{i}]"))
            prog.add(RsocCon(LinExpr.of(omega_name(s)), LinExpr.of(lam),
                             [LinExpr(const=math.sqrt(2 * sl.rate_threshold_mbps))],
                             label=f"embb_rate_rsoc[{s},{i}]"))
        prog.add(AffineCon(LinExpr.of(omega_name(s), -1.0), "le",
                           label=f"omega_nonneg[{s}]"))

    selectors = _rrh_selectors(scenario)
    _add_power_caps(prog, scenario, selectors,
                    [v_name(s) for s in range(scenario.embb_count)],
                    [g_name(s, i) for s, sl in enumerate(scenario.urllc_slices)
                     for i in range(sl.ue_count)])

    spill = LinExpr(const=scenario.total_bandwidth_hz / OMEGA_SCALE)
    for s in range(scenario.embb_count):
        spill.add_scalar(omega_name(s), -1.0)
    _add_urllc_chain(prog, sample, scenario, spill)

    return prog.validate()


def build_minislot_problem(gains, omega_fixed, scenario):
    """Per-minislot beamforming program with the bandwidth split fixed.

    ``omega_fixed`` maps eMBB slice index -> Hz (or is a sequence).  The
    broadband rate chain collapses to tr(H V) >= sigma^2 (2^(C/omega) - 1);
    the low-latency chain keeps the budget W - sum(omega).
    """
    _check_sample(gains, scenario)
    omega = [float(omega_fixed[s]) for s in range(scenario.embb_count)]
    if sum(omega) > scenario.total_bandwidth_hz * (1 + 1e-12):
        raise ValueError("fixed bandwidths exceed the total budget")
    if any(w <= 0 for w in omega) and scenario.embb_count:
        raise ValueError("fixed eMBB bandwidths must be positive")

    prog = ConeProgram()
    jk2 = 2 * scenario.jk
    for s in range(scenario.embb_count):
        prog.add_psd(v_name(s), jk2, complex_dim=scenario.jk)
    for s, sl in enumerate(scenario.urllc_slices):
        for i in range(sl.ue_count):
            prog.add_psd(g_name(s, i), jk2, complex_dim=scenario.jk)

    _objective_terms(prog, gains, scenario, 1.0)

    for s, sl in enumerate(scenario.embb_slices):
        for i in range(sl.ue_count):
            hhat = _gain_coefficient(gains, "embb", s, i, scenario.noise_power_w,
                                     scenario.jk)
            exponent = sl.rate_threshold_mbps * 1e6 / omega[s]
            if exponent > 500:  # SNR floor beyond any physical headroom
                raise ValueError(
                    f"rate floor for slice {s} unreachable at {omega[s]:.3g} Hz")
            threshold = 2.0 ** exponent - 1.0
            expr = LinExpr(const=threshold).add_matrix(v_name(s), -hhat)
            prog.add(AffineCon(expr, "le", label=f"embb_rate_affine[{s},{i}]"))

    selectors = _rrh_selectors(scenario)
    _add_power_caps(prog, scenario, selectors,
                    [v_name(s) for s in range(scenario.embb_count)],
                    [g_name(s, i) for s, sl in enumerate(scenario.urllc_slices)
                     for i in range(sl.ue_count)])

    spill = LinExpr(const=(scenario.total_bandwidth_hz - sum(omega)) / OMEGA_SCALE)
    _add_urllc_chain(prog, gains, scenario, spill)

    return prog.validate()
