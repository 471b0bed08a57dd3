"""Performance indicators, feasibility audits, and parameter sweeps.

Indicators per run: bandwidth staffed for the low-latency slices (MHz),
their total transmit power over the slot (W), and the long-term total
slice utility.  Sweeps rerun the pipeline over arrival rate, slice
priority, or the energy coefficient with common random numbers per cell
and emit plot-ready CSV rows plus a JSON manifest.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .admm import run_b2o, run_no_admm, slot_utilities
from .scenario import draw_sample_set, embb_rate, place_topology, snr
from .solvers import SolverSettings

__all__ = [
    "MetricsRow",
    "ExperimentSpec",
    "slot_utility",
    "long_term_metrics",
    "run_algorithm",
    "run_sweep",
    "audit_solution",
    "check_monotone",
    "write_rows",
]

ALGORITHMS = ("b2o_admm", "no_admm")


@dataclass(frozen=True)
class MetricsRow:
    sweep_var: str
    sweep_value: float
    algorithm: str
    seed: int
    w_u_mhz: float
    e_u_w: float
    utility: float
    bandwidth_budget_mhz: float
    power_budget_w: float  # T * sum_j E_j

    def __post_init__(self):
        if self.w_u_mhz > self.bandwidth_budget_mhz * (1 + 1e-9):
            raise ValueError("W_u exceeds the total bandwidth")
        if self.e_u_w > self.power_budget_w * (1 + 1e-9):
            raise ValueError("E^u exceeds the slot power budget")

    @staticmethod
    def columns():
        return ["sweep_var", "sweep_value", "algorithm", "seed",
                "w_u_mhz", "e_u_w", "utility"]

    def as_record(self):
        return {c: getattr(self, c) for c in self.columns()}


@dataclass(frozen=True)
class ExperimentSpec:
    scenario: object
    sweep_var: str  # "lambda", "rho", or "eta"
    values: tuple
    algorithms: tuple = ALGORITHMS
    seeds: tuple = (0,)

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if not self.values:
            raise ValueError("sweep needs a nonempty value list")
        if self.sweep_var not in ("lambda", "rho", "eta"):
            raise ValueError("sweep_var must be lambda, rho, or eta")
        bad = set(self.algorithms) - set(ALGORITHMS)
        if bad:
            raise ValueError(f"unknown algorithms: {sorted(bad)}")

    def scenario_at(self, value):
        base = self.scenario
        if self.sweep_var == "lambda":
            return base.with_arrival_rate(value)
        if self.sweep_var == "rho":
            return replace(base, slice_priority=value)
        return replace(base, energy_coeff=value)


def slot_utility(solution, t, scenario):
    """Recompute (U_e, U_u) for slot ``t`` from the stored beamformers."""
    if not solution.feasible[t]:
        raise ValueError(f"slot {t} was not solved")
    return slot_utilities(solution.beamformers_v[t], solution.beamformers_g[t],
                          solution.traces[t], scenario)


def long_term_metrics(solution, scenario, sweep_var="", sweep_value=0.0,
                      seed=0):
    """Collapse a run into one row: utility averaged over minislots with the
    slice-priority weighting, total low-latency transmit power, and the mean
    staffed low-latency bandwidth."""
    t_total = len(solution.feasible)
    if t_total == 0 or not all(solution.feasible):
        missing = [t for t, ok in enumerate(solution.feasible) if not ok]
        raise ValueError(f"missing slots in solution: {missing or 'all'}")
    u_e = float(np.mean([u[0] for u in solution.utilities]))
    u_u = float(np.mean([u[1] for u in solution.utilities]))
    utility = u_e + scenario.slice_priority * u_u
    e_u = float(sum(np.vdot(g, g).real
                    for g_slot in solution.beamformers_g
                    for g in g_slot.values()))
    w_u = float(np.mean(solution.urllc_bandwidth_hz)) / 1e6
    return MetricsRow(
        sweep_var=sweep_var, sweep_value=float(sweep_value),
        algorithm=solution.algorithm, seed=int(seed),
        w_u_mhz=w_u, e_u_w=e_u, utility=utility,
        bandwidth_budget_mhz=scenario.total_bandwidth_hz / 1e6,
        power_budget_w=t_total * sum(scenario.power_caps_w),
    )


def run_algorithm(scenario, algorithm, seed=0, backend=None, **dbo_kwargs):
    """Draw topology/samples/minislot gains from the seed and run one
    algorithm end to end."""
    topology = place_topology(scenario, seed)
    traces = draw_sample_set(scenario, topology, seed + 1_000_003,
                             count=scenario.minislots_per_slot)
    if algorithm == "b2o_admm":
        samples = draw_sample_set(scenario, topology, seed)
        return run_b2o(scenario, samples, traces, backend=backend, **dbo_kwargs)
    if algorithm == "no_admm":
        return run_no_admm(scenario, traces, backend=backend)
    raise ValueError(f"unknown algorithm {algorithm!r}")


def _sweep_cell(payload):
    spec, value, algorithm, seed = payload
    scenario = spec.scenario_at(value)
    solution = run_algorithm(scenario, algorithm, seed=seed)
    row = long_term_metrics(solution, scenario, sweep_var=spec.sweep_var,
                            sweep_value=value, seed=seed)
    return row


def run_sweep(spec, out_dir=None, workers=1):
    """Run every (value, algorithm, seed) cell; returns the rows and, when
    ``out_dir`` is given, writes one CSV plus a JSON run manifest.

    Cells are independent and seeded, so they may run on a process pool.
    Pipeline failures propagate with the offending cell identified.
    """
    cells = [(spec, v, a, s)
             for v in spec.values for a in spec.algorithms for s in spec.seeds]
    rows = []
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = list(pool.map(_sweep_cell, cells))
        rows = list(futures)
    else:
        for cell in cells:
            try:
                rows.append(_sweep_cell(cell))
            except Exception as exc:
                raise RuntimeError(
                    f"sweep cell {spec.sweep_var}={cell[1]} algo={cell[2]} "
                    f"seed={cell[3]} failed: {exc}") from exc
    if out_dir is not None:
        write_rows(spec, rows, out_dir)
    return rows


def _scenario_hash(scenario):
    from .scenario import save_scenario
    import tempfile

    with tempfile.NamedTemporaryFile("w+", suffix=".scenario", delete=False) as fh:
        path = fh.name
    try:
        save_scenario(scenario, path)
        with open(path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()[:16]
    finally:
        os.unlink(path)


def write_rows(spec, rows, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    csv_path = os.path.join(out_dir, f"sweep_{spec.sweep_var}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MetricsRow.columns())
        writer.writeheader()
        for row in rows:
            writer.writerow(row.as_record())
    manifest = {
        "scenario_sha256": _scenario_hash(spec.scenario),
        "sweep_var": spec.sweep_var,
        "values": list(spec.values),
        "algorithms": list(spec.algorithms),
        "seeds": list(spec.seeds),
        "solver": SolverSettings().solver,
        "rows": len(rows),
    }
    with open(os.path.join(out_dir, f"sweep_{spec.sweep_var}.manifest.json"),
              "w") as fh:
        json.dump(manifest, fh, indent=1)
    return csv_path


def audit_solution(solution, scenario, rel_tol=1e-6, rate_rel_tol=1e-4):
    """Physical feasibility audit of a finished run at the extracted
    beamformers: per-RRH power caps, the bandwidth budget including the
    staffed low-latency share, and the broadband rate floors.

    Power and bandwidth use ``rel_tol``; rates allow ``rate_rel_tol`` for
    the rank-1 extraction leakage.  Returns a list of violation strings
    (empty when the audit passes).
    """
    problems = []
    k = scenario.antennas_per_rrh
    for t, ok in enumerate(solution.feasible):
        if not ok:
            problems.append(f"slot {t}: unsolved")
            continue
        v_slot = solution.beamformers_v[t]
        g_slot = solution.beamformers_g[t]
        trace = solution.traces[t]
        for j in range(scenario.rrh_count):
            power = 0.0
            sl_idx = slice(j * k, (j + 1) * k)
            for v in v_slot.values():
                power += float(np.linalg.norm(v[sl_idx]) ** 2)
            for g in g_slot.values():
                power += float(np.linalg.norm(g[sl_idx]) ** 2)
            cap = scenario.power_caps_w[j]
            if power > cap * (1 + rel_tol):
                problems.append(f"slot {t}: RRH {j} power {power:.6g} > cap {cap}")
        used = float(solution.omega_hz.sum()) + solution.urllc_bandwidth_hz[t]
        if used > scenario.total_bandwidth_hz * (1 + rel_tol):
            problems.append(
                f"slot {t}: bandwidth {used:.6g} Hz exceeds budget")
        for s, sl in enumerate(scenario.embb_slices):
            for i in range(sl.ue_count):
                got = embb_rate(float(solution.omega_hz[s]),
                                snr(trace.stacked("embb", s, i), v_slot[s],
                                    scenario.noise_power_w))
                want = sl.rate_threshold_mbps * 1e6
                if got < want * (1 - rate_rel_tol):
                    problems.append(
                        f"slot {t}: eMBB rate ({s},{i}) {got:.6g} < {want:.6g}")
    return problems


def check_monotone(values, direction, halfwidths=None, max_flagged=1):
    """Trend check: monotone in ``direction`` ("nondecreasing" or
    "nonincreasing") allowing up to ``max_flagged`` reversals that stay
    within the paired confidence halfwidths.

    Returns (ok, flagged_steps); a reversal beyond the joint halfwidth
    fails outright.
    """
    if direction not in ("nondecreasing", "nonincreasing"):
        raise ValueError("bad direction")
    values = list(values)
    hw = list(halfwidths) if halfwidths is not None else [0.0] * len(values)
    sign = 1.0 if direction == "nondecreasing" else -1.0
    flagged = []
    for i in range(len(values) - 1):
        step = sign * (values[i + 1] - values[i])
        tie = 1e-6 * max(abs(values[i]), abs(values[i + 1]), 1.0)
        if step >= -tie:  # monotone up to numerical ties
            continue
        if step < -(hw[i] + hw[i + 1] + tie):
            return False, flagged + [i]
        flagged.append(i)
    return len(flagged) <= max_flagged, flagged
