"""Command-line front end.

Verbs:

* ``dimension``      -- closed-form staffing math only (no solver)
* ``validate-queue`` -- staff the queue and check it against the simulator
* ``solve``          -- run one scenario end to end with one algorithm
* ``sweep``          -- parameter sweep, CSV + manifest output
* ``census``         -- cone counts of the assembled programs

Exit status is nonzero whenever an invariant audit fails.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .builder import build_minislot_problem, build_subproblem
from .coneprog import cone_census
from .metrics import (
    ExperimentSpec,
    audit_solution,
    long_term_metrics,
    run_algorithm,
    run_sweep,
)
from .queueing import validate_staffing
from .scenario import (
    acceptance_scenario,
    draw_sample_set,
    load_scenario,
    paper_scenario,
    place_topology,
)
from .urllc import ChannelUseVector, channel_use_bound


def _add_common(parser):
    parser.add_argument("--scenario", help="scenario file path")
    parser.add_argument("--full-paper-config", action="store_true",
                        help="use the full-size configuration preset")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", help="output directory")


def _scenario_from(args):
    if args.full_paper_config:
        return paper_scenario(seed=args.seed)
    if args.scenario:
        return load_scenario(args.scenario)
    return acceptance_scenario(seed=args.seed)


def _cmd_dimension(args):
    scenario = _scenario_from(args)
    from .queueing import staffed_queue_config

    r = {}
    for s, sl in enumerate(scenario.urllc_slices):
        ru = channel_use_bound(sl.packet_bits, sl.decode_err_prob, args.snr)
        print(f"slice {s}: {ru:.2f} channel uses per packet at snr={args.snr}")
        for i in range(sl.ue_count):
            r[(i, s)] = ru
    config, staffing, mean_width = staffed_queue_config(
        scenario, ChannelUseVector(r))
    print(f"mean bandwidth A      : {staffing.mean_term/1e6:.4f} MHz")
    print(f"safety coefficient c  : {staffing.safety_coeff:.4f}")
    print(f"staffed bandwidth W^u : {staffing.total_bandwidth/1e6:.4f} MHz")
    print(f"equivalent servers    : {config.server_count} x {mean_width/1e3:.1f} kHz")
    return 0


def _cmd_validate_queue(args):
    scenario = _scenario_from(args)
    r = {}
    for s, sl in enumerate(scenario.urllc_slices):
        ru = channel_use_bound(sl.packet_bits, sl.decode_err_prob, args.snr)
        for i in range(sl.ue_count):
            r[(i, s)] = ru
    report = validate_staffing(scenario, ChannelUseVector(r), seed=args.seed,
                               strip_margin=args.strip_margin)
    print(report.to_text())
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "queue_validation.json"), "w") as fh:
            json.dump(report.to_row(), fh, indent=1)
    return 0 if (report.pb_pass or args.strip_margin) else 1


def _cmd_solve(args):
    scenario = _scenario_from(args)
    solution = run_algorithm(scenario, args.algo, seed=args.seed)
    row = long_term_metrics(solution, scenario, sweep_var="single",
                            sweep_value=0.0, seed=args.seed)
    if solution.admm_report is not None:
        rep = solution.admm_report
        print(f"consensus iterations  : {rep.iterations_used}"
              f" (converged={rep.converged}, final delta="
              f"{rep.residuals_mhz[-1]:.2e} MHz)")
    print(f"bandwidth split (MHz) : "
          + ", ".join(f"{w/1e6:.4f}" for w in solution.omega_hz))
    print(f"W_u (MHz)             : {row.w_u_mhz:.4f}")
    print(f"E^u (W)               : {row.e_u_w:.6f}")
    print(f"long-term utility     : {row.utility:.6g}")
    problems = audit_solution(solution, scenario)
    for p in problems:
        print("AUDIT FAIL:", p, file=sys.stderr)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"solve_{args.algo}.json"), "w") as fh:
            json.dump({"row": row.as_record(),
                       "omega_hz": solution.omega_hz.tolist(),
                       "audit_failures": problems}, fh, indent=1)
    return 1 if problems else 0


def _cmd_sweep(args):
    scenario = _scenario_from(args)
    var, _, values = args.sweep.partition("=")
    spec = ExperimentSpec(
        scenario=scenario, sweep_var=var,
        values=tuple(float(v) for v in values.split(",") if v),
        algorithms=tuple(args.algo.split(",")),
        seeds=tuple(int(s) for s in args.seeds.split(",")),
    )
    rows = run_sweep(spec, out_dir=args.out, workers=args.workers)
    for row in rows:
        print(json.dumps(row.as_record()))
    return 0


def _cmd_census(args):
    scenario = _scenario_from(args)
    topology = place_topology(scenario, args.seed)
    sample = draw_sample_set(scenario, topology, args.seed, count=1)[0]
    sub = build_subproblem(sample, None, scenario)
    print("subproblem :", json.dumps(cone_census(sub)))
    omega = np.full(scenario.embb_count,
                    scenario.total_bandwidth_hz / 2 / max(scenario.embb_count, 1))
    mini = build_minislot_problem(sample, omega, scenario)
    print("minislot   :", json.dumps(cone_census(mini)))
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "subproblem.coneprog.json"), "w") as fh:
            fh.write(sub.to_text())
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="sliceopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dimension", help="closed-form staffing math")
    _add_common(p)
    p.add_argument("--snr", type=float, default=3.0,
                   help="reference SNR for the channel-use bound")
    p.set_defaults(func=_cmd_dimension)

    p = sub.add_parser("validate-queue", help="simulator check of the staffing")
    _add_common(p)
    p.add_argument("--snr", type=float, default=3.0)
    p.add_argument("--strip-margin", action="store_true",
                   help="drop the safety margin (expected to fail)")
    p.set_defaults(func=_cmd_validate_queue)

    p = sub.add_parser("solve", help="run one scenario end to end")
    _add_common(p)
    p.add_argument("--algo", default="b2o_admm", choices=["b2o_admm", "no_admm"])
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("sweep", help="parameter sweep")
    _add_common(p)
    p.add_argument("--sweep", required=True, metavar="VAR=V1,V2,...",
                   help="one of lambda=, rho=, eta= with a value list")
    p.add_argument("--algo", default="b2o_admm,no_admm")
    p.add_argument("--seeds", default="0")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("census", help="cone counts of the assembled programs")
    _add_common(p)
    p.set_defaults(func=_cmd_census)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
