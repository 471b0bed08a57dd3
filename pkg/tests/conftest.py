import logging

import numpy as np
import pytest

logging.getLogger("sliceopt").setLevel(logging.ERROR)

_CRITERION_LINES = []


def record_criterion(number, name, passed, detail=""):
    line = f"ACCEPTANCE {number} {name}: {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    _CRITERION_LINES.append(line)
    print(line, flush=True)
    return passed


def pytest_terminal_summary(terminalreporter):
    if _CRITERION_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _CRITERION_LINES:
            terminalreporter.write_line(line)


def delivered_utility(solution, scenario):
    """Slot-average utility with unserved slots contributing zero."""
    vals = [(u[0] + scenario.slice_priority * u[1]) if ok else 0.0
            for u, ok in zip(solution.utilities, solution.feasible)]
    return float(np.mean(vals))


def paired_cell(seed):
    """One paired replication: (delivered B2O, delivered baseline, extras)."""
    from sliceopt.metrics import audit_solution, run_algorithm
    from sliceopt.scenario import acceptance_scenario

    sc = acceptance_scenario(seed=seed)
    b2o = run_algorithm(sc, "b2o_admm", seed=seed)
    base = run_algorithm(sc, "no_admm", seed=seed)
    return {
        "seed": seed,
        "b2o": delivered_utility(b2o, sc),
        "baseline": delivered_utility(base, sc),
        "b2o_slots": sum(b2o.feasible),
        "baseline_slots": sum(base.feasible),
        "converged": b2o.admm_report.converged,
        "iterations": b2o.admm_report.iterations_used,
        "audit_failures": len(audit_solution(b2o, sc)),
    }


@pytest.fixture(scope="session")
def acceptance_run():
    """The shared end-to-end run on the default scenario (seed 7): both
    algorithms, reused by the convergence, audit, ordering, and sweep
    criteria."""
    from sliceopt.metrics import run_algorithm
    from sliceopt.scenario import acceptance_scenario

    sc = acceptance_scenario(seed=7)
    b2o = run_algorithm(sc, "b2o_admm", seed=7)
    base = run_algorithm(sc, "no_admm", seed=7)
    return {"scenario": sc, "b2o": b2o, "no_admm": base, "seed": 7}
