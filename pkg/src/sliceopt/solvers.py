"""Conic solver backend contract, brute-force oracle, and rank-1 recovery.

The backend contract is: give a :class:`~sliceopt.coneprog.ConeProgram`,
receive a :class:`SolverSolution` with a definitive status.  The reference
backend translates the program into cvxpy and hands it to an off-the-shelf
conic solver (Clarabel by default, SCS as the alternate); nothing outside
this module touches a solver library.  Passing a ``reuse_key`` caches the
compiled problem and re-solves with updated scalar objective coefficients,
which is what makes the consensus iteration loop cheap.

``brute_force_solve`` is the independent oracle for single-RRH,
single-antenna scenarios where beamformers collapse to nonnegative scalar
powers: a refinable grid search over powers and bandwidth.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .builder import (
    OMEGA_SCALE,
    dispersion_constant,
    omega_name,
    _staffing_coeff,
)
from .coneprog import (
    AffineCon,
    ExpCon,
    RsocCon,
    SocCon,
    recover_hermitian,
)

__all__ = [
    "SolverSettings",
    "SolverSolution",
    "SolveError",
    "BruteForceInfeasible",
    "CvxpyBackend",
    "solve",
    "brute_force_solve",
    "rank1_gap",
    "Rank1Report",
    "extract_rank1",
]


log = logging.getLogger(__name__)


class SolveError(RuntimeError):
    """Backend reported a numerical failure (never swallowed silently)."""


class BruteForceInfeasible(RuntimeError):
    """Grid search found no feasible point."""


@dataclass(frozen=True)
class SolverSettings:
    """Backend-agnostic knobs, mapped onto each solver's options.

    On a hard failure of the primary solver the backend retries once with
    ``fallback_solver`` (set it to None to surface failures immediately).
    """

    solver: str = "CLARABEL"
    fallback_solver: str = "SCS"
    feas_tol: float = 1e-8
    fallback_feas_tol: float = 1e-8
    max_iters: int = 100000
    verbose: bool = False
    extra: dict = field(default_factory=dict)

    def solver_kwargs(self, solver=None, fallback=False):
        name = (solver or self.solver).upper()
        tol = self.fallback_feas_tol if fallback else self.feas_tol
        kw = dict(self.extra)
        if name == "CLARABEL":
            kw.setdefault("tol_feas", tol)
            kw.setdefault("tol_gap_abs", tol)
            kw.setdefault("tol_gap_rel", tol)
            kw.setdefault("max_iter", min(self.max_iters, 10000))
        elif name == "SCS":
            kw.setdefault("eps_abs", max(tol, 1e-9))
            kw.setdefault("eps_rel", max(tol, 1e-9))
            kw.setdefault("max_iters", min(self.max_iters, 50000))
        return kw


@dataclass
class SolverSolution:
    """status is one of optimal / infeasible / unbounded / numerical_failure;
    on optimal, every constraint holds within the backend tolerance."""

    status: str
    objective: float = math.nan
    scalar_values: dict = field(default_factory=dict)
    matrix_values: dict = field(default_factory=dict)  # real symmetric blocks
    complex_values: dict = field(default_factory=dict)  # recovered Hermitian
    raw_status: str = ""
    inaccurate: bool = False

    @property
    def ok(self):
        return self.status == "optimal"


_STATUS_MAP = {
    "optimal": ("optimal", False),
    "optimal_inaccurate": ("optimal", True),
    "infeasible": ("infeasible", False),
    "infeasible_inaccurate": ("infeasible", True),
    "unbounded": ("unbounded", False),
    "unbounded_inaccurate": ("unbounded", True),
}


class CvxpyBackend:
    """Reference backend: cvxpy translation to an interior-point conic solver.

    One instance may be shared; compiled-problem caching is keyed by the
    caller-supplied ``reuse_key`` and assumes (and spot-checks) that reused
    programs differ only in scalar objective coefficients and constants.
    """

    def __init__(self, settings=None):
        self.settings = settings or SolverSettings()
        self._cache = {}

    # -- translation --------------------------------------------------------

    def _expr(self, e, scal, mats, row_scale=1.0):
        import cvxpy as cp

        terms = []
        if e.const:
            terms.append(cp.Constant(float(e.const) * row_scale))
        for name, c in e.lin.items():
            if c:
                terms.append((c * row_scale) * scal[name])
        for name, c in e.mat.items():
            terms.append(cp.sum(cp.multiply(c * row_scale, mats[name])))
        if not terms:
            return cp.Constant(0.0)
        return sum(terms)

    @staticmethod
    def _row_scale(*exprs):
        """Per-constraint equilibration factor.  Every cone here is a ray
        (invariant under uniform positive scaling), so dividing a whole
        constraint by its largest coefficient is exact; channel gains over
        noise reach 1e9 and destroy conditioning otherwise."""
        biggest = 0.0
        for e in exprs:
            for c in e.lin.values():
                biggest = max(biggest, abs(c))
            for c in e.mat.values():
                biggest = max(biggest, float(np.abs(c).max()))
        return 1.0 / biggest if biggest > 1.0 else 1.0

    @staticmethod
    def _objective_scale(program):
        """Normalization so the minimized objective is O(1); utilities carry
        channel-gain-over-noise coefficients that otherwise push the
        objective orders of magnitude past the solver's absolute gap."""
        scale = 1.0
        for c in program.objective.affine.mat.values():
            scale = max(scale, float(np.abs(c).max()))
        for c in program.objective.affine.lin.values():
            scale = max(scale, abs(c))
        return scale

    def _compile(self, program, parametric):
        import cvxpy as cp

        scal = {n: cp.Variable(name=n) for n in program.scalar_vars}
        mats = {p.name: cp.Variable((p.dim, p.dim), PSD=True, name=p.name)
                for p in program.psd_vars}

        cons = []
        for con in program.constraints:
            if isinstance(con, AffineCon):
                expr = self._expr(con.expr, scal, mats,
                                  self._row_scale(con.expr))
                cons.append(expr == 0 if con.sense == "eq" else expr <= 0)
            elif isinstance(con, SocCon):
                rs = self._row_scale(con.t, *con.x)
                cons.append(cp.SOC(self._expr(con.t, scal, mats, rs),
                                   cp.hstack([self._expr(e, scal, mats, rs)
                                              for e in con.x])))
            elif isinstance(con, RsocCon):
                rs = self._row_scale(con.a, con.b, *con.x)
                a = self._expr(con.a, scal, mats, rs)
                b = self._expr(con.b, scal, mats, rs)
                xs = [self._expr(e, scal, mats, rs) for e in con.x]
                # 2ab >= ||x||^2, a,b >= 0
                #   <=>  ||[sqrt(2) x; a-b]|| <= a+b, a >= 0, b >= 0
                cons.append(cp.SOC(a + b,
                                   cp.hstack([math.sqrt(2.0) * e for e in xs]
                                             + [a - b])))
                cons.append(a >= 0)
                cons.append(b >= 0)
            elif isinstance(con, ExpCon):
                # our (u, v, w): u >= v*exp(w/v); cvxpy ExpCone(x, y, z):
                # z >= y*exp(x/y); e^w terms are not scale-invariant unless
                # the whole triple is scaled, which the ray property allows
                rs = self._row_scale(con.u, con.v, con.w)
                cons.append(cp.constraints.ExpCone(
                    self._expr(con.w, scal, mats, rs),
                    self._expr(con.v, scal, mats, rs),
                    self._expr(con.u, scal, mats, rs)))

        scale = self._objective_scale(program)
        params = None
        obj_terms = []
        if parametric:
            params = {"const": cp.Parameter(name="obj_const")}
            params["const"].value = float(program.objective.affine.const) / scale
            obj_terms.append(params["const"])
            for name in program.scalar_vars:
                p = cp.Parameter(name=f"obj_lin[{name}]")
                p.value = float(program.objective.affine.lin.get(name, 0.0)) / scale
                params[name] = p
                obj_terms.append(p * scal[name])
            for idx, (w, name) in enumerate(program.objective.quad):
                p = cp.Parameter(nonneg=True, name=f"obj_quad[{idx}]")
                p.value = w / scale
                params[f"quad{idx}"] = p
                obj_terms.append(p * cp.square(scal[name]))
        else:
            obj_terms.append(cp.Constant(float(program.objective.affine.const) / scale))
            for name, c in program.objective.affine.lin.items():
                if c:
                    obj_terms.append((c / scale) * scal[name])
            for w, name in program.objective.quad:
                obj_terms.append((w / scale) * cp.square(scal[name]))
        for name, c in program.objective.affine.mat.items():
            obj_terms.append(cp.sum(cp.multiply(c / scale, mats[name])))

        problem = cp.Problem(cp.Minimize(sum(obj_terms)), cons)
        signature = (tuple(program.scalar_vars),
                     tuple((p.name, p.dim) for p in program.psd_vars),
                     len(program.constraints),
                     tuple(name for _, name in program.objective.quad))
        return {"problem": problem, "scal": scal, "mats": mats, "scale": scale,
                "params": params, "signature": signature}

    # -- solving ------------------------------------------------------------

    def solve(self, program, reuse_key=None, warm_start=True):
        program.validate()
        if reuse_key is None:
            entry = self._compile(program, parametric=False)
        else:
            entry = self._cache.get(reuse_key)
            if entry is None:
                entry = self._compile(program, parametric=True)
                self._cache[reuse_key] = entry
            else:
                signature = (tuple(program.scalar_vars),
                             tuple((p.name, p.dim) for p in program.psd_vars),
                             len(program.constraints),
                             tuple(name for _, name in program.objective.quad))
                if signature != entry["signature"]:
                    raise SolveError(f"reuse_key {reuse_key!r}: program structure changed")
                scale = entry["scale"]
                entry["params"]["const"].value = float(
                    program.objective.affine.const) / scale
                for name in program.scalar_vars:
                    entry["params"][name].value = float(
                        program.objective.affine.lin.get(name, 0.0)) / scale
                for idx, (w, _) in enumerate(program.objective.quad):
                    entry["params"][f"quad{idx}"].value = w / scale

        failure = None
        for attempt, solver_name in enumerate(
                [self.settings.solver, self.settings.fallback_solver]):
            if solver_name is None or (attempt and solver_name == self.settings.solver):
                continue
            if attempt:  # fresh compile: the cached problem may be poisoned
                entry = self._compile(program, parametric=False)
                log.warning("primary solver failed (%s); retrying with %s",
                            failure, solver_name)
            problem = entry["problem"]
            try:
                with warnings.catch_warnings():
                    warnings.filterwarnings("ignore",
                                            message="Solution may be inaccurate")
                    problem.solve(solver=solver_name, warm_start=warm_start,
                                  verbose=self.settings.verbose,
                                  **self.settings.solver_kwargs(solver_name,
                                                                fallback=bool(attempt)))
            except Exception as exc:
                failure = f"{solver_name}: {exc}"
                continue
            status, inaccurate = _STATUS_MAP.get(problem.status,
                                                 ("numerical_failure", True))
            if status == "numerical_failure":
                failure = f"{solver_name}: status {problem.status!r}"
                continue
            sol = SolverSolution(status=status, raw_status=problem.status,
                                 inaccurate=inaccurate)
            if status == "optimal":
                sol.objective = float(problem.value) * entry["scale"]
                sol.scalar_values = {n: float(v.value)
                                     for n, v in entry["scal"].items()}
                for p in program.psd_vars:
                    x = np.asarray(entry["mats"][p.name].value, dtype=float)
                    x = 0.5 * (x + x.T)
                    sol.matrix_values[p.name] = x
                    if p.complex_dim:
                        sol.complex_values[p.name] = recover_hermitian(x)
            return sol
        # no solver produced a definitive status: surface, never swallow
        raise SolveError(f"conic backends failed: {failure}")


_DEFAULT_BACKEND = None
_ACCURATE_BACKENDS = None


def default_backend():
    global _DEFAULT_BACKEND
    if _DEFAULT_BACKEND is None:
        _DEFAULT_BACKEND = CvxpyBackend()
    return _DEFAULT_BACKEND


def accurate_backends():
    """Profile ladder for solves whose lifted blocks feed eigenvalue-gap
    checks and feasibility audits: interior-point with the static
    regularization floor lowered (the default floor parks lambda_2 near
    1e-8 and masks rank-1 tightness), then progressively safer fallbacks
    ending at the robust defaults."""
    global _ACCURATE_BACKENDS
    if _ACCURATE_BACKENDS is None:
        _ACCURATE_BACKENDS = [
            CvxpyBackend(SolverSettings(
                feas_tol=1e-11, fallback_solver=None,
                extra={"static_regularization_constant": 1e-13,
                       "iterative_refinement_reltol": 1e-13,
                       "iterative_refinement_abstol": 1e-15})),
            # programs arrive row-equilibrated already; the solver's own
            # Ruiz pass sometimes destabilizes the low-regularization KKT
            CvxpyBackend(SolverSettings(
                feas_tol=1e-10, fallback_solver=None,
                extra={"static_regularization_constant": 1e-13,
                       "equilibrate_enable": False})),
            CvxpyBackend(SolverSettings(
                feas_tol=1e-10, fallback_solver=None,
                extra={"static_regularization_constant": 1e-12})),
            CvxpyBackend(SolverSettings(solver="SCS", feas_tol=1e-10,
                                        max_iters=30000, fallback_solver=None)),
            CvxpyBackend(SolverSettings(fallback_solver=None)),
        ]
    return _ACCURATE_BACKENDS


def solve_accurate(program):
    """Solve through the accuracy ladder.

    Returns the first strictly optimal solution; when every profile comes
    back inaccurate, returns the candidate with the smallest measured
    constraint violation (an inaccurate flag alone says nothing about how
    usable the point is)."""
    best = None
    best_violation = math.inf
    failure = None
    for be in accurate_backends():
        try:
            sol = be.solve(program)
        except SolveError as exc:
            failure = str(exc)
            continue
        if sol.raw_status == "optimal":
            return sol
        if sol.status == "optimal":
            bad = program.violations(sol.scalar_values, sol.matrix_values,
                                     tol=0.0)
            worst = max((amt for _, amt in bad), default=0.0)
            if worst < best_violation:
                best, best_violation = sol, worst
        elif best is None:
            best = sol
    if best is not None:
        return best
    raise SolveError(f"accuracy ladder exhausted: {failure}")


def solve(program, backend=None, reuse_key=None, warm_start=True):
    """Solve a cone program through the (pluggable) backend."""
    be = backend or default_backend()
    return be.solve(program, reuse_key=reuse_key, warm_start=warm_start)


# -- brute-force oracle -------------------------------------------------------


def brute_force_solve(sample, admm, scenario, grid_points=200,
                      refinement_passes=1):
    """Grid-search oracle for J=K=1 scenarios (at most two UEs).

    Beamformers reduce to nonnegative per-entity transmit powers; the
    search refines once around the best cell.  Mirrors the subproblem
    objective exactly (same 1/M weighting and consensus terms), so its
    value is directly comparable to ``solve(build_subproblem(...))``.
    """
    if scenario.jk != 1:
        raise ValueError("oracle requires J = K = 1")
    n_embb_ue = sum(sl.ue_count for sl in scenario.embb_slices)
    n_urllc_ue = sum(sl.ue_count for sl in scenario.urllc_slices)
    if n_embb_ue + n_urllc_ue > 2:
        raise ValueError("oracle requires at most two UEs in total")

    sigma = scenario.noise_power_w
    cap = scenario.power_caps_w[0]
    w_hz = scenario.total_bandwidth_hz
    eta = scenario.energy_coeff
    rho = scenario.slice_priority
    kappa = scenario.channel_use_density
    weight = 1.0 / admm.sample_count if admm is not None else 1.0

    embb_gain = [np.array([abs(sample.stacked("embb", s, i)[0]) ** 2 / sigma
                           for i in range(sl.ue_count)])
                 for s, sl in enumerate(scenario.embb_slices)]
    urllc = [(s, i, abs(sample.stacked("urllc", s, i)[0]) ** 2
              / (scenario.snr_loss * sigma))
             for s, sl in enumerate(scenario.urllc_slices)
             for i in range(sl.ue_count)]
    coeff = _staffing_coeff(scenario) if urllc else 0.0

    # axes: one power per eMBB slice, one per URLLC UE, one bandwidth per slice
    axes = ([("pe", s, 0.0, cap) for s in range(scenario.embb_count)]
            + [("pu", k, 0.0, cap) for k in range(len(urllc))]
            + [("om", s, 0.0, w_hz) for s in range(scenario.embb_count)])

    def evaluate(grids):
        vals = dict(zip([(a[0], a[1]) for a in axes],
                        np.meshgrid(*grids, indexing="ij", sparse=True)))
        feasible = np.ones((), dtype=bool)
        total_power = 0.0
        for s in range(scenario.embb_count):
            total_power = total_power + vals[("pe", s)]
        for k in range(len(urllc)):
            total_power = total_power + vals[("pu", k)]
        feasible = feasible & (total_power <= cap * (1 + 1e-12))

        obj = 0.0
        for s, sl in enumerate(scenario.embb_slices):
            p = vals[("pe", s)]
            om = vals[("om", s)]
            for g in embb_gain[s]:
                rate = om * np.log2(1 + g * p)
                feasible = feasible & (rate >= sl.rate_threshold_mbps * 1e6)
            obj = obj + weight * (eta - float(np.sum(embb_gain[s]))) * p

        bw_used = 0.0
        for s in range(scenario.embb_count):
            bw_used = bw_used + vals[("om", s)]
        mean_hz = 0.0
        var_hz2 = 0.0
        for k, (s, i, g) in enumerate(urllc):
            p = vals[("pu", k)]
            sl = scenario.urllc_slices[s]
            lam = scenario.traffic[s].arrival_rate
            yd = dispersion_constant(sl.decode_err_prob)
            snr = g * p
            with np.errstate(divide="ignore", invalid="ignore"):
                c_bits = np.maximum(np.log2(1 + snr), 1e-300)
                f = np.where(
                    snr > 0,
                    sl.packet_bits / c_bits
                    + (yd / (2 * c_bits ** 2))
                    * (1 + np.sqrt(1 + 4 * sl.packet_bits * c_bits / yd)),
                    np.inf)
            mean_hz = mean_hz + lam * f / kappa
            var_hz2 = var_hz2 + lam * f ** 2 / (kappa ** 2 * sl.deadline_ms)
            obj = obj + weight * rho * (eta - g) * p
        if urllc:
            feasible = feasible & (bw_used + mean_hz + coeff * np.sqrt(var_hz2)
                                   <= w_hz * (1 + 1e-12))
        else:
            feasible = feasible & (bw_used <= w_hz * (1 + 1e-12))

        if admm is not None:
            m = sample.sample_index
            mu = admm.penalty
            for s in range(scenario.embb_count):
                psi = float(admm.duals[s, m])
                center = float(admm.omega_global[s]) / OMEGA_SCALE
                dev = vals[("om", s)] / OMEGA_SCALE - center
                obj = obj + psi * dev + mu / 2.0 * dev ** 2

        obj = np.broadcast_to(np.asarray(obj, dtype=float),
                              tuple(len(g) for g in grids)).copy()
        feasible = np.broadcast_to(feasible, obj.shape)
        obj[~feasible] = np.inf
        return obj

    bounds = [(lo, hi) for (_, _, lo, hi) in axes]
    best_val = np.inf
    best_point = None
    for _pass in range(1 + refinement_passes):
        grids = [np.linspace(lo, hi, grid_points) for lo, hi in bounds]
        obj = evaluate(grids)
        idx = np.unravel_index(np.argmin(obj), obj.shape)
        if not np.isfinite(obj[idx]):
            raise BruteForceInfeasible("no feasible grid point")
        best_val = float(obj[idx])
        best_point = [float(g[i]) for g, i in zip(grids, idx)]
        new_bounds = []
        for (lo, hi), g, i in zip(bounds, grids, idx):
            step = g[1] - g[0] if len(g) > 1 else (hi - lo)
            new_bounds.append((max(lo, g[i] - 1.5 * step),
                               min(hi, g[i] + 1.5 * step)))
        bounds = new_bounds

    values = {}
    for (kind, key, _, _), x in zip(axes, best_point):
        if kind == "pe":
            values[f"power_e{key}_w"] = x
        elif kind == "pu":
            s, i, _ = urllc[key]
            values[f"power_u{s}_{i}_w"] = x
        else:
            values[f"{omega_name(key)}_hz"] = x
    return SolverSolution(status="optimal", objective=best_val,
                          scalar_values=values, raw_status="grid")


# -- rank-1 recovery ----------------------------------------------------------


@dataclass
class Rank1Report:
    """Eigenvalue gap lambda_2/lambda_1 and which extraction path ran."""

    gap: float
    extraction_method: str


def rank1_gap(matrix, hermitian_tol=1e-8):
    """lambda_2 / lambda_1 of a Hermitian PSD matrix (0 when lambda_1 = 0)."""
    m = np.asarray(matrix)
    scale = max(float(np.abs(m).max()), 1.0)
    if not np.allclose(m, m.conj().T, atol=hermitian_tol * scale):
        raise ValueError("input matrix is not Hermitian")
    lam = np.linalg.eigvalsh(m)
    top = max(float(lam[-1]), 0.0)
    if top <= 0.0:
        return 0.0
    second = max(float(lam[-2]), 0.0) if len(lam) > 1 else 0.0
    return second / top


def extract_rank1(matrix, gap_tolerance=1e-6, draws=100, seed=0,
                  power_caps=None, block_size=None, score=None):
    """Recover a beamformer vector from a lifted PSD matrix.

    When the eigenvalue gap is within tolerance, returns sqrt(lambda_1) *
    u_1.  Otherwise falls back to Gaussian randomization: ``draws`` samples
    from the matrix-as-covariance, each rescaled so its per-RRH block powers
    (blocks of ``block_size`` antennas, caps from ``power_caps`` or from the
    matrix's own block powers) stay feasible, best scoring draw returned.

    Returns (vector, Rank1Report); output is defined modulo a global phase.
    """
    m = np.asarray(matrix, dtype=complex)
    scale0 = max(float(np.abs(m).max()), 1.0)
    if not np.allclose(m, m.conj().T, atol=1e-8 * scale0):
        raise ValueError("input matrix is not Hermitian")
    lam, vec = np.linalg.eigh(m)
    if lam[-1] <= 0:
        raise ValueError("matrix has no positive eigenvalue to extract")
    if lam[0] < -(1e-3 * lam[-1] + 1e-12):
        raise ValueError("matrix is not PSD within tolerance")

    gap = max(float(lam[-2]), 0.0) / float(lam[-1]) if len(lam) > 1 else 0.0
    if gap <= gap_tolerance:
        v = math.sqrt(float(lam[-1])) * vec[:, -1]
        return v, Rank1Report(gap=gap, extraction_method="principal_eig")

    rng = np.random.default_rng(seed)
    n = m.shape[0]
    root = vec @ np.diag(np.sqrt(np.clip(lam, 0.0, None)))
    blk = block_size or n

    def block_powers(v):
        return np.array([float(np.linalg.norm(v[j:j + blk]) ** 2)
                         for j in range(0, n, blk)])

    if power_caps is not None:
        budget = np.asarray(power_caps, dtype=float)
        allow_upscale = True
    else:
        # stay within the lifted matrix's own per-block power allocation
        budget = np.array([max(float(np.trace(m[j:j + blk, j:j + blk]).real), 0.0)
                           for j in range(0, n, blk)])
        allow_upscale = False

    if score is None:
        def score(v):
            return float(np.real(np.vdot(v, m @ v)))

    best, best_score = None, -np.inf
    for _ in range(draws):
        z = root @ ((rng.standard_normal(n) + 1j * rng.standard_normal(n))
                    / math.sqrt(2))
        pw = block_powers(z)
        if pw.max() <= 0:
            continue
        factor = math.sqrt(float(np.min(budget / np.maximum(pw, 1e-300))))
        if not allow_upscale:
            factor = min(factor, 1.0)
        z = z * factor
        sc = score(z)
        if sc > best_score:
            best, best_score = z, sc
    if best is None:
        raise RuntimeError("no feasible randomized draw")
    return best, Rank1Report(gap=gap, extraction_method="randomization")
