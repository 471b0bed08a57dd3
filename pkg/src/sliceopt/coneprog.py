"""Solver-agnostic conic program representation.

A :class:`ConeProgram` holds named scalar variables, named real-symmetric PSD
matrix variables, an objective that is affine in the matrix variables plus a
nonnegative diagonal quadratic in the scalars, and a list of constraints drawn
from: affine equality/inequality, second-order cone, rotated second-order
cone, exponential cone, and (implicit) PSD membership of the matrix blocks.

Cone conventions (matching the math, not any particular solver):

* ``ExpCon(u, v, w)``  means  u >= v * exp(w / v),  v > 0
* ``SocCon(t, x)``     means  t >= ||x||_2
* ``RsocCon(a, b, x)`` means  2*a*b >= sum(x_i^2),  a >= 0, b >= 0

Complex Hermitian matrix data is carried as real symmetric blocks of twice
the dimension via the [[Re, -Im], [Im, Re]] embedding; coefficients embedded
with :func:`embed_hermitian` preserve trace inner products exactly, and
:func:`recover_hermitian` maps a solved real block back to a Hermitian matrix
without changing any constraint or objective value.

Programs serialize to a line-oriented JSON text format (sparse coefficients)
via :meth:`ConeProgram.to_text` / :meth:`ConeProgram.from_text`, for
debugging and for feeding alternate back-ends.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "LinExpr",
    "AffineCon",
    "SocCon",
    "RsocCon",
    "ExpCon",
    "PsdVar",
    "Objective",
    "ConeProgram",
    "cone_census",
    "realify_hermitian",
    "embed_hermitian",
    "recover_hermitian",
]


class ProgramError(ValueError):
    """Malformed program: undeclared variables, bad shapes, bad senses."""


@dataclass
class LinExpr:
    """Affine functional: const + sum(coef * scalar) + sum(tr(C @ X))."""

    const: float = 0.0
    lin: dict = field(default_factory=dict)
    mat: dict = field(default_factory=dict)

    def copy(self):
        return LinExpr(self.const, dict(self.lin), {k: v.copy() for k, v in self.mat.items()})

    def add_scalar(self, name, coef):
        self.lin[name] = self.lin.get(name, 0.0) + float(coef)
        return self

    def add_matrix(self, name, coef):
        coef = np.asarray(coef, dtype=float)
        if name in self.mat:
            self.mat[name] = self.mat[name] + coef
        else:
            self.mat[name] = coef
        return self

    def scaled(self, k):
        out = self.copy()
        out.const *= k
        out.lin = {n: c * k for n, c in out.lin.items()}
        out.mat = {n: c * k for n, c in out.mat.items()}
        return out

    def value(self, scalars, matrices):
        """Evaluate at a point given as {name: float} and {name: ndarray}."""
        v = self.const
        for name, c in self.lin.items():
            v += c * scalars[name]
        for name, cmat in self.mat.items():
            v += float(np.sum(cmat * matrices[name]))
        return v

    @staticmethod
    def of(name, coef=1.0, const=0.0):
        return LinExpr(const=const, lin={name: float(coef)})


@dataclass
class AffineCon:
    """expr <= 0 (sense 'le') or expr == 0 (sense 'eq')."""

    expr: LinExpr
    sense: str = "le"
    label: str = ""


@dataclass
class SocCon:
    t: LinExpr
    x: list
    label: str = ""


@dataclass
class RsocCon:
    a: LinExpr
    b: LinExpr
    x: list
    label: str = ""


@dataclass
class ExpCon:
    u: LinExpr
    v: LinExpr
    w: LinExpr
    label: str = ""


@dataclass
class PsdVar:
    """Real symmetric PSD block; complex_dim set when it embeds a Hermitian
    variable of that (smaller) dimension."""

    name: str
    dim: int
    complex_dim: int = 0


@dataclass
class Objective:
    """Minimize affine + sum(weight * var^2); weights must be >= 0."""

    affine: LinExpr = field(default_factory=LinExpr)
    quad: list = field(default_factory=list)  # (weight, scalar var name)

    def value(self, scalars, matrices):
        v = self.affine.value(scalars, matrices)
        for w, name in self.quad:
            v += w * scalars[name] ** 2
        return v


@dataclass
class ConeProgram:
    scalar_vars: list = field(default_factory=list)
    psd_vars: list = field(default_factory=list)
    objective: Objective = field(default_factory=Objective)
    constraints: list = field(default_factory=list)
    # value_in_natural_units = var_scales[name] * program_value, for reporting
    var_scales: dict = field(default_factory=dict)

    def add_scalar(self, name):
        if name in self.scalar_vars:
            raise ProgramError(f"duplicate scalar variable {name!r}")
        self.scalar_vars.append(name)
        return name

    def add_psd(self, name, dim, complex_dim=0):
        if any(p.name == name for p in self.psd_vars):
            raise ProgramError(f"duplicate PSD variable {name!r}")
        self.psd_vars.append(PsdVar(name, int(dim), int(complex_dim)))
        return name

    def add(self, con):
        self.constraints.append(con)
        return con

    def psd(self, name):
        for p in self.psd_vars:
            if p.name == name:
                return p
        raise KeyError(name)

    # -- validation ---------------------------------------------------------

    def validate(self):
        scalars = set(self.scalar_vars)
        mats = {p.name: p.dim for p in self.psd_vars}

        def check_expr(e, where):
            for n in e.lin:
                if n not in scalars:
                    raise ProgramError(f"{where}: undeclared scalar {n!r}")
            for n, c in e.mat.items():
                if n not in mats:
                    raise ProgramError(f"{where}: undeclared matrix {n!r}")
                if c.shape != (mats[n], mats[n]):
                    raise ProgramError(f"{where}: coefficient shape {c.shape} for {n!r}")

        check_expr(self.objective.affine, "objective")
        for w, n in self.objective.quad:
            if w < 0:
                raise ProgramError(f"objective: negative quadratic weight on {n!r}")
            if n not in scalars:
                raise ProgramError(f"objective: undeclared scalar {n!r}")
        for i, con in enumerate(self.constraints):
            where = f"constraint {i} ({con.label or type(con).__name__})"
            if isinstance(con, AffineCon):
                if con.sense not in ("le", "eq"):
                    raise ProgramError(f"{where}: bad sense {con.sense!r}")
                check_expr(con.expr, where)
            elif isinstance(con, SocCon):
                check_expr(con.t, where)
                for e in con.x:
                    check_expr(e, where)
            elif isinstance(con, RsocCon):
                check_expr(con.a, where)
                check_expr(con.b, where)
                for e in con.x:
                    check_expr(e, where)
            elif isinstance(con, ExpCon):
                for e in (con.u, con.v, con.w):
                    check_expr(e, where)
            else:
                raise ProgramError(f"{where}: unknown constraint type")
        return self

    # -- point checking -----------------------------------------------------

    def violations(self, scalars, matrices, tol=1e-8):
        """Return [(label, amount)] for constraints violated by more than tol.

        PSD membership of the matrix values is checked too.  Intended for
        feasible-point audits, not for solving.
        """
        bad = []
        for i, con in enumerate(self.constraints):
            label = con.label or f"{type(con).__name__}#{i}"
            if isinstance(con, AffineCon):
                v = con.expr.value(scalars, matrices)
                amt = abs(v) if con.sense == "eq" else v
                if amt > tol:
                    bad.append((label, amt))
            elif isinstance(con, SocCon):
                t = con.t.value(scalars, matrices)
                nrm = math.sqrt(sum(e.value(scalars, matrices) ** 2 for e in con.x))
                if nrm - t > tol:
                    bad.append((label, nrm - t))
            elif isinstance(con, RsocCon):
                a = con.a.value(scalars, matrices)
                b = con.b.value(scalars, matrices)
                s = sum(e.value(scalars, matrices) ** 2 for e in con.x)
                amt = max(s - 2 * a * b, -a, -b)
                if amt > tol:
                    bad.append((label, amt))
            elif isinstance(con, ExpCon):
                u = con.u.value(scalars, matrices)
                v = con.v.value(scalars, matrices)
                w = con.w.value(scalars, matrices)
                if v > tol:
                    ratio = w / v
                    amt = math.inf if ratio > 700 else v * math.exp(ratio) - u
                else:
                    # closure of the cone at v == 0
                    amt = max(-u, w, abs(min(v, 0.0)))
                if amt > tol:
                    bad.append((label, amt))
        for p in self.psd_vars:
            lam_min = float(np.linalg.eigvalsh(matrices[p.name])[0])
            if lam_min < -tol:
                bad.append((f"psd:{p.name}", -lam_min))
        return bad

    # -- serialization ------------------------------------------------------

    def to_text(self):
        def expr(e):
            d = {"const": e.const, "lin": e.lin}
            if e.mat:
                d["mat"] = {
                    n: [[int(i), int(j), float(c[i, j])]
                        for i, j in zip(*np.nonzero(c))]
                    for n, c in e.mat.items()
                }
            return d

        cons = []
        for con in self.constraints:
            if isinstance(con, AffineCon):
                cons.append({"type": "affine", "sense": con.sense,
                             "expr": expr(con.expr), "label": con.label})
            elif isinstance(con, SocCon):
                cons.append({"type": "soc", "t": expr(con.t),
                             "x": [expr(e) for e in con.x], "label": con.label})
            elif isinstance(con, RsocCon):
                cons.append({"type": "rsoc", "a": expr(con.a), "b": expr(con.b),
                             "x": [expr(e) for e in con.x], "label": con.label})
            elif isinstance(con, ExpCon):
                cons.append({"type": "exp", "u": expr(con.u), "v": expr(con.v),
                             "w": expr(con.w), "label": con.label})
        doc = {
            "format": "sliceopt-coneprogram-1",
            "scalar_vars": self.scalar_vars,
            "psd_vars": [{"name": p.name, "dim": p.dim, "complex_dim": p.complex_dim}
                         for p in self.psd_vars],
            "objective": {"affine": expr(self.objective.affine),
                          "quad": [[w, n] for w, n in self.objective.quad]},
            "constraints": cons,
            "var_scales": self.var_scales,
        }
        return json.dumps(doc, indent=1)

    @classmethod
    def from_text(cls, text):
        doc = json.loads(text)
        if doc.get("format") != "sliceopt-coneprogram-1":
            raise ProgramError("unrecognized program format")
        dims = {p["name"]: p["dim"] for p in doc["psd_vars"]}

        def expr(d):
            e = LinExpr(const=float(d.get("const", 0.0)),
                        lin={k: float(v) for k, v in d.get("lin", {}).items()})
            for n, triples in d.get("mat", {}).items():
                c = np.zeros((dims[n], dims[n]))
                for i, j, v in triples:
                    c[i, j] = v
                e.mat[n] = c
            return e

        prog = cls(
            scalar_vars=list(doc["scalar_vars"]),
            psd_vars=[PsdVar(p["name"], p["dim"], p.get("complex_dim", 0))
                      for p in doc["psd_vars"]],
            objective=Objective(
                affine=expr(doc["objective"]["affine"]),
                quad=[(float(w), n) for w, n in doc["objective"]["quad"]],
            ),
            var_scales=dict(doc.get("var_scales", {})),
        )
        for c in doc["constraints"]:
            if c["type"] == "affine":
                prog.add(AffineCon(expr(c["expr"]), c["sense"], c.get("label", "")))
            elif c["type"] == "soc":
                prog.add(SocCon(expr(c["t"]), [expr(e) for e in c["x"]], c.get("label", "")))
            elif c["type"] == "rsoc":
                prog.add(RsocCon(expr(c["a"]), expr(c["b"]),
                                 [expr(e) for e in c["x"]], c.get("label", "")))
            elif c["type"] == "exp":
                prog.add(ExpCon(expr(c["u"]), expr(c["v"]), expr(c["w"]), c.get("label", "")))
            else:
                raise ProgramError(f"unknown constraint type {c['type']!r}")
        return prog.validate()


def cone_census(program):
    """Exact counts of every cone family and variable class in a program."""
    counts = {"exp": 0, "soc": 0, "rsoc": 0, "psd": len(program.psd_vars),
              "affine_eq": 0, "affine_ineq": 0,
              "scalar_vars": len(program.scalar_vars)}
    for con in program.constraints:
        if isinstance(con, ExpCon):
            counts["exp"] += 1
        elif isinstance(con, SocCon):
            counts["soc"] += 1
        elif isinstance(con, RsocCon):
            counts["rsoc"] += 1
        elif isinstance(con, AffineCon):
            counts["affine_eq" if con.sense == "eq" else "affine_ineq"] += 1
    return counts


# -- Hermitian <-> real symmetric embedding ----------------------------------

def realify_hermitian(H):
    """[[Re, -Im], [Im, Re]] embedding; PSD iff the Hermitian input is."""
    H = np.asarray(H, dtype=complex)
    re, im = H.real, H.imag
    return np.block([[re, -im], [im, re]])


def embed_hermitian(H):
    """Coefficient embedding: tr(embed(H) @ X_real) == tr(H @ X_complex)
    whenever X_real is recovered to X_complex by :func:`recover_hermitian`."""
    return 0.5 * realify_hermitian(H)


def recover_hermitian(X):
    """Map a solved real symmetric 2n x 2n block back to Hermitian n x n.

    Averages the block with its symplectic conjugate, so the result is
    Hermitian PSD and attains the same value in every embedded trace term.
    """
    X = np.asarray(X, dtype=float)
    n = X.shape[0] // 2
    a, b = X[:n, :n], X[:n, n:]
    c, d = X[n:, :n], X[n:, n:]
    re = 0.5 * (a + d)
    im = 0.5 * (c - b)
    out = re + 1j * im
    return 0.5 * (out + out.conj().T)
