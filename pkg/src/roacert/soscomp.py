"""SOS programs and their compilation to standard-form conic problems.

A quadratic-module membership constrains an affine combination of decision
polynomials to equal ``s_0 + sum_k s_k g_k + sum_j q_j e_j`` where the s_k
are SOS (Gram-matrix PSD blocks), the g_k are inequality generators of the
set, the e_j are equality generators with free polynomial multipliers, and
every product degree is capped by the membership degree.  Compilation
matches coefficients monomial by monomial, producing one equality row per
monomial and one PSD block per SOS multiplier.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .poly import Polynomial, monomials_upto
from .sdp import SQRT2, Cone, ConicProblem, ConicSolution, smat, svec


def box_moment(alpha) -> float:
    """Integral of y^alpha over the unit box [-1, 1]^n, in closed form."""
    out = 1.0
    for a in alpha:
        out *= (1.0 + (-1.0) ** a) / (a + 1)
    return out


def gram_basis(nvars: int, half_degree: int) -> list:
    """Monomials of total degree <= half_degree, graded-lex ordered."""
    if half_degree < 0:
        raise ValueError("half_degree must be nonnegative")
    return monomials_upto(nvars, half_degree)


# ---------------------------------------------------------------------------
# Polynomials with affine decision-variable coefficients
# ---------------------------------------------------------------------------


class LinPoly:
    """Polynomial whose coefficients are affine expressions in decision vars.

    terms maps a monomial to {None: constant, var_id: coefficient, ...}.
    """

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: dict | None = None):
        self.nvars = nvars
        self.terms = {}
        if terms:
            for mono, lin in terms.items():
                clean = {k: v for k, v in lin.items() if v != 0.0}
                if clean:
                    self.terms[tuple(mono)] = clean

    @classmethod
    def from_poly(cls, p: Polynomial) -> "LinPoly":
        return cls(p.nvars, {m: {None: c} for m, c in p.terms.items()})

    @classmethod
    def constant(cls, nvars: int, value: float) -> "LinPoly":
        return cls(nvars, {(0,) * nvars: {None: value}})

    def degree(self) -> int:
        return max((sum(m) for m in self.terms), default=0)

    def _merged(self, other: "LinPoly", sign: float) -> "LinPoly":
        if self.nvars != other.nvars:
            raise ValueError("dimension mismatch")
        out = {m: dict(lin) for m, lin in self.terms.items()}
        for m, lin in other.terms.items():
            dst = out.setdefault(m, {})
            for k, v in lin.items():
                dst[k] = dst.get(k, 0.0) + sign * v
        return LinPoly(self.nvars, out)

    def __add__(self, other):
        return self._merged(other, 1.0)

    def __sub__(self, other):
        return self._merged(other, -1.0)

    def __neg__(self):
        return LinPoly(self.nvars, {m: {k: -v for k, v in lin.items()} for m, lin in self.terms.items()})

    def scale(self, c: float) -> "LinPoly":
        return LinPoly(self.nvars, {m: {k: c * v for k, v in lin.items()} for m, lin in self.terms.items()})

    def mul_poly(self, p: Polynomial) -> "LinPoly":
        """Multiply by a constant-coefficient polynomial."""
        if p.nvars != self.nvars:
            raise ValueError("dimension mismatch")
        out: dict = {}
        for m1, lin in self.terms.items():
            for m2, c in p.terms.items():
                mono = tuple(a + b for a, b in zip(m1, m2))
                dst = out.setdefault(mono, {})
                for k, v in lin.items():
                    dst[k] = dst.get(k, 0.0) + v * c
        return LinPoly(self.nvars, out)

    def differentiate(self, i: int) -> "LinPoly":
        out: dict = {}
        for mono, lin in self.terms.items():
            e = mono[i]
            if e:
                m = list(mono)
                m[i] = e - 1
                dst = out.setdefault(tuple(m), {})
                for k, v in lin.items():
                    dst[k] = dst.get(k, 0.0) + v * e
        return LinPoly(self.nvars, out)

    def fix_var(self, i: int, value: float) -> "LinPoly":
        out: dict = {}
        for mono, lin in self.terms.items():
            scale = value ** mono[i] if mono[i] else 1.0
            if scale == 0.0:
                continue
            key = mono[:i] + mono[i + 1 :]
            dst = out.setdefault(key, {})
            for k, v in lin.items():
                dst[k] = dst.get(k, 0.0) + v * scale
        return LinPoly(self.nvars - 1, out)

    def insert_var(self, i: int) -> "LinPoly":
        return LinPoly(
            self.nvars + 1,
            {m[:i] + (0,) + m[i:]: dict(lin) for m, lin in self.terms.items()},
        )

    def instantiate(self, values: dict) -> Polynomial:
        """Plug in decision-variable values, yielding a plain Polynomial."""
        terms = {}
        for mono, lin in self.terms.items():
            total = 0.0
            for k, v in lin.items():
                total += v if k is None else v * values[k]
            terms[mono] = total
        return Polynomial(self.nvars, terms)


@dataclass
class DecisionPoly:
    """A polynomial decision variable: one scalar unknown per monomial."""

    name: str
    nvars: int
    degree: int
    monos: list = field(default_factory=list)
    var_ids: list = field(default_factory=list)

    def expr(self) -> LinPoly:
        return LinPoly(self.nvars, {m: {vid: 1.0} for m, vid in zip(self.monos, self.var_ids)})


@dataclass
class QModuleMembership:
    """target in Q_degree(ineq_gens; eq_gens) over the membership's variables.

    gen_degrees optionally caps deg(s_k g_k) per generator (entry 0 is the
    plain SOS term, then one entry per inequality generator); by default all
    products are truncated at the membership degree.
    """

    name: str
    target: LinPoly
    ineq_gens: list  # list of Polynomial, each nonnegative on the set
    eq_gens: list  # list of Polynomial, each identically zero on the set
    degree: int
    gen_degrees: list | None = None
    eq_degrees: list | None = None


class SosProgram:
    """Decision polynomials, a linear objective and membership constraints."""

    def __init__(self):
        self.decisions: list[DecisionPoly] = []
        self.constraints: list[QModuleMembership] = []
        self.objective: dict[int, float] = {}
        self._next_var = 0

    def declare_poly(self, name: str, nvars: int, degree: int) -> DecisionPoly:
        monos = monomials_upto(nvars, degree)
        ids = list(range(self._next_var, self._next_var + len(monos)))
        self._next_var += len(monos)
        decl = DecisionPoly(name, nvars, degree, monos, ids)
        self.decisions.append(decl)
        return decl

    def add_membership(self, name, target, ineq_gens=(), eq_gens=(), degree=None,
                       gen_degrees=None, eq_degrees=None):
        if degree is None:
            degree = target.degree()
        if degree % 2:
            raise ValueError(f"membership {name!r}: degree {degree} is odd")
        if target.degree() > degree:
            raise ValueError(
                f"membership {name!r}: target degree {target.degree()} exceeds {degree}"
            )
        if gen_degrees is not None and len(gen_degrees) != len(ineq_gens) + 1:
            raise ValueError(f"membership {name!r}: gen_degrees needs one entry per SOS term")
        if eq_degrees is not None and len(eq_degrees) != len(eq_gens):
            raise ValueError(f"membership {name!r}: eq_degrees needs one entry per equality")
        for g in ineq_gens:
            if g.degree() > degree:
                raise ValueError(f"membership {name!r}: generator degree exceeds {degree}")
        for e in eq_gens:
            if e.degree() > degree:
                raise ValueError(f"membership {name!r}: equality generator degree exceeds {degree}")
        con = QModuleMembership(name, target, list(ineq_gens), list(eq_gens), degree,
                                gen_degrees=list(gen_degrees) if gen_degrees else None,
                                eq_degrees=list(eq_degrees) if eq_degrees else None)
        self.constraints.append(con)
        return con

    def set_objective(self, lin: dict):
        """Linear objective over decision coefficients (minimized)."""
        self.objective = dict(lin)

    @property
    def num_decision_vars(self) -> int:
        return self._next_var


@dataclass
class _GramInfo:
    gen: Polynomial  # generator (constant one for s_0)
    basis: list  # Gram basis monomials
    col_offset: int  # first conic column of the svec block


@dataclass
class _EqMultInfo:
    gen: Polynomial
    monos: list
    var_offset: int  # first free-variable id of the multiplier coefficients


@dataclass
class _MembershipMap:
    name: str
    row_offset: int
    row_monos: list
    grams: list  # list of _GramInfo
    eq_mults: list  # list of _EqMultInfo


@dataclass
class IndexMap:
    """Mapping between program entities and conic problem coordinates."""

    num_free: int
    memberships: list  # list of _MembershipMap
    decision_cols: dict  # var_id -> conic column (identity for free block)


def _mono_keys(monos, nvars, max_deg):
    """Encode exponent tuples injectively as integers for fast row lookup."""
    base = max_deg + 1
    strides = np.array([base**i for i in range(nvars)], dtype=np.int64)
    E = np.asarray(monos, dtype=np.int64).reshape(len(monos), nvars)
    return E @ strides, strides


def compile(prog: SosProgram):
    """Compile an SOS program into (ConicProblem, IndexMap)."""
    rows_total = 0
    free_total = prog.num_decision_vars
    memberships: list[_MembershipMap] = []
    cones: list[Cone] = []
    cone_cols = 0  # columns used by PSD blocks, assigned after the free block

    # First pass: layout
    plans = []
    for con in prog.constraints:
        nv = con.target.nvars
        row_monos = monomials_upto(nv, con.degree)
        grams = []
        gens = [Polynomial.constant(nv, 1.0)] + list(con.ineq_gens)
        caps = con.gen_degrees if con.gen_degrees is not None else [con.degree] * len(gens)
        for g, cap in zip(gens, caps):
            hd = (cap - g.degree()) // 2
            basis = gram_basis(nv, hd)
            grams.append(_GramInfo(g, basis, -1))
        eq_mults = []
        eq_caps = con.eq_degrees if con.eq_degrees is not None else [con.degree] * len(con.eq_gens)
        for e, cap in zip(con.eq_gens, eq_caps):
            mdeg = cap - e.degree()
            if mdeg < 0:
                raise ValueError(
                    f"membership {con.name!r}: equality generator degree exceeds membership degree"
                )
            eq_mults.append(_EqMultInfo(e, monomials_upto(nv, mdeg), -1))
        plans.append((con, row_monos, grams, eq_mults))

    for con, row_monos, grams, eq_mults in plans:
        mm = _MembershipMap(con.name, rows_total, row_monos, grams, eq_mults)
        rows_total += len(row_monos)
        for gi in grams:
            n = len(gi.basis)
            gi.col_offset = cone_cols  # temporary, shifted by free_total later
            cone_cols += n * (n + 1) // 2
            cones.append(Cone("psd", n))
        for em in eq_mults:
            em.var_offset = free_total
            free_total += len(em.monos)
        memberships.append(mm)

    for mm in memberships:
        for gi in mm.grams:
            gi.col_offset += free_total

    ncols = free_total + cone_cols
    all_cones = ([Cone("free", free_total)] if free_total else []) + cones

    rows_parts = []
    cols_parts = []
    data_parts = []
    b = np.zeros(rows_total)

    for (con, row_monos, grams, eq_mults), mm in zip(plans, memberships):
        nv = con.target.nvars
        keys, strides = _mono_keys(row_monos, nv, con.degree)
        order = np.argsort(keys, kind="stable")
        sorted_keys = keys[order]

        def lookup(gamma_keys):
            pos = np.searchsorted(sorted_keys, gamma_keys)
            if np.any(pos >= sorted_keys.size) or np.any(sorted_keys[pos] != gamma_keys):
                raise AssertionError("monomial outside membership degree")
            return order[pos] + mm.row_offset

        # Gram blocks: s_k * g_k contributions
        for gi in grams:
            E = np.asarray(gi.basis, dtype=np.int64)
            n = len(gi.basis)
            iu0, iu1 = np.triu_indices(n)
            pair_exp = E[iu0] + E[iu1]
            off_mask = iu0 != iu1
            base_val = np.where(off_mask, SQRT2, 1.0)
            cols = gi.col_offset + np.arange(iu0.size)
            for delta, cg in gi.gen.terms.items():
                gamma = pair_exp + np.asarray(delta, dtype=np.int64)
                rows = lookup(gamma @ strides)
                rows_parts.append(rows)
                cols_parts.append(cols)
                data_parts.append(base_val * cg)

        # equality multipliers: q_j * e_j contributions
        for em in eq_mults:
            Q = np.asarray(em.monos, dtype=np.int64)
            cols = em.var_offset + np.arange(len(em.monos))
            for delta, ce in em.gen.terms.items():
                gamma = Q + np.asarray(delta, dtype=np.int64)
                rows = lookup(gamma @ strides)
                rows_parts.append(rows)
                cols_parts.append(cols)
                data_parts.append(np.full(len(em.monos), ce))

        # target: decision-linear part moves to the lhs with a minus sign,
        # constants form the rhs
        t_rows, t_cols, t_data = [], [], []
        key_to_row = {int(k): int(r) for k, r in zip(keys, np.arange(len(row_monos)))}
        for mono, lin in con.target.terms.items():
            key = int(np.asarray(mono, dtype=np.int64) @ strides)
            r = key_to_row[key] + mm.row_offset
            for k, v in lin.items():
                if k is None:
                    b[r] += v
                else:
                    t_rows.append(r)
                    t_cols.append(k)
                    t_data.append(-v)
        if t_rows:
            rows_parts.append(np.asarray(t_rows, dtype=np.int64))
            cols_parts.append(np.asarray(t_cols, dtype=np.int64))
            data_parts.append(np.asarray(t_data))

    if rows_parts:
        rows = np.concatenate(rows_parts)
        cols = np.concatenate(cols_parts)
        data = np.concatenate(data_parts)
    else:
        rows = cols = data = np.zeros(0)
    A = sp.coo_matrix((data, (rows, cols)), shape=(rows_total, ncols)).tocsr()

    c = np.zeros(ncols)
    for var_id, coef in prog.objective.items():
        c[var_id] += coef

    problem = ConicProblem(c, A, b, all_cones)
    index_map = IndexMap(
        num_free=free_total,
        memberships=memberships,
        decision_cols={vid: vid for d in prog.decisions for vid in d.var_ids},
    )
    return problem, index_map


@dataclass
class RecoveredMembership:
    name: str
    grams: list  # list of (gen Polynomial, basis monos, Gram ndarray)
    eq_mults: list  # list of (gen Polynomial, multiplier Polynomial)


def recover(sol: ConicSolution, index_map: IndexMap, prog: SosProgram,
            problem: ConicProblem | None = None, polish: bool = True):
    """Reassemble decision polynomials and multiplier Grams from a solution.

    Returns (decisions: dict name -> Polynomial, memberships: list of
    RecoveredMembership).  When the compiled problem is supplied, the
    solution is first projected onto the equality constraints (minimum-norm
    correction), which tightens the coefficient identity the certificates
    are audited against.
    """
    if not np.all(np.isfinite(sol.x)):
        raise ValueError("solution contains non-finite entries")
    x = sol.x
    if polish and problem is not None and problem.neqs:
        import scipy.linalg as sla

        r = problem.b - problem.A @ x
        AAT = (problem.A @ problem.A.T).toarray()
        delta = 1e-12 * (1.0 + np.abs(np.diag(AAT)).max())
        fac = sla.cho_factor(AAT + delta * np.eye(problem.neqs), lower=True, check_finite=False)
        x = x + problem.A.T @ sla.cho_solve(fac, r, check_finite=False)
        sol = ConicSolution(
            x=x, y=sol.y, s=sol.s, status=sol.status, gap=sol.gap,
            prim_res=sol.prim_res, dual_res=sol.dual_res,
            iterations=sol.iterations, obj_primal=sol.obj_primal,
            obj_dual=sol.obj_dual, warning=sol.warning,
        )
    values = {vid: float(sol.x[vid]) for vid in range(index_map.num_free)}
    decisions = {}
    for decl in prog.decisions:
        terms = {m: values[vid] for m, vid in zip(decl.monos, decl.var_ids)}
        decisions[decl.name] = Polynomial(decl.nvars, terms)
    recovered = []
    for mm in index_map.memberships:
        grams = []
        for gi in mm.grams:
            n = len(gi.basis)
            dim = n * (n + 1) // 2
            G = smat(sol.x[gi.col_offset : gi.col_offset + dim], n)
            grams.append((gi.gen, gi.basis, G))
        eqs = []
        for em in mm.eq_mults:
            terms = {m: values[em.var_offset + k] for k, m in enumerate(em.monos)}
            nv = len(em.monos[0]) if em.monos else em.gen.nvars
            eqs.append((em.gen, Polynomial(nv, terms)))
        recovered.append(RecoveredMembership(mm.name, grams, eqs))
    return decisions, recovered


def gram_to_poly(basis, G: np.ndarray, nvars: int) -> Polynomial:
    """Polynomial b' G b for a Gram matrix over a monomial basis."""
    terms: dict = {}
    n = len(basis)
    for i in range(n):
        for j in range(n):
            mono = tuple(a + b for a, b in zip(basis[i], basis[j]))
            terms[mono] = terms.get(mono, 0.0) + G[i, j]
    return Polynomial(nvars, terms)


def project_psd(G: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix in Frobenius norm (negative eigenvalues clipped)."""
    w, V = np.linalg.eigh(0.5 * (G + G.T))
    w = np.clip(w, 0.0, None)
    return (V * w) @ V.T


def verify_membership(target: Polynomial, rec: RecoveredMembership) -> float:
    """Max-norm coefficient residual of target - sum s_k g_k - sum q_j e_j.

    SOS multipliers are rebuilt from PSD-projected Gram matrices, so the
    reported residual is achievable by a genuinely PSD certificate.
    """
    total = Polynomial.zero(target.nvars)
    for gen, basis, G in rec.grams:
        s_k = gram_to_poly(basis, project_psd(G), target.nvars)
        total = total + s_k * gen
    for gen, q in rec.eq_mults:
        total = total + q * gen
    diff = target - total
    return max((abs(c) for c in diff.terms.values()), default=0.0)
