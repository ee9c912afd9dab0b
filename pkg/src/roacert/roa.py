"""Outer and inner region-of-attraction programs, solved to certificates.

Both programs share the decision pair (v, w): v is a degree-d polynomial in
time and state whose zero sublevel/superlevel set at t=0 classifies initial
conditions, and w dominates v(0,.)+1 so that the minimized box integral of w
measures the approximation.  All memberships are posed in scaled coordinates
(unit box, unit time).  The Lie-derivative membership is the one constraint
whose target degree exceeds d (by deg(f)-1); its quadratic module is
truncated at the smallest even degree that can express the target, while
every other membership stays at the hierarchy degree d.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import sdp
from .model import DynSystem, RoaQuery, ScaledSystem, scale_system
from .poly import Polynomial, monomials_upto
from .soscomp import (
    LinPoly,
    SosProgram,
    box_moment,
    compile as compile_sos,
    recover,
    verify_membership,
)

from . import __version__

MODES = ("outer", "inner")


def _even_ceil(k: int) -> int:
    return k if k % 2 == 0 else k + 1


def _box_gens(n: int) -> list:
    gens = []
    for i in range(n):
        yi = Polynomial.variable(n, i)
        gens.append(Polynomial.constant(n, 1.0) - yi * yi)
    return gens


def _time_gen(nvars: int) -> Polynomial:
    s = Polynomial.variable(nvars, 0)
    return s - s * s


def _target_quadratic(scaled: ScaledSystem, query: RoaQuery) -> Polynomial:
    """h(y) = eps^2 - ||A D y||^2 in scaled coordinates."""
    n = scaled.n
    A = query.A if query.A is not None else np.eye(n)
    Q = np.diag(scaled.D) @ A.T @ A @ np.diag(scaled.D)
    terms = {}
    for i in range(n):
        for j in range(n):
            if Q[i, j] != 0.0:
                mono = tuple(
                    (2 if k == i else 0) if i == j else int(k == i) + int(k == j)
                    for k in range(n)
                )
                terms[mono] = terms.get(mono, 0.0) + Q[i, j]
    h = Polynomial.constant(n, query.eps**2) - Polynomial(n, terms)
    return h


def _declare_vw(prog: SosProgram, n: int, d: int):
    v = prog.declare_poly("v", n + 1, d)  # variables (s, y1..yn)
    w = prog.declare_poly("w", n, d)
    prog.set_objective({vid: box_moment(m) for m, vid in zip(w.monos, w.var_ids)})
    return v, w


def _lie_derivative(v_expr: LinPoly, scaled: ScaledSystem) -> LinPoly:
    """L v = dv/ds + sum_i g_i dv/dy_i over (s, y) coordinates."""
    n = scaled.n
    lie = v_expr.differentiate(0)
    for i in range(n):
        gi = scaled.g[i]
        if not scaled.system.time_dependent:
            gi = gi.insert_var(0)
        lie = lie + v_expr.differentiate(i + 1).mul_poly(gi)
    return lie


def _lifted(polys, insert_time=True):
    return [p.insert_var(0) for p in polys] if insert_time else list(polys)


def build_outer(scaled: ScaledSystem, query: RoaQuery) -> SosProgram:
    """Outer program: the RoA is contained in {v(0, .) >= 0}.

    Memberships: (a) w on the box, (b) w - v(0,.) - 1 on the box,
    (c) -Lv on the time cylinder (circle identities as equalities),
    (d) v(1,.) on the target ellipsoid.
    """
    n = scaled.n
    d = query.d
    if d < 2:
        raise ValueError("degree d must be at least 2; raise d")
    prog = SosProgram()
    v, w = _declare_vw(prog, n, d)
    box = _box_gens(n)
    h = _target_quadratic(scaled, query)

    w_expr = w.expr()
    v0 = v.expr().fix_var(0, 0.0)
    prog.add_membership("w_pos", w_expr, box, degree=d)
    prog.add_membership("w_dom", w_expr - v0 - LinPoly.constant(n, 1.0), box, degree=d)

    lie = _lie_derivative(v.expr(), scaled)
    d_lie = _even_ceil(max(d, lie.degree()))
    cyl_gens = _lifted(box) + [_time_gen(n + 1)]
    # generator products stay truncated at the hierarchy degree d; only the
    # plain SOS term is widened to cover the Lie target's degree d+deg(f)-1
    prog.add_membership(
        "lie", -lie, cyl_gens, eq_gens=_lifted(scaled.circle_eqs), degree=d_lie,
        gen_degrees=[d_lie] + [d] * len(cyl_gens),
        eq_degrees=[d] * len(scaled.circle_eqs),
    )

    vT = v.expr().fix_var(0, 1.0)
    prog.add_membership("target", vT, [h], eq_gens=list(scaled.circle_eqs), degree=d)
    return prog


def build_inner(scaled: ScaledSystem, query: RoaQuery) -> SosProgram:
    """Inner program: {v(0, .) < 0} is contained in the RoA.

    The target membership runs over the complement of the ellipsoid within
    the box, and v must be nonnegative on every box face for the whole time
    interval (faces are substituted, not multiplied out), so trajectories
    with v(0, x) < 0 can neither leave the box nor miss the target.
    """
    n = scaled.n
    d = query.d
    if d < 2:
        raise ValueError("degree d must be at least 2; raise d")
    prog = SosProgram()
    v, w = _declare_vw(prog, n, d)
    box = _box_gens(n)
    h = _target_quadratic(scaled, query)
    complement_gen = -h  # ||A D y||^2 - eps^2 >= 0 outside the target

    w_expr = w.expr()
    v0 = v.expr().fix_var(0, 0.0)
    prog.add_membership("w_pos", w_expr, box, degree=d)
    prog.add_membership("w_dom", w_expr - v0 - LinPoly.constant(n, 1.0), box, degree=d)

    lie = _lie_derivative(v.expr(), scaled)
    d_lie = _even_ceil(max(d, lie.degree()))
    cyl_gens = _lifted(box) + [_time_gen(n + 1)]
    prog.add_membership(
        "lie", -lie, cyl_gens, eq_gens=_lifted(scaled.circle_eqs), degree=d_lie,
        gen_degrees=[d_lie] + [d] * len(cyl_gens),
        eq_degrees=[d] * len(scaled.circle_eqs),
    )

    vT = v.expr().fix_var(0, 1.0)
    prog.add_membership(
        "complement", vT, box + [complement_gen], eq_gens=list(scaled.circle_eqs), degree=d
    )

    # boundary faces: substitute y_i = +-1 into v; remaining box gens and the
    # time generator describe the face cylinder
    for i in range(n):
        for sign in (1.0, -1.0):
            v_face = v.expr().fix_var(i + 1, sign)  # vars (s, y_j for j != i)
            face_box = _box_gens(n - 1)
            gens = _lifted(face_box) + [_time_gen(n)]
            eqs = []
            for eq in scaled.circle_eqs:
                fixed = eq.fix_var(i, sign)
                if not fixed.is_zero():
                    eqs.append(fixed.insert_var(0))
            tag = "p" if sign > 0 else "m"
            prog.add_membership(f"face_{i}{tag}", v_face, gens, eq_gens=eqs, degree=d)
    return prog


@dataclass
class Certificate:
    """Stability certificate: classifier v, mass function w, objective."""

    mode: str
    d: int
    T: float
    eps: float
    A: np.ndarray
    lambda_scaled: float
    lambda_original: float
    v: Polynomial  # original coordinates, variables (t, x1..xn)
    w: Polynomial  # original coordinates, variables (x1..xn)
    v_scaled: Polynomial
    w_scaled: Polynomial
    solver_stats: dict
    membership_residuals: dict
    unreliable: bool
    system: DynSystem
    version: str = __version__

    @property
    def n(self) -> int:
        return self.system.n

    def classify_value(self, x) -> float:
        """v(0, x) in original coordinates."""
        return self.v.evaluate([0.0, *np.asarray(x, dtype=float)])


def _unscale(poly_sy: Polynomial, sys: DynSystem, T: float, with_time: bool) -> Polynomial:
    """Convert a scaled-coordinate polynomial back to original coordinates."""
    if with_time:
        D = np.concatenate(([1.0 / T], 1.0 / sys.delta_x))
        c = np.concatenate(([0.0], -sys.x_star / sys.delta_x))
    else:
        D = 1.0 / sys.delta_x
        c = -sys.x_star / sys.delta_x
    return poly_sy.compose_affine(D, c)


def solve_roa(
    sys: DynSystem,
    query: RoaQuery,
    mode: str,
    solver: str = "embedded",
    tol: float = 1e-8,
    max_iter: int = 200,
    verbose: bool = False,
) -> Certificate:
    """Scale, build, compile, solve, audit and un-scale one certification."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    target = query.target(sys)  # validates shape matrix and containment
    scaled = scale_system(sys, query.T)
    prog = build_outer(scaled, query) if mode == "outer" else build_inner(scaled, query)
    problem, imap = compile_sos(prog)
    sol = sdp.solve(problem, tol=tol, max_iter=max_iter, solver=solver, verbose=verbose)
    if sol.status in (sdp.INFEASIBLE, sdp.UNBOUNDED):
        raise RuntimeError(
            f"{mode} program reported {sol.status}; the relaxation is always "
            "feasible, so this indicates a solver failure"
        )
    decisions, recs = recover(sol, imap, prog, problem=problem)
    values = {}
    for decl in prog.decisions:
        poly = decisions[decl.name]
        for mono, vid in zip(decl.monos, decl.var_ids):
            values[vid] = poly.coefficient(mono)
    residuals = {}
    for con, rec in zip(prog.constraints, recs):
        residuals[con.name] = verify_membership(con.target.instantiate(values), rec)

    w_scaled = decisions["w"]
    v_scaled = decisions["v"]
    lambda_scaled = sum(box_moment(m) * c for m, c in w_scaled.terms.items())
    lambda_original = lambda_scaled * float(np.prod(sys.delta_x))
    v_orig = _unscale(v_scaled, sys, query.T, with_time=True)
    w_orig = _unscale(w_scaled, sys, query.T, with_time=False)

    stats = {
        "status": sol.status,
        "iterations": sol.iterations,
        "gap": sol.gap,
        "prim_res": sol.prim_res,
        "dual_res": sol.dual_res,
        "objective": sol.obj_primal,
        "solver": solver,
        "warning": sol.warning,
    }
    return Certificate(
        mode=mode,
        d=query.d,
        T=query.T,
        eps=query.eps,
        A=np.asarray(target.A, dtype=float),
        lambda_scaled=float(lambda_scaled),
        lambda_original=float(lambda_original),
        v=v_orig,
        w=w_orig,
        v_scaled=v_scaled,
        w_scaled=w_scaled,
        solver_stats=stats,
        membership_residuals=residuals,
        unreliable=sol.status != sdp.OPTIMAL,
        system=sys,
    )


def degree_sweep(sys: DynSystem, query: RoaQuery, degrees, mode: str, **solve_kw):
    """Run a list of degrees and tabulate (d, lambda, seconds, status)."""
    rows = []
    for d in degrees:
        if d % 2:
            raise ValueError(f"degree {d} is odd; the hierarchy uses even degrees")
    for d in degrees:
        q = RoaQuery(d=int(d), T=query.T, eps=query.eps, A=query.A)
        t0 = time.perf_counter()
        cert = solve_roa(sys, q, mode, **solve_kw)
        rows.append(
            {
                "d": int(d),
                "lambda": cert.lambda_scaled,
                "seconds": time.perf_counter() - t0,
                "status": cert.solver_stats["status"],
                "certificate": cert,
            }
        )
    return rows


def sweep_table(rows) -> str:
    """Text table of a degree sweep, one row per degree."""
    lines = [f"{'d':>4}  {'lambda':>12}  {'cpu_s':>9}  status"]
    for r in rows:
        lines.append(
            f"{r['d']:>4}  {r['lambda']:>12.4f}  {r['seconds']:>9.2f}  {r['status']}"
        )
    return "\n".join(lines)


def diagnose_w(cert: Certificate, resolution: int | None = None) -> dict:
    """Flat-w failure check: w close to 1 everywhere means the solve failed.

    Evaluates the scaled w on a uniform grid over the unit box; flat means
    min w >= 0.9.
    """
    n = cert.n
    if resolution is None:
        resolution = 41 if n <= 2 else max(5, int(round(3000 ** (1.0 / n))))
    axes = [np.linspace(-1.0, 1.0, resolution)] * n
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=1)
    vals = cert.w_scaled.evaluate_many(pts)
    min_w = float(vals.min())
    return {"min_w": min_w, "max_w": float(vals.max()), "flat": bool(min_w >= 0.9)}
