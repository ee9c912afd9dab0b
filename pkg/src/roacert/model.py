"""Problem data model: dynamics, state box, target set, recasting, scaling.

Every solve runs in scaled coordinates: the state box maps onto the unit
box [-1, 1]^n and the horizon onto unit time, which is the standard
mitigation for ill-conditioned LMIs and makes reported objective values
comparable across systems.
"""

from __future__ import annotations

import configparser
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .poly import (
    Polynomial,
    PolyParseError,
    ast_to_polynomial,
    parse_expr,
    taylor_trig,
    compose_univariate,
)

EQUILIBRIUM_TOL = 1e-6
CIRCLE_TOL = 1e-9
DET_TOL = 1e-6


@dataclass
class DynSystem:
    """Polynomial dynamics with an equilibrium and a box of half-widths.

    f is a list of n polynomials in the n state variables (autonomous) or
    in (t, x1..xn) with time first when time_dependent is set.  angle_pairs
    lists (sin, cos) index pairs of recast phase variables, 0-based.
    """

    f: list
    x_star: np.ndarray
    delta_x: np.ndarray
    angle_pairs: list = field(default_factory=list)
    var_names: list = field(default_factory=list)
    time_dependent: bool = False
    name: str = ""

    def __post_init__(self):
        self.x_star = np.asarray(self.x_star, dtype=float).ravel()
        self.delta_x = np.asarray(self.delta_x, dtype=float).ravel()
        n = self.x_star.size
        if len(self.f) != n or self.delta_x.size != n:
            raise ValueError("f, x_star and delta_x must agree on the dimension")
        expected_nvars = n + 1 if self.time_dependent else n
        for i, p in enumerate(self.f):
            if p.nvars != expected_nvars:
                raise ValueError(f"f[{i}] has {p.nvars} variables, expected {expected_nvars}")
        if np.any(self.delta_x <= 0):
            raise ValueError("delta_x must be positive componentwise")
        if not self.var_names:
            self.var_names = [f"x{i + 1}" for i in range(n)]
        self.angle_pairs = [tuple(p) for p in self.angle_pairs]
        for i, j in self.angle_pairs:
            if not (0 <= i < n and 0 <= j < n and i != j):
                raise ValueError(f"angle pair ({i}, {j}) out of range")
            r = self.x_star[i] ** 2 + self.x_star[j] ** 2
            if abs(r - 1.0) > CIRCLE_TOL:
                raise ValueError(
                    f"equilibrium violates sin^2+cos^2=1 on pair ({i}, {j}): {r!r}"
                )
        res = self.equilibrium_residual()
        if res > EQUILIBRIUM_TOL:
            warnings.warn(
                f"equilibrium residual {res:.3e} exceeds {EQUILIBRIUM_TOL:g}",
                stacklevel=2,
            )

    @property
    def n(self) -> int:
        return self.x_star.size

    def eval_f(self, x, t: float = 0.0) -> np.ndarray:
        point = list(x) if not self.time_dependent else [t, *x]
        return np.array([p.evaluate(point) for p in self.f])

    def equilibrium_residual(self) -> float:
        return float(np.abs(self.eval_f(self.x_star)).max())

    def in_box(self, x) -> bool:
        return bool(np.all(np.abs(np.asarray(x) - self.x_star) <= self.delta_x))


@dataclass
class TargetEllipsoid:
    """Target set {x : ||A (x - x_star)|| <= eps} with det(A) = 1."""

    A: np.ndarray
    eps: float

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise ValueError("A must be square")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        det = float(np.linalg.det(self.A))
        if abs(det - 1.0) > DET_TOL:
            raise ValueError(f"det(A) = {det!r}, must equal 1")

    def check_inside_box(self, x_star, delta_x):
        """Reject targets poking out of the box: eps*||row_i(A^-1)|| <= dx_i."""
        Ainv = np.linalg.inv(self.A)
        reach = self.eps * np.linalg.norm(Ainv, axis=1)
        delta_x = np.asarray(delta_x, dtype=float)
        if np.any(reach > delta_x * (1 + 1e-12)):
            i = int(np.argmax(reach / delta_x))
            raise ValueError(
                f"target ellipsoid exceeds the box along coordinate {i}: "
                f"reach {reach[i]:.6g} > delta {delta_x[i]:.6g}"
            )

    def distance(self, x, x_star) -> float:
        return float(np.linalg.norm(self.A @ (np.asarray(x, dtype=float) - x_star)))


@dataclass
class RoaQuery:
    """One certification request: degree, horizon, tolerance, shape matrix."""

    d: int
    T: float
    eps: float
    A: np.ndarray | None = None

    def __post_init__(self):
        if self.d % 2 or self.d < 2:
            raise ValueError("degree d must be a positive even integer")
        if self.T <= 0:
            raise ValueError("horizon T must be positive")
        if self.eps <= 0:
            raise ValueError("epsilon must be positive")
        if self.A is not None:
            self.A = np.asarray(self.A, dtype=float)

    def target(self, sys: DynSystem) -> TargetEllipsoid:
        A = self.A if self.A is not None else np.eye(sys.n)
        tgt = TargetEllipsoid(A, self.eps)
        tgt.check_inside_box(sys.x_star, sys.delta_x)
        return tgt


@dataclass
class ScaledSystem:
    """Dynamics in unit-box coordinates y = (x - x*)/dx with unit time."""

    g: list
    D: np.ndarray
    T: float
    circle_eqs: list
    system: DynSystem

    @property
    def n(self) -> int:
        return self.system.n


def scale_system(sys: DynSystem, T: float) -> ScaledSystem:
    """Map the box onto [-1,1]^n and [0,T] onto [0,1].

    g_i(y) = (T / dx_i) * f_i(x* + D y); a time variable, when present, is
    substituted by T*s.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    res = sys.equilibrium_residual()
    if res > EQUILIBRIUM_TOL:
        warnings.warn(f"scaling a system with equilibrium residual {res:.3e}", stacklevel=2)
    n = sys.n
    if sys.time_dependent:
        D = np.concatenate(([T], sys.delta_x))
        ctr = np.concatenate(([0.0], sys.x_star))
    else:
        D = sys.delta_x
        ctr = sys.x_star
    g = []
    for i, fi in enumerate(sys.f):
        gi = fi.compose_affine(D, ctr).scale(T / sys.delta_x[i])
        g.append(gi)
    circle = []
    for (i, j) in sys.angle_pairs:
        si = Polynomial.variable(n, i).scale(sys.delta_x[i]) + Polynomial.constant(n, sys.x_star[i])
        cj = Polynomial.variable(n, j).scale(sys.delta_x[j]) + Polynomial.constant(n, sys.x_star[j])
        circle.append(si * si + cj * cj - Polynomial.constant(n, 1.0))
    return ScaledSystem(g=g, D=np.asarray(sys.delta_x, dtype=float), T=float(T),
                        circle_eqs=circle, system=sys)


# ---------------------------------------------------------------------------
# Trigonometric recasting
# ---------------------------------------------------------------------------


def _ast_with_trig_map(node, var_names, params, trig_map):
    """Convert an AST into a Polynomial, mapping sin/cos of recast angles.

    trig_map: angle variable name -> (sin var name, cos var name).  A recast
    angle may appear only inside sin(...) or cos(...).
    """
    names = list(var_names)
    nvars = len(names)
    index = {nm: i for i, nm in enumerate(names)}
    params = params or {}

    def go(n):
        tag = n[0]
        if tag == "num":
            return Polynomial.constant(nvars, n[1])
        if tag == "var":
            nm = n[1]
            if nm in trig_map:
                raise PolyParseError(
                    f"recast angle {nm!r} may only appear inside sin/cos", 0
                )
            if nm in index:
                return Polynomial.variable(nvars, index[nm])
            if nm in params:
                return Polynomial.constant(nvars, float(params[nm]))
            raise PolyParseError(f"unknown identifier {nm!r}", 0)
        if tag == "add":
            return go(n[1]) + go(n[2])
        if tag == "sub":
            return go(n[1]) - go(n[2])
        if tag == "mul":
            return go(n[1]) * go(n[2])
        if tag == "neg":
            return -go(n[1])
        if tag == "pow":
            return go(n[1]) ** n[2]
        if tag == "trig":
            arg = n[2]
            if arg[0] == "var" and arg[1] in trig_map:
                sin_name, cos_name = trig_map[arg[1]]
                target = sin_name if n[1] == "sin" else cos_name
                return Polynomial.variable(nvars, index[target])
            raise PolyParseError(
                "sin/cos argument must be a declared recast angle here", 0
            )
        raise ValueError(f"unknown AST node {tag!r}")

    return go(node)


def recast_trig(asts, var_names, angle_var, sin_index, cos_index, params=None):
    """Replace an angle theta by (sin theta, cos theta) with induced dynamics.

    asts is one parsed expression per variable in var_names (the dynamics).
    The recast images land at positions sin_index and cos_index (0-based) of
    the new variable vector; remaining variables keep their relative order.
    Returns (dynamics as Polynomials, new variable names, (sin, cos) pair).

    theta's own equation must be polynomial in the recast variables;
    the images obey  d(sin)/dt = theta'*cos,  d(cos)/dt = -theta'*sin.
    """
    var_names = list(var_names)
    if angle_var not in var_names:
        raise ValueError(f"angle variable {angle_var!r} not declared")
    k = var_names.index(angle_var)
    others = [nm for nm in var_names if nm != angle_var]
    n_new = len(others) + 2
    sin_name = f"sin_{angle_var}"
    cos_name = f"cos_{angle_var}"
    if not (0 <= sin_index < n_new and 0 <= cos_index < n_new and sin_index != cos_index):
        raise ValueError("recast indices out of range or equal")
    new_names: list = [None] * n_new
    new_names[sin_index] = sin_name
    new_names[cos_index] = cos_name
    spots = [i for i in range(n_new) if new_names[i] is None]
    for spot, nm in zip(spots, others):
        new_names[spot] = nm
    trig_map = {angle_var: (sin_name, cos_name)}

    theta_dot = _ast_with_trig_map(asts[k], new_names, params, trig_map)
    s_var = Polynomial.variable(n_new, new_names.index(sin_name))
    c_var = Polynomial.variable(n_new, new_names.index(cos_name))
    new_f: list = [None] * n_new
    new_f[sin_index] = theta_dot * c_var
    new_f[cos_index] = -(theta_dot * s_var)
    for old_i, nm in enumerate(var_names):
        if nm == angle_var:
            continue
        new_f[new_names.index(nm)] = _ast_with_trig_map(asts[old_i], new_names, params, trig_map)
    return new_f, new_names, (sin_index, cos_index)


# ---------------------------------------------------------------------------
# Presets: the three published case studies
# ---------------------------------------------------------------------------

PLL_PARAMS = {"K": 1.0, "omega_n": 10.813, "zeta": 1.3303}

SMIB_PARAMS = {
    "Td": 9.67, "xd": 2.38, "xpd": 0.336, "xq": 1.21, "r": 0.002,
    "H": 3.0, "ws": 1.0, "R": 0.01, "X": 1.185, "V": 1.0,
    "Ta": 1.0, "Ka": 70.0, "Tg": 0.4, "Kg": 0.5, "P": 0.7,
}

SMIB_PUBLISHED_EQUILIBRIUM = np.array(
    [math.sin(1.539), math.cos(1.539), 1.0, 1.070, 2.459, 0.7]
)


def build_vdp():
    """Reversed-time Van der Pol oscillator on the 1.1-box."""
    names = ["x1", "x2"]
    f = [
        ast_to_polynomial(parse_expr("-2*x2"), names),
        ast_to_polynomial(parse_expr("0.8*x1 + 10*(x1^2 - 0.21)*x2"), names),
    ]
    sys = DynSystem(f=f, x_star=[0.0, 0.0], delta_x=[1.1, 1.1], var_names=names, name="vdp")
    query = RoaQuery(d=12, T=1.0, eps=0.5, A=np.eye(2))
    return sys, query


def build_pll():
    """Second-order phase-locked loop with degree-10 trig Taylor expansions.

    phi' = omega,  omega' = -(K/tau1) (sin phi + tau2 cos(phi) omega), with
    tau1 = K/omega_n^2 and tau2 = 2 zeta / omega_n.
    """
    K = PLL_PARAMS["K"]
    omega_n = PLL_PARAMS["omega_n"]
    zeta = PLL_PARAMS["zeta"]
    tau1 = K / omega_n**2
    tau2 = 2.0 * zeta / omega_n
    names = ["phi", "omega"]
    phi = Polynomial.variable(2, 0)
    omega = Polynomial.variable(2, 1)
    si = compose_univariate(taylor_trig("sin", 10), phi)
    co = compose_univariate(taylor_trig("cos", 10), phi)
    f1 = omega
    f2 = (si + co * omega * tau2).scale(-K / tau1)
    sys = DynSystem(
        f=[f1, f2],
        x_star=[0.0, 0.0],
        delta_x=[math.pi, 20.0 * math.pi],
        var_names=names,
        name="pll",
    )
    A = np.diag([math.sqrt(20.0), 1.0 / math.sqrt(20.0)])
    query = RoaQuery(d=16, T=1.0, eps=1.7, A=A)
    return sys, query


def _smib_dynamics():
    p = SMIB_PARAMS
    n = 6
    x = [Polynomial.variable(n, i) for i in range(6)]  # (sin, cos, w, epq, Efd, Pm)
    denom = (p["R"] + p["r"]) ** 2 + (p["X"] + p["xpd"]) * (p["X"] + p["xq"])
    iq = (x[0].scale((p["X"] + p["xpd"]) * p["V"]) -
          (x[1].scale(p["V"]) - x[3]).scale(p["R"] + p["r"])).scale(1.0 / denom)
    idq = iq.scale((p["X"] + p["xq"]) / (p["R"] + p["r"])) - x[0].scale(p["V"] / (p["R"] + p["r"]))
    vd = iq.scale(p["xq"]) - idq.scale(p["r"])
    vq = iq.scale(p["R"]) + idq.scale(p["X"]) + x[1].scale(p["V"])
    Vt = vd * vd + vq * vq
    one = Polynomial.constant(n, 1.0)
    f = [
        (x[2] - one.scale(p["ws"])) * x[1],
        (one.scale(p["ws"]) - x[2]) * x[0],
        (x[5] - vd * idq - vq * iq - (idq * idq).scale(p["r"]) - (iq * iq).scale(p["r"])).scale(1.0 / (2 * p["H"])),
        (x[4] - x[3] + idq.scale(p["xpd"] - p["xd"])).scale(1.0 / p["Td"]),
        ((one.scale(p["V"]) - Vt).scale(p["Ka"]) - x[4]).scale(1.0 / p["Ta"]),
        one.scale(p["P"]) - x[5] + (one.scale(p["ws"]) - x[2]).scale(p["Kg"]),
    ]
    return f


def _smib_refine_equilibrium(f, start, tol=1e-10, max_iter=50):
    """Damped Newton on (theta, e'q, E_fd) with omega = ws and Pm = P fixed.

    The swing/governor equations pin omega and Pm exactly; the published
    point is rounded to 3-4 digits, so the remaining three components are
    refined until the full residual drops below tol.
    """
    theta = math.atan2(start[0], start[1])
    z = np.array([theta, start[3], start[4]])

    def assemble(zv):
        th, epq, efd = zv
        return np.array([math.sin(th), math.cos(th), 1.0, epq, efd, SMIB_PARAMS["P"]])

    def residual(zv):
        xfull = assemble(zv)
        return np.array([p.evaluate(xfull) for p in (f[2], f[3], f[4])])

    for _ in range(max_iter):
        r = residual(z)
        if np.abs(r).max() <= tol:
            break
        xfull = assemble(z)
        J = np.zeros((3, 3))
        for row, p in enumerate((f[2], f[3], f[4])):
            dth = (p.differentiate(0).evaluate(xfull) * xfull[1]
                   - p.differentiate(1).evaluate(xfull) * xfull[0])
            J[row] = [dth, p.differentiate(3).evaluate(xfull), p.differentiate(4).evaluate(xfull)]
        step = np.linalg.solve(J, -r)
        lam = 1.0
        base = np.abs(r).max()
        while lam > 1e-6 and np.abs(residual(z + lam * step)).max() > base:
            lam *= 0.5
        z = z + lam * step
    return assemble(z)


def build_smib():
    """Single machine-infinite bus (6-state recast), regulations included.

    State (sin theta, cos theta, omega, e'_q, E_fd, P_m); the Kirchhoff
    relations eliminate currents and voltages symbolically so the dynamics
    are polynomial; theta appears only through its recast images.
    """
    f = _smib_dynamics()
    x_star = _smib_refine_equilibrium(f, SMIB_PUBLISHED_EQUILIBRIUM)
    sys = DynSystem(
        f=f,
        x_star=x_star,
        delta_x=[1.0, 1.0, 1.0, 1.0, 20.0, 4.0],
        angle_pairs=[(0, 1)],
        var_names=["sin_theta", "cos_theta", "omega", "epq", "Efd", "Pm"],
        name="smib",
    )
    query = RoaQuery(d=6, T=10.0, eps=0.2, A=np.eye(6))
    return sys, query


PRESETS = {"vdp": build_vdp, "pll": build_pll, "smib": build_smib}


# ---------------------------------------------------------------------------
# Declarative problem files
# ---------------------------------------------------------------------------


def load_config(path: str):
    """Parse a declarative problem file.

    Returns (DynSystem, query dict, mode or None).  See README for the
    format: [system] holds variables, per-variable dynamics ``f.<name>``,
    x_star, delta_x and optional trig handling (taylor_degree, recast.<angle>
    = sin_index, cos_index (1-based), angle_pairs); [params] holds named
    constants; [query] holds d, T, epsilon, optional A rows and mode.
    """
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise FileNotFoundError(path)
    if "system" not in cp:
        raise ValueError("config must contain a [system] section")
    sysc = cp["system"]
    params = {k: float(v) for k, v in cp["params"].items()} if "params" in cp else {}
    names = [v.strip() for v in sysc["variables"].split(",")]
    asts = []
    for nm in names:
        key = f"f.{nm}"
        if key not in sysc:
            raise ValueError(f"missing dynamics entry {key!r}")
        asts.append(parse_expr(sysc[key]))

    taylor_degree = sysc.getint("taylor_degree", fallback=None)
    recasts = []
    for key in sysc:
        if key.startswith("recast."):
            angle = key.split(".", 1)[1]
            si, ci = (int(v.strip()) for v in sysc[key].split(","))
            recasts.append((angle, si - 1, ci - 1))

    angle_pairs = []
    if recasts:
        if taylor_degree is not None:
            raise ValueError("use either taylor_degree or recast declarations, not both")
        f_polys = None
        for angle, si, ci in recasts:
            f_polys, names, pair = recast_trig(asts, names, angle, si, ci, params)
            if len(recasts) > 1:
                raise ValueError("multiple recast angles are not supported in one file")
            angle_pairs.append(pair)
    else:
        f_polys = [ast_to_polynomial(a, names, params, taylor_degree) for a in asts]

    if "angle_pairs" in sysc:
        for chunk in sysc["angle_pairs"].split(";"):
            i, j = (int(v.strip()) for v in chunk.split(","))
            angle_pairs.append((i - 1, j - 1))

    x_star = [float(v) for v in sysc["x_star"].split(",")]
    delta_x = [float(v) for v in sysc["delta_x"].split(",")]
    system = DynSystem(
        f=f_polys, x_star=x_star, delta_x=delta_x,
        angle_pairs=sorted(set(angle_pairs)), var_names=names,
        name=sysc.get("name", "config"),
    )

    query = {}
    mode = None
    if "query" in cp:
        qc = cp["query"]
        if "d" in qc:
            query["d"] = qc.getint("d")
        if "t" in qc:
            query["T"] = qc.getfloat("t")
        if "epsilon" in qc:
            query["eps"] = qc.getfloat("epsilon")
        if "a" in qc:
            rows = [[float(v) for v in row.split(",")] for row in qc["a"].split(";")]
            query["A"] = np.array(rows)
        mode = qc.get("mode", fallback=None)
    return system, query, mode
