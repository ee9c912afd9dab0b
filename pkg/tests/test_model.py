import math

import numpy as np
import pytest

from roacert.model import (
    DynSystem,
    RoaQuery,
    SMIB_PARAMS,
    SMIB_PUBLISHED_EQUILIBRIUM,
    TargetEllipsoid,
    build_pll,
    build_smib,
    build_vdp,
    load_config,
    recast_trig,
    scale_system,
)
from roacert.poly import Polynomial, parse_expr, parse_poly


def rk4(fun, x0, T, steps):
    x = np.asarray(x0, dtype=float)
    h = T / steps
    for _ in range(steps):
        k1 = fun(x)
        k2 = fun(x + 0.5 * h * k1)
        k3 = fun(x + 0.5 * h * k2)
        k4 = fun(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def test_scale_linear_1d():
    f = [parse_poly("-1*x1", ["x1"])]
    sys = DynSystem(f=f, x_star=[0.0], delta_x=[2.0])
    scaled = scale_system(sys, T=1.0)
    # g(y) = (1/2) * f(2y) = -y
    assert scaled.g[0].terms == {(1,): -1.0}


def test_scale_identity():
    sys, _ = build_vdp()
    ident = DynSystem(f=sys.f, x_star=[0.0, 0.0], delta_x=[1.0, 1.0])
    scaled = scale_system(ident, T=1.0)
    assert scaled.g[0] == sys.f[0]
    assert scaled.g[1] == sys.f[1]


def test_scale_vdp_first_component():
    sys, _ = build_vdp()
    scaled = scale_system(sys, T=1.0)
    # g1(y) = (1/1.1) * (-2 * 1.1 y2) = -2 y2
    assert scaled.g[0].terms == {(0, 1): pytest.approx(-2.0)}


def test_scale_round_trip_recovers_dynamics():
    sys, _ = build_vdp()
    T = 2.5
    scaled = scale_system(sys, T)
    for i, gi in enumerate(scaled.g):
        back = gi.compose_affine(1.0 / sys.delta_x, -sys.x_star / sys.delta_x)
        back = back.scale(sys.delta_x[i] / T)
        diff = back - sys.f[i]
        worst = max((abs(c) for c in diff.terms.values()), default=0.0)
        scale = max(abs(c) for c in sys.f[i].terms.values())
        assert worst <= 1e-9 * (1 + scale)


def test_recast_symbolic_form():
    # theta' = omega - ws  ->  s' = (omega - ws) c,  c' = (ws - omega) s
    asts = [parse_expr("omega - ws"), parse_expr("0")]
    f, names, pair = recast_trig(asts, ["theta", "omega"], "theta", 0, 1, {"ws": 1.0})
    assert names == ["sin_theta", "cos_theta", "omega"]
    assert pair == (0, 1)
    s, c, w = (Polynomial.variable(3, i) for i in range(3))
    one = Polynomial.constant(3, 1.0)
    assert f[0] == (w - one) * c
    assert f[1] == (one - w) * s


def test_recast_zero_angle_rate():
    asts = [parse_expr("0")]
    f, names, _ = recast_trig(asts, ["theta"], "theta", 0, 1)
    assert f[0].is_zero()
    assert f[1].is_zero()


def test_recast_rejects_bare_angle():
    asts = [parse_expr("theta + 1")]
    with pytest.raises(Exception):
        recast_trig(asts, ["theta"], "theta", 0, 1)


def test_recast_unit_rate_matches_circle_motion():
    # theta' = 1, theta(0) = 0: (s, c)(t) = (sin t, cos t)
    asts = [parse_expr("1")]
    f, names, _ = recast_trig(asts, ["theta"], "theta", 0, 1)

    def fun(x):
        return np.array([p.evaluate(x) for p in f])

    end = rk4(fun, [0.0, 1.0], 1.0, 2000)
    assert abs(end[0] - math.sin(1.0)) <= 1e-6
    assert abs(end[1] - math.cos(1.0)) <= 1e-6


def test_recast_preserves_trajectories():
    # theta' = 1 + 0.5 sin(theta): compare the scalar trig ODE against the
    # recast two-state ODE on (sin, cos) for a batch of initial phases
    asts = [parse_expr("1 + 0.5*sin(theta)")]
    f, _, _ = recast_trig(asts, ["theta"], "theta", 0, 1)

    def fun_rec(x):
        return np.array([p.evaluate(x) for p in f])

    rng = np.random.default_rng(2024)
    for theta0 in rng.uniform(-math.pi, math.pi, 20):
        thT = rk4(lambda th: np.array([1 + 0.5 * math.sin(th[0])]), [theta0], 1.0, 2000)[0]
        sc = rk4(fun_rec, [math.sin(theta0), math.cos(theta0)], 1.0, 2000)
        assert abs(sc[0] - math.sin(thT)) <= 1e-5
        assert abs(sc[1] - math.cos(thT)) <= 1e-5


def test_pll_preset():
    sys, query = build_pll()
    assert np.allclose(sys.eval_f([0.0, 0.0]), 0.0)
    K, omega_n, zeta = 1.0, 10.813, 1.3303
    tau1 = K / omega_n**2
    tau2 = 2 * zeta / omega_n
    assert tau1 == pytest.approx(8.5528e-3, rel=1e-4)
    assert tau2 == pytest.approx(0.24606, rel=1e-4)
    # omega' at (phi, omega) = (0, 1): -K/tau1 * tau2 * cos(0) = -tau2/tau1
    assert sys.eval_f([0.0, 1.0])[1] == pytest.approx(-K * tau2 / tau1, rel=1e-12)
    assert np.isclose(np.linalg.det(query.A), 1.0)
    assert np.allclose(sys.delta_x, [math.pi, 20 * math.pi])
    assert query.T == 1.0 and query.eps == 1.7
    query.target(sys)  # suggested target fits inside the box


def test_vdp_preset():
    sys, query = build_vdp()
    assert np.allclose(sys.eval_f([0.0, 0.0]), 0.0)
    assert np.allclose(sys.eval_f([1.0, 1.0]), [-2.0, 8.7])
    assert np.allclose(sys.delta_x, [1.1, 1.1])
    assert (query.d, query.T, query.eps) == (12, 1.0, 0.5)
    query.target(sys)


def test_smib_preset():
    sys, query = build_smib()
    pub = SMIB_PUBLISHED_EQUILIBRIUM
    # published rounded equilibrium: coarse residual only
    f_at_pub = np.array([p.evaluate(pub) for p in sys.f])
    assert np.abs(f_at_pub).max() <= 1e-2
    # refined equilibrium: tight residual, still on the circle
    assert sys.equilibrium_residual() <= 1e-10
    assert sys.x_star[0] ** 2 + sys.x_star[1] ** 2 == pytest.approx(1.0, abs=1e-12)
    assert np.abs(sys.x_star - pub).max() <= 5e-3
    assert SMIB_PARAMS["H"] == 3.0
    assert sys.angle_pairs == [(0, 1)]
    assert (query.d, query.T, query.eps) == (6, 10.0, 0.2)
    query.target(sys)


def test_scaled_circle_equations():
    sys, _ = build_smib()
    scaled = scale_system(sys, 10.0)
    assert len(scaled.circle_eqs) == 1
    eq = scaled.circle_eqs[0]
    # vanishes at y = 0 (equilibrium is on the circle)
    assert abs(eq.evaluate([0.0] * 6)) <= 1e-12
    # vanishes wherever (x1, x2) lies on the unit circle
    y1 = (math.sin(0.3) - sys.x_star[0]) / sys.delta_x[0]
    y2 = (math.cos(0.3) - sys.x_star[1]) / sys.delta_x[1]
    assert abs(eq.evaluate([y1, y2, 0, 0, 0, 0])) <= 1e-12


def test_target_ellipsoid_validation():
    with pytest.raises(ValueError):
        TargetEllipsoid(np.diag([2.0, 1.0]), 0.5)  # det != 1
    with pytest.raises(ValueError):
        TargetEllipsoid(np.eye(2), -1.0)
    tgt = TargetEllipsoid(np.eye(2), 0.5)
    tgt.check_inside_box([0.0, 0.0], [1.0, 1.0])
    with pytest.raises(ValueError):
        tgt.check_inside_box([0.0, 0.0], [0.4, 1.0])


def test_query_validation():
    with pytest.raises(ValueError):
        RoaQuery(d=5, T=1.0, eps=0.5)
    with pytest.raises(ValueError):
        RoaQuery(d=4, T=-1.0, eps=0.5)
    with pytest.raises(ValueError):
        RoaQuery(d=4, T=1.0, eps=0.0)


def test_equilibrium_residual_warns():
    f = [parse_poly("x1 + 1", ["x1"])]
    with pytest.warns(UserWarning):
        DynSystem(f=f, x_star=[0.0], delta_x=[1.0])


def test_load_config_vdp(tmp_path):
    cfg = tmp_path / "vdp.cfg"
    cfg.write_text(
        """
[system]
variables = x1, x2
f.x1 = -2*x2
f.x2 = a*x1 + 10*(x1^2 - 0.21)*x2
x_star = 0, 0
delta_x = 1.1, 1.1

[params]
a = 0.8

[query]
d = 12
T = 1
epsilon = 0.5
mode = inner
"""
    )
    sys, query, mode = load_config(str(cfg))
    ref, _ = build_vdp()
    assert sys.f[0] == ref.f[0]
    assert sys.f[1] == ref.f[1]
    assert query == {"d": 12, "T": 1.0, "eps": 0.5}
    assert mode == "inner"


def test_load_config_with_recast(tmp_path):
    cfg = tmp_path / "pend.cfg"
    cfg.write_text(
        """
[system]
variables = theta, omega
f.theta = omega
f.omega = -1*sin(theta) - 0.1*omega
x_star = 0, 1, 0
delta_x = 1, 1, 2
recast.theta = 1, 2

[query]
d = 4
T = 1
epsilon = 0.2
"""
    )
    sys, query, mode = load_config(str(cfg))
    assert sys.var_names == ["sin_theta", "cos_theta", "omega"]
    assert sys.angle_pairs == [(0, 1)]
    # s' = omega * c at the recast equilibrium
    assert abs(sys.eval_f([0.0, 1.0, 0.0])[0]) <= 1e-12
    assert sys.equilibrium_residual() <= 1e-12


def test_load_config_with_taylor(tmp_path):
    cfg = tmp_path / "tay.cfg"
    cfg.write_text(
        """
[system]
variables = x1
f.x1 = sin(x1)
x_star = 0
delta_x = 1
taylor_degree = 3
"""
    )
    sys, _, _ = load_config(str(cfg))
    assert sys.f[0].terms == {(1,): 1.0, (3,): pytest.approx(-1 / 6)}
