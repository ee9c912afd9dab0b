import numpy as np
import pytest

from roacert import sdp
from roacert.poly import Polynomial, monomials_upto, parse_poly
from roacert.soscomp import (
    LinPoly,
    SosProgram,
    box_moment,
    compile,
    gram_basis,
    gram_to_poly,
    recover,
    verify_membership,
)


def test_box_moment_closed_form():
    assert box_moment((0, 0)) == 4.0
    assert box_moment((1, 0)) == 0.0
    assert box_moment((2, 2)) == pytest.approx(4.0 / 9.0)
    assert box_moment((4,)) == pytest.approx(2.0 / 5.0)


def test_box_moment_matches_monte_carlo():
    rng = np.random.default_rng(123)
    nsamples = 200_000
    for _ in range(12):
        n = rng.integers(1, 5)
        alpha = tuple(int(a) for a in rng.integers(0, 5, n))
        pts = rng.uniform(-1.0, 1.0, (nsamples, n))
        vals = np.prod(pts ** np.asarray(alpha), axis=1)
        vol = 2.0**n
        est = vol * vals.mean()
        se = vol * vals.std(ddof=1) / np.sqrt(nsamples)
        assert abs(est - box_moment(alpha)) <= 3.0 * se + 1e-12


def test_gram_basis_sizes_and_order():
    b = gram_basis(2, 1)
    assert b == [(0, 0), (1, 0), (0, 1)]
    assert len(gram_basis(3, 2)) == 10
    assert len(gram_basis(7, 3)) == 120  # the d=6 block size for a 7-var cylinder


def test_simple_sos_membership_recovers_exactly():
    # sigma SOS of degree 2 with sigma == 1 + y^2: unique Gram diag(1, 1)
    prog = SosProgram()
    target = LinPoly.from_poly(parse_poly("1 + x1^2", ["x1"]))
    prog.add_membership("sos", target, degree=2)
    problem, imap = compile(prog)
    sol = sdp.solve(problem)
    assert sol.status == sdp.OPTIMAL
    decisions, recs = recover(sol, imap, prog, problem=problem)
    gen, basis, G = recs[0].grams[0]
    sigma = gram_to_poly(basis, G, 1)
    assert abs(sigma.coefficient((0,)) - 1.0) <= 1e-7
    assert abs(sigma.coefficient((2,)) - 1.0) <= 1e-7
    assert abs(sigma.coefficient((1,))) <= 1e-7
    resid = verify_membership(parse_poly("1 + x1^2", ["x1"]), recs[0])
    assert resid <= 1e-8


def test_motzkin_is_not_sos():
    # Motzkin polynomial: nonnegative but not a sum of squares
    motzkin = parse_poly("x1^4*x2^2 + x1^2*x2^4 - 3*x1^2*x2^2 + 1", ["x1", "x2"])
    prog = SosProgram()
    prog.add_membership("motzkin", LinPoly.from_poly(motzkin), degree=6)
    problem, _ = compile(prog)
    sol = sdp.solve(problem)
    assert sol.status == sdp.INFEASIBLE
    # Farkas certificate: A'y + s = 0 with b'y > 0
    assert problem.b @ sol.y > 0
    assert np.linalg.norm(problem.A.T @ sol.y + sol.s) <= 1e-6


def test_random_single_squares_are_sos():
    # a single exact square sits on the boundary of the SOS cone (no Slater
    # point), so interior-point accuracy plateaus near sqrt(machine eps)
    rng = np.random.default_rng(7)
    for _ in range(20):
        nv = int(rng.integers(1, 3))
        basis = monomials_upto(nv, 3)
        coeffs = rng.uniform(-1, 1, len(basis))
        q = Polynomial(nv, dict(zip(basis, coeffs)))
        target = q * q
        prog = SosProgram()
        prog.add_membership("sq", LinPoly.from_poly(target), degree=6)
        problem, imap = compile(prog)
        sol = sdp.solve(problem)
        assert sol.status == sdp.OPTIMAL
        _, recs = recover(sol, imap, prog, problem=problem)
        assert verify_membership(target, recs[0]) <= 5e-8


def test_random_norm_squares_are_sos():
    # norms of random polynomial vectors have full-rank Grams: strictly
    # feasible memberships resolve to machine-level residuals
    rng = np.random.default_rng(8)
    for _ in range(10):
        nv = int(rng.integers(1, 3))
        basis = monomials_upto(nv, 3)
        target = Polynomial.zero(nv)
        for _ in range(len(basis)):
            q = Polynomial(nv, dict(zip(basis, rng.uniform(-1, 1, len(basis)))))
            target = target + q * q
        prog = SosProgram()
        prog.add_membership("normsq", LinPoly.from_poly(target), degree=6)
        problem, imap = compile(prog)
        sol = sdp.solve(problem)
        assert sol.status == sdp.OPTIMAL
        _, recs = recover(sol, imap, prog, problem=problem)
        assert verify_membership(target, recs[0]) <= 1e-8


def test_membership_with_generator_and_objective():
    # find min integral of w over [-1,1] with w - 1 in Q_2(1 - y^2):
    # w >= 1 on the box, so the optimum has w == 1 and objective 2
    prog = SosProgram()
    w = prog.declare_poly("w", 1, 2)
    box = parse_poly("1 - x1^2", ["x1"])
    prog.add_membership("dom", w.expr() - LinPoly.constant(1, 1.0), [box], degree=2)
    prog.set_objective(
        {vid: box_moment(m) for m, vid in zip(w.monos, w.var_ids)}
    )
    problem, imap = compile(prog)
    sol = sdp.solve(problem)
    assert sol.status == sdp.OPTIMAL
    assert sol.obj_primal == pytest.approx(2.0, abs=1e-6)
    decisions, recs = recover(sol, imap, prog, problem=problem)
    resid = verify_membership(
        decisions["w"] - Polynomial.constant(1, 1.0), recs[0]
    )
    assert resid <= 1e-6


def test_equality_generator_multiplier():
    # target = x1^2 + x2^2 - 1 vanishes on the circle; with the circle as an
    # equality generator the membership is exactly representable at degree 2.
    circle = parse_poly("x1^2 + x2^2 - 1", ["x1", "x2"])
    prog = SosProgram()
    prog.add_membership("eq", LinPoly.from_poly(circle), eq_gens=[circle], degree=2)
    problem, imap = compile(prog)
    sol = sdp.solve(problem)
    assert sol.status == sdp.OPTIMAL
    _, recs = recover(sol, imap, prog, problem=problem)
    assert verify_membership(circle, recs[0]) <= 1e-7


def test_compile_round_trip_identity():
    prog = SosProgram()
    v = prog.declare_poly("v", 2, 2)
    target = v.expr() - LinPoly.constant(2, 1.0)
    prog.add_membership("m", target, [parse_poly("1 - x1^2", ["x1", "x2"])], degree=2)
    problem, imap = compile(prog)
    sol = sdp.solve(problem)
    decisions, recs = recover(sol, imap, prog, problem=problem)
    # feasibility of the recovered pair: residual of the certificate identity
    resid = verify_membership(
        decisions["v"] - Polynomial.constant(2, 1.0), recs[0]
    )
    assert resid <= 1e-6


def test_corrupted_gram_residual_large():
    prog = SosProgram()
    target = parse_poly("1 + x1^2", ["x1"])
    prog.add_membership("sos", LinPoly.from_poly(target), degree=2)
    problem, imap = compile(prog)
    sol = sdp.solve(problem)
    _, recs = recover(sol, imap, prog, problem=problem)
    gen, basis, G = recs[0].grams[0]
    G2 = G.copy()
    G2[0, 0] += 1.0
    recs[0].grams[0] = (gen, basis, G2)
    assert verify_membership(target, recs[0]) >= 0.5


def test_odd_membership_degree_rejected():
    prog = SosProgram()
    with pytest.raises(ValueError):
        prog.add_membership("bad", LinPoly.constant(1, 1.0), degree=3)


def test_target_degree_exceeding_membership_rejected():
    prog = SosProgram()
    t = LinPoly.from_poly(parse_poly("x1^4", ["x1"]))
    with pytest.raises(ValueError):
        prog.add_membership("bad", t, degree=2)


def test_linpoly_algebra():
    prog = SosProgram()
    v = prog.declare_poly("v", 2, 2)
    e = v.expr()
    p = parse_poly("2*x1", ["x1", "x2"])
    prod = e.mul_poly(p)
    assert prod.degree() == 3
    d = e.differentiate(0)
    fixed = e.fix_var(0, 0.0)
    assert fixed.nvars == 1
    # instantiate with zeros except the constant coefficient
    values = {vid: 0.0 for vid in v.var_ids}
    values[v.var_ids[0]] = 2.5
    inst = e.instantiate(values)
    assert inst.coefficient((0, 0)) == 2.5
