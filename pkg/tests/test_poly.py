import math
import random

import numpy as np
import pytest

from roacert.poly import (
    Polynomial,
    PolyParseError,
    compose_univariate,
    monomials_upto,
    parse_poly,
    taylor_trig,
)


def random_poly(rng, nvars, degree):
    terms = {}
    for mono in monomials_upto(nvars, degree):
        if rng.random() < 0.4:
            terms[mono] = rng.uniform(-2, 2)
    return Polynomial(nvars, terms)


def test_parse_vdp_term():
    p = parse_poly("x1^2 - 0.21", ["x1", "x2"])
    assert p.terms == {(2, 0): 1.0, (0, 0): -0.21}


def test_parse_zero():
    p = parse_poly("0", ["x1"])
    assert p.is_zero()
    assert p.degree() == 0


def test_parse_with_parameter_expansion():
    # hand expansion: 2*(x1+x2)^2 = 2 x1^2 + 4 x1 x2 + 2 x2^2
    p = parse_poly("K*(x1+x2)^2", ["x1", "x2"], {"K": 2})
    assert p.terms == {(2, 0): 2.0, (1, 1): 4.0, (0, 2): 2.0}


def test_parse_errors_report_position():
    with pytest.raises(PolyParseError):
        parse_poly("x1 + y", ["x1"])
    with pytest.raises(PolyParseError) as err:
        parse_poly("x1^-2", ["x1"])
    assert err.value.position > 0
    with pytest.raises(PolyParseError):
        parse_poly("x1^1.5", ["x1"])
    with pytest.raises(PolyParseError):
        parse_poly("x1 + * x1", ["x1"])
    with pytest.raises(PolyParseError):
        parse_poly("sin(x1)", ["x1"])  # no taylor degree given


def test_add_cancels():
    x1 = Polynomial.variable(1, 0)
    assert (x1 + (-x1)).is_zero()


def test_mul_difference_of_squares():
    x1 = Polynomial.variable(1, 0)
    one = Polynomial.constant(1, 1.0)
    p = (x1 + one) * (x1 - one)
    assert p.terms == {(2,): 1.0, (0,): -1.0}


def test_scale():
    p = parse_poly("x1^2 + 2*x2", ["x1", "x2"]).scale(0.5)
    assert p.terms == {(2, 0): 0.5, (0, 1): 1.0}


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        Polynomial.variable(1, 0) + Polynomial.variable(2, 0)


def test_differentiate():
    p = parse_poly("x1^2*x2", ["x1", "x2"])
    assert p.differentiate(0).terms == {(1, 1): 2.0}
    assert Polynomial.constant(2, 3.0).differentiate(0).is_zero()
    # symbolic oracle: d/dx2 (x1^2 - 4.2 x2^2) = -8.4 x2
    q = parse_poly("x1^2 - 4.2*x2^2", ["x1", "x2"])
    assert q.differentiate(1).terms == {(0, 1): -8.4}
    with pytest.raises(IndexError):
        p.differentiate(5)


def test_evaluate():
    p = parse_poly("x1^2 + x2^2", ["x1", "x2"])
    assert p.evaluate([3, 4]) == 25
    assert Polynomial.zero(3).evaluate([1, 2, 3]) == 0
    # Van der Pol f2 at (1, 1): 0.8 + 10*(1 - 0.21) = 8.7
    f2 = parse_poly("0.8*x1 + 10*(x1^2 - 0.21)*x2", ["x1", "x2"])
    assert abs(f2.evaluate([1.0, 1.0]) - 8.7) < 1e-12
    with pytest.raises(ValueError):
        p.evaluate([1.0])


def test_evaluate_many_matches_scalar():
    rng = random.Random(7)
    p = random_poly(rng, 3, 5)
    pts = np.array([[rng.uniform(-2, 2) for _ in range(3)] for _ in range(40)])
    vals = p.evaluate_many(pts)
    for k in range(40):
        assert abs(vals[k] - p.evaluate(pts[k])) <= 1e-10 * (1 + abs(vals[k]))


def test_compose_affine_examples():
    # x^2 with x = 1 + 2y -> 4y^2 + 4y + 1
    p = parse_poly("x1^2", ["x1"]).compose_affine([2.0], [1.0])
    assert p.terms == {(2,): 4.0, (1,): 4.0, (0,): 1.0}
    # identity map
    q = parse_poly("x1", ["x1"])
    assert q.compose_affine([1.0], [0.0]) == q
    # x1*x2 with D = (2, 3), c = 0 -> 6 y1 y2
    r = parse_poly("x1*x2", ["x1", "x2"]).compose_affine([2.0, 3.0], [0.0, 0.0])
    assert r.terms == {(1, 1): 6.0}
    with pytest.raises(ValueError):
        q.compose_affine([0.0], [0.0])


def test_compose_affine_identity_on_random(seeded_rng=random.Random(3)):
    p = random_poly(seeded_rng, 4, 4)
    assert p.compose_affine([1.0] * 4, [0.0] * 4) == p


def test_fix_and_insert_var():
    p = parse_poly("t^2*x1 + x1", ["t", "x1"])
    fixed = p.fix_var(0, 2.0)
    assert fixed.terms == {(1,): 5.0}
    lifted = fixed.insert_var(0)
    assert lifted.terms == {(0, 1): 5.0}


def test_taylor_trig_coefficients():
    si = taylor_trig("sin", 10)
    assert si.terms == {
        (1,): 1.0,
        (3,): -1.0 / 6,
        (5,): 1.0 / 120,
        (7,): -1.0 / 5040,
        (9,): 1.0 / 362880,
    }
    co = taylor_trig("cos", 10)
    assert co.terms == {
        (0,): 1.0,
        (2,): -0.5,
        (4,): 1.0 / 24,
        (6,): -1.0 / 720,
        (8,): 1.0 / 40320,
        (10,): -1.0 / 3628800,
    }
    assert taylor_trig("sin", 1).terms == {(1,): 1.0}


def test_taylor_trig_lagrange_remainder():
    si = taylor_trig("sin", 10)
    for z in np.linspace(-math.pi, math.pi, 41):
        bound = abs(z) ** 11 / math.factorial(11)
        assert abs(si.evaluate([z]) - math.sin(z)) <= bound + 1e-15


def test_parse_trig_with_taylor_degree():
    p = parse_poly("sin(x1)", ["x1"], taylor_degree=3)
    assert p.terms == {(1,): 1.0, (3,): -1.0 / 6}
    q = parse_poly("cos(2*x1)", ["x1"], taylor_degree=2)
    assert q.terms == {(0,): 1.0, (2,): -2.0}


def test_compose_univariate():
    series = taylor_trig("sin", 3)
    inner = parse_poly("x1 + x2", ["x1", "x2"])
    p = compose_univariate(series, inner)
    expected = inner - (inner * inner * inner).scale(1.0 / 6)
    assert p == expected


def test_mul_evaluation_consistency():
    rng = random.Random(11)
    for _ in range(25):
        nvars = rng.randint(1, 6)
        p = random_poly(rng, nvars, rng.randint(0, 6))
        q = random_poly(rng, nvars, rng.randint(0, 6))
        z = [rng.uniform(-1.5, 1.5) for _ in range(nvars)]
        lhs = (p * q).evaluate(z)
        rhs = p.evaluate(z) * q.evaluate(z)
        assert abs(lhs - rhs) <= 1e-9 * (1 + abs(rhs))


def test_product_rule():
    rng = random.Random(13)
    for _ in range(20):
        nvars = rng.randint(1, 4)
        i = rng.randrange(nvars)
        p = random_poly(rng, nvars, 4)
        q = random_poly(rng, nvars, 4)
        lhs = (p * q).differentiate(i)
        rhs = p.differentiate(i) * q + p * q.differentiate(i)
        diff = lhs - rhs
        assert all(abs(c) <= 1e-12 for c in diff.terms.values())


def test_print_parse_round_trip():
    rng = random.Random(17)
    for _ in range(30):
        nvars = rng.randint(1, 4)
        p = random_poly(rng, nvars, rng.randint(0, 5))
        names = [f"x{i + 1}" for i in range(nvars)]
        back = parse_poly(p.to_string(names), names)
        assert back.terms == p.terms


def test_canonical_string_form():
    p = Polynomial(2, {(2, 1): 1.0, (0, 1): -0.21})
    assert p.to_string() == "1.0*x1^2*x2 - 0.21*x2"
    assert Polynomial.zero(2).to_string() == "0"


def test_monomials_upto_graded_lex():
    basis = monomials_upto(2, 2)
    assert basis == [(0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]
