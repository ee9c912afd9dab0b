"""Sparse multivariate polynomial arithmetic with float coefficients.

Monomials are exponent tuples over a fixed variable list; every basis and
every printed term list is ordered by graded lexicographic order (total
degree first, then lex with earlier variables ranked higher).  Coefficients
below ``DROP_TOL`` are removed on normalization, so a polynomial never
stores explicit zeros.
"""

from __future__ import annotations

import math
from itertools import combinations_with_replacement
from typing import Iterable, Sequence

import numpy as np

# Normalization threshold: coefficients smaller than this are treated as
# exact zeros (matches the precision of the downstream SDP solves).
DROP_TOL = 1e-14


def grlex_key(mono: tuple) -> tuple:
    """Sort key realizing graded lexicographic order on exponent tuples."""
    return (sum(mono), tuple(-e for e in mono))


def monomials_upto(nvars: int, degree: int) -> list:
    """All exponent tuples of total degree <= degree, in graded-lex order."""
    out = []
    for d in range(degree + 1):
        for combo in combinations_with_replacement(range(nvars), d):
            exp = [0] * nvars
            for idx in combo:
                exp[idx] += 1
            out.append(tuple(exp))
    return out


class Polynomial:
    """Immutable sparse polynomial: map from exponent tuple to coefficient."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars: int, terms: dict | None = None):
        self.nvars = int(nvars)
        clean = {}
        if terms:
            for mono, c in terms.items():
                if len(mono) != self.nvars:
                    raise ValueError(
                        f"monomial {mono} has {len(mono)} exponents, expected {self.nvars}"
                    )
                if abs(c) >= DROP_TOL:
                    clean[tuple(mono)] = float(c)
        self.terms = clean

    # -- constructors -----------------------------------------------------

    @classmethod
    def zero(cls, nvars: int) -> "Polynomial":
        return cls(nvars, {})

    @classmethod
    def constant(cls, nvars: int, value: float) -> "Polynomial":
        return cls(nvars, {(0,) * nvars: value})

    @classmethod
    def variable(cls, nvars: int, index: int) -> "Polynomial":
        if not 0 <= index < nvars:
            raise IndexError(f"variable index {index} out of range for {nvars} vars")
        exp = [0] * nvars
        exp[index] = 1
        return cls(nvars, {tuple(exp): 1.0})

    # -- basic queries -----------------------------------------------------

    def degree(self) -> int:
        """Total degree; the zero polynomial has degree 0."""
        if not self.terms:
            return 0
        return max(sum(m) for m in self.terms)

    def is_zero(self) -> bool:
        return not self.terms

    def coefficient(self, mono: tuple) -> float:
        return self.terms.get(tuple(mono), 0.0)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Polynomial)
            and self.nvars == other.nvars
            and self.terms == other.terms
        )

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    # -- arithmetic ---------------------------------------------------------

    def _check_compatible(self, other: "Polynomial"):
        if self.nvars != other.nvars:
            raise ValueError(
                f"dimension mismatch: {self.nvars} vs {other.nvars} variables"
            )

    def __add__(self, other: "Polynomial") -> "Polynomial":
        self._check_compatible(other)
        terms = dict(self.terms)
        for mono, c in other.terms.items():
            terms[mono] = terms.get(mono, 0.0) + c
        return Polynomial(self.nvars, terms)

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        self._check_compatible(other)
        terms = dict(self.terms)
        for mono, c in other.terms.items():
            terms[mono] = terms.get(mono, 0.0) - c
        return Polynomial(self.nvars, terms)

    def __neg__(self) -> "Polynomial":
        return Polynomial(self.nvars, {m: -c for m, c in self.terms.items()})

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(float(other))
        self._check_compatible(other)
        terms: dict = {}
        for m1, c1 in self.terms.items():
            for m2, c2 in other.terms.items():
                mono = tuple(a + b for a, b in zip(m1, m2))
                terms[mono] = terms.get(mono, 0.0) + c1 * c2
        return Polynomial(self.nvars, terms)

    __rmul__ = __mul__

    def scale(self, c: float) -> "Polynomial":
        return Polynomial(self.nvars, {m: c * v for m, v in self.terms.items()})

    def __pow__(self, k: int) -> "Polynomial":
        if k < 0 or k != int(k):
            raise ValueError("polynomial powers must be nonnegative integers")
        out = Polynomial.constant(self.nvars, 1.0)
        base = self
        k = int(k)
        while k:
            if k & 1:
                out = out * base
            base = base * base
            k >>= 1
        return out

    def differentiate(self, var_index: int) -> "Polynomial":
        """Partial derivative with respect to the given variable."""
        if not 0 <= var_index < self.nvars:
            raise IndexError(f"variable index {var_index} out of range")
        terms: dict = {}
        for mono, c in self.terms.items():
            e = mono[var_index]
            if e > 0:
                m = list(mono)
                m[var_index] = e - 1
                key = tuple(m)
                terms[key] = terms.get(key, 0.0) + c * e
        return Polynomial(self.nvars, terms)

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, point: Sequence[float]) -> float:
        """Direct term-by-term evaluation at a single point."""
        if len(point) != self.nvars:
            raise ValueError(
                f"point has length {len(point)}, expected {self.nvars}"
            )
        total = 0.0
        for mono, c in self.terms.items():
            v = c
            for x, e in zip(point, mono):
                if e:
                    v *= x**e
            total += v
        return total

    def evaluate_many(self, points: np.ndarray) -> np.ndarray:
        """Vectorized evaluation on an array of points, shape (npts, nvars)."""
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != self.nvars:
            raise ValueError(f"points must have shape (npts, {self.nvars})")
        if not self.terms:
            return np.zeros(pts.shape[0])
        max_deg = [0] * self.nvars
        for mono in self.terms:
            for i, e in enumerate(mono):
                max_deg[i] = max(max_deg[i], e)
        # pow_tab[i][e] = pts[:, i] ** e
        pow_tab = []
        for i in range(self.nvars):
            col = pts[:, i]
            tab = np.ones((max_deg[i] + 1, pts.shape[0]))
            for e in range(1, max_deg[i] + 1):
                tab[e] = tab[e - 1] * col
            pow_tab.append(tab)
        out = np.zeros(pts.shape[0])
        for mono, c in self.terms.items():
            v = np.full(pts.shape[0], c)
            for i, e in enumerate(mono):
                if e:
                    v = v * pow_tab[i][e]
            out += v
        return out

    # -- substitution ---------------------------------------------------------

    def compose_affine(self, D: Sequence[float], c: Sequence[float]) -> "Polynomial":
        """Substitute variable i by ``c[i] + D[i] * y_i`` and expand.

        D must be entrywise positive (it is a diagonal scaling).  The degree
        is preserved.
        """
        if len(D) != self.nvars or len(c) != self.nvars:
            raise ValueError("D and c must have one entry per variable")
        D = [float(v) for v in D]
        c = [float(v) for v in c]
        if any(v <= 0 for v in D):
            raise ValueError("diagonal scaling entries must be positive")

        max_deg = [0] * self.nvars
        for mono in self.terms:
            for i, e in enumerate(mono):
                max_deg[i] = max(max_deg[i], e)
        # powers[i][e] = (c_i + D_i y_i)^e
        powers = []
        for i in range(self.nvars):
            lin = Polynomial(
                self.nvars,
                {(0,) * self.nvars: c[i], tuple(int(k == i) for k in range(self.nvars)): D[i]},
            )
            tab = [Polynomial.constant(self.nvars, 1.0)]
            for _ in range(max_deg[i]):
                tab.append(tab[-1] * lin)
            powers.append(tab)

        out = Polynomial.zero(self.nvars)
        for mono, coef in self.terms.items():
            piece = Polynomial.constant(self.nvars, coef)
            for i, e in enumerate(mono):
                if e:
                    piece = piece * powers[i][e]
            out = out + piece
        return out

    def fix_var(self, index: int, value: float) -> "Polynomial":
        """Substitute a numeric value for one variable; result has nvars-1."""
        if not 0 <= index < self.nvars:
            raise IndexError(f"variable index {index} out of range")
        terms: dict = {}
        for mono, c in self.terms.items():
            v = c * (value ** mono[index] if mono[index] else 1.0)
            key = mono[:index] + mono[index + 1 :]
            terms[key] = terms.get(key, 0.0) + v
        return Polynomial(self.nvars - 1, terms)

    def insert_var(self, index: int) -> "Polynomial":
        """Add a fresh variable (exponent 0 everywhere) at position index."""
        if not 0 <= index <= self.nvars:
            raise IndexError(f"insert position {index} out of range")
        terms = {m[:index] + (0,) + m[index:]: c for m, c in self.terms.items()}
        return Polynomial(self.nvars + 1, terms)

    # -- printing ---------------------------------------------------------------

    def to_string(self, var_names: Sequence[str] | None = None) -> str:
        """Canonical text form: graded-lex term order, repr-exact coefficients."""
        if var_names is None:
            var_names = [f"x{i + 1}" for i in range(self.nvars)]
        elif len(var_names) != self.nvars:
            raise ValueError("var_names length must match nvars")
        if not self.terms:
            return "0"
        parts = []
        for mono in sorted(self.terms, key=grlex_key, reverse=True):
            c = self.terms[mono]
            factors = [repr(abs(c))]
            for name, e in zip(var_names, mono):
                if e == 1:
                    factors.append(name)
                elif e > 1:
                    factors.append(f"{name}^{e}")
            term = "*".join(factors)
            if not parts:
                parts.append(term if c >= 0 else f"-{term}")
            else:
                parts.append(f"+ {term}" if c >= 0 else f"- {term}")
        return " ".join(parts)

    def __repr__(self):
        return f"Polynomial({self.nvars}, {self.to_string()})"


# ---------------------------------------------------------------------------
# Expression parsing
# ---------------------------------------------------------------------------


class PolyParseError(ValueError):
    """Parse failure; carries the 0-based position in the source string."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


_OPS = set("+-*^(),")


def _tokenize(text: str) -> list:
    tokens = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch in _OPS:
            tokens.append(("op", ch, i))
            i += 1
            continue
        if ch.isdigit() or ch == ".":
            j = i
            seen_exp = False
            while j < n and (text[j].isdigit() or text[j] == "." or
                             (text[j] in "eE" and j + 1 < n and
                              (text[j + 1].isdigit() or text[j + 1] in "+-")) or
                             (seen_exp and text[j] in "+-")):
                if text[j] in "eE":
                    seen_exp = True
                elif text[j] in "+-":
                    seen_exp = False
                j += 1
            try:
                value = float(text[i:j])
            except ValueError:
                raise PolyParseError(f"malformed number {text[i:j]!r}", i) from None
            tokens.append(("num", value, i))
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise PolyParseError(f"unexpected character {ch!r}", i)
    tokens.append(("end", "", n))
    return tokens


class _Parser:
    """Recursive-descent parser producing a small tuple AST.

    Nodes: ("num", v) ("var", name) ("add"|"sub"|"mul", a, b)
           ("neg", a) ("pow", a, k) ("trig", "sin"|"cos", arg)
    """

    def __init__(self, text: str, allow_trig: bool):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.allow_trig = allow_trig

    def peek(self):
        return self.tokens[self.pos]

    def next(self):
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect_op(self, op: str):
        kind, value, at = self.next()
        if kind != "op" or value != op:
            raise PolyParseError(f"expected {op!r}, found {value!r}", at)

    def parse(self):
        node = self.expr()
        kind, value, at = self.peek()
        if kind != "end":
            raise PolyParseError(f"unexpected trailing input {value!r}", at)
        return node

    def expr(self):
        node = self.term()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value in "+-":
                self.next()
                rhs = self.term()
                node = ("add" if value == "+" else "sub", node, rhs)
            else:
                return node

    def term(self):
        node = self.factor()
        while True:
            kind, value, _ = self.peek()
            if kind == "op" and value == "*":
                self.next()
                node = ("mul", node, self.factor())
            else:
                return node

    def factor(self):
        kind, value, _ = self.peek()
        if kind == "op" and value in "+-":
            self.next()
            inner = self.factor()
            return inner if value == "+" else ("neg", inner)
        return self.power()

    def power(self):
        base = self.atom()
        kind, value, at = self.peek()
        if kind == "op" and value == "^":
            self.next()
            k_kind, k_value, k_at = self.next()
            if k_kind != "num" or k_value != int(k_value) or k_value < 0:
                raise PolyParseError(
                    "exponent must be a nonnegative integer", k_at
                )
            return ("pow", base, int(k_value))
        return base

    def atom(self):
        kind, value, at = self.next()
        if kind == "num":
            return ("num", value)
        if kind == "name":
            nxt_kind, nxt_value, _ = self.peek()
            if nxt_kind == "op" and nxt_value == "(":
                if value not in ("sin", "cos"):
                    raise PolyParseError(f"unknown function {value!r}", at)
                if not self.allow_trig:
                    raise PolyParseError(
                        "sin/cos require a taylor_degree or a recast declaration", at
                    )
                self.next()
                arg = self.expr()
                self.expect_op(")")
                return ("trig", value, arg)
            return ("var", value)
        if kind == "op" and value == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        raise PolyParseError(f"unexpected token {value!r}", at)


def parse_expr(text: str, allow_trig: bool = True):
    """Parse an expression into an AST, keeping sin/cos calls symbolic."""
    return _Parser(text, allow_trig).parse()


def ast_to_polynomial(
    node,
    var_names: Sequence[str],
    params: dict | None = None,
    taylor_degree: int | None = None,
) -> Polynomial:
    """Evaluate an AST into a Polynomial over the given variable list.

    Parameters are substituted numerically.  Trig nodes are expanded as
    Maclaurin truncations when ``taylor_degree`` is given, and rejected
    otherwise (recasting is handled before this point).
    """
    params = params or {}
    names = list(var_names)
    nvars = len(names)
    index = {name: i for i, name in enumerate(names)}

    def go(n) -> Polynomial:
        tag = n[0]
        if tag == "num":
            return Polynomial.constant(nvars, n[1])
        if tag == "var":
            name = n[1]
            if name in index:
                return Polynomial.variable(nvars, index[name])
            if name in params:
                return Polynomial.constant(nvars, float(params[name]))
            raise PolyParseError(f"unknown identifier {name!r}", 0)
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
            if taylor_degree is None:
                raise PolyParseError(
                    "sin/cos require a taylor_degree or a recast declaration", 0
                )
            series = taylor_trig(n[1], taylor_degree)
            return compose_univariate(series, go(n[2]))
        raise ValueError(f"unknown AST node {tag!r}")

    return go(node)


def parse_poly(
    expr: str,
    var_names: Sequence[str],
    params: dict | None = None,
    taylor_degree: int | None = None,
) -> Polynomial:
    """Parse an expression string into an expanded Polynomial.

    The grammar supports ``+ - * ^`` with standard precedence, parentheses,
    decimal literals, declared variables and numeric parameters.  Exponents
    must be nonnegative integers.  sin/cos are accepted only when
    ``taylor_degree`` is set.
    """
    ast = parse_expr(expr, allow_trig=taylor_degree is not None)
    return ast_to_polynomial(ast, var_names, params, taylor_degree)


def compose_univariate(series: Polynomial, inner: Polynomial) -> Polynomial:
    """Substitute ``inner`` for the variable of a univariate polynomial."""
    if series.nvars != 1:
        raise ValueError("series must be univariate")
    out = Polynomial.zero(inner.nvars)
    power = Polynomial.constant(inner.nvars, 1.0)
    max_e = series.degree()
    coeffs = {m[0]: c for m, c in series.terms.items()}
    for e in range(max_e + 1):
        c = coeffs.get(e)
        if c is not None:
            out = out + power.scale(c)
        if e < max_e:
            power = power * inner
    return out


def taylor_trig(kind: str, degree: int) -> Polynomial:
    """Maclaurin truncation of sin or cos, keeping terms of degree <= degree."""
    if degree < 0:
        raise ValueError("degree must be nonnegative")
    terms = {}
    if kind == "sin":
        k = 1
        while k <= degree:
            terms[(k,)] = (-1.0) ** ((k - 1) // 2) / math.factorial(k)
            k += 2
    elif kind == "cos":
        k = 0
        while k <= degree:
            terms[(k,)] = (-1.0) ** (k // 2) / math.factorial(k)
            k += 2
    else:
        raise ValueError("kind must be 'sin' or 'cos'")
    return Polynomial(1, terms)
