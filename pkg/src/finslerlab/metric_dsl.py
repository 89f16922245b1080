"""Metric definition language: parsing and compilation of F^2 expressions.

Grammar (whitespace insignificant)::

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := atom ('^' integer)?
    atom   := number | ident | func '(' expr ')' | '(' expr ')' | '-' atom
    func   := conj | re | im | abs2 | sqrt
    ident  := z1..zn | v1..vn

A compiled program evaluates F^2 and its mixed Wirtinger jets, treating
v, vbar, z, zbar as independent differentiation variables.  Two backends are
available: forward-mode jet arithmetic on the expression tree (primary) and
central finite differences (oracle).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .jets import V, VBAR, Z, ZBAR, Jet, JetError, jet_space

FUNCTIONS = ("conj", "re", "im", "abs2", "sqrt")


class FinslerError(Exception):
    """Base class for all errors raised by this package."""


class MetricSyntaxError(FinslerError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class EvaluationError(FinslerError):
    """Evaluation at an inadmissible point (v = 0, pole, non-finite value)."""


# --------------------------------------------------------------------------
# tokenizer / parser
# --------------------------------------------------------------------------

@dataclass
class Token:
    kind: str  # 'num', 'ident', 'op', 'end'
    text: str
    line: int
    column: int


def _tokenize(src: str) -> list[Token]:
    tokens = []
    line, col = 1, 1
    i = 0
    while i < len(src):
        ch = src[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch.isspace():
            col += 1
            i += 1
            continue
        if ch.isdigit() or (ch == "." and i + 1 < len(src) and src[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < len(src) and (src[j].isdigit() or (src[j] == "." and not seen_dot)):
                seen_dot = seen_dot or src[j] == "."
                j += 1
            if j < len(src) and src[j] in "eE":
                k = j + 1
                if k < len(src) and src[k] in "+-":
                    k += 1
                if k < len(src) and src[k].isdigit():
                    while k < len(src) and src[k].isdigit():
                        k += 1
                    j = k
            tokens.append(Token("num", src[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < len(src) and (src[j].isalnum() or src[j] == "_"):
                j += 1
            tokens.append(Token("ident", src[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch in "+-*/^()":
            tokens.append(Token("op", ch, line, col))
            col += 1
            i += 1
            continue
        raise MetricSyntaxError(f"unexpected character {ch!r}", line, col)
    tokens.append(Token("end", "", line, col))
    return tokens


# expression nodes: tuples ('num', value) | ('var', kind, index) |
# ('+'|'-'|'*'|'/', a, b) | ('neg', a) | ('pow', a, int) | (func, a)

class _Parser:
    def __init__(self, tokens: list[Token], dim: int):
        self.tokens = tokens
        self.pos = 0
        self.dim = dim

    def peek(self) -> Token:
        return self.tokens[self.pos]

    def next(self) -> Token:
        t = self.tokens[self.pos]
        self.pos += 1
        return t

    def expect_op(self, text: str):
        t = self.next()
        if t.kind != "op" or t.text != text:
            raise MetricSyntaxError(f"expected {text!r}, found {t.text or 'end of input'!r}",
                                    t.line, t.column)

    def parse(self):
        node = self.expr()
        t = self.peek()
        if t.kind != "end":
            raise MetricSyntaxError(f"unexpected trailing input {t.text!r}", t.line, t.column)
        return node

    def expr(self):
        node = self.term()
        while self.peek().kind == "op" and self.peek().text in "+-":
            op = self.next().text
            node = (op, node, self.term())
        return node

    def term(self):
        node = self.factor()
        while self.peek().kind == "op" and self.peek().text in "*/":
            op = self.next().text
            node = (op, node, self.factor())
        return node

    def factor(self):
        node = self.atom()
        if self.peek().kind == "op" and self.peek().text == "^":
            t = self.next()
            e = self.next()
            if e.kind != "num" or not e.text.isdigit():
                raise MetricSyntaxError("exponent must be an unsigned integer",
                                        e.line if e.kind != "end" else t.line, e.column)
            node = ("pow", node, int(e.text))
        return node

    def atom(self):
        t = self.next()
        if t.kind == "num":
            return ("num", float(t.text))
        if t.kind == "op" and t.text == "-":
            return ("neg", self.atom())
        if t.kind == "op" and t.text == "(":
            node = self.expr()
            self.expect_op(")")
            return node
        if t.kind == "ident":
            name = t.text
            if name in FUNCTIONS:
                self.expect_op("(")
                node = self.expr()
                self.expect_op(")")
                return (name, node)
            if name[:1] in ("z", "v") and name[1:].isdigit():
                k = int(name[1:])
                if not 1 <= k <= self.dim:
                    raise MetricSyntaxError(
                        f"variable {name!r} exceeds chart dimension {self.dim}",
                        t.line, t.column)
                kind = Z if name[0] == "z" else V
                return ("var", kind, k - 1)
            raise MetricSyntaxError(f"unknown identifier {name!r}", t.line, t.column)
        raise MetricSyntaxError(f"unexpected token {t.text or 'end of input'!r}",
                                t.line, t.column)


# --------------------------------------------------------------------------
# compiled program
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MetricSource:
    """Raw definition of a metric: chart dimension and the F^2 expression."""

    dim: int
    f2_expr: str

    @staticmethod
    def from_file(path) -> "MetricSource":
        with open(path, encoding="utf-8") as fh:
            lines = [ln.strip() for ln in fh if ln.strip()]
        if len(lines) < 2 or not lines[0].replace(" ", "").startswith("dim="):
            raise MetricSyntaxError("metric file must start with 'dim = <n>' then 'F2 = <expr>'", 1, 1)
        try:
            dim = int(lines[0].split("=", 1)[1])
        except ValueError:
            raise MetricSyntaxError("dim must be an integer", 1, 1) from None
        if dim < 1:
            raise MetricSyntaxError("dim must be positive", 1, 1)
        if not lines[1].replace(" ", "").startswith("F2="):
            raise MetricSyntaxError("second line must be 'F2 = <expr>'", 2, 1)
        return MetricSource(dim, lines[1].split("=", 1)[1].strip())


class MetricProgram:
    """Compiled chart metric: evaluates F^2 and its mixed Wirtinger jets.

    Instances are immutable; jet evaluation is pure.  The internal point
    cache is transparent memoization only.
    """

    MAX_FIBER_ORDER = 4
    MAX_BASE_ORDER = 1

    def __init__(self, source: MetricSource, root):
        self.source = source
        self.dim = source.dim
        self._root = root
        self._cache: dict = {}

    # -- scalar evaluation ----------------------------------------------------

    def _eval_node(self, node, z, v):
        op = node[0]
        if op == "num":
            return complex(node[1])
        if op == "var":
            return complex(v[node[2]] if node[1] == V else z[node[2]])
        if op == "neg":
            return -self._eval_node(node[1], z, v)
        if op == "+":
            return self._eval_node(node[1], z, v) + self._eval_node(node[2], z, v)
        if op == "-":
            return self._eval_node(node[1], z, v) - self._eval_node(node[2], z, v)
        if op == "*":
            return self._eval_node(node[1], z, v) * self._eval_node(node[2], z, v)
        if op == "/":
            den = self._eval_node(node[2], z, v)
            if den == 0:
                raise EvaluationError("division by zero (pole of the metric expression)")
            return self._eval_node(node[1], z, v) / den
        if op == "pow":
            return self._eval_node(node[1], z, v) ** node[2]
        a = self._eval_node(node[1], z, v)
        if op == "conj":
            return np.conj(a)
        if op == "re":
            return complex(a.real)
        if op == "im":
            return complex(a.imag)
        if op == "abs2":
            return a * np.conj(a)
        if op == "sqrt":
            if a == 0:
                raise EvaluationError("sqrt at a zero of its argument (non-smooth point)")
            return complex(np.sqrt(a))
        raise AssertionError(op)

    def eval_complex(self, z, v) -> complex:
        """F^2 as evaluated, before the reality check."""
        z = np.asarray(z, dtype=complex)
        v = np.asarray(v, dtype=complex)
        val = self._eval_node(self._root, z, v)
        if not np.isfinite(val):
            raise EvaluationError("metric expression evaluated to a non-finite value")
        return val

    def eval(self, z, v) -> float:
        """F^2(z, v) as a real number; raises if the expression is not real."""
        val = self.eval_complex(z, v)
        if abs(val.imag) > 1e-12 * max(1.0, abs(val.real)):
            raise EvaluationError(
                f"F^2 must be real; got imaginary part {val.imag:.3e}")
        return val.real

    def norm(self, z, v) -> float:
        """F(z, v) = sqrt(F^2)."""
        f2 = self.eval(z, v)
        if f2 < 0:
            raise EvaluationError(f"F^2 must be non-negative; got {f2:.3e}")
        return math.sqrt(f2)

    # -- jets -------------------------------------------------------------------

    def _eval_jet_node(self, node, zj, vj, space):
        op = node[0]
        if op == "num":
            return space.const(node[1])
        if op == "var":
            return vj[node[2]] if node[1] == V else zj[node[2]]
        if op == "neg":
            return -self._eval_jet_node(node[1], zj, vj, space)
        if op in "+-*/":
            a = self._eval_jet_node(node[1], zj, vj, space)
            b = self._eval_jet_node(node[2], zj, vj, space)
            return {"+": a.__add__, "-": a.__sub__, "*": a.__mul__, "/": a.__truediv__}[op](b)
        if op == "pow":
            return self._eval_jet_node(node[1], zj, vj, space).pow_int(node[2])
        a = self._eval_jet_node(node[1], zj, vj, space)
        return {"conj": a.conj, "re": a.real, "im": a.imag,
                "abs2": a.abs2, "sqrt": a.sqrt}[op]()

    def jet_unchecked(self, z, v, fiber_order: int, base_order: int) -> Jet:
        """Jet table without the public order cap (internal use)."""
        z = np.asarray(z, dtype=complex)
        v = np.asarray(v, dtype=complex)
        if not np.any(v):
            raise EvaluationError("jets are undefined at v = 0 (homogeneous metrics are "
                                  "non-smooth on the zero section)")
        key = (z.tobytes(), v.tobytes(), fiber_order, base_order)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        space = jet_space(self.dim, fiber_order, base_order)
        zj = [space.variable(Z, k, z[k]) for k in range(self.dim)]
        vj = [space.variable(V, k, v[k]) for k in range(self.dim)]
        try:
            out = self._eval_jet_node(self._root, zj, vj, space)
        except JetError as exc:
            raise EvaluationError(str(exc)) from exc
        if not np.all(np.isfinite(out.c)):
            raise EvaluationError("jet coefficients are non-finite (pole of the expression)")
        if len(self._cache) > 4096:
            self._cache.clear()
        self._cache[key] = out
        return out

    def jet(self, z, v, fiber_order: int = 4, base_order: int = 1) -> Jet:
        """Mixed Wirtinger jet of F^2 at (z, v).

        Fiber order <= 4 and base order <= 1; the table covers every mixed
        partial d^a_v d^b_vbar d^c_z d^d_zbar with a+b <= fiber_order and
        c+d <= base_order.
        """
        if fiber_order > self.MAX_FIBER_ORDER or base_order > self.MAX_BASE_ORDER:
            raise ValueError("jet orders limited to fiber_order <= 4, base_order <= 1")
        return self.jet_unchecked(z, v, fiber_order, base_order)

    # -- finite-difference oracle backend ---------------------------------------

    def fd_derivative(self, z, v, v_idx=(), vbar_idx=(), z_idx=(), zbar_idx=(),
                      step: float | None = None, richardson: bool = False) -> complex:
        """Central-difference Wirtinger mixed partial (oracle backend).

        The default step grows with total derivative order to balance
        truncation against roundoff; pass ``step`` to override.  With
        ``richardson`` the step-h and step-h/2 estimates are combined to
        cancel the leading truncation term.
        """
        if richardson:
            f_h = self.fd_derivative(z, v, v_idx, vbar_idx, z_idx, zbar_idx,
                                     step=step, richardson=False)
            order = len(v_idx) + len(vbar_idx) + len(z_idx) + len(zbar_idx)
            if step is None:
                step = {0: 1e-5, 1: 1e-5, 2: 1e-4, 3: 2e-3, 4: 6e-3}.get(order, 6e-3)
            f_h2 = self.fd_derivative(z, v, v_idx, vbar_idx, z_idx, zbar_idx,
                                      step=step / 2, richardson=False)
            return (4.0 * f_h2 - f_h) / 3.0
        z = np.asarray(z, dtype=complex)
        v = np.asarray(v, dtype=complex)
        order = len(v_idx) + len(vbar_idx) + len(z_idx) + len(zbar_idx)
        if step is None:
            step = {0: 1e-5, 1: 1e-5, 2: 1e-4, 3: 2e-3, 4: 6e-3}.get(order, 6e-3)
        # absolute steps fixed from the base point, so halving the step
        # rescales the whole stencil exactly (Richardson needs this)
        hv = [step * max(1.0, abs(x)) for x in v]
        hz = [step * max(1.0, abs(x)) for x in z]

        def rec(z, v, pending):
            if not pending:
                return self.eval_complex(z, v)
            (kind, k), rest = pending[0], pending[1:]
            h = hv[k] if kind in (V, VBAR) else hz[k]

            def at(delta):
                z2, v2 = z.copy(), v.copy()
                (v2 if kind in (V, VBAR) else z2)[k] += delta
                return rec(z2, v2, rest)

            dre = (at(h) - at(-h)) / (2 * h)
            dim_ = (at(1j * h) - at(-1j * h)) / (2 * h)
            if kind in (V, Z):
                return 0.5 * (dre - 1j * dim_)
            return 0.5 * (dre + 1j * dim_)

        pending = ([(V, k) for k in v_idx] + [(VBAR, k) for k in vbar_idx]
                   + [(Z, k) for k in z_idx] + [(ZBAR, k) for k in zbar_idx])
        return rec(z, v, tuple(pending))


def parse_metric(src: MetricSource) -> MetricProgram:
    """Compile a metric source into an evaluator; deterministic."""
    if src.dim < 1:
        raise MetricSyntaxError("dim must be a positive integer", 1, 1)
    tokens = _tokenize(src.f2_expr)
    root = _Parser(tokens, src.dim).parse()
    return MetricProgram(src, root)


def load_metric(path) -> MetricProgram:
    return parse_metric(MetricSource.from_file(path))
