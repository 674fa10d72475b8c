"""Text DSL for germs (and conic homeomorphisms) plus a canonical printer.

Grammar::

    germ    := "map" INT "->" INT "{" (IDENT "=" expr ";")+ "}" | builtin
    builtin := "ldm" "(" INT "," INT ";" pair ("," pair)* ")"
             | "psi" "(" INT ")" | "catalog" "(" STRING ")"
    expr    := term (("+" | "-") term)*
    term    := unary (("*" | "/") unary)*
    unary   := "-" unary | power
    power   := atom ("^" INT)?
    atom    := NUMBER | "x"INT | "(" expr ")" | FUNC "(" expr ")"
             | "root" "(" expr "," INT ")"
             | "piecewise" "(" expr (">=" | ">") "0" "?" expr ":" expr ")"

``#`` starts a comment that runs to the end of the line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction

from .errors import ArityError, GermSyntaxError
from .germ_model import (
    FUNCTIONS,
    Add,
    Const,
    Div,
    Func,
    Guard,
    MapGerm,
    Mul,
    Neg,
    Pow,
    Root,
    Sub,
    Var,
    builtin_catalog,
    builtin_ldm,
    builtin_psi,
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<number>(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<string>"[^"\n]*")
  | (?P<op>->|>=|[-+*/^(){};=,?:>])
    """,
    re.VERBOSE,
)


@dataclass
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise GermSyntaxError(line, pos - line_start + 1, "a token", text[pos])
        kind = m.lastgroup
        chunk = m.group()
        if kind != "ws":
            tokens.append(Token(kind, chunk, line, pos - line_start + 1))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    def __init__(self, text):
        self.toks = tokenize(text)
        self.i = 0
        self.n = None  # ambient dimension once known

    @property
    def tok(self):
        return self.toks[self.i]

    def peek(self, k=1):
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def fail(self, expected):
        t = self.tok
        raise GermSyntaxError(t.line, t.col, expected, t.text or "end of input")

    def accept(self, text):
        if self.tok.text == text and self.tok.kind in ("op", "ident"):
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            self.fail(repr(text))

    def expect_int(self):
        t = self.tok
        if t.kind != "number" or not t.text.isdigit():
            self.fail("an integer")
        self.i += 1
        return int(t.text)

    def signed_fraction(self):
        neg = self.accept("-")
        t = self.tok
        if t.kind != "number":
            self.fail("a number")
        self.i += 1
        v = Fraction(t.text)
        if self.accept("/"):
            d = self.tok
            if d.kind != "number":
                self.fail("a denominator")
            self.i += 1
            v = v / Fraction(d.text)
        return -v if neg else v

    # grammar ------------------------------------------------------------

    def germ(self):
        t = self.tok
        if t.kind == "ident" and t.text == "map":
            g = self.map_block()
        elif t.kind == "ident" and t.text in ("ldm", "psi", "catalog"):
            g = self.builtin()
        else:
            self.fail("'map', 'ldm', 'psi' or 'catalog'")
        if self.tok.kind != "eof":
            self.fail("end of input")
        return g

    def builtin(self):
        name = self.tok.text
        self.i += 1
        self.expect("(")
        if name == "psi":
            n = self.expect_int()
            self.expect(")")
            return builtin_psi(n)
        if name == "catalog":
            t = self.tok
            if t.kind != "string":
                self.fail("a quoted catalog name")
            self.i += 1
            self.expect(")")
            return builtin_catalog(t.text[1:-1])
        p = self.expect_int()
        self.expect(",")
        q = self.expect_int()
        self.expect(";")
        lambdas = [self.pair()]
        while self.accept(","):
            lambdas.append(self.pair())
        self.expect(")")
        return builtin_ldm(p, q, lambdas)

    def pair(self):
        self.expect("(")
        a = self.signed_fraction()
        self.expect(",")
        b = self.signed_fraction()
        self.expect(")")
        return (a, b)

    def map_block(self):
        self.expect("map")
        n = self.expect_int()
        self.expect("->")
        k = self.expect_int()
        self.n = n
        self.expect("{")
        names, comps = self.assignments()
        self.expect("}")
        if len(comps) != k:
            raise ArityError(f"header declares k={k} components but {len(comps)} were given")
        return MapGerm(n, k, tuple(comps), names=tuple(names))

    def assignments(self):
        names, comps = [], []
        while True:
            t = self.tok
            if t.kind != "ident":
                if comps:
                    break
                self.fail("a component name")
            self.i += 1
            self.expect("=")
            comps.append(self.expr())
            names.append(t.text)
            if not self.accept(";"):
                self.fail("';'")
            if self.tok.text == "}":
                break
        return names, comps

    def expr(self):
        node = self.term()
        while True:
            if self.accept("+"):
                node = Add(node, self.term())
            elif self.accept("-"):
                node = Sub(node, self.term())
            else:
                return node

    def term(self):
        node = self.unary()
        while True:
            if self.accept("*"):
                node = Mul(node, self.unary())
            elif self.accept("/"):
                node = Div(node, self.unary())
            else:
                return node

    def unary(self):
        if self.accept("-"):
            # a bare negative literal folds into the constant
            if self.tok.kind == "number" and self.peek().text != "^":
                t = self.tok
                self.i += 1
                return Const(-float(t.text))
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.accept("^"):
            return Pow(base, self.expect_int())
        return base

    def atom(self):
        t = self.tok
        if t.kind == "number":
            self.i += 1
            return Const(float(t.text))
        if t.kind == "op" and t.text == "(":
            self.i += 1
            node = self.expr()
            self.expect(")")
            return node
        if t.kind == "ident":
            m = re.fullmatch(r"x([1-9]\d*)", t.text)
            if m:
                self.i += 1
                idx = int(m.group(1)) - 1
                if self.n is not None and idx >= self.n:
                    raise ArityError(f"{t.text} at line {t.line}, col {t.col} exceeds n={self.n}")
                return Var(idx)
            if t.text in FUNCTIONS:
                self.i += 1
                self.expect("(")
                arg = self.expr()
                if self.tok.text == ",":
                    raise ArityError(f"{t.text} takes one argument (line {t.line}, col {t.col})")
                self.expect(")")
                return Func(t.text, arg)
            if t.text == "root":
                self.i += 1
                self.expect("(")
                arg = self.expr()
                self.expect(",")
                m = self.expect_int()
                self.expect(")")
                return Root(arg, m)
            if t.text == "piecewise":
                return self.piecewise()
        self.fail("a number, variable, function or '('")

    def piecewise(self):
        self.i += 1
        self.expect("(")
        cond = self.expr()
        if self.accept(">="):
            strict = False
        elif self.accept(">"):
            strict = True
        else:
            self.fail("'>=' or '>'")
        z = self.tok
        if z.kind != "number" or float(z.text) != 0.0:
            self.fail("0")
        self.i += 1
        self.expect("?")
        pos = self.expr()
        self.expect(":")
        neg = self.expr()
        self.expect(")")
        return Guard(cond, strict, pos, neg)


def parse(text: str) -> MapGerm:
    """Parse germ source text into a MapGerm."""
    return _Parser(text).germ()


def parse_expr(text: str, n: int | None = None):
    p = _Parser(text)
    p.n = n
    node = p.expr()
    if p.tok.kind != "eof":
        p.fail("end of input")
    return node


# ---------------------------------------------------------------------------
# homeomorphism blocks: homeo K { fwd { ... } inv { ... } eta = 0.3; }
# ---------------------------------------------------------------------------


def parse_homeo_source(text: str):
    """Return (k, fwd components, inv components, eta or None)."""
    p = _Parser(text)
    p.expect("homeo")
    k = p.expect_int()
    p.n = k
    p.expect("{")
    blocks = {}
    eta = None
    while p.tok.text != "}":
        t = p.tok
        if t.text in ("fwd", "inv"):
            p.i += 1
            p.expect("{")
            _, comps = p.assignments()
            p.expect("}")
            if len(comps) != k:
                raise ArityError(f"{t.text} block needs {k} components, got {len(comps)}")
            blocks[t.text] = tuple(comps)
        elif t.text == "eta":
            p.i += 1
            p.expect("=")
            v = p.tok
            if v.kind != "number":
                p.fail("a number")
            p.i += 1
            eta = float(v.text)
            p.expect(";")
        else:
            p.fail("'fwd', 'inv', 'eta' or '}'")
    p.expect("}")
    if p.tok.kind != "eof":
        p.fail("end of input")
    for b in ("fwd", "inv"):
        if b not in blocks:
            raise GermSyntaxError(p.tok.line, p.tok.col, f"a {b} block")
    return k, blocks["fwd"], blocks["inv"], eta


# ---------------------------------------------------------------------------
# printing
# ---------------------------------------------------------------------------

_ADD, _MUL, _UNARY, _POW, _ATOM = 1, 2, 3, 4, 5


def format_number(v) -> str:
    if isinstance(v, Fraction):
        return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"
    v = float(v)
    if v.is_integer() and abs(v) < 1e16:
        return str(int(v))
    return repr(v)


def _level(e) -> int:
    if isinstance(e, (Add, Sub)):
        return _ADD
    if isinstance(e, (Mul, Div)):
        return _MUL
    if isinstance(e, Neg):
        return _UNARY
    if isinstance(e, Const) and (e.value < 0 or str(e.value).startswith("-")):
        return _UNARY
    if isinstance(e, Pow):
        return _POW
    return _ATOM


def _wrap(e, min_level):
    s = pretty_expr(e)
    return f"({s})" if _level(e) < min_level else s


def pretty_expr(e) -> str:
    if isinstance(e, Const):
        return format_number(e.value)
    if isinstance(e, Var):
        return f"x{e.index + 1}"
    if isinstance(e, Add):
        return f"{_wrap(e.a, _ADD)} + {_wrap(e.b, _MUL)}"
    if isinstance(e, Sub):
        return f"{_wrap(e.a, _ADD)} - {_wrap(e.b, _MUL)}"
    if isinstance(e, Mul):
        return f"{_wrap(e.a, _MUL)}*{_wrap(e.b, _UNARY)}"
    if isinstance(e, Div):
        return f"{_wrap(e.a, _MUL)}/{_wrap(e.b, _UNARY)}"
    if isinstance(e, Neg):
        inner = e.a
        if isinstance(inner, Const) and _level(inner) == _ATOM:
            return f"-({pretty_expr(inner)})"
        return f"-{_wrap(inner, _UNARY)}"
    if isinstance(e, Pow):
        return f"{_wrap(e.a, _ATOM)}^{e.exponent}"
    if isinstance(e, Func):
        return f"{e.name}({pretty_expr(e.a)})"
    if isinstance(e, Root):
        return f"root({pretty_expr(e.a)}, {e.m})"
    if isinstance(e, Guard):
        op = ">" if e.strict else ">="
        return f"piecewise({pretty_expr(e.cond)} {op} 0 ? {pretty_expr(e.pos)} : {pretty_expr(e.neg)})"
    raise TypeError(f"not an expression node: {e!r}")


def pretty(germ: MapGerm) -> str:
    """Canonical source text; builtins print in builtin form."""
    fam = germ.family
    if fam is not None:
        if fam.kind == "psi":
            return f"psi({fam.params[0]})"
        if fam.kind == "catalog":
            return f'catalog("{fam.params[0]}")'
        if fam.kind == "ldm":
            p, q, lambdas = fam.params
            pairs = ", ".join(f"({format_number(a)}, {format_number(b)})" for a, b in lambdas)
            return f"ldm({p}, {q}; {pairs})"
    body = " ".join(f"{name} = {pretty_expr(c)};" for name, c in zip(germ.names, germ.components))
    return f"map {germ.n} -> {germ.k} {{ {body} }}"


def parse_germ_uri(uri: str) -> MapGerm:
    """CLI shorthand: ``psi:3``, ``ldm:2,2:(2,1),(-1,1)``, ``catalog:ex6``."""
    if uri.startswith("psi:"):
        return parse(f"psi({uri[4:]})")
    if uri.startswith("catalog:"):
        return parse(f'catalog("{uri[8:]}")')
    if uri.startswith("ldm:"):
        head, _, pairs = uri[4:].partition(":")
        return parse(f"ldm({head}; {pairs})")
    raise ValueError(f"not a germ URI: {uri!r}")

