"""Map germs f: R^n -> R^k as expression trees, with forward-mode Jacobians.

Every component is a small immutable tree.  The same tree is evaluated either
on plain float arrays or on :class:`Jet1` dual numbers, and both modes accept
a batch axis so samplers can push thousands of points through one call.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import BranchBoundary, DomainError, HyperbolicityViolation, UnknownName

GERM_ZERO_TOL = 1e-12
BUMP_FLOOR = 1e-300
# exp(-1/t) is below the smallest subnormal double once t < 1/745
BUMP_UNDERFLOW = 1.0 / 745.0

FUNCTIONS = ("exp", "log", "sqrt", "cbrt", "abs", "bump")


# ---------------------------------------------------------------------------
# expression nodes
# ---------------------------------------------------------------------------


class Expr:
    """Base class for scalar expression nodes."""

    __slots__ = ()

    def __add__(self, other):
        return Add(self, as_expr(other))

    def __radd__(self, other):
        return Add(as_expr(other), self)

    def __sub__(self, other):
        return Sub(self, as_expr(other))

    def __rsub__(self, other):
        return Sub(as_expr(other), self)

    def __mul__(self, other):
        return Mul(self, as_expr(other))

    def __rmul__(self, other):
        return Mul(as_expr(other), self)

    def __truediv__(self, other):
        return Div(self, as_expr(other))

    def __rtruediv__(self, other):
        return Div(as_expr(other), self)

    def __neg__(self):
        return Neg(self)

    def __pow__(self, e):
        return Pow(self, e)


@dataclass(frozen=True, eq=True)
class Const(Expr):
    value: float

    def __post_init__(self):
        v = float(self.value)
        if not np.isfinite(v):
            raise DomainError(f"non-finite constant {self.value!r}")
        object.__setattr__(self, "value", v)


@dataclass(frozen=True)
class Var(Expr):
    index: int  # 0-based; printed as x{index+1}

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("variable index must be >= 0")


@dataclass(frozen=True)
class Add(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Sub(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Mul(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Div(Expr):
    a: Expr
    b: Expr


@dataclass(frozen=True)
class Neg(Expr):
    a: Expr


@dataclass(frozen=True)
class Pow(Expr):
    a: Expr
    exponent: int

    def __post_init__(self):
        if int(self.exponent) != self.exponent or self.exponent < 0:
            raise ValueError("integer powers need a non-negative integer exponent")
        object.__setattr__(self, "exponent", int(self.exponent))


@dataclass(frozen=True)
class Func(Expr):
    name: str
    a: Expr

    def __post_init__(self):
        if self.name not in FUNCTIONS:
            raise UnknownName(f"unknown function {self.name!r}")


@dataclass(frozen=True)
class Root(Expr):
    """Real m-th root: sign preserving for odd m, only defined on [0, inf) for even m."""

    a: Expr
    m: int

    def __post_init__(self):
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("root order must be a positive integer")
        object.__setattr__(self, "m", int(self.m))


@dataclass(frozen=True)
class Guard(Expr):
    """``pos if cond >= 0 else neg`` (``cond > 0`` when strict)."""

    cond: Expr
    strict: bool
    pos: Expr
    neg: Expr


def as_expr(v) -> Expr:
    if isinstance(v, Expr):
        return v
    return Const(float(v))


def exp(a):
    return Func("exp", as_expr(a))


def log(a):
    return Func("log", as_expr(a))


def sqrt(a):
    return Func("sqrt", as_expr(a))


def cbrt(a):
    return Func("cbrt", as_expr(a))


def absval(a):
    return Func("abs", as_expr(a))


def bump(a):
    return Func("bump", as_expr(a))


def piecewise(cond, pos, neg, strict=False):
    return Guard(as_expr(cond), bool(strict), as_expr(pos), as_expr(neg))


def children(e: Expr) -> tuple:
    if isinstance(e, (Const, Var)):
        return ()
    if isinstance(e, (Add, Sub, Mul, Div)):
        return (e.a, e.b)
    if isinstance(e, (Neg, Pow, Func, Root)):
        return (e.a,)
    if isinstance(e, Guard):
        return (e.cond, e.pos, e.neg)
    raise TypeError(f"not an expression node: {e!r}")


def walk(e: Expr):
    yield e
    for c in children(e):
        yield from walk(c)


def max_var_index(e: Expr) -> int:
    return max((n.index for n in walk(e) if isinstance(n, Var)), default=-1)


def substitute(e: Expr, args: Sequence[Expr]) -> Expr:
    """Replace every variable x_i by ``args[i]``."""
    if isinstance(e, Var):
        return args[e.index]
    if isinstance(e, Const):
        return e
    if isinstance(e, Add):
        return Add(substitute(e.a, args), substitute(e.b, args))
    if isinstance(e, Sub):
        return Sub(substitute(e.a, args), substitute(e.b, args))
    if isinstance(e, Mul):
        return Mul(substitute(e.a, args), substitute(e.b, args))
    if isinstance(e, Div):
        return Div(substitute(e.a, args), substitute(e.b, args))
    if isinstance(e, Neg):
        return Neg(substitute(e.a, args))
    if isinstance(e, Pow):
        return Pow(substitute(e.a, args), e.exponent)
    if isinstance(e, Func):
        return Func(e.name, substitute(e.a, args))
    if isinstance(e, Root):
        return Root(substitute(e.a, args), e.m)
    if isinstance(e, Guard):
        return Guard(substitute(e.cond, args), e.strict, substitute(e.pos, args), substitute(e.neg, args))
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# dual numbers
# ---------------------------------------------------------------------------


class Jet1:
    """First-order jet: a value and its n partial derivatives.

    ``value`` has the batch shape S and ``partials`` has shape (n,) + S.
    """

    __slots__ = ("value", "partials")

    def __init__(self, value, partials):
        self.value = value
        self.partials = partials

    @property
    def n(self):
        return self.partials.shape[0]

    def __add__(self, o):
        return Jet1(self.value + o.value, self.partials + o.partials)

    def __sub__(self, o):
        return Jet1(self.value - o.value, self.partials - o.partials)

    def __mul__(self, o):
        return Jet1(self.value * o.value, self.partials * o.value + o.partials * self.value)

    def __truediv__(self, o):
        q = self.value / o.value
        return Jet1(q, (self.partials - o.partials * q) / o.value)

    def __neg__(self):
        return Jet1(-self.value, -self.partials)

    def chain(self, value, dvalue):
        """Apply a scalar function with value ``value`` and derivative ``dvalue``."""
        return Jet1(value, self.partials * dvalue)


def _ipow(base, e, one):
    # repeated squaring so homogeneous examples stay exact on duals too
    result = one
    while e:
        if e & 1:
            result = result * base
        e >>= 1
        if e:
            base = base * base
    return result


def _bump_value(t):
    t = np.asarray(t, dtype=float)
    pos = t > BUMP_FLOOR
    ts = np.where(pos, t, 1.0)
    return np.where(pos, np.exp(-1.0 / ts), 0.0)


def _bump_deriv(t):
    t = np.asarray(t, dtype=float)
    pos = t > BUMP_FLOOR
    ts = np.where(pos, t, 1.0)
    # exp(-1/t) / t^2 written in log form so tiny t never overflows
    return np.where(pos, np.exp(-1.0 / ts - 2.0 * np.log(ts)), 0.0)


def _root_value(a, m):
    if m == 1:
        return a
    if m == 2:
        return np.sqrt(a)
    if m == 3:
        return np.cbrt(a)
    if m % 2:
        return np.sign(a) * np.abs(a) ** (1.0 / m)
    return np.where(a >= 0, np.abs(a) ** (1.0 / m), np.nan)


@dataclass
class _Ctx:
    n: int
    shape: tuple
    side: str | None = None
    seam_tol: float = 0.0
    on_seam: str = "raise"
    seam_hit: np.ndarray | None = None


def _taken(c, strict, ctx, jet):
    taken = c > 0 if strict else c >= 0
    near = np.abs(c) <= ctx.seam_tol
    if not np.any(near):
        return taken
    if ctx.side is not None:
        return np.where(near, ctx.side == "pos", taken)
    if jet:
        if ctx.on_seam == "raise":
            raise BranchBoundary("point lies on a guard seam; pass side='pos' or side='neg'")
        ctx.seam_hit = near if ctx.seam_hit is None else (ctx.seam_hit | near)
    return taken


def _eval_value(e, xs, ctx):
    if isinstance(e, Const):
        return np.full(ctx.shape, e.value)
    if isinstance(e, Var):
        return xs[e.index]
    if isinstance(e, Add):
        return _eval_value(e.a, xs, ctx) + _eval_value(e.b, xs, ctx)
    if isinstance(e, Sub):
        return _eval_value(e.a, xs, ctx) - _eval_value(e.b, xs, ctx)
    if isinstance(e, Mul):
        return _eval_value(e.a, xs, ctx) * _eval_value(e.b, xs, ctx)
    if isinstance(e, Div):
        b = _eval_value(e.b, xs, ctx)
        a = _eval_value(e.a, xs, ctx)
        return np.where(b == 0, np.nan, a / np.where(b == 0, 1.0, b))
    if isinstance(e, Neg):
        return -_eval_value(e.a, xs, ctx)
    if isinstance(e, Pow):
        return _ipow(_eval_value(e.a, xs, ctx), e.exponent, np.ones(ctx.shape))
    if isinstance(e, Root):
        return _root_value(_eval_value(e.a, xs, ctx), e.m)
    if isinstance(e, Func):
        a = _eval_value(e.a, xs, ctx)
        if e.name == "exp":
            return np.exp(a)
        if e.name == "log":
            return np.where(a > 0, np.log(np.where(a > 0, a, 1.0)), np.nan)
        if e.name == "sqrt":
            return np.sqrt(a)
        if e.name == "cbrt":
            return np.cbrt(a)
        if e.name == "abs":
            return np.abs(a)
        if e.name == "bump":
            return _bump_value(a)
    if isinstance(e, Guard):
        c = _eval_value(e.cond, xs, ctx)
        taken = _taken(c, e.strict, ctx, jet=False)
        return np.where(taken, _eval_value(e.pos, xs, ctx), _eval_value(e.neg, xs, ctx))
    raise TypeError(f"not an expression node: {e!r}")


def _eval_jet(e, xs, ctx):
    if isinstance(e, Const):
        return Jet1(np.full(ctx.shape, e.value), np.zeros((ctx.n,) + ctx.shape))
    if isinstance(e, Var):
        p = np.zeros((ctx.n,) + ctx.shape)
        p[e.index] = 1.0
        return Jet1(xs[e.index], p)
    if isinstance(e, Add):
        return _eval_jet(e.a, xs, ctx) + _eval_jet(e.b, xs, ctx)
    if isinstance(e, Sub):
        return _eval_jet(e.a, xs, ctx) - _eval_jet(e.b, xs, ctx)
    if isinstance(e, Mul):
        return _eval_jet(e.a, xs, ctx) * _eval_jet(e.b, xs, ctx)
    if isinstance(e, Div):
        a, b = _eval_jet(e.a, xs, ctx), _eval_jet(e.b, xs, ctx)
        zero = b.value == 0
        safe = Jet1(np.where(zero, 1.0, b.value), b.partials)
        q = a / safe
        return Jet1(np.where(zero, np.nan, q.value), np.where(zero, np.nan, q.partials))
    if isinstance(e, Neg):
        return -_eval_jet(e.a, xs, ctx)
    if isinstance(e, Pow):
        one = Jet1(np.ones(ctx.shape), np.zeros((ctx.n,) + ctx.shape))
        return _ipow(_eval_jet(e.a, xs, ctx), e.exponent, one)
    if isinstance(e, Root):
        a = _eval_jet(e.a, xs, ctx)
        r = _root_value(a.value, e.m)
        if e.m == 1:
            return a
        d = 1.0 / (e.m * np.abs(r) ** (e.m - 1)) if e.m > 1 else 1.0
        return a.chain(r, d)
    if isinstance(e, Func):
        a = _eval_jet(e.a, xs, ctx)
        v = a.value
        if e.name == "exp":
            ev = np.exp(v)
            return a.chain(ev, ev)
        if e.name == "log":
            ok = v > 0
            return a.chain(np.where(ok, np.log(np.where(ok, v, 1.0)), np.nan), np.where(ok, 1.0 / np.where(ok, v, 1.0), np.nan))
        if e.name == "sqrt":
            r = np.sqrt(v)
            return a.chain(r, 0.5 / r)
        if e.name == "cbrt":
            r = np.cbrt(v)
            return a.chain(r, 1.0 / (3.0 * r * r))
        if e.name == "abs":
            s = np.sign(v)
            zero = v == 0
            if np.any(zero):
                if ctx.side is not None:
                    s = np.where(zero, 1.0 if ctx.side == "pos" else -1.0, s)
                elif ctx.on_seam == "raise":
                    raise BranchBoundary("abs is not differentiable at 0; pass a side")
                else:
                    ctx.seam_hit = zero if ctx.seam_hit is None else (ctx.seam_hit | zero)
            return a.chain(np.abs(v), s)
        if e.name == "bump":
            return a.chain(_bump_value(v), _bump_deriv(v))
    if isinstance(e, Guard):
        c = _eval_value(e.cond, xs, ctx)
        taken = _taken(c, e.strict, ctx, jet=True)
        p, q = _eval_jet(e.pos, xs, ctx), _eval_jet(e.neg, xs, ctx)
        return Jet1(np.where(taken, p.value, q.value), np.where(taken, p.partials, q.partials))
    raise TypeError(f"not an expression node: {e!r}")


# ---------------------------------------------------------------------------
# map germs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Family:
    """Builtin provenance tag: ``kind`` is 'ldm', 'psi' or 'catalog'."""

    kind: str
    params: tuple = ()


SMOOTHNESS = ("analytic", "smooth")


def infer_smoothness(components) -> str:
    kinds = set()
    for c in components:
        for node in walk(c):
            if isinstance(node, Func):
                kinds.add(node.name)
            elif isinstance(node, (Guard, Root)):
                kinds.add("guard")
    if kinds & {"sqrt", "cbrt", "abs", "guard"}:
        return "C1"
    if "bump" in kinds:
        return "smooth"
    return "analytic"


@dataclass(frozen=True)
class MapGerm:
    n: int
    k: int
    components: tuple
    smoothness: str = field(default="", compare=False)
    family: Family | None = field(default=None, compare=False)
    names: tuple = field(default=(), compare=False)
    check_origin: bool = field(default=True, compare=False, repr=False)

    def __post_init__(self):
        comps = tuple(as_expr(c) for c in self.components)
        object.__setattr__(self, "components", comps)
        if self.n < 1 or self.k < 1:
            raise ValueError("dimensions must be positive")
        if len(comps) != self.k:
            raise ValueError(f"expected {self.k} components, got {len(comps)}")
        for c in comps:
            if max_var_index(c) >= self.n:
                raise ValueError(f"variable x{max_var_index(c) + 1} exceeds n={self.n}")
        if not self.smoothness:
            object.__setattr__(self, "smoothness", infer_smoothness(comps))
        if not self.names:
            object.__setattr__(self, "names", tuple(f"u{i + 1}" for i in range(self.k)))
        if self.check_origin:
            at0 = self.eval(np.zeros(self.n))
            if np.max(np.abs(at0)) > GERM_ZERO_TOL:
                raise ValueError(f"germ convention violated: f(0) = {at0.tolist()}")

    # evaluation -----------------------------------------------------------

    def _split(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n:
            raise ValueError(f"point has dimension {x.shape[-1]}, germ expects n={self.n}")
        xs = tuple(np.moveaxis(x, -1, 0))
        return xs, x.shape[:-1]

    def eval(self, x, side=None, seam_tol=0.0):
        """f(x) for one point of shape (n,) or a batch of shape (..., n)."""
        xs, shape = self._split(x)
        ctx = _Ctx(self.n, shape, side=side, seam_tol=seam_tol)
        with np.errstate(all="ignore"):
            out = np.stack([np.broadcast_to(_eval_value(c, xs, ctx), shape) for c in self.components], axis=-1)
        if not np.all(np.isfinite(out)):
            raise DomainError("evaluation hit a division by zero, a negative root or an overflow")
        return out

    def eval_nan(self, x, side=None, seam_tol=0.0):
        """Batch evaluation that returns NaN rows instead of raising."""
        xs, shape = self._split(x)
        ctx = _Ctx(self.n, shape, side=side, seam_tol=seam_tol)
        with np.errstate(all="ignore"):
            out = np.stack([np.broadcast_to(_eval_value(c, xs, ctx), shape) for c in self.components], axis=-1)
        return np.where(np.isfinite(out), out, np.nan)

    def _jets(self, x, side, seam_tol, on_seam):
        xs, shape = self._split(x)
        ctx = _Ctx(self.n, shape, side=side, seam_tol=seam_tol, on_seam=on_seam)
        with np.errstate(all="ignore"):
            jets = [_eval_jet(c, xs, ctx) for c in self.components]
        vals = np.stack([np.broadcast_to(j.value, shape) for j in jets], axis=-1)
        # partials (n,)+S -> S+(k, n)
        jac = np.stack([np.moveaxis(np.broadcast_to(j.partials, (self.n,) + shape), 0, -1) for j in jets], axis=-2)
        return vals, jac, ctx.seam_hit

    def jacobian(self, x, side=None, seam_tol=0.0):
        """k x n Jacobian (or batch (..., k, n)) by forward-mode dual numbers."""
        _, jac, _ = self._jets(x, side, seam_tol, "raise")
        if not np.all(np.isfinite(jac)):
            raise DomainError("derivative is not finite here (root at 0, division by zero or overflow)")
        return jac

    def value_and_jacobian(self, x, side=None):
        vals, jac, _ = self._jets(x, side, 0.0, "raise")
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(jac))):
            raise DomainError("value or derivative is not finite here")
        return vals, jac

    def jacobian_nan(self, x):
        """Batch variant: points on a seam or with non-finite data come back as NaN."""
        vals, jac, seam = self._jets(x, None, 0.0, "nan")
        bad = ~np.all(np.isfinite(jac), axis=(-2, -1)) | ~np.all(np.isfinite(vals), axis=-1)
        if seam is not None:
            bad = bad | seam
        jac = np.where(bad[..., None, None], np.nan, jac)
        vals = np.where(bad[..., None], np.nan, vals)
        return vals, jac

    def bump_underflow(self, x):
        """Mask of points where some bump(t) has 0 < t < 1/745.

        There the value and all derivatives round to zero although the true
        ones are positive, so rank decisions in double precision are void.
        """
        xs, shape = self._split(x)
        ctx = _Ctx(self.n, shape)
        mask = np.zeros(shape, dtype=bool)
        with np.errstate(all="ignore"):
            for c in self.components:
                for node in walk(c):
                    if isinstance(node, Func) and node.name == "bump":
                        t = np.broadcast_to(_eval_value(node.a, xs, ctx), shape)
                        mask |= (t > BUMP_FLOOR) & (t < BUMP_UNDERFLOW)
        return mask

    def with_family(self, family):
        return MapGerm(self.n, self.k, self.components, self.smoothness, family, self.names, check_origin=False)

    def scaled(self, factors):
        """Germ with each component multiplied by a constant."""
        comps = tuple(Mul(Const(float(a)), c) for a, c in zip(factors, self.components))
        return MapGerm(self.n, self.k, comps, self.smoothness, None, self.names, check_origin=False)


def evaluate(germ: MapGerm, x):
    return germ.eval(x)


def jacobian(germ: MapGerm, x, side=None):
    return germ.jacobian(x, side=side)


# ---------------------------------------------------------------------------
# builtins
# ---------------------------------------------------------------------------


def _exact(v):
    if isinstance(v, Fraction):
        return v
    if isinstance(v, int):
        return Fraction(v)
    if isinstance(v, str):
        return Fraction(v)
    return None


def check_hyperbolicity(lambdas):
    """Raise HyperbolicityViolation if two coefficient pairs are linearly dependent."""
    for i in range(len(lambdas)):
        for j in range(i + 1, len(lambdas)):
            (a1, b1), (a2, b2) = lambdas[i], lambdas[j]
            ex = [_exact(v) for v in (a1, b1, a2, b2)]
            if all(v is not None for v in ex):
                dependent = ex[0] * ex[3] - ex[2] * ex[1] == 0
            else:
                a1, b1, a2, b2 = (float(v) for v in (a1, b1, a2, b2))
                dependent = abs(a1 * b2 - a2 * b1) <= 1e-12 * max(1.0, abs(a1 * b2), abs(a2 * b1))
            if dependent:
                raise HyperbolicityViolation(i, j, lambdas[i], lambdas[j])
    for i, (a, b) in enumerate(lambdas):
        if float(a) == 0 and float(b) == 0:
            raise HyperbolicityViolation(i, i, lambdas[i], lambdas[i])


def _weighted_sum(coefs, power):
    expr = None
    for i, c in enumerate(coefs):
        c = float(c)
        if c == 0:
            continue
        term = Pow(Var(i), power)
        if c != 1:
            term = Mul(Const(c), term)
        expr = term if expr is None else Add(expr, term)
    return expr if expr is not None else Const(0.0)


def _norm_coef(v):
    v = _exact(v) if _exact(v) is not None else Fraction(float(v)).limit_denominator(10**12)
    return v


def builtin_ldm(p: int, q: int, lambdas) -> MapGerm:
    """(sum a_i x_i^p, sum b_i x_i^q) with lambda_i = (a_i, b_i)."""
    if p < 2 or q < 2:
        raise ValueError("ldm needs p, q >= 2")
    lambdas = [tuple(l) for l in lambdas]
    if len(lambdas) < 2:
        raise ValueError("ldm needs at least two coefficient pairs")
    check_hyperbolicity(lambdas)
    fam = Family("ldm", (int(p), int(q), tuple((_norm_coef(a), _norm_coef(b)) for a, b in lambdas)))
    comps = (_weighted_sum([a for a, _ in lambdas], p), _weighted_sum([b for _, b in lambdas], q))
    return MapGerm(len(lambdas), 2, comps, "analytic", fam, ("u", "v"))


def _sq_dist(n, center):
    expr = None
    for i in range(n):
        c = center[i] if i < len(center) else 0.0
        term = Pow(Sub(Var(i), Const(c)) if c else Var(i), 2)
        expr = term if expr is None else Add(expr, term)
    return expr


def builtin_psi(n: int) -> MapGerm:
    """Psi = (bump(1 - |x - 1bar|^2), bump(4 - |x - 2bar|^2))."""
    if n < 2:
        raise ValueError("psi needs n >= 2")
    f = bump(Sub(Const(1.0), _sq_dist(n, (1.0,))))
    g = bump(Sub(Const(4.0), _sq_dist(n, (2.0,))))
    return MapGerm(n, 2, (f, g), "smooth", Family("psi", (int(n),)), ("f", "g"))


def _catalog_components():
    x, y, z, w = Var(0), Var(1), Var(2), Var(3)
    return {
        "nondreg4": (4, (Sub(Pow(x, 2), Mul(Pow(y, 2), z)), y, w)),
        "ex6": (3, (Add(Mul(Pow(x, 2), z), Pow(y, 3)), x)),
        "parabola": (3, (Add(x, y), Add(Add(Pow(x, 2), Pow(y, 2)), Pow(z, 3)))),
    }


CATALOG_NAMES = tuple(_catalog_components())


def builtin_catalog(name: str) -> MapGerm:
    table = _catalog_components()
    if name not in table:
        raise UnknownName(f"unknown catalog germ {name!r}; known: {', '.join(table)}")
    n, comps = table[name]
    return MapGerm(n, len(comps), comps, "analytic", Family("catalog", (name,)))


def linear_projection(n: int, k: int) -> MapGerm:
    """(x1, ..., xk) as a germ on R^n."""
    return MapGerm(n, k, tuple(Var(i) for i in range(k)), "analytic")
