"""Exception types shared across milnorlab."""

import builtins


class MilnorlabError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(MilnorlabError, ValueError):
    """Division by zero, root of a negative number, or a non-finite value."""


class BranchBoundary(MilnorlabError):
    """Differentiation requested exactly on a guard seam without a side."""


class HyperbolicityViolation(MilnorlabError, ValueError):
    def __init__(self, i, j, li, lj):
        self.pair = (i, j)
        a = "(" + ", ".join(str(v) for v in li) + ")"
        b = "(" + ", ".join(str(v) for v in lj) + ")"
        super().__init__(f"lambda_{i + 1}={a} and lambda_{j + 1}={b} are linearly dependent")


class UnknownName(MilnorlabError, KeyError):
    def __str__(self):
        return str(self.args[0]) if self.args else "unknown name"


class GermSyntaxError(MilnorlabError, builtins.SyntaxError):
    """Parse failure carrying a 1-based line/column and what was expected."""

    def __init__(self, line, col, expected, found=""):
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found
        msg = f"line {line}, col {col}: expected {expected}"
        if found:
            msg += f", found {found!r}"
        super().__init__(msg)

    def __str__(self):
        return self.args[0]


class ArityError(MilnorlabError, ValueError):
    """Component count or variable index does not match the declared header."""


class NoOracle(MilnorlabError):
    pass


class NoDiscriminant(MilnorlabError):
    pass


class OnFiberV(MilnorlabError, ValueError):
    """f(x) vanishes, so f/|f| is undefined."""


class DegenerateProjection(MilnorlabError):
    def __init__(self, msg, x=None, trace=None):
        super().__init__(msg)
        self.x = x
        self.trace = trace


class StepFailure(MilnorlabError):
    def __init__(self, msg, trace=None):
        super().__init__(msg)
        self.trace = trace


class NotSubmersion(MilnorlabError):
    pass


class EmptyCloud(MilnorlabError, ValueError):
    pass


class PreconditionFailed(MilnorlabError):
    """A probe was asked to run on data that violates its stated precondition."""
