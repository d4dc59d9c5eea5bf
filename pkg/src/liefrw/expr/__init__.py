"""Minimal exact computer-algebra core."""

from .core import (
    Add,
    Const,
    Exp,
    Expr,
    Func,
    Lambda,
    Log,
    Mul,
    Pow,
    Var,
    as_expr,
    jet_var,
    normalize,
    symbol,
    symbols,
)
from .ops import (
    EvaluationDomainError,
    NormalizationError,
    NotPolynomial,
    UnboundSymbol,
    collect,
    compile_exprs,
    differentiate,
    evaluate,
    free_vars,
    is_zero,
    substitute,
)
from .parse import ParseError, parse
from .render import render


def exp(x) -> Expr:
    return normalize(Exp(as_expr(x)))


def ln(x) -> Expr:
    return normalize(Log(as_expr(x)))


def func(name: str, *args) -> Expr:
    """Opaque function application ``name(args...)``."""
    return normalize(Func(name, [as_expr(a) for a in args]))


__all__ = [
    "Add", "Const", "Exp", "Expr", "Func", "Lambda", "Log", "Mul", "Pow", "Var",
    "EvaluationDomainError", "NormalizationError", "NotPolynomial", "ParseError", "UnboundSymbol",
    "as_expr", "collect", "compile_exprs", "differentiate", "evaluate", "exp",
    "free_vars", "func", "is_zero", "jet_var", "ln", "normalize", "parse", "render",
    "substitute", "symbol", "symbols",
]
