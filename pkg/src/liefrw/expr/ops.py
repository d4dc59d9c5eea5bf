"""Differentiate, substitute, collect, decide zero, and evaluate expressions."""

from __future__ import annotations

import logging
import math
import os
import random
from fractions import Fraction
from typing import Any, Callable, Iterable, Mapping, Sequence

from .core import (
    EMPTY,
    _atom_free,
    ZERO,
    Const,
    Expr,
    Func,
    Lambda,
    Log,
    Norm,
    Var,
    as_expr,
    diff_norm,
    from_norm,
    mono_key,
    symbol,
)

log = logging.getLogger(__name__)

Binding = Mapping[Any, Any]


class NotPolynomial(ValueError):
    """A collection variable occurs non-polynomially."""


class UnboundSymbol(KeyError):
    """Evaluation met a variable or opaque function with no binding."""


class EvaluationDomainError(ValueError):
    """Numeric evaluation left the domain (ln of a non-positive value, division by zero)."""


class NormalizationError(AssertionError):
    """The numeric guard disagrees with a symbolic zero: a normalizer bug."""


def _var(v) -> Var:
    if isinstance(v, Var):
        return v
    if isinstance(v, str):
        return symbol(v)
    raise TypeError(f"expected a variable, got {v!r}")


def differentiate(e, v, n: int = 1) -> Expr:
    """Partial derivative of ``e`` with respect to variable ``v`` (``n`` times)."""
    v = _var(v)
    norm = as_expr(e).norm
    for _ in range(n):
        norm = diff_norm(norm, v)
    return from_norm(norm)


def free_vars(e) -> frozenset[Var]:
    return as_expr(e).norm.free_vars()


# ---------------------------------------------------------------------------
# substitution


class _Substituter:
    def __init__(self, binding: Binding):
        self.atoms: dict[Any, Norm] = {}
        self.rules: dict[str, Lambda] = {}
        for k, val in binding.items():
            if isinstance(val, Lambda):
                name = k.name if isinstance(k, Func) else k
                if not isinstance(name, str):
                    raise TypeError(f"function rule key must be a name, got {k!r}")
                self.rules[name] = val
                continue
            if isinstance(k, str):
                k = symbol(k)
            if isinstance(k, Func):
                atoms = k.norm.num
                (m,) = atoms
                k = m[0][0][0]
            elif not isinstance(k, Var):
                raise TypeError(f"cannot substitute for {k!r}")
            self.atoms[k] = as_expr(val).norm
        self.memo: dict[Any, Norm] = {}
        self.nmemo: dict[Norm, Norm] = {}
        self.touch = frozenset(k for k in self.atoms if isinstance(k, Var))
        self.func_keys = any(isinstance(k, Func) for k in self.atoms)

    def atom(self, a) -> Norm:
        got = self.memo.get(a)
        if got is not None:
            return got
        if a in self.atoms:
            out = self.atoms[a]
        elif isinstance(a, Var):
            out = a.norm
        elif isinstance(a, Func):
            args = [self.norm(x.norm) for x in a.args]
            rule = self.rules.get(a.name)
            if rule is not None:
                if len(rule.params) != len(args):
                    raise ValueError(f"rule for {a.name} takes {len(rule.params)} arguments")
                body = rule.body.norm
                for p, order in zip(rule.params, a.orders):
                    for _ in range(order):
                        body = diff_norm(body, p)
                out = _Substituter(dict(zip(rule.params, map(from_norm, args)))).norm(body)
            else:
                out = Func(a.name, [from_norm(x) for x in args], a.orders).norm
        else:
            out = Log(from_norm(self.norm(a.arg.norm))).norm
        self.memo[a] = out
        return out

    def norm(self, n: Norm) -> Norm:
        got = self.nmemo.get(n)
        if got is not None:
            return got
        if not self.rules and not self.func_keys and not (n.free_vars() & self.touch):
            self.nmemo[n] = n
            return n
        out = ZERO
        for (atoms, e), c in n.num.items():
            term = Norm.const(c)
            for a, p in atoms:
                term = term.mul(self.atom(a).pow(p))
            if e is not None:
                term = term.mul(_exp(self.norm(e)))
            out = out.add(term)
        for q, m in n.den:
            out = out.mul(self.norm(Norm(q.terms)).pow(-m))
        self.nmemo[n] = out
        return out


def _exp(n: Norm) -> Norm:
    from .core import Exp

    return Exp(from_norm(n)).norm


def substitute(e, binding: Binding) -> Expr:
    """Simultaneous substitution; keys are variables, opaque nodes, or function names bound to a Lambda."""
    return from_norm(_Substituter(binding).norm(as_expr(e).norm))


# ---------------------------------------------------------------------------
# collection


def collect(e, variables: Sequence) -> dict[Expr, Expr]:
    """Split ``e`` into ``{monomial: coefficient}`` over ``variables``.

    Coefficients are free of the variables; summing ``monomial * coefficient``
    reproduces ``e``.  Raises :class:`NotPolynomial` when a variable sits in a
    denominator, under ``exp``/``ln``, or inside an opaque function argument.
    """
    vs = [_var(v) for v in variables]
    vset = frozenset(vs)
    n = as_expr(e).norm
    for q, _ in n.den:
        if Norm(q.terms).free_vars() & vset:
            raise NotPolynomial("collection variable occurs in a denominator")
    groups: dict[tuple, dict] = {}
    for (atoms, ex), c in n.num.items():
        key = []
        rest = []
        for a, p in atoms:
            if a in vset:
                if p < 0:
                    raise NotPolynomial(f"negative power of {a.name}")
                key.append((a, p))
            else:
                if _atom_free(a) & vset:
                    raise NotPolynomial(f"collection variable inside {a!r}")
                rest.append((a, p))
        if ex is not None and ex.free_vars() & vset:
            raise NotPolynomial("collection variable inside exp")
        groups.setdefault(tuple(key), {})[(tuple(rest), ex)] = c
    out: dict[Expr, Expr] = {}
    order = sorted(groups, key=lambda k: mono_key((k, None)))
    for key in order:
        mono = from_norm(Norm({(key, None): Fraction(1)}))
        coeff = from_norm(Norm(groups[key], ()).mul(Norm({EMPTY: Fraction(1)}, n.den)))
        out[mono] = coeff
    return out


# ---------------------------------------------------------------------------
# zero decision


def _seed() -> int:
    return int(os.environ.get("LIEFRW_SEED", "20240917"))


def is_zero(e, guard: bool = True, points: int = 20) -> bool:
    """Exact zero test on the normal form.

    With ``guard`` the input tree is also evaluated at ``points`` random
    values of its atoms.  A symbolic zero that evaluates clearly nonzero
    raises :class:`NormalizationError`; the guard never turns a nonzero
    normal form into a zero verdict.
    """
    e = as_expr(e)
    zero = e.norm.is_zero
    if guard:
        _guard(e, zero, points)
    return zero


def _guard(e: Expr, zero: bool, points: int) -> None:
    rng = random.Random(_seed())
    small = 0
    tried = 0
    for _ in range(points):
        try:
            val, mag = _tree_eval(e, rng, {})
        except (OverflowError, ZeroDivisionError, ValueError):
            continue
        tried += 1
        close = abs(val) <= 1e-9 * max(mag, 1e-300)
        if zero and not close:
            raise NormalizationError(f"normal form is zero but {render_safe(e)} evaluates to {val}")
        small += close
    if not zero and tried and small == tried:
        log.warning("nonzero normal form is numerically zero at %d points: %s", tried, render_safe(e))


def render_safe(e: Expr) -> str:
    from .render import render

    try:
        return render(e)
    except Exception:  # pragma: no cover - diagnostics only
        return repr(e)


def _tree_eval(e: Expr, rng: random.Random, vals: dict) -> tuple[float, float]:
    """(value, magnitude) of a raw tree with random values for its atoms."""
    from .core import Add, Exp, Mul, Pow

    if isinstance(e, Const):
        v = float(e.value)
        return v, abs(v)
    if isinstance(e, (Var, Func)):
        key = e if isinstance(e, Var) else next(iter(e.norm.num))[0][0][0]
        if key not in vals:
            vals[key] = rng.uniform(0.5, 1.5)
        return vals[key], vals[key]
    if isinstance(e, Add):
        tot, mag = 0.0, 0.0
        for t in e.terms:
            v, m = _tree_eval(t, rng, vals)
            tot += v
            mag += m
        return tot, mag
    if isinstance(e, Mul):
        tot, mag = 1.0, 1.0
        for f in e.factors:
            v, m = _tree_eval(f, rng, vals)
            tot *= v
            mag *= m
        return tot, mag
    if isinstance(e, Pow):
        v, m = _tree_eval(e.base, rng, vals)
        if e.exponent < 0:
            return v ** e.exponent, abs(v) ** e.exponent
        return v ** e.exponent, m ** e.exponent
    if isinstance(e, Exp):
        v, _ = _tree_eval(e.arg, rng, vals)
        out = math.exp(v)
        return out, out
    if isinstance(e, Log):
        v, _ = _tree_eval(e.arg, rng, vals)
        out = math.log(v)
        return out, abs(out) + 1.0
    raise TypeError(type(e).__name__)


# ---------------------------------------------------------------------------
# numeric evaluation


def _resolve(binding: Binding) -> tuple[dict, dict, dict]:
    vars_: dict[Var, float] = {}
    funcs: dict[str, Any] = {}
    nodes: dict[Any, float] = {}
    for k, v in binding.items():
        if isinstance(v, Lambda) or callable(v) and not isinstance(v, (int, float, Fraction)):
            name = k.name if isinstance(k, (Func, Var)) else k
            funcs[name] = v
        elif isinstance(k, Func):
            atom = next(iter(k.norm.num))[0][0][0]
            nodes[atom] = float(v)
        elif isinstance(k, str):
            vars_[symbol(k)] = float(v)
        elif isinstance(k, Var):
            vars_[k] = float(v)
        else:
            raise TypeError(f"bad binding key {k!r}")
    return vars_, funcs, nodes


def evaluate(e, binding: Binding) -> float:
    """IEEE double value of ``e`` under a numeric binding.

    Variables map to numbers.  Opaque functions map by name to a
    :class:`Lambda` (derivatives taken symbolically) or to a Python callable
    (underived applications only); specific opaque nodes may also be bound
    to numbers directly.
    """
    e = as_expr(e)
    vars_, funcs, nodes = _resolve(binding)
    rules = {k: v for k, v in funcs.items() if isinstance(v, Lambda)}
    n = e.norm
    if rules:
        n = _Substituter(rules).norm(n)
    calls = {k: v for k, v in funcs.items() if not isinstance(v, Lambda)}
    memo: dict = {}

    def atom(a) -> float:
        got = memo.get(a)
        if got is not None:
            return got
        if isinstance(a, Var):
            if a not in vars_:
                raise UnboundSymbol(a.name)
            out = vars_[a]
        elif isinstance(a, Func):
            if a in nodes:
                out = nodes[a]
            elif a.name in calls and not any(a.orders):
                out = float(calls[a.name](*(ev(x.norm) for x in a.args)))
            else:
                raise UnboundSymbol(repr(a))
        else:
            x = ev(a.arg.norm)
            if x <= 0:
                raise EvaluationDomainError(f"ln of non-positive value {x}")
            out = math.log(x)
        memo[a] = out
        return out

    def ev(nn: Norm) -> float:
        total = 0.0
        for (atoms, ex), c in nn.num.items():
            t = float(c)
            for a, p in atoms:
                base = atom(a)
                if p < 0 and base == 0:
                    raise EvaluationDomainError("division by zero")
                t *= base ** p
            if ex is not None:
                t *= math.exp(ev(ex))
            total += t
        for q, m in nn.den:
            d = ev(Norm(q.terms))
            if d == 0:
                raise EvaluationDomainError("division by zero")
            total /= d ** m
        return total

    return ev(n)


def compile_exprs(exprs: Iterable, variables: Sequence[Var]) -> Callable[..., tuple]:
    """Compile expressions into one Python function of ``variables``.

    Atoms are computed once per call and shared between the outputs.  Opaque
    functions must already be instantiated.
    """
    exprs = [as_expr(x) for x in exprs]
    names = {v: f"v{i}" for i, v in enumerate(variables)}
    lines: list[str] = []
    cache: dict = {}

    def atom_code(a) -> str:
        if a in cache:
            return cache[a]
        if isinstance(a, Var):
            if a not in names:
                raise UnboundSymbol(a.name)
            code = names[a]
        elif isinstance(a, Func):
            raise UnboundSymbol(repr(a))
        else:
            inner = norm_code(a.arg.norm)
            tmp = f"t{len(cache)}"
            lines.append(f"    {tmp} = _ln({inner})")
            code = tmp
        cache[a] = code
        return code

    def norm_code(nn: Norm) -> str:
        terms = []
        for (atoms, ex), c in sorted(nn.num.items(), key=lambda mc: mono_key(mc[0])):
            parts = [repr(float(c))]
            for a, p in atoms:
                base = atom_code(a)
                parts.append(base if p == 1 else f"{base}**{p}")
            if ex is not None:
                parts.append(f"_exp({norm_code(ex)})")
            terms.append("*".join(parts))
        body = "(" + (" + ".join(terms) if terms else "0.0") + ")"
        for q, m in nn.den:
            d = norm_code(Norm(q.terms))
            body = f"{body}/{d}" if m == 1 else f"{body}/{d}**{m}"
        return body

    outs = [norm_code(x.norm) for x in exprs]
    src = "def _f(" + ", ".join(names[v] for v in variables) + "):\n"
    src += "\n".join(lines) + ("\n" if lines else "")
    src += "    return (" + ", ".join(outs) + ("," if len(outs) == 1 else "") + ")\n"
    env = {"_exp": math.exp, "_ln": _checked_log}
    exec(compile(src, "<liefrw-compiled>", "exec"), env)
    fn = env["_f"]
    fn.source = src  # type: ignore[attr-defined]
    return fn


def _checked_log(x: float) -> float:
    if x <= 0:
        raise EvaluationDomainError(f"ln of non-positive value {x}")
    return math.log(x)
