"""Jet-space bookkeeping: total derivatives and prolongation of point vector fields."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping

from .expr import Const, Expr, Var, as_expr, free_vars, jet_var, symbol
from .expr.core import ZERO, diff_norm, from_norm

MAX_ORDER = 2


class OrderOverflow(ValueError):
    """Total derivative would exceed the jet order of the context."""


class ContextMismatch(ValueError):
    """Objects built on different jet contexts were combined."""


@dataclass(frozen=True)
class JetContext:
    """Independent variable, ordered dependents and their jet coordinates up to ``order``."""

    independent: Var
    dependents: tuple[Var, ...]
    order: int = MAX_ORDER

    def __post_init__(self):
        if not 1 <= self.order <= MAX_ORDER:
            raise ValueError(f"jet order must be 1..{MAX_ORDER}")
        if len(set(self.dependents)) != len(self.dependents):
            raise ValueError("dependents must be distinct")
        if self.independent in self.dependents:
            raise ValueError("independent variable cannot also be dependent")

    @classmethod
    def of(cls, independent: str | Var, dependents: Iterable[str | Var], order: int = MAX_ORDER) -> "JetContext":
        t = independent if isinstance(independent, Var) else symbol(independent)
        deps = tuple(d if isinstance(d, Var) else symbol(d) for d in dependents)
        return cls(t, deps, order)

    def jet(self, u: Var | str, k: int) -> Var:
        u = u if isinstance(u, Var) else symbol(u)
        if u not in self.dependents:
            raise ContextMismatch(f"{u} is not a dependent of this context")
        if not 0 <= k <= self.order:
            raise OrderOverflow(f"order {k} exceeds context order {self.order}")
        return jet_var(u, self.independent, k)

    def dot(self, u: Var | str) -> Var:
        return self.jet(u, 1)

    def ddot(self, u: Var | str) -> Var:
        return self.jet(u, 2)

    @property
    def base_vars(self) -> tuple[Var, ...]:
        return (self.independent,) + self.dependents

    def jet_vars(self, k: int) -> tuple[Var, ...]:
        return tuple(self.jet(u, k) for u in self.dependents)

    def order_of(self, e) -> int:
        """Highest jet order present in ``e``."""
        fv = free_vars(e)
        for k in range(self.order, 0, -1):
            if any(j in fv for j in self.jet_vars(k)):
                return k
        return 0


def total_derivative(e, ctx: JetContext) -> Expr:
    """``D_t e = e_t + sum_u (u' e_u + u'' e_u')`` on the jet space of ``ctx``."""
    e = as_expr(e)
    fv = e.norm.free_vars()
    top = ctx.jet_vars(ctx.order)
    if any(j in fv for j in top):
        raise OrderOverflow("expression already contains top-order jet coordinates")
    n = e.norm
    out = diff_norm(n, ctx.independent)
    for u in ctx.dependents:
        for k in range(ctx.order):
            uk = ctx.jet(u, k)
            if uk not in fv:
                continue
            d = diff_norm(n, uk)
            if d.num:
                out = out.add(d.mul(ctx.jet(u, k + 1).norm))
    return from_norm(out)


@dataclass(frozen=True)
class VectorField:
    """Point vector field ``tau d_t + sum_u psi_u d_u`` on the base space."""

    context: JetContext
    coefficients: Mapping[Var, Expr] = field(default_factory=dict)
    name: str | None = None

    def __post_init__(self):
        base = set(self.context.base_vars)
        coeffs = {}
        for v, c in self.coefficients.items():
            v = v if isinstance(v, Var) else symbol(v)
            if v not in base:
                raise ContextMismatch(f"{v} is not a base variable of the context")
            c = as_expr(c)
            if self.context.order_of(c):
                raise ValueError("vector field coefficients must not contain jet coordinates")
            coeffs[v] = c
        object.__setattr__(self, "coefficients", coeffs)

    def coeff(self, v: Var | str) -> Expr:
        v = v if isinstance(v, Var) else symbol(v)
        return self.coefficients.get(v, Const(0))

    @property
    def tau(self) -> Expr:
        return self.coeff(self.context.independent)

    def __call__(self, f) -> Expr:
        """Action on a base-space function: ``sum coeff_v * df/dv``."""
        f = as_expr(f)
        out = ZERO
        for v, c in self.coefficients.items():
            d = diff_norm(f.norm, v)
            if d.num:
                out = out.add(c.norm.mul(d))
        return from_norm(out)

    def _check(self, other: "VectorField"):
        if other.context != self.context:
            raise ContextMismatch("vector fields live on different jet contexts")

    def __add__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        keys = list(self.context.base_vars)
        return VectorField(self.context, {v: self.coeff(v) + other.coeff(v) for v in keys})

    def __sub__(self, other: "VectorField") -> "VectorField":
        self._check(other)
        keys = list(self.context.base_vars)
        return VectorField(self.context, {v: self.coeff(v) - other.coeff(v) for v in keys})

    def __rmul__(self, s) -> "VectorField":
        return VectorField(self.context, {v: s * c for v, c in self.coefficients.items()})

    def __neg__(self) -> "VectorField":
        return (-1) * self

    def equals(self, other: "VectorField") -> bool:
        self._check(other)
        return all((self.coeff(v) - other.coeff(v)).norm.is_zero for v in self.context.base_vars)

    def with_context(self, ctx: JetContext) -> "VectorField":
        """Same coefficients on a larger context (extra dependents get zero)."""
        return VectorField(ctx, dict(self.coefficients), self.name)

    def __str__(self):
        parts = []
        for v in self.context.base_vars:
            c = self.coeff(v)
            if not c.norm.is_zero:
                parts.append(f"({c})*d_{v.name}")
        return " + ".join(parts) if parts else "0"


@dataclass(frozen=True)
class ProlongedField:
    base: VectorField
    extended: Mapping[Var, Expr]
    order: int

    def coeff(self, v: Var) -> Expr:
        if v in self.extended:
            return self.extended[v]
        return self.base.coeff(v)

    def items(self):
        for v in self.base.context.base_vars:
            yield v, self.base.coeff(v)
        yield from self.extended.items()


def prolong(vf: VectorField, order: int = 2) -> ProlongedField:
    """Prolongation: ``eta_k = D_t(eta_{k-1}) - D_t(tau) * u^(k)`` recursively."""
    ctx = vf.context
    if order not in (1, 2) or order > ctx.order:
        raise ValueError("prolongation order must be 1 or 2 (and within the context order)")
    # a first-order context cannot hold D_t of first-order coefficients; lift it
    work = ctx if ctx.order >= order else JetContext(ctx.independent, ctx.dependents, order)
    dtau = total_derivative(vf.tau, work)
    extended: dict[Var, Expr] = {}
    for u in ctx.dependents:
        prev = vf.coeff(u)
        for k in range(1, order + 1):
            d_prev = total_derivative(prev, work)
            eta = d_prev - dtau * work.jet(u, k)
            extended[work.jet(u, k)] = eta
            prev = eta
    return ProlongedField(vf, extended, order)


def apply(pf: ProlongedField, e) -> Expr:
    """Directional derivative of ``e`` along the prolonged field."""
    e = as_expr(e)
    out = ZERO
    fv = e.norm.free_vars()
    for v, c in pf.items():
        if v not in fv:
            continue
        d = diff_norm(e.norm, v)
        if d.num:
            out = out.add(c.norm.mul(d))
    return from_norm(out)
