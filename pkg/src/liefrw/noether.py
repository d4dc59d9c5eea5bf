"""Variational symmetries, Noether characteristics and conservation-law checks."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .expr import Const, Expr, as_expr, compile_exprs, differentiate, is_zero, render, substitute, symbol
from .jet import ContextMismatch, JetContext, VectorField, apply, prolong, total_derivative
from .models import (Lagrangian, ModelConfig, N, a, adot, euler_lagrange, lagrangian,
                     phi, phidot, t)

log = logging.getLogger(__name__)

HALF = Fraction(1, 2)


class NotConserved(ValueError):
    """``D_t(flux) - sum Q_u E_u(L)`` did not vanish."""

    def __init__(self, defect: Expr):
        self.defect = defect
        super().__init__(f"Noether identity fails; defect = {render(defect)}")


@dataclass(frozen=True)
class Characteristic:
    context: JetContext
    Q: dict

    def __getitem__(self, u) -> Expr:
        u = u if not isinstance(u, str) else symbol(u)
        return self.Q[u]

    def __add__(self, other: "Characteristic") -> "Characteristic":
        return Characteristic(self.context, {u: self.Q[u] + other.Q[u] for u in self.Q})

    def __rmul__(self, s) -> "Characteristic":
        return Characteristic(self.context, {u: s * q for u, q in self.Q.items()})

    def equals(self, other: "Characteristic") -> bool:
        return self.Q.keys() == other.Q.keys() and all(
            is_zero(self.Q[u] - other.Q[u], guard=False) for u in self.Q)


@dataclass(frozen=True)
class ConservationLaw:
    flux: Expr
    characteristic: Characteristic
    lagrangian: Lagrangian
    factor: Fraction = Fraction(1)
    supplied: Expr | None = None

    def as_text(self) -> str:
        lines = [f"flux = {render(self.flux)}"]
        if self.supplied is not None and self.factor != 1:
            lines.append(f"  supplied form {render(self.supplied)} scaled by {self.factor}")
        for u, q in self.characteristic.Q.items():
            lines.append(f"  Q_{u.name} = {render(q)}")
        return "\n".join(lines)


def _same_context(g: VectorField, lag: Lagrangian) -> VectorField:
    if g.context == lag.context:
        return g
    if set(g.context.dependents) <= set(lag.context.dependents) and g.context.independent == lag.context.independent:
        return g.with_context(lag.context)
    raise ContextMismatch("generator and Lagrangian live on different jet contexts")


def variational_residual(g: VectorField, lag: Lagrangian) -> Expr:
    """``pr1 g (L) + L D_t(tau)``; zero for a strict variational symmetry."""
    g = _same_context(g, lag)
    return apply(prolong(g, 1), lag.L) + lag.L * total_derivative(g.tau, lag.context)


def characteristics(g: VectorField) -> Characteristic:
    """``Q_u = psi_u - tau * u'`` for every dependent of the context."""
    ctx = g.context
    return Characteristic(ctx, {u: g.coeff(u) - g.tau * ctx.dot(u) for u in ctx.dependents})


def noether_defect(P, g: VectorField, lag: Lagrangian) -> tuple[Expr, Expr]:
    """Return ``(D_t P, sum_u Q_u E_u(L))``."""
    g = _same_context(g, lag)
    Q = characteristics(g)
    rhs = Const(0)
    for u, q in Q.Q.items():
        rhs = rhs + q * euler_lagrange(lag, u)
    return total_derivative(as_expr(P), lag.context), rhs


def verify_conservation_law(P, g: VectorField, lag: Lagrangian, resolve_factor: bool = False) -> ConservationLaw:
    """Check ``D_t P = sum Q_u E_u(L)`` exactly.

    With ``resolve_factor`` the unique rational constant ``c`` with
    ``D_t(c P) = sum Q_u E_u(L)`` is accepted and recorded; the law carries
    ``c P`` as its flux.
    """
    g = _same_context(g, lag)
    if not is_zero(variational_residual(g, lag), guard=False):
        log.warning("generator is not a strict variational symmetry; verifying anyway")
    P = as_expr(P)
    lhs, rhs = noether_defect(P, g, lag)
    factor = Fraction(1)
    if resolve_factor and not lhs.norm.is_zero:
        ratio = (rhs / lhs).norm
        c = ratio.constant_value()
        if c is not None:
            factor = c
    defect = factor * lhs - rhs
    if not is_zero(defect):
        raise NotConserved(defect)
    return ConservationLaw(factor * P, characteristics(g), lag, factor, P)


def printed_flux_P(cfg: ModelConfig) -> Expr:
    """The unit-lapse flux read as ``1/2 (a a'^2 + k a - 2 a^3 V - a^3 phi'^2)``."""
    V = cfg.potential.expr()
    return HALF * (a * adot**2 + cfg.k_expr * a - 2 * a**3 * V - a**3 * phidot**2)


def printed_flux_K(cfg: ModelConfig) -> Expr:
    """``a/(2N) (a'^2 + N^2 k - 2 N^2 a^2 V - a^2 phi'^2)``."""
    V = cfg.potential.expr()
    return a / (2 * N) * (adot**2 + N**2 * cfg.k_expr - 2 * N**2 * a**2 * V - a**2 * phidot**2)


def time_translation(ctx: JetContext) -> VectorField:
    return VectorField(ctx, {t: 1}, "Y")


def law_P(cfg: ModelConfig) -> ConservationLaw:
    """Time-translation law for the unit-lapse Lagrangian, factor pinned by the identity."""
    cfg = ModelConfig(cfg.k, cfg.potential, "unit")
    lag = lagrangian(cfg)
    return verify_conservation_law(printed_flux_P(cfg), time_translation(lag.context), lag, resolve_factor=True)


def law_K(cfg: ModelConfig) -> ConservationLaw:
    cfg = ModelConfig(cfg.k, cfg.potential, "dynamical")
    lag = lagrangian(cfg)
    return verify_conservation_law(printed_flux_K(cfg), time_translation(lag.context), lag, resolve_factor=True)


# constant relating the momentum conjugate to t(a) and the resolved flux P
CONJUGATE_FACTOR = Fraction(-1)


def conjugate_momentum_check(cfg: ModelConfig) -> Expr:
    """``dL_a/dt_a`` mapped back to t-parameterisation minus ``CONJUGATE_FACTOR * P``.

    ``L_a(a, t_a, phi_a) = t_a L(a, 1/t_a, phi_a/t_a)`` is the Lagrangian with
    ``a`` as the independent variable; it does not contain ``t``, so the
    momentum conjugate to ``t`` is conserved.
    """
    if cfg.lapse != "unit":
        raise ValueError("conjugate momentum check needs unit lapse")
    lag = lagrangian(cfg)
    actx = JetContext(a, (t, phi), order=1)
    ta, phia = actx.dot(t), actx.dot(phi)
    La = ta * substitute(lag.L, {adot: 1 / ta, phidot: phia / ta})
    M = differentiate(La, ta)
    back = substitute(M, {ta: 1 / adot, phia: phidot / adot})
    return back - CONJUGATE_FACTOR * law_P(cfg).flux


def numeric_conservation(traj, law: ConservationLaw) -> float:
    """``max |P(t) - P(t0)|`` along a trajectory of the law's system."""
    flux = law.flux
    ctx = law.lagrangian.context
    variables = [ctx.independent]
    for u in ctx.dependents:
        variables += [u, ctx.dot(u)]
    fn = compile_exprs([flux], variables)
    names = tuple(u.name for u in ctx.dependents)
    if names != tuple(traj.names):
        raise ContextMismatch("trajectory does not match the law's dependents")
    vals = np.array([fn(tt, *y)[0] for tt, y in zip(traj.t, traj.y)])
    return float(np.max(np.abs(vals - vals[0]))) if len(vals) else 0.0
