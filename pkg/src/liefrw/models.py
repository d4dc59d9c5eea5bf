"""FRW systems, potentials, Lagrangians and the Euler-Lagrange operator."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

from .expr import Const, Expr, Lambda, Var, as_expr, collect, differentiate, exp, func, free_vars, is_zero, substitute, symbol
from .jet import JetContext, total_derivative

t, a, phi, N = (symbol(n) for n in ("t", "a", "phi", "N"))

UNIT_CONTEXT = JetContext(t, (a, phi))
LAPSE_CONTEXT = JetContext(t, (a, phi, N))
# register jet coordinates in a fixed order so monomial ordering is reproducible
for _k in (1, 2):
    LAPSE_CONTEXT.jet_vars(_k)

adot, phidot, Ndot = (LAPSE_CONTEXT.dot(u) for u in (a, phi, N))
addot, phiddot, Nddot = (LAPSE_CONTEXT.ddot(u) for u in (a, phi, N))

Scalar = Union[int, Fraction, Expr]


class DegenerateLapse(ValueError):
    """The lapse function vanished where the equations divide by it."""


@dataclass(frozen=True)
class Potential:
    """Scalar-field potential V(phi).

    ``kind`` is one of ``opaque``, ``exponential`` (``c * exp(lam * phi)``),
    ``constant`` and ``polynomial`` (coefficients in increasing degree).
    """

    kind: str
    params: tuple = ()
    name: str = "V"

    @classmethod
    def opaque(cls, name: str = "V") -> "Potential":
        return cls("opaque", (), name)

    @classmethod
    def exponential(cls, c: Scalar = 1, lam: Scalar = -2) -> "Potential":
        return cls("exponential", (as_expr(c), Fraction(lam)))

    @classmethod
    def constant(cls, v0: Scalar) -> "Potential":
        return cls("constant", (as_expr(v0),))

    @classmethod
    def polynomial(cls, coeffs: Sequence[Scalar]) -> "Potential":
        return cls("polynomial", tuple(as_expr(c) for c in coeffs))

    def __post_init__(self):
        if self.kind not in ("opaque", "exponential", "constant", "polynomial"):
            raise ValueError(f"unknown potential kind {self.kind!r}")

    @property
    def is_exponential_branch(self) -> bool:
        """The ``c * exp(-2 phi)`` family that enlarges the symmetry group."""
        return self.kind == "exponential" and self.params[1] == -2

    def expr(self, var: Var = phi) -> Expr:
        if self.kind == "opaque":
            return func(self.name, var)
        if self.kind == "exponential":
            c, lam = self.params
            return c * exp(lam * var)
        if self.kind == "constant":
            return self.params[0]
        out = Const(0)
        for i, c in enumerate(self.params):
            out = out + c * var**i
        return out

    def derivative(self, var: Var = phi, n: int = 1) -> Expr:
        return differentiate(self.expr(var), var, n)

    def rule(self) -> Lambda | None:
        """Function rule instantiating the opaque name, or None for opaque potentials."""
        if self.kind == "opaque":
            return None
        return Lambda([phi], self.expr(phi))

    def describe(self) -> str:
        if self.kind == "opaque":
            return f"{self.name}(phi) arbitrary"
        return f"V = {self.expr()}"


@dataclass(frozen=True)
class ModelConfig:
    k: Scalar = 0
    potential: Potential = field(default_factory=Potential.opaque)
    lapse: str = "unit"

    def __post_init__(self):
        if isinstance(self.k, bool) or (not isinstance(self.k, Expr) and self.k not in (-1, 0, 1)):
            raise ValueError(f"curvature k must be -1, 0 or +1, got {self.k!r}")
        if self.lapse not in ("unit", "dynamical"):
            raise ValueError("lapse must be 'unit' or 'dynamical'")

    @property
    def k_expr(self) -> Expr:
        return as_expr(self.k)


@dataclass(frozen=True)
class ODESystem:
    """Second-order system in solved form ``u'' = f(t, u, u')`` plus first-order constraints."""

    context: JetContext
    rhs: dict
    constraints: tuple = ()
    name: str = ""
    side_conditions: tuple = ("a > 0",)
    nonvanishing: tuple = (a,)
    potential: Potential | None = None
    k: Scalar = 0

    def __post_init__(self):
        for lead, f in self.rhs.items():
            if lead.jet is None or lead.jet[2] != 2:
                raise ValueError(f"{lead} is not a second-order jet coordinate")
            if self.context.order_of(f) > 1:
                raise ValueError(f"right side for {lead} contains second-order jets")
        for c in self.constraints:
            if self.context.order_of(c) > 1:
                raise ValueError("constraints must be first order")

    @property
    def equations(self) -> list[Expr]:
        return [lead - f for lead, f in self.rhs.items()]

    @property
    def leading(self) -> list[Var]:
        return list(self.rhs)

    def on_shell(self, e) -> Expr:
        """Replace every second derivative by its right side."""
        return substitute(e, dict(self.rhs))

    def instantiate(self, rule: Lambda | None = None) -> "ODESystem":
        """Copy with the opaque potential replaced by ``rule`` (default: the system's own)."""
        rule = rule or (self.potential.rule() if self.potential else None)
        if rule is None:
            return self
        name = self.potential.name if self.potential else "V"
        rhs = {lead: substitute(f, {name: rule}) for lead, f in self.rhs.items()}
        cons = tuple(substitute(c, {name: rule}) for c in self.constraints)
        return ODESystem(self.context, rhs, cons, self.name, self.side_conditions, self.nonvanishing,
                         self.potential, self.k)


def _V(cfg: ModelConfig, var: Var = phi) -> tuple[Expr, Expr]:
    return cfg.potential.expr(var), cfg.potential.derivative(var)


def energy(cfg: ModelConfig | None = None) -> Expr:
    """``E = a'^2 - 2 a^2 V - a^2 phi'^2`` (equals ``-k`` on the constraint surface)."""
    cfg = cfg or ModelConfig()
    V, _ = _V(cfg)
    return adot**2 - 2 * a**2 * V - a**2 * phidot**2


def frw_system(cfg: ModelConfig) -> ODESystem:
    """Second Einstein equation plus Klein-Gordon, with the Hamiltonian constraint attached."""
    if cfg.lapse != "unit":
        raise ValueError("frw_system needs unit lapse")
    V, dV = _V(cfg)
    rhs = {
        addot: 2 * a * V - 2 * a * phidot**2,
        phiddot: -3 * adot * phidot / a - dV,
    }
    return ODESystem(UNIT_CONTEXT, rhs, (energy(cfg) + cfg.k_expr,), "conformal",
                     potential=cfg.potential, k=cfg.k)


def frw_proper_time_system(cfg: ModelConfig) -> ODESystem:
    """Euler-Lagrange form of the proper-time action; no constraint is imposed."""
    if cfg.lapse != "unit":
        raise ValueError("frw_proper_time_system needs unit lapse")
    V, dV = _V(cfg)
    k = cfg.k_expr
    rhs = {
        addot: (-adot**2 - k - 3 * a**2 * phidot**2 + 6 * a**2 * V) / (2 * a),
        phiddot: -3 * adot * phidot / a - dV,
    }
    return ODESystem(UNIT_CONTEXT, rhs, (), "proper", potential=cfg.potential, k=cfg.k)


def frw_lapse_system(cfg: ModelConfig) -> ODESystem:
    """Equations with a dynamical lapse ``N(t)``; ``N`` itself has no evolution equation."""
    if cfg.lapse != "dynamical":
        raise ValueError("frw_lapse_system needs a dynamical lapse")
    V, dV = _V(cfg)
    k = cfg.k_expr
    constraint = adot**2 + N**2 * k - a**2 * phidot**2 - 2 * N**2 * a**2 * V
    rhs = {
        addot: (Ndot * adot + 2 * N**3 * a * V - 2 * N * a * phidot**2) / N,
        phiddot: (-3 * N * adot * phidot + a * Ndot * phidot - N**3 * a * dV) / (a * N),
    }
    return ODESystem(LAPSE_CONTEXT, rhs, (constraint,), "lapse", ("a > 0", "N != 0"), (a, N),
                     potential=cfg.potential, k=cfg.k)


def build_system(kind: str, cfg: ModelConfig) -> ODESystem:
    if kind == "conformal":
        return frw_system(cfg)
    if kind == "proper":
        return frw_proper_time_system(cfg)
    if kind == "lapse":
        return frw_lapse_system(cfg)
    raise ValueError(f"unknown system {kind!r}")


@dataclass(frozen=True)
class Lagrangian:
    context: JetContext
    L: Expr

    def __post_init__(self):
        if self.context.order_of(self.L) > 1:
            raise ValueError("Lagrangian must be first order")


def lagrangian(cfg: ModelConfig) -> Lagrangian:
    V, _ = _V(cfg)
    k = cfg.k_expr
    half = Fraction(1, 2)
    if cfg.lapse == "unit":
        L = -half * a * adot**2 + half * k * a + half * a**3 * phidot**2 - a**3 * V
        return Lagrangian(UNIT_CONTEXT, L)
    L = -half * a / N * adot**2 + half * k * N * a + half * a**3 * phidot**2 / N - N * a**3 * V
    return Lagrangian(LAPSE_CONTEXT, L)


def euler_lagrange(lag: Lagrangian, u: Var | str) -> Expr:
    """``E_u(L) = dL/du - D_t(dL/du')``, left unscaled."""
    ctx = lag.context
    u = u if isinstance(u, Var) else symbol(u)
    if u not in ctx.dependents:
        raise ValueError(f"{u} is not a dependent of the Lagrangian's context")
    return differentiate(lag.L, u) - total_derivative(differentiate(lag.L, ctx.dot(u)), ctx)


def solve_for(e, var: Var) -> Expr:
    """Solve ``e = 0`` for ``var`` when ``e`` is linear in it."""
    e = as_expr(e)
    coeff = differentiate(e, var)
    if var in free_vars(coeff):
        raise ValueError(f"expression is not linear in {var}")
    if coeff.norm.is_zero:
        raise ValueError(f"expression does not contain {var}")
    rest = e - coeff * var
    return -rest / coeff


def reduce_mod_constraint(e, c, ctx: JetContext) -> Expr:
    """Eliminate ``adot**2`` from ``e`` using ``c = 0``.

    ``c`` must read ``adot**2 + (terms free of adot)``; the result is at most
    linear in ``adot``.
    """
    ad = ctx.dot(a)
    coeffs = collect(c, [ad])
    lead = coeffs.get(ad**2)
    if lead is None or not is_zero(lead - 1, guard=False) or ad in coeffs or len(coeffs) > 2:
        raise ValueError("constraint must have the form adot^2 + (adot-free terms)")
    square = ad**2 - c
    out = Const(0)
    for mono, coeff in collect(e, [ad]).items():
        (atoms, _), = mono.norm.num
        p = dict(atoms).get(ad, 0)
        out = out + coeff * square ** (p // 2) * ad ** (p % 2)
    return out
