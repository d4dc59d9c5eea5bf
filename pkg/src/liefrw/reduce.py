"""Order reduction by the invariants of time translation and scaling, plus quadrature.

With ``x = phi``, ``y = phi'`` and ``w = a'/a`` the two second-order
equations collapse to a first-order pair in ``x``.  ``t`` and ``a`` come back
from ``dt/dx = 1/y`` and ``d ln a/dx = w/y``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import RK45

from .expr import Expr, compile_exprs, differentiate, free_vars, is_zero, substitute, symbol
from .integrate import State, Trajectory, _fmt
from .models import ModelConfig, Potential, a, adot, addot, frw_proper_time_system, frw_system, phi, phidot, phiddot

x, y, w = (symbol(n) for n in ("x", "y", "w"))

VARIANTS = ("conformal", "proper")


class NonPositiveScaleFactor(ValueError):
    pass


class TurningPoint(RuntimeError):
    """``y`` reached zero, so ``t(x)`` stops being invertible."""

    def __init__(self, message: str, partial: Trajectory | None = None):
        super().__init__(message)
        self.partial = partial


class QuadratureFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ReducedState:
    x: float
    y: float
    w: float

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w)):
            raise ValueError("reduced state must be finite")


@dataclass(frozen=True)
class ReducedSystem:
    dy: Expr
    dw: Expr
    variant: str
    potential: Potential

    @property
    def equations(self) -> dict:
        return {"dy/dx": self.dy, "dw/dx": self.dw}

    def instantiated(self) -> tuple[Expr, Expr]:
        rule = self.potential.rule()
        if rule is None:
            return self.dy, self.dw
        return tuple(substitute(e, {self.potential.name: rule}) for e in (self.dy, self.dw))


def to_invariants(s: State) -> ReducedState:
    av, ad = s.values["a"]
    if av <= 0:
        raise NonPositiveScaleFactor(f"a = {av}")
    p, pd = s.values["phi"]
    return ReducedState(p, pd, ad / av)


def _invariant_form(e: Expr) -> Expr:
    return substitute(e, {adot: w * a, phidot: y, phi: x})


def reduced_system(pot: Potential, variant: str = "conformal") -> ReducedSystem:
    """Derive the reduced pair by substituting the invariants into the full system.

    ``dy/dx = phi''/phi'`` and ``dw/dx = (a''/a - w^2)/phi'``; the proper-time
    variant is taken at ``k = 0``, where the result is free of ``a``.
    """
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}")
    cfg = ModelConfig(0, pot)
    sys = frw_system(cfg) if variant == "conformal" else frw_proper_time_system(cfg)
    dy = _invariant_form(sys.rhs[phiddot] / phidot)
    dw = _invariant_form((sys.rhs[addot] / a - (adot / a) ** 2) / phidot)
    for e in (dy, dw):
        if a in free_vars(e):
            raise ValueError("reduced equations still depend on a")
    return ReducedSystem(dy, dw, variant, pot)


def reduced_conserved(pot: Potential, variant: str = "conformal") -> Expr:
    """The ``a``-free factor ``w^2 - 2V(x) - y^2`` of the energy.

    Raises if ``d/dx (a^p (w^2 - 2V - y^2))`` does not vanish along the reduced
    flow with ``da/dx = a w / y`` (``p = 2`` conformal, ``p = 3`` proper).
    """
    rs = reduced_system(pot, variant)
    V = pot.expr(x)
    q = w**2 - 2 * V - y**2
    p = 2 if variant == "conformal" else 3
    dq = differentiate(q, x) + differentiate(q, y) * rs.dy + differentiate(q, w) * rs.dw
    total = p * (w / y) * q + dq  # d/dx(a^p q) / a^p
    if not is_zero(total):
        raise ValueError(f"reduced energy is not conserved for the {variant} variant")
    return q


def reconstruct(rsys: ReducedSystem, r0: ReducedState, a0: float, t0: float, x_end: float,
                tol: float = 1e-12, samples: int = 101) -> Trajectory:
    """Integrate the reduced pair in ``x`` together with ``t`` and ``ln a``.

    Returns a trajectory sampled at ``samples`` equally spaced ``x`` values.
    """
    if a0 <= 0:
        raise NonPositiveScaleFactor(f"a0 = {a0}")
    if r0.y == 0:
        raise TurningPoint("y vanishes at the start")
    span = x_end - r0.x
    if span and math.copysign(1.0, span) != math.copysign(1.0, r0.y):
        raise ValueError("x_end lies behind the start: time would run backward")
    dy, dw = rsys.instantiated()
    fn = compile_exprs([dy, dw, 1 / y, w / y], [x, y, w])

    def f(xx, Y):
        return np.array(fn(xx, Y[0], Y[1]))

    Y0 = np.array([r0.y, r0.w, t0, math.log(a0)])
    xs = np.linspace(r0.x, x_end, samples) if span else np.array([r0.x])
    rows = [Y0.copy()]
    sign = math.copysign(1.0, r0.y)

    def build(xv, Ys):
        Ys = np.array(Ys).reshape(len(xv), 4)
        av = np.exp(Ys[:, 3])
        yy = np.column_stack([av, Ys[:, 1] * av, xv, Ys[:, 0]])
        return Trajectory(("a", "phi"), Ys[:, 2].copy(), yy)

    if span:
        solver = RK45(f, r0.x, Y0, x_end, rtol=tol, atol=tol * 1e-2)
        i = 1
        while solver.status == "running":
            try:
                msg = solver.step()
            except (ZeroDivisionError, FloatingPointError):
                msg = "division by zero"
                solver.status = "failed"
            if solver.status == "failed" or solver.y[0] * sign <= 0:
                part = build(xs[:i], rows)
                part.termination = "turning_point"
                raise TurningPoint(f"y reached zero near x = {solver.t}: {msg or 'sign change'}", part)
            dense = solver.dense_output()
            while i < len(xs) and (xs[i] - solver.t) * sign <= 0:
                rows.append(solver.y.copy() if xs[i] == solver.t else dense(xs[i]))
                i += 1
        if i < len(xs):
            raise QuadratureFailure("reduced integration ended before x_end")
    return build(xs, rows)


def reduced_csv(traj: Trajectory) -> str:
    """Columns x, y, w, t, a of a reconstructed trajectory."""
    out = io.StringIO()
    out.write("x,y,w,t,a\n")
    av, ad = traj.column("a"), traj.column("adot")
    for i in range(len(traj)):
        row = (traj.column("phi")[i], traj.column("phidot")[i], ad[i] / av[i], traj.t[i], av[i])
        out.write(",".join(_fmt(v) for v in row) + "\n")
    return out.getvalue()
