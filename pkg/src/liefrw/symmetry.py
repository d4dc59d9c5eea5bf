"""Symmetry decisions, determining equations, commutators and Lie algebra structure."""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from typing import Sequence

from .expr import Expr, Func, Lambda, Var, collect, is_zero, render, symbol
from .expr.core import Norm, mono_key
from .jet import ContextMismatch, JetContext, VectorField, apply, prolong
from .models import ODESystem, a, phi, reduce_mod_constraint, t

c1, c2, mu = (symbol(n) for n in ("c1", "c2", "mu"))

ANSATZ_NAMES = {"t": "tau", "a": "A", "phi": "Phi", "N": "Xi"}


class NotClosed(ValueError):
    """A commutator of basis elements left the span of the basis."""

    def __init__(self, i: int, j: int, bracket: VectorField):
        self.pair = (i, j)
        self.bracket = bracket
        super().__init__(f"[e{i}, e{j}] = {bracket} is not in the span of the basis")


class NotLinearlyIndependent(ValueError):
    """The proposed basis is linearly dependent over the constants."""


def standard_generators(ctx: JetContext) -> dict[str, VectorField]:
    """``X = t d_t + d_phi``, ``Y = d_t``, ``Z = a d_a`` and ``W = X + Y``."""
    X = VectorField(ctx, {t: t, phi: 1}, "X")
    Y = VectorField(ctx, {t: 1}, "Y")
    Z = VectorField(ctx, {a: a}, "Z")
    W = VectorField(ctx, (X + Y).coefficients, "W")
    return {"X": X, "Y": Y, "Z": Z, "W": W}


@dataclass(frozen=True)
class GeneratorFamily:
    """``G = (mu t + c2) d_t + c1 a d_a + mu d_phi``; parameters default to symbols."""

    c1: object = c1
    c2: object = c2
    mu: object = mu

    def vector_field(self, ctx: JetContext) -> VectorField:
        return VectorField(ctx, {t: self.mu * t + self.c2, a: self.c1 * a, phi: self.mu}, "G")

    def rules(self, ctx: JetContext) -> dict[str, Lambda]:
        """Lambda rules instantiating the ansatz functions with this family."""
        g = self.vector_field(ctx)
        params = list(ctx.base_vars)
        return {ANSATZ_NAMES[v.name]: Lambda(params, g.coeff(v)) for v in ctx.base_vars}


@dataclass(frozen=True)
class SymmetryReport:
    generator: str
    system: str
    residuals: dict
    offshell: dict
    verdict: bool
    side_conditions: tuple = ()
    constraint_residuals: dict = field(default_factory=dict)

    def as_text(self) -> str:
        lines = [f"generator {self.generator} on system {self.system}: "
                 f"{'SYMMETRY' if self.verdict else 'NOT a symmetry'}"]
        for lead, r in self.residuals.items():
            lines.append(f"  residual[{render(lead)}] = {render(r)}")
        for i, r in self.constraint_residuals.items():
            lines.append(f"  constraint[{i}] residual on surface = {render(r)}")
        if self.side_conditions:
            lines.append("  side conditions: " + "; ".join(self.side_conditions))
        return "\n".join(lines)

    def as_records(self) -> list[tuple[str, str]]:
        p = f"{self.system}.{self.generator}"
        out = [(f"{p}.verdict", str(self.verdict).lower())]
        for lead, r in self.residuals.items():
            out.append((f"{p}.residual.{render(lead)}", render(r)))
        for i, r in self.constraint_residuals.items():
            out.append((f"{p}.constraint.{i}", render(r)))
        return out


def _check_context(g: VectorField, sys: ODESystem) -> VectorField:
    if g.context == sys.context:
        return g
    gc, sc = g.context, sys.context
    if gc.independent == sc.independent and set(gc.dependents) <= set(sc.dependents):
        return g.with_context(sc)
    raise ContextMismatch("generator and system live on different jet contexts")


def symmetry_residual(g: VectorField, sys: ODESystem, constraints: bool = True) -> SymmetryReport:
    """On-shell residual of ``pr2 g`` applied to each solved equation ``u'' - f``.

    A generator on a smaller context (no lapse) is lifted with zero lapse
    component.  Constraint preservation on the constraint surface is reported
    alongside but does not enter the verdict.
    """
    g = _check_context(g, sys)
    pr = prolong(g, 2)
    residuals = {}
    offshell = {}
    for lead, f in sys.rhs.items():
        raw = apply(pr, lead - f)
        offshell[lead] = raw
        residuals[lead] = sys.on_shell(raw)
    verdict = all(is_zero(r) for r in residuals.values())
    side = tuple(sys.side_conditions)
    if sys.potential is not None:
        side += (sys.potential.describe(),)
    side += (f"k = {sys.k}",)
    cres = {}
    if constraints:
        for i, c in enumerate(sys.constraints):
            cres[i] = constraint_residual(g, c, sys.context)
    return SymmetryReport(g.name or "G", sys.name, residuals, offshell, verdict, side, cres)


def constraint_residual(g: VectorField, c: Expr, ctx: JetContext) -> Expr:
    """``pr1 g (c)`` reduced on the surface ``c = 0``."""
    return reduce_mod_constraint(apply(prolong(g, 1), c), c, ctx)


def ansatz_field(ctx: JetContext) -> VectorField:
    """Generic point field with opaque coefficients ``tau, A, Phi[, Xi]`` of the base variables."""
    args = list(ctx.base_vars)
    return VectorField(ctx, {v: Func(ANSATZ_NAMES[v.name], args) + 0 for v in ctx.base_vars}, "ansatz")


def ansatz_declarations(ctx: JetContext) -> dict[str, tuple[str, ...]]:
    names = tuple(v.name for v in ctx.base_vars)
    return {ANSATZ_NAMES[v.name]: names for v in ctx.base_vars}


def determining_equations(sys: ODESystem, ansatz: VectorField | None = None) -> dict[Var, dict[Expr, Expr]]:
    """Coefficients of the on-shell symmetry condition as polynomials in the free jets.

    Returns, per solved equation, ``{monomial: coefficient}``; every
    coefficient set to zero is one determining PDE.
    """
    g = ansatz if ansatz is not None else ansatz_field(sys.context)
    report = symmetry_residual(g, sys, constraints=False)
    ctx = sys.context
    # second derivatives without an equation (the lapse) stay free jet coordinates
    jets = list(ctx.jet_vars(1)) + [ctx.ddot(u) for u in ctx.dependents if ctx.ddot(u) not in sys.rhs]
    return {lead: collect(r, jets) for lead, r in report.residuals.items()}


def commutator(g1: VectorField, g2: VectorField) -> VectorField:
    """``[g1, g2]`` with coefficients ``g1(coeff of g2) - g2(coeff of g1)``."""
    if g1.context != g2.context:
        raise ContextMismatch("vector fields live on different jet contexts")
    coeffs = {v: g1(g2.coeff(v)) - g2(g1.coeff(v)) for v in g1.context.base_vars}
    return VectorField(g1.context, coeffs)


def lie_action_on_scalar(g: VectorField, e) -> Expr:
    """``pr1 g (e)`` for a function ``e`` of at most first-order jets."""
    if g.context.order_of(e) > 1:
        raise ValueError("expression must be at most first order")
    return apply(prolong(g, 1), e)


# ---------------------------------------------------------------------------
# Lie algebra structure


def _coordinates(g: VectorField) -> dict:
    out = {}
    for v in g.context.base_vars:
        n: Norm = g.coeff(v).norm.canonical()
        den = tuple((q.key, m) for q, m in n.den)
        for m, c in n.num.items():
            out[(v.name, den, mono_key(m))] = c
    return out


def _rref(rows: list[list[Fraction]]) -> tuple[list[list[Fraction]], list[int]]:
    m = [list(r) for r in rows]
    pivots: list[int] = []
    r = 0
    ncols = len(m[0]) if m else 0
    for col in range(ncols):
        piv = next((i for i in range(r, len(m)) if m[i][col] != 0), None)
        if piv is None:
            continue
        m[r], m[piv] = m[piv], m[r]
        inv = 1 / m[r][col]
        m[r] = [x * inv for x in m[r]]
        for i in range(len(m)):
            if i != r and m[i][col] != 0:
                f = m[i][col]
                m[i] = [x - f * y for x, y in zip(m[i], m[r])]
        pivots.append(col)
        r += 1
        if r == len(m):
            break
    return m[:r], pivots


def _rank(vectors: list[list[Fraction]]) -> int:
    if not vectors:
        return 0
    return len(_rref(vectors)[1])


def _express(target: dict, basis: list[dict], keys: list) -> list[Fraction] | None:
    """Solve ``target = sum x_i basis_i`` exactly; None if not in the span."""
    n = len(basis)
    rows = [[b.get(k, Fraction(0)) for b in basis] + [target.get(k, Fraction(0))] for k in keys]
    red, piv = _rref(rows)
    if n in piv:
        return None
    x = [Fraction(0)] * n
    for row, col in zip(red, piv):
        x[col] = row[n]
    return x


@dataclass(frozen=True)
class AlgebraStructure:
    basis: list
    names: list
    constants: list  # constants[i][j][k]: [e_i, e_j] = sum_k C_ijk e_k
    derived_series: list
    lower_central_series: list
    solvable: bool
    nilpotent: bool
    abelian: bool

    def table(self) -> list[tuple[str, str, str]]:
        rows = []
        for i, j in combinations(range(len(self.basis)), 2):
            rows.append((self.names[i], self.names[j], _combo(self.constants[i][j], self.names)))
        return rows

    def as_text(self) -> str:
        lines = [f"basis: {', '.join(self.names)}"]
        for x, y, r in self.table():
            lines.append(f"  [{x}, {y}] = {r}")
        lines.append(f"  derived series dims: {self.derived_series}")
        lines.append(f"  lower central series dims: {self.lower_central_series}")
        lines.append(f"  abelian={str(self.abelian).lower()} nilpotent={str(self.nilpotent).lower()} "
                     f"solvable={str(self.solvable).lower()}")
        return "\n".join(lines)


def _combo(coeffs: Sequence[Fraction], names: Sequence[str]) -> str:
    parts = []
    for c, n in zip(coeffs, names):
        if c == 0:
            continue
        if c == 1:
            term = n
        elif c == -1:
            term = f"-{n}"
        else:
            term = f"{c}*{n}"
        if parts and term.startswith("-"):
            parts.append(f" - {term[1:]}")
        elif parts:
            parts.append(f" + {term}")
        else:
            parts.append(term)
    return "".join(parts) if parts else "0"


def classify(basis: Sequence[VectorField], names: Sequence[str] | None = None) -> AlgebraStructure:
    """Structure constants plus derived / lower central series of ``span(basis)``."""
    basis = list(basis)
    names = list(names) if names else [g.name or f"e{i}" for i, g in enumerate(basis)]
    n = len(basis)
    coords = [_coordinates(g) for g in basis]
    brackets = {}
    for i in range(n):
        for j in range(i + 1, n):
            brackets[(i, j)] = commutator(basis[i], basis[j])
    bcoords = {ij: _coordinates(b) for ij, b in brackets.items()}
    keys = sorted({k for c in coords for k in c} | {k for c in bcoords.values() for k in c}, key=repr)
    vecs = [[c.get(k, Fraction(0)) for k in keys] for c in coords]
    if _rank(vecs) < n:
        raise NotLinearlyIndependent("basis vector fields are linearly dependent")
    C = [[[Fraction(0)] * n for _ in range(n)] for _ in range(n)]
    for (i, j), bc in bcoords.items():
        x = _express(bc, coords, keys)
        if x is None:
            raise NotClosed(i, j, brackets[(i, j)])
        C[i][j] = x
        C[j][i] = [-v for v in x]

    def bracket(u, v):
        out = [Fraction(0)] * n
        for i in range(n):
            if u[i] == 0:
                continue
            for j in range(n):
                if v[j] == 0:
                    continue
                f = u[i] * v[j]
                for k in range(n):
                    out[k] += f * C[i][j][k]
        return out

    def span(vs):
        vs = [v for v in vs if any(v)]
        if not vs:
            return []
        red, _ = _rref(vs)
        return red

    full = span([[Fraction(int(i == j)) for j in range(n)] for i in range(n)])
    derived = [len(full)]
    cur = full
    while cur:
        nxt = span([bracket(u, v) for u in cur for v in cur])
        if len(nxt) == len(cur):
            break
        cur = nxt
        derived.append(len(cur))
    lower = [len(full)]
    cur = full
    while cur:
        nxt = span([bracket(u, v) for u in full for v in cur])
        if len(nxt) == len(cur):
            break
        cur = nxt
        lower.append(len(cur))
    abelian = all(v == 0 for row in C for col in row for v in col)
    return AlgebraStructure(basis, names, C, derived, lower, derived[-1] == 0, lower[-1] == 0, abelian)


# ---------------------------------------------------------------------------
# numeric pushforward


@dataclass(frozen=True)
class PushforwardResult:
    eps: tuple
    defects: tuple
    ratio: float
    passed: bool


def pushforward_check(g: VectorField, sys: ODESystem, s0, t_end: float, eps=(1e-4, 5e-5),
                      samples: int = 201, target: float = 4.0, slack: float = 0.5) -> PushforwardResult:
    """Richardson test that ``exp(eps g)`` carries the solution through ``s0`` to a solution.

    The initial jet point is moved along the flow of ``pr1 g`` for parameter
    ``eps`` (this shifts the start time by about ``eps tau``) and integrated.
    The result is compared with the first-order image ``u + eps Q`` of the
    base solution, ``Q_u = psi_u - tau u'``.  For a symmetry the gap is
    ``O(eps^2)`` and halving ``eps`` divides it by four; otherwise it is
    first order and the ratio is two.
    """
    from .integrate import State, solve_ivp
    from .expr import compile_exprs, substitute
    from scipy.integrate import solve_ivp as flow_ivp
    import numpy as np

    g = _check_context(g, sys)
    ctx = sys.context
    rule = {}
    if sys.potential is not None and sys.potential.rule() is not None:
        rule = {sys.potential.name: sys.potential.rule()}
    pr = prolong(g, 1)
    field_exprs = [g.tau]
    for u in ctx.dependents:
        field_exprs += [pr.coeff(u), pr.coeff(ctx.dot(u))]
    Q = [g.coeff(u) - g.tau * ctx.dot(u) for u in ctx.dependents]
    if rule:
        field_exprs = [substitute(e, rule) for e in field_exprs]
        Q = [substitute(q, rule) for q in Q]
    variables = [ctx.independent]
    for u in ctx.dependents:
        variables += [u, ctx.dot(u)]
    fg = compile_exprs(field_exprs, variables)
    fq = compile_exprs(Q, variables)
    names = [u.name for u in ctx.dependents]
    z0 = np.array([s0.t] + [v for n in names for v in s0.values[n]])
    tight = dict(rtol=1e-12, atol=1e-14)

    margin = 0.05 * (t_end - s0.t)
    grid = np.linspace(s0.t + margin, t_end, samples)
    base = solve_ivp(sys, s0, t_end, t_eval=grid, **tight)
    if base.termination != "completed":
        raise RuntimeError(f"base run ended early: {base.termination}")
    qs = np.array([fq(tt, *yy) for tt, yy in zip(base.t, base.y)])
    defects = []
    for e in eps:
        moved = flow_ivp(lambda s, z: fg(*z), (0.0, e), z0, rtol=1e-13, atol=1e-15).y[:, -1]
        if abs(moved[0] - s0.t) >= margin:
            raise ValueError("eps too large for the comparison window")
        start = {n: (moved[1 + 2 * i], moved[2 + 2 * i]) for i, n in enumerate(names)}
        run = solve_ivp(sys, State(moved[0], start), t_end + margin, t_eval=grid, **tight)
        if run.termination != "completed":
            raise RuntimeError(f"transformed run ended early: {run.termination}")
        gap = run.y[:, 0::2] - base.y[:, 0::2] - e * qs
        defects.append(float(np.max(np.abs(gap))))
    ratio = defects[0] / defects[1] if defects[1] else float("inf")
    return PushforwardResult(tuple(eps), tuple(defects), ratio, abs(ratio - target) <= slack)
