"""Numerical integration of FRW systems with conserved-quantity monitoring.

Adaptive runs step scipy's Dormand-Prince 5(4) pair one accepted step at a
time so the singularity stop, statistics and dense sampling stay under our
control.  A fixed-step mode with the same tableau exists for tests that need
correlated discretisation errors between nearby runs.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.integrate import RK45

from .expr import Expr, UnboundSymbol, Var, as_expr, compile_exprs, evaluate, substitute
from .models import DegenerateLapse, ModelConfig, ODESystem, N, phi

DEFAULT_RTOL = 1e-10
DEFAULT_ATOL = 1e-12
SINGULAR_FRACTION = 1e-8


class ConstraintInfeasible(ValueError):
    """The Hamiltonian constraint has no real solution for the requested start."""


class StepUnderflow(RuntimeError):
    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


class NonFiniteDerivative(RuntimeError):
    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


class MonitorUnbound(ValueError):
    """A monitor expression references symbols the state cannot supply."""


class UnknownMonitor(KeyError):
    pass


@dataclass(frozen=True)
class State:
    t: float
    values: Mapping[str, tuple[float, float]]

    def __post_init__(self):
        vals = {str(k): (float(v[0]), float(v[1])) for k, v in self.values.items()}
        for k, (x, dx) in vals.items():
            if not (math.isfinite(x) and math.isfinite(dx)):
                raise ValueError(f"non-finite initial data for {k}")
        if "a" in vals and vals["a"][0] <= 0:
            raise ValueError("scale factor must be positive")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "t", float(self.t))

    def value(self, name: str) -> float:
        return self.values[name][0]

    def rate(self, name: str) -> float:
        return self.values[name][1]


@dataclass
class Trajectory:
    names: tuple[str, ...]
    t: np.ndarray
    y: np.ndarray  # shape (samples, 2 * len(names)): value, rate per dependent
    monitors: dict[str, np.ndarray] = field(default_factory=dict)
    steps: int = 0
    rejected: int = 0
    nfev: int = 0
    termination: str = "completed"

    def column(self, name: str) -> np.ndarray:
        if name.endswith("dot") and name[:-3] in self.names:
            return self.y[:, 2 * self.names.index(name[:-3]) + 1]
        return self.y[:, 2 * self.names.index(name)]

    def state(self, i: int) -> State:
        row = self.y[i]
        return State(self.t[i], {n: (row[2 * j], row[2 * j + 1]) for j, n in enumerate(self.names)})

    def __len__(self):
        return len(self.t)

    def to_csv(self, fh=None) -> str:
        cols = ["t"]
        for n in self.names:
            cols += [n, f"{n}dot"]
        cols += list(self.monitors)
        out = io.StringIO()
        out.write(",".join(cols) + "\n")
        for i in range(len(self.t)):
            row = [self.t[i], *self.y[i], *(m[i] for m in self.monitors.values())]
            out.write(",".join(_fmt(x) for x in row) + "\n")
        text = out.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def constrained_initial_state(a0: float, phi0: float, phidot0: float, cfg: ModelConfig,
                              branch: int = 1, N0: float = 1.0, t0: float = 0.0) -> State:
    """Start on the constraint surface: ``adot^2 = N^2 (2 a^2 V - k) + a^2 phidot^2``."""
    if a0 <= 0:
        raise ValueError("a0 must be positive")
    if branch not in (1, -1):
        raise ValueError("branch must be +1 or -1")
    rule = cfg.potential.rule()
    if rule is None:
        raise UnboundSymbol("potential is opaque; choose a concrete V")
    V = evaluate(cfg.potential.expr(), {phi: phi0})
    k = evaluate(cfg.k_expr, {})
    rad = N0**2 * (2 * a0**2 * V - k) + a0**2 * phidot0**2
    if rad < 0:
        raise ConstraintInfeasible(f"negative radicand {rad!r}: no real adot for this start")
    values = {"a": (a0, branch * math.sqrt(rad)), "phi": (phi0, phidot0)}
    if cfg.lapse == "dynamical":
        values["N"] = (N0, 0.0)
    return State(t0, values)


class _Compiled:
    """Second-order system flattened to first order and compiled once."""

    def __init__(self, sys: ODESystem, monitors: Mapping[str, Expr]):
        sys = sys.instantiate()
        ctx = sys.context
        self.names = tuple(u.name for u in ctx.dependents)
        self.variables: list[Var] = [ctx.independent]
        for u in ctx.dependents:
            self.variables += [u, ctx.dot(u)]
        rates = []
        for u in ctx.dependents:
            # dependents without an evolution equation are gauge: u'' = 0
            rates.append(sys.rhs.get(ctx.ddot(u), as_expr(0)))
        try:
            self._rhs = compile_exprs(rates, self.variables)
        except UnboundSymbol as exc:
            raise UnboundSymbol(f"system is not fully instantiated: {exc}") from None
        self.has_lapse = N in ctx.dependents
        self.monitor_names = list(monitors)
        rule = sys.potential.rule() if sys.potential else None
        mexprs = []
        for name, m in monitors.items():
            m = as_expr(m)
            if rule is not None:
                m = substitute(m, {sys.potential.name: rule})
            mexprs.append(m)
        try:
            self._mon = compile_exprs(mexprs, self.variables) if mexprs else None
        except UnboundSymbol as exc:
            raise MonitorUnbound(f"monitor references unbound symbol {exc}") from None
        self.nfev = 0

    def f(self, t: float, y: np.ndarray) -> np.ndarray:
        self.nfev += 1
        if self.has_lapse and y[2 * self.names.index("N")] == 0:
            raise DegenerateLapse("lapse vanished during integration")
        try:
            acc = self._rhs(t, *y)
        except ZeroDivisionError:
            raise NonFiniteDerivative(f"division by zero at t={t}") from None
        out = np.empty_like(y)
        out[0::2] = y[1::2]
        out[1::2] = acc
        if not np.all(np.isfinite(out)):
            raise NonFiniteDerivative(f"non-finite derivative at t={t}")
        return out

    def monitors(self, t: float, y: np.ndarray) -> tuple:
        return self._mon(t, *y) if self._mon else ()


def _pack(state: State, names: Sequence[str]) -> np.ndarray:
    y = []
    for n in names:
        if n not in state.values:
            raise ValueError(f"initial state lacks {n}")
        y += list(state.values[n])
    return np.array(y, dtype=float)


def solve_ivp(sys: ODESystem, s0: State, t_end: float, rtol: float = DEFAULT_RTOL,
              atol: float = DEFAULT_ATOL, monitors: Mapping[str, Expr] | Sequence[Expr] | None = None,
              t_eval: Sequence[float] | None = None, fixed_step: float | None = None,
              strict: bool = False, max_steps: int = 2_000_000) -> Trajectory:
    """Integrate ``sys`` from ``s0`` to ``t_end``.

    Samples are taken at ``t_eval`` (dense output) or at every accepted step.
    Integration stops early when ``a`` falls to ``1e-8 a0``, the step size
    underflows or a derivative stops being finite; the partial trajectory is
    returned with ``termination`` set.  With ``strict`` the last two raise.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("tolerances must be positive")
    if monitors is None:
        monitors = {}
    elif not isinstance(monitors, Mapping):
        monitors = {f"m{i}": m for i, m in enumerate(monitors)}
    comp = _Compiled(sys, monitors)
    y0 = _pack(s0, comp.names)
    t0 = s0.t
    if t_end < t0:
        raise ValueError("t_end must not precede the initial time")
    ia = 2 * comp.names.index("a")
    a_floor = SINGULAR_FRACTION * y0[ia]
    ts: list[float] = []
    ys: list[np.ndarray] = []
    if t_eval is not None and fixed_step is not None:
        raise ValueError("fixed-step runs sample at grid points; t_eval is not supported")
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(t_eval) <= 0) or (len(t_eval) and (t_eval[0] < t0 or t_eval[-1] > t_end)):
            raise ValueError("t_eval must be increasing and inside [t0, t_end]")
    out_i = 0
    # the solver runs in elapsed time s = t - t0 so that step sizes do not
    # depend on where the clock starts (exact translation equivariance)
    s_eval = None if t_eval is None else t_eval - t0

    def emit_until(s_hi: float, interp, y_hi):
        nonlocal out_i
        if t_eval is None:
            ts.append(t0 + s_hi)
            ys.append(np.array(y_hi))
            return
        while out_i < len(t_eval) and s_eval[out_i] <= s_hi:
            ss = s_eval[out_i]
            ts.append(t_eval[out_i])
            ys.append(np.array(y_hi) if ss == s_hi else interp(ss))
            out_i += 1

    if t_eval is None or (len(t_eval) and t_eval[0] == t0):
        ts.append(t0)
        ys.append(y0.copy())
        out_i = 1 if t_eval is not None else 0

    termination = "completed"
    steps = rejected = 0
    error: Exception | None = None
    try:
        comp.f(t0, y0)
        if t_end == t0:
            pass
        elif fixed_step is not None:
            steps, termination = _fixed(comp, t0, y0, t_end, fixed_step, ia, a_floor, emit_until)
        else:
            solver = RK45(lambda s, y: comp.f(t0 + s, y), 0.0, y0, t_end - t0, rtol=rtol, atol=atol)
            base_nfev = comp.nfev
            while solver.status == "running":
                if steps >= max_steps:
                    termination = "max_steps"
                    break
                msg = solver.step()
                if solver.status == "failed":
                    termination = "step_underflow"
                    error = StepUnderflow(msg or "step size underflow")
                    break
                steps += 1
                emit_until(solver.t, solver.dense_output(), solver.y)
                if solver.y[ia] <= a_floor:
                    termination = "singular"
                    break
            rejected = max(0, (comp.nfev - base_nfev) // 6 - steps)
    except NonFiniteDerivative as exc:
        termination = "nonfinite"
        error = exc
    if termination == "completed" and t_eval is None and len(ts) > 1:
        ts[-1] = t_end
    traj = Trajectory(comp.names, np.array(ts), np.array(ys).reshape(len(ts), 2 * len(comp.names)),
                      steps=steps, rejected=rejected, nfev=comp.nfev, termination=termination)
    if comp.monitor_names:
        vals = np.array([comp.monitors(t, y) for t, y in zip(traj.t, traj.y)]).reshape(len(ts), -1)
        traj.monitors = {n: vals[:, i] for i, n in enumerate(comp.monitor_names)}
    if strict and error is not None:
        error.trajectory = traj  # type: ignore[attr-defined]
        raise error
    return traj


def _fixed(comp: _Compiled, t0, y0, t_end, h, ia, a_floor, emit) -> tuple[int, str]:
    """Constant-step integration with the Dormand-Prince fifth-order weights."""
    A, B, C = RK45.A, RK45.B, RK45.C
    n = max(1, int(round((t_end - t0) / h)))
    h = (t_end - t0) / n
    y = y0.copy()
    K = np.empty((len(B), len(y)))
    for i in range(n):
        t = t0 + i * h
        for s in range(len(B)):
            K[s] = comp.f(t + C[s] * h, y + h * (A[s, :s] @ K[:s]))
        y = y + h * (B @ K)
        emit((i + 1) * h, None, y)
        if y[ia] <= a_floor:
            return i + 1, "singular"
    return n, "completed"


def monitor_drift(traj: Trajectory, name: str) -> float:
    """``max |m(t) - m(t0)|`` over the samples."""
    if name not in traj.monitors:
        raise UnknownMonitor(name)
    m = traj.monitors[name]
    return float(np.max(np.abs(m - m[0]))) if len(m) else 0.0
