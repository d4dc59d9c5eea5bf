"""``liefrw`` command line.

Config files hold ``key = value`` lines with ``#`` comments; command-line
flags of the same name (dashes for underscores) override them.

Exit codes: 0 success, 1 verdict or threshold mismatch, 2 configuration
error, 3 infeasible constrained start, 4 step underflow, 5 turning point
before any reconstruction progress.
"""

from __future__ import annotations

import argparse
import hashlib
import math
import sys
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .expr import Const, ParseError, evaluate, parse, render, symbol
from .integrate import (ConstraintInfeasible, State, StepUnderflow, constrained_initial_state, monitor_drift,
                        solve_ivp)
from .jet import JetContext, VectorField
from .models import LAPSE_CONTEXT, UNIT_CONTEXT, ModelConfig, Potential, build_system, energy, lagrangian, phi
from .noether import (CONJUGATE_FACTOR, conjugate_momentum_check, law_K, law_P, variational_residual)
from .reduce import TurningPoint, reconstruct, reduced_csv, reduced_system, to_invariants
from .symmetry import (GeneratorFamily, NotClosed, NotLinearlyIndependent, ansatz_declarations, ansatz_field,
                       classify, determining_equations, standard_generators, symmetry_residual)

COMMANDS = ("check", "derive", "integrate", "reduce", "noether", "algebra")

# key -> default (strings, as they would appear in a config file)
KEYS = {
    "system": "conformal",
    "k": "0",
    "potential": "opaque",
    "gens": "",
    "c1": "c1",
    "c2": "c2",
    "mu": "mu",
    "field": "",
    "expect": "",
    "a0": "1",
    "phi0": "0",
    "phidot0": "0.3",
    "adot0": "",
    "N0": "1",
    "Ndot0": "0",
    "branch": "+1",
    "t_end": "10",
    "rtol": "1e-10",
    "atol": "1e-12",
    "dt_out": "0.1",
    "drift_max": "",
    "x_end": "",
    "variant": "conformal",
    "samples": "101",
    "roundtrip_max": "",
    "lagrangian": "",
    "numeric": "false",
    "verify_reassembly": "false",
    "out": "",
    "out_reconstructed": "",
}
FLAGS = {"numeric", "verify_reassembly"}


class ConfigError(ValueError):
    pass


def read_config_file(path: str) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in KEYS:
            raise ConfigError(f"{path}:{n}: unknown key {key!r}")
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        out[key] = value
    return out


def _bool(s: str, key: str) -> bool:
    if s.lower() in ("1", "true", "yes", "on"):
        return True
    if s.lower() in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {s!r}")


def _float(raw: dict, key: str) -> float | None:
    s = raw[key]
    if s == "":
        return None
    try:
        v = float(Fraction(s)) if "/" in s else float(s)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {s!r}") from None
    if not math.isfinite(v):
        raise ConfigError(f"{key}: must be finite")
    return v


def _scalar(s: str, key: str):
    """Rational literal or a symbol name."""
    try:
        return Fraction(s)
    except ValueError:
        pass
    if s.isidentifier():
        return symbol(s)
    raise ConfigError(f"{key}: expected a rational number or a symbol name, got {s!r}")


def parse_potential(s: str) -> Potential:
    """``opaque``, ``exp:LAM[:C]``, ``const:V0`` or ``poly:c0,c1,...``."""
    kind, _, rest = s.partition(":")
    try:
        if kind == "opaque" and not rest:
            return Potential.opaque()
        if kind == "exp":
            lam, _, c = rest.partition(":")
            return Potential.exponential(_scalar(c or "1", "potential"), Fraction(lam))
        if kind == "const":
            return Potential.constant(_scalar(rest, "potential"))
        if kind == "poly":
            return Potential.polynomial([_scalar(c.strip(), "potential") for c in rest.split(",")])
    except (ValueError, ZeroDivisionError) as exc:
        raise ConfigError(f"potential: {exc}") from None
    raise ConfigError(f"potential: cannot parse {s!r} (opaque, exp:LAM[:C], const:V0, poly:c0,c1,...)")


@dataclass
class RunConfig:
    raw: dict
    system: str
    model: ModelConfig
    gens: list[str]
    expect: list[bool] | None
    family: GeneratorFamily
    custom: dict = field(default_factory=dict)

    @property
    def context(self) -> JetContext:
        return LAPSE_CONTEXT if self.system == "lapse" else UNIT_CONTEXT

    def num(self, key: str) -> float | None:
        return _float(self.raw, key)

    def flag(self, key: str) -> bool:
        return _bool(self.raw[key], key)

    def digest(self) -> str:
        text = "\n".join(f"{k}={self.raw[k]}" for k in sorted(self.raw))
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def build_config(values: dict[str, str]) -> RunConfig:
    raw = dict(KEYS)
    raw.update(values)
    system = raw["system"]
    if system not in ("conformal", "proper", "lapse"):
        raise ConfigError(f"system: expected conformal, proper or lapse, got {system!r}")
    try:
        k = int(raw["k"])
        model = ModelConfig(k, parse_potential(raw["potential"]), "dynamical" if system == "lapse" else "unit")
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    gens = [g.strip() for g in raw["gens"].split(",") if g.strip()]
    for g in gens:
        if g not in ("X", "Y", "Z", "W", "G", "custom"):
            raise ConfigError(f"gens: unknown generator {g!r} (X, Y, Z, W, G, custom)")
    expect = None
    if raw["expect"]:
        expect = [_bool(s.strip(), "expect") for s in raw["expect"].split(",")]
    family = GeneratorFamily(*(_scalar(raw[n], n) for n in ("c1", "c2", "mu")))
    custom = {}
    if raw["field"]:
        for part in raw["field"].split(";"):
            name, eq, body = part.partition("=")
            if not eq:
                raise ConfigError("field: expected 'var=EXPR' entries separated by ';'")
            try:
                custom[name.strip()] = parse(body.strip())
            except ParseError as exc:
                raise ConfigError(f"field: {exc}") from None
    for key in ("a0", "phi0", "phidot0", "adot0", "N0", "Ndot0", "t_end", "rtol", "atol", "dt_out", "drift_max",
                "x_end", "roundtrip_max"):
        _float(raw, key)
    for key in ("rtol", "atol", "dt_out"):
        if _float(raw, key) is not None and _float(raw, key) <= 0:
            raise ConfigError(f"{key}: must be positive")
    try:
        if int(raw["samples"]) < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"samples: expected a positive integer, got {raw['samples']!r}") from None
    if raw["branch"] not in ("+1", "1", "-1", "+", "-"):
        raise ConfigError("branch: expected +1 or -1")
    for key in FLAGS:
        _bool(raw[key], key)
    if raw["variant"] not in ("conformal", "proper"):
        raise ConfigError("variant: expected conformal or proper")
    if raw["lagrangian"] not in ("", "unit", "lapse"):
        raise ConfigError("lagrangian: expected unit or lapse")
    return RunConfig(raw, system, model, gens, expect, family, custom)


def generators(cfg: RunConfig, default: str) -> dict[str, VectorField]:
    ctx = cfg.context
    std = standard_generators(ctx)
    out = {}
    for g in cfg.gens or default.split(","):
        if g in std:
            out[g] = std[g]
        elif g == "G":
            out[g] = VectorField(ctx, cfg.family.vector_field(ctx).coefficients, "G")
        else:
            if not cfg.custom:
                raise ConfigError("gens: 'custom' needs a field entry")
            try:
                out[g] = VectorField(ctx, {symbol(v): e for v, e in cfg.custom.items()}, "custom")
            except ValueError as exc:
                raise ConfigError(f"field: {exc}") from None
    return out


class Report:
    def __init__(self, command: str, cfg: RunConfig, side: list[str] | None = None):
        self.lines = [f"# liefrw {__version__}", f"# command: {command}", f"# config-hash: {cfg.digest()}"]
        conds = ["a > 0"] + (["N != 0"] if cfg.system == "lapse" else [])
        conds += [cfg.model.potential.describe(), f"k = {cfg.model.k}"] + (side or [])
        self.lines.append("# side conditions: " + "; ".join(conds))

    def add(self, text: str = ""):
        self.lines.extend(text.splitlines() or [""])

    def text(self) -> str:
        return "\n".join(self.lines) + "\n"


def emit(report: Report, cfg: RunConfig, key: str = "out"):
    path = cfg.raw[key]
    if path:
        Path(path).write_text(report.text())
    sys.stdout.write(report.text())


def cmd_check(cfg: RunConfig) -> int:
    system = build_system(cfg.system, cfg.model)
    gens = generators(cfg, "X,Y,Z")
    expect = cfg.expect or [True] * len(gens)
    if len(expect) != len(gens):
        raise ConfigError("expect: need one entry per generator")
    rep = Report("check", cfg)
    ok = True
    for (name, g), want in zip(gens.items(), expect):
        r = symmetry_residual(g, system)
        rep.add(r.as_text())
        rep.add(f"  expected {str(want).lower()}: {'ok' if r.verdict == want else 'MISMATCH'}")
        ok &= r.verdict == want
    emit(rep, cfg)
    return 0 if ok else 1


def cmd_derive(cfg: RunConfig) -> int:
    system = build_system(cfg.system, cfg.model)
    decl = ansatz_declarations(system.context)
    de = determining_equations(system)
    rep = Report("derive", cfg, ["ansatz " + ", ".join(f"{n}({','.join(args)})" for n, args in decl.items())])
    ok = True
    for lead, coeffs in de.items():
        rep.add(f"equation {render(lead)}:")
        for mono, c in coeffs.items():
            rep.add(f"  {render(mono)} : {render(c, decl)}")
    if cfg.flag("verify_reassembly"):
        full = symmetry_residual(ansatz_field(system.context), system, constraints=False).residuals
        for lead, coeffs in de.items():
            total = Const(0)
            for m, c in coeffs.items():
                total = total + m * c
            good = (total - full[lead]).norm.is_zero
            ok &= good
            rep.add(f"reassembly {render(lead)}: {'pass' if good else 'FAIL'}")
    emit(rep, cfg)
    return 0 if ok else 1


def _start(cfg: RunConfig, model: ModelConfig) -> State:
    a0, phi0, pd0 = cfg.num("a0"), cfg.num("phi0"), cfg.num("phidot0")
    N0 = cfg.num("N0")
    adot0 = cfg.num("adot0")
    branch = -1 if cfg.raw["branch"] in ("-1", "-") else 1
    if adot0 is None:
        return constrained_initial_state(a0, phi0, pd0, model, branch, N0)
    values = {"a": (a0, adot0), "phi": (phi0, pd0)}
    if model.lapse == "dynamical":
        values["N"] = (N0, cfg.num("Ndot0"))
    return State(0.0, values)


def _monitors(system_name: str, model: ModelConfig) -> dict:
    if system_name == "conformal":
        return {"E": energy(model)}
    if system_name == "proper":
        return {"E": energy(model), "P": law_P(model).flux}
    return {"K": law_K(model).flux, "C": build_system("lapse", model).constraints[0]}


def _concrete(model: ModelConfig):
    if model.potential.kind == "opaque":
        raise ConfigError("potential: numeric runs need a concrete potential (exp:, const:, poly:)")


def cmd_integrate(cfg: RunConfig) -> int:
    model = cfg.model
    _concrete(model)
    system = build_system(cfg.system, model)
    s0 = _start(cfg, model)
    t_end, dt = cfg.num("t_end"), cfg.num("dt_out")
    grid = _grid(t_end, dt)
    traj = solve_ivp(system, s0, t_end, cfg.num("rtol"), cfg.num("atol"), _monitors(cfg.system, model), t_eval=grid)
    csv = traj.to_csv()
    if cfg.raw["out"]:
        Path(cfg.raw["out"]).write_text(csv)
    else:
        sys.stdout.write(csv)
    summary = [f"termination {traj.termination} steps {traj.steps} rejected {traj.rejected}",
               f"final t {traj.t[-1]:.17g} a {traj.column('a')[-1]:.17g}"]
    limit = cfg.num("drift_max")
    code = 0
    for name in traj.monitors:
        d = monitor_drift(traj, name)
        flag = ""
        if limit is not None and d > limit:
            flag, code = " EXCEEDS drift-max", 1
        summary.append(f"drift {name} {d:.3e}{flag}")
    sys.stderr.write("\n".join(summary) + "\n")
    if traj.termination == "step_underflow":
        return 4
    return code


def _grid(t_end: float, dt: float) -> np.ndarray:
    n = max(1, int(round(t_end / dt)))
    return np.linspace(0.0, t_end, n + 1)


def cmd_reduce(cfg: RunConfig) -> int:
    model = ModelConfig(0 if cfg.raw["variant"] == "proper" else cfg.model.k, cfg.model.potential, "unit")
    _concrete(model)
    variant = cfg.raw["variant"]
    s0 = _start(cfg, model)
    r0 = to_invariants(s0)
    x_end = cfg.num("x_end")
    if x_end is None:
        x_end = r0.x + math.copysign(1.0, r0.y)
    rs = reduced_system(model.potential, variant)
    samples = int(cfg.raw["samples"])
    partial = False
    try:
        traj = reconstruct(rs, r0, s0.value("a"), s0.t, x_end, samples=samples)
    except TurningPoint as exc:
        if exc.partial is None or len(exc.partial) <= 1:
            sys.stderr.write(f"turning point before any progress: {exc}\n")
            return 5
        traj, partial = exc.partial, True
        sys.stderr.write(f"reconstruction segment ended early: {exc}\n")
    red = reduced_csv(traj)
    full = traj.to_csv()
    if cfg.raw["out"]:
        Path(cfg.raw["out"]).write_text(red)
    else:
        sys.stdout.write(red)
    if cfg.raw["out_reconstructed"]:
        Path(cfg.raw["out_reconstructed"]).write_text(full)
    direct_sys = build_system("conformal" if variant == "conformal" else "proper", model)
    dev = 0.0
    if len(traj) > 1:
        d = solve_ivp(direct_sys, s0, float(traj.t[-1]), cfg.num("rtol"), cfg.num("atol"), t_eval=traj.t)
        dev = max(float(np.max(np.abs(traj.column("a") / d.column("a") - 1))),
                  float(np.max(np.abs(traj.column("phi") - d.column("phi")) / np.maximum(1, np.abs(d.column("phi"))))))
    limit = cfg.num("roundtrip_max")
    sys.stderr.write(f"round-trip max relative deviation {dev:.3e}" + (" (partial segment)" if partial else "") + "\n")
    return 1 if limit is not None and dev > limit else 0


VARIATIONAL = {"Y": True, "X": False, "Z": False, "W": False}


def cmd_noether(cfg: RunConfig) -> int:
    rep = Report("noether", cfg)
    ok = True
    unit = ModelConfig(cfg.model.k, cfg.model.potential, "unit")
    lapse = ModelConfig(cfg.model.k, cfg.model.potential, "dynamical")
    if cfg.gens or cfg.raw["lagrangian"]:
        which = cfg.raw["lagrangian"] or "unit"
        names = cfg.gens or ["Y"]
        pairs = [(n, which) for n in names]
    else:
        pairs = [("Y", "unit"), ("Z", "unit"), ("Y", "lapse")]
    expect = cfg.expect or [VARIATIONAL.get(n, True) for n, _ in pairs]
    if len(expect) != len(pairs):
        raise ConfigError("expect: need one entry per generator")
    for (name, which), want in zip(pairs, expect):
        model = unit if which == "unit" else lapse
        g = generators(RunConfig(cfg.raw, "lapse" if which == "lapse" else "conformal", model, [name], None,
                                 cfg.family, cfg.custom), name)[name]
        res = variational_residual(g, lagrangian(model))
        got = res.norm.is_zero
        ok &= got == want
        rep.add(f"variational {name} on {which} Lagrangian: {str(got).lower()} "
                f"(expected {str(want).lower()}) residual = {render(res)}")
    P, K = law_P(unit), law_K(lapse)
    rep.add(f"law P verified, factor {P.factor} relative to the printed bracket")
    rep.add("  " + P.as_text().replace("\n", "\n  "))
    rep.add(f"law K verified, factor {K.factor} relative to the printed bracket")
    rep.add("  " + K.as_text().replace("\n", "\n  "))
    cm = conjugate_momentum_check(unit)
    good = cm.norm.is_zero
    ok &= good
    rep.add(f"conjugate momentum = {CONJUGATE_FACTOR} * P: {'pass' if good else 'FAIL'} (difference {render(cm)})")
    if cfg.flag("numeric"):
        ok &= _noether_numeric(cfg, rep)
    emit(rep, cfg)
    return 0 if ok else 1


REFERENCE_POTENTIAL = Potential.polynomial([0, 0, Fraction(1, 2)])
# constrained lapse starts whose scale factor stays O(10) over t in [0, 10]
REFERENCE_K_START = {-1: (1.0, 0.0, 0.3), 0: (1.0, 0.0, 0.3), 1: (1.0, 0.5, 1.0)}


def _noether_numeric(cfg: RunConfig, rep: Report) -> bool:
    """P drift on the proper-time system and K along a constrained lapse run with N = 1."""
    pot = cfg.model.potential
    user_start = any(cfg.raw[k] != KEYS[k] for k in ("a0", "phi0", "phidot0", "adot0"))
    if pot.kind == "opaque":
        pot = REFERENCE_POTENTIAL
        rep.add(f"numeric runs use {pot.describe()}")
    unit = ModelConfig(cfg.model.k, pot, "unit")
    lapse = ModelConfig(cfg.model.k, pot, "dynamical")
    if user_start:
        s_unit = _start(cfg, unit)
        s_lapse = constrained_initial_state(s_unit.value("a"), s_unit.value("phi"), s_unit.rate("phi"), lapse)
    else:
        # off the constraint surface: a = 1, phi = 1, phi' = 0 and E(0) = 0.7
        V = evaluate(pot.expr(), {phi: 1.0})
        s_unit = State(0.0, {"a": (1.0, math.sqrt(0.7 + 2 * V)), "phi": (1.0, 0.0)})
        a0, phi0, pd0 = REFERENCE_K_START[int(cfg.model.k)]
        s_lapse = constrained_initial_state(a0, phi0, pd0, lapse)
        rep.add("numeric reference starts: P from a=1 phi=1 phidot=0 with E(0)=0.7; "
                f"K from constrained a={a0:g} phi={phi0:g} phidot={pd0:g} N=1")
    limit = cfg.num("drift_max") or 1e-7
    t_end = cfg.num("t_end")
    grid = _grid(t_end, cfg.num("dt_out"))
    tr = solve_ivp(build_system("proper", unit), s_unit, t_end, cfg.num("rtol"), cfg.num("atol"),
                   {"P": law_P(unit).flux}, t_eval=grid)
    dP = monitor_drift(tr, "P")
    okP = dP <= limit and tr.termination == "completed"
    rep.add(f"numeric P drift {dP:.3e} over t in [0, {t_end:g}] ({tr.termination}): {'pass' if okP else 'FAIL'}")
    tr = solve_ivp(build_system("lapse", lapse), s_lapse, t_end, cfg.num("rtol"), cfg.num("atol"),
                   {"K": law_K(lapse).flux}, t_eval=grid)
    kmax = float(np.max(np.abs(tr.monitors["K"])))
    okK = kmax <= 1e-9 and tr.termination == "completed"
    rep.add(f"numeric max |K| {kmax:.3e} on constrained lapse run ({tr.termination}): {'pass' if okK else 'FAIL'}")
    return okP and okK


def cmd_algebra(cfg: RunConfig) -> int:
    gens = generators(cfg, "X,Y,Z")
    rep = Report("algebra", cfg)
    try:
        st = classify(list(gens.values()), list(gens))
    except NotClosed as exc:
        i, j = exc.pair
        names = list(gens)
        rep.add(f"not closed: [{names[i]}, {names[j]}] = {exc.bracket}")
        emit(rep, cfg)
        return 1
    except NotLinearlyIndependent as exc:
        rep.add(f"not linearly independent: {exc}")
        emit(rep, cfg)
        return 1
    rep.add(st.as_text())
    names = list(gens)
    rep.add("structure constants (nonzero):")
    for i in range(len(names)):
        for j in range(len(names)):
            for k in range(len(names)):
                c = st.constants[i][j][k]
                if c:
                    rep.add(f"  C[{names[i]},{names[j]}]^{names[k]} = {c}")
    emit(rep, cfg)
    return 0


HANDLERS = {"check": cmd_check, "derive": cmd_derive, "integrate": cmd_integrate, "reduce": cmd_reduce,
            "noether": cmd_noether, "algebra": cmd_algebra}


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="liefrw", description="Lie symmetry toolkit for FRW scalar-field cosmology")
    p.add_argument("--version", action="version", version=f"liefrw {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", metavar="FILE")
        for key in KEYS:
            flag = "--" + key.replace("_", "-")
            if key in FLAGS:
                sp.add_argument(flag, dest=key, action="store_const", const="true", default=None)
            else:
                sp.add_argument(flag, dest=key, default=None)
    return p


def main(argv: list[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    try:
        values = read_config_file(args.config) if args.config else {}
        for key in KEYS:
            v = getattr(args, key)
            if v is not None:
                values[key] = v
        cfg = build_config(values)
        return HANDLERS[args.command](cfg)
    except ConfigError as exc:
        sys.stderr.write(f"liefrw: configuration error: {exc}\n")
        return 2
    except ConstraintInfeasible as exc:
        sys.stderr.write(f"liefrw: {exc}\n")
        return 3
    except StepUnderflow as exc:
        sys.stderr.write(f"liefrw: {exc}\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
