import csv
import io
import math
from fractions import Fraction

import numpy as np
import pytest

from liefrw.expr import Const, evaluate, free_vars, is_zero, substitute
from liefrw.integrate import State, constrained_initial_state, solve_ivp
from liefrw.models import (ModelConfig, Potential, a, addot, adot, euler_lagrange, frw_system, lagrangian, phi,
                           phiddot, phidot, solve_for)
from liefrw.reduce import (NonPositiveScaleFactor, ReducedState, ReducedSystem, TurningPoint, reconstruct,
                           reduced_conserved, reduced_csv, reduced_system, to_invariants, w, x, y)

EXP = Potential.exponential(1, -2)
OPAQUE = Potential.opaque()


def test_to_invariants_examples():
    r = to_invariants(State(0.0, {"a": (1.0, 1.0), "phi": (0.0, 0.3)}))
    assert (r.x, r.y, r.w) == (0.0, 0.3, 1.0)
    assert to_invariants(State(0.0, {"a": (2.0, -2.0), "phi": (0.0, 0.0)})).w == -1.0


def test_de_sitter_has_unit_hubble_rate():
    cfg = ModelConfig(0, Potential.constant(Fraction(1, 2)))
    tr = solve_ivp(frw_system(cfg), constrained_initial_state(1.0, 0.0, 0.0, cfg), 3.0)
    for i in range(len(tr)):
        assert abs(to_invariants(tr.state(i)).w - 1.0) < 1e-9


def test_conformal_variant_right_sides():
    rs = reduced_system(OPAQUE, "conformal")
    V, V1 = OPAQUE.expr(x), OPAQUE.derivative(x)
    assert is_zero(rs.dy - (-3 * w * y - V1) / y)
    assert is_zero(rs.dw - (2 * V - 2 * y**2 - w**2) / y)


def test_proper_variant_right_sides():
    rs = reduced_system(OPAQUE, "proper")
    V, V1 = OPAQUE.expr(x), OPAQUE.derivative(x)
    assert is_zero(rs.dy - (-3 * w * y - V1) / y)
    assert is_zero(rs.dw - (6 * V - 3 * y**2 - 3 * w**2) / (2 * y))


def _by_hand(add_rhs, pdd_rhs):
    # y' = phi''/phi', w' = (a''/a - w^2)/phi' with adot = w a, phidot = y, phi = x
    rule = {adot: w * a, phidot: y, phi: x}
    return (substitute(pdd_rhs / phidot, rule), substitute((add_rhs / a - (adot / a) ** 2) / phidot, rule))


def test_conformal_variant_matches_substitution_with_exponential_potential():
    sys = frw_system(ModelConfig(0, EXP))
    dy, dw = _by_hand(sys.rhs[addot], sys.rhs[phiddot])
    rs = reduced_system(EXP, "conformal")
    assert is_zero(rs.dy - dy) and is_zero(rs.dw - dw)


def test_proper_variant_matches_euler_lagrange_pipeline():
    lag = lagrangian(ModelConfig(0, OPAQUE))
    add_rhs = solve_for(euler_lagrange(lag, a), addot)
    pdd_rhs = solve_for(euler_lagrange(lag, phi), phiddot)
    dy, dw = _by_hand(add_rhs, pdd_rhs)
    rs = reduced_system(OPAQUE, "proper")
    assert is_zero(rs.dy - dy) and is_zero(rs.dw - dw)


def test_de_sitter_fixed_point_numerators():
    V0 = Fraction(1, 2)
    rs = reduced_system(Potential.constant(V0), "conformal")
    num_y = (rs.dy * y)
    num_w = (rs.dw * y)
    pt = {x: 0.0, y: 0.0, w: math.sqrt(2 * V0)}
    assert abs(evaluate(num_y, pt)) < 1e-15
    assert abs(evaluate(num_w, pt)) < 1e-15


def test_reduced_system_is_not_autonomous():
    rs = reduced_system(EXP, "conformal")
    assert x in free_vars(rs.dy)
    assert x not in free_vars(reduced_system(Potential.constant(1), "conformal").dy)


def test_unknown_variant():
    with pytest.raises(ValueError):
        reduced_system(EXP, "lapse")


@pytest.mark.parametrize("variant", ["conformal", "proper"])
def test_reduced_conserved(variant):
    q = reduced_conserved(OPAQUE, variant)
    assert is_zero(q - (w**2 - 2 * OPAQUE.expr(x) - y**2))


def test_reduced_conserved_at_de_sitter_point():
    q = reduced_conserved(Potential.constant(Fraction(1, 2)))
    assert evaluate(q, {x: 0.0, y: 0.0, w: 1.0}) == 0.0


def test_reduced_energy_along_reconstruction():
    rs = reduced_system(EXP, "conformal")
    # start off the constraint surface so the conserved value is nonzero
    tr = reconstruct(rs, ReducedState(0.0, 0.3, 1.2), 1.0, 0.0, 1.0)
    av, ad = tr.column("a"), tr.column("adot")
    xs, ys = tr.column("phi"), tr.column("phidot")
    vals = av**2 * ((ad / av) ** 2 - 2 * np.exp(-2 * xs) - ys**2)
    assert abs(vals[0]) > 0.1
    assert np.max(np.abs(vals - vals[0])) <= 1e-7


def test_reconstruction_round_trip_against_direct_integration():
    cfg = ModelConfig(0, EXP)
    s0 = constrained_initial_state(1.0, 0.0, 0.3, cfg)
    tr = reconstruct(reduced_system(EXP), to_invariants(s0), 1.0, 0.0, 1.0)
    direct = solve_ivp(frw_system(cfg), s0, float(tr.t[-1]), t_eval=tr.t)
    for name in ("a", "phi"):
        ref = direct.column(name)
        got = tr.column(name)
        rel = np.abs(got - ref) / np.maximum(np.abs(ref), 1.0)
        assert rel.max() <= 1e-6
    # reducing the direct states reproduces the reduced curve
    for i in (10, 50, 100):
        r = to_invariants(direct.state(i))
        assert abs(r.w - tr.column("adot")[i] / tr.column("a")[i]) < 1e-8


def test_constant_w_closed_form():
    rs = ReducedSystem(Const(0), Const(0), "conformal", Potential.constant(0))
    y0, w0, a0, t0 = 0.5, 0.8, 2.0, 1.0
    tr = reconstruct(rs, ReducedState(0.0, y0, w0), a0, t0, 1.0)
    expect = a0 * np.exp(w0 * (tr.t - t0))
    assert np.allclose(tr.t, t0 + tr.column("phi") / y0, rtol=1e-12)
    assert np.allclose(tr.column("a"), expect, rtol=1e-11)


def test_zero_length_window():
    tr = reconstruct(reduced_system(EXP), ReducedState(0.2, 0.3, 1.0), 1.5, 2.0, 0.2)
    assert len(tr) == 1
    assert tr.t[0] == 2.0 and tr.column("a")[0] == 1.5


def test_turning_point_ends_segment():
    pot = Potential.polynomial([0, 0, Fraction(1, 2)])
    with pytest.raises(TurningPoint) as err:
        reconstruct(reduced_system(pot), ReducedState(0.0, 0.3, 1.0), 1.0, 0.0, 2.0)
    part = err.value.partial
    assert part is not None and len(part) >= 1
    assert np.all(part.column("phidot") > 0)


def test_reconstruct_errors():
    rs = reduced_system(EXP)
    with pytest.raises(NonPositiveScaleFactor):
        reconstruct(rs, ReducedState(0.0, 0.3, 1.0), 0.0, 0.0, 1.0)
    with pytest.raises(TurningPoint):
        reconstruct(rs, ReducedState(0.0, 0.0, 1.0), 1.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        reconstruct(rs, ReducedState(0.0, 0.3, 1.0), 1.0, 0.0, -1.0)
    with pytest.raises(ValueError):
        ReducedState(math.inf, 0.0, 0.0)


def test_reduced_csv_columns():
    tr = reconstruct(reduced_system(EXP), ReducedState(0.0, 0.3, 1.0), 1.0, 0.0, 0.5, samples=5)
    rows = list(csv.reader(io.StringIO(reduced_csv(tr))))
    assert rows[0] == ["x", "y", "w", "t", "a"]
    assert len(rows) == 6
    assert float(rows[1][0]) == 0.0 and float(rows[-1][0]) == 0.5
