from fractions import Fraction
from itertools import product

import pytest

from liefrw.expr import Const, Lambda, is_zero, normalize, parse, substitute, symbol
from liefrw.integrate import constrained_initial_state
from liefrw.jet import ContextMismatch, JetContext, VectorField
from liefrw.models import (LAPSE_CONTEXT, UNIT_CONTEXT, ModelConfig, Potential, a, addot, adot, energy,
                           frw_lapse_system, frw_proper_time_system, frw_system, phi, phiddot, phidot, t)
from liefrw.symmetry import (GeneratorFamily, NotClosed, NotLinearlyIndependent, ansatz_declarations, ansatz_field,
                             c1, classify, commutator, determining_equations, lie_action_on_scalar, mu,
                             pushforward_check, standard_generators, symmetry_residual)

c = symbol("c")
G = standard_generators(UNIT_CONTEXT)
X, Y, Z, W = G["X"], G["Y"], G["Z"], G["W"]
OPAQUE = Potential.opaque()
EXPC = Potential.exponential(c, -2)
QUAD = Potential.polynomial([0, 0, 1])  # V = phi^2


def verdict(g, sys):
    return symmetry_residual(g, sys).verdict


# --- decisions on the conformal-time system ---------------------------------

@pytest.mark.parametrize("k", [-1, 0, 1])
def test_scaling_is_symmetry_for_any_potential(k):
    assert verdict(Z, frw_system(ModelConfig(k, OPAQUE)))


@pytest.mark.parametrize("k", [-1, 0, 1])
def test_x_is_symmetry_on_exponential_branch(k):
    assert verdict(X, frw_system(ModelConfig(k, EXPC)))


def test_x_fails_for_quadratic_potential():
    rep = symmetry_residual(X, frw_system(ModelConfig(0, QUAD)))
    assert not rep.verdict
    assert any(not is_zero(r) for r in rep.residuals.values())


def test_x_residual_for_opaque_potential_vanishes_only_on_exponential_branch():
    rep = symmetry_residual(X, frw_system(ModelConfig(0, OPAQUE)))
    expo = {"V": Lambda([symbol("s")], Potential.exponential(c, -2).expr(symbol("s")))}
    quad = {"V": Lambda([symbol("s")], symbol("s") ** 2)}
    for r in rep.residuals.values():
        assert is_zero(substitute(r, expo))
    assert any(not is_zero(substitute(r, quad)) for r in rep.residuals.values())


def test_verdict_iff_all_residuals_zero():
    for g, pot in product((X, Y, Z, W), (OPAQUE, EXPC, QUAD)):
        rep = symmetry_residual(g, frw_system(ModelConfig(0, pot)))
        assert rep.verdict == all(is_zero(r) for r in rep.residuals.values())


def test_report_is_immutable_and_renders():
    rep = symmetry_residual(Z, frw_system(ModelConfig(0, OPAQUE)))
    with pytest.raises(Exception):
        rep.verdict = False
    assert "SYMMETRY" in rep.as_text()
    assert ("conformal.Z.verdict", "true") in rep.as_records()
    assert "a > 0" in rep.side_conditions


def test_on_shell_elimination_order_does_not_matter():
    sys = frw_system(ModelConfig(0, QUAD))
    rep = symmetry_residual(X, sys)
    for lead, raw in rep.offshell.items():
        one = substitute(substitute(raw, {addot: sys.rhs[addot]}), {phiddot: sys.rhs[phiddot]})
        two = substitute(substitute(raw, {phiddot: sys.rhs[phiddot]}), {addot: sys.rhs[addot]})
        assert is_zero(one - two)
        assert is_zero(one - rep.residuals[lead])


# --- proper-time and lapse systems ------------------------------------------

@pytest.mark.parametrize("k", [-1, 0, 1])
def test_time_translation_on_proper_time_system(k):
    assert verdict(Y, frw_proper_time_system(ModelConfig(k, OPAQUE)))


def test_scaling_fails_on_closed_proper_time_system():
    assert not verdict(Z, frw_proper_time_system(ModelConfig(1, OPAQUE)))
    assert not verdict(Z, frw_proper_time_system(ModelConfig(-1, OPAQUE)))


def test_scaling_on_flat_proper_time_system():
    assert verdict(Z, frw_proper_time_system(ModelConfig(0, OPAQUE)))


def test_x_on_proper_time_needs_flat_exponential():
    assert verdict(X, frw_proper_time_system(ModelConfig(0, EXPC)))
    assert not verdict(X, frw_proper_time_system(ModelConfig(1, EXPC)))
    assert not verdict(X, frw_proper_time_system(ModelConfig(0, OPAQUE)))


@pytest.mark.parametrize("k", [-1, 0, 1])
def test_lapse_system_generators(k):
    sys = frw_lapse_system(ModelConfig(k, OPAQUE, "dynamical"))
    assert verdict(Y, sys)
    assert verdict(Z, sys)
    assert not verdict(X, sys)
    assert verdict(X, frw_lapse_system(ModelConfig(k, EXPC, "dynamical")))


def test_generator_on_foreign_context_raises():
    ctx = JetContext.of("s", ["a", "phi"])
    g = VectorField(ctx, {symbol("s"): 1})
    with pytest.raises(ContextMismatch):
        symmetry_residual(g, frw_system(ModelConfig(0)))


@pytest.mark.parametrize("k", [-1, 1])
def test_w_leaves_constraint_surface_when_curved(k):
    rep = symmetry_residual(W, frw_system(ModelConfig(k, EXPC)))
    assert rep.verdict
    assert not is_zero(rep.constraint_residuals[0])


def test_w_preserves_flat_constraint():
    rep = symmetry_residual(W, frw_system(ModelConfig(0, EXPC)))
    assert is_zero(rep.constraint_residuals[0])


# --- determining equations ---------------------------------------------------

def _coeff(eqs, lead, monomial):
    return eqs[lead][normalize(monomial)]


def test_determining_equation_coefficients():
    eqs = determining_equations(frw_system(ModelConfig(0, OPAQUE)))
    decl = ansatz_declarations(UNIT_CONTEXT)
    tau_aa = parse("D(tau,a,2)", functions=decl)
    tau_ap = parse("D(D(tau,a,1),phi,1)", functions=decl)
    tau_p = parse("D(tau,phi,1)", functions=decl)
    tau_a = parse("D(tau,a,1)", functions=decl)
    tau_pp = parse("D(tau,phi,2)", functions=decl)
    assert is_zero(_coeff(eqs, addot, adot**3) + tau_aa)
    assert is_zero(_coeff(eqs, addot, adot**2 * phidot) - (-2 * tau_ap + 3 * tau_p / a))
    assert is_zero(_coeff(eqs, addot, adot * phidot**2) - (2 * a * tau_a - tau_pp))


def test_determining_equations_reassemble():
    sys = frw_system(ModelConfig(0, OPAQUE))
    eqs = determining_equations(sys)
    rep = symmetry_residual(ansatz_field(UNIT_CONTEXT), sys, constraints=False)
    for lead, parts in eqs.items():
        total = sum((m * k for m, k in parts.items()), Const(0))
        assert is_zero(total - rep.residuals[lead])


def _instantiate(eqs, rules):
    return [substitute(coeff, rules) for parts in eqs.values() for coeff in parts.values()]


def test_family_solves_determining_equations_on_exponential_branch():
    eqs = determining_equations(frw_system(ModelConfig(0, EXPC)))
    for coeff in _instantiate(eqs, GeneratorFamily().rules(UNIT_CONTEXT)):
        assert is_zero(coeff)


def test_family_needs_mu_zero_for_generic_potential():
    eqs = determining_equations(frw_system(ModelConfig(0, OPAQUE)))
    assert all(is_zero(e) for e in _instantiate(eqs, GeneratorFamily(mu=0).rules(UNIT_CONTEXT)))
    assert not all(is_zero(e) for e in _instantiate(eqs, GeneratorFamily().rules(UNIT_CONTEXT)))


def test_lapse_determining_equations_keep_lapse_acceleration_free():
    eqs = determining_equations(frw_lapse_system(ModelConfig(0, OPAQUE, "dynamical")))
    Nddot = LAPSE_CONTEXT.ddot("N")
    assert normalize(adot * Nddot) in eqs[addot]


# --- Lie action, commutators, algebra ---------------------------------------

def test_family_scales_energy():
    cfg = ModelConfig(0, EXPC)
    g = GeneratorFamily().vector_field(UNIT_CONTEXT)
    E = energy(cfg)
    assert is_zero(lie_action_on_scalar(g, E) - 2 * (c1 - mu) * E)


def test_lie_action_examples():
    E = energy(ModelConfig(0, OPAQUE))
    assert is_zero(lie_action_on_scalar(Y, E))
    assert is_zero(lie_action_on_scalar(Z, E) - 2 * E)


def test_lie_action_rejects_second_order():
    with pytest.raises(ValueError):
        lie_action_on_scalar(Y, addot)


def test_commutator_table():
    assert commutator(X, Y).equals(-Y)
    assert commutator(X, Z).equals(0 * Z)
    assert commutator(Y, Y).equals(0 * Y)
    assert commutator(Y, Z).equals(0 * Y)


def test_commutator_antisymmetry_and_jacobi_on_family():
    g1 = GeneratorFamily(1, 2, 3).vector_field(UNIT_CONTEXT)
    g2 = VectorField(UNIT_CONTEXT, {t: t**2, a: a * phi})
    g3 = VectorField(UNIT_CONTEXT, {phi: a * t})
    assert (commutator(g1, g2) + commutator(g2, g1)).equals(0 * g1)
    jac = (commutator(g1, commutator(g2, g3)) + commutator(g2, commutator(g3, g1))
           + commutator(g3, commutator(g1, g2)))
    assert jac.equals(0 * g1)


def test_classify_three_dimensional():
    s = classify([X, Y, Z])
    assert s.solvable and not s.nilpotent and not s.abelian
    assert s.constants[0][1] == [0, -1, 0]
    n = 3
    for i, j, k in product(range(n), repeat=3):
        assert s.constants[i][j][k] == -s.constants[j][i][k]
    # Jacobi on the structure constants
    for i, j, k, m in product(range(n), repeat=4):
        tot = sum(s.constants[j][k][l] * s.constants[i][l][m] + s.constants[k][i][l] * s.constants[j][l][m]
                  + s.constants[i][j][l] * s.constants[k][l][m] for l in range(n))
        assert tot == 0


def test_classify_small_algebras():
    s = classify([Y, Z])
    assert s.abelian and s.nilpotent and s.solvable
    one = classify([Y])
    assert one.abelian and one.nilpotent and one.solvable


def test_classify_heisenberg_is_nilpotent_not_abelian():
    e1 = VectorField(UNIT_CONTEXT, {t: 1})
    e2 = VectorField(UNIT_CONTEXT, {a: t})
    e3 = VectorField(UNIT_CONTEXT, {a: 1})
    s = classify([e1, e2, e3], ["P", "Q", "R"])
    assert s.nilpotent and s.solvable and not s.abelian
    assert ("P", "Q", "R") in s.table()


def test_classify_errors():
    with pytest.raises(NotClosed) as err:
        classify([Y, VectorField(UNIT_CONTEXT, {a: t})])
    assert err.value.pair == (0, 1)
    with pytest.raises(NotLinearlyIndependent):
        classify([Y, 2 * Y])


def test_flag_implications():
    bases = [[X, Y, Z], [Y, Z], [Y], [X, Y], [X, Z]]
    for b in bases:
        s = classify(b)
        assert (not s.nilpotent) or s.solvable
        assert (not s.abelian) or s.nilpotent


# --- numeric pushforward -----------------------------------------------------

EXP1 = Potential.exponential(1, -2)
HALF_SQ = Potential.polynomial([0, 0, Fraction(1, 2)])


@pytest.mark.parametrize("name,pot,expected", [
    ("X", EXP1, True), ("Y", EXP1, True), ("Z", EXP1, True), ("W", EXP1, True),
    ("X", HALF_SQ, False), ("Z", HALF_SQ, True),
])
def test_pushforward_agrees_with_symbolic_verdict(name, pot, expected):
    cfg = ModelConfig(0, pot)
    sys = frw_system(cfg)
    s0 = constrained_initial_state(1.0, 0.0, 0.3, cfg)
    res = pushforward_check(G[name], sys, s0, 2.0)
    assert res.passed == expected == verdict(G[name], sys)
    if not expected:
        assert abs(res.ratio - 2.0) < 0.5
