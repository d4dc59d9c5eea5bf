import random

import pytest

from liefrw.expr import Func, is_zero, normalize, parse, symbol
from liefrw.jet import (ContextMismatch, JetContext, OrderOverflow, VectorField, apply, prolong,
                        total_derivative)

CTX = JetContext.of("t", ["a", "phi"])
LAPSE = JetContext.of("t", ["a", "phi", "N"])
t, a, phi, N = (symbol(n) for n in ("t", "a", "phi", "N"))
ad, pd, add, pdd = CTX.dot(a), CTX.dot(phi), CTX.ddot(a), CTX.ddot(phi)

X = VectorField(CTX, {t: t, phi: 1}, "X")
Y = VectorField(CTX, {t: 1}, "Y")
Z = VectorField(CTX, {a: a}, "Z")


def zero(e) -> bool:
    return is_zero(e)


def test_total_derivative_examples():
    assert zero(total_derivative(a**2, CTX) - 2 * a * ad)
    assert zero(total_derivative(t * phi, CTX) - phi - t * pd)
    assert zero(total_derivative(ad * pd, CTX) - add * pd - ad * pdd)


def test_total_derivative_of_opaque_potential():
    V = Func("V", [phi]) + 0
    assert zero(total_derivative(V, CTX) - parse("D(V(phi),phi,1)") * pd)


def test_total_derivative_order_overflow():
    with pytest.raises(OrderOverflow):
        total_derivative(add, CTX)


def test_jet_order_overflow():
    with pytest.raises(OrderOverflow):
        CTX.jet(a, 3)


def test_prolongation_of_x():
    pr = prolong(X, 2)
    assert zero(pr.coeff(ad) + ad)
    assert zero(pr.coeff(pd) + pd)
    assert zero(pr.coeff(add) + 2 * add)
    assert zero(pr.coeff(pdd) + 2 * pdd)


def test_prolongation_of_y_vanishes():
    pr = prolong(Y, 2)
    for v in (ad, pd, add, pdd):
        assert zero(pr.coeff(v))


def test_prolongation_of_z():
    pr = prolong(Z, 2)
    assert zero(pr.coeff(ad) - ad)
    assert zero(pr.coeff(add) - add)
    assert zero(pr.coeff(pd))


def test_prolongation_with_lapse():
    X4 = X.with_context(LAPSE)
    pr = prolong(X4, 2)
    assert zero(pr.coeff(LAPSE.dot(N)) + LAPSE.dot(N))
    assert zero(pr.coeff(LAPSE.ddot(N)) + 2 * LAPSE.ddot(N))


def test_prolongation_is_linear():
    g = VectorField(CTX, {t: a * t**2, a: phi * a, phi: t + a})
    h = VectorField(CTX, {t: phi, a: t * a**2})
    lhs = prolong(3 * g + (-2) * h, 2)
    pg, ph = prolong(g, 2), prolong(h, 2)
    for v in (ad, pd, add, pdd):
        assert zero(lhs.coeff(v) - 3 * pg.coeff(v) + 2 * ph.coeff(v))


def test_vector_field_rejects_jet_coefficients():
    with pytest.raises(ValueError):
        VectorField(CTX, {t: ad})


def test_vector_field_rejects_foreign_variable():
    with pytest.raises(ContextMismatch):
        VectorField(CTX, {N: 1})


def test_mixing_contexts_raises():
    with pytest.raises(ContextMismatch):
        X + Y.with_context(LAPSE)


def _random_poly(rng, vars_, terms=4):
    e = 0
    for _ in range(terms):
        m = rng.randint(-3, 3)
        for v in vars_:
            m = m * v ** rng.randint(0, 2)
        e = e + m
    return normalize(e + 0 * t)


@pytest.mark.parametrize("seed", range(8))
def test_prolonged_action_commutes_with_total_derivative_up_to_dtau(seed):
    # pr g (D_t f) - D_t (pr g f) = -D_t(tau) D_t f for first-order f
    rng = random.Random(seed)
    g = VectorField(CTX, {t: _random_poly(rng, (t, a, phi), 2), a: _random_poly(rng, (t, a), 2),
                          phi: _random_poly(rng, (a, phi), 2)})
    f = _random_poly(rng, (t, a, phi, ad, pd), 4)
    pr = prolong(g, 2)
    lhs = apply(pr, total_derivative(f, CTX)) - total_derivative(apply(prolong(g, 1), f), CTX)
    assert zero(lhs + total_derivative(g.tau, CTX) * total_derivative(f, CTX))


def test_apply_matches_hand_computation():
    # X(a^2 phidot) = a^2 * eta_phi = -a^2 phidot
    assert zero(apply(prolong(X, 1), a**2 * pd) + a**2 * pd)
