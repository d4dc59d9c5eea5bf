"""Expression nodes and the exact rational normal form behind them.

Every ``Expr`` is an immutable tree.  Arithmetic on trees goes through the
normal form (:class:`Norm`): a Laurent polynomial over *atoms* (variables,
opaque function applications, logarithms) with optional ``exp`` factor per
monomial, divided by a product of polynomial factors.  Coefficients are
``fractions.Fraction`` throughout, so zero testing is a decision.
"""

from __future__ import annotations

import threading
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Union

Number = Union[int, Fraction]

_registry_lock = threading.Lock()
_registry: dict[str, "Var"] = {}
_order: dict[str, int] = {}


class Expr:
    """Base class of all expression nodes."""

    __slots__ = ("_hash", "_norm")

    def _key(self) -> tuple:
        raise NotImplementedError

    def _to_norm(self) -> "Norm":
        raise NotImplementedError

    def __eq__(self, other: object) -> bool:
        if self is other:
            return True
        return type(self) is type(other) and self._key() == other._key()  # type: ignore[attr-defined]

    def __ne__(self, other: object) -> bool:
        return not self.__eq__(other)

    def __hash__(self) -> int:
        try:
            return self._hash
        except AttributeError:
            h = hash((type(self).__name__, self._key()))
            self._hash = h
            return h

    @property
    def norm(self) -> "Norm":
        try:
            return self._norm
        except AttributeError:
            n = self._to_norm()
            self._norm = n
            return n

    # arithmetic always returns normalized trees
    def __add__(self, other):
        return from_norm(self.norm.add(as_expr(other).norm))

    def __radd__(self, other):
        return from_norm(as_expr(other).norm.add(self.norm))

    def __sub__(self, other):
        return from_norm(self.norm.add(as_expr(other).norm.neg()))

    def __rsub__(self, other):
        return from_norm(as_expr(other).norm.add(self.norm.neg()))

    def __mul__(self, other):
        return from_norm(self.norm.mul(as_expr(other).norm))

    def __rmul__(self, other):
        return from_norm(as_expr(other).norm.mul(self.norm))

    def __truediv__(self, other):
        return from_norm(self.norm.mul(as_expr(other).norm.inv()))

    def __rtruediv__(self, other):
        return from_norm(as_expr(other).norm.mul(self.norm.inv()))

    def __neg__(self):
        return from_norm(self.norm.neg())

    def __pos__(self):
        return self

    def __pow__(self, n: int):
        if not isinstance(n, int):
            raise TypeError("only integer powers are supported")
        return from_norm(self.norm.pow(n))

    def __str__(self) -> str:
        from .render import render

        return render(self)


class Const(Expr):
    __slots__ = ("value",)

    def __init__(self, value: Number):
        if isinstance(value, float):
            raise TypeError("floats are not exact; use Fraction or a decimal string")
        self.value = Fraction(value)

    def _key(self):
        return (self.value,)

    def _to_norm(self):
        return Norm.const(self.value)

    def __repr__(self):
        return str(self.value)


class Var(Expr):
    """A named variable; ``jet`` is ``(base, independent, order)`` for jet coordinates."""

    __slots__ = ("name", "jet", "skey")

    def __init__(self, name: str, jet: tuple[str, str, int] | None = None):
        with _registry_lock:
            prev = _registry.get(name)
            if prev is not None and prev.jet != jet:
                raise ValueError(f"variable {name!r} already registered with jet {prev.jet}")
            if name not in _order:
                _order[name] = len(_order)
            self.name = name
            self.jet = jet
            self.skey = (0, _order[name], name)
            if prev is None:
                _registry[name] = self

    def _key(self):
        return (self.name, self.jet)

    def _to_norm(self):
        return Norm({(((self, 1),), None): _ONE_F})

    def __repr__(self):
        return self.name


class Add(Expr):
    __slots__ = ("terms",)

    def __init__(self, terms: Iterable[Expr]):
        self.terms = tuple(terms)

    def _key(self):
        return self.terms

    def _to_norm(self):
        out = ZERO
        for t in self.terms:
            out = out.add(t.norm)
        return out

    def __repr__(self):
        return "Add(" + ", ".join(map(repr, self.terms)) + ")"


class Mul(Expr):
    __slots__ = ("factors",)

    def __init__(self, factors: Iterable[Expr]):
        self.factors = tuple(factors)

    def _key(self):
        return self.factors

    def _to_norm(self):
        out = ONE
        for f in self.factors:
            out = out.mul(f.norm)
        return out

    def __repr__(self):
        return "Mul(" + ", ".join(map(repr, self.factors)) + ")"


class Pow(Expr):
    __slots__ = ("base", "exponent")

    def __init__(self, base: Expr, exponent: int):
        if not isinstance(exponent, int):
            raise TypeError("exponent must be an integer")
        self.base = base
        self.exponent = exponent

    def _key(self):
        return (self.base, self.exponent)

    def _to_norm(self):
        return self.base.norm.pow(self.exponent)

    def __repr__(self):
        return f"Pow({self.base!r}, {self.exponent})"


class Exp(Expr):
    __slots__ = ("arg",)

    def __init__(self, arg: Expr):
        self.arg = arg

    def _key(self):
        return (self.arg,)

    def _to_norm(self):
        return _exp_norm(self.arg.norm)

    def __repr__(self):
        return f"exp({self.arg!r})"


class Log(Expr):
    __slots__ = ("arg", "skey")

    def __init__(self, arg: Expr):
        self.arg = arg
        self.skey = (2, 0, repr(arg))

    def _key(self):
        return (self.arg,)

    def _to_norm(self):
        n = self.arg.norm
        if n == ONE:
            return ZERO
        if not n.den and len(n.num) == 1:
            (atoms, e), c = next(iter(n.num.items()))
            if not atoms and e is not None and c == 1:
                return e
        canon = from_norm(n)
        atom = self if canon == self.arg else Log(canon)
        return Norm({(((atom, 1),), None): _ONE_F})

    def __repr__(self):
        return f"ln({self.arg!r})"


class Func(Expr):
    """Opaque function application with a formal partial-derivative multi-index.

    ``orders[i]`` counts derivatives with respect to argument slot ``i``, so
    mixed partials taken in any order land on the same node.
    """

    __slots__ = ("name", "args", "orders", "skey")

    def __init__(self, name: str, args: Iterable[Expr], orders: Iterable[int] | None = None):
        self.name = name
        self.args = tuple(args)
        self.orders = tuple(orders) if orders is not None else (0,) * len(self.args)
        if len(self.orders) != len(self.args):
            raise ValueError("orders must match the number of arguments")
        if any(o < 0 for o in self.orders):
            raise ValueError("derivative orders are non-negative")
        self.skey = (1, 0, repr(self))

    def _key(self):
        return (self.name, self.args, self.orders)

    def _to_norm(self):
        canon = tuple(from_norm(a.norm) for a in self.args)
        atom = self if canon == self.args else Func(self.name, canon, self.orders)
        return Norm({(((atom, 1),), None): _ONE_F})

    def derivative(self, slot: int, n: int = 1) -> "Func":
        orders = list(self.orders)
        orders[slot] += n
        return Func(self.name, self.args, orders)

    def __repr__(self):
        inner = ",".join(map(repr, self.args))
        if any(self.orders):
            return f"{self.name}{list(self.orders)}({inner})"
        return f"{self.name}({inner})"


class Lambda:
    """A symbolic function rule ``params -> body`` used to instantiate opaque functions."""

    __slots__ = ("params", "body")

    def __init__(self, params: Iterable[Var], body):
        self.params = tuple(params)
        self.body = as_expr(body)

    def __repr__(self):
        return f"Lambda({self.params!r}, {self.body!r})"


def as_expr(x) -> Expr:
    if isinstance(x, Expr):
        return x
    if isinstance(x, bool):
        raise TypeError("bool is not an expression")
    if isinstance(x, (int, Fraction)):
        return Const(x)
    raise TypeError(f"cannot convert {type(x).__name__} to an expression")


def lookup_var(name: str) -> Var | None:
    return _registry.get(name)


def symbol(name: str) -> Var:
    """Return the registered plain variable ``name``, creating it if needed."""
    v = _registry.get(name)
    return v if v is not None else Var(name)


def symbols(names: str) -> tuple[Var, ...]:
    return tuple(symbol(n) for n in names.replace(",", " ").split())


def jet_var(base: Var | str, independent: Var | str, order: int) -> Var:
    """The jet coordinate ``d^order base / d independent^order``."""
    b = base.name if isinstance(base, Var) else base
    i = independent.name if isinstance(independent, Var) else independent
    if order == 0:
        return symbol(b)
    name = f"{b}_{i * order}" if len(i) == 1 else f"{b}_{i}{order}"
    v = _registry.get(name)
    return v if v is not None else Var(name, (b, i, order))


# ---------------------------------------------------------------------------
# normal form

_ONE_F = Fraction(1)
EMPTY = ((), None)


class Poly:
    """Hashable polynomial used as a denominator factor."""

    __slots__ = ("terms", "_hash", "_key")

    def __init__(self, terms: dict):
        self.terms = terms

    def __eq__(self, other):
        return isinstance(other, Poly) and self.terms == other.terms

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            self._hash = hash(frozenset(self.terms.items()))
            return self._hash

    @property
    def key(self):
        try:
            return self._key
        except AttributeError:
            self._key = _terms_key(self.terms)
            return self._key


class Norm:
    """Canonical rational form ``num / prod(q ** m for q, m in den)``."""

    __slots__ = ("num", "den", "_hash", "_key", "_free", "_canon")

    def __init__(self, num: dict, den: tuple = ()):
        self.num = num
        self.den = den

    def canonical(self) -> "Norm":
        """Same value with the denominator factors merged into one content-free polynomial.

        Arithmetic keeps factors apart so cancellation can find them; identity
        (equality, hashing, trees) goes through this form so that the order in
        which factors were met does not matter.
        """
        try:
            return self._canon
        except AttributeError:
            pass
        if not self.den or (len(self.den) == 1 and self.den[0][1] == 1):
            c = self
        else:
            content, coeff, q = _split_content(_expand_den(dict(self.den)))
            num = _pmul(_pscale(self.num, 1 / coeff), {_mono_inv(content): _ONE_F})
            c = Norm(num) if q is None else Norm(num, ((q, 1),))
            c._canon = c
        self._canon = c
        return c

    @staticmethod
    def const(c: Number) -> "Norm":
        c = Fraction(c)
        return Norm({EMPTY: c}) if c else ZERO

    def __eq__(self, other):
        if not isinstance(other, Norm):
            return False
        a, b = self.canonical(), other.canonical()
        return a.num == b.num and a.den == b.den

    def __hash__(self):
        try:
            return self._hash
        except AttributeError:
            c = self.canonical()
            self._hash = hash((frozenset(c.num.items()), c.den))
            return self._hash

    @property
    def key(self):
        try:
            return self._key
        except AttributeError:
            c = self.canonical()
            self._key = (_terms_key(c.num), tuple((q.key, m) for q, m in c.den))
            return self._key

    @property
    def is_zero(self) -> bool:
        return not self.num

    def constant_value(self) -> Fraction | None:
        if self.den:
            return None
        if not self.num:
            return Fraction(0)
        if len(self.num) == 1 and EMPTY in self.num:
            return self.num[EMPTY]
        return None

    def free_vars(self) -> frozenset:
        try:
            return self._free
        except AttributeError:
            out = set()
            for m in self.num:
                out |= _mono_free(m)
            for q, _ in self.den:
                for m in q.terms:
                    out |= _mono_free(m)
            self._free = frozenset(out)
            return self._free

    def neg(self) -> "Norm":
        return Norm({m: -c for m, c in self.num.items()}, self.den) if self.num else self

    def scale(self, c: Number) -> "Norm":
        if not c:
            return ZERO
        return Norm(_pscale(self.num, Fraction(c)), self.den)

    def add(self, other: "Norm") -> "Norm":
        if not self.num:
            return other
        if not other.num:
            return self
        if self.den == other.den:
            s = _padd(self.num, other.num)
            return Norm(s, self.den) if s else ZERO
        d1, d2 = dict(self.den), dict(other.den)
        lcm = dict(d1)
        for q, m in d2.items():
            lcm[q] = max(lcm.get(q, 0), m)
        n1 = _pmul(self.num, _expand_den({q: m - d1.get(q, 0) for q, m in lcm.items()}))
        n2 = _pmul(other.num, _expand_den({q: m - d2.get(q, 0) for q, m in lcm.items()}))
        return _cancel(_padd(n1, n2), lcm)

    def mul(self, other: "Norm") -> "Norm":
        if not self.num or not other.num:
            return ZERO
        num = _pmul(self.num, other.num)
        if not self.den and not other.den:
            return Norm(num)
        den = dict(self.den)
        for q, m in other.den:
            den[q] = den.get(q, 0) + m
        return _cancel(num, den)

    def inv(self) -> "Norm":
        if not self.num:
            raise ZeroDivisionError("division by the zero expression")
        content, coeff, q = _split_content(self.num)
        num = _pscale(_expand_den(dict(self.den)), 1 / coeff)
        num = _pmul(num, {_mono_inv(content): _ONE_F})
        if q is None:
            return Norm(num) if num else ZERO
        return _cancel(num, {q: 1})

    def pow(self, n: int) -> "Norm":
        if n < 0:
            return self.inv().pow(-n)
        out, base = ONE, self
        while n:
            if n & 1:
                out = out.mul(base)
            n >>= 1
            if n:
                base = base.mul(base)
        return out


ZERO = Norm({})
ONE = Norm({EMPTY: _ONE_F})


def _terms_key(terms: dict) -> tuple:
    return tuple(sorted((mono_key(m), c) for m, c in terms.items()))


@lru_cache(maxsize=1 << 16)
def mono_key(m) -> tuple:
    """Sort key realising graded lexicographic order (leading monomial first)."""
    atoms, e = m
    deg = sum(p for _, p in atoms)
    return (-deg, tuple((a.skey, -p) for a, p in atoms), () if e is None else e.key)


def _mono_free(m) -> set:
    atoms, e = m
    out = set()
    for a, _ in atoms:
        out |= _atom_free(a)
    if e is not None:
        out |= e.free_vars()
    return out


@lru_cache(maxsize=1 << 14)
def _atom_free(a) -> frozenset:
    if isinstance(a, Var):
        return frozenset((a,))
    if isinstance(a, Func):
        out = frozenset()
        for arg in a.args:
            out |= arg.norm.free_vars()
        return out
    return a.arg.norm.free_vars()


@lru_cache(maxsize=1 << 16)
def _mono_mul(m1, m2):
    if m1 == EMPTY:
        return m2
    if m2 == EMPTY:
        return m1
    a1, e1 = m1
    a2, e2 = m2
    if not a1:
        atoms = a2
    elif not a2:
        atoms = a1
    else:
        d = dict(a1)
        for a, p in a2:
            s = d.get(a, 0) + p
            if s:
                d[a] = s
            else:
                del d[a]
        atoms = tuple(sorted(d.items(), key=lambda ap: ap[0].skey))
    if e1 is None:
        e = e2
    elif e2 is None:
        e = e1
    else:
        e = e1.add(e2)
        if not e.num:
            e = None
    return (atoms, e)


def _mono_inv(m):
    atoms, e = m
    return (tuple((a, -p) for a, p in atoms), None if e is None else e.neg())


def _padd(p: dict, q: dict) -> dict:
    if len(p) < len(q):
        p, q = q, p
    out = dict(p)
    for m, c in q.items():
        s = out.get(m, 0) + c
        if s:
            out[m] = s
        else:
            out.pop(m, None)
    return out


def _pscale(p: dict, c: Fraction) -> dict:
    return {m: v * c for m, v in p.items()}


def _pmul(p: dict, q: dict) -> dict:
    if len(q) == 1 and EMPTY in q:
        c = q[EMPTY]
        return p if c == 1 else _pscale(p, c)
    if len(p) == 1 and EMPTY in p:
        c = p[EMPTY]
        return q if c == 1 else _pscale(q, c)
    out: dict = {}
    for m1, c1 in p.items():
        for m2, c2 in q.items():
            m = _mono_mul(m1, m2)
            s = out.get(m, 0) + c1 * c2
            if s:
                out[m] = s
            else:
                out.pop(m, None)
    return out


def _expand_den(den: dict) -> dict:
    out = {EMPTY: _ONE_F}
    for q, m in den.items():
        for _ in range(m):
            out = _pmul(out, q.terms)
    return out


def _split_content(num: dict):
    """Write ``num = coeff * content * q`` with ``q`` a normalized factor (or None)."""
    if len(num) == 1:
        (m, c), = num.items()
        return m, c, None
    mins: dict = {}
    seen: dict = {}
    for atoms, _ in num:
        for a, p in atoms:
            seen[a] = seen.get(a, 0) + 1
            mins[a] = min(mins.get(a, p), p)
    for a, cnt in seen.items():
        if cnt < len(num):
            mins[a] = min(mins[a], 0)
    content_atoms = tuple(sorted(((a, p) for a, p in mins.items() if p), key=lambda ap: ap[0].skey))
    lead = min(num, key=mono_key)
    content = (content_atoms, lead[1])
    inv = _mono_inv(content)
    coeff = num[lead]
    q = {_mono_mul(m, inv): c / coeff for m, c in num.items()}
    return content, coeff, Poly(q)


def _cancel(num: dict, den: dict) -> "Norm":
    if not num:
        return ZERO
    for q in list(den):
        m = den[q]
        while m:
            quo = _exact_div(num, q)
            if quo is None:
                break
            num = quo
            m -= 1
        if m:
            den[q] = m
        else:
            del den[q]
    items = tuple(sorted(((q, m) for q, m in den.items()), key=lambda qm: qm[0].key))
    return Norm(num, items)


def _exact_div(num: dict, q: Poly, limit: int = 20000):
    terms = q.terms
    qlead = min(terms, key=mono_key)
    qc = terms[qlead]
    parts = set()
    qmax: dict = {}
    for atoms, _ in terms:
        if atoms in parts:
            return None
        parts.add(atoms)
        for a, p in atoms:
            qmax[a] = max(qmax.get(a, 0), p)
    lo: dict = {}
    hi: dict = {}
    for atoms, _ in num:
        for a, p in atoms:
            lo[a] = min(lo.get(a, 0), p)
            hi[a] = max(hi.get(a, 0), p)
    r = dict(num)
    quot: dict = {}
    inv_lead = _mono_inv(qlead)
    for _ in range(limit):
        if not r:
            return quot
        lt = min(r, key=mono_key)
        t = _mono_mul(lt, inv_lead)
        for a, p in t[0]:
            if p < lo.get(a, 0) or p > hi.get(a, 0) - qmax.get(a, 0):
                return None
        for a, qm in qmax.items():
            if a not in dict(t[0]) and hi.get(a, 0) - qm < 0:
                return None
        c = r[lt] / qc
        quot[t] = quot.get(t, 0) + c
        for m, v in terms.items():
            mm = _mono_mul(t, m)
            s = r.get(mm, 0) - c * v
            if s:
                r[mm] = s
            else:
                r.pop(mm, None)
    return None


def _exp_norm(n: Norm) -> Norm:
    if not n.num:
        return ONE
    # exp(c*ln(u) + rest) -> u**c * exp(rest) for integer c
    out = ONE
    if not n.den:
        rest = {}
        for m, c in n.num.items():
            atoms, e = m
            if (len(atoms) == 1 and e is None and atoms[0][1] == 1
                    and isinstance(atoms[0][0], Log) and c.denominator == 1):
                out = out.mul(atoms[0][0].arg.norm.pow(int(c)))
            else:
                rest[m] = c
        if len(rest) != len(n.num):
            n = Norm(rest)
            if not n.num:
                return out
    return out.mul(Norm({((), n): _ONE_F}))


def from_norm(n: Norm) -> Expr:
    """Build the canonical tree of a normal form (the tree caches ``n``)."""
    cached, n = n, n.canonical()
    items = sorted(n.num.items(), key=lambda mc: mono_key(mc[0]))
    terms = [_term_tree(m, c) for m, c in items]
    if not terms:
        num: Expr = Const(0)
    elif len(terms) == 1:
        num = terms[0]
    else:
        num = Add(terms)
    if n.den:
        dens = [Pow(_poly_tree(q), -m) for q, m in n.den]
        if isinstance(num, Mul):
            tree: Expr = Mul(num.factors + tuple(dens))
        elif num == Const(1):
            tree = dens[0] if len(dens) == 1 else Mul(dens)
        else:
            tree = Mul([num] + dens)
    else:
        tree = num
    tree._norm = cached
    return tree


def _poly_tree(q: Poly) -> Expr:
    return from_norm(Norm(q.terms))


def _term_tree(m, c: Fraction) -> Expr:
    atoms, e = m
    factors: list[Expr] = []
    for a, p in atoms:
        factors.append(a if p == 1 else Pow(a, p))
    if e is not None:
        factors.append(Exp(from_norm(e)))
    if not factors:
        return Const(c)
    if c != 1:
        factors.insert(0, Const(c))
    if len(factors) == 1:
        return factors[0]
    return Mul(factors)


def normalize(e: Expr) -> Expr:
    """Canonical tree: expanded sum of products over graded-lex order."""
    return from_norm(as_expr(e).norm)


# ---------------------------------------------------------------------------
# differentiation


def _mono_norm(m, c) -> Norm:
    return Norm({m: c})


@lru_cache(maxsize=1 << 15)
def diff_norm(n: Norm, v: Var) -> Norm:
    if v not in n.free_vars():
        return ZERO
    out = ZERO
    for m, c in n.num.items():
        atoms, e = m
        for i, (a, p) in enumerate(atoms):
            da = _diff_atom(a, v)
            if not da.num:
                continue
            rest = list(atoms)
            if p == 1:
                del rest[i]
            else:
                rest[i] = (a, p - 1)
            out = out.add(Norm({(tuple(rest), e): c * p}).mul(da))
        if e is not None:
            de = diff_norm(e, v)
            if de.num:
                out = out.add(Norm({m: c}).mul(de))
    if n.den:
        num_over_den = Norm(n.num, n.den)
        out = out.mul(Norm({EMPTY: _ONE_F}, n.den))
        log_deriv = ZERO
        for q, mult in n.den:
            qn = Norm(q.terms)
            dq = diff_norm(qn, v)
            if dq.num:
                log_deriv = log_deriv.add(dq.mul(qn.inv()).scale(mult))
        out = out.add(num_over_den.mul(log_deriv).neg())
    return out


def _diff_atom(a, v: Var) -> Norm:
    if isinstance(a, Var):
        return ONE if a == v else ZERO
    if isinstance(a, Func):
        out = ZERO
        for i, arg in enumerate(a.args):
            d = diff_norm(arg.norm, v)
            if d.num:
                out = out.add(a.derivative(i).norm.mul(d))
        return out
    # Log
    u = a.arg.norm
    du = diff_norm(u, v)
    return du.mul(u.inv()) if du.num else ZERO
