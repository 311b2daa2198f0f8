"""Scalar and matrix symbols with order metadata.

A scalar symbol is a pure function ``a(x, xi) -> complex`` together with its
order ``mu`` and the roughness parameter ``delta`` in ``[0, 1)``.  Matrix
symbols are square arrays of scalar symbols whose entry ``(i, j)`` has order
``l[i] + m[j]`` for order vectors ``l`` and ``m``; the diagonal orders
``r[i] = l[i] + m[i]`` are required to be strictly decreasing and
nonnegative (ties can be admitted explicitly, but the certification
machinery assumes strict ordering).

This module provides

* :class:`ScalarSymbol` and :class:`DNSystem` containers,
* exact derivative evaluators for the built-in families (japanese-bracket
  powers, trigonometric modulations, radial powers) with a central
  finite-difference fallback for everything else,
* sampled seminorm estimation,
* truncated Leibniz composition of two symbols.

Derivative convention: ``derivative(alpha, beta, x, xi)`` returns the plain
partial derivative ``d_xi^alpha d_x^beta a``; factors of ``-1j`` coming from
``D = -1j * d`` are applied by callers where the composition formulas need
them.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import CapabilityError, EvaluationError, InputError, NumericalError

__all__ = [
    "ScalarSymbol",
    "DNSystem",
    "SeminormEstimate",
    "SampleGrid",
    "bracket",
    "smoothstep_excision",
    "multi_indices",
    "multi_indices_upto",
    "mi_factorial",
    "eval_matrix",
    "eval_symbol_batch",
    "estimate_seminorm",
    "leibniz_compose_truncated",
    "bracket_power_symbol",
    "trig_bracket_symbol",
    "radial_power_symbol",
    "zero_symbol",
    "constant_symbol",
    "symbol_product",
    "symbol_shift",
    "diagonal_system",
    "matrix_system",
    "shift_system",
    "random_constant_system",
    "symbol_from_descriptor",
]

_DEFAULT_FD_STEP_X = 1e-4
_DEFAULT_FD_STEP_XI_REL = 1e-4
_DEFAULT_FD_BUDGET = 4


def bracket(xi) -> np.ndarray | float:
    """Japanese bracket ``<xi> = (1 + |xi|^2)^(1/2)``.

    Accepts a single point of shape ``(n,)`` or a batch of shape ``(P, n)``.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.ndim <= 1:
        return float(np.sqrt(1.0 + np.sum(xi * xi)))
    return np.sqrt(1.0 + np.sum(xi * xi, axis=-1))


def smoothstep_excision(t, lo: float = 1.0, hi: float = 2.0):
    """Quintic smoothstep ramp: 0 for ``t <= lo``, 1 for ``t >= hi``, C^2 join."""
    if hi <= lo:
        raise InputError("excision ramp needs hi > lo")
    u = np.clip((np.asarray(t, dtype=float) - lo) / (hi - lo), 0.0, 1.0)
    out = u * u * u * (10.0 + u * (-15.0 + 6.0 * u))
    return out if out.ndim else float(out)


def smoothstep_excision_d1(t, lo: float = 1.0, hi: float = 2.0):
    """First derivative of :func:`smoothstep_excision` with respect to ``t``."""
    t = np.asarray(t, dtype=float)
    u = (t - lo) / (hi - lo)
    inside = (u > 0.0) & (u < 1.0)
    u = np.clip(u, 0.0, 1.0)
    out = np.where(inside, 30.0 * u * u * (u - 1.0) * (u - 1.0) / (hi - lo), 0.0)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# multi-index helpers
# ---------------------------------------------------------------------------

def multi_indices(n: int, total: int) -> list[tuple[int, ...]]:
    """All multi-indices of length ``n`` with ``|alpha| == total``."""
    if n == 1:
        return [(total,)]
    out = []
    for first in range(total, -1, -1):
        for rest in multi_indices(n - 1, total - first):
            out.append((first,) + rest)
    return out


def multi_indices_upto(n: int, below: int) -> list[tuple[int, ...]]:
    """All multi-indices of length ``n`` with ``|alpha| < below``."""
    out = []
    for k in range(below):
        out.extend(multi_indices(n, k))
    return out


def mi_factorial(alpha: Sequence[int]) -> float:
    return float(math.prod(math.factorial(a) for a in alpha))


def _mi_add(a, b):
    return tuple(x + y for x, y in zip(a, b))


def _mi_leq(a, b):
    return all(x <= y for x, y in zip(a, b))


def _mi_sub(a, b):
    return tuple(x - y for x, y in zip(a, b))


def _mi_binom(a, b):
    return float(math.prod(math.comb(x, y) for x, y in zip(a, b)))


def _unit(n, axis):
    return tuple(1 if i == axis else 0 for i in range(n))


# ---------------------------------------------------------------------------
# scalar symbols
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ScalarSymbol:
    """A scalar symbol ``a(x, xi)`` with order and roughness metadata.

    Parameters
    ----------
    evaluator
        Pure function ``(x, xi) -> complex`` with ``x`` and ``xi`` arrays of
        shape ``(n,)``.  Evaluators written with numpy operations may also
        accept batches of shape ``(P, n)`` and return ``(P,)``; batched use
        is probed by :func:`eval_symbol_batch` and falls back to a loop.
    order
        The growth order ``mu``: ``|a| <~ <xi>^mu``.
    delta
        Roughness parameter in ``[0, 1)``; each x-derivative may cost an
        extra factor ``<xi>^delta``.
    derivative_evaluator
        Optional exact partial-derivative evaluator
        ``(alpha, beta, x, xi) -> complex``.  Its ``(0, 0)`` entry must agree
        with ``evaluator``.  When absent, central finite differences are used
        up to ``fd_budget`` total derivative orders.
    constant_coefficient
        True when the evaluator does not depend on ``x``; enables exact
        short-circuits (vanishing x-derivatives, pointwise compositions).
    """

    evaluator: Callable
    order: float
    delta: float = 0.0
    derivative_evaluator: Optional[Callable] = None
    constant_coefficient: bool = False
    name: str = ""
    fd_step_x: float = _DEFAULT_FD_STEP_X
    fd_step_xi_rel: float = _DEFAULT_FD_STEP_XI_REL
    fd_budget: int = _DEFAULT_FD_BUDGET

    def __post_init__(self):
        if not (0.0 <= self.delta < 1.0):
            raise InputError(f"delta must lie in [0, 1), got {self.delta}")

    def __call__(self, x, xi) -> complex:
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        val = complex(self.evaluator(x, xi))
        if not np.isfinite(val.real) or not np.isfinite(val.imag):
            raise EvaluationError(
                f"symbol {self.name or '<anonymous>'} returned a non-finite "
                f"value at x={x.tolist()}, xi={xi.tolist()}", x=x, xi=xi)
        return val

    def derivative(self, alpha, beta, x, xi) -> complex:
        """Partial derivative ``d_xi^alpha d_x^beta a`` at one point."""
        alpha = tuple(int(a) for a in alpha)
        beta = tuple(int(b) for b in beta)
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        if len(alpha) != xi.shape[-1] or len(beta) != x.shape[-1]:
            raise InputError("multi-index length does not match point dimension")
        if sum(alpha) == 0 and sum(beta) == 0:
            return self(x, xi)
        if self.constant_coefficient and sum(beta) > 0:
            return 0.0 + 0.0j
        if self.derivative_evaluator is not None:
            return complex(self.derivative_evaluator(alpha, beta, x, xi))
        return self._fd_derivative(alpha, beta, x, xi)

    def _fd_derivative(self, alpha, beta, x, xi) -> complex:
        total = sum(alpha) + sum(beta)
        if total > self.fd_budget:
            raise CapabilityError(
                f"symbol {self.name or '<anonymous>'} has no analytic "
                f"derivatives and |alpha|+|beta|={total} exceeds the "
                f"finite-difference budget {self.fd_budget}")
        n = len(xi)
        h_xi = self.fd_step_xi_rel * bracket(xi)
        h_x = self.fd_step_x
        if not np.isfinite(h_xi) or h_xi <= 0.0 or h_x <= 0.0:
            raise NumericalError("finite-difference step underflow")

        def rec(a, b, xv, xiv):
            for j in range(n):
                if a[j] > 0:
                    am = list(a)
                    am[j] -= 1
                    e = np.zeros(n)
                    e[j] = h_xi
                    return (rec(tuple(am), b, xv, xiv + e)
                            - rec(tuple(am), b, xv, xiv - e)) / (2.0 * h_xi)
            for j in range(len(b)):
                if b[j] > 0:
                    bm = list(b)
                    bm[j] -= 1
                    e = np.zeros(len(b))
                    e[j] = h_x
                    return (rec(a, tuple(bm), xv + e, xiv)
                            - rec(a, tuple(bm), xv - e, xiv)) / (2.0 * h_x)
            return self(xv, xiv)

        return complex(rec(alpha, beta, x, xi))


def eval_symbol_batch(sym: ScalarSymbol, X: np.ndarray, XI: np.ndarray) -> np.ndarray:
    """Evaluate a symbol on stacked points ``X, XI`` of shape ``(P, n)``.

    Uses the evaluator's native broadcasting when it supports batches and
    falls back to a python loop otherwise.
    """
    X = np.asarray(X, dtype=float)
    XI = np.asarray(XI, dtype=float)
    try:
        out = np.asarray(sym.evaluator(X, XI), dtype=complex)
        if out.shape == (X.shape[0],):
            if not np.all(np.isfinite(out)):
                bad = int(np.flatnonzero(~np.isfinite(out))[0])
                raise EvaluationError(
                    f"symbol {sym.name or '<anonymous>'} returned a "
                    f"non-finite value at x={X[bad].tolist()}, "
                    f"xi={XI[bad].tolist()}", x=X[bad], xi=XI[bad])
            return out
    except EvaluationError:
        raise
    except Exception:
        pass
    return np.array([sym(X[i], XI[i]) for i in range(X.shape[0])], dtype=complex)


# ---------------------------------------------------------------------------
# built-in families with exact derivatives
# ---------------------------------------------------------------------------
#
# Families are represented internally as finite sums
#     sum_k  c_k * xi^p_k * w(xi)^e_k,      w = <xi>  or  w = |xi|,
# optionally multiplied by a trigonometric x-factor.  Differentiation maps a
# term list to a term list, so every derivative order stays exact.

def _terms_eval(terms, xi, radial: bool):
    xi = np.asarray(xi, dtype=float)
    batch = xi.ndim == 2
    if radial:
        w = np.sqrt(np.sum(xi * xi, axis=-1))
    else:
        w = bracket(xi)
        w = np.asarray(w) if batch else w
    total = np.zeros(xi.shape[0] if batch else (), dtype=complex)
    for c, powers, wexp in terms:
        mono = np.ones_like(total, dtype=complex)
        for axis, p in enumerate(powers):
            if p:
                mono = mono * (xi[..., axis] ** p)
        if radial:
            if batch:
                wfac = np.where(w > 0.0, w, 1.0) ** wexp
                wfac = np.where(w > 0.0, wfac, 0.0 if wexp > 0 else (1.0 if wexp == 0 else np.inf))
            else:
                if w > 0.0:
                    wfac = w ** wexp
                else:
                    # positive exponents extend by their limit value 0
                    wfac = 0.0 if wexp > 0 else (1.0 if wexp == 0 else np.inf)
        else:
            wfac = w ** wexp
        total = total + c * mono * wfac
    return total


def _terms_diff(terms, axis: int, n: int, radial: bool):
    # d/dxi_j [ c xi^p w^e ] = c p_j xi^(p-e_j) w^e + c e xi^(p+e_j) w^(e-2)
    # for both w = <xi> (d w^e = e xi_j w^(e-2)) and w = |xi|.
    out = {}

    def add(c, powers, wexp):
        key = (powers, wexp)
        out[key] = out.get(key, 0.0 + 0.0j) + c

    for c, powers, wexp in terms:
        p = powers[axis]
        if p:
            pm = list(powers)
            pm[axis] -= 1
            add(c * p, tuple(pm), wexp)
        if wexp:
            pp = list(powers)
            pp[axis] += 1
            add(c * wexp, tuple(pp), wexp - 2.0)
    return [(c, powers, wexp) for (powers, wexp), c in out.items() if c != 0.0]


def _bracket_family_symbol(terms0, order, delta, n, name,
                           x_factor=None, x_factor_order=0):
    """Build a ScalarSymbol from bracket/radial term lists.

    ``x_factor`` is an optional pair ``(eval(x), deriv(k, x))`` of callables
    for a separable smooth x-dependence; derivative orders are per-axis
    totals on the configured axis only.
    """
    radial = False
    cache = {(0,) * n: terms0}

    def terms_for(alpha):
        key = tuple(alpha)
        if key not in cache:
            prev = None
            for axis in range(n):
                if alpha[axis] > 0:
                    am = list(alpha)
                    am[axis] -= 1
                    prev = terms_for(tuple(am))
                    cache[key] = _terms_diff(prev, axis, n, radial)
                    break
        return cache[key]

    if x_factor is None:
        def evaluator(x, xi):
            return _terms_eval(terms0, xi, radial)

        def deriv(alpha, beta, x, xi):
            if sum(beta) > 0:
                return 0.0 + 0.0j
            return complex(_terms_eval(terms_for(alpha), xi, radial))

        return ScalarSymbol(evaluator, order, delta,
                            derivative_evaluator=deriv,
                            constant_coefficient=True, name=name)

    x_eval, x_deriv = x_factor

    def evaluator(x, xi):
        return x_eval(x) * _terms_eval(terms0, xi, radial)

    def deriv(alpha, beta, x, xi):
        return complex(x_deriv(beta, x) * _terms_eval(terms_for(alpha), xi, radial))

    return ScalarSymbol(evaluator, order, delta,
                        derivative_evaluator=deriv,
                        constant_coefficient=False, name=name)


def bracket_power_symbol(mu: float, coef: complex = 1.0, n: int = 1,
                         delta: float = 0.0, name: str = "") -> ScalarSymbol:
    """Constant-coefficient symbol ``coef * <xi>^mu`` with exact derivatives."""
    terms0 = [(complex(coef), (0,) * n, float(mu))]
    return _bracket_family_symbol(terms0, float(mu), delta, n,
                                  name or f"{coef}*<xi>^{mu}")


def trig_bracket_symbol(mu: float, offset: float = 2.0, amplitude: float = 1.0,
                        axis: int = 0, phase: float = 0.0, n: int = 1,
                        delta: float = 0.0, name: str = "") -> ScalarSymbol:
    """Variable symbol ``(offset + amplitude*sin(x[axis]+phase)) * <xi>^mu``."""

    def x_eval(x):
        return offset + amplitude * np.sin(np.asarray(x)[..., axis] + phase)

    def x_deriv(beta, x):
        k = sum(beta)
        if k == 0:
            return x_eval(x)
        if any(b and j != axis for j, b in enumerate(beta)):
            return 0.0
        return amplitude * np.sin(np.asarray(x)[..., axis] + phase + k * np.pi / 2.0)

    terms0 = [(1.0 + 0.0j, (0,) * n, float(mu))]
    sym = _bracket_family_symbol(terms0, float(mu), delta, n,
                                 name or f"trig*<xi>^{mu}",
                                 x_factor=(x_eval, x_deriv))
    return sym


def radial_power_symbol(p: float, coef: complex = 1.0, n: int = 1,
                        delta: float = 0.0, excised: bool = False,
                        ramp: tuple[float, float] = (1.0, 2.0),
                        order: Optional[float] = None,
                        name: str = "") -> ScalarSymbol:
    """Symbol ``coef * |xi|^p`` (optionally excised near 0 by a smoothstep).

    The un-excised version extends by the limit value 0 at ``xi = 0`` for
    positive exponents.  Higher xi-derivatives of the excised version fall
    back to finite differences (the ramp is C^2, which covers every use in
    the shipped probes).
    """
    if p < 0:
        raise InputError("radial powers require p >= 0 at xi = 0")
    lo, hi = ramp

    def evaluator(x, xi):
        xi = np.asarray(xi, dtype=float)
        s = np.sqrt(np.sum(xi * xi, axis=-1))
        base = np.where(s > 0.0, np.where(s > 0, s, 1.0) ** p, 0.0 if p > 0 else 1.0)
        if excised:
            base = base * smoothstep_excision(s, lo, hi)
        return coef * base

    return ScalarSymbol(evaluator, float(order if order is not None else p),
                        delta, constant_coefficient=True,
                        name=name or f"{coef}*|xi|^{p}" + ("*chi" if excised else ""))


def zero_symbol(order: float, n: int = 1, delta: float = 0.0) -> ScalarSymbol:
    return ScalarSymbol(lambda x, xi: np.zeros(np.asarray(xi).shape[:-1], dtype=complex)
                        if np.asarray(xi).ndim == 2 else 0.0 + 0.0j,
                        float(order), delta,
                        derivative_evaluator=lambda a, b, x, xi: 0.0 + 0.0j,
                        constant_coefficient=True, name="0")


def constant_symbol(value: complex, order: float = 0.0, n: int = 1,
                    delta: float = 0.0, name: str = "") -> ScalarSymbol:
    value = complex(value)

    def deriv(alpha, beta, x, xi):
        return value if (sum(alpha) == 0 and sum(beta) == 0) else 0.0 + 0.0j

    return ScalarSymbol(lambda x, xi: value * np.ones(np.asarray(xi).shape[:-1], dtype=complex)
                        if np.asarray(xi).ndim == 2 else value,
                        float(order), delta, derivative_evaluator=deriv,
                        constant_coefficient=True, name=name or f"const({value})")


def symbol_product(s1: ScalarSymbol, s2: ScalarSymbol, name: str = "") -> ScalarSymbol:
    """Pointwise product symbol with Leibniz-rule derivatives."""
    if abs(s1.delta - s2.delta) > 1e-12:
        raise InputError("symbol product requires matching delta")

    def evaluator(x, xi):
        return s1.evaluator(x, xi) * s2.evaluator(x, xi)

    def deriv(alpha, beta, x, xi):
        total = 0.0 + 0.0j
        for a1 in itertools.product(*(range(a + 1) for a in alpha)):
            for b1 in itertools.product(*(range(b + 1) for b in beta)):
                c = _mi_binom(alpha, a1) * _mi_binom(beta, b1)
                total += (c * s1.derivative(a1, b1, x, xi)
                          * s2.derivative(_mi_sub(alpha, a1), _mi_sub(beta, b1), x, xi))
        return total

    return ScalarSymbol(evaluator, s1.order + s2.order, s1.delta,
                        derivative_evaluator=deriv,
                        constant_coefficient=s1.constant_coefficient and s2.constant_coefficient,
                        name=name or f"({s1.name})*({s2.name})")


def symbol_shift(sym: ScalarSymbol, alpha: complex, name: str = "") -> ScalarSymbol:
    """Symbol ``a + alpha`` (spectral shift of a diagonal entry)."""
    alpha = complex(alpha)

    def evaluator(x, xi):
        return sym.evaluator(x, xi) + alpha

    if sym.derivative_evaluator is not None:
        def deriv(a, b, x, xi):
            base = sym.derivative_evaluator(a, b, x, xi)
            if sum(a) == 0 and sum(b) == 0:
                return base + alpha
            return base
    else:
        deriv = None

    return ScalarSymbol(evaluator, sym.order, sym.delta,
                        derivative_evaluator=deriv,
                        constant_coefficient=sym.constant_coefficient,
                        name=name or f"({sym.name})+{alpha}",
                        fd_step_x=sym.fd_step_x,
                        fd_step_xi_rel=sym.fd_step_xi_rel,
                        fd_budget=sym.fd_budget)


# ---------------------------------------------------------------------------
# Douglis-Nirenberg systems
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DNSystem:
    """A square matrix of scalar symbols with order vectors ``l`` and ``m``.

    Entry ``(i, j)`` must have order ``l[i] + m[j]``; the diagonal orders
    ``r[i] = l[i] + m[i]`` must satisfy ``r[0] > r[1] > ... > r[q-1] >= 0``
    unless ``allow_tied_orders`` is set (then only non-increasing,
    nonnegative is required and downstream certification is the caller's
    responsibility).
    """

    entries: tuple
    l: tuple
    m: tuple
    delta: float = 0.0
    allow_tied_orders: bool = False
    dim: Optional[int] = None
    name: str = ""

    def __post_init__(self):
        q = len(self.l)
        object.__setattr__(self, "l", tuple(float(v) for v in self.l))
        object.__setattr__(self, "m", tuple(float(v) for v in self.m))
        object.__setattr__(self, "entries",
                           tuple(tuple(row) for row in self.entries))
        if len(self.m) != q or len(self.entries) != q or any(len(row) != q for row in self.entries):
            raise InputError("system shape mismatch between entries and order vectors")
        r = self.r
        if any(ri < -1e-12 for ri in r):
            raise InputError("diagonal orders must be nonnegative")
        strict = all(r[i] > r[i + 1] + 1e-12 for i in range(q - 1))
        if not strict:
            if not self.allow_tied_orders:
                raise InputError(
                    "orders not strictly decreasing: r = "
                    + repr([round(ri, 12) for ri in r]))
            if any(r[i] < r[i + 1] - 1e-12 for i in range(q - 1)):
                raise InputError("diagonal orders must be non-increasing")
        for i in range(q):
            for j in range(q):
                want = self.l[i] + self.m[j]
                got = self.entries[i][j].order
                if abs(want - got) > 1e-8:
                    raise InputError(
                        f"entry ({i},{j}) has order {got}, expected l[{i}]+m[{j}]={want}")
                if abs(self.entries[i][j].delta - self.delta) > 1e-12:
                    raise InputError(f"entry ({i},{j}) does not share the system delta")

    @property
    def q(self) -> int:
        return len(self.l)

    @property
    def r(self) -> tuple:
        return tuple(li + mi for li, mi in zip(self.l, self.m))

    @property
    def constant_coefficient(self) -> bool:
        return all(s.constant_coefficient for row in self.entries for s in row)

    def eval(self, x, xi) -> np.ndarray:
        return eval_matrix(self, x, xi)

    def eval_batch(self, X, XI) -> np.ndarray:
        """Evaluate on stacked points; returns ``(P, q, q)``."""
        P = np.asarray(X).shape[0]
        out = np.empty((P, self.q, self.q), dtype=complex)
        for i in range(self.q):
            for j in range(self.q):
                out[:, i, j] = eval_symbol_batch(self.entries[i][j], X, XI)
        return out

    def derivative_matrix(self, alpha, beta, x, xi) -> np.ndarray:
        out = np.empty((self.q, self.q), dtype=complex)
        for i in range(self.q):
            for j in range(self.q):
                out[i, j] = self.entries[i][j].derivative(alpha, beta, x, xi)
        return out


def eval_matrix(sys: DNSystem, x, xi) -> np.ndarray:
    """Pointwise evaluation ``A(x, xi)`` as a dense ``(q, q)`` array."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if x.shape != xi.shape:
        raise InputError(f"x has shape {x.shape} but xi has shape {xi.shape}")
    if sys.dim is not None and x.shape[-1] != sys.dim:
        raise InputError(f"point dimension {x.shape[-1]} != system dimension {sys.dim}")
    out = np.empty((sys.q, sys.q), dtype=complex)
    for i in range(sys.q):
        for j in range(sys.q):
            out[i, j] = sys.entries[i][j](x, xi)
    return out


def diagonal_system(symbols: Sequence[ScalarSymbol], l: Optional[Sequence[float]] = None,
                    m: Optional[Sequence[float]] = None, delta: float = 0.0,
                    dim: Optional[int] = None, allow_tied_orders: bool = False) -> DNSystem:
    """Diagonal system from scalar symbols; off-diagonal entries are zero.

    By default the orders split as ``l = 0``, ``m[i] = order(symbols[i])``.
    """
    q = len(symbols)
    if l is None:
        l = [0.0] * q
    if m is None:
        m = [s.order for s in symbols]
    entries = [[symbols[i] if i == j else zero_symbol(l[i] + m[j], delta=delta)
                for j in range(q)] for i in range(q)]
    return DNSystem(entries, tuple(l), tuple(m), delta=delta, dim=dim,
                    allow_tied_orders=allow_tied_orders)


def matrix_system(entries, l, m, delta: float = 0.0, dim: Optional[int] = None,
                  allow_tied_orders: bool = False, name: str = "") -> DNSystem:
    return DNSystem(tuple(tuple(row) for row in entries), tuple(l), tuple(m),
                    delta=delta, dim=dim, allow_tied_orders=allow_tied_orders,
                    name=name)


def shift_system(sys: DNSystem, alpha: complex) -> DNSystem:
    """The shifted system ``A + alpha`` (adds ``alpha`` to each diagonal entry)."""
    if alpha == 0:
        return sys
    rows = []
    for i in range(sys.q):
        row = []
        for j in range(sys.q):
            row.append(symbol_shift(sys.entries[i][j], alpha) if i == j
                       else sys.entries[i][j])
        rows.append(tuple(row))
    return replace(sys, entries=tuple(rows),
                   name=(sys.name + f"+{alpha}") if sys.name else "")


def random_constant_system(rng: np.random.Generator, q: Optional[int] = None,
                           n: int = 1, delta: float = 0.0,
                           coupling: float = 0.25,
                           min_gap: float = 0.75) -> DNSystem:
    """Seeded random constant-coefficient system for the test families.

    Diagonal entries are ``rho_i * exp(1j*phi_i) * <xi>^{r_i}`` with random
    modulus and phase, so the family contains both certifiable and
    non-certifiable draws for any fixed sector.  Off-diagonal entries are
    complex-Gaussian multiples of ``<xi>^{l_i+m_j}`` at relative size
    ``coupling``.
    """
    if q is None:
        q = int(rng.integers(2, 4))
    r = np.sort(rng.uniform(0.5, 4.0, size=q))[::-1]
    for i in range(q - 1):
        if r[i] - r[i + 1] < min_gap:
            r[i + 1:] -= (min_gap - (r[i] - r[i + 1]))
    r = np.maximum(r - min(0.0, r.min()), 0.0)
    u = rng.uniform(0.2, 0.8, size=q)
    l = tuple(float(v) for v in u * r)
    m = tuple(float(v) for v in r - u * r)
    rows = []
    for i in range(q):
        row = []
        for j in range(q):
            mu = l[i] + m[j]
            if i == j:
                rho = rng.uniform(0.5, 2.0)
                phi = rng.uniform(-np.pi, np.pi)
                c = rho * np.exp(1j * phi)
            else:
                c = coupling * (rng.standard_normal() + 1j * rng.standard_normal()) / np.sqrt(2)
            row.append(bracket_power_symbol(mu, coef=c, n=n, delta=delta))
        rows.append(tuple(row))
    return DNSystem(tuple(rows), l, m, delta=delta, dim=n)


# ---------------------------------------------------------------------------
# sampling grids and seminorms
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SampleGrid:
    """Sampling descriptor: stacked x-points and xi-points of shape ``(P, n)``."""

    x_points: np.ndarray
    xi_points: np.ndarray
    description: str = ""

    def __post_init__(self):
        object.__setattr__(self, "x_points", np.atleast_2d(np.asarray(self.x_points, dtype=float)))
        object.__setattr__(self, "xi_points", np.atleast_2d(np.asarray(self.xi_points, dtype=float)))
        if self.x_points.size == 0 or self.xi_points.size == 0:
            raise InputError("empty sample grid")

    @property
    def n(self) -> int:
        return self.xi_points.shape[1]

    @staticmethod
    def default(n: int = 1, xi_exp_min: int = -2, xi_exp_max: int = 12,
                directions: int = 8, x_per_axis: int = 16,
                period: float = 2.0 * np.pi, include_zero: bool = True) -> "SampleGrid":
        """Dyadic xi shells with fixed directions and a uniform x-torus grid."""
        radii = 2.0 ** np.arange(xi_exp_min, xi_exp_max + 1)
        if n == 1:
            dirs = np.array([[1.0], [-1.0]])
        elif n == 2:
            angles = 2.0 * np.pi * np.arange(directions) / directions
            dirs = np.stack([np.cos(angles), np.sin(angles)], axis=1)
        else:
            raise InputError("default grids support n in {1, 2}")
        xi = (radii[:, None, None] * dirs[None, :, :]).reshape(-1, n)
        if include_zero:
            xi = np.vstack([np.zeros((1, n)), xi])
        axes = [period * np.arange(x_per_axis) / x_per_axis] * n
        mesh = np.meshgrid(*axes, indexing="ij")
        x = np.stack([mm.ravel() for mm in mesh], axis=1)
        return SampleGrid(x, xi, description=(
            f"dyadic xi 2^{xi_exp_min}..2^{xi_exp_max}, {len(dirs)} dirs, "
            f"{x_per_axis}^[{n}] x-points"))

    @staticmethod
    def dyadic_radii(n: int = 1, exp_min: int = 0, exp_max: int = 8,
                     directions: int = 8) -> np.ndarray:
        """Just the xi points of a dyadic sweep (no zero), shape ``(P, n)``."""
        g = SampleGrid.default(n=n, xi_exp_min=exp_min, xi_exp_max=exp_max,
                               directions=directions, x_per_axis=1,
                               include_zero=False)
        return g.xi_points


@dataclass(frozen=True)
class SeminormEstimate:
    """Sampled estimate of a symbol seminorm with derivative budget ``k``.

    ``value`` is a sampled supremum over the grid, not a certified bound.
    """

    k: int
    value: float
    grid_used: str = ""


def estimate_seminorm(sym: ScalarSymbol, k: int, grid: SampleGrid) -> SeminormEstimate:
    """Sampled seminorm: sup of ``|d^a_xi d^b_x a| * <xi>^(-mu+|a|-delta|b|)``.

    The supremum runs over the grid's ``(x, xi)`` product and all multi-index
    pairs with ``|a| + |b| <= k``.  Derivatives come from the symbol's exact
    evaluator when present, otherwise from central finite differences.
    """
    if k < 0:
        raise InputError("seminorm budget k must be >= 0")
    n = grid.n
    brs = bracket(grid.xi_points)
    best = 0.0
    pairs = sorted({(a, b) for t in range(k + 1)
                    for s in range(t + 1)
                    for a in multi_indices(n, s)
                    for b in multi_indices(n, t - s)})
    x_pts = grid.x_points if not sym.constant_coefficient else grid.x_points[:1]
    for a, b in pairs:
        wexp = -sym.order + sum(a) - sym.delta * sum(b)
        if sum(a) == 0 and sum(b) == 0:
            for x in x_pts:
                X = np.broadcast_to(x, grid.xi_points.shape)
                vals = np.abs(eval_symbol_batch(sym, X, grid.xi_points))
                best = max(best, float(np.max(vals * brs ** wexp)))
            continue
        if sym.constant_coefficient and sum(b) > 0:
            continue
        for x in x_pts:
            for xi, br in zip(grid.xi_points, brs):
                v = abs(sym.derivative(a, b, x, xi)) * br ** wexp
                if v > best:
                    best = v
    return SeminormEstimate(k=k, value=float(best), grid_used=grid.description)


# ---------------------------------------------------------------------------
# truncated Leibniz composition
# ---------------------------------------------------------------------------

def leibniz_compose_truncated(a1: ScalarSymbol, a2: ScalarSymbol, N: int,
                              name: str = "") -> ScalarSymbol:
    """Truncated composition ``sum_{|a| < N} (1/a!) d_xi^a a1 * D_x^a a2``.

    The result has order ``order(a1) + order(a2)``; the omitted remainder has
    order lower by ``(1 - delta) * N``.  For a constant-coefficient right
    factor (or ``N = 1``) this is the pointwise product.
    """
    if N < 1:
        raise InputError("truncation order N must be >= 1")
    if abs(a1.delta - a2.delta) > 1e-12:
        raise InputError("composition requires matching delta")
    order = a1.order + a2.order
    pointwise = a2.constant_coefficient or N == 1

    def evaluator(x, xi):
        if pointwise:
            return a1.evaluator(x, xi) * a2.evaluator(x, xi)
        x = np.asarray(x, dtype=float)
        xi = np.asarray(xi, dtype=float)
        n = xi.shape[-1]
        total = 0.0 + 0.0j
        for alpha in multi_indices_upto(n, N):
            ka = sum(alpha)
            c = (-1j) ** ka / mi_factorial(alpha)
            total += c * a1.derivative(alpha, (0,) * n, x, xi) \
                * a2.derivative((0,) * n, alpha, x, xi)
        return total

    def deriv(gamma, eta, x, xi):
        n = len(gamma)
        total = 0.0 + 0.0j
        for alpha in multi_indices_upto(n, 1 if pointwise else N):
            ka = sum(alpha)
            c0 = (-1j) ** ka / mi_factorial(alpha)
            for g1 in itertools.product(*(range(g + 1) for g in gamma)):
                for e1 in itertools.product(*(range(e + 1) for e in eta)):
                    c = c0 * _mi_binom(gamma, g1) * _mi_binom(eta, e1)
                    d1 = a1.derivative(_mi_add(alpha, g1), e1, x, xi)
                    d2 = a2.derivative(_mi_sub(gamma, g1),
                                       _mi_add(alpha, _mi_sub(eta, e1)), x, xi)
                    total += c * d1 * d2
        return total

    return ScalarSymbol(evaluator, order, a1.delta,
                        derivative_evaluator=deriv,
                        constant_coefficient=(a1.constant_coefficient
                                              and a2.constant_coefficient),
                        name=name or f"({a1.name})#({a2.name})[N={N}]")


# ---------------------------------------------------------------------------
# JSON descriptors for the built-in families
# ---------------------------------------------------------------------------

def symbol_from_descriptor(d: dict, n: int = 1) -> ScalarSymbol:
    """Build a scalar symbol from a JSON-style descriptor.

    Supported families: ``bracket-power`` (``mu``, ``coef``),
    ``trig-bracket`` (``mu``, ``offset``, ``amplitude``, ``axis``,
    ``phase``), ``radial-power`` (``p``, ``coef``, ``excised``),
    ``constant`` (``value``), ``zero`` (``order``).
    """
    if "family" not in d:
        raise InputError("symbol descriptor needs a 'family' field")
    fam = d["family"]
    delta = float(d.get("delta", 0.0))
    if fam == "bracket-power":
        return bracket_power_symbol(float(d["mu"]), complex(d.get("coef", 1.0)),
                                    n=n, delta=delta)
    if fam == "trig-bracket":
        return trig_bracket_symbol(float(d["mu"]), float(d.get("offset", 2.0)),
                                   float(d.get("amplitude", 1.0)),
                                   int(d.get("axis", 0)), float(d.get("phase", 0.0)),
                                   n=n, delta=delta)
    if fam == "radial-power":
        return radial_power_symbol(float(d["p"]), complex(d.get("coef", 1.0)), n=n,
                                   delta=delta, excised=bool(d.get("excised", False)))
    if fam == "constant":
        return constant_symbol(complex(d["value"]), float(d.get("order", 0.0)), n=n,
                               delta=delta)
    if fam == "zero":
        return zero_symbol(float(d.get("order", 0.0)), n=n, delta=delta)
    raise InputError(f"unknown symbol family {fam!r}")
