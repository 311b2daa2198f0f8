"""Resolvent symbol, correction recursion, truncated parametrices, decay probes.

The base term is the pointwise resolvent symbol ``g0 = (A(x,xi) - lam)^{-1}``.
Corrections are built by the recursion

    g_nu = - sum_{m + |a| = nu, m < nu} (1/a!) (d_xi^a g_m) (D_x^a A) g0,

which makes the truncated left composition telescope: the residual of the
``N``-term parametrix collects exactly the cross terms with combined degree
``>= N`` and decays one bracket order per degree (times ``1 - delta``).

Every correction is represented structurally as a *term tree*: a sum of
products ``c * g0 * B_1 * g0 * B_2 * ... * B_k * g0`` where each ``B_f`` is
a plain partial-derivative matrix of ``A``.  Differentiating a tree in xi or
x stays inside this family via ``d(M^{-1}) = -M^{-1} (dM) M^{-1}``, so no
finite difference is ever taken of another finite difference.

A note on a case split appearing twice in the source estimates: the
displayed bound list for products of corrections repeats its first case
label; the implemented inequality is the one making both lines consistent
(the second line is the off-diagonal case).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import FitError, InputError, SingularityError
from .symbols import (DNSystem, bracket, mi_factorial, multi_indices,
                      smoothstep_excision)

__all__ = [
    "ParametrixTerm",
    "TruncatedParametrix",
    "ExcisionConfig",
    "DecayProbe",
    "g0_eval",
    "gnu_eval",
    "gnu_term",
    "build_truncated_parametrix",
    "decay_probe",
    "remainder_sum_eval",
]

COND_CAP = 1e12

# A term tree maps a factor tuple to a complex coefficient.  Each factor is
# a pair (alpha, beta) of partial-derivative multi-indices applied to A; the
# represented matrix product is  g0 (d^f1 A) g0 (d^f2 A) ... (d^fk A) g0.
TermKey = tuple
TermTree = dict


def _unit(n: int, axis: int) -> tuple:
    return tuple(1 if i == axis else 0 for i in range(n))


def _zero(n: int) -> tuple:
    return (0,) * n


def tree_scale(tree: TermTree, c: complex) -> TermTree:
    return {k: v * c for k, v in tree.items()}


def tree_add(*trees: TermTree) -> TermTree:
    out: TermTree = {}
    for t in trees:
        for k, v in t.items():
            out[k] = out.get(k, 0.0) + v
    return {k: v for k, v in out.items() if v != 0.0}


def tree_diff_xi(tree: TermTree, axis: int, n: int) -> TermTree:
    out: TermTree = {}

    def add(key, val):
        out[key] = out.get(key, 0.0) + val

    e = _unit(n, axis)
    for factors, c in tree.items():
        k = len(factors)
        # differentiate each of the k+1 resolvent slots: inserts (dA/dxi)
        for p in range(k + 1):
            nf = factors[:p] + ((e, _zero(n)),) + factors[p:]
            add(nf, -c)
        # differentiate each derivative-of-A factor
        for idx, (a, b) in enumerate(factors):
            nf = factors[:idx] + ((tuple(x + y for x, y in zip(a, e)), b),) + factors[idx + 1:]
            add(nf, c)
    return {k: v for k, v in out.items() if v != 0.0}


def tree_diff_x(tree: TermTree, axis: int, n: int) -> TermTree:
    out: TermTree = {}

    def add(key, val):
        out[key] = out.get(key, 0.0) + val

    e = _unit(n, axis)
    for factors, c in tree.items():
        k = len(factors)
        for p in range(k + 1):
            nf = factors[:p] + ((_zero(n), e),) + factors[p:]
            add(nf, -c)
        for idx, (a, b) in enumerate(factors):
            nf = factors[:idx] + ((a, tuple(x + y for x, y in zip(b, e))),) + factors[idx + 1:]
            add(nf, c)
    return {k: v for k, v in out.items() if v != 0.0}


def tree_diff_xi_multi(tree: TermTree, alpha: Sequence[int], n: int) -> TermTree:
    out = tree
    for axis, count in enumerate(alpha):
        for _ in range(count):
            out = tree_diff_xi(out, axis, n)
    return out


def _append_factor(tree: TermTree, factor, coef: complex) -> TermTree:
    return {factors + (factor,): c * coef for factors, c in tree.items()}


def gnu_tree(nu: int, n: int, _cache: Optional[dict] = None) -> TermTree:
    """Structural term tree of the ``nu``-th correction in dimension ``n``."""
    if _cache is None:
        _cache = {}
    if nu in _cache:
        return _cache[nu]
    if nu == 0:
        tree: TermTree = {(): 1.0 + 0.0j}
    else:
        parts = []
        for m in range(nu):
            ka = nu - m
            for alpha in multi_indices(n, ka):
                base = tree_diff_xi_multi(gnu_tree(m, n, _cache), alpha, n)
                coef = -((-1j) ** ka) / mi_factorial(alpha)
                parts.append(_append_factor(base, (_zero(n), alpha), coef))
        tree = tree_add(*parts)
    _cache[nu] = tree
    return tree


def _eval_g0(sys: DNSystem, x, xi, lam: complex, cond_cap: float = COND_CAP) -> np.ndarray:
    M = sys.eval(x, xi) - complex(lam) * np.eye(sys.q)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > cond_cap:
        raise SingularityError(
            f"A(x,xi) - lam is numerically singular (cond ~ {cond:.3e})",
            x=np.asarray(x), xi=np.asarray(xi), lam=complex(lam))
    return np.linalg.inv(M)


def eval_tree(tree: TermTree, sys: DNSystem, x, xi, lam: complex,
              g0: Optional[np.ndarray] = None) -> np.ndarray:
    """Evaluate a term tree at one ``(x, xi, lam)``.

    Terms containing an x-derivative factor vanish identically for
    constant-coefficient systems and are skipped without evaluating
    derivatives.
    """
    q = sys.q
    const = sys.constant_coefficient
    needed = set()
    live = []
    for factors, c in tree.items():
        if const and any(sum(b) > 0 for _, b in factors):
            continue
        live.append((factors, c))
        needed.update(factors)
    out = np.zeros((q, q), dtype=complex)
    if not live:
        return out
    if g0 is None:
        g0 = _eval_g0(sys, x, xi, lam)
    mats = {f: sys.derivative_matrix(f[0], f[1], x, xi) for f in needed}
    for factors, c in live:
        prod = g0
        for f in factors:
            prod = prod @ mats[f] @ g0
        out += c * prod
    return out


@dataclass(frozen=True)
class ParametrixTerm:
    """One correction term: its index ``nu`` and structural term tree."""

    nu: int
    n: int
    tree: TermTree = field(repr=False)

    def evaluate(self, sys: DNSystem, x, xi, lam: complex,
                 g0: Optional[np.ndarray] = None) -> np.ndarray:
        return eval_tree(self.tree, sys, x, xi, lam, g0=g0)

    def term_count(self) -> int:
        return len(self.tree)


def gnu_term(sys_dim: int, nu: int) -> ParametrixTerm:
    return ParametrixTerm(nu=nu, n=sys_dim, tree=gnu_tree(nu, sys_dim))


def g0_eval(sys: DNSystem, x, xi, lam: complex,
            cond_cap: float = COND_CAP) -> np.ndarray:
    """Pointwise resolvent symbol ``(A(x, xi) - lam)^{-1}`` via pivoted LU."""
    return _eval_g0(sys, x, xi, lam, cond_cap=cond_cap)


def gnu_eval(sys: DNSystem, nu: int, x, xi, lam: complex) -> np.ndarray:
    """Evaluate the ``nu``-th correction (``nu >= 1``) at one point.

    ``nu = 0`` is rejected by contract; use :func:`g0_eval`.
    """
    if nu < 1:
        raise InputError("gnu_eval requires nu >= 1; use g0_eval for the base term")
    n = np.atleast_1d(np.asarray(xi)).shape[-1]
    return eval_tree(gnu_tree(nu, n), sys, x, xi, lam)


# ---------------------------------------------------------------------------
# truncated parametrix with excision
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ExcisionConfig:
    """Excision scales: term ``nu`` is cut on by ``chi(eps_nu * |xi|)``.

    ``eps_nu = epsilon1 * 2^{1-nu}`` is strictly decreasing; the ramp is the
    quintic smoothstep on ``[lo, hi]``.
    """

    epsilon1: float = 1.0
    ramp: tuple = (1.0, 2.0)

    def epsilon(self, nu: int) -> float:
        return self.epsilon1 * 2.0 ** (1 - nu)

    def cut(self, nu: int, xi_norm: float) -> float:
        return float(smoothstep_excision(self.epsilon(nu) * xi_norm,
                                         self.ramp[0], self.ramp[1]))


@dataclass(frozen=True)
class TruncatedParametrix:
    """Truncation ``g0 + sum_{nu=1}^{N-1} chi(eps_nu |xi|) g_nu``."""

    sys: DNSystem
    N: int
    terms: tuple          # ParametrixTerm for nu = 0 .. N-1
    excision: ExcisionConfig

    def evaluate(self, x, xi, lam: complex) -> np.ndarray:
        g0 = _eval_g0(self.sys, x, xi, lam)
        out = g0.copy()
        xi_norm = float(np.linalg.norm(np.atleast_1d(xi)))
        for term in self.terms[1:]:
            c = self.excision.cut(term.nu, xi_norm)
            if c:
                out += c * term.evaluate(self.sys, x, xi, lam, g0=g0)
        return out


def build_truncated_parametrix(sys: DNSystem, N: int,
                               excision: Optional[ExcisionConfig] = None,
                               dim: Optional[int] = None,
                               calibration_grid: Optional[np.ndarray] = None,
                               calibration_x: Optional[np.ndarray] = None,
                               sector_theta: float = math.pi / 2) -> TruncatedParametrix:
    """Assemble the first ``N`` terms with excision scales.

    With ``excision=None`` the leading scale is calibrated on a small dyadic
    sweep: ``epsilon1`` is halved until each excised correction changes the
    evaluation by at most ``2^{-nu}`` of the base-term scale.
    """
    if N < 1:
        raise InputError("truncation order N must be >= 1")
    n = dim if dim is not None else (sys.dim or 1)
    terms = tuple(gnu_term(n, nu) for nu in range(N))
    if excision is None:
        excision = _calibrate_excision(sys, terms, n, calibration_grid,
                                       calibration_x, sector_theta)
    return TruncatedParametrix(sys=sys, N=N, terms=terms, excision=excision)


def _calibrate_excision(sys, terms, n, xi_points, x_points, theta) -> ExcisionConfig:
    if len(terms) <= 1 or sys.constant_coefficient:
        return ExcisionConfig(epsilon1=1.0)
    if xi_points is None:
        radii = 2.0 ** np.arange(0, 7)
        xi_points = np.concatenate([radii[:, None] * d
                                    for d in ([np.ones((1, 1)), -np.ones((1, 1))]
                                              if n == 1 else
                                              [np.eye(n)[k][None, :] for k in range(n)])])
    if x_points is None:
        x_points = np.stack([2 * np.pi * np.arange(8) / 8.0] * n, axis=1) \
            if n > 1 else (2 * np.pi * np.arange(8) / 8.0)[:, None]
    lams = np.array([0.0, 4.0 * np.exp(1j * theta), 64.0 * np.exp(1j * theta)])
    eps1 = 1.0
    for _ in range(12):
        cfg = ExcisionConfig(epsilon1=eps1)
        ok = True
        for xi in xi_points:
            xin = float(np.linalg.norm(xi))
            for x in x_points:
                for lam in lams:
                    try:
                        g0 = _eval_g0(sys, x, xi, lam)
                    except SingularityError:
                        continue
                    scale = max(np.linalg.norm(g0, 2), 1e-300)
                    for term in terms[1:]:
                        c = cfg.cut(term.nu, xin)
                        if not c:
                            continue
                        delta = c * np.linalg.norm(
                            term.evaluate(sys, x, xi, lam, g0=g0), 2)
                        if delta > 2.0 ** (-term.nu) * scale:
                            ok = False
                            break
                    if not ok:
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            return cfg
        eps1 *= 0.5
    return ExcisionConfig(epsilon1=eps1)


# ---------------------------------------------------------------------------
# remainder sum and decay probes
# ---------------------------------------------------------------------------

def remainder_sum_eval(sys: DNSystem, N: int, x, xi, lam: complex,
                       n: Optional[int] = None) -> np.ndarray:
    """Residual of the ``N``-term truncated left composition.

    Evaluates ``sum (1/a!) (d_xi^a g_nu) (D_x^a A)`` over the cross terms
    ``nu < N``, ``|a| <= N``, ``nu + |a| >= N`` (all with ``|a| >= 1``); the
    lower-degree pairs cancel exactly by the recursion.  The alpha budget
    extends one past ``N`` so the ``N = 1`` remainder is measurable.
    """
    if N < 1:
        raise InputError("N must be >= 1")
    if n is None:
        n = np.atleast_1d(np.asarray(xi)).shape[-1]
    cache: dict = {}
    g0 = _eval_g0(sys, x, xi, lam)
    out = np.zeros((sys.q, sys.q), dtype=complex)
    for nu in range(N):
        base = gnu_tree(nu, n, cache)
        for ka in range(max(1, N - nu), N + 1):
            for alpha in multi_indices(n, ka):
                tree = tree_diff_xi_multi(base, alpha, n)
                left = eval_tree(tree, sys, x, xi, lam, g0=g0)
                if not left.any():
                    continue
                right = ((-1j) ** ka / mi_factorial(alpha)) \
                    * sys.derivative_matrix(_zero(n), alpha, x, xi)
                out += left @ right
    return out


@dataclass(frozen=True)
class DecayProbe:
    """Sampled decay diagnostics for one probe quantity.

    ``samples`` rows are ``(xi_norm, lambda_abs, i, j, value)`` where
    ``value`` is already normalized by the predicted weight.
    ``fitted_slope`` is the least-squares slope of ``log(max value per
    shell)`` against ``log <xi>``; an identically-zero quantity reports the
    ``-inf`` sentinel.
    """

    quantity: str
    N: int
    fitted_slope: float
    lambda_decay_ok: bool
    samples: tuple

    def max_value(self) -> float:
        return max((row[4] for row in self.samples), default=0.0)

    def to_header_dict(self) -> dict:
        return {"quantity": self.quantity, "N": self.N,
                "fitted_slope": self.fitted_slope,
                "lambda_decay_ok": bool(self.lambda_decay_ok)}


_PROBE_QUANTITIES = ("J_minus_1", "G_minus_G0", "g0_diag_bound",
                     "g0_offdiag_bound", "gnu_bound")


def decay_probe(sys: DNSystem, quantity: str, N: int, sector,
                xi_points: np.ndarray,
                x_points: Optional[np.ndarray] = None,
                lambdas: Optional[np.ndarray] = None,
                value_cap: float = 1e8,
                excision: Optional[ExcisionConfig] = None) -> DecayProbe:
    """Evaluate one decay quantity on a dyadic sweep and fit its slope.

    Quantities
    ----------
    ``J_minus_1``
        Residual of the N-term truncated composition, entry ``(i, j)``
        normalized by ``<xi>^{-(l_i+m_j)} (<xi>^{r_i} + |lam|)``; the
        expected slope is ``-(1-delta) N``.
    ``G_minus_G0``
        Excised correction sum, normalized per the base/correction split
        with one extra ``(1-delta)`` bracket power.
    ``g0_diag_bound`` / ``g0_offdiag_bound``
        Weighted base-term ratios; bounded, slope reported for reference.
    ``gnu_bound``
        The ``nu = N`` correction with its full predicted weight.
    """
    if quantity not in _PROBE_QUANTITIES:
        raise InputError(f"unknown probe quantity {quantity!r}")
    xi_points = np.atleast_2d(np.asarray(xi_points, dtype=float))
    n = xi_points.shape[1]
    radii = np.unique(np.round(np.linalg.norm(xi_points, axis=1), 12))
    if len(radii) < 3:
        raise FitError("decay probe needs at least 3 dyadic radii")
    if quantity == "g0_offdiag_bound" and sys.q < 2:
        raise InputError("off-diagonal probe needs q >= 2")
    if x_points is None:
        if sys.constant_coefficient:
            x_points = np.zeros((1, n))
        else:
            x_points = (2 * np.pi * np.arange(8) / 8.0)[:, None] * np.ones((1, n))
    x_points = np.atleast_2d(np.asarray(x_points, dtype=float))
    if lambdas is None:
        lambdas = sector.lambda_samples(exp_min=0, exp_max=16, per_octave=1)[::4]
        lambdas = np.concatenate([[0.0 + 0.0j], lambdas])
    lambdas = np.asarray(lambdas, dtype=complex)

    l = np.asarray(sys.l)
    m = np.asarray(sys.m)
    r = np.asarray(sys.r)
    dlt = sys.delta
    if quantity in ("G_minus_G0", "gnu_bound") and excision is None:
        excision = ExcisionConfig(epsilon1=1.0)

    rows = []
    for xi in xi_points:
        xin = float(np.linalg.norm(xi))
        br = float(bracket(xi))
        for x in x_points:
            for lam in lambdas:
                absl = abs(lam)
                try:
                    if quantity == "J_minus_1":
                        V = remainder_sum_eval(sys, N, x, xi, lam, n=n)
                        W = (br ** (-(l[:, None] + m[None, :]))
                             * (br ** r + absl)[:, None])
                    elif quantity == "G_minus_G0":
                        g0 = _eval_g0(sys, x, xi, lam)
                        V = np.zeros((sys.q, sys.q), dtype=complex)
                        for nu in range(1, N):
                            c = excision.cut(nu, xin)
                            if c:
                                V += c * eval_tree(gnu_tree(nu, n), sys, x, xi,
                                                   lam, g0=g0)
                        W = ((br ** r + absl)[:, None] * (br ** r + absl)[None, :]
                             * br ** (-(l[:, None] + m[None, :]) + (1.0 - dlt)))
                    elif quantity in ("g0_diag_bound", "g0_offdiag_bound"):
                        V = _eval_g0(sys, x, xi, lam)
                        W = ((br ** r + absl)[:, None] * (br ** r + absl)[None, :]
                             * br ** (-(l[:, None] + m[None, :])))
                        np.fill_diagonal(W, (br ** r + absl))
                    else:  # gnu_bound, nu = N
                        if N < 1:
                            raise InputError("gnu_bound needs N >= 1")
                        V = gnu_eval(sys, N, x, xi, lam)
                        W = ((br ** r + absl)[:, None] * (br ** r + absl)[None, :]
                             * br ** (-(l[:, None] + m[None, :]) + (1.0 - dlt) * N))
                except SingularityError:
                    continue
                vals = np.abs(V) * W
                for i in range(sys.q):
                    for j in range(sys.q):
                        if quantity == "g0_diag_bound" and i != j:
                            continue
                        if quantity == "g0_offdiag_bound" and i == j:
                            continue
                        rows.append((xin, absl, i, j, float(vals[i, j])))

    by_shell: dict = {}
    for xin, absl, i, j, v in rows:
        key = round(xin, 12)
        by_shell[key] = max(by_shell.get(key, 0.0), v)
    shells = sorted(by_shell)
    vmax = np.array([by_shell[s] for s in shells])
    brs = np.sqrt(1.0 + np.asarray(shells) ** 2)
    nz = vmax > 1e-290
    if nz.sum() >= 3:
        slope = float(np.polyfit(np.log(brs[nz]), np.log(vmax[nz]), 1)[0])
    elif nz.any():
        raise FitError("fewer than 3 nonzero shells in the decay probe")
    else:
        slope = float("-inf")
    ok = all(v <= value_cap for v in vmax)
    return DecayProbe(quantity=quantity, N=N, fitted_slope=slope,
                      lambda_decay_ok=ok, samples=tuple(rows))
