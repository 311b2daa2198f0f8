"""Sector ellipticity certification for DN systems.

Two sampled lower-bound checks are provided:

* the determinant check: ``|det(A(x,xi) - lam)|`` bounded below by
  ``C * prod_i (<xi>^{r_i} + |lam|)``,
* the principal-minor check: for each ``kappa``,
  ``|det(A[kappa] - lam*E_kappa)|`` bounded below by
  ``C * <xi>^{r_1+...+r_{kappa-1}} * (<xi>^{r_kappa} + |lam|)``,

both over a closed sector of the complex plane, sampled on dyadic radii
along the boundary rays and the interior bisector.  The two checks are
equivalent in the limit; the randomized test family asserts sampled
agreement with a fixed slack factor.

Both checks report the worst observed ratio (``C_lower``), the witness
sample attaining it, and pass/fail against a threshold.  Ratios are
evaluated on diagonally rescaled matrices when ``<xi>`` is large, which
cancels the mixed-order growth exactly and avoids overflow.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InputError, ShiftNotFoundError
from .symbols import DNSystem, SampleGrid, bracket, shift_system

__all__ = [
    "Sector",
    "EllipticityWitness",
    "EllipticityReport",
    "ShiftResult",
    "char_poly",
    "check_det_ellipticity",
    "check_minor_ellipticity",
    "find_shift",
    "equivalence_disagreement",
]

_SCALE_BRACKET_CUTOFF = 1e4
DEFAULT_THRESHOLD = 1e-6
DEFAULT_R_LADDER = (0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0)


@dataclass(frozen=True)
class Sector:
    """Closed sector ``{r e^{i phi} : r >= 0, theta <= phi <= 2 pi - theta}``.

    The sampler walks dyadic radii ``2^k`` for ``k`` in
    ``[radius_exp_min, radius_exp_max]`` along both boundary rays and the
    interior rays (by default the bisector, the negative real axis), plus
    the origin.
    """

    theta: float
    radius_exp_min: int = -4
    radius_exp_max: int = 40
    include_zero: bool = True
    interior_ray_args: tuple = (math.pi,)

    def __post_init__(self):
        if not (0.0 < self.theta < math.pi):
            raise InputError(f"sector angle must lie in (0, pi), got {self.theta}")
        for a in self.interior_ray_args:
            if not (self.theta <= a <= 2.0 * math.pi - self.theta):
                raise InputError(f"interior ray arg {a} lies outside the sector")

    @property
    def boundary_ray_directions(self) -> tuple:
        return (np.exp(1j * self.theta), np.exp(-1j * self.theta))

    def contains(self, lam: complex, angle_tol: float = 1e-9) -> bool:
        lam = complex(lam)
        if abs(lam) == 0.0:
            return True
        phi = np.angle(lam) % (2.0 * np.pi)
        return self.theta - angle_tol <= phi <= 2.0 * np.pi - self.theta + angle_tol

    def lambda_samples(self, exp_min: Optional[int] = None,
                       exp_max: Optional[int] = None,
                       per_octave: int = 1) -> np.ndarray:
        """Dyadic sample set on the boundary and interior rays."""
        lo = self.radius_exp_min if exp_min is None else exp_min
        hi = self.radius_exp_max if exp_max is None else exp_max
        radii = 2.0 ** (np.arange(lo * per_octave, hi * per_octave + 1) / per_octave)
        args = (self.theta, 2.0 * np.pi - self.theta) + tuple(self.interior_ray_args)
        lams = np.concatenate([radii * np.exp(1j * a) for a in args])
        if self.include_zero:
            lams = np.concatenate([[0.0 + 0.0j], lams])
        return lams

    def to_dict(self) -> dict:
        return {"theta": self.theta,
                "radius_exp_min": self.radius_exp_min,
                "radius_exp_max": self.radius_exp_max}


@dataclass(frozen=True)
class EllipticityWitness:
    x: tuple
    xi: tuple
    lam: complex
    kappa: Optional[int]
    ratio: float

    def to_dict(self) -> dict:
        return {"x": list(self.x), "xi": list(self.xi),
                "lambda_re": self.lam.real, "lambda_im": self.lam.imag,
                "kappa": self.kappa, "ratio": self.ratio}


@dataclass(frozen=True)
class EllipticityReport:
    """Outcome of a sampled ellipticity check.

    ``C_lower`` is the worst ratio over the sample set; ``witness`` is the
    sample attaining it (always recorded, mandatory when ``passed`` is
    false).  ``mode`` is ``"determinant"``, ``"minors"`` or ``"diagonal"``.
    """

    passed: bool
    C_lower: float
    R_used: float
    witness: Optional[EllipticityWitness]
    mode: str
    samples: int
    threshold: float

    def to_dict(self) -> dict:
        return {"passed": bool(self.passed),
                "C_lower": float(self.C_lower),
                "R_used": float(self.R_used),
                "witness": self.witness.to_dict() if self.witness else None,
                "mode": self.mode,
                "samples": int(self.samples),
                "threshold": float(self.threshold)}


@dataclass(frozen=True)
class ShiftResult:
    alpha0: float
    report_at_alpha0: EllipticityReport

    def to_dict(self) -> dict:
        return {"alpha0": self.alpha0,
                "report_at_alpha0": self.report_at_alpha0.to_dict()}


# ---------------------------------------------------------------------------
# sample batches
# ---------------------------------------------------------------------------

@dataclass
class _Batch:
    X: np.ndarray      # (P, n) x-samples, aligned with XI
    XI: np.ndarray     # (P, n)
    A: np.ndarray      # (P, q, q)
    br: np.ndarray     # (P,)


def _make_batch(sys: DNSystem, grid: SampleGrid, R: float) -> _Batch:
    xi = grid.xi_points
    keep = np.linalg.norm(xi, axis=1) >= R - 1e-12
    xi = xi[keep]
    if xi.shape[0] == 0:
        raise InputError(f"empty grid: no xi samples with |xi| >= R = {R}")
    xs = grid.x_points if not sys.constant_coefficient else grid.x_points[:1]
    X = np.repeat(xs, xi.shape[0], axis=0)
    XI = np.tile(xi, (xs.shape[0], 1))
    A = sys.eval_batch(X, XI)
    return _Batch(X=X, XI=XI, A=A, br=np.asarray(bracket(XI), dtype=float))


def _resolve_scaling(scaling, br: np.ndarray) -> np.ndarray:
    if scaling == "auto":
        return br > _SCALE_BRACKET_CUTOFF
    if scaling is True:
        return np.ones_like(br, dtype=bool)
    if scaling is False:
        return np.zeros_like(br, dtype=bool)
    raise InputError("scaling must be 'auto', True, or False")


def _pencil_coeffs(M: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Coefficients ``c_j`` of ``det(M - t*diag(w)) = sum_j c_j (-t)^j``.

    Principal-minor expansion over index subsets; ``M`` is ``(P, q, q)``,
    ``w`` is ``(P, q)``.
    """
    P, q, _ = M.shape
    coeffs = np.zeros((P, q + 1), dtype=complex)
    idx = list(range(q))
    for size in range(q + 1):
        for S in itertools.combinations(idx, size):
            comp = [i for i in idx if i not in S]
            if comp:
                sub = M[:, comp][:, :, comp]
                d = np.linalg.det(sub)
            else:
                d = np.ones(P, dtype=complex)
            wprod = np.prod(w[:, list(S)], axis=1) if S else np.ones(P)
            coeffs[:, size] += wprod * d
    return coeffs


def _leading_minor_dets(M: np.ndarray) -> np.ndarray:
    """Determinants of the leading principal minors, ``(P, q+1)`` with det[0]=1."""
    P, q, _ = M.shape
    out = np.ones((P, q + 1), dtype=complex)
    for k in range(1, q + 1):
        out[:, k] = np.linalg.det(M[:, :k, :k])
    return out


def _det_ratio_table(batch: _Batch, sys: DNSystem, lams: np.ndarray,
                     scaling, alpha: complex = 0.0) -> np.ndarray:
    """Ratio ``|det(A - lam)| / prod_i (<xi>^{r_i} + |lam|)`` as ``(P, L)``."""
    r = np.asarray(sys.r, dtype=float)
    l = np.asarray(sys.l, dtype=float)
    m = np.asarray(sys.m, dtype=float)
    A = batch.A
    if alpha:
        A = A + alpha * np.eye(sys.q)[None, :, :]
    br = batch.br
    do_scale = _resolve_scaling(scaling, br)
    absl = np.abs(lams)[None, :]
    neg_pows = np.stack([(-lams) ** j for j in range(sys.q + 1)], axis=1)  # (L, q+1)
    ratios = np.empty((A.shape[0], lams.shape[0]), dtype=float)

    for mask, scaled in ((do_scale, True), (~do_scale, False)):
        if not np.any(mask):
            continue
        Am, brm = A[mask], br[mask]
        if scaled:
            D1 = brm[:, None] ** (-l)
            D2 = brm[:, None] ** (-m)
            Mm = Am * D1[:, :, None] * D2[:, None, :]
            w = brm[:, None] ** (-r)
            denom = np.ones((Am.shape[0], lams.shape[0]))
            for i in range(sys.q):
                denom = denom * (1.0 + absl * w[:, i:i + 1])
        else:
            Mm = Am
            w = np.ones((Am.shape[0], sys.q))
            denom = np.ones((Am.shape[0], lams.shape[0]))
            for i in range(sys.q):
                denom = denom * (brm[:, None] ** r[i] + absl)
        coeffs = _pencil_coeffs(Mm, w)
        vals = np.abs(coeffs @ neg_pows.T)
        ratios[mask] = vals / denom
    return ratios


def _minor_ratio_tables(batch: _Batch, sys: DNSystem, lams: np.ndarray,
                        scaling, alpha: complex = 0.0) -> np.ndarray:
    """Per-kappa minor ratios, shape ``(q, P, L)``."""
    q = sys.q
    r = np.asarray(sys.r, dtype=float)
    l = np.asarray(sys.l, dtype=float)
    m = np.asarray(sys.m, dtype=float)
    A = batch.A
    if alpha:
        A = A + alpha * np.eye(q)[None, :, :]
    br = batch.br
    do_scale = _resolve_scaling(scaling, br)
    absl = np.abs(lams)[None, :]
    out = np.empty((q, A.shape[0], lams.shape[0]), dtype=float)

    for mask, scaled in ((do_scale, True), (~do_scale, False)):
        if not np.any(mask):
            continue
        Am, brm = A[mask], br[mask]
        if scaled:
            D1 = brm[:, None] ** (-l)
            D2 = brm[:, None] ** (-m)
            Mm = Am * D1[:, :, None] * D2[:, None, :]
        else:
            Mm = Am
        dets = _leading_minor_dets(Mm)
        rsum = np.concatenate([[0.0], np.cumsum(r)])
        for k in range(1, q + 1):
            if scaled:
                wk = brm ** (-r[k - 1])
                vals = np.abs(dets[:, k:k + 1] - lams[None, :] * wk[:, None] * dets[:, k - 1:k])
                denom = 1.0 + absl * wk[:, None]
            else:
                vals = np.abs(dets[:, k:k + 1] - lams[None, :] * dets[:, k - 1:k])
                denom = brm[:, None] ** rsum[k - 1] * (brm[:, None] ** r[k - 1] + absl)
            out[k - 1][mask] = vals / denom
    return out


def _witness_from(batch: _Batch, lams: np.ndarray, ratios: np.ndarray,
                  kappa: Optional[int] = None) -> EllipticityWitness:
    flat = int(np.argmin(ratios))
    ip, il = np.unravel_index(flat, ratios.shape)
    return EllipticityWitness(x=tuple(batch.X[ip].tolist()),
                              xi=tuple(batch.XI[ip].tolist()),
                              lam=complex(lams[il]),
                              kappa=kappa,
                              ratio=float(ratios[ip, il]))


# ---------------------------------------------------------------------------
# public operations
# ---------------------------------------------------------------------------

def char_poly(sys: DNSystem, x, xi, lam: complex) -> complex:
    """Characteristic determinant ``det(A(x, xi) - lam)`` via pivoted LU."""
    A = sys.eval(x, xi)
    return complex(np.linalg.det(A - complex(lam) * np.eye(sys.q)))


def minor_pencil_value(sys: DNSystem, x, xi, lam: complex, kappa: int) -> complex:
    """Generic corner-minor pencil ``det(A[kappa](x, xi) - lam * E_kappa)``."""
    if not (1 <= kappa <= sys.q):
        raise InputError(f"kappa must lie in 1..{sys.q}")
    A = sys.eval(x, xi)[:kappa, :kappa]
    E = np.zeros((kappa, kappa), dtype=complex)
    E[-1, -1] = 1.0
    return complex(np.linalg.det(A - complex(lam) * E))


def check_det_ellipticity(sys: DNSystem, sector: Sector, grid: SampleGrid,
                          R: float = 0.0, threshold: float = DEFAULT_THRESHOLD,
                          scaling="auto",
                          lambdas: Optional[np.ndarray] = None) -> EllipticityReport:
    """Sampled determinant lower-bound check over the sector.

    ``C_lower`` is the minimum over all sampled ``(x, xi, lam)`` with
    ``|xi| >= R`` of ``|det(A - lam)| / prod_i (<xi>^{r_i} + |lam|)``.
    """
    batch = _make_batch(sys, grid, R)
    lams = sector.lambda_samples() if lambdas is None else np.asarray(lambdas)
    ratios = _det_ratio_table(batch, sys, lams, scaling)
    c_lower = float(ratios.min())
    witness = _witness_from(batch, lams, ratios)
    return EllipticityReport(passed=c_lower >= threshold, C_lower=c_lower,
                             R_used=float(R), witness=witness,
                             mode="determinant", samples=int(ratios.size),
                             threshold=float(threshold))


def check_minor_ellipticity(sys: DNSystem, sector: Sector, grid: SampleGrid,
                            R: float = 0.0, threshold: float = DEFAULT_THRESHOLD,
                            scaling="auto",
                            lambdas: Optional[np.ndarray] = None) -> EllipticityReport:
    """Sampled principal-minor lower-bound check over the sector.

    For each ``kappa`` the ratio uses the corner pencil
    ``det(A[kappa] - lam*E_kappa) = det A[kappa] - lam * det A[kappa-1]``;
    the witness records the failing ``kappa``.
    """
    batch = _make_batch(sys, grid, R)
    lams = sector.lambda_samples() if lambdas is None else np.asarray(lambdas)
    tables = _minor_ratio_tables(batch, sys, lams, scaling)
    mins = tables.reshape(sys.q, -1).min(axis=1)
    kworst = int(np.argmin(mins))
    c_lower = float(mins[kworst])
    witness = _witness_from(batch, lams, tables[kworst], kappa=kworst + 1)
    return EllipticityReport(passed=c_lower >= threshold, C_lower=c_lower,
                             R_used=float(R), witness=witness,
                             mode="minors", samples=int(tables.size),
                             threshold=float(threshold))


def find_shift(sys: DNSystem, sector: Sector, grid: SampleGrid,
               threshold: float = DEFAULT_THRESHOLD,
               r_ladder: Sequence[float] = DEFAULT_R_LADDER,
               alpha_max: float = float(2 ** 20),
               tol: float = 1e-3) -> ShiftResult:
    """Smallest shift ``alpha0`` so that ``A + alpha0`` passes at ``R = 0``.

    Precondition: the unshifted system must pass the determinant check at
    some ``R`` on the ladder (this is what makes a shift sufficient).  The
    search doubles an upper bound and then bisects; hitting ``alpha_max``
    raises :class:`ShiftNotFoundError`.
    """
    ladder_ok = False
    for R in r_ladder:
        try:
            rep = check_det_ellipticity(sys, sector, grid, R=R, threshold=threshold)
        except InputError:
            break
        if rep.passed:
            ladder_ok = True
            break
    if not ladder_ok:
        raise ShiftNotFoundError(
            "system fails the determinant check at every R in the ladder; "
            "no shift can rescue it", alpha_cap=alpha_max)

    batch = _make_batch(sys, grid, 0.0)
    lams = sector.lambda_samples()

    def c_lower(alpha: float) -> float:
        return float(_det_ratio_table(batch, sys, lams, "auto", alpha=alpha).min())

    if c_lower(0.0) >= threshold:
        return ShiftResult(0.0, check_det_ellipticity(sys, sector, grid, R=0.0,
                                                      threshold=threshold))
    lo, hi = 0.0, 1.0
    while c_lower(hi) < threshold:
        lo = hi
        hi *= 2.0
        if hi > alpha_max:
            raise ShiftNotFoundError(
                f"shift search exceeded alpha_max = {alpha_max}", alpha_cap=alpha_max)
    while hi - lo > tol * max(1.0, hi):
        mid = 0.5 * (lo + hi)
        if c_lower(mid) >= threshold:
            hi = mid
        else:
            lo = mid
    report = check_det_ellipticity(shift_system(sys, hi), sector, grid, R=0.0,
                                   threshold=threshold)
    return ShiftResult(float(hi), report)


def equivalence_disagreement(det_report: EllipticityReport,
                             minor_report: EllipticityReport,
                             threshold: float = DEFAULT_THRESHOLD,
                             slack: float = 10.0) -> bool:
    """True when the two checkers disagree beyond the slack band.

    A disagreement requires one ``C_lower`` below ``threshold / slack``
    while the other is at or above ``threshold * slack``; inside the band
    the discrepancy is attributable to the equivalence constants.
    """
    a, b = det_report.C_lower, minor_report.C_lower
    lo, hi = min(a, b), max(a, b)
    return lo < threshold / slack and hi >= threshold * slack
