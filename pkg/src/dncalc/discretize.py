"""Periodic-grid quantization and operator-level verification.

The continuum is replaced by a torus of period ``2 pi L`` sampled at ``N``
points per axis (``N`` a power of two, dimension 1 or 2).  Frequencies are
the integer lattice scaled by ``1/L`` in standard FFT order; for even ``N``
the single Nyquist mode sits at ``-N/(2L)`` (numpy's negative-half
convention).

Quantization is the discrete Kohn-Nirenberg rule: forward FFT, multiply by
``a(x_j, xi_k)``, synthesize.  Pure multipliers use one FFT round trip;
variable symbols use the dense ``O(P^2)`` synthesis appropriate at desk
scale.  Sobolev scales are realized as per-block bracket weight vectors on
the Fourier side, and operator norms in those scales are computed by SVD
after unitary DFT conjugation (with an independent generalized-eigenvalue
route for cross-checking).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg

from .errors import EvaluationError, InputError, NumericalError, ResourceError
from .parametrix import ExcisionConfig, TruncatedParametrix, build_truncated_parametrix
from .symbols import DNSystem, ScalarSymbol, bracket, eval_symbol_batch, shift_system

__all__ = [
    "TorusGrid",
    "DiscreteOperator",
    "MultiplierOperator",
    "Perturbation",
    "apply_pdo",
    "assemble_dense",
    "multiplier_operator",
    "make_smoothing_perturbation",
    "resolvent_sweep",
    "parametrix_vs_resolvent",
    "SweepResult",
    "ray_slope",
]

DENSE_CAP = 8192


@dataclass(frozen=True)
class TorusGrid:
    """Periodic grid on ``[0, 2 pi L)^n`` with ``N`` points per axis."""

    n: int
    N: int
    L: float = 1.0
    nyquist_convention: str = "negative-half"

    def __post_init__(self):
        if self.n not in (1, 2):
            raise InputError("torus grids support n in {1, 2}")
        if self.N < 2 or (self.N & (self.N - 1)) != 0:
            raise InputError("N must be a power of two")

    @property
    def npoints(self) -> int:
        return self.N ** self.n

    def axis_points(self) -> np.ndarray:
        return 2.0 * np.pi * self.L * np.arange(self.N) / self.N

    def axis_freqs(self) -> np.ndarray:
        return np.fft.fftfreq(self.N, d=1.0 / self.N) / self.L

    def x_points(self) -> np.ndarray:
        """All grid points, shape ``(P, n)``, C-order flattening."""
        ax = self.axis_points()
        mesh = np.meshgrid(*([ax] * self.n), indexing="ij")
        return np.stack([mm.ravel() for mm in mesh], axis=1)

    def frequencies(self) -> np.ndarray:
        """All frequencies in FFT order, shape ``(P, n)``."""
        fr = self.axis_freqs()
        mesh = np.meshgrid(*([fr] * self.n), indexing="ij")
        return np.stack([mm.ravel() for mm in mesh], axis=1)

    def brackets(self) -> np.ndarray:
        return np.asarray(bracket(self.frequencies()), dtype=float)

    def synthesis_matrix(self) -> np.ndarray:
        """``E[j, k] = exp(i x_j . xi_k)``; ``E @ conj(E) = P * I``."""
        X = self.x_points()
        F = self.frequencies()
        return np.exp(1j * (X @ F.T))

    def fftn(self, field: np.ndarray) -> np.ndarray:
        return np.fft.fftn(field.reshape([self.N] * self.n)).ravel()

    def ifftn(self, coeffs: np.ndarray) -> np.ndarray:
        return np.fft.ifftn(coeffs.reshape([self.N] * self.n)).ravel()

    def to_dict(self) -> dict:
        return {"n": self.n, "N": self.N, "L": self.L,
                "nyquist": self.nyquist_convention}


def _symbol_values_xk(sym: ScalarSymbol, grid: TorusGrid) -> np.ndarray:
    """Values ``a(x_j, xi_k)`` as a ``(P, P)`` array (constant rows for
    multipliers)."""
    P = grid.npoints
    F = grid.frequencies()
    if sym.constant_coefficient:
        vals = eval_symbol_batch(sym, np.zeros((P, grid.n)), F)
        return np.broadcast_to(vals[None, :], (P, P))
    X = grid.x_points()
    Xp = np.repeat(X, P, axis=0)
    Fp = np.tile(F, (P, 1))
    return eval_symbol_batch(sym, Xp, Fp).reshape(P, P)


def apply_pdo(sym_or_sys, field: np.ndarray, grid: TorusGrid) -> np.ndarray:
    """Apply a quantized symbol or system to a grid field.

    Scalar symbols take and return ``(P,)`` arrays; systems take and return
    ``(q, P)``.  Multipliers use one FFT round trip; variable symbols the
    dense synthesis path.
    """
    if isinstance(sym_or_sys, DNSystem):
        sys = sym_or_sys
        field = np.asarray(field, dtype=complex)
        if field.shape != (sys.q, grid.npoints):
            raise InputError(f"field shape {field.shape} != (q, P) = "
                             f"({sys.q}, {grid.npoints})")
        out = np.zeros_like(field)
        for i in range(sys.q):
            for j in range(sys.q):
                out[i] += apply_pdo(sys.entries[i][j], field[j], grid)
        return out
    sym = sym_or_sys
    field = np.asarray(field, dtype=complex)
    if field.shape != (grid.npoints,):
        raise InputError(f"field shape {field.shape} != (P,) = ({grid.npoints},)")
    coeffs = grid.fftn(field)
    if sym.constant_coefficient:
        vals = eval_symbol_batch(sym, np.zeros((grid.npoints, grid.n)),
                                 grid.frequencies())
        out = grid.ifftn(vals * coeffs)
    else:
        A = _symbol_values_xk(sym, grid)
        E = grid.synthesis_matrix()
        out = (A * E) @ coeffs / grid.npoints
    if not np.all(np.isfinite(out)):
        raise EvaluationError("NaN/inf in quantized application")
    return out


# ---------------------------------------------------------------------------
# dense assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteOperator:
    """Dense matrix realization with Sobolev weight vectors.

    The flat index is ``i * P + k`` for block ``i`` and grid point / mode
    ``k``.  ``weights[i]`` is the target-scale bracket weight
    ``<xi>^{s - l_i}`` used for operator norms on the ambient space; the
    domain scale ``<xi>^{s + m_j}`` is kept for mapping-property checks.
    """

    matrix: np.ndarray
    grid: TorusGrid
    l: tuple
    m: tuple
    s: float
    shift: float
    weights: np.ndarray          # (q, P)
    domain_weights: np.ndarray   # (q, P)

    @property
    def q(self) -> int:
        return len(self.l)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return self.matrix @ vec

    def fourier_unitary(self) -> np.ndarray:
        """Block-diagonal unitary DFT: analysis per block, ``(D, D)``."""
        U = np.conj(self.grid.synthesis_matrix()) / math.sqrt(self.grid.npoints)
        D = self.dim
        out = np.zeros((D, D), dtype=complex)
        P = self.grid.npoints
        for i in range(self.q):
            out[i * P:(i + 1) * P, i * P:(i + 1) * P] = U
        return out

    def to_fourier(self, M: Optional[np.ndarray] = None) -> np.ndarray:
        F = self.fourier_unitary()
        M = self.matrix if M is None else M
        return F @ M @ F.conj().T

    def weighted_opnorm(self, M: Optional[np.ndarray] = None) -> float:
        """Ambient-scale operator norm: SVD after weight conjugation."""
        w = self.weights.ravel()
        Mh = self.to_fourier(M)
        return float(np.linalg.norm((w[:, None] * Mh) / w[None, :], 2))

    def weighted_opnorm_gen(self, M: Optional[np.ndarray] = None) -> float:
        """Same norm via the generalized eigenvalue route (independent path)."""
        w2 = (self.weights.ravel() ** 2).astype(float)
        Mh = self.to_fourier(M)
        A = Mh.conj().T @ (w2[:, None] * Mh)
        vals = scipy.linalg.eigh(A, np.diag(w2), eigvals_only=True)
        return float(math.sqrt(max(vals.max(), 0.0)))


def assemble_dense(sys: DNSystem, grid: TorusGrid, shift: float = 0.0,
                   perturbation: Optional["Perturbation"] = None,
                   s: float = 0.0, cap: int = DENSE_CAP) -> DiscreteOperator:
    """Dense matrix of ``A(x, D) + shift (+ K)`` on the grid.

    Column ``k`` equals the quantized application to the ``k``-th basis
    field; the assembly below evaluates the same synthesis product in one
    batch per entry.
    """
    P = grid.npoints
    D = sys.q * P
    if D > cap:
        raise ResourceError(f"dense assembly of size {D} exceeds cap {cap}")
    E = grid.synthesis_matrix()
    Einv = np.conj(E) / P
    T = np.zeros((D, D), dtype=complex)
    for i in range(sys.q):
        for j in range(sys.q):
            sym = sys.entries[i][j]
            A = _symbol_values_xk(sym, grid)
            if not np.all(np.isfinite(A)):
                raise EvaluationError(f"NaN in symbol values for entry ({i},{j})")
            T[i * P:(i + 1) * P, j * P:(j + 1) * P] = (A * E) @ Einv
    if shift:
        T += shift * np.eye(D)
    if perturbation is not None:
        if perturbation.matrix.shape != (D, D):
            raise InputError("perturbation shape mismatch")
        T = T + perturbation.matrix
    br = grid.brackets()
    weights = np.stack([br ** (s - li) for li in sys.l])
    dweights = np.stack([br ** (s + mj) for mj in sys.m])
    return DiscreteOperator(matrix=T, grid=grid, l=sys.l, m=sys.m, s=s,
                            shift=shift, weights=weights, domain_weights=dweights)


@dataclass(frozen=True)
class MultiplierOperator:
    """Per-mode ``(q, q)`` blocks of a pure multiplier system."""

    blocks: np.ndarray           # (P, q, q)
    weights: np.ndarray          # (q, P)
    grid: TorusGrid
    l: tuple
    m: tuple
    s: float
    shift: float

    @property
    def q(self) -> int:
        return len(self.l)

    def weighted_blocknorm(self, fblocks: np.ndarray) -> float:
        """Max over modes of the weighted 2-norm of per-mode blocks."""
        W = self.weights.T                     # (P, q)
        scaled = fblocks * W[:, :, None] / W[:, None, :]
        return float(max(np.linalg.norm(scaled[k], 2)
                         for k in range(scaled.shape[0])))

    def to_dense(self) -> DiscreteOperator:
        P = self.grid.npoints
        q = self.q
        E = self.grid.synthesis_matrix()
        Einv = np.conj(E) / P
        T = np.zeros((q * P, q * P), dtype=complex)
        for i in range(q):
            for j in range(q):
                T[i * P:(i + 1) * P, j * P:(j + 1) * P] = \
                    (E * self.blocks[:, i, j][None, :]) @ Einv
        br = self.grid.brackets()
        return DiscreteOperator(matrix=T, grid=self.grid, l=self.l, m=self.m,
                                s=self.s, shift=self.shift,
                                weights=self.weights,
                                domain_weights=np.stack([br ** (self.s + mj)
                                                         for mj in self.m]))


def multiplier_operator(source, grid: TorusGrid, shift: float = 0.0,
                        s: float = 0.0, l: Optional[Sequence[float]] = None,
                        m: Optional[Sequence[float]] = None) -> MultiplierOperator:
    """Per-mode blocks from a constant-coefficient system or a matrix callable.

    ``source`` is either a constant-coefficient :class:`DNSystem` or a
    callable ``xi (n,) -> (q, q)`` (then ``l`` and ``m`` must be given).
    """
    F = grid.frequencies()
    P = grid.npoints
    if isinstance(source, DNSystem):
        if not source.constant_coefficient:
            raise InputError("multiplier operators need a constant-coefficient system")
        blocks = source.eval_batch(np.zeros_like(F), F)
        l, m = source.l, source.m
    else:
        if l is None or m is None:
            raise InputError("matrix-callable sources require explicit l and m")
        blocks = np.stack([np.asarray(source(F[k]), dtype=complex) for k in range(P)])
        l, m = tuple(l), tuple(m)
    if shift:
        blocks = blocks + shift * np.eye(blocks.shape[1])[None, :, :]
    br = grid.brackets()
    weights = np.stack([br ** (s - li) for li in l])
    return MultiplierOperator(blocks=blocks, weights=weights, grid=grid,
                              l=l, m=m, s=s, shift=shift)


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Perturbation:
    """Smoothing perturbation: Fourier decay composed with a fixed random
    bounded x-multiplication; maps the ``epsilon``-lowered domain scale into
    the ambient scale but is not itself a quantized symbol."""

    epsilon: float
    matrix: np.ndarray
    amplitude: float

    def block(self, i: int, j: int, P: int) -> np.ndarray:
        return self.matrix[i * P:(i + 1) * P, j * P:(j + 1) * P]


def make_smoothing_perturbation(sys: DNSystem, grid: TorusGrid, epsilon: float,
                                rng: np.random.Generator,
                                amplitude: float = 0.1,
                                s: float = 0.0) -> Perturbation:
    if epsilon <= 0:
        raise InputError("perturbation epsilon must be positive")
    P = grid.npoints
    q = sys.q
    br = grid.brackets()
    E = grid.synthesis_matrix()
    Einv = np.conj(E) / P
    mx = rng.uniform(-1.0, 1.0, size=P)
    K = np.zeros((q * P, q * P), dtype=complex)
    for i in range(q):
        for j in range(q):
            decay = amplitude * br ** (sys.l[i] + sys.m[j] - epsilon)
            K[i * P:(i + 1) * P, j * P:(j + 1) * P] = \
                (mx[:, None] * E * decay[None, :]) @ Einv
    return Perturbation(epsilon=epsilon, matrix=K, amplitude=amplitude)


def perturbation_block_weighted_norm(pert: Perturbation, op: DiscreteOperator,
                                     i: int, j: int) -> float:
    """Weighted norm of block ``K_ij`` from the epsilon-lowered domain scale
    ``<xi>^{s+m_j-eps}`` into the ambient scale ``<xi>^{s-l_i}``."""
    P = op.grid.npoints
    U = np.conj(op.grid.synthesis_matrix()) / math.sqrt(P)
    Kh = U @ pert.block(i, j, P) @ U.conj().T
    br = op.grid.brackets()
    wt = br ** (op.s - op.l[i])
    ws = br ** (op.s + op.m[j] - pert.epsilon)
    return float(np.linalg.norm(wt[:, None] * Kh / ws[None, :], 2))


# ---------------------------------------------------------------------------
# resolvent sweeps
# ---------------------------------------------------------------------------

@dataclass
class SweepResult:
    """Rows ``(lam, plain_norm, weighted_norm, bracket_times_weighted)``."""

    rows: list
    findings: list

    @property
    def max_weighted_bracket(self) -> float:
        vals = [r[3] for r in self.rows if np.isfinite(r[3])]
        return max(vals) if vals else float("inf")

    def csv_rows(self) -> list:
        return [(lam.real, lam.imag, plain, wb)
                for lam, plain, _, wb in self.rows]


def resolvent_sweep(op: DiscreteOperator, sector, lam_samples,
                    singular_cond: float = 1e13) -> SweepResult:
    """Solve ``(T - lam)^{-1}`` over the sample set and record weighted norms.

    A numerically singular ``T - lam`` inside the sector (LU failure or a
    condition estimate beyond ``singular_cond``) is recorded as an
    ellipticity-violation finding instead of raising.
    """
    lam_samples = np.asarray(lam_samples, dtype=complex)
    for lam in lam_samples:
        if sector is not None and not sector.contains(lam):
            raise InputError(f"lambda sample {lam} lies outside the sector")
    D = op.dim
    I = np.eye(D, dtype=complex)
    Tnorm = float(np.linalg.norm(op.matrix, 2))
    rows = []
    findings = []
    for lam in lam_samples:
        M = op.matrix - lam * I

        def record_finding():
            findings.append({"lambda_re": lam.real, "lambda_im": lam.imag,
                             "kind": "ellipticity-violation",
                             "detail": "singular T - lambda inside the sector"})
            rows.append((complex(lam), float("inf"), float("inf"), float("inf")))

        try:
            lu, piv = scipy.linalg.lu_factor(M)
            R = scipy.linalg.lu_solve((lu, piv), I)
            if not np.all(np.isfinite(R)):
                raise np.linalg.LinAlgError("non-finite resolvent")
            plain = float(np.linalg.norm(R, 2))
            if plain * (Tnorm + abs(lam)) > singular_cond:
                record_finding()
                continue
            wnorm = op.weighted_opnorm(R)
        except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError):
            record_finding()
            continue
        brl = math.sqrt(1.0 + abs(lam) ** 2)
        rows.append((complex(lam), plain, wnorm, brl * wnorm))
    return SweepResult(rows=rows, findings=findings)


def ray_slope(rows, min_abs: float = 0.0, use_weighted: bool = False) -> float:
    """Log-log slope of the resolvent norm against ``|lam|`` along a ray."""
    pts = [(abs(lam), (w if use_weighted else p))
           for lam, p, w, _ in rows if abs(lam) > min_abs and np.isfinite(p)]
    if len(pts) < 3:
        raise NumericalError("need at least 3 finite samples for a ray slope")
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# parametrix vs resolvent
# ---------------------------------------------------------------------------

@dataclass
class PvRResult:
    rows: list               # (lam, weighted difference norm)
    fitted_slope: float
    N: int


def _quantize_matrix_symbol(par: TruncatedParametrix, grid: TorusGrid,
                            lam: complex) -> np.ndarray:
    q = par.sys.q
    P = grid.npoints
    E = grid.synthesis_matrix()
    Einv = np.conj(E) / P
    X = grid.x_points()
    F = grid.frequencies()
    T = np.zeros((q * P, q * P), dtype=complex)
    if par.sys.constant_coefficient:
        vals = np.stack([par.evaluate(X[0], F[k], lam) for k in range(P)])
        for i in range(q):
            for j in range(q):
                T[i * P:(i + 1) * P, j * P:(j + 1) * P] = \
                    (E * vals[:, i, j][None, :]) @ Einv
        return T
    vals = np.empty((P, P, q, q), dtype=complex)
    for p in range(P):
        for k in range(P):
            vals[p, k] = par.evaluate(X[p], F[k], lam)
    for i in range(q):
        for j in range(q):
            T[i * P:(i + 1) * P, j * P:(j + 1) * P] = (vals[:, :, i, j] * E) @ Einv
    return T


def parametrix_vs_resolvent(sys: DNSystem, grid: TorusGrid, sector,
                            N: int, lam_samples, shift: float = 0.0,
                            perturbation: Optional[Perturbation] = None,
                            s: float = 0.0,
                            excision: Optional[ExcisionConfig] = None) -> PvRResult:
    """Weighted norm of ``(T - lam)^{-1} - Op(G(lam))`` and its decay slope.

    The truncated parametrix is built for the shifted symbol; the true
    resolvent includes the shift and optional perturbation.
    """
    op = assemble_dense(sys, grid, shift=shift, perturbation=perturbation, s=s)
    shifted = shift_system(sys, shift) if shift else sys
    par = build_truncated_parametrix(shifted, N, excision=excision, dim=grid.n)
    D = op.dim
    I = np.eye(D, dtype=complex)
    rows = []
    for lam in np.asarray(lam_samples, dtype=complex):
        if sector is not None and not sector.contains(lam):
            raise InputError(f"lambda sample {lam} lies outside the sector")
        R = np.linalg.solve(op.matrix - lam * I, I)
        G = _quantize_matrix_symbol(par, grid, lam)
        rows.append((complex(lam), op.weighted_opnorm(R - G)))
    finite = [(abs(l), v) for l, v in rows if v > 0 and np.isfinite(v) and abs(l) > 0]
    if len(finite) >= 3:
        slope = float(np.polyfit(np.log([a for a, _ in finite]),
                                 np.log([v for _, v in finite]), 1)[0])
    else:
        slope = float("nan")
    return PvRResult(rows=rows, fitted_slope=slope, N=N)
