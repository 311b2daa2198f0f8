"""Static figure rendering for the report path.

Every CSV a pipeline emits gets a companion PNG rendered here.  Figures are
plain matplotlib (Agg backend), saved to files only; there is no interactive
plotting surface.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "render_sweep",
    "render_probe",
    "render_trajectory",
    "render_hinfty",
    "render_diagonalize",
    "render_minors",
]

_FIGSIZE = (6.0, 4.0)


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
    return path


def render_sweep(sweep_rows, path, title="resolvent sweep"):
    """Log-log resolvent norms against |lambda|."""
    lams = np.array([abs(complex(r[0], r[1])) if not isinstance(r[0], complex)
                     else abs(r[0]) for r in sweep_rows])
    plain = np.array([r[2] if len(r) > 3 else r[1] for r in sweep_rows])
    wb = np.array([r[3] if len(r) > 3 else r[2] for r in sweep_rows])
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    good = (lams > 0) & np.isfinite(plain)
    ax.loglog(lams[good], plain[good], "o-", ms=3, label="resolvent norm")
    ax.loglog(lams[good], wb[good], "s--", ms=3,
              label="bracket-weighted norm")
    ax.set_xlabel(r"$|\lambda|$")
    ax.set_ylabel("operator norm")
    ax.legend()
    ax.set_title(title)
    return _save(fig, path)


def render_probe(probe, path):
    """Per-shell maxima of a decay probe with its fitted slope line."""
    shells = {}
    for xin, _, _, _, v in probe.samples:
        key = round(float(xin), 12)
        shells[key] = max(shells.get(key, 0.0), v)
    xs = np.sqrt(1.0 + np.array(sorted(shells)) ** 2)
    ys = np.array([shells[k] for k in sorted(shells)])
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    nz = ys > 0
    ax.loglog(xs[nz], ys[nz], "o-", ms=4, label="max normalized value")
    if np.isfinite(probe.fitted_slope) and nz.sum() >= 2:
        ref = ys[nz][0] * (xs[nz] / xs[nz][0]) ** probe.fitted_slope
        ax.loglog(xs[nz], ref, "k--", lw=1,
                  label=f"slope {probe.fitted_slope:.2f}")
    ax.set_xlabel(r"$\langle\xi\rangle$")
    ax.set_ylabel("normalized value")
    ax.set_title(f"decay probe: {probe.quantity} (N={probe.N})")
    ax.legend()
    return _save(fig, path)


def render_trajectory(traj, path):
    """Component norms of the evolution over time."""
    comp = np.linalg.norm(traj.coeffs, axis=2)    # (T, 3)
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    labels = ("w", "v_t", "L^{1/2} v")
    for c in range(3):
        ax.semilogy(traj.times, np.maximum(comp[:, c], 1e-300),
                    label=f"component {labels[c]}")
    total = np.linalg.norm(traj.coeffs.reshape(len(traj.times), -1), axis=1)
    ax.semilogy(traj.times, np.maximum(total, 1e-300), "k-", lw=2,
                label="state energy")
    ax.set_xlabel("t")
    ax.set_ylabel("mode-space norm")
    ax.set_title("plate evolution")
    ax.legend()
    return _save(fig, path)


def render_hinfty(per_function, path, M_estimate=None):
    """Per-function ratio bars for the calculus bound probe."""
    names = [p["name"] for p in per_function]
    ratios = [p["ratio"] for p in per_function]
    fig, ax = plt.subplots(figsize=(max(6.0, 0.45 * len(names)), 4.0))
    ax.bar(range(len(names)), ratios, color="tab:blue")
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylabel(r"$\|f(A)\| / \|f\|_\infty$")
    title = "calculus bound probe"
    if M_estimate is not None:
        ax.axhline(M_estimate, color="tab:red", ls="--", lw=1)
        title += f" (M = {M_estimate:.3f})"
    ax.set_title(title)
    return _save(fig, path)


def render_diagonalize(rows, path):
    """Diagonal magnitudes and off-diagonal residuals per shell."""
    rows = list(rows)
    cols = sorted({int(r[1]) for r in rows})
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for j in cols:
        xs = np.array([np.sqrt(1 + r[0] ** 2) for r in rows if int(r[1]) == j])
        d = np.array([r[2] for r in rows if int(r[1]) == j])
        res = np.array([r[3] for r in rows if int(r[1]) == j])
        order = np.argsort(xs)
        ax.loglog(xs[order], d[order], "o-", ms=3, label=f"|d_{j + 1}|")
        nz = res[order] > 0
        if nz.any():
            ax.loglog(xs[order][nz], res[order][nz], "x--", ms=3,
                      label=f"offdiag resid col {j + 1}")
    ax.set_xlabel(r"$\langle\xi\rangle$")
    ax.set_ylabel("magnitude")
    ax.set_title("diagonalization")
    ax.legend(fontsize=7)
    return _save(fig, path)


def render_minors(rows, path):
    """Cross-validation error of the closed-form corner minors."""
    errs = np.array([r[-1] for r in rows])
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.semilogy(np.arange(len(errs)), np.maximum(errs, 1e-18), "o", ms=3)
    ax.set_xlabel("draw")
    ax.set_ylabel("relative error")
    ax.set_title("closed-form vs generic corner minors")
    return _save(fig, path)
