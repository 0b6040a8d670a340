"""Diagnostics of sampled optimal sets: covariance spectra, run distances,
symmetry defects and one-mode deformations of a center protocol."""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.spatial.distance import cdist

from ..problems import PiecewiseControl, Protocol
from ..propagation import infidelity_segments


def covariance_spectrum(window):
    """Eigenvalues (descending) of <s_i s_j> - <s_i><s_j>.

    ``window`` is an (n, L) array of protocols, or (R, n, L) for several
    runs, in which case the per-run covariances are averaged.
    """
    w = np.asarray(window, dtype=float)
    if w.ndim == 2:
        w = w[None]
    if w.ndim != 3 or w.shape[1] < 2:
        raise ValueError("need at least two protocols per window")
    centered = w - w.mean(axis=1, keepdims=True)
    C = np.einsum("rni,rnj->ij", centered, centered) / (w.shape[0] * w.shape[1])
    return np.linalg.eigvalsh(C)[::-1]


def protocol_distance(a, b):
    """Root-mean-square distance sqrt((1/L) sum_i (a_i - b_i)^2)."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.sqrt(np.mean((a - b) ** 2)))


def run_distance(ens_a, ens_b):
    """Smallest distance between any protocol of one run and any of another."""
    a, b = np.atleast_2d(ens_a), np.atleast_2d(ens_b)
    if a.shape[1] != b.shape[1]:
        raise ValueError("runs have different numbers of steps")
    return float(cdist(a, b).min() / np.sqrt(a.shape[1]))


def mean_run_distance(runs, n_samples=None):
    """Mean of :func:`run_distance` over all pairs of runs, each truncated
    to its first ``n_samples`` protocols."""
    runs = [np.atleast_2d(r)[:n_samples] for r in runs]
    d = [run_distance(runs[i], runs[j]) for i in range(len(runs)) for j in range(i + 1, len(runs))]
    return float(np.mean(d))


def symmetry_defect(values):
    """Distance between s(t) and its symmetry image -s(T - t)."""
    s = np.atleast_2d(values)
    return np.sqrt(np.mean((s + s[:, ::-1]) ** 2, axis=1))


@dataclass
class DeformationScan:
    x: np.ndarray
    infidelity: np.ndarray
    out_of_bounds: np.ndarray
    minima: list                    # (x, I) pairs, interior grid minima refined


def deformation_scan(problem, center, spectrum, n, x_range, n_grid=201, L=None):
    """Exact infidelity along ``center + x f^(n)``.

    ``center`` is a Protocol or a PiecewiseControl (the mode is added per
    grid cell, so off-grid switching times are kept exact). Points where
    the deformed control leaves [-1, 1] are flagged, not dropped. Local
    minima of the grid scan are refined with Brent's method.
    """
    f = spectrum.eigenfunctions[n]
    L = f.size if L is None else L
    pc = PiecewiseControl.from_protocol(center) if isinstance(center, Protocol) else center
    cell, value, dur = pc.segments(L)

    def curve(x):
        x = np.atleast_1d(x)
        vals = value[None, :] + x[:, None] * f[cell][None, :]
        return infidelity_segments(problem, vals, dur), np.any(np.abs(vals) > 1 + 1e-12, axis=1)

    xs = np.linspace(x_range[0], x_range[1], n_grid)
    I, oob = curve(xs)
    minima = []
    for k in range(1, n_grid - 1):
        if I[k] <= I[k - 1] and I[k] < I[k + 1]:
            res = minimize_scalar(lambda x: curve(x)[0][0], bracket=(xs[k - 1], xs[k], xs[k + 1]),
                                  tol=1e-12)
            minima.append((float(res.x), float(res.fun)))
    return DeformationScan(xs, I, oob, minima)
