"""Linear and quadratic stability of candidate optima, and tracing of the
bang / zero / bang protocol family as the duration grows."""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm
from scipy.optimize import brentq, minimize

from .expansions import taylor_coefficients_at
from .problems import PiecewiseControl, Protocol
from .propagation import infidelity_exact, infidelity_gradient

# ---------------------------------------------------------------- linear


@dataclass
class StabilityReport:
    stable: bool
    violating_indices: np.ndarray
    tolerance: float


def linear_stability(b, center, rel_tol=1e-8, bound_tol=1e-12):
    """First-order stability of a protocol against admissible perturbations.

    Interior values need ``b_i = 0``; values on the bound need the gradient
    to point outward, ``-sign(b_i) == sign(s_i)``. ``|b_i|`` below
    ``rel_tol * max|b|`` counts as zero.
    """
    b = np.asarray(b, dtype=float)
    s = center.values if isinstance(center, Protocol) else np.asarray(center, dtype=float)
    if b.shape != s.shape:
        raise ValueError(f"b has shape {b.shape}, center has {s.shape}")
    tol = rel_tol * (np.abs(b).max() if b.size else 0.0)
    nonzero = np.abs(b) > tol
    on_bound = np.abs(s) >= 1.0 - bound_tol
    bad = np.where(on_bound, nonzero & (b * s > 0), nonzero)
    idx = np.flatnonzero(bad)
    return StabilityReport(idx.size == 0, idx, tol)


# ---------------------------------------------------------------- quadratic


@dataclass
class HessianSpectrum:
    """Eigenpairs of the kernel (1/L) J, eigenvalues descending.

    ``eigenfunctions[n]`` is normalized so ``(1/L) sum_i f_i^2 = 1``, with
    its largest-magnitude entry positive.
    """

    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    T: float = float("nan")
    center: object = None

    @property
    def L(self):
        return self.eigenvalues.size

    def branch(self, sign=+1):
        """Magnitudes of the positive (``+1``) or negative (``-1``)
        eigenvalues, largest first."""
        lam = self.eigenvalues * sign
        return np.sort(lam[lam > 0])[::-1]

    def n_significant(self, rel_tol=1e-3):
        """Number of eigenvalues above ``rel_tol * lambda_max``."""
        return int(np.sum(self.eigenvalues > rel_tol * self.eigenvalues.max()))

    def n_vanishing(self, rel_tol=1e-3):
        return int(np.sum(np.abs(self.eigenvalues) < rel_tol * np.abs(self.eigenvalues).max()))

    def parity(self, n):
        """Overlap of eigenfunction n with its time reflection i -> L+1-i."""
        f = self.eigenfunctions[n]
        return float(f @ f[::-1] / (f @ f))

    def softest(self):
        """Index of the eigenvalue closest to zero."""
        return int(np.argmin(np.abs(self.eigenvalues)))


def hessian_spectrum(J, L=None, T=float("nan"), center=None):
    """Eigen-decomposition of the discretized kernel (1/L) J."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise ValueError("J must be square")
    L = J.shape[0] if L is None else int(L)
    if L != J.shape[0]:
        raise ValueError(f"L={L} does not match J of size {J.shape[0]}")
    asym = np.abs(J - J.T).max()
    if asym > 1e-10 * max(1.0, np.abs(J).max()):
        raise ValueError(f"J is not symmetric (max asymmetry {asym:.3g})")
    w, v = np.linalg.eigh(0.5 * (J + J.T) / L)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order].T * math.sqrt(L)
    pick = np.abs(v).argmax(axis=1)
    v *= np.sign(v[np.arange(L), pick])[:, None]
    return HessianSpectrum(w, v, T, center)


def spectrum_at(problem, center, L=None):
    """Hessian spectrum of the L-step landscape at a protocol or piecewise center."""
    co = taylor_coefficients_at(problem, center, order=2, L=L)
    return hessian_spectrum(co.J, T=co.T, center=center), co


# ---------------------------------------------------------------- s_Delta family


def s_delta(T, delta, L):
    """Bang / zero / bang protocol on an L-step grid.

    ``+1`` before ``T/2 - delta``, ``0`` inside the central window and
    ``-1`` after ``T/2 + delta``, sampled at step midpoints; midpoints that
    land exactly on a window edge belong to the window.
    """
    if not 0 <= delta <= T / 2 * (1 + 1e-12):
        raise ValueError(f"delta must lie in [0, T/2] = [0, {T / 2}], got {delta}")
    t = (np.arange(L) + 0.5) * (T / L)
    eps = 1e-12 * max(T, 1.0)
    values = np.zeros(L)
    values[t < T / 2 - delta - eps] = 1.0
    values[t > T / 2 + delta + eps] = -1.0
    return Protocol(values, T)


def s_delta_control(T, delta):
    """Continuum version of :func:`s_delta` with exact switching times."""
    if not 0 <= delta <= T / 2 * (1 + 1e-12):
        raise ValueError(f"delta must lie in [0, T/2], got {delta}")
    delta = min(delta, T / 2)
    return PiecewiseControl([0, T / 2 - delta, T / 2 + delta, T], [1.0, 0.0, -1.0])


def _segment_products(problem, T, delta):
    tau = T / 2 - delta
    Ap = problem.m0 + problem.m1
    Am = problem.m0 - problem.m1
    Ep, Em, E0 = expm(tau * Ap), expm(tau * Am), expm(2 * delta * problem.m0)
    return Ap, Am, Ep, Em, E0


def delta_infidelity(problem, T, delta):
    """Exact infidelity of the continuum bang / zero / bang protocol."""
    _, _, Ep, Em, E0 = _segment_products(problem, T, delta)
    return 1.0 - 1.0 / problem.d - 0.5 * problem.n_star @ Em @ E0 @ Ep @ problem.n0


def delta_slope(problem, T, delta):
    """dI/dDelta along the family (signed stability measure).

    Widening the window by dDelta changes the control by ``-1`` near the
    left edge and ``+1`` near the right edge, so this is ``b`` integrated
    against that perturbation; a minimum in Delta is where the slope turns
    from negative to positive.
    """
    Ap, Am, Ep, Em, E0 = _segment_products(problem, T, delta)
    m0 = problem.m0
    dM = -Am @ Em @ E0 @ Ep + 2 * Em @ m0 @ E0 @ Ep - Em @ E0 @ Ap @ Ep
    return -0.5 * problem.n_star @ dM @ problem.n0


def delta_curvature(problem, T, delta):
    """d^2 I / dDelta^2 along the family.

    At ``delta = 0`` the slope vanishes identically (the two edge
    perturbations cancel where the gradient is continuous), so the
    curvature decides the stability of the single-switch protocol there.
    """
    Ap, Am, Ep, Em, E0 = _segment_products(problem, T, delta)
    m0 = problem.m0
    X = Em @ E0 @ Ep
    dX = -Am @ X + 2 * Em @ m0 @ E0 @ Ep - Em @ E0 @ Ap @ Ep
    d2 = (-Am @ dX
          + 2 * (-Am @ Em @ m0 @ E0 @ Ep + 2 * Em @ m0 @ m0 @ E0 @ Ep - Em @ m0 @ E0 @ Ap @ Ep)
          - (-Am @ Em @ E0 @ Ap @ Ep + 2 * Em @ m0 @ E0 @ Ap @ Ep - Em @ E0 @ Ap @ Ap @ Ep))
    return -0.5 * problem.n_star @ d2 @ problem.n0


@dataclass
class DeltaPoint:
    """Stationary widths at one duration.

    ``minima`` and ``maxima`` hold every stationary width of the family,
    ``traced`` the minima reached by continuation (one before the
    bifurcation, two after) and ``central`` the stationary width the two
    branches split from, followed on its own.
    """

    T: float
    minima: list
    maxima: list
    traced: list
    infidelities: list
    central: float = float("nan")
    terminated: str = ""


@dataclass
class DeltaCurve:
    points: list = field(default_factory=list)
    termination: str = ""

    @property
    def T(self):
        return np.array([p.T for p in self.points])

    def rows(self):
        """(T, branch, delta, infidelity) tuples; branches '0', '-', '+'."""
        out = []
        for p in self.points:
            labels = ["0"] if len(p.traced) == 1 else ["-", "+"]
            for lab, d, inf in zip(labels, p.traced, p.infidelities):
                out.append((p.T, lab, d, inf))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "branch", "delta", "infidelity"])
            for T, lab, d, inf in self.rows():
                w.writerow(["%.17g" % T, lab, "%.17g" % d, "%.17g" % inf])


def _scan_roots(problem, T, n_scan, lo=0.0, hi=None):
    """Minima and maxima of the family infidelity in Delta on [lo, hi].

    The slope vanishes at ``delta = 0`` for every T, so the sign just
    right of zero is taken from the curvature there.
    """
    hi = T / 2 if hi is None else hi
    grid = np.linspace(lo, hi, n_scan + 1)
    phi = np.array([delta_slope(problem, T, d) for d in grid])
    f = lambda d: delta_slope(problem, T, d)
    if lo == 0.0:
        phi[0] = delta_curvature(problem, T, 0.0)
        grid[0] = 1e-9 * grid[1]
        phi[0] = f(grid[0]) if abs(f(grid[0])) > 0 else phi[0]
    minima, maxima = [], []
    if lo == 0.0 and phi[0] > 0:
        minima.append(0.0)
    if hi == T / 2 and phi[-1] < 0:
        minima.append(T / 2)
    for k in range(n_scan):
        a, b = phi[k], phi[k + 1]
        if a < 0 < b:
            minima.append(brentq(f, grid[k], grid[k + 1], xtol=1e-14))
        elif a > 0 > b:
            maxima.append(brentq(f, grid[k], grid[k + 1], xtol=1e-14))
    return sorted(minima), sorted(maxima)


def _continue(prev, minima, maxima):
    """Follow previously traced widths to the new stationary points."""
    traced = []
    for p in prev:
        dmin = min(minima, key=lambda d: abs(d - p))
        if maxima:
            dmax = min(maxima, key=lambda d: abs(d - p))
            if abs(dmax - p) < abs(dmin - p):
                left = [d for d in minima if d < dmax]
                right = [d for d in minima if d > dmax]
                if left and right:
                    traced += [left[-1], right[0]]
                    continue
        traced.append(dmin)
    return sorted(set(traced))


def trace_delta(problem, T_grid, n_scan=200):
    """Follow the locally stable window widths of the bang / zero / bang
    family along an increasing T grid.

    Each T is scanned on ``n_scan`` intervals for sign changes of
    :func:`delta_slope`, refined with Brent's method, and the widths traced
    at the previous T are continued to the nearest new minimum. When a
    maximum appears closer than any minimum, the traced width has split and
    both flanking minima are followed. The trace stops when the only traced
    width is the whole protocol (``delta = T/2``).
    """
    T_grid = np.asarray(T_grid, dtype=float)
    if np.any(np.diff(T_grid) <= 0):
        raise ValueError("T_grid must be strictly increasing")
    curve = DeltaCurve()
    prev, centrals = [], []
    for T in T_grid:
        minima, maxima = _scan_roots(problem, T, n_scan)
        if not prev and minima:
            infs = [delta_infidelity(problem, T, d) for d in minima]
            prev = [minima[int(np.argmin(infs))]]
        traced = _continue(prev, minima, maxima)
        # the symmetric stationary width stays a simple root of the slope
        # away from the pitchfork; follow it by linear extrapolation
        guess = 2 * centrals[-1] - centrals[-2] if len(centrals) > 1 else traced[0]
        central = min(minima + maxima, key=lambda d: abs(d - guess))
        centrals.append(central)
        infs = [delta_infidelity(problem, T, d) for d in traced]
        pt = DeltaPoint(float(T), minima, maxima, traced, infs, central)
        curve.points.append(pt)
        prev = traced
        if traced == [T / 2] and T > 0:
            pt.terminated = curve.termination = (
                f"window covers the whole protocol at T={T:.6g}; no interior stable width")
            break
    return curve


# ---------------------------------------------------------------- transitions


def critical_time_linear(problem, T_lo, T_hi):
    """Duration at which the single-switch protocol (delta = 0) loses
    linear stability: the gradient at the switch changes its slope, which
    is the sign change of the family curvature at delta = 0."""
    f = lambda T: delta_curvature(problem, T, 0.0)
    return brentq(f, T_lo, T_hi, xtol=1e-12)


def _stationary_near(problem, T, guess, halfwidth=0.05):
    lo, hi = max(0.0, guess - halfwidth), min(T / 2, guess + halfwidth)
    minima, maxima = _scan_roots(problem, T, 100, lo, hi)
    roots = [d for d in minima + maxima if lo < d < hi] or minima + maxima
    if not roots:
        raise RuntimeError(f"no stationary width near {guess} at T={T}")
    return min(roots, key=lambda d: abs(d - guess))


def stationary_width(problem, T, guess, halfwidth=0.05):
    """Stationary point of the s_Delta family closest to ``guess``."""
    return _stationary_near(problem, T, guess, halfwidth)


def bifurcation_time(problem, lo, hi):
    """Duration where the central width turns from minimum to maximum.

    ``lo`` and ``hi`` are traced points (``DeltaPoint``) on either side of
    the split; the central width is followed by linear interpolation.
    """
    def central(T):
        w = (T - lo.T) / (hi.T - lo.T)
        return _stationary_near(problem, T, (1 - w) * lo.central + w * hi.central)

    def curvature(T):
        return delta_curvature(problem, T, central(T))

    T = brentq(curvature, lo.T, hi.T, xtol=1e-10)
    return T, central(T)


def bifurcation_exponent(problem, T_qsl, delta_qsl, offsets=None):
    """Fit |Delta_pm - Delta_0| ~ (T - T_qsl)^gamma just past the bifurcation."""
    offsets = np.geomspace(1e-3, 3e-2, 8) if offsets is None else np.asarray(offsets)
    split = []
    for dT in offsets:
        T = T_qsl + dT
        lo, hi = max(0.0, delta_qsl - 0.4), min(T / 2, delta_qsl + 0.4)
        minima, maxima = _scan_roots(problem, T, 800, lo, hi)
        centre = min(maxima, key=lambda d: abs(d - delta_qsl)) if maxima else None
        if centre is None:
            raise RuntimeError(f"no split branches at T={T}")
        left = [d for d in minima if d < centre]
        right = [d for d in minima if d > centre]
        if not left or not right:
            raise RuntimeError(f"no split branches at T={T}")
        split.append(0.5 * (right[0] - left[-1]))
    gamma, _ = np.polyfit(np.log(offsets), np.log(split), 1)
    return float(gamma), np.array(split)


def switching_time(problem, T_lo, T_hi):
    """Duration at which the family's stable width reaches the whole
    protocol (the slope at delta = T/2 changes sign)."""
    f = lambda T: delta_slope(problem, T, T / 2)
    return brentq(f, T_lo, T_hi, xtol=1e-12)


def optimize_protocol(problem, T, L, starts=8, seed=0, x0=None, tol=1e-14):
    """Best of several bounded quasi-Newton runs with the exact gradient."""
    rng = np.random.default_rng(seed)
    inits = [] if x0 is None else [np.asarray(x0, dtype=float)]
    inits += [rng.uniform(-1, 1, L) for _ in range(starts)]
    best = None
    for x in inits:
        res = minimize(
            lambda v: (infidelity_exact(problem, Protocol(v, T)),
                       infidelity_gradient(problem, Protocol(v, T))),
            x, jac=True, method="L-BFGS-B", bounds=[(-1, 1)] * L,
            options={"ftol": tol, "gtol": 1e-12, "maxiter": 2000},
        )
        if best is None or res.fun < best.fun:
            best = res
    return Protocol(np.clip(best.x, -1, 1), T), float(best.fun)


@dataclass
class Transitions:
    T_c: float = float("nan")
    T_qsl: float = float("nan")
    T_sb: float = float("nan")
    n_plus: int = -1
    T_sb_hessian: float = float("nan")
    n_vanishing: int = -1
    critical_parity: float = float("nan")
    exponent: float = float("nan")
    unresolved: list = field(default_factory=list)
    curve: DeltaCurve = None
    spectra: dict = field(default_factory=dict)

    def rows(self):
        """(name, T, n_plus) rows; n_plus counts the non-vanishing Hessian
        eigenvalues where a spectrum was taken."""
        plus = {"T_qsl": self.n_plus}
        if self.n_vanishing >= 0:
            plus["T_sb_hessian"] = self.spectra["T_sb"].L - self.n_vanishing
        out = []
        for name in ("T_c", "T_sb", "T_sb_hessian", "T_qsl"):
            v = getattr(self, name)
            if np.isfinite(v):
                out.append((name, v, plus.get(name, "")))
        return out

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["name", "T_value", "n_plus"])
            for name, v, n in self.rows():
                w.writerow([name, "%.17g" % v, n])


def _zero_mode_at_switch(problem, res, L, rel_tol=1e-6):
    """Quadratic side of the switching transition: the duration near
    ``T_sb`` at which the lowest Hessian eigenvalue of ``s = 0`` crosses
    zero on the L-step grid, the number of eigenvalues below
    ``rel_tol * lambda_max`` there and the reflection parity of that mode.
    """
    def lowest(T):
        return spectrum_at(problem, Protocol(np.zeros(L), T))[0].eigenvalues.min()

    lo, hi = res.T_sb - 0.05, res.T_sb + 0.05
    try:
        Tz = brentq(lowest, lo, hi, xtol=1e-12)
    except ValueError:
        res.unresolved.append("T_sb_hessian")
        Tz = res.T_sb
    spec, _ = spectrum_at(problem, Protocol(np.zeros(L), Tz))
    res.T_sb_hessian = float(Tz)
    res.spectra["T_sb"] = spec
    res.n_vanishing = spec.n_vanishing(rel_tol)
    res.critical_parity = spec.parity(spec.softest())


def detect_transitions(problem, T_grid, L=64, n_scan=200, qsl_tol=1e-8, qsl_starts=6):
    """Locate the transitions of the traced optimum on a T grid.

    * ``T_c``: first loss of linear stability of the single-switch protocol.
    * ``T_qsl`` (traced family): the central width turns from minimum to
      maximum and two branches split off. ``n_plus`` counts Hessian
      eigenvalues above ``1e-3 lambda_max`` at the central protocol there.
    * ``T_sb``: the stable width reaches the whole protocol. On the L-step
      grid the lowest Hessian eigenvalue of ``s = 0`` crosses zero close
      by (``T_sb_hessian``); ``n_vanishing`` and ``critical_parity``
      describe the spectrum there. Past ``T_sb`` the shortest grid duration
      with vanishing infidelity is searched by direct optimization.

    Sign changes that the grid does not bracket are listed in
    ``unresolved``.
    """
    T_grid = np.asarray(T_grid, dtype=float)
    curve = trace_delta(problem, T_grid, n_scan)
    res = Transitions(curve=curve)
    slope0 = np.array([delta_curvature(problem, T, 0.0) for T in T_grid])
    k = np.flatnonzero((slope0[:-1] >= 0) & (slope0[1:] < 0))
    if k.size:
        res.T_c = critical_time_linear(problem, T_grid[k[0]], T_grid[k[0] + 1])
    else:
        res.unresolved.append("T_c")

    if curve.termination:
        Ts = curve.T
        last = Ts[-1]
        prev = Ts[-2] if len(Ts) > 1 else T_grid[0]
        try:
            res.T_sb = switching_time(problem, prev, last)
        except ValueError:
            res.unresolved.append("T_sb")
        if np.isfinite(res.T_sb):
            _zero_mode_at_switch(problem, res, L)
        after = T_grid[T_grid > last]
        found = {}

        def solved(k):
            if k not in found:
                found[k] = optimize_protocol(problem, after[k], L, starts=qsl_starts)
            return found[k][1] < qsl_tol

        # the best attainable infidelity does not increase with T, so the
        # first solvable grid point is found by bisection
        if after.size and solved(after.size - 1):
            lo, hi = -1, after.size - 1
            while hi - lo > 1:
                mid = (lo + hi) // 2
                lo, hi = (lo, mid) if solved(mid) else (mid, hi)
            res.T_qsl = float(after[hi])
            spec, _ = spectrum_at(problem, found[hi][0])
            res.spectra["T_qsl"] = spec
            res.n_plus = spec.n_significant()
        else:
            res.unresolved.append("T_qsl")
        return res

    pts = curve.points
    curv = [(delta_curvature(problem, p.T, p.central) if np.isfinite(p.central) and
             0 < p.central < p.T / 2 else np.nan) for p in pts]
    k = [i for i in range(len(pts) - 1) if curv[i] > 0 and curv[i + 1] < 0]
    if not k:
        res.unresolved.append("T_qsl")
        return res
    res.T_qsl, d0 = bifurcation_time(problem, pts[k[0]], pts[k[0] + 1])
    spec, _ = spectrum_at(problem, s_delta_control(res.T_qsl, d0), L=L)
    res.spectra["T_qsl"] = spec
    res.n_plus = spec.n_significant()
    res.critical_parity = spec.parity(spec.softest())
    try:
        res.exponent, _ = bifurcation_exponent(problem, res.T_qsl, d0)
    except RuntimeError:
        res.unresolved.append("exponent")
    return res


def write_spectrum_csv(spectra, path):
    """spectra: iterable of HessianSpectrum; rows (T, n, lambda_n)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["T", "n", "lambda"])
        for spec in spectra:
            for n, lam in enumerate(spec.eigenvalues, start=1):
                w.writerow(["%.17g" % spec.T, n, "%.17g" % lam])
