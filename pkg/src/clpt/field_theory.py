"""Saddle-point evaluation of the constrained partition function beyond the
speed limit.

The landscape is expanded to second order around a reference protocol and
written in the Hessian eigenbasis,

    I[x] = I + (1/2) sum_n lam_n (x1_n + x_n)^2,

with ``lam = T^2 lambda`` and ``b = T b_n`` (the duration factors are
absorbed). Protocols are weighted by ``exp(-(kappa L / 2) sum_n (x0_n +
x_n)^2)`` and restricted to ``I[x] = 0``. After integrating out the modes,
the generating function is dominated by the stationary point of

    Omega(y) = kappa (-I y + (1/2) sum_n dx_n^2 / (1 + lam_n y)),
    dx_n = x0_n - x1_n - k_n / (kappa L),

on the pole-free interval of the imaginary axis.
"""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.stats import linregress

#: kappa of the Gaussian stand-in for the box constraint |s| <= 1
BOX_KAPPA = 3.0


def gaussian_boundary_moments():
    """First two moments shared by uniform[-1, 1] and exp(-3 s^2 / 2)."""
    return 0.0, 1.0 / 3.0


def r0(x):
    return (1 + x) / (1 + x * x)


@dataclass
class SpectralData:
    """Expansion data in the Hessian eigenbasis, duration factors absorbed.

    ``lam`` and ``b`` are ``T^2 lambda_n`` and ``T b_n``; ``x0`` holds the
    eigenbasis coordinates of the reference protocol and ``x1 = b / lam``.
    ``excluded`` flags modes with ``|lam| < lam_tol``: their ``x1`` is set
    to zero and they are left out of the completed-square constant.
    """

    T: float
    lam: np.ndarray
    b: np.ndarray
    x0: np.ndarray
    x1: np.ndarray
    c: float
    I: float
    n_plus: int
    kappa: float = BOX_KAPPA
    parity: np.ndarray = None
    excluded: np.ndarray = None
    reconstruction_error: float = 0.0

    @property
    def L(self):
        return self.lam.size

    def with_kappa(self, kappa):
        if not kappa > 0:
            raise ValueError("kappa must be positive")
        out = SpectralData(**{k: getattr(self, k) for k in self.__dataclass_fields__})
        out.kappa = float(kappa)
        return out

    def to_csv(self, path):
        rows = np.column_stack([np.arange(1, self.L + 1), self.lam, self.b, self.x0, self.x1])
        np.savetxt(path, rows, delimiter=",", header="n,lambda,b,x0,x1", comments="", fmt="%.17g")


def build_spectral_data(coeffs, spectrum, kappa=BOX_KAPPA, lam_tol=1e-14, n_plus_tol=1e-3):
    """Project expansion coefficients on the Hessian eigenbasis.

    Parameters
    ----------
    coeffs : ExpansionCoefficients
        Order >= 2 coefficients at the reference protocol.
    spectrum : HessianSpectrum
        Eigenpairs of the same kernel.
    n_plus_tol : float
        Positive eigenvalues above ``n_plus_tol * lambda_max`` count as
        persistently positive.
    """
    L = coeffs.L
    if spectrum.L != L:
        raise ValueError(f"spectrum has L={spectrum.L}, coefficients L={L}")
    if coeffs.center is None:
        raise ValueError("coefficients carry no center protocol")
    T = coeffs.T
    f = spectrum.eigenfunctions
    lam = T**2 * spectrum.eigenvalues
    b = T * (f @ coeffs.b) / L
    x0 = f @ coeffs.center / L
    err = float(np.abs(x0 @ f - coeffs.center).max())
    excluded = np.abs(lam) < lam_tol
    x1 = np.where(excluded, 0.0, b / np.where(excluded, 1.0, lam))
    I = float(coeffs.c - 0.5 * np.sum(b[~excluded] ** 2 / lam[~excluded]))
    ev = spectrum.eigenvalues
    n_plus = int(np.sum(ev > n_plus_tol * ev.max()))
    parity = np.array([spectrum.parity(n) for n in range(L)])
    return SpectralData(T, lam, b, x0, x1, float(coeffs.c), I, n_plus, float(kappa),
                        parity, excluded, err)


def _dx(data, k=None):
    dx = data.x0 - data.x1
    if k is not None:
        dx = dx - np.asarray(k, dtype=float) / (data.kappa * data.L)
    return dx


def saddle_bracket(lam):
    """Open interval (-1/lam_+, 1/|lam_-|) free of the poles -1/lam_n."""
    lam = np.asarray(lam, dtype=float)
    pos, neg = lam[lam > 0], lam[lam < 0]
    if pos.size == 0 or neg.size == 0:
        raise ValueError("the saddle needs eigenvalues of both signs")
    return -1.0 / pos.max(), -1.0 / neg.min()


def _weighted(data, k=None, rel_tol=1e-12):
    """Modes with a nonzero displacement; the others drop out of Omega
    exactly (their terms vanish identically away from the poles)."""
    dx = _dx(data, k)
    keep = np.abs(dx) > rel_tol * max(np.abs(dx).max(), 1e-300)
    return data.lam[keep], dx[keep] ** 2


def omega(y, data, k=None):
    """Exponent restricted to the imaginary axis, z = i y."""
    lam, dx2 = _weighted(data, k)
    den = 1.0 + lam * y
    if np.any(den <= 0):
        raise ValueError(f"y={y} lies on or beyond a pole")
    return data.kappa * (-data.I * y + 0.5 * np.sum(dx2 / den))


def omega_derivatives(y, data, k=None):
    """(Omega', Omega'') at y."""
    lam, dx2 = _weighted(data, k)
    den = 1.0 + lam * y
    d1 = data.kappa * (-data.I - 0.5 * np.sum(dx2 * lam / den**2))
    d2 = data.kappa * np.sum(dx2 * lam**2 / den**3)
    return d1, d2


@dataclass
class SaddlePoint:
    """Dominant point of the y integral.

    ``kind`` is ``"saddle"`` for an interior stationary point and
    ``"branch"`` when Omega is monotone on the interval (the extreme mode
    carries no displacement) and the integral is dominated by the branch
    point at the interval end; ``residual`` is Omega' there.
    """

    y: float
    bracket: tuple
    residual: float
    curvature: float
    kind: str = "saddle"

    @property
    def inside(self):
        lo, hi = self.bracket
        if self.kind == "branch":
            return lo <= self.y <= hi
        return lo < self.y < hi


def solve_saddle(data, k=None, rtol=1e-10):
    """Minimizer of the convex Omega(y) on the pole-free interval.

    Omega' increases monotonically on the interval, so the root is
    bracketed by walking geometrically towards the poles and then polished
    with Brent's method. If Omega' keeps one sign up to a pole that carries
    no weight, the minimum sits on that end (kind ``"branch"``).
    """
    lo, hi = saddle_bracket(data.lam)
    g = lambda y: omega_derivatives(y, data, k)[0]
    width = hi - lo
    a = b = None
    for p in range(1, 80):
        eps = width * 2.0**-p
        if a is None and g(lo + eps) < 0:
            a = lo + eps
        if b is None and g(hi - eps) > 0:
            b = hi - eps
        if a is not None and b is not None:
            break
    if a is None and b is None:
        raise RuntimeError("Omega' vanishes identically on the interval")
    if a is None or b is None:
        lam, _ = _weighted(data, k)
        end = lo if a is None else hi
        pole_weighted = np.any(np.isclose(-1.0 / lam[lam != 0], end, rtol=1e-12, atol=0))
        if pole_weighted:
            raise RuntimeError("Omega' does not change sign although both poles carry weight")
        d1, d2 = omega_derivatives(end, data, k)
        return SaddlePoint(float(end), (lo, hi), float(d1), float(d2), "branch")
    y = brentq(g, a, b, xtol=1e-15 * max(1.0, abs(a), abs(b)), rtol=4 * np.finfo(float).eps,
               maxiter=500)
    d1, d2 = omega_derivatives(y, data, k)
    lam, dx2 = _weighted(data, k)
    scale = data.kappa * (abs(data.I) + 0.5 * np.sum(np.abs(dx2 * lam / (1 + lam * y) ** 2)))
    if abs(d1) > rtol * scale:
        raise RuntimeError(f"saddle residual {d1:.3g} too large")
    sp = SaddlePoint(float(y), (lo, hi), float(d1), float(d2))
    assert sp.inside
    return sp


def single_mode_saddle(I, lam, dx):
    """Closed-form stationary point for one mode: I = -(1/2) dx^2 lam / (1 + lam y)^2.

    Needs ``lam * I < 0``; returns the root with ``1 + lam y > 0``.
    """
    ratio = -0.5 * dx**2 * lam / I
    if not ratio > 0:
        raise ValueError("no real stationary point: need lam and I of opposite sign")
    return (math.sqrt(ratio) - 1.0) / lam


@dataclass
class QPrediction:
    leading: float
    corrected: float
    saddle: SaddlePoint
    variances: np.ndarray          # per-mode <x_n^2> - <x_n>^2 of the saddle approximation
    means: np.ndarray              # <x_n>

    @property
    def difference(self):
        return self.corrected - self.leading


def mode_moments(data, saddle=None):
    """Mean and variance of each mode coordinate at the saddle.

    With ``log G = L Omega(y*(k), k) - k.x1`` the stationarity of Omega in
    y removes the implicit dependence from the first derivative, and the
    second one picks up ``-Omega_ky^2 / Omega_yy`` from the shift of y*.
    """
    sp = solve_saddle(data) if saddle is None else saddle
    L, kappa = data.L, data.kappa
    u = data.lam * sp.y
    dx = _dx(data)
    idle = np.abs(dx) <= 1e-12 * max(np.abs(dx).max(), 1e-300)
    dx = np.where(idle, 0.0, dx)
    with np.errstate(divide="ignore", invalid="ignore"):
        shift = np.where(idle, 0.0, dx / (1 + u))
        mean = -data.x1 - shift
        omega_kk = 1.0 / (kappa * L**2 * (1 + u))
        omega_ky = np.where(idle, 0.0, dx * data.lam / (L * (1 + u) ** 2))
        var = L * (omega_kk - omega_ky**2 / sp.curvature)
    return mean, var, sp


def q_prediction(data):
    """Order parameter of the continuous ensemble beyond the speed limit.

    ``leading`` is ``(1/kappa)(1/L) sum_n r0(lam_n y*)``; ``corrected`` is
    the sum of the per-mode second cumulants of the saddle approximation,
    which adds the response of y* to the sources.
    """
    mean, var, sp = mode_moments(data)
    leading = float(np.mean(r0(data.lam * sp.y)) / data.kappa)
    return QPrediction(leading, float(var.sum()), sp, var, mean)


def symmetry_halved_q(data, saddle=None):
    """Heuristic: keep only modes whose eigenfunction is odd under
    t -> T - t (the even ones are assumed frozen by higher orders).

    Approaches one half of the leading prediction when the modes split
    evenly; this is an estimate, not a derivation.
    """
    if data.parity is None:
        raise ValueError("spectral data carry no parity information")
    sp = solve_saddle(data) if saddle is None else saddle
    keep = data.parity < 0
    return float(np.sum(r0(data.lam[keep] * sp.y)) / (data.kappa * data.L))


# ---------------------------------------------------------------- entropies


def _cell_values(protocol, L=None):
    if callable(protocol) and not hasattr(protocol, "values"):
        if L is None:
            raise ValueError("a callable protocol needs L and T; pass samples instead")
        return np.asarray(protocol(L), dtype=float)
    values = getattr(protocol, "values", protocol)
    return np.asarray(values, dtype=float)


def coarse_grain_entropy(protocol, N):
    """Shannon entropy (nats) of N bang-bang steps coarse-grained to ``protocol``.

    ``protocol`` is a Protocol or an array of cell values in [-1, 1].
    """
    s = _cell_values(protocol)
    if np.any(np.abs(s) > 1 + 1e-12):
        raise ValueError("protocol values outside [-1, 1]")
    s = np.clip(s, -1.0, 1.0)
    h = 0.0
    for p in ((1 + s) / 2, (1 - s) / 2):
        h = h - np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return float(N * np.mean(h))


def tsallis_entropy(protocol, N, alpha=1.0):
    """Quadratic entropy (N alpha / 2)(1 - <s^2>)."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    s = _cell_values(protocol)
    return float(0.5 * N * alpha * (1 - np.mean(s**2)))


def bang_bang_kappa(N, L, alpha=1.0):
    return alpha * N / L


# ---------------------------------------------------------------- q_BB scaling


@dataclass
class QBBScaling:
    T: np.ndarray
    dT: np.ndarray
    means: list                       # <x_n> per T
    x0: list
    n_plus: np.ndarray
    dqbb: np.ndarray                  # q_BB - q_BB,0
    qbb0: np.ndarray
    intercept: float
    slope: float
    r2: float
    exponent: float = float("nan")    # power fitted to the linear part
    saddles: list = field(default_factory=list)

    def soft_mode_ratio(self, i=0):
        """<x_n> / (-x0_n) for the vanishing modes at grid point ``i``,
        weighted by x0_n^2 (modes with x0_n = 0 carry no information)."""
        m, x0, npl = self.means[i], self.x0[i], self.n_plus[i]
        w = x0[npl:] ** 2
        return float(np.sum(w * m[npl:] / -x0[npl:]) / w.sum())


def qbb_scaling(datasets, T_qsl):
    """First moments and the bang-bang order parameter shift over a T grid.

    ``datasets`` are SpectralData above the speed limit. Returns the curve
    ``q_BB - q_BB,0 = -sum_n (2 x0_n <x_n> + <x_n>^2)``, a linear fit
    against ``T - T_qsl`` and the exponent of the positive-mode part.
    """
    T = np.array([d.T for d in datasets])
    if np.any(T <= T_qsl):
        raise ValueError("all durations must exceed the speed limit")
    means, saddles, dq, q0, lin = [], [], [], [], []
    for d in datasets:
        m, _, sp = mode_moments(d)
        means.append(m)
        saddles.append(sp)
        dq.append(-np.sum(2 * d.x0 * m + m**2))
        q0.append(1 - np.sum(d.x0**2))
        npl = d.n_plus
        lin.append(-np.sum(2 * d.x0[:npl] * m[:npl] + m[:npl] ** 2))
    dT = T - T_qsl
    dq = np.array(dq)
    fit = linregress(dT, dq) if T.size > 1 else None
    lin = np.abs(np.array(lin))
    exponent = float("nan")
    ok = lin > 0
    if ok.sum() > 1:
        exponent = float(linregress(np.log(dT[ok]), np.log(lin[ok])).slope)
    return QBBScaling(T, dT, means, [d.x0 for d in datasets], np.array([d.n_plus for d in datasets]),
                      dq, np.array(q0),
                      float(fit.intercept) if fit else float("nan"),
                      float(fit.slope) if fit else float("nan"),
                      float(fit.rvalue**2) if fit else float("nan"), exponent, saddles)


def write_saddle_csv(rows, path):
    """rows: iterable of (T, y_star, residual)."""
    np.savetxt(path, np.atleast_2d(np.asarray(list(rows), dtype=float)), delimiter=",",
               header="T,y_star,residual", comments="", fmt="%.17g")


def write_predictions_csv(rows, path):
    """rows: iterable of (T, q_pred_leading, q_pred_corrected, dqbb_pred)."""
    np.savetxt(path, np.atleast_2d(np.asarray(list(rows), dtype=float)), delimiter=",",
               header="T,q_pred_leading,q_pred_corrected,dqbb_pred", comments="", fmt="%.17g")
