"""Perturbative expansions of the infidelity landscape.

Two independent routes produce the same polynomial coefficients:

* ``taylor_coefficients_at`` differentiates the lab-frame step propagators
  exactly (block-bidiagonal exponentials) around any piecewise-constant
  center, including centers with breakpoints off the grid.
* ``dyson_coefficients`` expands around ``s = 0`` in the drift frame, where
  the control generator is a smooth function of time, and integrates the
  time-ordered kernels with nested Gauss-Legendre quadrature.

Both return an :class:`ExpansionCoefficients` whose polynomial reads

    I(s) ~ c + dt sum_i b_i ds_i + dt^2/2 sum_ij J_ij ds_i ds_j
             + dt^3/6 sum_ijk K_ijk ds_i ds_j ds_k

with ``ds = s - center`` and ``dt = T / L``.

The module also holds the Magnus expansion of the drift-frame propagator
and the cumulant resummation of the boundary overlap.
"""
import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .problems import PiecewiseControl, Protocol
from .propagation import rotating_generator, step_jets


@dataclass
class ExpansionCoefficients:
    """Polynomial coefficients of the landscape around a center protocol.

    Attributes
    ----------
    c : float
        Infidelity at the center.
    b : ndarray (L,)
        First-order coefficients (gradient divided by dt).
    J : ndarray (L, L) or None
        Second-order coefficients, symmetric.
    K : ndarray (L, L, L) or None
        Third-order coefficients, fully symmetric.
    center : ndarray (L,)
        Cell-averaged center values.
    """

    T: float
    c: float
    b: np.ndarray
    J: np.ndarray = None
    K: np.ndarray = None
    center: np.ndarray = None
    kind: str = "taylor"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        if self.center is None:
            self.center = np.zeros(self.b.size)
        self.center = np.asarray(self.center, dtype=float)

    @property
    def L(self):
        return self.b.size

    @property
    def dt(self):
        return self.T / self.L

    @property
    def order(self):
        if self.K is not None:
            return 3
        return 2 if self.J is not None else 1

    def evaluate(self, values, order=None):
        """Truncated polynomial at one protocol or a batch (..., L)."""
        return evaluate_truncated(self, values, order)

    def to_csv(self, path):
        write_coefficients_csv(self, path)


def evaluate_truncated(coeffs, values, order=None):
    """Evaluate the truncated expansion at ``values`` (shape (..., L))."""
    if isinstance(values, Protocol):
        values = values.values
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != coeffs.L:
        raise ValueError(f"protocol has {values.shape[-1]} steps, coefficients have {coeffs.L}")
    order = coeffs.order if order is None else order
    if order > coeffs.order:
        raise ValueError(f"coefficients only available to order {coeffs.order}")
    ds = values - coeffs.center
    dt = coeffs.dt
    out = coeffs.c + dt * ds @ coeffs.b
    if order >= 2:
        out = out + 0.5 * dt**2 * np.einsum("...i,ij,...j->...", ds, coeffs.J, ds)
    if order >= 3:
        out = out + dt**3 / 6.0 * np.einsum("...i,...j,...k,ijk->...", ds, ds, ds, coeffs.K)
    return out


def _jet_product(a, b):
    """Leibniz product of two normalized jets (r-th entry = d^r / r!)."""
    n = a.shape[0]
    out = np.zeros_like(a)
    for r in range(n):
        for p in range(r + 1):
            out[r] += a[p] @ b[r - p]
    return out


def _cell_jets(problem, center, L, order):
    """Normalized derivative jets of each cell propagator w.r.t. a uniform
    shift of the control inside that cell. Returns (order + 1, L, D, D)."""
    cell, value, dur = center.segments(L)
    raw = step_jets(problem, value, dur, order)
    fact = np.array([math.factorial(r) for r in range(order + 1)], dtype=float)
    raw = raw / fact[:, None, None, None]
    D = problem.dual_dim
    jets = np.zeros((order + 1, L, D, D))
    for i in range(L):
        idx = np.flatnonzero(cell == i)
        acc = raw[:, idx[0]]
        for k in idx[1:]:
            acc = _jet_product(raw[:, k], acc)
        jets[:, i] = acc
    # back to plain derivatives
    return jets * fact[:, None, None, None]


def _contract(problem, a, Q, order):
    """Landscape derivatives from drift-free interaction blocks.

    ``Q[r, i]`` is the r-th derivative of the i-th cell propagator pulled
    back to the initial time, ``a`` the pulled-back target vector.
    Returns (c, g, H, K) with H, K possibly None.
    """
    n0 = problem.n0
    L = Q.shape[1]
    g = -0.5 * np.einsum("a,iab,b->i", a, Q[1], n0)
    H = K = None
    if order >= 2:
        left = np.einsum("a,iab->ib", a, Q[1])      # a^T Q_i
        right = np.einsum("iab,b->ia", Q[1], n0)   # Q_j n0
        H = -0.5 * left @ right.T
        H = np.tril(H, -1)
        H = H + H.T
        H[np.diag_indices(L)] = -0.5 * np.einsum("a,iab,b->i", a, Q[2], n0)
    if order >= 3:
        left2 = np.einsum("a,iab->ib", a, Q[2])
        right2 = np.einsum("iab,b->ia", Q[2], n0)
        # i > j > k: a Q1_i Q1_j Q1_k n0
        mid = np.einsum("ia,jab,kb->ijk", left, Q[1], right)
        i, j, k = np.indices((L, L, L))
        K = np.where((i > j) & (j > k), mid, 0.0)
        # i > j = k and i = j > k
        pair_hi = left @ right2.T                   # a Q1_i Q2_j n0
        pair_lo = left2 @ right.T                   # a Q2_i Q1_j n0
        lower = np.tril(np.ones((L, L), dtype=bool), -1)
        ii, jj = np.nonzero(lower)
        K[ii, jj, jj] = pair_hi[ii, jj]
        K[ii, ii, jj] = pair_lo[ii, jj]
        diag = np.einsum("a,iab,b->i", a, Q[3], n0)
        K[np.arange(L), np.arange(L), np.arange(L)] = diag
        K = -0.5 * _symmetrize3(K)
    c = 1.0 - 1.0 / problem.d - 0.5 * a @ n0
    return c, g, H, K


def _symmetrize3(K):
    """Fill a tensor known on i >= j >= k to all index orderings."""
    L = K.shape[0]
    i, j, k = np.indices((L, L, L))
    s = np.sort(np.stack([i, j, k]), axis=0)[::-1]
    return K[s[0], s[1], s[2]]


def taylor_coefficients_at(problem, center, T=None, order=2, L=None):
    """Exact Taylor coefficients of the L-step landscape around ``center``.

    Parameters
    ----------
    center : Protocol, PiecewiseControl or array
        Expansion point. A :class:`PiecewiseControl` may switch at times off
        the grid; the perturbation is still a uniform shift per grid cell.
    order : {1, 2, 3}
    L : int, optional
        Number of grid cells (defaults to the center's own length).
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    if isinstance(center, PiecewiseControl):
        pc = center
        if L is None:
            raise ValueError("L is required for a piecewise center")
    else:
        if not isinstance(center, Protocol):
            if T is None:
                raise ValueError("T is required when center is an array")
            center = Protocol(center, T, bounded=False)
        pc = PiecewiseControl.from_protocol(center)
        L = center.L if L is None else L
    T = pc.T
    dt = T / L
    jets = _cell_jets(problem, pc, L, order)
    D = problem.dual_dim
    P = np.empty((L + 1, D, D))
    P[0] = np.eye(D)
    for i in range(L):
        P[i + 1] = jets[0, i] @ P[i]
    Q = np.zeros_like(jets)
    Pt = np.swapaxes(P[1:], -1, -2)
    for r in range(1, order + 1):
        Q[r] = Pt @ jets[r] @ P[:-1]
    a = P[L].T @ problem.n_star
    c, g, H, K = _contract(problem, a, Q, order)
    return ExpansionCoefficients(
        T=T, c=float(c), b=g / dt,
        J=None if H is None else H / dt**2,
        K=None if K is None else K / dt**3,
        center=pc.cell_average(L), kind="taylor",
    )


def _gauss_legendre(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _ordered_integrals(problem, lo, hi, order, nodes):
    """Time-ordered integrals of the drift-frame generator over each cell.

    Returns ``(order + 1, L, D, D)`` where entry r holds
    ``r! * int_{hi > t1 > ... > tr > lo} dm(t1) ... dm(tr)``.
    """
    x, w = _gauss_legendre(nodes)
    L = lo.size
    D = problem.dual_dim
    h = (hi - lo)[:, None]
    out = np.zeros((order + 1, L, D, D))
    out[0] = np.eye(D)
    t1 = lo[:, None] + h * x                              # (L, n)
    G1 = rotating_generator(problem, t1)                  # (L, n, D, D)
    w1 = h * w
    out[1] = np.einsum("ln,lnab->lab", w1, G1)
    if order >= 2:
        # inner variable on [lo, t1]
        h2 = (t1 - lo[:, None])[..., None]
        t2 = lo[:, None, None] + h2 * x                   # (L, n, n)
        G2 = rotating_generator(problem, t2)
        w2 = h2 * w
        inner1 = np.einsum("lnm,lnmab->lnab", w2, G2)     # int_lo^t1 dm
        out[2] = 2.0 * np.einsum("ln,lnab,lnbc->lac", w1, G1, inner1)
    if order >= 3:
        h3 = (t2 - lo[:, None, None])[..., None]
        t3 = lo[:, None, None, None] + h3 * x             # (L, n, n, n)
        G3 = rotating_generator(problem, t3)
        w3 = h3 * w
        inner2 = np.einsum("lnmk,lnmkab->lnmab", w3, G3)
        nested = np.einsum("lnm,lnmab,lnmbc->lnac", w2, G2, inner2)
        out[3] = 6.0 * np.einsum("ln,lnab,lnbc->lac", w1, G1, nested)
    return out


def dyson_coefficients(problem, T, L, order=2, nodes=8):
    """Dyson coefficients of the L-step landscape around ``s = 0``.

    Computed in the drift frame from quadrature of the time-ordered
    integrals within each cell; independent of the lab-frame route of
    :func:`taylor_coefficients_at`, with which it agrees to quadrature
    precision.
    """
    if order not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    L = int(L)
    if L < 1 or not T > 0:
        raise ValueError("need L >= 1 and T > 0")
    edges = np.arange(L + 1) * (T / L)
    Q = _ordered_integrals(problem, edges[:-1], edges[1:], order, nodes)
    a = problem.drift_propagator(T).T @ problem.n_star
    c, g, H, K = _contract(problem, a, Q, order)
    dt = T / L
    return ExpansionCoefficients(
        T=float(T), c=float(c), b=g / dt,
        J=None if H is None else H / dt**2,
        K=None if K is None else K / dt**3,
        center=np.zeros(L), kind="dyson",
    )


# ---------------------------------------------------------------- Magnus


@dataclass
class MagnusStack:
    """Per-cell drift-frame generators ``G_i = int_cell dm(t) dt``.

    The Magnus terms of a protocol follow from ``S_i = s_i G_i``. The
    second-order term also carries the exact within-cell commutator
    ``A_i = int_{t1 > t2 in cell} [dm(t1), dm(t2)]``; third-order pieces
    with two or more times in one cell use the cell-integrated generator,
    an O(dt^2) relative error.
    """

    problem: object
    T: float
    G: np.ndarray
    A: np.ndarray = None

    substeps: int = 1

    @classmethod
    def build(cls, problem, T, L, nodes=8, substeps=4):
        """Generators on ``L * substeps`` sub-cells of the protocol grid."""
        n = L * substeps
        edges = np.arange(n + 1) * (T / n)
        X = _ordered_integrals(problem, edges[:-1], edges[1:], 2, nodes)
        G = X[1]
        return cls(problem, float(T), G, X[2] - G @ G, substeps)

    @property
    def L(self):
        return self.G.shape[0] // self.substeps

    def terms(self, values, order=3):
        """Magnus terms Omega_1..Omega_order for one protocol."""
        values = values.values if isinstance(values, Protocol) else np.asarray(values, dtype=float)
        if values.shape != (self.L,):
            raise ValueError(f"expected {self.L} values, got shape {values.shape}")
        values = np.repeat(values, self.substeps)
        S = values[:, None, None] * self.G
        out = [S.sum(axis=0)]
        if order >= 2:
            C = np.cumsum(S, axis=0) - S                   # sum_{k<i} S_k
            comm = S @ C - C @ S                           # [S_i, C_i]
            om2 = comm.sum(axis=0)
            if self.A is not None:
                om2 = om2 + np.einsum("i,iab->ab", values**2, self.A)
            out.append(0.5 * om2)
        if order >= 3:
            W = np.cumsum(comm, axis=0) - comm             # sum_{j<i} [S_j, C_j]
            Dsuf = out[0] - np.cumsum(S, axis=0)           # sum_{i>j} S_i
            DS = Dsuf @ S - S @ Dsuf
            t1 = (S @ W - W @ S).sum(axis=0)
            t2 = (DS @ C - C @ DS).sum(axis=0)
            # two times in one cell, generator held at its cell integral
            t3 = (S @ (S @ C - C @ S) - (S @ C - C @ S) @ S).sum(axis=0)
            t4 = (DS @ S - S @ DS).sum(axis=0)
            out.append((t1 + t2 + 0.5 * (t3 + t4)) / 6.0)
        return out[:order]

    def exponent(self, values, order=3):
        return sum(self.terms(values, order))


def magnus_propagator(problem, protocol, order=3, nodes=8, substeps=4):
    """Lab-frame propagator M0(T) exp(Omega_1 + ... + Omega_order)."""
    stack = MagnusStack.build(problem, protocol.T, protocol.L, nodes, substeps)
    return problem.drift_propagator(protocol.T) @ expm(stack.exponent(protocol.values, order))


def _boundary(problem, T):
    a = problem.drift_propagator(T).T @ problem.n_star
    return a, problem.n0


def magnus_infidelity(problem, protocol, order=3, nodes=8, stack=None):
    """Infidelity from the exponentiated Magnus series."""
    stack = stack or MagnusStack.build(problem, protocol.T, protocol.L, nodes)
    a, n0 = _boundary(problem, stack.T)
    Om = stack.exponent(protocol.values if isinstance(protocol, Protocol) else protocol, order)
    return 1.0 - 1.0 / problem.d - 0.5 * a @ expm(Om) @ n0


def cumulant_infidelity(problem, protocol, order=3, moments=4, nodes=8, stack=None):
    """Infidelity from a cumulant resummation of the boundary overlap.

    Writes the overlap ``2/d + a . exp(Omega) n0`` as ``exp(sum_m kappa_m /
    m!)`` with moments ``mu_k = a . Omega^k n0 / Z`` and ``Z = 2/d + a . n0``
    and truncates after ``moments`` cumulants.
    """
    stack = stack or MagnusStack.build(problem, protocol.T, protocol.L, nodes)
    a, n0 = _boundary(problem, stack.T)
    Om = stack.exponent(protocol.values if isinstance(protocol, Protocol) else protocol, order)
    Z = 2.0 / problem.d + a @ n0
    if Z <= 0:
        raise ValueError("boundary overlap is not positive; cumulants undefined")
    mu = [1.0]
    v = n0.copy()
    for _ in range(moments):
        v = Om @ v
        mu.append(a @ v / Z)
    kappa = [0.0]
    for n in range(1, moments + 1):
        k = mu[n] - sum(math.comb(n - 1, j - 1) * kappa[j] * mu[n - j] for j in range(1, n))
        kappa.append(k)
    log_overlap = math.log(Z / 2.0) + sum(kappa[m] / math.factorial(m) for m in range(1, moments + 1))
    return 1.0 - math.exp(log_overlap)


def magnus_convergence_radius(problem):
    """Bound C on the drift-frame generator norm for |s| <= 1.

    The drift frame is an orthogonal conjugation, so the bound is the
    spectral norm of the control generator. The Magnus series converges
    for T < pi / C.
    """
    return float(np.linalg.norm(problem.m1, 2))


def magnus_time(problem):
    return math.pi / magnus_convergence_radius(problem)


def dyson_truncation_estimate(problem, T):
    """Order at which the Dyson series starts to converge, max(1, ceil(C T))."""
    return max(1, math.ceil(magnus_convergence_radius(problem) * T))


# ---------------------------------------------------------------- CSV I/O


def write_coefficients_csv(coeffs, path):
    """Write coefficients as plain CSV.

    Layout: one row ``kind, order, T, L, c``; one row with the L entries of
    ``b``; L rows of ``J`` (omitted for order 1); a last row with the
    cell-averaged center. Third-order terms are not serialized, so the
    stored order is at most 2.
    """
    order = min(coeffs.order, 2)
    fmt = lambda xs: ["%.17g" % x for x in xs]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([coeffs.kind, order, "%.17g" % coeffs.T, coeffs.L, "%.17g" % coeffs.c])
        w.writerow(fmt(coeffs.b))
        if order == 2:
            for row in coeffs.J:
                w.writerow(fmt(row))
        w.writerow(fmt(coeffs.center))


def read_coefficients_csv(path):
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    try:
        kind, order, T, L, c = rows[0]
        order, L = int(order), int(L)
        data = np.array(rows[1:], dtype=float)
    except (ValueError, IndexError) as exc:
        raise ValueError(f"{path}: malformed coefficient file ({exc})") from None
    expected = 2 + (L if order == 2 else 0)
    if data.shape != (expected, L):
        raise ValueError(f"{path}: expected {expected} rows of {L} values, got {data.shape}")
    J = data[1:1 + L] if order == 2 else None
    return ExpansionCoefficients(T=float(T), c=float(c), b=data[0], J=J, center=data[-1], kind=kind)
