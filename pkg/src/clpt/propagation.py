"""Exact propagation of piecewise-constant protocols in the dual picture.

Step products are ordered with the latest step leftmost:
``M = U_L ... U_2 U_1`` with ``U_i = exp(dt (m0 + s_i m1))``.
"""
import numpy as np
from scipy.linalg import expm

from .problems import Protocol


def _so3_exp(A):
    """Rodrigues formula for a stack of 3x3 antisymmetric matrices."""
    theta2 = A[..., 1, 0] ** 2 + A[..., 2, 0] ** 2 + A[..., 2, 1] ** 2
    theta = np.sqrt(theta2)
    small = theta < 1e-6
    safe = np.where(small, 1.0, theta)
    c1 = np.where(small, 1 - theta2 / 6 + theta2**2 / 120, np.sin(safe) / safe)
    c2 = np.where(small, 0.5 - theta2 / 24 + theta2**2 / 720, (1 - np.cos(safe)) / safe**2)
    A2 = A @ A
    return np.eye(3) + c1[..., None, None] * A + c2[..., None, None] * A2


def antisymmetric_exp(A, closed_form=True):
    """exp(A) for (stacks of) real antisymmetric matrices."""
    A = np.asarray(A, dtype=float)
    if closed_form and A.shape[-1] == 3:
        return _so3_exp(A)
    return expm(A)


def step_propagators(problem, values, dt, closed_form=True):
    """Per-step propagators exp(dt (m0 + s m1)); ``values`` may be any shape."""
    values = np.asarray(values, dtype=float)
    A = dt * (problem.m0 + values[..., None, None] * problem.m1)
    return antisymmetric_exp(A, closed_form=closed_form)


def _as_protocol(protocol, T=None):
    if isinstance(protocol, Protocol):
        return protocol
    if T is None:
        raise TypeError("pass a Protocol or give the duration T explicitly")
    return Protocol(protocol, T, bounded=False)


def propagate_exact(problem, protocol, T=None):
    """Dual propagator M_s(T, 0) of a piecewise-constant protocol."""
    p = _as_protocol(protocol, T)
    U = step_propagators(problem, p.values, p.dt)
    M = np.eye(problem.dual_dim)
    for Ui in U:
        M = Ui @ M
    return M


def infidelity_from_propagator(problem, M):
    return 1 - 1 / problem.hilbert_dim - 0.5 * problem.n_target @ M @ problem.n0


def _clip(value, eps=1e-10):
    if value < -eps or value > 1 + eps:
        raise FloatingPointError(f"infidelity {value} left [0, 1] beyond round-off")
    return min(max(value, 0.0), 1.0)


def infidelity_exact(problem, protocol, T=None):
    """Exact infidelity 1 - 1/d - n*.M n0 / 2, clipped to [0, 1]."""
    return _clip(float(infidelity_from_propagator(problem, propagate_exact(problem, protocol, T))))


def infidelity_batch(problem, values, T):
    """Exact infidelities of many protocols sharing L.

    ``values`` has shape (R, L); ``T`` is a scalar or an array of length R.
    Returns an array of length R (not clipped).
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    R, L = values.shape
    dt = np.broadcast_to(np.asarray(T, dtype=float) / L, (R,))
    A = dt[:, None, None, None] * (problem.m0 + values[..., None, None] * problem.m1)
    U = antisymmetric_exp(A)
    v = np.broadcast_to(problem.n0, (R, problem.dual_dim)).copy()
    for i in range(L):
        v = np.einsum("rab,rb->ra", U[:, i], v)
    return 1 - 1 / problem.hilbert_dim - 0.5 * v @ problem.n_target


def infidelity_segments(problem, values, durations):
    """Exact infidelity of a control given as constant segments of
    arbitrary durations (``values`` may carry a leading batch axis)."""
    values = np.atleast_2d(np.asarray(values, dtype=float))
    durations = np.asarray(durations, dtype=float)
    A = durations[..., None, None] * (problem.m0 + values[..., None, None] * problem.m1)
    U = antisymmetric_exp(A)
    v = np.broadcast_to(problem.n0, (values.shape[0], problem.dual_dim)).copy()
    for i in range(values.shape[1]):
        v = np.einsum("rab,rb->ra", U[:, i], v)
    return 1 - 1 / problem.hilbert_dim - 0.5 * v @ problem.n_target


def rotating_generator(problem, t):
    """Control generator in the drift frame, M0(t)^T m1 M0(t) (for s = 1)."""
    M0 = problem.drift_propagator(t)
    return np.swapaxes(M0, -1, -2) @ problem.m1 @ M0


def propagate_rotating(problem, protocol, T=None):
    """Drift-frame propagator M'_s(T, 0) with M = M0(T) M'."""
    p = _as_protocol(protocol, T)
    U = step_propagators(problem, p.values, p.dt)
    edges = problem.drift_propagator(np.arange(p.L + 1) * p.dt)
    M = np.eye(problem.dual_dim)
    for i in range(p.L):
        M = edges[i + 1].T @ U[i] @ edges[i] @ M
    return M


def infidelity_rotating(problem, protocol, T=None):
    p = _as_protocol(protocol, T)
    n_rot = problem.drift_propagator(p.T).T @ problem.n_target
    Mp = propagate_rotating(problem, p)
    return float(1 - 1 / problem.hilbert_dim - 0.5 * n_rot @ Mp @ problem.n0)


def step_jets(problem, values, dt, order):
    """Derivatives d^r/ds^r exp(dt (m0 + s m1)) for r = 0..order.

    ``dt`` may be a scalar or one duration per value.

    Uses the block-bidiagonal exponential: the (0, r) block of
    exp([[A, B, 0], [0, A, B], [0, 0, A]]) equals (1/r!) d^r/de^r exp(A + eB).
    Returns an array of shape (order + 1, L, D, D).
    """
    values = np.atleast_1d(np.asarray(values, dtype=float))
    dt = np.broadcast_to(np.asarray(dt, dtype=float), values.shape)[:, None, None]
    D = problem.dual_dim
    n = order + 1
    A = dt * (problem.m0 + values[:, None, None] * problem.m1)
    big = np.zeros((values.size, n * D, n * D))
    for k in range(n):
        big[:, k * D:(k + 1) * D, k * D:(k + 1) * D] = A
    for k in range(order):
        big[:, k * D:(k + 1) * D, (k + 1) * D:(k + 2) * D] = dt * problem.m1
    E = expm(big)
    out = np.empty((n, values.size, D, D))
    fact = 1.0
    for r in range(n):
        if r:
            fact *= r
        out[r] = fact * E[:, 0:D, r * D:(r + 1) * D]
    return out


def infidelity_gradient(problem, protocol, T=None):
    """Exact gradient dI/ds_i of the piecewise-constant landscape."""
    p = _as_protocol(protocol, T)
    jets = step_jets(problem, p.values, p.dt, 1)
    U, dU = jets[0], jets[1]
    L = p.L
    fwd = np.empty((L, problem.dual_dim))
    v = problem.n0.copy()
    for i in range(L):
        fwd[i] = v
        v = U[i] @ v
    grad = np.empty(L)
    w = problem.n_target.copy()
    for i in range(L - 1, -1, -1):
        grad[i] = -0.5 * w @ dU[i] @ fwd[i]
        w = U[i].T @ w
    return grad
