"""Batched infidelity landscapes used by the samplers.

Every landscape maps an array of protocols of shape (R, N) to infidelities
of shape (R,). ``flip_values`` returns the infidelity after flipping each
single site, which is what Stochastic Descent needs.
"""
import numpy as np

from ..expansions import MagnusStack, cumulant_infidelity, evaluate_truncated
from ..propagation import infidelity_batch, step_propagators


class Landscape:
    kind = "generic"

    def __init__(self, T, N):
        self.T = float(T)
        self.N = int(N)

    def __call__(self, values):
        raise NotImplementedError

    def flip_values(self, values):
        """Infidelity after negating each site, shape (R, N)."""
        values = np.atleast_2d(np.asarray(values, dtype=float))
        R, N = values.shape
        flipped = np.repeat(values[:, None, :], N, axis=1)
        idx = np.arange(N)
        flipped[:, idx, idx] *= -1
        return self(flipped.reshape(R * N, N)).reshape(R, N)


class ExactLandscape(Landscape):
    """Exact piecewise-constant landscape of a control problem."""

    kind = "exact"

    def __init__(self, problem, T, N):
        super().__init__(T, N)
        self.problem = problem
        dt = self.T / self.N
        self._Upm = step_propagators(problem, np.array([1.0, -1.0]), dt)

    def __call__(self, values):
        values = np.asarray(values, dtype=float)
        return infidelity_batch(self.problem, np.atleast_2d(values), self.T)

    def flip_values(self, values):
        """Exact flip energies for bang-bang protocols.

        With forward vectors ``f_i`` (before step i) and backward vectors
        ``g_i`` (pulled back from the target past step i), the overlap after
        replacing step i by the opposite bang is ``g_i . U(-s_i) f_i``.
        """
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if not np.all(np.abs(values) == 1):
            return super().flip_values(values)
        p = self.problem
        R, N = values.shape
        plus = values > 0
        U = np.where(plus[..., None, None], self._Upm[0], self._Upm[1])
        Uf = np.where(plus[..., None, None], self._Upm[1], self._Upm[0])
        fwd = np.empty((N, R, p.dual_dim))
        v = np.broadcast_to(p.n0, (R, p.dual_dim))
        for i in range(N):
            fwd[i] = v
            v = np.einsum("rab,rb->ra", U[:, i], v)
        w = np.broadcast_to(p.n_star, (R, p.dual_dim))
        out = np.empty((R, N))
        for i in range(N - 1, -1, -1):
            out[:, i] = np.einsum("ra,rab,rb->r", w, Uf[:, i], fwd[i])
            w = np.einsum("rab,ra->rb", U[:, i], w)
        return 1.0 - 1.0 / p.d - 0.5 * out


class ExpansionLandscape(Landscape):
    """Truncated polynomial landscape from expansion coefficients."""

    def __init__(self, coeffs, order=None):
        super().__init__(coeffs.T, coeffs.L)
        self.coeffs = coeffs
        self.order = coeffs.order if order is None else order
        self.kind = f"{coeffs.kind}{self.order}"

    def __call__(self, values):
        return np.atleast_1d(evaluate_truncated(self.coeffs, values, self.order))

    def flip_values(self, values):
        if self.order > 2:
            return super().flip_values(values)
        c = self.coeffs
        s = np.atleast_2d(np.asarray(values, dtype=float))
        ds = s - c.center
        base = self(s)
        dt = c.dt
        delta = -2.0 * s                                   # change at each site
        lin = dt * c.b * delta
        if self.order >= 2:
            Jds = ds @ c.J
            lin = lin + dt**2 * (delta * Jds + 0.5 * np.diag(c.J) * delta**2)
        return base[:, None] + lin


class CumulantLandscape(Landscape):
    """Cumulant-resummed Magnus landscape."""

    def __init__(self, problem, T, N, magnus_order=3, cumulant_order=5):
        super().__init__(T, N)
        self.problem = problem
        self.magnus_order = magnus_order
        self.cumulant_order = cumulant_order
        self.stack = MagnusStack.build(problem, self.T, self.N)
        self.kind = f"cumulant{cumulant_order}"

    def __call__(self, values):
        values = np.atleast_2d(np.asarray(values, dtype=float))
        return np.array([
            cumulant_infidelity(self.problem, v, self.magnus_order, self.cumulant_order, stack=self.stack)
            for v in values
        ])


def make_landscape(problem, T, N, kind="exact", order=2):
    """Landscape by name: ``exact``, ``dyson``, ``cumulant``."""
    from ..expansions import dyson_coefficients
    if kind == "exact":
        return ExactLandscape(problem, T, N)
    if kind == "dyson":
        return ExpansionLandscape(dyson_coefficients(problem, T, N, order=order), order)
    if kind == "cumulant":
        return CumulantLandscape(problem, T, N, cumulant_order=order)
    raise ValueError(f"unknown landscape kind {kind!r}")
