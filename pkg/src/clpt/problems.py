"""Control problems, protocols and the state/dual-vector conversions."""
import json
import math

import numpy as np

from .bases import (
    dual_vector,
    gell_mann_operators,
    generator_from_hamiltonian,
    spin_half_operators,
    structure_constants,
)

#: Ratio r of the x-field to the z-field used to prepare initial (+r) and
#: target (-r) ground states.
STATE_RATIO = 2.0


def ground_state(H):
    """Lowest eigenvector of a Hermitian matrix with a fixed global phase.

    The first amplitude whose modulus exceeds 1e-12 is made real positive,
    so serialized states are reproducible.
    """
    _, vecs = np.linalg.eigh(H)
    psi = vecs[:, 0].astype(complex)
    k = int(np.flatnonzero(np.abs(psi) > 1e-12)[0])
    return psi * (abs(psi[k]) / psi[k])


class ControlProblem:
    """A state-preparation problem in the dual (adjoint) representation.

    Parameters
    ----------
    model : {"1q", "2q"}
        Single qubit, or two qubits restricted to the triplet sector.
    h_z, h_x, J : float
        Static z-field, control amplitude of the x-field and Ising coupling
        (``J`` must be 0 for ``"1q"``).
    state_ratio : float
        Field ratio r used for the initial (+r) and target (-r) ground states.

    Notes
    -----
    The state-preparation Hamiltonian for ratio r is
    ``J S1z S2z + h_z Sz - r h_z Sx``. With ``h_z = -1`` the initial state
    sits next to the ground state of the ``s = -1`` control Hamiltonian,
    which makes the ``+1``-first protocol the short-time optimum.
    """

    def __init__(self, model="1q", h_z=-1.0, h_x=-math.sqrt(5.0), J=None, state_ratio=STATE_RATIO):
        if model not in ("1q", "2q"):
            raise ValueError(f"unknown model {model!r}; expected '1q' or '2q'")
        if J is None:
            J = 0.0 if model == "1q" else -2.0
        for name, v in (("h_z", h_z), ("h_x", h_x), ("J", J), ("state_ratio", state_ratio)):
            if not np.isfinite(v):
                raise ValueError(f"{name} must be finite, got {v}")
        if model == "1q" and J != 0:
            raise ValueError("the single-qubit model has no coupling; use J=0")
        if h_z == 0:
            raise ValueError("h_z must be nonzero")
        self.model = model
        self.h_z = float(h_z)
        self.h_x = float(h_x)
        self.J = float(J)
        self.state_ratio = float(state_ratio)

        if model == "1q":
            ops = spin_half_operators()
            sz, sx = ops[2], ops[0]
            zz = np.zeros((2, 2), dtype=complex)
        else:
            ops = gell_mann_operators()
            # triplet basis |uu>, (|ud>+|du>)/sqrt2, |dd>
            sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
            sx = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / math.sqrt(2)
            zz = np.diag([0.25, -0.25, 0.25]).astype(complex)
        self.operators = ops
        self.structure_constants = structure_constants(ops)
        self.hilbert_dim = ops.shape[1]
        self.dual_dim = ops.shape[0]

        self.drift_hamiltonian = self.J * zz + self.h_z * sz
        self.control_hamiltonian = self.h_x * sx
        f = self.structure_constants
        self.m0 = generator_from_hamiltonian(f, ops, self.drift_hamiltonian)
        self.m1 = generator_from_hamiltonian(f, ops, self.control_hamiltonian)

        r = self.state_ratio
        self.psi0 = ground_state(self.J * zz + self.h_z * sz - r * self.h_z * sx)
        self.psi_target = ground_state(self.J * zz + self.h_z * sz + r * self.h_z * sx)
        self.n0 = dual_vector(ops, self.psi0)
        self.n_target = dual_vector(ops, self.psi_target)

        # drift eigendecomposition, reused for exp(t m0) at many times
        w, v = np.linalg.eigh(1j * self.m0)
        self._drift_eig = (w, v)

    # aliases matching the usual symbols
    @property
    def d(self):
        return self.hilbert_dim

    @property
    def n_star(self):
        return self.n_target

    def params(self):
        return {"model": self.model, "h_z": self.h_z, "h_x": self.h_x, "J": self.J}

    def to_json(self):
        return json.dumps(self.params(), sort_keys=True)

    @classmethod
    def from_json(cls, text):
        data = json.loads(text) if isinstance(text, str) else dict(text)
        missing = {"model", "h_z", "h_x", "J"} - set(data)
        if missing:
            raise ValueError(f"problem JSON is missing keys: {sorted(missing)}")
        return cls(data["model"], data["h_z"], data["h_x"], data["J"])

    def drift_propagator(self, t):
        """exp(t m0) for a scalar or an array of times (returns (..., D, D))."""
        w, v = self._drift_eig
        t = np.asarray(t, dtype=float)
        phase = np.exp(-1j * np.multiply.outer(t, w))
        out = np.einsum("ab,...b,cb->...ac", v, phase, v.conj())
        return out.real

    def with_generators(self, m0=None, m1=None):
        """Copy with replaced dual generators (states are kept)."""
        other = object.__new__(ControlProblem)
        other.__dict__.update(self.__dict__)
        if m0 is not None:
            other.m0 = np.array(m0, dtype=float)
            other._drift_eig = np.linalg.eigh(1j * other.m0)
        if m1 is not None:
            other.m1 = np.array(m1, dtype=float)
        return other

    def __repr__(self):
        return f"ControlProblem(model={self.model!r}, h_z={self.h_z}, h_x={self.h_x}, J={self.J})"


def build_single_qubit_problem(h_z=-1.0, h_x=-math.sqrt(5.0)):
    """Single qubit with H = h_z Sz + s(t) h_x Sx."""
    return ControlProblem("1q", h_z, h_x, 0.0)


def build_two_qubit_problem(h_z=-1.0, h_x=-math.sqrt(5.0), J=-2.0):
    """Two Ising-coupled qubits in the triplet sector, global x control."""
    return ControlProblem("2q", h_z, h_x, J)


def dualize_state(state, problem):
    """Dual vector of a normalized pure state in the problem's basis."""
    psi = np.asarray(state, dtype=complex)
    if psi.shape != (problem.hilbert_dim,):
        raise ValueError(f"state must have shape ({problem.hilbert_dim},), got {psi.shape}")
    norm = np.vdot(psi, psi).real
    if abs(norm - 1) > 1e-12:
        raise ValueError(f"state is not normalized (|psi|^2 = {norm!r})")
    return dual_vector(problem.operators, psi)


class Protocol:
    """Piecewise-constant control on ``L`` uniform steps over [0, T].

    Parameters
    ----------
    values : array_like, shape (L,)
    T : float
        Protocol duration.
    bounded : bool
        Enforce |s_i| <= 1. Expansion and deformation code builds
        unbounded protocols on purpose.
    """

    def __init__(self, values, T, bounded=True):
        values = np.array(values, dtype=float).reshape(-1)
        if values.size < 1:
            raise ValueError("a protocol needs at least one step")
        if not np.all(np.isfinite(values)):
            raise ValueError("protocol values must be finite")
        if not (np.isfinite(T) and T >= 0):
            raise ValueError(f"duration must be finite and non-negative, got {T}")
        if bounded and np.max(np.abs(values)) > 1 + 1e-12:
            raise ValueError("protocol values must lie in [-1, 1]")
        values.setflags(write=False)
        self.values = values
        self.T = float(T)
        self.bounded = bounded

    @property
    def L(self):
        return self.values.size

    @property
    def dt(self):
        return self.T / self.L

    def times(self):
        """Step midpoints."""
        return (np.arange(self.L) + 0.5) * self.dt

    def with_values(self, values, bounded=None):
        return Protocol(values, self.T, self.bounded if bounded is None else bounded)

    def reflected(self):
        """The symmetry partner s(t) -> -s(T - t)."""
        return self.with_values(-self.values[::-1])

    def refined(self, factor):
        """Same function on a grid ``factor`` times finer."""
        return self.with_values(np.repeat(self.values, int(factor)))

    def __len__(self):
        return self.L

    def __repr__(self):
        return f"Protocol(L={self.L}, T={self.T})"


class PiecewiseControl:
    """Piecewise-constant control with arbitrary breakpoints on [0, T].

    Used for continuum protocols such as the three-segment bang/arc/bang
    family, whose switching times need not fall on a uniform grid.
    """

    def __init__(self, edges, values):
        edges = np.asarray(edges, dtype=float)
        values = np.asarray(values, dtype=float)
        if edges.ndim != 1 or values.shape != (edges.size - 1,):
            raise ValueError("need len(edges) == len(values) + 1")
        if edges[0] != 0 or np.any(np.diff(edges) < 0):
            raise ValueError("edges must start at 0 and be non-decreasing")
        keep = np.diff(edges) > 0
        self.edges = np.concatenate([[0.0], edges[1:][keep]])
        self.values = values[keep]

    @property
    def T(self):
        return float(self.edges[-1])

    @classmethod
    def from_protocol(cls, protocol):
        return cls(np.arange(protocol.L + 1) * protocol.dt, protocol.values)

    def __call__(self, t):
        idx = np.searchsorted(self.edges, t, side="right") - 1
        return self.values[np.clip(idx, 0, self.values.size - 1)]

    def segments(self, L):
        """Split into sub-segments aligned with an L-cell uniform grid.

        Returns ``(cell, value, duration)`` arrays in time order.
        """
        dt = self.T / L
        grid = np.arange(L + 1) * dt
        cuts = np.union1d(grid, self.edges)
        cuts = cuts[np.concatenate([[True], np.diff(cuts) > 1e-14 * max(self.T, 1.0)])]
        cuts[-1] = self.T
        mids = 0.5 * (cuts[1:] + cuts[:-1])
        cell = np.minimum((mids / dt).astype(int), L - 1)
        return cell, self(mids), np.diff(cuts)

    def cell_average(self, L):
        cell, value, dur = self.segments(L)
        out = np.zeros(L)
        np.add.at(out, cell, value * dur)
        return out / (self.T / L)

    def to_protocol(self, L, bounded=True):
        """Cell-averaged L-step protocol."""
        return Protocol(self.cell_average(L), self.T, bounded=bounded)
