"""Traceless operator bases and the adjoint (dual) representation.

Basis order is fixed: (S^x, S^y, S^z) for a spin-1/2 and the eight
Gell-Mann matrices lambda_1..lambda_8 (divided by two) for the qutrit.
Every basis is normalized as Tr(S^i S^j) = delta_ij / 2.
"""
import numpy as np


def spin_half_operators():
    """Return the three spin-1/2 operators as an array of shape (3, 2, 2)."""
    sx = np.array([[0, 1], [1, 0]], dtype=complex)
    sy = np.array([[0, -1j], [1j, 0]], dtype=complex)
    sz = np.array([[1, 0], [0, -1]], dtype=complex)
    return np.stack([sx, sy, sz]) / 2


def gell_mann_operators():
    """Return lambda_a / 2 for a = 1..8 as an array of shape (8, 3, 3)."""
    lam = np.zeros((8, 3, 3), dtype=complex)
    lam[0][0, 1] = lam[0][1, 0] = 1
    lam[1][0, 1], lam[1][1, 0] = -1j, 1j
    lam[2][0, 0], lam[2][1, 1] = 1, -1
    lam[3][0, 2] = lam[3][2, 0] = 1
    lam[4][0, 2], lam[4][2, 0] = -1j, 1j
    lam[5][1, 2] = lam[5][2, 1] = 1
    lam[6][1, 2], lam[6][2, 1] = -1j, 1j
    lam[7] = np.diag([1, 1, -2]) / np.sqrt(3)
    return lam / 2


def structure_constants(ops):
    """Structure constants f_ijk defined by [S^i, S^j] = i f_ijk S^k."""
    comm = np.einsum("iab,jbc->ijac", ops, ops) - np.einsum("jab,ibc->ijac", ops, ops)
    # Tr(S^k S^l) = delta_kl / 2  =>  f_ijk = -2i Tr([S^i, S^j] S^k)
    f = -2j * np.einsum("ijab,kba->ijk", comm, ops)
    return np.real_if_close(f, tol=1e6).real


def hamiltonian_coordinates(ops, H):
    """Coordinates h_k = 2 Tr(S^k H) of the traceless part of H."""
    return 2 * np.einsum("kab,ba->k", ops, H).real


def generator_from_hamiltonian(f, ops, H):
    """Dual generator m_ij = sum_k f_ijk 2 Tr(S^k H).

    With this sign the dual propagator built from ``m`` is the adjoint
    action of exp(+iHt). For real initial and target states (the only
    case used here) the infidelity is identical to that of exp(-iHt).
    """
    return np.einsum("ijk,k->ij", f, hamiltonian_coordinates(ops, H))


def dual_vector(ops, psi):
    """Dual vector n_i = 2 Re <psi|S^i|psi> of a pure state."""
    return 2 * np.einsum("a,kab,b->k", psi.conj(), ops, psi).real


def density_from_dual(ops, n):
    """Reconstruct rho = 1/d + S.n from a dual vector."""
    d = ops.shape[1]
    return np.eye(d) / d + np.einsum("k,kab->ab", n, ops)
