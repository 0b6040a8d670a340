"""Compiled inner loop of the batched Langevin Monte Carlo sweep."""
import numpy as np
from numba import njit


@njit(cache=True)
def _step_unitary(H0, Hc, s, dt, out, A, term, tmp):
    """exp(-i dt (H0 + s Hc)) written into ``out`` (A, term, tmp: scratch)."""
    d = H0.shape[0]
    if d == 2:
        # H = (ax sx + az sz) / 2 for the qubit (H0 diagonal, Hc off-diagonal)
        ax = 2.0 * s * Hc[0, 1].real
        az = 2.0 * H0[0, 0].real
        norm = np.sqrt(ax * ax + az * az)
        th = 0.5 * norm * dt
        c = np.cos(th)
        sn = np.sin(th) / norm if norm > 0 else 0.0
        out[0, 0] = c - 1j * sn * az
        out[1, 1] = c + 1j * sn * az
        out[0, 1] = -1j * sn * ax
        out[1, 0] = -1j * sn * ax
        return
    # scaled Taylor series, accurate to rounding for |A| <= 1/4
    bound = 0.0
    for a in range(d):
        for b in range(d):
            A[a, b] = -1j * dt * (H0[a, b] + s * Hc[a, b])
            bound += abs(A[a, b]) ** 2
    bound = np.sqrt(bound)
    squarings = 0
    while bound > 0.25:
        bound *= 0.5
        squarings += 1
    scale = 0.5**squarings
    for a in range(d):
        for b in range(d):
            A[a, b] *= scale
            term[a, b] = 1.0 if a == b else 0.0
            out[a, b] = term[a, b]
    for k in range(1, 14):
        for a in range(d):
            for b in range(d):
                acc = 0j
                for c in range(d):
                    acc += term[a, c] * A[c, b]
                tmp[a, b] = acc / k
        for a in range(d):
            for b in range(d):
                term[a, b] = tmp[a, b]
                out[a, b] += tmp[a, b]
    for _ in range(squarings):
        for a in range(d):
            for b in range(d):
                acc = 0j
                for c in range(d):
                    acc += out[a, c] * out[c, b]
                tmp[a, b] = acc
        for a in range(d):
            for b in range(d):
                out[a, b] = tmp[a, b]


@njit(cache=True)
def sweep_block(s, U, psi0, target, H0, Hc, dt, beta_L, noise, unif, trace, accepted):
    """Advance every run by ``noise.shape[1]`` sweeps.

    Parameters
    ----------
    s : (R, L) float, U : (R, L, d, d) complex
        Protocols and their step unitaries, updated in place.
    dt, beta_L : (R,) float
        Step length and Metropolis scale (beta * L) per run.
    noise, unif : (R, n, L) float
        Pre-drawn proposal increments and acceptance uniforms.
    trace : (R, n) float
        Receives the infidelity after each sweep.
    accepted : (R,) int
        Accumulates accepted moves.
    """
    R, L = s.shape
    d = psi0.shape[0]
    n = noise.shape[1]
    chi = np.empty((L, d), dtype=np.complex128)
    v = np.empty(d, dtype=np.complex128)
    w = np.empty(d, dtype=np.complex128)
    Up = np.empty((d, d), dtype=np.complex128)
    Uv = np.empty(d, dtype=np.complex128)
    A = np.empty((d, d), dtype=np.complex128)
    term = np.empty((d, d), dtype=np.complex128)
    tmp = np.empty((d, d), dtype=np.complex128)
    for r in range(R):
        for k in range(n):
            # backward costates: chi_i = (U_L ... U_{i+1})^dagger target
            for a in range(d):
                w[a] = target[a]
            for i in range(L - 1, -1, -1):
                for a in range(d):
                    chi[i, a] = w[a]
                for b in range(d):
                    acc = 0j
                    for a in range(d):
                        acc += np.conj(U[r, i, a, b]) * w[a]
                    Uv[b] = acc
                for a in range(d):
                    w[a] = Uv[a]
            for a in range(d):
                v[a] = psi0[a]
            # current infidelity from the full overlap
            ov = 0j
            for a in range(d):
                acc = 0j
                for b in range(d):
                    acc += U[r, 0, a, b] * v[b]
                ov += np.conj(chi[0, a]) * acc
            cur = 1.0 - abs(ov) ** 2
            for i in range(L):
                new = s[r, i] + noise[r, k, i]
                if abs(new) <= 1.0:
                    _step_unitary(H0, Hc, new, dt[r], Up, A, term, tmp)
                    ov = 0j
                    for a in range(d):
                        acc = 0j
                        for b in range(d):
                            acc += Up[a, b] * v[b]
                        ov += np.conj(chi[i, a]) * acc
                    e = 1.0 - abs(ov) ** 2
                    dI = e - cur
                    if dI <= 0.0 or unif[r, k, i] < np.exp(-beta_L[r] * dI):
                        s[r, i] = new
                        U[r, i, :, :] = Up
                        cur = e
                        accepted[r] += 1
                for a in range(d):
                    acc = 0j
                    for b in range(d):
                        acc += U[r, i, a, b] * v[b]
                    Uv[a] = acc
                for a in range(d):
                    v[a] = Uv[a]
            ov = 0j
            for a in range(d):
                ov += np.conj(target[a]) * v[a]
            trace[r, k] = 1.0 - abs(ov) ** 2


@njit(cache=True)
def step_unitaries(H0, Hc, s, dt):
    """Step unitaries for an (R, L) array of controls and (R,) steps."""
    R, L = s.shape
    d = H0.shape[0]
    out = np.empty((R, L, d, d), dtype=np.complex128)
    A = np.empty((d, d), dtype=np.complex128)
    term = np.empty((d, d), dtype=np.complex128)
    tmp = np.empty((d, d), dtype=np.complex128)
    for r in range(R):
        for i in range(L):
            _step_unitary(H0, Hc, s[r, i], dt[r], out[r, i], A, term, tmp)
    return out
