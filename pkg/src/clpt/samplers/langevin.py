"""Gradient-free Langevin Monte Carlo over continuous protocols.

A move adds Gaussian noise of width ``sigma`` to one site and is accepted
with probability ``min(1, exp(-beta L dI))``; proposals leaving [-1, 1] are
rejected, so the chain samples the Gibbs measure restricted to the box.
One iteration is L attempted moves.

The production sampler (:func:`lmc_run`) evaluates single-site moves in
Hilbert space from forward states and backward costates, so an iteration
costs O(L) small matrix products per run; the sweep itself is compiled.
"""
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .descent import SampleEnsemble


@dataclass
class LMCConfig:
    """Settings of one Langevin Monte Carlo ensemble.

    ``stride`` is the number of iterations between stored samples,
    ``n_samples`` the number stored per run after thermalization and
    ``max_iter`` the cap on thermalization iterations. ``anneal`` optionally
    lists inverse temperatures visited (``anneal_iter`` iterations each)
    before the main stage. ``beta_L`` is the length multiplying beta in
    the acceptance exponent ``beta * beta_L * dI``; it defaults to ``L``
    and lets beta values quoted for a finer reference grid be reused.
    """

    beta: float
    sigma: float
    L: int
    T: float
    max_iter: int = 200_000
    stride: int = 4096
    n_samples: int = 100
    window: int = 200
    drift_tol: float = 1e-10
    trap_threshold: float = 1e-6
    anneal: tuple = ()
    anneal_iter: int = 2000
    local: bool = True
    beta_L: int = None

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")
        if self.L < 1 or not self.T > 0:
            raise ValueError("need L >= 1 and T > 0")
        if self.beta_L is None:
            self.beta_L = self.L
        if self.beta_L < 1:
            raise ValueError(f"beta_L must be >= 1, got {self.beta_L}")
        if any(b <= 0 for b in self.anneal):
            raise ValueError("annealing temperatures must be positive")


def run_rng(seed):
    """Counter-based generator for one run; normals via numpy's ziggurat."""
    return np.random.Generator(np.random.Philox(int(seed)))


# ---------------------------------------------------------------- generic


def lmc_step(values, config, landscape, rng):
    """One iteration on an arbitrary landscape (single protocol).

    ``landscape`` maps a (L,) array to a scalar. With ``config.local`` the
    iteration is a sequential sweep of single-site moves, otherwise one
    simultaneous move of all sites.
    """
    s = np.array(values, dtype=float)
    L = s.size
    cur = float(landscape(s))
    scale = config.beta * (config.beta_L or L)
    if config.local:
        noise = rng.standard_normal(L) * config.sigma
        u = rng.random(L)
        for i in range(L):
            new = s[i] + noise[i]
            if abs(new) > 1:
                continue
            old = s[i]
            s[i] = new
            e = float(landscape(s))
            if e <= cur or u[i] < np.exp(-scale * (e - cur)):
                cur = e
            else:
                s[i] = old
        return s
    prop = s + rng.standard_normal(L) * config.sigma
    u = rng.random()
    if np.any(np.abs(prop) > 1):
        return s
    e = float(landscape(prop))
    if e <= cur or u < np.exp(-scale * (e - cur)):
        return prop
    return s


# ---------------------------------------------------------------- batched exact


@dataclass
class LMCResult:
    config: LMCConfig
    seeds: list
    trace: np.ndarray                  # (n_iter, R) infidelity after each iteration
    samples: np.ndarray                # (R, n_samples, L)
    sample_infidelity: np.ndarray      # (R, n_samples)
    thermalized_at: np.ndarray         # (R,) iteration index, -1 if never
    trapped: np.ndarray                # (R,) bool
    acceptance: np.ndarray = None
    sample_iterations: np.ndarray = None   # iteration index of each stored sample

    def ensemble(self, problem_name="", include_trapped=False):
        keep = np.flatnonzero(np.ones(len(self.seeds), bool) if include_trapped else ~self.trapped)
        return SampleEnsemble(self.config.T, [self.samples[r] for r in keep],
                              [self.seeds[r] for r in keep], problem_name, "exact",
                              self.config.beta, self.config.sigma)


#: Sweeps drawn per call to a run's generator: ``noise`` (BLOCK, L)
#: standard normals, then ``BLOCK * L`` uniforms. Part of the
#: reproducibility contract.
BLOCK = 256


class BatchedChain:
    """Independent LMC chains on the exact landscape, advanced together.

    Each run owns a Philox generator and consumes it in fixed blocks of
    :data:`BLOCK` sweeps, so a trajectory depends only on its seed and not
    on how many sweeps are requested at a time. Runs may differ in
    duration and inverse temperature (same L and sigma).
    """

    def __init__(self, problem, L, T, beta, sigma, seeds, init=None, beta_L=None):
        from . import _kernels
        self._k = _kernels
        self.problem = problem
        self.seeds = [int(x) for x in np.atleast_1d(seeds)]
        R = len(self.seeds)
        self.L = int(L)
        self.beta_L = self.L if beta_L is None else int(beta_L)
        self.sigma = float(sigma)
        self.T = np.broadcast_to(np.asarray(T, dtype=float), (R,)).copy()
        self.beta = np.broadcast_to(np.asarray(beta, dtype=float), (R,)).copy()
        self.rngs = [run_rng(x) for x in self.seeds]
        if init is None:
            init = np.stack([g.uniform(-1.0, 1.0, self.L) for g in self.rngs])
        self.s = np.array(init, dtype=float).reshape(R, self.L)
        self.H0 = np.ascontiguousarray(problem.drift_hamiltonian, dtype=complex)
        self.Hc = np.ascontiguousarray(problem.control_hamiltonian, dtype=complex)
        self.U = self._k.step_unitaries(self.H0, self.Hc, self.s, self.T / self.L)
        self.psi0 = np.ascontiguousarray(problem.psi0, dtype=complex)
        self.target = np.ascontiguousarray(problem.psi_target, dtype=complex)
        self.accepted = np.zeros(R, dtype=np.int64)
        self.attempted = 0
        self._noise = np.empty((R, 0, self.L))
        self._unif = np.empty((R, 0, self.L))
        self.I = self.infidelity()

    def infidelity(self):
        v = np.broadcast_to(self.psi0, (len(self.seeds), self.psi0.size)).copy()
        for i in range(self.L):
            v = np.einsum("rab,rb->ra", self.U[:, i], v)
        return 1.0 - np.abs(v @ self.target.conj()) ** 2

    def _draw(self, n):
        while self._noise.shape[1] < n:
            noise = np.stack([g.standard_normal((BLOCK, self.L)) for g in self.rngs])
            unif = np.stack([g.random((BLOCK, self.L)) for g in self.rngs])
            self._noise = np.concatenate([self._noise, noise * self.sigma], axis=1)
            self._unif = np.concatenate([self._unif, unif], axis=1)
        noise, unif = self._noise[:, :n], self._unif[:, :n]
        self._noise, self._unif = self._noise[:, n:], self._unif[:, n:]
        return np.ascontiguousarray(noise), np.ascontiguousarray(unif)

    def advance(self, n, beta=None):
        """Run ``n`` sweeps; returns the (n, R) infidelity trace."""
        beta = self.beta if beta is None else np.broadcast_to(beta, self.beta.shape)
        noise, unif = self._draw(n)
        trace = np.empty((len(self.seeds), n))
        self._k.sweep_block(self.s, self.U, self.psi0, self.target, self.H0, self.Hc,
                            self.T / self.L, beta * self.beta_L, noise, unif, trace, self.accepted)
        self.attempted += n * self.L
        if n:
            self.I = trace[:, -1].copy()
        return trace.T


def _thermalized(trace, W, tol):
    """Trailing-window test: the change of the window mean per iteration
    is below ``tol`` or below its own statistical error."""
    a, b = trace[-2 * W:-W], trace[-W:]
    drift = np.abs(b.mean(axis=0) - a.mean(axis=0))
    err = np.sqrt((a.var(axis=0) + b.var(axis=0)) / W)
    return (drift / W < tol) | (drift < err)


def lmc_run(problem, config, seeds, init=None):
    """Thermalize, then sample, a batch of independent LMC runs.

    Stages: optional annealing through ``config.anneal``; relaxation at
    ``config.beta`` until every run passes the trailing-window test (or
    ``config.max_iter`` iterations); then ``config.n_samples`` protocols
    stored every ``config.stride`` iterations. A run is flagged trapped
    when its median sampled infidelity exceeds the lowest median among the
    runs by more than ``config.trap_threshold``.
    """
    if not config.local:
        raise ValueError("the batched sampler implements local moves only; use lmc_step")
    chain = BatchedChain(problem, config.L, config.T, config.beta, config.sigma, seeds, init,
                         config.beta_L)
    R = len(chain.seeds)
    traces = []
    for b in config.anneal:
        traces.append(chain.advance(config.anneal_iter, b))
    W = config.window
    therm = np.full(R, -1)
    start = sum(t.shape[0] for t in traces)
    relax = []
    n = 0
    while n < config.max_iter and np.any(therm < 0):
        relax.append(chain.advance(W))
        n += W
        if len(relax) >= 2:
            ok = _thermalized(np.concatenate(relax[-2:]), W, config.drift_tol)
            therm[(therm < 0) & ok] = start + n
    traces += relax
    samples = np.empty((R, config.n_samples, config.L))
    sI = np.empty((R, config.n_samples))
    done = start + n
    its = done + config.stride * np.arange(1, config.n_samples + 1)
    for k in range(config.n_samples):
        traces.append(chain.advance(config.stride))
        samples[:, k] = chain.s
        sI[:, k] = chain.I
    typical = np.median(sI, axis=1)
    trapped = typical - typical.min() > config.trap_threshold
    acc = chain.accepted / max(chain.attempted, 1)
    return LMCResult(config, chain.seeds, np.concatenate(traces), samples, sI, therm, trapped, acc, its)


# ---------------------------------------------------------------- relaxation


def relaxation_toy_model(sigma, ell0, steps, n_eval=None):
    """Integrate dl/dn = -sqrt(sigma^2 / 2 pi) (1 - exp(-2 l^2 / sigma^2)).

    A one-dimensional caricature of the relaxation of the distance to the
    optimal set under Metropolis moves of width sigma at zero temperature.
    Returns ``(n, l)`` sampled on ``n_eval`` points (default ``steps + 1``).
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if ell0 < 0:
        raise ValueError("ell0 must be non-negative")
    n = np.linspace(0.0, steps, (steps + 1) if n_eval is None else n_eval)
    if ell0 == 0:
        return n, np.zeros_like(n)
    rate = np.sqrt(sigma**2 / (2 * np.pi))

    def rhs(_, y):
        return -rate * (1.0 - np.exp(-2.0 * y**2 / sigma**2))

    sol = solve_ivp(rhs, (0.0, float(steps)), [float(ell0)], t_eval=n,
                    method="LSODA", rtol=1e-10, atol=1e-14)
    return n, sol.y[0]
