"""Stochastic Descent over bang-bang protocols and the order parameters."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class SampleEnsemble:
    """Locally optimal protocols collected from independent runs.

    ``runs`` is a list with one (n_samples, L) array per run; Stochastic
    Descent runs contribute a single sample each.
    """

    T: float
    runs: list
    seeds: list = field(default_factory=list)
    problem: str = ""
    kind: str = "exact"
    beta: float = float("nan")
    sigma: float = float("nan")
    bang_bang: bool = False

    def __post_init__(self):
        self.runs = [np.atleast_2d(np.asarray(r, dtype=float)) for r in self.runs]
        for r in self.runs:
            if self.bang_bang and not np.all(np.abs(r) == 1):
                raise ValueError("bang-bang ensemble holds values other than +-1")
            if np.any(np.abs(r) > 1):
                raise ValueError("protocol values outside [-1, 1]")

    @property
    def L(self):
        return self.runs[0].shape[1]

    def stacked(self):
        return np.concatenate(self.runs, axis=0)


def stochastic_descent(landscape, seeds, max_flips=None, tol=1e-13):
    """Greedy single-flip descent from random bang-bang starts.

    Each run starts from i.i.d. random signs and repeatedly flips a
    uniformly chosen site among those whose flip lowers the infidelity by
    more than ``tol``; it stops at a 1-flip-stable protocol. Runs advance
    together but each draws only from its own generator.

    Parameters
    ----------
    landscape : Landscape
    seeds : int or sequence of int
        One seed per run.

    Returns
    -------
    protocols : ndarray (R, N)
    infidelities : ndarray (R,)
    """
    seeds = np.atleast_1d(seeds).astype(np.int64)
    N = landscape.N
    if N < 2:
        raise ValueError("need N >= 2")
    rngs = [np.random.Generator(np.random.Philox(int(s))) for s in seeds]
    s = np.stack([np.where(g.random(N) < 0.5, -1.0, 1.0) for g in rngs])
    active = np.ones(len(seeds), dtype=bool)
    cur = landscape(s)
    max_flips = 50 * N if max_flips is None else max_flips
    for _ in range(max_flips):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        flips = landscape.flip_values(s[idx])
        gain = flips - cur[idx, None]
        for k, r in enumerate(idx):
            good = np.flatnonzero(gain[k] < -tol)
            if good.size == 0:
                active[r] = False
                continue
            site = good[rngs[r].integers(good.size)]
            s[r, site] *= -1
            cur[r] = flips[k, site]
    return s, cur


def q_bb(ensemble):
    """Bang-bang order parameter 1 - (1/N) sum_i <s_i>^2."""
    s = ensemble.stacked() if isinstance(ensemble, SampleEnsemble) else np.atleast_2d(ensemble)
    if s.size == 0:
        raise ValueError("empty ensemble")
    return float(1.0 - np.mean(np.mean(s, axis=0) ** 2))


def q_continuous(ensemble):
    """Mean over runs of the site-averaged variance within each run."""
    runs = ensemble.runs if isinstance(ensemble, SampleEnsemble) else ensemble
    runs = [np.atleast_2d(r) for r in runs]
    if not runs or any(r.shape[0] == 0 for r in runs):
        raise ValueError("empty ensemble")
    return float(np.mean([np.mean(r.var(axis=0)) for r in runs]))


def q_stderr(values):
    values = np.asarray(values, dtype=float)
    return float(values.std(ddof=1) / np.sqrt(values.size)) if values.size > 1 else float("nan")
