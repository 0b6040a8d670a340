"""Experiment presets: each turns an :class:`ExperimentConfig` into CSV
tables staged in an :class:`OutputSet`.

Independent work items (durations, inverse temperatures) fan out to a
process pool; results come back in submission order and only the parent
process writes, so outputs do not depend on the number of workers.
"""
import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.stats import linregress

from . import field_theory as ft
from .io import OutputSet, run_csv_text
from .problems import ControlProblem, PiecewiseControl
from .samplers.descent import q_bb, q_continuous, q_stderr, stochastic_descent
from .samplers.diagnostics import covariance_spectrum, deformation_scan, mean_run_distance
from .samplers.landscapes import make_landscape
from .samplers.langevin import LMCConfig, lmc_run, relaxation_toy_model
from .stability import (detect_transitions, optimize_protocol, s_delta_control, spectrum_at,
                        stationary_width)


def _pool_map(fn, items, workers):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as ex:
        return list(ex.map(fn, items))


def _problem(cfg):
    return ControlProblem(cfg.problem)


def reference_center(problem, T, T_c, L):
    """Reference protocol at duration T: the stationary bang / zero / bang
    protocol for one qubit, a multistart optimum for two."""
    if problem.model == "1q":
        return s_delta_control(T, stationary_width(problem, T, max(0.0, (T - T_c) / 2)))
    proto, _ = optimize_protocol(problem, T, L)
    return PiecewiseControl.from_protocol(proto)


# ---------------------------------------------------------------- SD


def _sd_item(args):
    model, T, N, kind, order, seeds = args
    land = make_landscape(ControlProblem(model), T, N, kind, order)
    s, I = stochastic_descent(land, seeds)
    return s, I


def jackknife_stderr(values, stat):
    values = np.asarray(values)
    n = len(values)
    if n < 2:
        return float("nan")
    loo = np.array([stat(np.delete(values, i, axis=0)) for i in range(n)])
    return float(math.sqrt((n - 1) / n * np.sum((loo - loo.mean()) ** 2)))


def phase_diagram_sd(cfg, out):
    T_grid = cfg.T_grid
    g, e = cfg.sections["grid"], cfg.sections["expansion"]
    seeds = cfg.seeds()
    items = [(cfg.problem, T, g["N"], e["kind"], e["order"], seeds) for T in T_grid]
    stats, runs = [], []
    for T, (s, I) in zip(T_grid, _pool_map(_sd_item, items, cfg.workers)):
        stats.append((T, float("nan"), q_bb(s), jackknife_stderr(s, q_bb), len(seeds)))
        runs.extend((T, seed, i) for seed, i in zip(seeds, I))
    out.add_csv("sd_stats.csv", ["T", "q", "q_BB", "stderr", "n_runs"], stats)
    out.add_csv("sd_runs.csv", ["T", "seed", "infidelity"], runs)


# ---------------------------------------------------------------- stability


def stability_trace(cfg, out):
    problem = _problem(cfg)
    res = detect_transitions(problem, cfg.T_grid, L=cfg.get("grid", "L"),
                             n_scan=cfg.get("stability", "n_scan"))
    out.add_csv("transitions.csv", ["name", "T_value", "n_plus"], res.rows())
    out.add_csv("delta_curve.csv", ["T", "branch", "delta", "infidelity"], res.curve.rows())
    rows = [(spec.T, n, lam) for spec in res.spectra.values()
            for n, lam in enumerate(spec.eigenvalues, start=1)]
    out.add_csv("spectrum.csv", ["T", "n", "lambda"], rows)
    extra = [("exponent", res.exponent), ("critical_parity", res.critical_parity),
             ("n_vanishing", res.n_vanishing)] + [("unresolved", u) for u in res.unresolved]
    out.add_csv("transition_details.csv", ["quantity", "value"], extra)


def _spectrum_item(args):
    model, T, T_c, L = args
    problem = ControlProblem(model)
    center = reference_center(problem, T, T_c, L)
    spec, co = spectrum_at(problem, center, L)
    return spec, co


def hessian_spectrum(cfg, out):
    L = cfg.get("grid", "L")
    items = [(cfg.problem, T, cfg.get("field", "T_c"), L) for T in cfg.T_grid]
    spec_rows, f_rows = [], []
    for T, (spec, _) in zip(cfg.T_grid, _pool_map(_spectrum_item, items, cfg.workers)):
        for n, lam in enumerate(spec.eigenvalues):
            spec_rows.append((T, n + 1, lam))
            f_rows.append((T, n + 1, spec.parity(n), *spec.eigenfunctions[n]))
    out.add_csv("spectrum.csv", ["T", "n", "lambda"], spec_rows)
    out.add_csv("eigenfunctions.csv", ["T", "n", "parity"] + [f"f_{i + 1}" for i in range(L)], f_rows)


# ---------------------------------------------------------------- LMC


def _lmc_config(cfg, T, beta, n_samples=None):
    s = cfg.sections["sampler"]
    return LMCConfig(beta=beta, sigma=s["sigma"], L=cfg.get("grid", "L"), T=T,
                     max_iter=s["max_iter"], stride=s["stride"],
                     n_samples=s["n_samples"] if n_samples is None else n_samples,
                     window=s["window"], trap_threshold=s["trap_threshold"],
                     beta_L=s["beta_L"] or None)


def _lmc_item(args):
    model, config, seeds = args
    return lmc_run(ControlProblem(model), config, seeds)


def _run_name(T, beta, seed):
    return f"runs/lmc_T{T:g}_beta{beta:g}_seed{seed}.csv"


def lmc_qsl(cfg, out):
    seeds = cfg.seeds()
    combos = [(T, b) for T in cfg.T_grid for b in cfg.get("sampler", "beta")]
    items = [(cfg.problem, _lmc_config(cfg, T, b), seeds) for T, b in combos]
    stats, cov = [], []
    for (T, b), res in zip(combos, _pool_map(_lmc_item, items, cfg.workers)):
        keep = ~res.trapped
        per_run = [float(np.mean(r.var(axis=0))) for r in res.samples[keep]]
        stats.append((T, b, q_continuous(res.samples[keep]), q_bb(res.samples[keep].reshape(-1, res.config.L)),
                      q_stderr(per_run), int(keep.sum()), int(res.trapped.sum()),
                      float(np.mean(res.acceptance))))
        for n, lam in enumerate(covariance_spectrum(res.samples[keep]), start=1):
            cov.append((T, b, n, lam))
        if cfg.get("sampler", "save_runs"):
            for r, seed in enumerate(res.seeds):
                meta = {"problem": cfg.problem, "T": T, "beta": b, "sigma": res.config.sigma, "seed": seed}
                out.add_text(_run_name(T, b, seed), run_csv_text(
                    meta, res.sample_iterations, res.sample_infidelity[r], res.samples[r]))
    out.add_csv("lmc_stats.csv", ["T", "beta", "q", "q_BB", "stderr", "n_runs", "n_trapped", "acceptance"],
                stats)
    out.add_csv("covariance.csv", ["T", "beta", "n", "eigenvalue"], cov)


def distance_curve(samples, counts):
    """Mean pairwise run distance using the first n samples of every run."""
    return [(n, 1.0 / n, mean_run_distance(list(samples), n)) for n in counts]


def lmc_distances(cfg, out):
    seeds = cfg.seeds()
    ns = cfg.get("sampler", "n_samples")
    counts = sorted({int(round(x)) for x in np.geomspace(1, ns, min(ns, 12))})
    rows, fits = [], []
    for T in cfg.T_grid:
        for b in cfg.get("sampler", "beta"):
            res = lmc_run(_problem(cfg), _lmc_config(cfg, T, b), seeds)
            curve = distance_curve(res.samples, counts)
            rows += [(T, b, *c) for c in curve]
            n, _, d = np.array(curve).T
            ok = d > 0
            if ok.sum() > 2:
                f = linregress(np.log(n[ok]), np.log(d[ok]))
                fits.append((T, b, f.slope, f.rvalue**2))
    out.add_csv("distances.csv", ["T", "beta", "n_samples", "inverse_n", "mean_distance"], rows)
    out.add_csv("distance_fit.csv", ["T", "beta", "exponent", "r2"], fits)


def relaxation_stages(cfg, out):
    seeds = cfg.seeds()
    rows = []
    for T in cfg.T_grid:
        for b in cfg.get("sampler", "beta"):
            res = lmc_run(_problem(cfg), _lmc_config(cfg, T, b), seeds)
            tr = res.trace
            idx = np.unique(np.geomspace(1, tr.shape[0], 200).astype(int)) - 1
            for i in idx:
                rows.append((T, b, i + 1, float(tr[i].mean()), float(np.median(tr[i]))))
    out.add_csv("relaxation.csv", ["T", "beta", "iteration", "I_mean", "I_median"], rows)
    sigma = cfg.get("sampler", "sigma")
    n, ell = relaxation_toy_model(sigma, 1.0, 100_000, n_eval=400)
    out.add_csv("relaxation_toy.csv", ["n", "ell"], zip(n, ell))


# ---------------------------------------------------------------- field theory


def _spectral_item(args):
    model, T, T_c, L, kappa = args
    spec, co = _spectrum_item((model, T, T_c, L))
    return ft.build_spectral_data(co, spec, kappa=kappa)


def critical_scaling(cfg, out):
    f = cfg.sections["field"]
    L = cfg.get("grid", "L")
    items = [(cfg.problem, T, f["T_c"], L, f["kappa"]) for T in cfg.T_grid]
    datasets = _pool_map(_spectral_item, items, cfg.workers)
    # the bang-bang branch weighs protocols by the coarse-graining entropy
    kappa_bb = ft.bang_bang_kappa(cfg.get("grid", "N"), L, f["alpha"])
    bang_bang = [d.with_kappa(kappa_bb) for d in datasets]
    saddle, pred = [], []
    for d, bb in zip(datasets, bang_bang):
        out.add_csv(f"spectral_data_T{d.T:g}.csv", ["n", "lambda", "b", "x0", "x1"],
                    zip(range(1, d.L + 1), d.lam, d.b, d.x0, d.x1))
        qp = ft.q_prediction(d)
        m, _, _ = ft.mode_moments(bb)
        dq = float(-np.sum(2 * d.x0 * m + m**2))
        saddle.append((d.T, qp.saddle.y, qp.saddle.residual, qp.saddle.kind))
        pred.append((d.T, qp.leading, qp.corrected, dq))
    out.add_csv("saddle.csv", ["T", "y_star", "residual", "kind"], saddle)
    out.add_csv("predictions.csv", ["T", "q_pred_leading", "q_pred_corrected", "dqbb_pred"], pred)
    sc = ft.qbb_scaling(bang_bang, f["T_qsl"])
    out.add_csv("qbb_fit.csv", ["intercept", "slope", "r2", "exponent"],
                [(sc.intercept, sc.slope, sc.r2, sc.exponent)])
    T0 = cfg.T_grid[0]
    rows = []
    for Lq in f["L_list"]:
        d = _spectral_item((cfg.problem, T0, f["T_c"], Lq, f["kappa"]))
        qp = ft.q_prediction(d)
        rows.append((T0, Lq, qp.leading, qp.corrected, ft.symmetry_halved_q(d, qp.saddle)))
    out.add_csv("q_prediction_L.csv", ["T", "L", "q_leading", "q_corrected", "q_symmetry_halved"], rows)


def deformation_minima(scan, data, n):
    """Exact minima on each side of zero and the quadratic prediction of
    their separation along mode ``n`` (0-based) alone:
    c + b x + lam x^2 / 2 = 0."""
    left = [m for m in scan.minima if m[0] < 0]
    right = [m for m in scan.minima if m[0] > 0]
    xm, Im = min(left, key=lambda m: m[1]) if left else (float("nan"), float("nan"))
    xp, Ip = min(right, key=lambda m: m[1]) if right else (float("nan"), float("nan"))
    lam, b = data.lam[n], data.b[n]
    disc = b * b - 2 * lam * data.c
    pred = 2 * math.sqrt(disc) / abs(lam) if disc >= 0 and lam != 0 else float("nan")
    return xm, Im, xp, Ip, xp - xm, pred


def deformation_scan_preset(cfg, out):
    problem = _problem(cfg)
    st = cfg.sections["stability"]
    L = cfg.get("grid", "L")
    modes = st["modes"] or list(range(1, min(L, 20) + 1))
    curve, minima = [], []
    for T in cfg.T_grid:
        center = reference_center(problem, T, cfg.get("field", "T_c"), L)
        spec, co = spectrum_at(problem, center, L)
        data = ft.build_spectral_data(co, spec)
        for n in modes:
            if n > L:
                continue
            scan = deformation_scan(problem, center, spec, n - 1, (st["x_min"], st["x_max"]), st["x_points"])
            curve += [(T, n, x, i, int(o)) for x, i, o in zip(scan.x, scan.infidelity, scan.out_of_bounds)]
            minima.append((T, n, spec.parity(n - 1), *deformation_minima(scan, data, n - 1)))
    out.add_csv("deformation.csv", ["T", "n", "x", "infidelity", "out_of_bounds"], curve)
    out.add_csv("deformation_minima.csv", ["T", "n", "parity", "x_minus", "I_minus", "x_plus", "I_plus",
                                           "separation", "separation_quadratic"], minima)


RUNNERS = {
    "phase-diagram-sd": phase_diagram_sd,
    "stability-trace": stability_trace,
    "hessian-spectrum": hessian_spectrum,
    "lmc-qsl": lmc_qsl,
    "lmc-distances": lmc_distances,
    "critical-scaling": critical_scaling,
    "relaxation-stages": relaxation_stages,
    "deformation-scan": deformation_scan_preset,
}


def run_experiment(cfg, out_dir):
    """Run a preset and commit its outputs; returns the manifest path."""
    out = OutputSet(out_dir)
    RUNNERS[cfg.preset](cfg, out)
    return out.commit(cfg.echo())
