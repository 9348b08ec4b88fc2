"""Nested sampling with Metropolis replacement of the worst live point."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ChainState,
    Constrained,
    EvidenceEstimate,
    ModelSpec,
    RngHandle,
    adapt_step_scales,
    as_generator,
    log_sum_exp,
    metropolis_update,
)

STUCK_LIMIT = 10
DEFAULT_TOL = 1e-4


@dataclass(frozen=True)
class LivePoint:
    theta: np.ndarray
    log_l: float
    log_prior: float
    label: float = 0.5


def _log1mexp(x: float) -> float:
    """``log(1 - exp(x))`` for ``x < 0``."""
    if x > -math.log(2.0):
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


def shrinkage_log_mass(i: int, N: int, mode: str = "deterministic", rng=None) -> float:
    """Log prior mass after ``i`` removals from ``N`` live points.

    ``deterministic`` uses the mean log shrinkage, ``-i/N``.  ``sampled`` sums
    ``i`` draws of ``log t`` with ``t ~ Beta(N, 1)``.
    """
    if i < 0 or N < 1:
        raise ValueError("need i >= 0 and N >= 1")
    if mode == "deterministic":
        return -i / N
    if mode == "sampled":
        if i == 0:
            return 0.0
        gen = as_generator(rng)
        return float(np.sum(np.log(gen.random(i)) / N))
    raise ValueError(f"unknown shrinkage mode {mode!r}")


@dataclass
class NestedRun:
    """Dead points (removed in order, then the final live block) and summaries.

    ``log_x`` is the prior mass enclosed by each point's contour and
    ``log_w`` the (unnormalized) log quadrature mass attached to it.
    """

    n_live: int
    theta: np.ndarray
    log_l: np.ndarray
    log_x: np.ndarray
    log_w: np.ndarray
    log_z: float
    log_z_std_err: float
    information_h: float
    iterations: int
    n_evals: int
    partial_log_z: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    @property
    def dead_points(self):
        return list(zip(self.theta, self.log_l, self.log_x))

    def to_estimate(self) -> EvidenceEstimate:
        diag = {"information_h": self.information_h, "iterations": self.iterations,
                "n_live": self.n_live, **self.diagnostics}
        return EvidenceEstimate(self.log_z, self.log_z_std_err, self.n_evals, diag)

    def trace_rows(self):
        """``(iteration, log_l, log_x, partial_log_z)`` per dead point."""
        return [(k + 1, float(a), float(b), float(c))
                for k, (a, b, c) in enumerate(zip(self.log_l, self.log_x, self.partial_log_z))]

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "log_l", "log_x", "partial_log_z"])
        for it, ll, lx, pz in self.trace_rows():
            w.writerow([it, repr(ll), repr(lx), repr(pz)])
        return buf.getvalue()


def _worst(log_l: np.ndarray, label: np.ndarray) -> int:
    return int(np.lexsort((label, log_l))[0])


def nested_sampling(model: ModelSpec, n_live: int = 300, mcmc_steps: int = 20,
                    tol: float = DEFAULT_TOL, rng=None, shrinkage: str = "deterministic",
                    quadrature: str = "rectangle", stop: str = "remainder",
                    delta_tol: float = 1e-8, max_iter: int | None = None) -> NestedRun:
    """Run nested sampling and return the full dead-point record.

    Parameters
    ----------
    model : ModelSpec
    n_live : int
        Number of live points ``N``.
    mcmc_steps : int
        Constrained Metropolis steps applied to the cloned survivor.
    tol : float
        Stop once ``L_max_live * X / Z`` falls below ``tol``.
    shrinkage : {"deterministic", "sampled"}
        Mean shrinkage ``log X_i = -i/N`` or order-statistic draws.
    quadrature : {"rectangle", "trapezoid"}
        ``L_i (X_{i-1} - X_i)`` or ``(L_{i-1} + L_i)/2 (X_{i-1} - X_i)``.
    stop : {"remainder", "delta"}
        Remaining-mass bound, or the increment of ``log Z`` below ``delta_tol``.

    Ties in likelihood are broken by an auxiliary uniform label carried by
    each point, which keeps the prior mass shrinking on plateaus.
    """
    if n_live < 2:
        raise ValueError("need at least two live points")
    if quadrature not in ("rectangle", "trapezoid"):
        raise ValueError(f"unknown quadrature {quadrature!r}")
    if stop not in ("remainder", "delta"):
        raise ValueError(f"unknown stop rule {stop!r}")
    if shrinkage not in ("deterministic", "sampled"):
        raise ValueError(f"unknown shrinkage mode {shrinkage!r}")
    gen = as_generator(rng)
    N = n_live
    max_iter = max_iter or 10_000 * N
    log_tol = math.log(tol)

    thetas = np.array([model.prior_sample(gen) for _ in range(N)], dtype=float).reshape(N, -1)
    log_ls = np.array([model.log_likelihood(t) for t in thetas])
    log_ps = np.array([model.log_prior(t) for t in thetas])
    labels = gen.random(N)
    if not np.all(np.isfinite(log_ls)):
        raise ValueError("non-finite log likelihood at a prior draw")
    n_evals = N

    dead_theta, dead_ll, dead_lx = [], [], []
    log_x_prev = 0.0
    log_z = -math.inf
    partial = []
    factor = np.array([1.0])
    stuck = 0
    hit_cap = False
    it = 0
    while True:
        w = _worst(log_ls, labels)
        ll_w, lab_w = float(log_ls[w]), float(labels[w])
        if dead_ll and ll_w < dead_ll[-1]:
            raise AssertionError("dead-point likelihood decreased")
        it += 1
        if shrinkage == "deterministic":
            log_x = -it / N
        else:
            log_x = log_x_prev + math.log(gen.random()) / N
        log_dx = log_x_prev + _log1mexp(log_x - log_x_prev)
        prev_z = log_z
        log_z = float(np.logaddexp(log_z, ll_w + log_dx))
        dead_theta.append(thetas[w].copy())
        dead_ll.append(ll_w)
        dead_lx.append(log_x)
        partial.append(log_z)

        floor = Constrained(ll_w, lab_w)
        # an unmoved earlier replacement can leave an exact duplicate of the worst point
        above = np.flatnonzero((log_ls > ll_w) | ((log_ls == ll_w) & (labels > lab_w)))
        if above.size == 0:
            raise RuntimeError("stuck contour")
        j = int(above[gen.integers(above.size)])
        state = ChainState(thetas[j].copy(), float(log_ps[j]), float(log_ls[j]), float(labels[j]))
        spread = thetas.std(axis=0)
        spread = np.where(spread > 0, spread, 1e-12)
        label_scale = factor[0] * max(float(labels.std()), 1e-12)
        flags = []
        for _ in range(mcmc_steps):
            state, acc, ev = metropolis_update(model, state, factor[0] * spread, floor, gen,
                                               label_scale)
            n_evals += ev
            flags.append(acc)
        factor = adapt_step_scales(flags, factor)
        stuck = 0 if any(flags) else stuck + 1
        if stuck >= STUCK_LIMIT:
            raise RuntimeError("stuck contour")
        if not (state.log_l > ll_w or (state.log_l == ll_w and state.label > lab_w)):
            raise AssertionError("replacement violates the likelihood floor")
        thetas[w], log_ls[w], log_ps[w], labels[w] = state.theta, state.log_l, state.log_prior, \
            state.label
        log_x_prev = log_x

        if stop == "remainder":
            done = float(np.max(log_ls)) + log_x - log_z < log_tol
        else:
            done = prev_z > -math.inf and log_z - prev_z < delta_tol
        if done:
            break
        if it >= max_iter:
            hit_cap = True
            break

    # final live block, sorted, each carrying X_final / N
    order = np.lexsort((labels, log_ls))
    live_ll = log_ls[order]
    k = np.arange(1, N + 1)
    with np.errstate(divide="ignore"):
        live_lx = log_x_prev + np.log((N - k) / N)
    all_theta = np.vstack([np.array(dead_theta).reshape(len(dead_theta), -1), thetas[order]])
    all_ll = np.concatenate([np.array(dead_ll), live_ll])
    all_lx = np.concatenate([np.array(dead_lx), live_lx])

    n_dead = len(dead_ll)
    log_mass = np.empty(n_dead + N)
    lx_ext = np.concatenate([[0.0], np.array(dead_lx)])
    for i in range(n_dead):
        log_mass[i] = lx_ext[i] + _log1mexp(lx_ext[i + 1] - lx_ext[i])
    log_mass[n_dead:] = log_x_prev - math.log(N)
    if quadrature == "rectangle":
        log_w = log_mass.copy()
    else:
        log_w = log_mass.copy()
        dx = np.exp(log_mass[:n_dead] - log_mass[:n_dead].max())
        half_next = np.concatenate([dx[1:], [0.0]])
        wd = 0.5 * (dx + half_next)
        wd[0] += 0.5 * dx[0]
        log_w[:n_dead] = np.log(wd) + log_mass[:n_dead].max()

    log_terms = all_ll + log_w
    log_z = log_sum_exp(log_terms)
    p = np.exp(log_terms - log_z)
    with np.errstate(invalid="ignore"):
        h = float(np.sum(np.where(p > 0, p * (all_ll - log_z), 0.0)))
    h = max(h, 0.0)
    live_partial = np.logaddexp.accumulate(
        np.concatenate([[log_sum_exp(all_ll[:n_dead] + log_w[:n_dead])], log_terms[n_dead:]]))[1:]
    if quadrature == "rectangle":
        partial_all = np.concatenate([np.array(partial), live_partial])
    else:
        partial_all = np.logaddexp.accumulate(log_terms)
    diag = {"max_iter_reached": float(hit_cap), "step_factor": float(factor[0])}
    return NestedRun(N, all_theta, all_ll, all_lx, log_w, float(log_z),
                     math.sqrt(h / N), h, it, n_evals, partial_all, diag)


def posterior_weights(run: NestedRun) -> np.ndarray:
    """Normalized posterior weights ``L_i * dX_i / Z`` of every stored point."""
    if run.log_l.size == 0:
        raise ValueError("empty run")
    t = run.log_l + run.log_w
    w = np.exp(t - t.max())
    return w / w.sum()


@dataclass
class RepeatedRuns:
    mean_log_z: float
    std_log_z: float | None
    runs: list

    @property
    def internal_errors(self) -> np.ndarray:
        return np.array([r.log_z_std_err for r in self.runs])


def _one_run(args):
    model, n_live, config, seed, stream = args
    return nested_sampling(model, n_live, rng=RngHandle(seed, stream), **config)


def repeated_runs(model: ModelSpec, n_live: int = 300, config: dict | None = None, R: int = 20,
                  seed: int = 0, streams=None, workers: int = 1) -> RepeatedRuns:
    """``R`` independent runs on streams ``streams`` (default ``0..R-1``) of ``seed``.

    Results are ordered by stream regardless of ``workers``.
    """
    if R < 2:
        raise ValueError("need at least two repetitions")
    streams = list(range(R)) if streams is None else list(streams)
    if len(streams) != R:
        raise ValueError("need one stream id per run")
    jobs = [(model, n_live, dict(config or {}), seed, s) for s in streams]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            runs = list(pool.map(_one_run, jobs))
    else:
        runs = [_one_run(j) for j in jobs]
    z = np.array([r.log_z for r in runs])
    return RepeatedRuns(float(z.mean()), float(z.std(ddof=1)), runs)
