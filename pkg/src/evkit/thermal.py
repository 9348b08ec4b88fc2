"""Importance sampling, thermodynamic integration and annealed importance sampling.

Thermal estimators walk the geometric path ``prior * L**beta`` from
``beta = 0`` (prior, normalized) to ``beta = 1`` (unnormalized posterior).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    ChainState,
    EvidenceEstimate,
    ModelSpec,
    Tempered,
    adapt_step_scales,
    as_generator,
    initial_scales,
    log_mean_exp,
    log_sum_exp,
    metropolis_update,
)

MIN_ESS = 5.0
FROZEN_ACCEPTANCE = 0.01


@dataclass(frozen=True)
class Schedule:
    """Inverse-temperature grid, strictly increasing from exactly 0 to 1."""

    betas: tuple

    def __post_init__(self):
        b = np.asarray(self.betas, dtype=float)
        if b.size < 2 or b[0] != 0.0 or b[-1] != 1.0:
            raise ValueError("schedule must start at 0 and end at 1")
        if np.any(np.diff(b) <= 0):
            raise ValueError("schedule must be strictly increasing")
        object.__setattr__(self, "betas", tuple(b.tolist()))

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.betas)

    def __len__(self):
        return len(self.betas)


def make_schedule(K: int = 50, shape: str = "power", gamma: float = 3.0) -> Schedule:
    """``K + 1`` rungs, ``k/K`` (linear) or ``(k/K)**gamma`` (power)."""
    if K < 1:
        raise ValueError("K must be at least 1")
    u = np.arange(K + 1) / K
    if shape == "linear":
        betas = u
    elif shape == "power":
        betas = u**gamma
    else:
        raise ValueError(f"unknown schedule shape {shape!r}")
    betas[0], betas[-1] = 0.0, 1.0
    return Schedule(tuple(betas))


# ---------------------------------------------------------------------------
# Importance sampling


def _log_ratios(log_p, log_q, samples) -> np.ndarray:
    lw = np.array([log_p(x) - log_q(x) for x in samples], dtype=float)
    lw[np.isnan(lw)] = -math.inf
    return lw


def importance_expectation(f, log_p, log_q, samples) -> float:
    """Self-normalized estimate of ``<f>_p`` from draws of ``q``."""
    lw = _log_ratios(log_p, log_q, samples)
    if not np.any(np.isfinite(lw)):
        raise ValueError("q misses p's support")
    w = np.exp(lw - lw.max())
    fx = np.array([f(x) for x in samples], dtype=float)
    return float(np.sum(w * fx) / np.sum(w))


def effective_sample_size(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    return float(math.exp(2.0 * log_sum_exp(lw) - log_sum_exp(2.0 * lw)))


def importance_log_evidence_ratio(log_p_unnorm, log_q_norm, samples,
                                  mode: str = "simple") -> EvidenceEstimate:
    """Estimate ``log(Z_p / Z_q)`` from draws of a normalized proposal ``q``.

    ``mode="simple"`` averages ``p/q`` directly.  ``mode="self_normalized"``
    evaluates ``sum(w**2) / sum(w)`` with ``w = p/q``; that ratio converges to
    ``<p/q>`` under the normalized ``p`` rather than under ``q``, so the two
    modes only share a limit when ``p`` is proportional to ``q``.
    """
    lw = _log_ratios(log_p_unnorm, log_q_norm, samples)
    return evidence_from_log_weights(lw, mode)


def evidence_from_log_weights(log_weights, mode: str = "simple") -> EvidenceEstimate:
    """Importance estimate from precomputed ``log(p/q)`` values."""
    lw = np.asarray(log_weights, dtype=float).ravel()
    n = lw.size
    if n < 2:
        raise ValueError("need at least two samples")
    if not np.any(np.isfinite(lw)):
        raise ValueError("q misses p's support")
    w = np.exp(lw - lw.max())
    ess = float(w.sum() ** 2 / np.sum(w * w))
    if mode == "simple":
        log_z = log_mean_exp(lw)
        se = float(np.std(w, ddof=1) / (math.sqrt(n) * w.mean()))
    elif mode == "self_normalized":
        log_z = log_sum_exp(2.0 * lw) - log_sum_exp(lw)
        a, b = w * w, w
        A, B = a.mean(), b.mean()
        cov = np.cov(a, b, ddof=1)
        var = (cov[0, 0] / B**2 - 2.0 * A * cov[0, 1] / B**3 + A**2 * cov[1, 1] / B**4) / n
        se = float(math.sqrt(max(var, 0.0)) / (A / B))
    else:
        raise ValueError(f"unknown mode {mode!r}")
    diag = {"ess": ess, "mode_self_normalized": float(mode == "self_normalized")}
    if ess < MIN_ESS:
        diag["extreme_weights"] = 1.0
        warnings.warn("extreme weights: effective sample size below 5", RuntimeWarning,
                      stacklevel=2)
    return EvidenceEstimate(float(log_z), se, n, diag)


def prior_importance_log_evidence(model: ModelSpec, n_samples: int = 100_000,
                                  rng=None, mode: str = "simple") -> EvidenceEstimate:
    """Importance sampling with the prior as proposal; weights are likelihoods."""
    gen = as_generator(rng)
    lw = np.array([model.log_likelihood(model.prior_sample(gen)) for _ in range(n_samples)])
    return evidence_from_log_weights(lw, mode)


# ---------------------------------------------------------------------------
# Tempered chains


def _batch_mean_stats(values: np.ndarray, n_batches: int):
    n = values.size
    m = n // n_batches
    if m < 1:
        return float(values.mean()), 0.0
    means = values[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(values.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


def _run_chain(model, state, scales, target, gen, n, adapt_every=0, record=False):
    """Advance one chain ``n`` steps; optionally adapt scales in blocks."""
    flags = []
    block = []
    log_ls = np.empty(n) if record else None
    evals = 0
    for k in range(n):
        state, acc, ev = metropolis_update(model, state, scales, target, gen)
        evals += ev
        flags.append(acc)
        if record:
            log_ls[k] = state.log_l
        if adapt_every:
            block.append(acc)
            if len(block) == adapt_every:
                scales = adapt_step_scales(block, scales)
                block = []
    return state, scales, np.asarray(flags, dtype=bool), log_ls, evals


def trapezoid_weights(betas: np.ndarray) -> np.ndarray:
    d = np.diff(betas)
    w = np.zeros(betas.size)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


def left_weights(betas: np.ndarray) -> np.ndarray:
    w = np.zeros(betas.size)
    w[:-1] = np.diff(betas)
    return w


def thermodynamic_integration(model: ModelSpec, schedule: Schedule | None = None,
                              n_steps: int = 500, burn: int | None = None, rng=None,
                              quadrature: str = "trapezoid", n_batches: int = 20,
                              adapt_every: int = 25) -> EvidenceEstimate:
    """Integrate ``<log L>_beta`` over the schedule.

    One chain is warm-started from rung to rung.  At each rung it burns in for
    ``burn`` steps (default ``n_steps``) with scale adaptation, then records
    ``n_steps`` frozen-kernel steps.  The per-rung standard error comes from
    ``n_batches`` batch means and is propagated through the quadrature weights.
    """
    schedule = schedule or make_schedule()
    betas = schedule.array
    burn = n_steps if burn is None else burn
    gen = as_generator(rng)
    if quadrature == "trapezoid":
        weights = trapezoid_weights(betas)
    elif quadrature in ("left", "riemann"):
        weights = left_weights(betas)
    else:
        raise ValueError(f"unknown quadrature {quadrature!r}")

    scales = initial_scales(model, gen)
    state = ChainState.at(model, model.prior_sample(gen), Tempered(0.0))
    evals = 1
    means = np.empty(betas.size)
    errs = np.empty(betas.size)
    accept = np.empty(betas.size)
    for k, beta in enumerate(betas):
        target = Tempered(float(beta))
        state, scales, _, _, ev = _run_chain(model, state, scales, target, gen, burn,
                                             adapt_every=adapt_every)
        evals += ev
        state, scales, flags, log_ls, ev = _run_chain(model, state, scales, target, gen,
                                                      n_steps, record=True)
        evals += ev
        accept[k] = flags.mean()
        if accept[k] < FROZEN_ACCEPTANCE:
            raise RuntimeError(f"chain frozen at beta={beta:.6g}")
        means[k], errs[k] = _batch_mean_stats(log_ls, n_batches)

    log_z = float(np.dot(weights, means))
    std_err = float(math.sqrt(np.sum((weights * errs) ** 2)))
    diag = {"acceptance_min": float(accept.min()), "acceptance_mean": float(accept.mean()),
            "rungs": float(betas.size)}
    est = EvidenceEstimate(log_z, std_err, evals, diag)
    est.trace = {"betas": betas, "mean_log_l": means, "std_err_log_l": errs,
                 "acceptance": accept}
    return est


@dataclass
class AisRun:
    log_weights: np.ndarray
    acceptance: np.ndarray
    betas: np.ndarray
    states: list = field(default_factory=list)

    @property
    def n_chains(self) -> int:
        return int(self.log_weights.size)


def jackknife_log_mean_exp(log_weights) -> float:
    lw = np.asarray(log_weights, dtype=float)
    M = lw.size
    if M < 2:
        raise ValueError("need at least two weights")
    shift = lw.max()
    w = np.exp(lw - shift)
    total = w.sum()
    loo = np.log((total - w) / (M - 1))
    # rounding can make (total - w) vanish for a dominant weight
    loo = np.where(np.isfinite(loo), loo, np.log(np.maximum(total - w, 1e-300) / (M - 1)))
    return float(math.sqrt((M - 1) / M * np.sum((loo - loo.mean()) ** 2)))


def ais_log_evidence(model: ModelSpec, schedule: Schedule | None = None, n_chains: int = 64,
                     n_steps: int = 10, rng=None, keep_states: bool = False):
    """Annealed importance sampling along the geometric path.

    All ``n_chains`` sequences start from exact prior draws and advance in
    lockstep.  Chain ``j`` accumulates
    ``log w_j = sum_i (beta[i+1] - beta[i]) * log L(x_i)`` and is moved with
    ``n_steps`` Metropolis updates targeting ``beta[i+1]`` before the next
    increment.  Proposal scales at each rung follow the spread of the
    population, with a common multiplier tuned by the previous rung's
    acceptance.  The evidence is the arithmetic mean of the weights.
    """
    if n_chains < 2:
        raise ValueError("AIS needs at least two chains")
    schedule = schedule or make_schedule()
    betas = schedule.array
    gen = as_generator(rng)

    states = [ChainState.at(model, model.prior_sample(gen), Tempered(0.0))
              for _ in range(n_chains)]
    evals = n_chains
    log_w = np.zeros(n_chains)
    factor = np.array([1.0])
    fallback = initial_scales(model, gen)
    accept = np.ones(betas.size - 1)
    kept = [list(s.theta for s in states)] if keep_states else []

    for i in range(betas.size - 1):
        log_l = np.array([s.log_l for s in states])
        log_w += (betas[i + 1] - betas[i]) * log_l
        if i + 1 == betas.size - 1:
            break
        spread = np.std(np.array([s.theta for s in states]), axis=0)
        spread = np.where(spread > 0, spread, fallback)
        scales = factor[0] * spread
        target = Tempered(float(betas[i + 1]))
        flags = []
        for j in range(n_chains):
            st = states[j]
            for _ in range(n_steps):
                st, acc, ev = metropolis_update(model, st, scales, target, gen)
                evals += ev
                flags.append(acc)
            states[j] = st
        accept[i + 1] = np.mean(flags)
        factor = adapt_step_scales(flags, factor, delta=0.3)
        if keep_states:
            kept.append([s.theta for s in states])

    run = AisRun(log_w, accept, betas, kept)
    est = EvidenceEstimate(log_mean_exp(log_w), jackknife_log_mean_exp(log_w), evals,
                           {"acceptance_min": float(accept.min()),
                            "ess": effective_sample_size(log_w),
                            "log_z_geometric": float(np.mean(log_w))})
    return est, run


def ais_ti_contrast(run: AisRun):
    """Arithmetic (AIS) versus geometric (TI-style) average of the AIS weights.

    Returns ``(log_z_arith, log_z_geom)``; the first is never smaller.
    """
    lw = np.asarray(run.log_weights, dtype=float)
    geom = float(np.mean(lw))
    if np.all(lw == lw[0]):
        return float(lw[0]), float(lw[0])
    arith = log_mean_exp(lw)
    # Jensen guarantees arith >= geom; clamp away last-bit rounding only
    return max(arith, geom), geom
