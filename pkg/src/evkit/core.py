"""Model abstraction, log-domain helpers and the shared Metropolis kernel.

Every estimator in the package works with a :class:`ModelSpec` and returns an
:class:`EvidenceEstimate`.  All probabilities are carried as natural logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "ModelSpec",
    "EvidenceEstimate",
    "LogOddsResult",
    "RngHandle",
    "Prior",
    "Tempered",
    "Constrained",
    "ChainState",
    "log_sum_exp",
    "log_mean_exp",
    "metropolis_step",
    "metropolis_update",
    "adapt_step_scales",
    "as_generator",
]

ADAPT_DELTA = 0.1
ACCEPT_LOW = 0.2
ACCEPT_HIGH = 0.5


@dataclass(frozen=True)
class ModelSpec:
    """A parameterized model: prior, likelihood and an exact prior sampler.

    Parameters
    ----------
    dim : int
        Number of parameters.
    log_prior : callable
        ``theta -> float``, normalized log prior density.
    log_likelihood : callable
        ``theta -> float``, log likelihood of the data.
    prior_sample : callable
        ``numpy.random.Generator -> ndarray`` of shape ``(dim,)``.
    bounds : sequence of (lower, upper)
        Support of the prior per dimension, possibly infinite.
    name : str
        Label used in reports.
    """

    dim: int
    log_prior: Callable[[np.ndarray], float]
    log_likelihood: Callable[[np.ndarray], float]
    prior_sample: Callable[[np.random.Generator], np.ndarray]
    bounds: tuple = ()
    name: str = "model"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be a positive integer")
        bounds = self.bounds or tuple((-math.inf, math.inf) for _ in range(self.dim))
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        if len(bounds) != self.dim:
            raise ValueError("bounds must have one (lower, upper) pair per dimension")
        for lo, hi in bounds:
            if not lo < hi:
                raise ValueError("each bound needs lower < upper")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "_lower", np.array([b[0] for b in bounds]))
        object.__setattr__(self, "_upper", np.array([b[1] for b in bounds]))

    @property
    def lower(self) -> np.ndarray:
        return self._lower

    @property
    def upper(self) -> np.ndarray:
        return self._upper

    def in_bounds(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self._lower) and np.all(theta <= self._upper))

    def log_joint(self, theta) -> float:
        """Unnormalized log posterior, ``log_prior + log_likelihood``."""
        lp = self.log_prior(theta)
        if lp == -math.inf:
            return -math.inf
        return lp + self.log_likelihood(theta)


@dataclass
class EvidenceEstimate:
    """Log-evidence estimate in nats with its standard error."""

    log_z: float
    std_err: float
    n_likelihood_evals: int = 0
    diagnostics: dict = field(default_factory=dict)
    # per-stage arrays (rung means, live-point traces); not serialized
    trace: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self.std_err >= 0:
            raise ValueError("std_err must be non-negative")

    def to_dict(self) -> dict:
        return {
            "log_z": float(self.log_z),
            "std_err": float(self.std_err),
            "n_evals": int(self.n_likelihood_evals),
            "diagnostics": {k: _plain(v) for k, v in sorted(self.diagnostics.items())},
        }


def _plain(value):
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    if isinstance(value, (list, tuple, np.ndarray)):
        return [_plain(v) for v in value]
    return value


@dataclass(frozen=True)
class LogOddsResult:
    """Log odds ratio of model 1 against model 2."""

    log_z_1: float
    log_z_2: float
    std_err_1: float = 0.0
    std_err_2: float = 0.0

    @property
    def log_or(self) -> float:
        return self.log_z_1 - self.log_z_2

    @property
    def std_err(self) -> float:
        return math.hypot(self.std_err_1, self.std_err_2)

    @classmethod
    def from_estimates(cls, first: EvidenceEstimate, second: EvidenceEstimate):
        return cls(first.log_z, second.log_z, first.std_err, second.std_err)

    def to_dict(self) -> dict:
        return {
            "log_or": float(self.log_or),
            "log_z_1": float(self.log_z_1),
            "log_z_2": float(self.log_z_2),
            "std_err_1": float(self.std_err_1),
            "std_err_2": float(self.std_err_2),
            "std_err": float(self.std_err),
        }


class RngHandle:
    """Seeded random stream; ``(seed, stream_id)`` fixes the draw sequence.

    Distinct stream ids spawn statistically independent children of the same
    root seed via :class:`numpy.random.SeedSequence`.
    """

    def __init__(self, seed: int = 0, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        seq = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def __repr__(self):
        return f"RngHandle(seed={self.seed}, stream_id={self.stream_id})"

    def __getattr__(self, name):
        # delegate draws (normal, uniform, ...) to the wrapped generator
        if name == "generator":
            raise AttributeError(name)
        return getattr(self.generator, name)


RngLike = Union[RngHandle, np.random.Generator, int, None]


def as_generator(rng: RngLike) -> np.random.Generator:
    if isinstance(rng, RngHandle):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    return RngHandle(0 if rng is None else rng).generator


def log_sum_exp(values) -> float:
    """``log(sum(exp(values)))`` with a max shift."""
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty input")
    vmax = np.max(v)
    if vmax == -math.inf:
        return -math.inf
    if vmax == math.inf:
        return math.inf
    return float(vmax + math.log(np.sum(np.exp(v - vmax))))


def log_mean_exp(values) -> float:
    v = np.asarray(values, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty input")
    return log_sum_exp(v) - math.log(v.size)


# Targets for the Metropolis kernel.


@dataclass(frozen=True)
class Prior:
    """Sample the prior itself."""


@dataclass(frozen=True)
class Tempered:
    """``log_prior + beta * log_likelihood``."""

    beta: float


@dataclass(frozen=True)
class Constrained:
    """Prior restricted to ``log_likelihood > log_l_min``.

    ``label_min`` enables lexicographic tie-breaking on an auxiliary uniform
    label, so plateaus of constant likelihood can still be shrunk.  With
    ``label_min=None`` the floor is the plain strict inequality.
    """

    log_l_min: float
    label_min: float | None = None


Target = Union[Prior, Tempered, Constrained]


@dataclass(frozen=True)
class ChainState:
    """Current chain position with cached log densities."""

    theta: np.ndarray
    log_prior: float
    log_l: float
    label: float = 0.5

    @classmethod
    def at(cls, model: ModelSpec, theta, target: Target, label: float = 0.5):
        theta = np.array(theta, dtype=float)
        if theta.shape != (model.dim,):
            raise ValueError(f"theta must have shape ({model.dim},)")
        if not model.in_bounds(theta):
            raise ValueError("theta outside the prior support")
        lp = model.log_prior(theta)
        if not math.isfinite(lp):
            raise ValueError("non-finite log prior at theta")
        ll = math.nan
        if not isinstance(target, Prior):
            ll = model.log_likelihood(theta)
            if not math.isfinite(ll):
                raise ValueError("non-finite log likelihood at theta")
        if isinstance(target, Constrained) and not _above_floor(ll, label, target):
            raise ValueError("theta violates the likelihood floor")
        return cls(theta, lp, ll, label)


def _above_floor(log_l: float, label: float, target: Constrained) -> bool:
    if log_l > target.log_l_min:
        return True
    if target.label_min is None:
        return False
    return log_l == target.log_l_min and label > target.label_min


def reflect(x: np.ndarray, lower: np.ndarray, upper: np.ndarray) -> np.ndarray:
    """Fold ``x`` back into ``[lower, upper]`` by mirror reflection."""
    x = np.array(x, dtype=float)
    if ((x >= lower) & (x <= upper)).all():
        return x
    both = np.isfinite(lower) & np.isfinite(upper)
    if np.any(both):
        lo, hi = lower[both], upper[both]
        width = hi - lo
        y = np.mod(x[both] - lo, 2.0 * width)
        x[both] = lo + np.where(y > width, 2.0 * width - y, y)
    low_only = np.isfinite(lower) & ~np.isfinite(upper)
    x[low_only] = lower[low_only] + np.abs(x[low_only] - lower[low_only])
    high_only = ~np.isfinite(lower) & np.isfinite(upper)
    x[high_only] = upper[high_only] - np.abs(upper[high_only] - x[high_only])
    return x


def _reflect_unit(u: float) -> float:
    u = math.fmod(abs(u), 2.0)
    return 2.0 - u if u > 1.0 else u


def metropolis_update(
    model: ModelSpec,
    state: ChainState,
    step_scales,
    target: Target,
    rng: np.random.Generator,
    label_scale: float = 0.0,
):
    """One Gaussian random-walk Metropolis step from a cached state.

    Returns ``(new_state, accepted, n_likelihood_evals)``.
    """
    scales = np.asarray(step_scales, dtype=float)
    proposal = state.theta + scales * rng.standard_normal(model.dim)
    proposal = reflect(proposal, model.lower, model.upper)
    label = state.label
    if isinstance(target, Constrained) and target.label_min is not None and label_scale > 0:
        label = _reflect_unit(label + label_scale * rng.standard_normal())
    u = rng.random()
    log_u = math.log(u) if u > 0.0 else -math.inf

    lp = model.log_prior(proposal)
    if lp == -math.inf:
        return state, False, 0

    if isinstance(target, Prior):
        accepted = log_u < lp - state.log_prior
        new = ChainState(proposal, lp, math.nan, label) if accepted else state
        return new, bool(accepted), 0

    ll = model.log_likelihood(proposal)
    if isinstance(target, Tempered):
        delta = (lp + target.beta * ll) - (state.log_prior + target.beta * state.log_l)
        accepted = math.isfinite(ll) and log_u < delta
    else:
        accepted = math.isfinite(ll) and _above_floor(ll, label, target) and (
            log_u < lp - state.log_prior
        )
    new = ChainState(proposal, lp, ll, label) if accepted else state
    return new, bool(accepted), 1


def metropolis_step(model: ModelSpec, theta, step_scales, target: Target, rng: RngLike):
    """Single Metropolis update of ``theta`` under ``target``.

    Parameters
    ----------
    model : ModelSpec
    theta : array_like
        Current point, inside the prior support (and above the floor for a
        :class:`Constrained` target).
    step_scales : array_like
        Per-coordinate standard deviations of the Gaussian proposal.
    target : Prior, Tempered or Constrained
    rng : RngHandle or numpy Generator

    Returns
    -------
    theta_new : ndarray
    accepted : bool
    """
    state = ChainState.at(model, theta, target)
    new, accepted, _ = metropolis_update(model, state, step_scales, target, as_generator(rng))
    return new.theta.copy(), accepted


def adapt_step_scales(history: Sequence[bool], step_scales, delta: float = ADAPT_DELTA):
    """Nudge proposal scales towards an acceptance rate in [0.2, 0.5]."""
    history = np.asarray(history, dtype=float)
    scales = np.asarray(step_scales, dtype=float)
    if history.size == 0:
        return scales.copy()
    rate = history.mean()
    if rate > ACCEPT_HIGH:
        return scales * math.exp(delta)
    if rate < ACCEPT_LOW:
        return scales * math.exp(-delta)
    return scales.copy()


def initial_scales(model: ModelSpec, rng: np.random.Generator, n: int = 200, factor: float = 0.5):
    """Starting proposal scales from the spread of ``n`` prior draws."""
    draws = np.array([model.prior_sample(rng) for _ in range(n)])
    sd = draws.std(axis=0)
    sd[~(sd > 0)] = 1.0
    return factor * sd
