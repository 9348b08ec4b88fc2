"""Reference models with known evidence, and the mixture model-order problem.

The closed forms here serve as oracles for the stochastic estimators.  The
model zoo at the bottom maps CLI names such as ``"mixture:K=2"`` to built
:class:`~evkit.core.ModelSpec` instances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
from scipy import integrate, optimize
from scipy.special import gammaln, log_ndtr

from .core import ModelSpec

LOG_2PI = math.log(2.0 * math.pi)


def log_diff_ndtr(u: float, l: float) -> float:
    """``log(Phi(u) - Phi(l))`` for ``l < u`` without cancellation."""
    if not l < u:
        return -math.inf
    if l > 0.0:
        # both in the upper tail: use survival functions
        a, b = log_ndtr(-l), log_ndtr(-u)
    else:
        a, b = log_ndtr(u), log_ndtr(l)
    return float(a + _log1mexp(b - a))


def _log1mexp(x: float) -> float:
    """``log(1 - exp(x))`` for ``x <= 0``."""
    if x == -math.inf:
        return 0.0
    if x > -math.log(2.0):
        return math.log(-math.expm1(x))
    return math.log1p(-math.exp(x))


# ---------------------------------------------------------------------------
# Gaussian likelihood, uniform prior on the location


@dataclass(frozen=True)
class GaussianUniformModel:
    """Known-noise Gaussian data with a uniform prior on the mean.

    The data enter only through ``n``, the sample average ``d_bar`` and the
    (biased, 1/n) sample variance ``v``.
    """

    n: int
    sigma: float
    x_min: float
    x_max: float
    d_bar: float
    v: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.v < 0:
            raise ValueError("sample variance must be non-negative")
        if self.n < 1:
            raise ValueError("need at least one observation")

    @classmethod
    def from_data(cls, data, sigma: float, x_min: float, x_max: float):
        data = np.asarray(data, dtype=float)
        return cls(data.size, sigma, x_min, x_max, float(data.mean()), float(data.var()))

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def log_l_max(self) -> float:
        s2 = self.sigma**2
        return 0.5 * self.n * (-self.v / s2 - math.log(2.0 * math.pi * s2))

    def log_likelihood_at(self, x: float) -> float:
        s2 = self.sigma**2
        return self.log_l_max - 0.5 * self.n * (x - self.d_bar) ** 2 / s2

    def log_likelihood(self, theta) -> float:
        return self.log_likelihood_at(float(theta[0]))

    def log_prior(self, theta) -> float:
        x = float(theta[0])
        if self.x_min <= x <= self.x_max:
            return -math.log(self.width)
        return -math.inf

    def prior_sample(self, rng) -> np.ndarray:
        return np.array([rng.uniform(self.x_min, self.x_max)])

    def log_evidence(self) -> float:
        return gaussian_uniform_log_evidence(self)

    def to_spec(self) -> ModelSpec:
        return ModelSpec(1, self.log_prior, self.log_likelihood, self.prior_sample,
                         ((self.x_min, self.x_max),), name="gaussian-uniform")


def gaussian_uniform_log_evidence(model: GaussianUniformModel) -> float:
    """Closed-form log evidence of :class:`GaussianUniformModel`.

    ``log Z = log L_max + log(sqrt(2 pi / n) sigma / width) + log(erf_sum / 2)``
    where the erf sum is evaluated as twice a normal interval probability so
    that it stays accurate when ``d_bar`` is far outside the prior box.
    """
    if not model.width > 0:
        raise ValueError("prior width must be positive")
    k = math.sqrt(model.n) / model.sigma
    upper = k * (model.x_max - model.d_bar)
    lower = k * (model.x_min - model.d_bar)
    # (erf(a) + erf(b)) / 2 == Phi(upper) - Phi(lower)
    log_erf_half = log_diff_ndtr(upper, lower)
    return (model.log_l_max + 0.5 * (LOG_2PI - math.log(model.n))
            + math.log(model.sigma) - math.log(model.width) + log_erf_half)


class OccamDecomposition(NamedTuple):
    log_l_max: float
    log_w: float

    @property
    def log_z(self) -> float:
        return self.log_l_max + self.log_w


def occam_decomposition(model: ModelSpec, n_grid: int = 4001) -> OccamDecomposition:
    """Split the evidence of a 1-D uniform-prior model into ``L_max * W``.

    The maximum likelihood is located on a dense grid and refined with a
    bounded scalar search.  The effective width ``delta_x`` is the quadrature
    of ``L / L_max`` over the prior range so that ``W = delta_x / width``.
    """
    if model.dim != 1:
        raise ValueError("occam_decomposition needs a 1-D model")
    (x_min, x_max), = model.bounds
    if not (math.isfinite(x_min) and math.isfinite(x_max)):
        raise ValueError("uniform prior needs a finite range")
    width = x_max - x_min
    grid = np.linspace(x_min, x_max, n_grid)
    log_p = np.array([model.log_prior(np.array([x])) for x in grid])
    if not np.allclose(log_p, -math.log(width), rtol=0, atol=1e-9):
        raise ValueError("prior is not uniform on its bounds")
    log_l = np.array([model.log_likelihood(np.array([x])) for x in grid])
    # zero likelihood (-inf) is allowed; NaN and +inf are not
    if np.any(np.isnan(log_l)) or np.any(log_l == math.inf) or not np.any(np.isfinite(log_l)):
        raise ValueError("non-finite likelihood on grid")

    i = int(np.argmax(log_l))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n_grid - 1)]
    x_hat, f_hat = grid[i], log_l[i]
    if hi > lo:
        res = optimize.minimize_scalar(lambda x: -model.log_likelihood(np.array([x])),
                                       bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12 * max(1.0, abs(x_hat))})
        if -res.fun > f_hat:
            x_hat, f_hat = float(res.x), float(-res.fun)

    def ratio(x):
        return math.exp(model.log_likelihood(np.array([x])) - f_hat)

    # split at the peak so the adaptive rule resolves narrow likelihoods
    pieces = [(x_min, x_hat), (x_hat, x_max)]
    delta_x = 0.0
    for a, b in pieces:
        if b > a:
            val, _ = integrate.quad(ratio, a, b, epsabs=0.0, epsrel=1e-13, limit=500)
            delta_x += val
    log_w = math.log(delta_x) - math.log(width)
    return OccamDecomposition(float(f_hat), min(log_w, 0.0))


# ---------------------------------------------------------------------------
# Gaussian likelihood, Gaussian prior on the mean


@dataclass(frozen=True)
class ConjugateGaussianModel:
    """Gaussian observations with known noise and a Gaussian prior on the mean."""

    prior_mean: float
    prior_var: float
    noise_var: float
    data: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "data", tuple(float(x) for x in np.ravel(self.data)))
        object.__setattr__(self, "_y", np.asarray(self.data, dtype=float))

    @property
    def y(self) -> np.ndarray:
        return self._y

    @property
    def posterior_var(self) -> float:
        return 1.0 / (1.0 / self.prior_var + len(self.data) / self.noise_var)

    @property
    def posterior_mean(self) -> float:
        return self.posterior_var * (self.prior_mean / self.prior_var
                                     + self.y.sum() / self.noise_var)

    def log_likelihood(self, theta) -> float:
        r = self._y - float(theta[0])
        n = r.size
        return -0.5 * (n * (LOG_2PI + math.log(self.noise_var)) + np.dot(r, r) / self.noise_var)

    def log_prior(self, theta) -> float:
        d = float(theta[0]) - self.prior_mean
        return -0.5 * (LOG_2PI + math.log(self.prior_var) + d * d / self.prior_var)

    def prior_sample(self, rng) -> np.ndarray:
        return np.array([rng.normal(self.prior_mean, math.sqrt(self.prior_var))])

    def log_evidence(self) -> float:
        return conjugate_log_evidence(self)

    def to_spec(self) -> ModelSpec:
        return ModelSpec(1, self.log_prior, self.log_likelihood, self.prior_sample,
                         name="conjugate")


def conjugate_log_evidence(model: ConjugateGaussianModel) -> float:
    """Exact log marginal likelihood, data ~ N(mu0 1, s2 I + t2 11^T)."""
    if not (model.noise_var > 0 and model.prior_var > 0):
        raise ValueError("variances must be positive")
    r = model.y - model.prior_mean
    n = r.size
    if n == 0:
        return 0.0
    s2, t2 = model.noise_var, model.prior_var
    total = r.sum()
    quad = np.dot(r, r) / s2 - t2 * total**2 / (s2 * (s2 + n * t2))
    return float(-0.5 * (n * (LOG_2PI + math.log(s2)) + math.log1p(n * t2 / s2) + quad))


# ---------------------------------------------------------------------------
# Small toy models


@dataclass(frozen=True)
class ConstantModel:
    """Likelihood fixed at ``exp(log_c)`` under a uniform prior on the unit box."""

    log_c: float = -1.5
    dim: int = 2

    def log_likelihood(self, theta) -> float:
        return self.log_c

    def log_prior(self, theta) -> float:
        t = np.asarray(theta)
        return 0.0 if np.all((t >= 0) & (t <= 1)) else -math.inf

    def prior_sample(self, rng) -> np.ndarray:
        return rng.random(self.dim)

    def log_evidence(self) -> float:
        return self.log_c

    def to_spec(self) -> ModelSpec:
        return ModelSpec(self.dim, self.log_prior, self.log_likelihood, self.prior_sample,
                         tuple((0.0, 1.0) for _ in range(self.dim)), name="constant")


@dataclass(frozen=True)
class GammaShapeModel:
    """Uniform prior on ``(0, upper)`` and likelihood ``x**(shape-1) exp(-x)``.

    The posterior is a truncated Gamma, skewed for small ``shape``, which makes
    it a simple case where the Laplace approximation is visibly inexact.
    """

    shape: float = 3.0
    upper: float = 50.0

    def log_likelihood(self, theta) -> float:
        x = float(theta[0])
        if x <= 0:
            return -math.inf
        return (self.shape - 1.0) * math.log(x) - x

    def log_prior(self, theta) -> float:
        x = float(theta[0])
        return -math.log(self.upper) if 0.0 <= x <= self.upper else -math.inf

    def prior_sample(self, rng) -> np.ndarray:
        return np.array([rng.uniform(0.0, self.upper)])

    def log_evidence(self) -> float:
        from scipy.special import gammainc
        return float(gammaln(self.shape) + math.log(gammainc(self.shape, self.upper))
                     - math.log(self.upper))

    def to_spec(self) -> ModelSpec:
        return ModelSpec(1, self.log_prior, self.log_likelihood, self.prior_sample,
                         ((0.0, self.upper),), name="gamma")


# ---------------------------------------------------------------------------
# 1-D Gaussian mixture for model-order selection


def stick_breaking(fractions) -> np.ndarray:
    """Map ``K-1`` stick fractions in [0, 1] onto ``K`` simplex weights."""
    v = np.asarray(fractions, dtype=float)
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - v)))
    return np.concatenate((v, [1.0])) * remaining


def inverse_stick_breaking(weights) -> np.ndarray:
    w = np.asarray(weights, dtype=float)
    left = 1.0 - np.concatenate(([0.0], np.cumsum(w[:-2])))
    out = np.divide(w[:-1], left, out=np.zeros(w.size - 1), where=left > 0)
    return np.clip(out, 0.0, 1.0)


def mixture_log_likelihood(weights, locs, scales, data) -> float:
    """Log of the i.i.d. product of a 1-D Gaussian mixture density."""
    w = np.asarray(weights, dtype=float)
    mu = np.asarray(locs, dtype=float)
    s = np.asarray(scales, dtype=float)
    x = np.asarray(data, dtype=float)
    with np.errstate(divide="ignore"):
        log_w = np.log(w)
    z = (x[:, None] - mu[None, :]) / s[None, :]
    a = log_w[None, :] - np.log(s)[None, :] - 0.5 * z * z
    m = a.max(axis=1)
    keep = np.isfinite(m)
    if not np.all(keep):
        return -math.inf
    return float(np.sum(m + np.log(np.exp(a - m[:, None]).sum(axis=1))) - 0.5 * x.size * LOG_2PI)


@dataclass(frozen=True)
class MixtureOrderProblem:
    """K-component 1-D Gaussian mixture with uniform boxes on every parameter.

    Parameter vector layout: ``K`` locations, ``K`` scales, then ``K-1``
    stick-breaking fractions for the weights.
    """

    K: int
    data: tuple
    loc_box: tuple
    scale_box: tuple

    def __post_init__(self):
        object.__setattr__(self, "_x", np.asarray(self.data, dtype=float))
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        object.__setattr__(self, "_lo", lo)
        object.__setattr__(self, "_hi", hi)
        object.__setattr__(self, "_log_volume", float(np.sum(np.log(hi - lo))))

    @property
    def dim(self) -> int:
        return 3 * self.K - 1

    @property
    def bounds(self) -> tuple:
        return ((self.loc_box,) * self.K + (self.scale_box,) * self.K
                + ((0.0, 1.0),) * (self.K - 1))

    def unpack(self, theta):
        t = np.asarray(theta, dtype=float)
        K = self.K
        return stick_breaking(t[2 * K:]), t[:K], t[K:2 * K]

    def pack(self, weights, locs, scales) -> np.ndarray:
        return np.concatenate((locs, scales, inverse_stick_breaking(weights)))

    def log_likelihood(self, theta) -> float:
        w, mu, s = self.unpack(theta)
        return mixture_log_likelihood(w, mu, s, self._x)

    def log_prior(self, theta) -> float:
        t = np.asarray(theta, dtype=float)
        if np.any(t < self._lo) or np.any(t > self._hi):
            return -math.inf
        return -self._log_volume

    def prior_sample(self, rng) -> np.ndarray:
        return rng.uniform(self._lo, self._hi)

    def to_spec(self) -> ModelSpec:
        return ModelSpec(self.dim, self.log_prior, self.log_likelihood, self.prior_sample,
                         self.bounds, name=f"mixture:K={self.K}")


def default_boxes(data):
    x = np.asarray(data, dtype=float)
    span = float(x.max() - x.min()) or 1.0
    loc_box = (float(x.min() - 0.1 * span), float(x.max() + 0.1 * span))
    scale_box = (span / 100.0, span / 2.0)
    return loc_box, scale_box


def make_mixture_problem(K: int, data, loc_box=None, scale_box=None) -> ModelSpec:
    """Build the :class:`ModelSpec` of a ``K``-component mixture on ``data``."""
    return mixture_problem(K, data, loc_box, scale_box).to_spec()


def mixture_problem(K: int, data, loc_box=None, scale_box=None) -> MixtureOrderProblem:
    x = np.asarray(data, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("mixture needs data")
    if not 1 <= K <= 4:
        raise ValueError("K must be between 1 and 4")
    dl, ds = default_boxes(x)
    loc_box = tuple(loc_box) if loc_box is not None else dl
    scale_box = tuple(scale_box) if scale_box is not None else ds
    if not (loc_box[0] < loc_box[1] and 0 < scale_box[0] < scale_box[1]):
        raise ValueError("bad prior boxes")
    return MixtureOrderProblem(K, tuple(x.tolist()), loc_box, scale_box)


def synth_mixture_data(rng, n: int, locs, scales, weights=None) -> np.ndarray:
    locs = np.asarray(locs, dtype=float)
    scales = np.asarray(scales, dtype=float)
    weights = np.full(locs.size, 1.0 / locs.size) if weights is None else np.asarray(weights)
    comp = rng.choice(locs.size, size=n, p=weights)
    return locs[comp] + scales[comp] * rng.standard_normal(n)


# ---------------------------------------------------------------------------
# Zoo


@dataclass
class ZooEntry:
    name: str
    spec: ModelSpec
    oracle_log_z: float | None
    n_params: int
    model: object = None
    params: dict = field(default_factory=dict)


ZOO_DEFAULTS = {
    "conjugate": {"n": 20, "mean": 0.7, "noise_var": 1.0, "prior_mean": 0.0,
                  "prior_var": 4.0, "data_seed": 0},
    "gaussian-uniform": {"n": 20, "mean": 0.7, "noise_var": 1.0, "x_min": -5.0,
                         "x_max": 5.0, "data_seed": 0},
    "mixture": {"K": 2, "truth": 2, "n": 200, "sep": 6.0, "data_seed": 1},
    "constant": {"log_c": -1.5, "dim": 2},
    "gamma": {"shape": 3.0, "upper": 50.0},
    "normal-gamma": {"n": 20, "mean": 0.7, "sd": 1.0, "data_seed": 0},
}


def parse_model_name(text: str):
    """Split ``"mixture:K=2,n=100"`` into ``("mixture", {"K": 2, "n": 100})``."""
    base, _, rest = text.partition(":")
    base = base.strip()
    if base not in ZOO_DEFAULTS:
        raise ValueError(f"unknown model {base!r}; choose from {sorted(ZOO_DEFAULTS)}")
    params = dict(ZOO_DEFAULTS[base])
    for item in filter(None, (p.strip() for p in rest.split(","))):
        key, eq, value = item.partition("=")
        if not eq or key not in params:
            raise ValueError(f"bad parameter {item!r} for model {base!r}")
        params[key] = type(params[key])(float(value)) if isinstance(params[key], int) \
            else float(value)
    return base, params


def gaussian_data(n: int, mean: float, sd: float, data_seed: int) -> np.ndarray:
    rng = np.random.default_rng(int(data_seed))
    return mean + sd * rng.standard_normal(int(n))


def mixture_data(truth: int, n: int, sep: float, data_seed: int) -> np.ndarray:
    rng = np.random.default_rng(int(data_seed))
    locs = sep * (np.arange(truth) - (truth - 1) / 2.0)
    return synth_mixture_data(rng, int(n), locs, np.ones(truth))


def build_model(text: str) -> ZooEntry:
    """Instantiate a zoo model from its CLI name."""
    base, p = parse_model_name(text)
    if base == "conjugate":
        data = gaussian_data(p["n"], p["mean"], math.sqrt(p["noise_var"]), p["data_seed"])
        m = ConjugateGaussianModel(p["prior_mean"], p["prior_var"], p["noise_var"], data)
        return ZooEntry(base, m.to_spec(), m.log_evidence(), 1, m, p)
    if base == "gaussian-uniform":
        data = gaussian_data(p["n"], p["mean"], math.sqrt(p["noise_var"]), p["data_seed"])
        m = GaussianUniformModel.from_data(data, math.sqrt(p["noise_var"]), p["x_min"], p["x_max"])
        return ZooEntry(base, m.to_spec(), m.log_evidence(), 1, m, p)
    if base == "mixture":
        data = mixture_data(p["truth"], p["n"], p["sep"], p["data_seed"])
        prob = mixture_problem(p["K"], data)
        return ZooEntry(f"mixture:K={p['K']}", prob.to_spec(), None, prob.dim, prob, p)
    if base == "constant":
        m = ConstantModel(p["log_c"], p["dim"])
        return ZooEntry(base, m.to_spec(), m.log_c, m.dim, m, p)
    if base == "gamma":
        m = GammaShapeModel(p["shape"], p["upper"])
        return ZooEntry(base, m.to_spec(), m.log_evidence(), 1, m, p)
    from .varbayes import NormalGammaModel
    data = gaussian_data(p["n"], p["mean"], p["sd"], p["data_seed"])
    m = NormalGammaModel(data)
    return ZooEntry(base, m.to_spec(), m.log_evidence(), 2, m, p)
