"""Mean-field variational Bayes for a Gaussian with unknown mean and precision.

Model: ``x_i ~ N(mu, 1/tau)`` with independent priors ``mu ~ N(m0, 1/lam0)``
and ``tau ~ Gamma(a0, b0)`` (shape, rate).  The factorization
``Q(mu, tau) = N(mu; m, s2) Gamma(tau; a, b)`` gives exact coordinate updates
and a closed-form negative free energy ``F <= log Z``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import integrate, optimize, special

from .core import ModelSpec

LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class NormalGammaModel:
    data: np.ndarray
    m0: float = 0.0
    lam0: float = 0.25
    a0: float = 2.0
    b0: float = 2.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float).ravel()
        if not (self.lam0 > 0 and self.a0 > 0 and self.b0 > 0):
            raise ValueError("prior precision, shape and rate must be positive")

    @property
    def n(self) -> int:
        return int(self.data.size)

    def log_likelihood(self, theta) -> float:
        mu, tau = float(theta[0]), float(theta[1])
        if tau <= 0:
            return -math.inf
        r = self.data - mu
        return 0.5 * self.n * (math.log(tau) - LOG_2PI) - 0.5 * tau * float(r @ r)

    def log_prior(self, theta) -> float:
        mu, tau = float(theta[0]), float(theta[1])
        if tau <= 0:
            return -math.inf
        lp_mu = 0.5 * (math.log(self.lam0) - LOG_2PI) - 0.5 * self.lam0 * (mu - self.m0) ** 2
        lp_tau = (self.a0 * math.log(self.b0) - special.gammaln(self.a0)
                  + (self.a0 - 1.0) * math.log(tau) - self.b0 * tau)
        return lp_mu + lp_tau

    def log_joint(self, theta) -> float:
        lp = self.log_prior(theta)
        return lp if lp == -math.inf else lp + self.log_likelihood(theta)

    def prior_sample(self, rng) -> np.ndarray:
        return np.array([self.m0 + rng.standard_normal() / math.sqrt(self.lam0),
                         rng.gamma(self.a0, 1.0 / self.b0)])

    def log_marginal_given_tau(self, tau: float) -> float:
        """``log p(x | tau)`` with ``mu`` integrated out analytically."""
        n = self.n
        if n == 0:
            return 0.0
        s2 = 1.0 / tau
        v = 1.0 / self.lam0
        r = self.data - self.m0
        denom = s2 + n * v
        quad = (float(r @ r) - v * float(r.sum()) ** 2 / denom) / s2
        log_det = (n - 1) * math.log(s2) + math.log(denom)
        return -0.5 * (n * LOG_2PI + log_det + quad)

    def log_evidence(self) -> float:
        """``log Z`` by quadrature over ``log tau`` of the analytic mean marginal."""
        if self.n == 0:
            return 0.0

        def g(u):
            tau = math.exp(u)
            lp = (self.a0 * math.log(self.b0) - special.gammaln(self.a0)
                  + self.a0 * u - self.b0 * tau)
            return lp + self.log_marginal_given_tau(tau)

        a_post = self.a0 + 0.5 * self.n
        b_guess = self.b0 + 0.5 * float(np.sum((self.data - self.data.mean()) ** 2)) + 1e-300
        u0 = math.log(a_post / b_guess)
        res = optimize.minimize_scalar(lambda u: -g(u), bracket=(u0 - 1.0, u0 + 1.0))
        u_star, g_star = float(res.x), -float(res.fun)
        width = 1.0 / math.sqrt(max(a_post, 0.5))
        lo, hi = u_star - 60.0 * width - 5.0, u_star + 60.0 * width + 5.0
        f = lambda u: math.exp(g(u) - g_star)
        kw = {"epsabs": 0.0, "epsrel": 1e-13, "limit": 500}
        left = integrate.quad(f, lo, u_star, **kw)[0]
        right = integrate.quad(f, u_star, hi, **kw)[0]
        return g_star + math.log(left + right)

    def to_spec(self) -> ModelSpec:
        return ModelSpec(2, self.log_prior, self.log_likelihood, self.prior_sample,
                         ((-math.inf, math.inf), (0.0, math.inf)), "normal-gamma")


@dataclass(frozen=True)
class MeanFieldState:
    """``Q(mu) = N(m, s2)`` and ``Q(tau) = Gamma(a, b)`` (shape, rate)."""

    m: float
    s2: float
    a: float
    b: float
    f_history: tuple = field(default=())
    converged: bool = False

    def __post_init__(self):
        if not (self.s2 > 0 and self.a > 0 and self.b > 0):
            raise ValueError("variance, shape and rate must be positive")

    @classmethod
    def from_prior(cls, model: NormalGammaModel) -> "MeanFieldState":
        return cls(model.m0, 1.0 / model.lam0, model.a0, model.b0)

    @property
    def mean_tau(self) -> float:
        return self.a / self.b

    @property
    def mean_log_tau(self) -> float:
        return float(special.digamma(self.a)) - math.log(self.b)


def _expected_sq_resid(state: MeanFieldState, x: np.ndarray) -> float:
    r = x - state.m
    return float(r @ r) + x.size * state.s2


def negative_free_energy(state: MeanFieldState, model: NormalGammaModel) -> float:
    """Closed-form ``F = E_Q[log p(x, mu, tau)] + H[Q]``."""
    if not (state.s2 > 0 and state.a > 0 and state.b > 0):
        raise ValueError("invalid variational state")
    x, n = model.data, model.n
    e_tau, e_log_tau = state.mean_tau, state.mean_log_tau
    e_lik = 0.5 * n * (e_log_tau - LOG_2PI) - 0.5 * e_tau * _expected_sq_resid(state, x)
    e_pmu = 0.5 * (math.log(model.lam0) - LOG_2PI) - 0.5 * model.lam0 * (
        (state.m - model.m0) ** 2 + state.s2)
    e_ptau = (model.a0 * math.log(model.b0) - special.gammaln(model.a0)
              + (model.a0 - 1.0) * e_log_tau - model.b0 * e_tau)
    h_mu = 0.5 * (LOG_2PI + 1.0 + math.log(state.s2))
    h_tau = (state.a - math.log(state.b) + special.gammaln(state.a)
             + (1.0 - state.a) * special.digamma(state.a))
    return float(e_lik + e_pmu + e_ptau + h_mu + h_tau)


def coordinate_update(state: MeanFieldState, block: str, model: NormalGammaModel) -> MeanFieldState:
    """Replace one factor by its exact optimum given the other."""
    x, n = model.data, model.n
    if block == "mean":
        e_tau = state.mean_tau
        prec = model.lam0 + n * e_tau
        m = (model.lam0 * model.m0 + e_tau * float(x.sum())) / prec
        return replace(state, m=m, s2=1.0 / prec)
    if block == "precision":
        return replace(state, a=model.a0 + 0.5 * n,
                       b=model.b0 + 0.5 * _expected_sq_resid(state, x))
    raise ValueError(f"unknown block {block!r}")


def vb_lower_bound(model: NormalGammaModel, max_sweeps: int = 200, tol: float = 1e-12,
                   state: MeanFieldState | None = None):
    """Alternate mean and precision updates until ``|dF| < tol``.

    Returns ``(F_final, state)``; ``state.converged`` is False when
    ``max_sweeps`` ran out first.
    """
    if model.n == 0:
        raise ValueError("data must be non-empty")
    state = state or MeanFieldState.from_prior(model)
    history = [negative_free_energy(state, model)]
    converged = False
    for _ in range(max_sweeps):
        state = coordinate_update(state, "mean", model)
        state = coordinate_update(state, "precision", model)
        history.append(negative_free_energy(state, model))
        if abs(history[-1] - history[-2]) < tol:
            converged = True
            break
    state = replace(state, f_history=tuple(history), converged=converged)
    return history[-1], state
