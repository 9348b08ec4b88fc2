"""Laplace approximation of the evidence.

A Gaussian is fitted at the mode of ``log prior + log likelihood``.  The mode
is found without derivatives and the curvature comes from central finite
differences, so any :class:`~evkit.core.ModelSpec` can be used.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .core import EvidenceEstimate, ModelSpec

EPS = np.finfo(float).eps
MAX_ITER = 10_000


@dataclass
class LaplaceResult:
    mode: np.ndarray
    log_p_at_mode: float
    hessian: np.ndarray
    log_z: float
    boundary_mode: bool = False
    n_evals: int = 0
    notes: list = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return not self.boundary_mode and math.isfinite(self.log_z)

    def to_estimate(self) -> EvidenceEstimate:
        diag = {"boundary_mode": self.boundary_mode,
                "log_det_hessian": float(np.linalg.slogdet(self.hessian)[1])}
        return EvidenceEstimate(self.log_z, 0.0, self.n_evals, diag)


class _Counted:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, x):
        self.calls += 1
        return self.fn(x)


def find_mode(log_joint, start, bounds=None, xatol: float = 1e-10) -> np.ndarray:
    """Maximize ``log_joint`` with Nelder-Mead from ``start``.

    The search runs in coordinates scaled by ``max(|start_i|, 1)`` and stops
    once the simplex diameter there falls below ``xatol``.

    Raises
    ------
    ValueError
        If ``log_joint(start)`` is not finite.
    RuntimeError
        If the iteration cap is hit before convergence.
    """
    x0 = np.atleast_1d(np.asarray(start, dtype=float))
    f0 = log_joint(x0)
    if not math.isfinite(f0):
        raise ValueError("log_joint is not finite at start")
    scale = np.maximum(np.abs(x0), 1.0)

    def neg(u):
        val = log_joint(u * scale)
        return -val if math.isfinite(val) else math.inf

    scaled_bounds = None
    if bounds is not None:
        lo = np.array([b[0] for b in bounds]) / scale
        hi = np.array([b[1] for b in bounds]) / scale
        scaled_bounds = list(zip(lo, hi))
    res = optimize.minimize(
        neg, x0 / scale, method="Nelder-Mead", bounds=scaled_bounds,
        options={"xatol": xatol, "fatol": 1e-11 * max(1.0, abs(f0)),
                 "maxiter": MAX_ITER, "maxfev": 4 * MAX_ITER, "adaptive": x0.size > 2},
    )
    if not res.success:
        raise RuntimeError("mode search failed")
    x = res.x * scale
    if bounds is not None:
        x = np.clip(x, [b[0] for b in bounds], [b[1] for b in bounds])
    return x


def default_step(x0, power: float = 1.0 / 3.0) -> np.ndarray:
    return np.maximum(np.abs(np.asarray(x0, dtype=float)), 1.0) * EPS**power


def hessian_fd(log_joint, x0, h=None) -> np.ndarray:
    """Finite-difference matrix ``A = -grad grad log_joint`` at ``x0``.

    Uses central second differences with steps ``h`` (default
    ``max(|x0|, 1) * eps**(1/3)``) and returns the symmetrized result.
    """
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n = x0.size
    h = default_step(x0) if h is None else np.broadcast_to(np.asarray(h, dtype=float), (n,))

    def f(x):
        val = log_joint(x)
        if not math.isfinite(val):
            raise ValueError("non-finite log_joint on the difference stencil")
        return val

    f0 = f(x0)
    H = np.empty((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        H[i, i] = (f(x0 + e) - 2.0 * f0 + f(x0 - e)) / h[i] ** 2
        for j in range(i):
            d = np.zeros(n)
            d[j] = h[j]
            H[i, j] = (f(x0 + e + d) - f(x0 + e - d) - f(x0 - e + d) + f(x0 - e - d)) / (
                4.0 * h[i] * h[j])
            H[j, i] = H[i, j]
    A = -H
    return 0.5 * (A + A.T)


def laplace_log_evidence(model: ModelSpec, start=None, h=None) -> LaplaceResult:
    """Laplace estimate ``log p(x0) + N/2 log 2 pi - 1/2 log det A``.

    The difference step defaults to ``max(|x0|, 1) * eps**(1/4)``, which keeps
    round-off in ``A`` small relative to the log-density's magnitude.
    """
    log_joint = _Counted(model.log_joint)
    if start is None:
        start = model.prior_sample(np.random.default_rng(0))
    mode = find_mode(log_joint, start, model.bounds)
    step = default_step(mode, 0.25) if h is None else np.asarray(h, dtype=float)

    notes = []
    gap = np.minimum(mode - model.lower, model.upper - mode)
    boundary = bool(np.any(gap < 2.0 * step))
    if boundary:
        notes.append("boundary mode - Laplace unreliable")
        warnings.warn("boundary mode - Laplace unreliable", RuntimeWarning, stacklevel=2)
        try:
            A = hessian_fd(log_joint, mode, step)
        except ValueError:
            n = model.dim
            return LaplaceResult(mode, float(log_joint(mode)), np.full((n, n), np.nan),
                                 math.nan, True, log_joint.calls, notes)
    else:
        A = hessian_fd(log_joint, mode, step)

    try:
        chol = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise ValueError("saddle or ridge at mode") from None
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    log_p = float(log_joint(mode))
    log_z = log_p + 0.5 * model.dim * math.log(2.0 * math.pi) - 0.5 * log_det
    return LaplaceResult(mode, log_p, A, log_z, boundary, log_joint.calls, notes)
