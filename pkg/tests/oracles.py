"""Independent reference integrators used to freeze expected values.

Plain adaptive Simpson quadrature, written without scipy so that it shares no
code with the library's own quadrature paths.
"""

import math

import numpy as np


def _simpson(f, a, fa, b, fb):
    m = 0.5 * (a + b)
    fm = f(m)
    return m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def _adapt(f, a, fa, b, fb, m, fm, whole, tol, depth):
    lm, flm, left = _simpson(f, a, fa, m, fm)
    rm, frm, right = _simpson(f, m, fm, b, fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol:
        return left + right + delta / 15.0
    return (_adapt(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + _adapt(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1))


def simpson(f, a, b, tol=1e-13, depth=50, pieces=16):
    """Adaptive Simpson integral of ``f`` on ``[a, b]``.

    The interval is pre-split into ``pieces`` panels so narrow peaks are not
    missed by the first coarse estimate.
    """
    total = 0.0
    edges = [a + (b - a) * k / pieces for k in range(pieces + 1)]
    for lo, hi in zip(edges[:-1], edges[1:]):
        flo, fhi = f(lo), f(hi)
        m, fm, whole = _simpson(f, lo, flo, hi, fhi)
        total += _adapt(f, lo, flo, hi, fhi, m, fm, whole, tol / pieces, depth)
    return total


def simpson_2d(f, ax, bx, ay, by, tol=1e-11, pieces=16):
    """Iterated adaptive Simpson of ``f(x, y)`` over a rectangle."""
    return simpson(lambda x: simpson(lambda y: f(x, y), ay, by, tol, pieces=pieces),
                   ax, bx, tol, pieces=pieces)


def log_integral(log_f, a, b, centre, tol=1e-13, pieces=16):
    """``log int exp(log_f)`` with the integrand shifted by its value at ``centre``."""
    shift = log_f(centre)
    return shift + math.log(simpson(lambda x: math.exp(log_f(x) - shift), a, b, tol,
                                    pieces=pieces))


def brute_auc(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    hits = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return hits / (len(pos) * len(neg))


def quadrature_log_odds(x, p):
    """log of the amplitude integral of (prior x likelihood ratio), by Simpson."""
    cs = np.outer(p.couplings, p.template)
    a2, a1 = float(np.sum(cs * cs)), float(np.sum(cs * x))
    sn2, sa = p.sigma_n ** 2, p.sigma_alpha

    def log_prior(a):
        return -0.5 * ((a - p.alpha_hat) / sa) ** 2 - math.log(sa * math.sqrt(2 * math.pi))

    def log_f(a):
        return log_prior(a) - (a * a * a2 - 2.0 * a * a1) / (2.0 * sn2)

    prec = a2 / sn2 + 1.0 / sa ** 2
    peak = (a1 / sn2 + p.alpha_hat / sa ** 2) / prec
    sd = 1.0 / math.sqrt(prec)
    lo, hi = peak - 40 * sd, peak + 40 * sd
    if p.alpha_range == "full":
        return log_integral(log_f, lo, hi, peak)
    norm = math.log(0.5 * math.erfc(-p.alpha_hat / (sa * math.sqrt(2))))
    hi = max(hi, 40 * sd)
    return log_integral(log_f, max(lo, 0.0), hi, min(max(peak, 0.0), hi)) - norm
