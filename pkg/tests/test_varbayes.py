import math

import numpy as np
import pytest
from scipy import special

from evkit.varbayes import (
    MeanFieldState,
    NormalGammaModel,
    coordinate_update,
    negative_free_energy,
    vb_lower_bound,
)

# 2-D adaptive Simpson over (mu, log tau) for data rng(11).normal(1, 2, 5)
FROZEN_LOG_Z = -11.666658651636174
FROZEN_KL = 0.05588998286880987


def dataset(n, seed=0, mean=1.0, sd=2.0):
    return np.random.default_rng(seed).normal(mean, sd, n)


class TestFreeEnergy:
    def test_lower_bound(self):
        for n, seed in ((1, 0), (3, 1), (20, 2)):
            m = NormalGammaModel(dataset(n, seed))
            state = MeanFieldState.from_prior(m)
            for _ in range(3):
                assert negative_free_energy(state, m) <= m.log_evidence() + 1e-8
                state = coordinate_update(coordinate_update(state, "mean", m), "precision", m)

    def test_factorized_posterior(self):
        # without data the posterior is the independent prior itself
        m = NormalGammaModel(np.array([]))
        f = negative_free_energy(MeanFieldState.from_prior(m), m)
        assert abs(f - m.log_evidence()) < 1e-12

    def test_monte_carlo_single_point(self):
        m = NormalGammaModel(np.array([0.8]), m0=0.5, lam0=1.0, a0=3.0, b0=1.5)
        _, st = vb_lower_bound(m)
        gen = np.random.default_rng(5)
        n = 1_000_000
        mu = gen.normal(st.m, math.sqrt(st.s2), n)
        tau = gen.gamma(st.a, 1.0 / st.b, n)
        x = m.data[0]
        log_joint = (0.5 * (math.log(m.lam0) - math.log(2 * math.pi))
                     - 0.5 * m.lam0 * (mu - m.m0) ** 2
                     + m.a0 * math.log(m.b0) - special.gammaln(m.a0)
                     + (m.a0 - 1) * np.log(tau) - m.b0 * tau
                     + 0.5 * (np.log(tau) - math.log(2 * math.pi)) - 0.5 * tau * (x - mu) ** 2)
        log_q = (-0.5 * np.log(2 * math.pi * st.s2) - 0.5 * (mu - st.m) ** 2 / st.s2
                 + st.a * math.log(st.b) - special.gammaln(st.a)
                 + (st.a - 1) * np.log(tau) - st.b * tau)
        terms = log_joint - log_q
        est, se = terms.mean(), terms.std() / math.sqrt(n)
        assert abs(est - negative_free_energy(st, m)) < 3 * se

    def test_invalid_state(self):
        m = NormalGammaModel(dataset(3))
        with pytest.raises(ValueError):
            MeanFieldState(0.0, -1.0, 1.0, 1.0)
        bad = object.__new__(MeanFieldState)
        object.__setattr__(bad, "m", 0.0)
        object.__setattr__(bad, "s2", 1.0)
        object.__setattr__(bad, "a", 0.0)
        object.__setattr__(bad, "b", 1.0)
        with pytest.raises(ValueError):
            negative_free_energy(bad, m)


class TestCoordinateUpdate:
    def test_idempotent(self):
        m = NormalGammaModel(dataset(10))
        s = MeanFieldState.from_prior(m)
        for block in ("mean", "precision"):
            once = coordinate_update(s, block, m)
            assert coordinate_update(once, block, m) == once

    def test_each_update_ascends(self):
        m = NormalGammaModel(dataset(10, 3))
        s = MeanFieldState(5.0, 0.01, 1.0, 40.0)
        f = negative_free_energy(s, m)
        for k in range(40):
            s = coordinate_update(s, ("mean", "precision")[k % 2], m)
            f_new = negative_free_energy(s, m)
            assert f_new >= f - 1e-12
            f = f_new

    def test_unknown_block(self):
        m = NormalGammaModel(dataset(3))
        with pytest.raises(ValueError):
            coordinate_update(MeanFieldState.from_prior(m), "scale", m)


class TestLowerBound:
    def test_converges_quickly(self):
        m = NormalGammaModel(dataset(20, 4))
        f, st = vb_lower_bound(m, max_sweeps=50, tol=1e-10)
        assert st.converged
        assert len(st.f_history) <= 51
        assert abs(st.f_history[-1] - st.f_history[-2]) < 1e-10

    def test_monotone_history(self):
        m = NormalGammaModel(dataset(7, 5))
        _, st = vb_lower_bound(m)
        assert np.all(np.diff(st.f_history) >= -1e-12)

    def test_flagged_when_out_of_sweeps(self):
        m = NormalGammaModel(dataset(20, 4))
        f, st = vb_lower_bound(m, max_sweeps=1, tol=0.0)
        assert not st.converged and np.isfinite(f)

    def test_gap_well_determined(self):
        m = NormalGammaModel(dataset(50, 6))
        f, _ = vb_lower_bound(m)
        gap = m.log_evidence() - f
        assert 0.0 <= gap < 0.05

    def test_gap_diffuse(self):
        m = NormalGammaModel(dataset(2, 7))
        f, _ = vb_lower_bound(m)
        assert m.log_evidence() - f > 1e-3

    def test_empty_data(self):
        with pytest.raises(ValueError):
            vb_lower_bound(NormalGammaModel(np.array([])))


class TestQuadratureOracle:
    def test_log_evidence(self):
        m = NormalGammaModel(dataset(5, 11))
        assert m.log_evidence() == pytest.approx(FROZEN_LOG_Z, abs=1e-8)

    def test_decomposition(self):
        m = NormalGammaModel(dataset(5, 11))
        f, _ = vb_lower_bound(m)
        assert abs(f + FROZEN_KL - FROZEN_LOG_Z) < 1e-6
