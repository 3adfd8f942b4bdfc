import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from bsnmani.mala import MalaConfig, MalaKernel, adapt_step, log_accept_ratio, mala_step, mala_transition
from bsnmani.numerics import ConfigurationError, SingularityError


def gaussian(x):
    return -0.5 * float(np.sum(x * x)), -x


class TestAcceptRatio:
    def test_matches_proposal_densities(self):
        rng = np.random.default_rng(0)
        x, q = rng.standard_normal((3, 2)), rng.standard_normal((3, 2))
        omega = 0.7
        lp = lambda z: stats.multivariate_normal.logpdf(z.ravel(), mean=np.ones(6), cov=2.0)
        gr = lambda z: -(z - 1.0) / 2.0
        fwd = stats.norm.logpdf(q, x + 0.5 * omega ** 2 * gr(x), omega).sum()
        bwd = stats.norm.logpdf(x, q + 0.5 * omega ** 2 * gr(q), omega).sum()
        expected = lp(q) - lp(x) + bwd - fwd
        assert log_accept_ratio(x, q, lp(x), gr(x), lp(q), gr(q), omega) == pytest.approx(expected, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.05, 2.0))
    def test_antisymmetric(self, seed, omega):
        rng = np.random.default_rng(seed)
        x, q = rng.standard_normal(4), rng.standard_normal(4)
        a = log_accept_ratio(x, q, *gaussian(x), *gaussian(q), omega)
        b = log_accept_ratio(q, x, *gaussian(q), *gaussian(x), omega)
        assert a == pytest.approx(-b, abs=1e-9)


class TestTransition:
    def test_constant_shift_gives_same_decisions(self):
        shifted = lambda x: (gaussian(x)[0] + 1000.0, -x)
        x1 = x2 = np.zeros((2, 2))
        r1, r2 = np.random.default_rng(4), np.random.default_rng(4)
        for _ in range(300):
            t1 = mala_transition(x1, 1.3, gaussian, r1)
            t2 = mala_transition(x2, 1.3, shifted, r2)
            assert t1.accepted == t2.accepted
            x1, x2 = t1.x, t2.x
        np.testing.assert_array_equal(x1, x2)

    def test_singular_proposal_rejected(self):
        calls = []

        def target(x):
            calls.append(1)
            if len(calls) > 1:
                raise SingularityError("rank deficient")
            return gaussian(x)

        x = np.ones((2, 1))
        t = mala_transition(x, 0.5, target, np.random.default_rng(0))
        assert not t.accepted
        np.testing.assert_array_equal(t.x, x)

    def test_nonfinite_proposal_rejected(self):
        target = lambda x: (-np.inf, -x) if x[0, 0] != 1.0 else gaussian(x)
        t = mala_transition(np.ones((1, 1)), 0.5, target, np.random.default_rng(0))
        assert not t.accepted

    def test_bad_start(self):
        with pytest.raises(SingularityError):
            mala_transition(np.ones(2), 0.5, lambda x: (np.nan, x), np.random.default_rng(0))

    def test_bad_step(self):
        with pytest.raises(ConfigurationError):
            mala_transition(np.ones(2), 0.0, gaussian, np.random.default_rng(0))

    def test_stationary_gaussian(self):
        rng = np.random.default_rng(1)
        x = np.zeros(1)
        lp = lambda z: -0.5 * float(z @ z) / 4.0
        gr = lambda z: -z / 4.0
        out = np.empty(40_000)
        for k in range(out.size):
            x, _ = mala_step(x, 1.5, lp, gr, rng)
            out[k] = x[0]
        assert abs(out.mean()) < 0.1
        assert out.var() == pytest.approx(4.0, rel=0.08)

    def test_cached_current_matches(self):
        x = np.array([0.3, -0.2])
        a = mala_transition(x, 0.8, gaussian, np.random.default_rng(2))
        b = mala_transition(x, 0.8, gaussian, np.random.default_rng(2), current=gaussian(x))
        np.testing.assert_array_equal(a.x, b.x)


class TestAdaptation:
    def test_low_acceptance_shrinks(self):
        assert adapt_step(1.0, 10, 50) == pytest.approx(0.9)

    def test_high_acceptance_grows(self):
        assert adapt_step(1.0, 40, 50) == pytest.approx(1.1)

    def test_at_target_grows(self):
        assert adapt_step(2.0, 574, 1000) == pytest.approx(2.2)

    def test_window_validated(self):
        with pytest.raises(ConfigurationError):
            adapt_step(1.0, 0, 0)

    def test_kernel_adapts_every_window(self):
        cfg = MalaConfig(k0=5)
        k = MalaKernel(cfg, 1e-6, np.random.default_rng(0))  # tiny step: every move accepted
        x = np.zeros(3)
        for _ in range(4):
            x = k.step(x, gaussian).x
        assert k.omega == 1e-6
        k.step(x, gaussian)
        assert k.omega == pytest.approx(1.1e-6)

    def test_freeze(self):
        k = MalaKernel(MalaConfig(k0=2), 0.5, np.random.default_rng(0))
        k.freeze()
        x = np.zeros(2)
        for _ in range(20):
            x = k.step(x, gaussian).x
        assert k.omega == 0.5

    def test_config_validation(self):
        with pytest.raises(ConfigurationError):
            MalaConfig(omega0=-1.0)
        with pytest.raises(ConfigurationError):
            MalaConfig(rho_target=1.0)
        with pytest.raises(ConfigurationError):
            MalaConfig(k0=0)

    def test_default_initial_step(self):
        assert MalaConfig().initial_step(50, 2) == pytest.approx(0.001)
