import math

import numpy as np
import pytest

from muonlab import counterexample as cex
from muonlab import norms, optim


def kinky_oracle(c=0.5):
    return cex.KinkyFunction(c=c).oracle()


def state(W, beta=0.0, schedule=None, **kw):
    return optim.OptimizerState(W=np.asarray(W, float), beta=beta,
                                schedule=schedule or optim.Constant(0.1), **kw)


class TestSchedules:
    def test_values(self):
        assert optim.InvT().value(0) == 1.0
        assert optim.InvT().value(4) == 0.2
        assert abs(optim.InvSqrtT().value(3) - 0.5) < 1e-15
        assert optim.Constant(0.3).value(10) == 0.3
        tab = optim.Table((0.4, 0.2))
        assert tab.value(0) == 0.4 and tab.value(5) == 0.2 and tab.limit() == 0.2

    def test_validation(self):
        with pytest.raises(ValueError):
            optim.Constant(0.0)
        with pytest.raises(ValueError):
            optim.Table(())
        with pytest.raises(ValueError):
            optim.Table((0.1, -0.1))
        with pytest.raises(ValueError):
            optim.AdaptiveNuclear(0.05).value(0)
        with pytest.raises(ValueError):
            optim.AdaptiveNuclear(0.05).limit()

    def test_adaptive_nuclear(self):
        sch = optim.AdaptiveNuclear(0.1)
        assert abs(sch.value(3, momentum=np.diag([3.0, -4.0])) - 0.7) < 1e-15


class TestBasicSteps:
    def test_specgd_zero_gradient(self):
        oracle = optim.FunctionOracle(lambda W: 0.0, lambda W: np.zeros_like(W))
        st = state(np.eye(2))
        st2, _ = optim.step_specgd(st, oracle)
        np.testing.assert_array_equal(st2.W, np.eye(2))

    def test_specgd_diagonal(self):
        oracle = optim.FunctionOracle(lambda W: 0.0, lambda W: np.diag([3.0, -4.0]))
        st = state(np.zeros((2, 2)), schedule=optim.Constant(1.0))
        st2, _ = optim.step_specgd(st, oracle)
        np.testing.assert_array_equal(st2.W, np.diag([-1.0, 1.0]))

    def test_specgd_kinky_hand_example(self):
        st = state(np.diag([2.0, 1.0]), schedule=optim.Constant(0.1))
        st2, info = optim.step_specgd(st, kinky_oracle(0.5))
        np.testing.assert_allclose(np.diagonal(st2.W), [1.9, 1.1], atol=1e-15)
        np.testing.assert_allclose(np.diagonal(info.grad), [1.5, -0.5])

    def test_muon_beta_zero_is_specgd(self):
        oracle = kinky_oracle(0.3)
        rng = np.random.default_rng(9)
        W0 = rng.standard_normal((2, 2))
        a, _ = optim.step_specgd(state(W0.copy()), oracle)
        b, _ = optim.step_muon(state(W0.copy()), oracle)
        np.testing.assert_array_equal(a.W, b.W)

    def test_muon_appendix_style_step(self):
        beta = 0.9
        c = (1 - beta) / (2 * (1 + beta))
        W0 = np.diag([1 + math.log(2), 1 - math.log(2)])
        st = state(W0, beta=beta, schedule=optim.InvT())
        st2, _ = optim.step_muon(st, kinky_oracle(c))
        np.testing.assert_allclose(
            np.diagonal(st2.W), [math.log(2), 2 - math.log(2)], atol=1e-14)

    def test_regmuon_rescales_by_nuclear(self):
        oracle = optim.FunctionOracle(lambda W: 0.0, lambda W: np.diag([3.0, -4.0]))
        st = state(np.zeros((2, 2)), schedule=optim.Constant(0.1))
        st2, info = optim.step_regmuon(st, oracle)
        np.testing.assert_allclose(st2.W, -0.7 * np.diag([1.0, -1.0]), atol=1e-15)
        assert abs(info.lam - 0.7) < 1e-15

    def test_regmuon_equals_muon_with_adaptive_schedule(self):
        oracle = kinky_oracle(0.3)
        rng = np.random.default_rng(10)
        W0 = rng.standard_normal((2, 2))
        a = state(W0.copy(), beta=0.5, schedule=optim.Constant(0.05))
        b = state(W0.copy(), beta=0.5, schedule=optim.AdaptiveNuclear(0.05))
        for _ in range(20):
            a, _ = optim.step_regmuon(a, oracle)
            b, _ = optim.step_muon(b, oracle)
        np.testing.assert_array_equal(a.W, b.W)

    def test_sign_steps(self):
        oracle = optim.FunctionOracle(lambda w: 0.0, lambda w: np.zeros_like(w))
        st = state(np.array([1.0, -1.0]))
        st2, _ = optim.step_signgd(st, oracle)
        np.testing.assert_array_equal(st2.W, st.W)

        oracle = cex.KinkyFunction(c=0.5).diag_oracle()
        st = state(np.array([2.0, 1.0]), schedule=optim.Constant(0.1))
        st2, info = optim.step_signgd(st, oracle)
        np.testing.assert_allclose(st2.W, [1.9, 1.1], atol=1e-15)
        np.testing.assert_allclose(info.grad, [1.5, -0.5])

    def test_signmomentum_beta_zero_is_signgd(self):
        oracle = cex.KinkyFunction(c=0.4).diag_oracle()
        w0 = np.array([0.3, -1.2])
        a, _ = optim.step_signgd(state(w0.copy()), oracle)
        b, _ = optim.step_signmomentum(state(w0.copy()), oracle)
        np.testing.assert_array_equal(a.W, b.W)


class TestErrorFeedback:
    def test_identity_compressor_is_momentum_sgd(self):
        oracle = kinky_oracle(0.3)
        rng = np.random.default_rng(11)
        W0 = rng.standard_normal((2, 2))
        st = state(W0, beta=0.5, schedule=optim.Constant(0.2))
        st2, info = optim.step_efm(st, oracle, optim.identity_compressor)
        np.testing.assert_array_equal(st2.W, st.W - info.lam * st2.M)
        assert np.all(st2.E == 0)

    def test_operator_compressor_hand_example(self):
        oracle = optim.FunctionOracle(lambda W: 0.0, lambda W: np.diag([3.0, -4.0]))
        st = state(np.zeros((2, 2)), schedule=optim.Constant(1.0))
        st2, _ = optim.step_efmuon(st, oracle)
        np.testing.assert_allclose(st2.W, -np.diag([3.5, -3.5]), atol=1e-15)
        np.testing.assert_allclose(st2.E, -0.5 * np.eye(2), atol=1e-15)
        assert abs(np.linalg.norm(st2.E) ** 2 - 0.5) < 1e-15

    def test_bookkeeping_identity(self):
        # E' + C(P) = E + lam M bitwise, with C recomputed from the same P
        oracle = kinky_oracle(0.3)
        rng = np.random.default_rng(12)
        st = state(rng.standard_normal((2, 2)), beta=0.9, schedule=optim.InvSqrtT())
        for _ in range(30):
            prev = st
            st, info = optim.step_efmuon(st, oracle)
            P = prev.E + info.lam * st.M
            C = optim._operator_compressor(P)
            np.testing.assert_allclose(st.E + C, P, atol=1e-14)

    def test_efmuon_matches_generic_efm(self):
        oracle = cex.KinkyFunction(c=0.3, m=3, n=2).oracle()
        rng = np.random.default_rng(13)
        W0 = rng.standard_normal((3, 2))
        comp = lambda P: (np.linalg.svd(P, compute_uv=False).sum() / 2) * \
            optim.linalg.polar_exact(P)
        a = state(W0.copy(), beta=0.7, schedule=optim.InvSqrtT())
        b = state(W0.copy(), beta=0.7, schedule=optim.InvSqrtT())
        for _ in range(20):
            a, _ = optim.step_efmuon(a, oracle)
            b, _ = optim.step_efm(b, oracle, comp)
        np.testing.assert_allclose(a.W, b.W, atol=1e-12)
        np.testing.assert_allclose(a.E, b.E, atol=1e-12)

    def test_alternative_error_update_agrees(self):
        # E' = E + W' - (W - lam M') agrees with E' = P - C(P) within 1e-14
        oracle = kinky_oracle(0.3)
        rng = np.random.default_rng(14)
        st = state(rng.standard_normal((2, 2)), beta=0.9, schedule=optim.InvSqrtT())
        for _ in range(50):
            prev = st
            st, info = optim.step_efmuon(st, oracle)
            alt = prev.E + st.W - (prev.W - info.lam * st.M)
            np.testing.assert_allclose(st.E, alt, atol=1e-14)


class TestProductSteps:
    def spec(self):
        return norms.ProductNormSpec(layer_dims=((2, 2),), s=1.0, k=1)

    def oracle(self):
        def fn(W):
            return float(np.abs(np.diagonal(W.matrices[0])).sum() + abs(W.theta[0]))

        def grad(W):
            return norms.ParamPoint(
                [np.diag(np.sign(np.diagonal(W.matrices[0])))],
                np.sign(W.theta))

        return optim.FunctionOracle(fn, grad)

    def test_muonmax_diagonal_direction(self):
        W0 = norms.ParamPoint([np.diag([2.0, -3.0])], np.zeros(1))
        st = optim.OptimizerState(W=W0, schedule=optim.Constant(0.1), spec=self.spec())
        st2, _ = optim.step_muonmax(st, self.oracle())
        delta = st2.W.matrices[0] - W0.matrices[0]
        # update direction proportional to the sign of the diagonal
        sg = np.diag([1.0, -1.0])
        scale = delta[0, 0] / sg[0, 0]
        np.testing.assert_allclose(delta, scale * sg, atol=1e-12)
        assert scale < 0

    def test_muonmax_zero_theta_block_stays_zero(self):
        W0 = norms.ParamPoint([np.diag([2.0, -3.0])], np.zeros(1))
        st = optim.OptimizerState(W=W0, schedule=optim.Constant(0.1), spec=self.spec())
        st2, _ = optim.step_muonmax(st, self.oracle())
        assert st2.W.theta[0] == 0.0

    def test_efmuonmax_bookkeeping(self):
        rng = np.random.default_rng(15)
        W0 = norms.ParamPoint([rng.standard_normal((2, 2))], rng.standard_normal(1))
        st = optim.OptimizerState(W=W0, beta=0.5, schedule=optim.Constant(0.1),
                                  spec=self.spec())
        spec = self.spec()
        for _ in range(10):
            prev = st
            st, info = optim.step_efmuonmax(st, self.oracle())
            P = prev.E + info.lam * st.M
            C = norms.compress(P, spec)
            assert (st.E + C - P).fro() <= 1e-14

    def test_spec_required(self):
        st = optim.OptimizerState(W=np.eye(2), schedule=optim.Constant(0.1))
        with pytest.raises(ValueError):
            optim.step_muonmax(st, self.oracle())


class TestRun:
    def test_one_step_matches_manual(self):
        oracle = kinky_oracle(0.5)
        W0 = np.diag([2.0, 1.0])
        tr = optim.run("muon", oracle, state(W0.copy()), 1)
        st2, _ = optim.step_muon(state(W0.copy()), oracle)
        assert len(tr) == 2
        assert tr.w11[1] == st2.W[0, 0]
        assert tr.w22[1] == st2.W[1, 1]

    def test_trace_columns(self):
        oracle = kinky_oracle(0.5)
        tr = optim.run("muon", oracle, state(np.diag([2.0, 1.0])), 5)
        assert np.all(np.isfinite(tr.f))
        assert np.isnan(tr.lam[-1]) and np.isnan(tr.grad_fro[-1])
        assert np.all(np.isfinite(tr.favg))
        np.testing.assert_allclose(tr.sum_diag, tr.w11 + tr.w22)

    def test_momentum_convex_combination(self):
        oracle = kinky_oracle(0.3)
        rng = np.random.default_rng(16)
        st = state(rng.standard_normal((2, 2)), beta=0.8, schedule=optim.InvT())
        gmax = 0.0
        for _ in range(100):
            st, info = optim.step_muon(st, oracle)
            gmax = max(gmax, np.linalg.norm(info.grad))
            assert np.linalg.norm(st.M) <= gmax + 1e-12

    def test_unknown_method(self):
        with pytest.raises(ValueError):
            optim.run("nope", kinky_oracle(), state(np.eye(2)), 1)


class TestBound:
    def test_hand_example(self):
        assert optim.efm_bound(0, 1.0, 0.0, 2.0, 1.0) == 2.5

    def test_delta_one_beta_zero_reduces_to_sgd_term(self):
        sigma, dist0, T = 1.7, 0.3, 100
        got = optim.efm_bound(T, 1.0, 0.0, sigma, dist0)
        expected = dist0**2 / (2 * math.sqrt(T + 1)) + \
            sigma**2 * 0.5 * (1 + math.log(T + 1)) / math.sqrt(T + 1)
        assert abs(got - expected) < 1e-15

    def test_monotone_in_delta(self):
        vals = [optim.efm_bound(50, d, 0.3, 1.0, 1.0) for d in np.linspace(0.05, 1.0, 30)]
        assert np.all(np.diff(vals) <= 1e-15)

    def test_domain_validation(self):
        for bad in [dict(delta=0.0), dict(delta=1.5), dict(beta=1.0),
                    dict(sigma=-1.0), dict(dist0=-1.0)]:
            kw = dict(T=10, delta=0.5, beta=0.5, sigma=1.0, dist0=1.0)
            kw.update(bad)
            with pytest.raises(ValueError):
                optim.efm_bound(**kw)

    def test_schedule_form_dominated_by_special_case(self):
        # with lam_t = 1/sqrt(t+1), sum lam^2 <= 1 + log(T+1)
        for T in (0, 10, 500):
            lams = 1.0 / np.sqrt(np.arange(T + 1) + 1.0)
            a = optim.efm_bound_schedule(lams, 0.5, 0.3, 2.0, 1.0)
            b = optim.efm_bound(T, 0.5, 0.3, 2.0, 1.0)
            assert a <= b + 1e-12
