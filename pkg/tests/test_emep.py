import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from juice.exceptions import ConfigurationError
from juice.emep import (EmEpConfig, _site_from_moments, cavity, cluster_normalizer, ep_sweep,
                        global_refresh, init_state, joint_precision, m_step, prune, run_em_ep,
                        tilted_from_gate, tilted_moments, update_site)

from .helpers import crandn, random_pd


def scalar_state(eps=0.5, gamma=1.0, r_bar=1.0, y=1.0, sigma2=1.0, L=1):
    state = init_state(np.full((1, 1), y, dtype=complex), np.ones((1, L)), sigma2,
                       [np.arange(L)], config=EmEpConfig(eps=eps))
    state.hyper.gamma_bar[:] = gamma
    state.hyper.R_bar[0] = [[r_bar]]
    return state


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(eps=0.0), dict(eps=1.0), dict(d=0.0),
                                    dict(damping=0.0), dict(damping=1.5), dict(k_max=0)])
    def test_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            EmEpConfig(**kw)

    def test_nonpositive_noise(self):
        with pytest.raises(ConfigurationError):
            init_state(np.ones((2, 1)), np.ones((2, 2)), 0.0, [np.arange(2)])

    def test_clusters_must_cover(self):
        with pytest.raises(ConfigurationError):
            init_state(np.ones((2, 1)), np.ones((2, 3)), 1.0, [np.arange(2)])


class TestInitAndRefresh:
    def test_kronecker_precision(self):
        rng = np.random.default_rng(0)
        Phi = crandn(rng, 2, 3)
        state = init_state(crandn(rng, 2, 2), Phi, 0.5, [np.arange(3)])
        P = joint_precision(state, np.arange(3))
        expected = np.kron(Phi.conj().T @ Phi, np.eye(2)) / 0.5 + 1e-6 * np.eye(6)
        assert np.abs(P - expected).max() < 1e-12

    def test_scalar_refresh(self):
        state = scalar_state(y=0.7 + 0.2j, sigma2=0.1)
        global_refresh(state)
        expected = (0.7 + 0.2j) * (1 / 0.1) / (1 / 0.1 + 1e-6)
        assert state.mean[0, 0] == pytest.approx(expected, rel=1e-12)

    def test_orthonormal_pilots(self):
        rng = np.random.default_rng(1)
        Phi = np.eye(4, 2).astype(complex)
        Y = crandn(rng, 4, 2)
        state = init_state(Y, Phi, 0.01, [np.array([0]), np.array([1])])
        global_refresh(state)
        for i in range(2):
            np.testing.assert_allclose(state.cov[i], 0.01 * np.eye(2), rtol=1e-6)
            np.testing.assert_allclose(state.mean[i], Phi[:, i].conj() @ Y, rtol=1e-6)

    def test_dense_oracle(self):
        rng = np.random.default_rng(2)
        Phi, Y = crandn(rng, 3, 3), crandn(rng, 3, 1)
        state = init_state(Y, Phi, 0.3, [np.arange(3)])
        state.site_prec[:] = rng.uniform(0.5, 2.0, (3, 1, 1))
        state.site_pm[:] = crandn(rng, 3, 1)
        global_refresh(state)
        P = Phi.conj().T @ Phi / 0.3 + np.diag(state.site_prec[:, 0, 0])
        C = np.linalg.inv(P)
        m = C @ (Phi.conj().T @ Y[:, 0] / 0.3 + state.site_pm[:, 0])
        np.testing.assert_allclose(state.mean[:, 0], m, atol=1e-12)
        np.testing.assert_allclose(state.cov[:, 0, 0], np.diag(C), atol=1e-12)

    def test_restriction_consistency(self):
        rng = np.random.default_rng(3)
        Phi, Y = crandn(rng, 4, 4), crandn(rng, 4, 2)
        full = init_state(Y, Phi, 0.2, [np.arange(2), np.arange(2, 4)])
        full.live[1] = False
        global_refresh(full)
        small = init_state(Y, Phi[:, :2], 0.2, [np.arange(2)])
        global_refresh(small)
        # equal up to BLAS rounding of the differently sized Gram products
        np.testing.assert_allclose(full.mean[:2], small.mean, rtol=0, atol=1e-12)
        np.testing.assert_allclose(full.cov[:2], small.cov, rtol=0, atol=1e-12)
        assert not np.any(full.mean[2:]) and not np.any(full.cov[2:])


class TestCavity:
    def test_flat_site_returns_marginal(self):
        state = scalar_state(y=0.4, sigma2=0.2)
        global_refresh(state)
        m, S, ok = cavity(state, 0)
        assert ok.all()
        assert S[0, 0, 0].real == pytest.approx(0.2, rel=1e-5)
        assert m[0, 0] == pytest.approx(state.mean[0, 0], rel=1e-5)

    def test_scalar_hand_value(self):
        state = scalar_state()
        state.cov[0] = 0.5
        state.mean[0] = 1.0
        state.site_prec[0] = 0.5  # site variance 2
        state.site_pm[0] = 0.0
        m, S, ok = cavity(state, 0)
        assert ok.all()
        assert S[0, 0, 0].real == pytest.approx(2 / 3)
        assert m[0, 0].real == pytest.approx(4 / 3)

    def test_singular_difference_is_repaired(self):
        state = scalar_state()
        state.cov[0] = 2.0
        state.mean[0] = 1.0
        state.site_prec[0] = 0.5
        m, S, ok = cavity(state, 0)
        assert ok.all()
        assert np.isfinite(S).all() and S[0, 0, 0].real > 0


class TestNormalizerAndTilted:
    def test_scalar_gate_hand_value(self):
        state = scalar_state(eps=0.5)
        cav_m, cav_S = np.zeros((1, 1), complex), np.ones((1, 1, 1), complex)
        la, lb, lg = cluster_normalizer(0, cav_m, cav_S, state.hyper, state)
        assert np.exp(lb) == pytest.approx(0.5 / np.pi)
        assert np.exp(la) == pytest.approx(0.5 / (2 * np.pi))
        pi, Ex, Var = tilted_moments(0, cav_m, cav_S, state.hyper, (la, lb, lg), state)
        assert pi == pytest.approx(1 / 3)
        assert Ex[0, 0] == 0
        assert Var[0, 0, 0].real == pytest.approx(0.5 / 3)

    @pytest.mark.parametrize("eps, target", [(1e-12, 0.0), (1 - 1e-12, 1.0)])
    def test_gate_limits(self, eps, target):
        state = scalar_state(eps=eps)
        cav_m, cav_S = np.full((1, 1), 0.8 + 0j), np.ones((1, 1, 1), complex)
        logs = cluster_normalizer(0, cav_m, cav_S, state.hyper, state)
        pi, _, _ = tilted_moments(0, cav_m, cav_S, state.hyper, logs, state)
        assert pi == pytest.approx(target, abs=1e-9)

    def test_forced_slab_is_gaussian_product(self):
        rng = np.random.default_rng(4)
        m, S, R = crandn(rng, 1, 3), random_pd(rng, 3)[None], random_pd(rng, 3)[None]
        Ex, Var = tilted_from_gate(np.ones(1), m, S, R)
        C = np.linalg.inv(np.linalg.inv(S[0]) + np.linalg.inv(R[0]))
        mu = C @ np.linalg.solve(S[0], m[0])
        np.testing.assert_allclose(Ex[0], mu, atol=1e-12)
        np.testing.assert_allclose(Var[0], C, atol=1e-12)

    def test_zero_slab_is_spike(self):
        Ex, Var = tilted_from_gate(np.full(1, 0.4), np.ones((1, 2), complex),
                                   np.eye(2)[None].astype(complex), np.zeros((1, 2, 2)))
        assert not np.any(Ex) and not np.any(Var)

    def test_two_ue_cluster_against_quadrature(self):
        rng = np.random.default_rng(5)
        eps = 0.4
        state = init_state(np.ones((1, 1)), np.ones((1, 2)), 1.0, [np.arange(2)],
                           config=EmEpConfig(eps=eps))
        state.hyper.gamma_bar[:] = [0.8, 1.3]
        state.hyper.R_bar[0] = [[0.9]]
        cav_m = crandn(rng, 2, 1)
        cav_S = np.array([[[0.6]], [[1.2]]], dtype=complex)
        logs = cluster_normalizer(0, cav_m, cav_S, state.hyper, state)
        _, Ex, Var = tilted_moments(0, cav_m, cav_S, state.hyper, logs, state)

        def slab_moments(m, s, r):
            def f(b, a, k):
                x = a + 1j * b
                d = (np.exp(-abs(x) ** 2 / r - abs(x - m) ** 2 / s) / (np.pi ** 2 * r * s))
                return d * (1.0, x.real, x.imag, abs(x) ** 2)[k]
            lim = abs(m) + 12 * np.sqrt(max(r, s))
            return [integrate.dblquad(f, -lim, lim, -lim, lim, args=(k,), epsabs=1e-12)[0]
                    for k in range(4)]

        r = state.hyper.gamma_bar * 0.9
        mom = [slab_moments(cav_m[i, 0], cav_S[i, 0, 0].real, r[i]) for i in range(2)]
        spike = np.prod([np.exp(-abs(cav_m[i, 0]) ** 2 / cav_S[i, 0, 0].real)
                         / (np.pi * cav_S[i, 0, 0].real) for i in range(2)])
        Z = eps * mom[0][0] * mom[1][0] + (1 - eps) * spike
        for i in range(2):
            other = mom[1 - i][0]
            mean = eps * other * (mom[i][1] + 1j * mom[i][2]) / Z
            second = eps * other * mom[i][3] / Z
            assert Ex[i, 0] == pytest.approx(mean, abs=1e-4)
            assert Var[i, 0, 0].real == pytest.approx(second - abs(mean) ** 2, abs=1e-4)

    @settings(max_examples=40, deadline=None)
    @given(st.floats(0.01, 0.98), st.floats(0.01, 0.98), st.floats(-2, 2), st.floats(0.1, 3))
    def test_gate_monotone_in_eps(self, e1, e2, m, s):
        lo, hi = sorted((e1, e2))
        cav_m, cav_S = np.full((1, 1), m + 0j), np.full((1, 1, 1), s + 0j)
        pis = []
        for eps in (lo, hi):
            state = scalar_state(eps=eps)
            logs = cluster_normalizer(0, cav_m, cav_S, state.hyper, state)
            pis.append(tilted_moments(0, cav_m, cav_S, state.hyper, logs, state)[0])
        assert 0.0 <= pis[0] <= pis[1] + 1e-12 <= 1.0 + 1e-12


class TestSiteUpdate:
    def test_uninformative_tilt_gives_flat_site(self):
        rng = np.random.default_rng(6)
        m, S = crandn(rng, 1, 2), random_pd(rng, 2)[None]
        prec, pm, ok = _site_from_moments(m, S, m, S, EmEpConfig())
        assert ok.all()
        assert np.abs(prec).max() < 1e-10 and np.abs(pm).max() < 1e-10

    def test_scalar_chain(self):
        # cavity CN(0,1), slab 1, eps 0.5: pi = 1/3, Var = 1/6, site precision 6 - 1
        state = scalar_state(eps=0.5)
        cav_m, cav_S = np.zeros((1, 1), complex), np.ones((1, 1, 1), complex)
        logs = cluster_normalizer(0, cav_m, cav_S, state.hyper, state)
        _, Ex, Var = tilted_moments(0, cav_m, cav_S, state.hyper, logs, state)
        update_site(state, np.array([0]), Ex, Var, cav_m, cav_S, EmEpConfig(), damping=1.0)
        assert state.site_prec[0, 0, 0].real == pytest.approx(5.0)
        assert state.site_pm[0, 0] == pytest.approx(0.0)

    def test_damping_midpoint(self):
        state = scalar_state()
        old_prec, old_pm = state.site_prec.copy(), state.site_pm.copy()
        cav_m, cav_S = np.full((1, 1), 0.3 + 0j), np.ones((1, 1, 1), complex)
        Ex, Var = np.full((1, 1), 0.2 + 0j), np.full((1, 1, 1), 0.4 + 0j)
        new_prec, new_pm, _ = _site_from_moments(Ex, Var, cav_m, cav_S, EmEpConfig())
        update_site(state, np.array([0]), Ex, Var, cav_m, cav_S, EmEpConfig(), damping=0.5)
        np.testing.assert_allclose(state.site_prec, 0.5 * (old_prec + new_prec))
        np.testing.assert_allclose(state.site_pm, 0.5 * (old_pm + new_pm))

    def test_moment_matching_fixed_point(self):
        # with eta = 1 the refreshed marginal reproduces the tilted moments
        state = scalar_state(eps=0.3, y=0.9, sigma2=0.5)
        global_refresh(state)
        cav_m, cav_S, _ = cavity(state, 0)
        logs = cluster_normalizer(0, cav_m, cav_S, state.hyper, state)
        _, Ex, Var = tilted_moments(0, cav_m, cav_S, state.hyper, logs, state)
        update_site(state, np.array([0]), Ex, Var, cav_m, cav_S, EmEpConfig(), damping=1.0)
        global_refresh(state)
        assert state.mean[0, 0] == pytest.approx(Ex[0, 0], abs=1e-6)
        assert state.cov[0, 0, 0].real == pytest.approx(Var[0, 0, 0].real, abs=1e-6)


class TestMStep:
    def test_identity_case(self):
        state = init_state(np.ones((2, 2)), np.ones((2, 1)), 1.0, [np.array([0])])
        state.cov[0] = np.eye(2)
        m_step(state)
        assert state.hyper.gamma_bar[0] == pytest.approx(1.0)

    def test_scaled_identity(self):
        state = init_state(np.ones((2, 2)), np.ones((2, 1)), 1.0, [np.array([0])])
        state.cov[0] = 2.5 * np.eye(2)
        m_step(state)
        assert state.hyper.gamma_bar[0] == pytest.approx(2.5)

    def test_shared_covariance_formula(self):
        rng = np.random.default_rng(7)
        M, L, d = 3, 2, 1.5
        B = random_pd(rng, M)
        state = init_state(crandn(rng, 2, M), crandn(rng, 2, L), 1.0, [np.arange(L)],
                           B=B[None], config=EmEpConfig(d=d))
        state.mean[:] = crandn(rng, L, M)
        state.cov[:] = np.stack([random_pd(rng, M) for _ in range(L)])
        m_step(state)
        g = state.hyper.gamma_bar
        E = state.mean[:, :, None] * state.mean.conj()[:, None, :] + state.cov
        expected = (np.sum(E / g[:, None, None], axis=0) + L * B) / (L + L * d)
        np.testing.assert_allclose(state.hyper.R_bar[0], expected, atol=1e-12)


class TestPrune:
    def test_threshold(self):
        state = init_state(np.ones((2, 1)), np.ones((2, 2)), 1.0, [np.array([0]), np.array([1])])
        state.gate_post[:] = [0.9, 1e-5]
        state.mean[:] = 1.0
        prune(state, 1e-3)
        np.testing.assert_array_equal(state.live, [True, False])
        assert state.mean[1, 0] == 0

    def test_zero_threshold_keeps_all(self):
        state = init_state(np.ones((2, 1)), np.ones((2, 2)), 1.0, [np.array([0]), np.array([1])])
        state.gate_post[:] = [0.0, 1e-300]
        prune(state, 0.0)
        assert state.live.all()

    def test_collapsed_slab(self):
        state = init_state(np.ones((2, 1)), np.ones((2, 2)), 1.0, [np.array([0]), np.array([1])])
        state.gate_post[:] = 0.5
        state.hyper.gamma_bar[:] = [1.0, 1e-6]
        prune(state, 1e-3, gamma_prune=1e-3)
        np.testing.assert_array_equal(state.live, [True, False])


def _easy_instance(seed):
    rng = np.random.default_rng(seed)
    Phi = np.linalg.qr(crandn(rng, 4, 4))[0]
    active = rng.integers(0, 2)
    x = np.zeros(4, dtype=complex)
    idx = np.arange(2 * active, 2 * active + 2)
    x[idx] = rng.uniform(0.5, 1.5, 2) * np.exp(2j * np.pi * rng.random(2))
    sigma2 = 1e-4
    y = Phi @ x + np.sqrt(sigma2 / 2) * (rng.normal(size=4) + 1j * rng.normal(size=4))
    return y[:, None], Phi, sigma2, x, idx


class TestRun:
    def test_silent_network(self):
        res = run_em_ep(np.zeros((4, 2)), np.eye(4, 6), 1e-3, [np.arange(3), np.arange(3, 6)])
        assert not np.any(res.X_hat)
        assert res.support.size == 0

    def test_easy_regime(self):
        clusters = [np.arange(2), np.arange(2, 4)]
        errs = []
        for seed in range(100):
            Y, Phi, s2, x, idx = _easy_instance(seed)
            res = run_em_ep(Y, Phi, s2, clusters, config=EmEpConfig(eps=0.5))
            np.testing.assert_array_equal(res.support, idx)
            errs.append((np.sum(np.abs(res.X_hat[0] - x) ** 2), np.sum(np.abs(x) ** 2)))
        num, den = np.sum(errs, axis=0)
        assert num / den < 1e-2

    def test_outputs_are_consistent(self):
        rng = np.random.default_rng(8)
        Phi = crandn(rng, 6, 8) / np.sqrt(6)
        x = np.zeros((2, 8), dtype=complex)
        x[:, :3] = crandn(rng, 2, 3)
        Y = Phi @ x.T + 0.05 * crandn(rng, 6, 2)
        clusters = [np.arange(4), np.arange(4, 8)]
        res = run_em_ep(Y, Phi, 0.0025, clusters, trace=True)
        assert res.X_hat.shape == (2, 8)
        assert np.all((res.gate_post >= 0) & (res.gate_post <= 1))
        live = np.flatnonzero(res.live[[0, 0, 0, 0, 1, 1, 1, 1]])
        for i in live:
            np.testing.assert_allclose(res.cov[i], res.cov[i].conj().T, atol=1e-8)
            assert np.linalg.eigvalsh(res.cov[i]).min() > -1e-8
        off = np.setdiff1d(np.arange(8), res.support)
        assert not np.any(res.X_hat[:, off])
        assert len(res.trace) == res.n_iter
        assert {"iter", "change", "live_clusters", "gate_post"} <= set(res.trace[0])

    def test_ep_fixed_point_is_schedule_free(self):
        rng = np.random.default_rng(9)
        Phi = crandn(rng, 4, 2)
        Phi /= np.linalg.norm(Phi, axis=0)
        Y = (Phi @ np.array([1.0, 0.0]) + 0.2 * crandn(rng, 4))[:, None]
        out = []
        for eta in (0.4, 1.0):
            cfg = EmEpConfig(eps=0.5, damping=eta, update_hyper=False, eps_thr=0.0,
                             gamma_prune=0.0, eps_stp=1e-12, k_max=500)
            out.append(run_em_ep(Y, Phi, 0.04, [np.array([0]), np.array([1])], config=cfg))
        np.testing.assert_allclose(out[0].mean, out[1].mean, atol=1e-8)
        np.testing.assert_allclose(out[0].gate_post, out[1].gate_post, atol=1e-8)


def test_sweep_skips_nothing_on_clean_input():
    rng = np.random.default_rng(10)
    state = init_state(crandn(rng, 5, 2), crandn(rng, 5, 4), 0.1, [np.arange(2), np.arange(2, 4)])
    global_refresh(state)
    assert ep_sweep(state, EmEpConfig()) == 2
