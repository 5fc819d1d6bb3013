import numpy as np
import pytest

from juice.baselines import IrwConfig, OracleInfo, irw_l21, oracle_mmse
from juice.exceptions import ConfigurationError
from juice.model import ScenarioConfig, generate_scenario

from .helpers import crandn, random_pd


def _oracle(sc, sigma2=None):
    return OracleInfo(S_true=sc.support, R_true=sc.R_true, p=sc.p,
                      sigma2=sc.sigma2 if sigma2 is None else sigma2)


class TestOracle:
    def test_noiseless_limit(self):
        sc = generate_scenario(ScenarioConfig(seed=3, snr_db=120.0))
        X = oracle_mmse(sc.Phi @ sc.X_true.T, sc.Phi, _oracle(sc, 1e-12))
        err = np.linalg.norm(X - sc.X_true) / np.linalg.norm(sc.X_true)
        assert err < 1e-6

    def test_empty_support(self):
        sc = generate_scenario(ScenarioConfig(seed=1))
        info = OracleInfo(S_true=[], R_true=sc.R_true, p=1.0, sigma2=0.1)
        assert not np.any(oracle_mmse(sc.Y, sc.Phi, info))

    def test_scalar_wiener(self):
        y = np.array([[0.7 - 0.2j]])
        info = OracleInfo(S_true=[0], R_true=np.array([[[2.0]]]), p=1.0, sigma2=0.5)
        assert oracle_mmse(y, np.ones((1, 1)), info)[0, 0] == pytest.approx(2.0 / 2.5 * y[0, 0])

    def test_matches_dense_formula(self):
        rng = np.random.default_rng(4)
        tau, N, M = 5, 3, 2
        Phi, Y = crandn(rng, tau, N), crandn(rng, tau, M)
        R = np.stack([random_pd(rng, M) for _ in range(N)])
        s2 = 0.3
        # vec(X) with UE-major stacking: y_vec = (Phi kron I) x_vec + w
        A = np.kron(Phi, np.eye(M))
        C = np.zeros((N * M, N * M), dtype=complex)
        for i in range(N):
            C[i * M:(i + 1) * M, i * M:(i + 1) * M] = R[i]
        y = Y.reshape(-1)
        x = C @ A.conj().T @ np.linalg.solve(A @ C @ A.conj().T + s2 * np.eye(tau * M), y)
        got = oracle_mmse(Y, Phi, OracleInfo(S_true=np.arange(N), R_true=R, p=1.0, sigma2=s2))
        np.testing.assert_allclose(got, x.reshape(N, M).T, atol=1e-10)

    def test_outside_support_zero(self):
        sc = generate_scenario(ScenarioConfig(seed=2))
        X = oracle_mmse(sc.Y, sc.Phi, _oracle(sc))
        off = np.setdiff1d(np.arange(sc.config.N), sc.support)
        assert not np.any(X[:, off])

    @pytest.mark.parametrize("kw", [dict(sigma2=0.0), dict(S_true=[250])])
    def test_info_validation(self, kw):
        base = dict(S_true=[0], R_true=np.eye(2)[None].repeat(3, 0), p=1.0, sigma2=0.1)
        base.update(kw)
        with pytest.raises(ConfigurationError):
            OracleInfo(**base)


class TestIrw:
    @pytest.mark.parametrize("kw", [dict(lam=-1.0), dict(eps0=0.0), dict(rho=0.0),
                                    dict(n_reweight=0), dict(k_max=0)])
    def test_config_rejects(self, kw):
        with pytest.raises(ConfigurationError):
            IrwConfig(**kw)

    def test_no_penalty_is_least_squares(self):
        rng = np.random.default_rng(0)
        Phi, Y = crandn(rng, 8, 4), crandn(rng, 8, 2)
        res = irw_l21(Y, Phi, config=IrwConfig(lam=0.0, eps_stp=1e-12, k_max=3000,
                                               n_reweight=1, eps_thr=0.0))
        ls = np.linalg.lstsq(Phi, Y, rcond=None)[0].T
        np.testing.assert_allclose(res.X_raw, ls, atol=1e-6)

    def test_no_penalty_underdetermined_is_minimum_norm(self):
        rng = np.random.default_rng(1)
        Phi, Y = crandn(rng, 3, 6), crandn(rng, 3, 2)
        res = irw_l21(Y, Phi, config=IrwConfig(lam=0.0, eps_stp=1e-13, k_max=5000,
                                               n_reweight=1))
        np.testing.assert_allclose(res.X_raw, (np.linalg.pinv(Phi) @ Y).T, atol=1e-6)

    def test_huge_penalty_gives_zero(self):
        sc = generate_scenario(ScenarioConfig(seed=0))
        res = irw_l21(sc.Y, sc.Phi, config=IrwConfig(lam=1e6))
        assert not np.any(res.X_hat) and res.support.size == 0

    def test_weights_refresh(self):
        sc = generate_scenario(ScenarioConfig(seed=5))
        res = irw_l21(sc.Y, sc.Phi)
        np.testing.assert_allclose(res.weights, 1.0 / (np.linalg.norm(res.X_raw, axis=0) + 1.0))

    def test_easy_regime(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            N, tau, M = 16, 20, 2
            Phi = np.linalg.qr(crandn(rng, tau, N))[0]
            S = np.sort(rng.choice(N, 4, replace=False))
            X = np.zeros((M, N), dtype=complex)
            # column norms in [0.5, 1.5] stay above the shrinkage of the default lam
            H = crandn(rng, M, 4)
            X[:, S] = H / np.linalg.norm(H, axis=0) * rng.uniform(0.5, 1.5, 4)
            Y = Phi @ X.T + np.sqrt(1e-3) * crandn(rng, tau, M)
            hits += np.array_equal(irw_l21(Y, Phi).support, S)
        assert hits >= 95
