"""scikit-learn style wrappers around the JUICE solvers.

Every estimator is fitted on one pilot observation::

    est = EMEP(eps=0.1).fit(Y, Phi, noise_var=sigma2, clusters=clusters)
    est.coef_      # (M, N) channel estimate, zero outside ``support_``
    est.support_   # indices of the UEs declared active

``predict(Phi)`` returns the noiseless received signal ``Phi @ coef_.T``.
"""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .admm import AdmmConfig, run_corr_map_admm
from .baselines import IrwConfig, OracleInfo, irw_l21, oracle_mmse
from .emep import EmEpConfig, run_em_ep
from .validation import check_clusters, check_cov_prior, check_noise_var, check_pilot_system


class _JuiceEstimator(BaseEstimator):
    _config_cls = None

    def _config(self):
        names = {f.name for f in fields(self._config_cls)}
        return self._config_cls(**{k: v for k, v in self.get_params().items() if k in names})

    def _prepare(self, Y, Phi, noise_var, clusters, cov_prior):
        Y, Phi = check_pilot_system(Y, Phi)
        sigma2 = check_noise_var(noise_var)
        clusters = check_clusters(clusters, Phi.shape[1])
        B = check_cov_prior(cov_prior, len(clusters), Y.shape[1])
        return Y, Phi, sigma2, clusters, B

    def predict(self, Phi):
        check_is_fitted(self, "coef_")
        return np.asarray(Phi) @ self.coef_.T


class EMEP(_JuiceEstimator):
    """EM-EP with cluster spike-and-slab sites.

    Parameters mirror :class:`juice.emep.EmEpConfig`.
    """

    _config_cls = EmEpConfig

    def __init__(self, eps=0.1, d=1.0, damping=0.7, eps_thr=1e-3, gamma_prune=1e-3,
                 theta_act=0.05, eps_stp=2e-3, k_max=30, update_hyper=True):
        self.eps = eps
        self.d = d
        self.damping = damping
        self.eps_thr = eps_thr
        self.gamma_prune = gamma_prune
        self.theta_act = theta_act
        self.eps_stp = eps_stp
        self.k_max = k_max
        self.update_hyper = update_hyper

    def fit(self, Y, Phi, noise_var, clusters=None, cov_prior=None):
        Y, Phi, sigma2, clusters, B = self._prepare(Y, Phi, noise_var, clusters, cov_prior)
        res = run_em_ep(Y, Phi, sigma2, clusters, B, config=self._config())
        self.coef_ = res.X_hat
        self.support_ = res.support
        self.n_iter_ = res.n_iter
        self.gate_posterior_ = res.gate_post
        self.hyper_ = res.hyper
        return self


class CorrMapADMM(_JuiceEstimator):
    """corr-MAP-ADMM; parameters mirror :class:`juice.admm.AdmmConfig`."""

    _config_cls = AdmmConfig

    def __init__(self, beta1=0.3, beta2=0.03, beta3=0.03, rho=1.0, eps0=1.0, eps_thr=0.05,
                 threshold_mode="relative", K_c=10, k_c_max=100, k_u_max=10, eps_stp=1e-4,
                 eps_cycle=2e-3, d=1.0, v_form="precision", clamp_alpha=False):
        self.beta1 = beta1
        self.beta2 = beta2
        self.beta3 = beta3
        self.rho = rho
        self.eps0 = eps0
        self.eps_thr = eps_thr
        self.threshold_mode = threshold_mode
        self.K_c = K_c
        self.k_c_max = k_c_max
        self.k_u_max = k_u_max
        self.eps_stp = eps_stp
        self.eps_cycle = eps_cycle
        self.d = d
        self.v_form = v_form
        self.clamp_alpha = clamp_alpha

    def fit(self, Y, Phi, noise_var, clusters=None, cov_prior=None, powers=None):
        Y, Phi, sigma2, clusters, B = self._prepare(Y, Phi, noise_var, clusters, cov_prior)
        res = run_corr_map_admm(Y, Phi, sigma2, clusters, B, config=self._config(), p=powers)
        self.coef_ = res.X_hat
        self.support_ = res.support
        self.n_iter_ = res.n_iter
        self.cluster_cov_ = res.R_cl
        self.active_clusters_ = res.active_clusters
        return self


class IRWL21(_JuiceEstimator):
    """Iterative reweighted l2,1; parameters mirror :class:`juice.baselines.IrwConfig`."""

    _config_cls = IrwConfig

    def __init__(self, lam=0.3, eps0=1.0, rho=1.0, n_reweight=5, k_max=300, eps_stp=1e-4,
                 eps_thr=0.05):
        self.lam = lam
        self.eps0 = eps0
        self.rho = rho
        self.n_reweight = n_reweight
        self.k_max = k_max
        self.eps_stp = eps_stp
        self.eps_thr = eps_thr

    def fit(self, Y, Phi, noise_var, clusters=None, cov_prior=None):
        Y, Phi = check_pilot_system(Y, Phi)
        res = irw_l21(Y, Phi, check_noise_var(noise_var), config=self._config())
        self.coef_ = res.X_hat
        self.support_ = res.support
        self.n_iter_ = res.n_iter
        return self


class OracleMMSE(_JuiceEstimator):
    """MMSE estimator with genie knowledge of the support and covariances."""

    def __init__(self, support=None, covariances=None, powers=1.0):
        self.support = support
        self.covariances = covariances
        self.powers = powers

    def fit(self, Y, Phi, noise_var, clusters=None, cov_prior=None):
        Y, Phi = check_pilot_system(Y, Phi)
        if self.support is None or self.covariances is None:
            raise ValueError("OracleMMSE needs both `support` and `covariances`")
        info = OracleInfo(S_true=self.support, R_true=self.covariances, p=self.powers,
                          sigma2=check_noise_var(noise_var))
        self.coef_ = oracle_mmse(Y, Phi, info)
        self.support_ = info.S_true
        self.n_iter_ = 1
        return self
