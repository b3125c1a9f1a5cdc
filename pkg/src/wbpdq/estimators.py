"""scikit-learn style wrappers around the decoders.

The design matrix ``X`` is the sensing matrix (one row per measurement) and
``y`` the measurement vector, so ``coef_`` is the recovered signal and
``predict(X)`` re-synthesizes measurements, as for any linear model.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .model import Quantizer, SensingMatrix, make_weights, quantize
from .prox import TubeProjectionConfig
from .solver import SolverConfig, solve_bp, solve_bpdq

__all__ = ["WeightedBPDQ", "WeightedBasisPursuit", "MidRiserQuantizer"]


def _weights(prior_support, theta, n):
    if prior_support is None:
        return np.ones(n)
    return make_weights(prior_support, theta, n).weights


class _DecoderBase(RegressorMixin, BaseEstimator):

    def _validate(self, X, y):
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        self.n_features_in_ = X.shape[1]
        return X, y

    def _store(self, report):
        self.coef_ = report.x.copy()
        self.n_iter_ = report.iterations
        self.converged_ = report.converged
        self.report_ = report
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X @ self.coef_


class WeightedBPDQ(_DecoderBase):
    """Weighted l1 decoder with an lp data-fidelity tube.

    Parameters
    ----------
    p : float, default=2.0
        Fidelity exponent in ``[2, inf]``.
    epsilon : float or "auto", default="auto"
        Tube radius. ``"auto"`` needs ``bin_width``.
    bin_width : float, optional
        Quantizer bin width used to size an automatic radius.
    prior_support : iterable of int, optional
        Indices expected in the support; they get weight ``theta``.
    theta : float, default=0.5
    gamma : float, default=1.0
        Scale of the weighted l1 prox inside the splitting.
    relaxation : float, default=1.0
    max_iter : int, default=800
    tol : float, optional
        Fixed-point residual threshold; ``None`` means ``1e-7 * sqrt(N)``.
    tube_method : {"iterative_dual", "tight_frame"}, default="iterative_dual"
    """

    def __init__(self, p=2.0, epsilon="auto", bin_width=None, prior_support=None,
                 theta=0.5, gamma=1.0, relaxation=1.0, max_iter=800, tol=None,
                 tube_method="iterative_dual"):
        self.p = p
        self.epsilon = epsilon
        self.bin_width = bin_width
        self.prior_support = prior_support
        self.theta = theta
        self.gamma = gamma
        self.relaxation = relaxation
        self.max_iter = max_iter
        self.tol = tol
        self.tube_method = tube_method

    def fit(self, X, y):
        X, y = self._validate(X, y)
        cfg = SolverConfig(p=float(self.p), epsilon=self.epsilon, gamma=self.gamma,
                           relaxation=self.relaxation, max_iters=self.max_iter,
                           fp_tol=self.tol)
        w = _weights(self.prior_support, self.theta, X.shape[1])
        report = solve_bpdq(y, _quiet_matrix(X), w, cfg,
                            TubeProjectionConfig(method=self.tube_method),
                            bin_width=self.bin_width)
        self.epsilon_ = report.epsilon
        return self._store(report)


class WeightedBasisPursuit(_DecoderBase):
    """Weighted l1 minimization under exact equality constraints."""

    def __init__(self, prior_support=None, theta=0.5, gamma=1.0, relaxation=1.0,
                 max_iter=800, tol=None):
        self.prior_support = prior_support
        self.theta = theta
        self.gamma = gamma
        self.relaxation = relaxation
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y):
        X, y = self._validate(X, y)
        cfg = SolverConfig(gamma=self.gamma, relaxation=self.relaxation,
                           max_iters=self.max_iter, fp_tol=self.tol)
        w = _weights(self.prior_support, self.theta, X.shape[1])
        return self._store(solve_bp(y, _quiet_matrix(X), w, cfg))


def _quiet_matrix(X):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return SensingMatrix(X)


class MidRiserQuantizer(TransformerMixin, BaseEstimator):
    """Elementwise uniform mid-riser quantizer with bin width ``alpha``."""

    def __init__(self, alpha=1.0):
        self.alpha = alpha

    def fit(self, X, y=None):
        Quantizer(float(self.alpha))
        X = check_array(X, dtype=float, ensure_2d=False)
        self.n_features_in_ = X.shape[1] if X.ndim == 2 else 1
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = check_array(X, dtype=float, ensure_2d=False)
        return quantize(X, float(self.alpha))

    def __sklearn_tags__(self):
        tags = super().__sklearn_tags__()
        tags.requires_fit = False
        return tags
