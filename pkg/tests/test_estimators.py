import math

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from wbpdq.estimators import MidRiserQuantizer, WeightedBasisPursuit, WeightedBPDQ
from wbpdq.model import quantize


@pytest.fixture
def problem():
    rng = np.random.default_rng(7)
    phi = rng.standard_normal((14, 30))
    x = np.zeros(30)
    x[[3, 11, 20]] = [1.5, -2.0, 0.8]
    return phi, x


def test_params_and_clone():
    est = WeightedBPDQ(p=4.0, epsilon=0.2, prior_support=[1, 2], theta=0.3)
    params = est.get_params()
    assert params["p"] == 4.0 and params["theta"] == 0.3
    est.set_params(gamma=0.2)
    twin = clone(est)
    assert twin.get_params() == est.get_params() and twin is not est


def test_not_fitted(problem):
    phi, _ = problem
    with pytest.raises(NotFittedError):
        WeightedBasisPursuit().predict(phi)


def test_basis_pursuit_recovers(problem):
    phi, x = problem
    est = WeightedBasisPursuit(prior_support=[3, 11, 20], theta=0.5, max_iter=5000, tol=1e-10)
    est.fit(phi, phi @ x)
    assert est.converged_ and est.n_iter_ > 0
    np.testing.assert_allclose(est.coef_, x, atol=1e-6)
    np.testing.assert_allclose(est.predict(phi), phi @ x, atol=1e-6)
    assert est.score(phi, phi @ x) == pytest.approx(1.0)


def test_bpdq_auto_epsilon(problem):
    phi, x = problem
    alpha = 0.05
    y = quantize(phi @ x, alpha)
    est = WeightedBPDQ(p=math.inf, bin_width=alpha, gamma=0.1, max_iter=3000).fit(phi, y)
    assert est.epsilon_ == pytest.approx(alpha / 2)
    assert np.max(np.abs(y - est.predict(phi))) <= alpha / 2 * (1 + 1e-6)
    assert est.n_features_in_ == 30
    with pytest.raises(ValueError):
        est.predict(phi[:, :5])


def test_auto_epsilon_needs_bin_width(problem):
    phi, x = problem
    with pytest.raises(ValueError):
        WeightedBPDQ().fit(phi, phi @ x)


def test_quantizer_transformer():
    q = MidRiserQuantizer(alpha=0.5)
    v = np.array([[0.1, -0.3], [1.2, 0.0]])
    np.testing.assert_array_equal(q.fit_transform(v), quantize(v, 0.5))
    with pytest.raises(ValueError):
        MidRiserQuantizer(alpha=0).fit(v)
