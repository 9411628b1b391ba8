import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from liao.errors import ValidationError
from liao.estimators import HyperbolicityEstimator, StructuralConjugacy

SADDLE = ["1", "x1", "-x2"]


@pytest.fixture(scope="module")
def fitted():
    return HyperbolicityEstimator(SADDLE, horizon=20.0).fit([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]])


def test_hyperbolicity_estimator(fitted):
    assert fitted.passed_
    assert fitted.eta_hat_ == pytest.approx(1.0, abs=1e-6)
    assert fitted.eta_A_ == pytest.approx(2.0, abs=1e-6)
    assert fitted.xi_A_ == pytest.approx(2.0, abs=1e-6)
    np.testing.assert_allclose(fitted.transform([[5.0, 0.0, 0.0]]), [[-1.0, 1.0]], atol=1e-9)


def test_params_round_trip(fitted):
    est = clone(fitted)
    assert est.get_params() == fitted.get_params()
    est.set_params(h=0.02)
    assert est.h == 0.02 and not hasattr(est, "eta_hat_")


def test_not_fitted():
    with pytest.raises(NotFittedError):
        HyperbolicityEstimator(SADDLE).transform([[0.0, 0.0, 0.0]])


@pytest.mark.parametrize("kw, X", [
    (dict(p_minus=3), [[0.0, 0.0, 0.0]]),
    (dict(h=-1.0), [[0.0, 0.0, 0.0]]),
    (dict(), [[0.0, 0.0]]),
    (dict(), [[np.nan, 0.0, 0.0]]),
])
def test_validation(kw, X):
    with pytest.raises((ValidationError, ValueError)):
        HyperbolicityEstimator(SADDLE, **kw).fit(X)


def test_structural_conjugacy():
    est = StructuralConjugacy(SADDLE, ["1", "x1 + 0.01", "-x2"])
    X = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])
    images = est.fit_transform(X)
    np.testing.assert_allclose(images, X + [0.0, -0.01, 0.0], atol=1e-8)
    np.testing.assert_allclose(est.transform([[2.5, 0.0, 0.0]]), [[2.5, -0.01, 0.0]], atol=1e-8)
    assert est.config_.kappa == pytest.approx(1 / 648, rel=1e-6)


def test_structural_conjugacy_dimension_mismatch():
    with pytest.raises(ValidationError):
        StructuralConjugacy(SADDLE, ["1", "x1"]).fit([[0.0, 0.0, 0.0]])
