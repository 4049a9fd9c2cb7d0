import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from auxnas import AuxNASClassifier, AuxNASRegressor
from auxnas.estimators import ESTIMATOR_MODES

FAST = dict(hidden=(6, 6), epochs=2, batch_size=8)


@pytest.fixture
def data(rng):
    X = rng.normal(size=(80, 4))
    y = np.sin(X[:, 0]) + 0.1 * rng.normal(size=80)
    return X, y, np.sin(X[:, 0])


@pytest.mark.parametrize("mode", ESTIMATOR_MODES)
def test_regressor_fit_predict_every_mode(mode, data):
    X, y, aux = data
    est = AuxNASRegressor(mode=mode, **FAST).fit(X, y, y_aux=aux)
    pred = est.predict(X)
    assert pred.shape == (80,) and np.isfinite(pred).all()
    assert est.n_features_in_ == 4
    assert est.n_aux_ == (0 if mode == "single" else 1)
    if mode != "symmetric":
        assert est.network_.mode == "pruned"
    assert -10 < est.score(X, y) <= 1


def test_predictions_match_the_pruned_search_network(data):
    from auxnas import archnet
    X, y, aux = data
    est = AuxNASRegressor(**FAST).fit(X, y, y_aux=[aux, aux[:, None] * 2])
    assert est.n_aux_ == 2
    full = archnet.hard_zero_alpha_p(est.search_network_)
    np.testing.assert_array_equal(est.predict(X), archnet.predict(full, X).ravel())


def test_multi_output_regression_keeps_shape(data):
    X, y, aux = data
    Y = np.column_stack([y, -y])
    assert AuxNASRegressor(**FAST).fit(X, Y, aux).predict(X).shape == (80, 2)


def test_clone_and_params_round_trip():
    est = AuxNASRegressor(hidden=(4,), epochs=3, lambda_end=5.0)
    params = est.get_params()
    assert params["lambda_end"] == 5.0 and params["mode"] == "aux_nas"
    c = clone(est).set_params(epochs=7)
    assert c.get_params()["epochs"] == 7 and est.epochs == 3


def test_fit_is_reproducible(data):
    X, y, aux = data
    a = AuxNASRegressor(random_state=4, **FAST).fit(X, y, aux).predict(X)
    b = AuxNASRegressor(random_state=4, **FAST).fit(X, y, aux).predict(X)
    assert a.tobytes() == b.tobytes()


def test_classifier(data, rng):
    X, _, aux = data
    labels = np.where(X[:, 0] > 0, "pos", "neg")
    clf = AuxNASClassifier(**FAST).fit(X, labels, y_aux=aux)
    assert list(clf.classes_) == ["neg", "pos"]
    proba = clf.predict_proba(X)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0)
    assert set(clf.predict(X)) <= {"neg", "pos"}
    assert 0 <= clf.score(X, labels) <= 1


def test_validation_errors(data):
    X, y, aux = data
    with pytest.raises(ValueError, match="mode"):
        AuxNASRegressor(mode="bogus", **FAST).fit(X, y, aux)
    with pytest.raises(ValueError, match="auxiliary targets"):
        AuxNASRegressor(**FAST).fit(X, y)
    with pytest.raises(ValueError, match="rows"):
        AuxNASRegressor(**FAST).fit(X, y, aux[:10])
    with pytest.raises(ValueError, match="two classes"):
        AuxNASClassifier(**FAST).fit(X, np.zeros(80), aux)
    with pytest.raises(NotFittedError):
        AuxNASRegressor().predict(X)
    est = AuxNASRegressor(mode="single", **FAST).fit(X, y)
    with pytest.raises(ValueError, match="features"):
        est.predict(X[:, :3])
