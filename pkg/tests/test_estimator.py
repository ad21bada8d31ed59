import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from dsainet.data import synth_generate, zscore
from dsainet.estimator import DSAINetClassifier, ZScoreTransformer, check_trials
from dsainet.exceptions import DataError

SMALL = dict(f1=4, embed_dim=8, n_heads=2, max_epochs=4, batch_size=16)


@pytest.fixture(scope="module")
def data():
    return synth_generate(n_subjects=4, trials_per_subject=40, n_channels=4, n_samples=256, seed=1)


@pytest.fixture(scope="module")
def fitted(data):
    labels = np.array(["left", "right"])[data.y]
    return DSAINetClassifier(**SMALL).fit(data.X, labels), labels


def test_get_set_params_and_clone():
    est = DSAINetClassifier(embed_dim=8, max_epochs=2)
    params = est.get_params()
    assert params["embed_dim"] == 8 and params["max_epochs"] == 2
    est.set_params(learning_rate=0.01)
    twin = clone(est)
    assert twin.get_params() == est.get_params() and not hasattr(twin, "model_")


def test_fit_predict_with_string_labels(fitted, data):
    est, labels = fitted
    assert list(est.classes_) == ["left", "right"]
    pred = est.predict(data.X)
    assert set(pred) <= {"left", "right"}
    assert np.mean(pred == labels) > 0.8
    proba = est.predict_proba(data.X[:5])
    np.testing.assert_allclose(proba.sum(1), 1.0, atol=1e-12)
    assert est.decision_function(data.X[:5]).shape == (5, 2)
    assert est.score(data.X, labels) == np.mean(pred == labels)


def test_fit_is_reproducible(data):
    a = DSAINetClassifier(**SMALL, random_state=3).fit(data.X, data.y)
    b = DSAINetClassifier(**SMALL, random_state=3).fit(data.X, data.y)
    assert a.history_.train_loss == b.history_.train_loss
    np.testing.assert_array_equal(a.decision_function(data.X[:4]), b.decision_function(data.X[:4]))


def test_explicit_validation_data(data):
    est = DSAINetClassifier(**{**SMALL, "max_epochs": 2}).fit(data.X[:120], data.y[:120], data.X[120:], data.y[120:])
    assert len(est.history_.val_acc) == 2


def test_unfitted_and_shape_errors(fitted, data):
    with pytest.raises(NotFittedError):
        DSAINetClassifier().predict(data.X)
    est, _ = fitted
    with pytest.raises(DataError):
        est.predict(data.X[:, :3])
    with pytest.raises(DataError):
        DSAINetClassifier(**SMALL).fit(data.X, np.zeros(len(data.X)))


def test_input_validation_helpers():
    assert check_trials(np.zeros((3, 10))).shape == (1, 3, 10)
    with pytest.raises(ValueError):
        check_trials(np.full((1, 2, 3), np.inf))
    with pytest.raises(DataError):
        check_trials(np.zeros((1, 1, 2, 3)))


def test_zscore_transformer_in_pipeline(data):
    tr = ZScoreTransformer()
    np.testing.assert_allclose(tr.fit_transform(data.X[:3]), zscore(data.X[:3]))
    pipe = make_pipeline(ZScoreTransformer(), DSAINetClassifier(**{**SMALL, "max_epochs": 1}, normalize=False))
    pipe.fit(data.X, data.y)
    assert pipe.predict(data.X[:3]).shape == (3,)
