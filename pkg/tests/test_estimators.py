import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from flamemodes import BiLSTMVAE, LatentModeClassifier, analysis, formats
from flamemodes.exceptions import InputError
from flamemodes.records import OperatingPoint
from flamemodes import synth

SMALL = dict(window_len=10, stride=5, hidden1=3, hidden2=2, batch_size=8, max_epochs=3, patience=2)


@pytest.fixture(scope="module")
def records():
    ops = [OperatingPoint(1600, 0.65), OperatingPoint(1600, 0.80)]
    return [synth.generate_case(op, duration=0.02, sample_rate=5000, seed=0) for op in ops]


@pytest.fixture(scope="module")
def fitted(records):
    return BiLSTMVAE(**SMALL).fit(records)


def test_params_round_trip_through_clone():
    est = BiLSTMVAE(**SMALL, learning_rate=0.01)
    params = est.get_params()
    assert params["learning_rate"] == 0.01 and params["window_len"] == 10
    twin = clone(est)
    assert twin.get_params() == params
    assert not hasattr(twin, "checkpoint_")
    assert est.set_params(seed=7).seed == 7


def test_default_params_match_training_config():
    from flamemodes.pipeline import TrainConfig
    assert BiLSTMVAE().train_config() == TrainConfig()


def test_transform_before_fit_raises(records):
    with pytest.raises(NotFittedError):
        BiLSTMVAE(**SMALL).transform(records[0])


def test_fit_sets_attributes(fitted):
    assert fitted.n_features_in_ == 16
    assert 1 <= fitted.best_epoch_ <= len(fitted.history_) <= 3
    assert fitted.normalizer_.mean.shape == (16,)


def test_transform_shapes(fitted, records):
    z = fitted.transform(records[0])
    assert z.shape == (19, 2)
    windows = np.stack([records[0].samples[5 * k: 5 * k + 10] for k in range(19)])
    np.testing.assert_array_equal(fitted.transform(windows), z)
    with pytest.raises(InputError):
        fitted.transform(np.zeros((3, 11, 16)))
    assert fitted.reconstruct(records[0]).shape == (19, 10, 16)


def test_clouds_match_analysis_encoder(fitted, records):
    clouds = fitted.encode_clouds(records)
    assert [c.case_id for c in clouds] == [r.case_id for r in records]
    np.testing.assert_array_equal(clouds[1].points, analysis.encode_cloud(fitted.checkpoint_, records[1]).points)


def test_checkpoint_round_trip(fitted, records, tmp_path):
    fitted.save(tmp_path / "m.blvc")
    again = BiLSTMVAE.from_checkpoint(tmp_path / "m.blvc")
    np.testing.assert_array_equal(again.transform(records[0]), fitted.transform(records[0]))
    assert again.window_len == 10 and again.best_epoch_ == fitted.best_epoch_
    assert formats.checkpoint_bytes(again.checkpoint_) == formats.checkpoint_bytes(fitted.checkpoint_)


def test_fit_rejects_non_records():
    with pytest.raises(InputError):
        BiLSTMVAE(**SMALL).fit(np.zeros((10, 16)))


def test_classifier_predicts_mode_labels():
    rng = np.random.default_rng(0)
    line = np.c_[rng.standard_normal(60), 0.01 * rng.standard_normal(60)]
    blob = rng.standard_normal((60, 2))
    pair = np.r_[rng.normal(-1, 0.05, (30, 2)), rng.normal(1, 0.05, (30, 2))]
    clf = LatentModeClassifier().fit([line, blob, pair])
    np.testing.assert_array_equal(clf.classes_, [1, 2, 3])
    np.testing.assert_array_equal(clf.predict([line, blob, pair]), [1, 2, 3])
    assert clf.score([line, blob, pair], [1, 2, 3]) == 1.0
    assert clf.predict(blob).tolist() == [2]
    assert clone(clf).get_params() == {"tau_bimodal": 3.0, "tau_ratio": 0.1}
    # with Mode III out of reach, two tight clusters on a line read as Mode I
    assert LatentModeClassifier(tau_bimodal=100.0).predict([pair]).tolist() == [1]


def test_classifier_input_validation():
    clf = LatentModeClassifier()
    with pytest.raises(ValueError):
        clf.predict([np.zeros((5, 2))])
    with pytest.raises(InputError):
        clf.predict([np.zeros((20, 3))])
    with pytest.raises(InputError):
        clf.predict([])
    with pytest.raises(ValueError):
        clf.predict([np.full((20, 2), np.nan)])
