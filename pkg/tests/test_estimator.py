import numpy as np
import pytest

from bodyseg.data import synthetic_dataset
from bodyseg.estimator import BodyPartSegmenter
from bodyseg.validation import check_image_batch, check_mask_batch


@pytest.fixture(scope="module")
def fitted():
    records = synthetic_dataset(2, seed=6, canvas=(32, 32))
    X = np.stack([r.image for r in records])
    y = np.stack([r.mask for r in records])
    est = BodyPartSegmenter(steps=3, batch_size=1, seed=1, input_size=(32, 32))
    return est.fit(X, y), X, y


class TestParamProtocol:
    def test_get_params_lists_constructor_args(self):
        params = BodyPartSegmenter().get_params()
        assert params["lr"] == 0.05
        assert params["momentum"] == 0.9
        assert "steps" in params and "mc_samples" in params

    def test_set_params_round_trip(self):
        est = BodyPartSegmenter()
        est.set_params(lr=0.01, steps=7)
        assert est.get_params()["lr"] == 0.01
        assert est.get_params()["steps"] == 7

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ValueError, match="invalid parameter"):
            BodyPartSegmenter().set_params(gamma=3)

    def test_sklearn_clone_compatible(self):
        sklearn_base = pytest.importorskip("sklearn.base")
        est = BodyPartSegmenter(steps=9, lr=0.2)
        cloned = sklearn_base.clone(est)
        assert cloned.get_params() == est.get_params()


class TestFitPredict:
    def test_fit_returns_self_and_sets_attributes(self, fitted):
        est, X, y = fitted
        assert hasattr(est, "model_")
        assert len(est.loss_curve_) == 3
        assert list(est.classes_) == list(range(12))

    def test_predict_shape_and_range(self, fitted):
        est, X, _ = fitted
        pred = est.predict(X)
        assert pred.shape == (2, 32, 32)
        assert pred.dtype == np.uint8
        assert pred.max() < 12

    def test_predict_accepts_single_image(self, fitted):
        est, X, _ = fitted
        pred = est.predict(X[0])
        assert pred.shape == (1, 32, 32)

    def test_predict_proba_sums_to_one(self, fitted):
        est, X, _ = fitted
        proba = est.predict_proba(X)
        assert proba.shape == (2, 12, 32, 32)
        assert np.abs(proba.sum(axis=1) - 1.0).max() < 1e-6

    def test_predict_deterministic(self, fitted):
        est, X, _ = fitted
        assert np.array_equal(est.predict(X), est.predict(X))

    def test_score_is_mean_dice(self, fitted):
        est, X, y = fitted
        score = est.score(X, y)
        assert 0.0 <= score <= 1.0

    def test_score_on_predicted_masks_is_one(self, fitted):
        est, X, _ = fitted
        pred = est.predict(X)
        assert est.score(X, pred) == 1.0

    def test_unfitted_predict_rejected(self):
        with pytest.raises(RuntimeError, match="not fitted"):
            BodyPartSegmenter().predict(np.zeros((1, 3, 32, 32)))

    def test_mc_uncertainty_shapes(self, fitted):
        est, X, _ = fitted
        est_mc = BodyPartSegmenter(**{**est.get_params(), "mc_samples": 3})
        est_mc.model_ = est.model_
        mean, var = est_mc.predict_uncertainty(X[:1])
        assert mean.shape == (1, 12, 32, 32)
        assert var.shape == (1, 12, 32, 32)
        assert np.all(var >= 0)

    def test_uncertainty_needs_multiple_samples(self, fitted):
        est, X, _ = fitted
        with pytest.raises(ValueError, match="mc_samples"):
            est.predict_uncertainty(X[:1])


class TestValidation:
    def test_image_batch_from_list(self):
        imgs = [np.zeros((3, 32, 32)), np.ones((3, 32, 32))]
        out = check_image_batch(imgs)
        assert out.shape == (2, 3, 32, 32)

    def test_image_values_out_of_range_rejected(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            check_image_batch(np.full((1, 3, 8, 8), 2.0))

    def test_non_finite_rejected(self):
        bad = np.zeros((1, 3, 8, 8))
        bad[0, 0, 0, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            check_image_batch(bad)

    def test_wrong_layout_rejected(self):
        with pytest.raises(ValueError, match=r"\[N, 3, H, W\]"):
            check_image_batch(np.zeros((1, 8, 8, 3)))

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            check_image_batch([])

    def test_mask_batch_shape_checked(self):
        X = np.zeros((2, 3, 8, 8))
        with pytest.raises(ValueError, match="expected masks"):
            check_mask_batch(np.zeros((2, 4, 4), dtype=np.uint8), X)

    def test_mask_labels_checked(self):
        X = np.zeros((1, 3, 8, 8))
        with pytest.raises(ValueError, match="mask labels"):
            check_mask_batch(np.full((1, 8, 8), 99, dtype=np.int64), X)

    def test_float_masks_rejected(self):
        X = np.zeros((1, 3, 8, 8))
        with pytest.raises(ValueError, match="integer-valued"):
            check_mask_batch(np.zeros((1, 8, 8)), X)

    def test_void_allowed_in_masks(self):
        X = np.zeros((1, 3, 8, 8))
        mask = np.zeros((1, 8, 8), dtype=np.int64)
        mask[0, 0, 0] = 255
        out = check_mask_batch(mask, X)
        assert out.dtype == np.uint8
