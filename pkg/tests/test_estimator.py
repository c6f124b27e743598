import numpy as np
import pytest

from conftest import shape_scenes
from pointprops import estimator
from pointprops.estimator import NotFittedError, PointPropsDetector


def tiny_detector(**overrides):
    params = dict(
        descriptor_dim=4, rad=2, n_min=1, n_max=12, m_p=0.9, m_n=0.1,
        batch_scenes=1, transforms_per_scene=2, iterations=2, seed=5,
        prob_threshold=0.4, max_points=20,
    )
    params.update(overrides)
    return PointPropsDetector(**params)


class TestValidationHelpers:
    def test_accepts_valid_image(self):
        img = np.random.default_rng(0).random((8, 8))
        np.testing.assert_array_equal(estimator.as_float_image(img), img)

    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            estimator.as_float_image(np.full((4, 4), 2.0))

    def test_rejects_nan(self):
        img = np.zeros((4, 4))
        img[1, 1] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            estimator.as_float_image(img)

    def test_rejects_wrong_rank(self):
        with pytest.raises(ValueError):
            estimator.as_float_image(np.zeros(7))

    def test_padding(self):
        img = np.random.default_rng(1).random((9, 14))
        padded, shape = estimator.pad_to_multiple_of_4(img)
        assert shape == (9, 14)
        assert padded.shape == (12, 16)
        np.testing.assert_array_equal(padded[:9, :14], img)
        np.testing.assert_array_equal(padded[9:, :14], np.tile(img[8:9, :], (3, 1)))

    def test_padding_noop(self):
        img = np.zeros((8, 8))
        padded, _ = estimator.pad_to_multiple_of_4(img)
        assert padded is img


class TestParamsProtocol:
    def test_get_params_round_trip(self):
        det = tiny_detector()
        params = det.get_params()
        clone = PointPropsDetector(**params)
        assert clone.get_params() == params

    def test_set_params_chains(self):
        det = tiny_detector()
        assert det.set_params(rad=3, alpha=2.0) is det
        assert det.rad == 3
        assert det.alpha == 2.0

    def test_set_params_rejects_unknown(self):
        with pytest.raises(ValueError, match="unknown parameter"):
            tiny_detector().set_params(gamma=1.0)

    def test_invalid_hyperparameters_caught_at_fit(self):
        det = tiny_detector(n_min=15, n_max=12)
        with pytest.raises(ValueError):
            det.fit(shape_scenes(0, 2, size=16))


class TestFitDetect:
    def test_unfitted_raises(self):
        with pytest.raises(NotFittedError):
            tiny_detector().detect(np.zeros((8, 8)))

    def test_fit_sets_state_and_detects(self):
        det = tiny_detector()
        images = shape_scenes(3, 2, size=16)
        assert det.fit(images) is det
        assert det.params_.descriptor_dim == 4
        assert len(det.train_log_) == 2
        points = det.detect(images[0])
        assert points.xy.shape[1] == 2
        if len(points):
            assert points.descriptors.shape[1] == 4

    def test_detect_crops_padding(self):
        det = tiny_detector().fit(shape_scenes(3, 2, size=16))
        img = np.random.default_rng(2).random((13, 18))
        points = det.detect(img)
        if len(points):
            assert points.xy[:, 0].max() <= 17
            assert points.xy[:, 1].max() <= 12

    def test_predict_and_transform_aliases(self):
        det = tiny_detector().fit(shape_scenes(3, 2, size=16))
        imgs = shape_scenes(4, 2, size=16)
        out = det.predict(imgs)
        assert len(out) == 2
        assert len(det.transform(imgs)) == 2

    def test_fit_validates_shapes(self):
        det = tiny_detector()
        with pytest.raises(ValueError, match="share one shape"):
            det.fit([np.zeros((16, 16)), np.zeros((8, 8))])
        with pytest.raises(ValueError, match="multiples of 4"):
            det.fit([np.zeros((10, 10))])
        with pytest.raises(ValueError, match="at least one"):
            det.fit([])

    def test_checkpoint_round_trip(self, tmp_path):
        det = tiny_detector().fit(shape_scenes(3, 2, size=16))
        det.save_checkpoint(tmp_path / "m.ckpt")
        loaded = PointPropsDetector().load_checkpoint(tmp_path / "m.ckpt")
        assert loaded.descriptor_dim == 4
        for k in det.params_.weights:
            np.testing.assert_array_equal(loaded.params_.weights[k],
                                          det.params_.weights[k])
