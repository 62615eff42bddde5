import numpy as np
import pytest

from landmark_forge.schemas.sample import LandmarkSet
from landmark_forge.services.errors import MetricError
from landmark_forge.services.metrics_service import iod_error, mean_iod, pck

FACE = np.array([[30.0, 40.0], [70.0, 40.0], [50.0, 60.0], [35.0, 80.0], [65.0, 80.0]])


def _set(points, visible=None):
    points = np.asarray(points, dtype=np.float64)
    visible = np.ones(len(points), dtype=bool) if visible is None else np.asarray(visible)
    return LandmarkSet(points=points, visible=visible, eye_indices=(0, 1))


class TestIodError:
    def test_exact_prediction(self):
        assert iod_error(_set(FACE), _set(FACE)) == 0.0

    def test_offset_of_one_interocular_distance(self):
        assert iod_error(_set(FACE + [40.0, 0.0]), _set(FACE)) == pytest.approx(100.0)

    def test_offset_of_half_the_interocular_distance(self):
        assert iod_error(_set(FACE + [0.0, 20.0]), _set(FACE)) == pytest.approx(50.0)

    def test_invariant_to_translation_and_scale(self):
        rng = np.random.default_rng(0)
        pred = FACE + rng.normal(0, 3, FACE.shape)
        base = iod_error(_set(pred), _set(FACE))
        moved = iod_error(_set(2.5 * pred + 7.0), _set(2.5 * FACE + 7.0))
        assert moved == pytest.approx(base)

    def test_invisible_points_do_not_count(self):
        visible = [True, True, True, True, False]
        far = FACE.copy()
        far[4] += 1000.0
        assert iod_error(_set(far), _set(FACE, visible)) == 0.0

    def test_coincident_eyes(self):
        gt = FACE.copy()
        gt[1] = gt[0]
        with pytest.raises(MetricError, match="zero"):
            iod_error(_set(FACE), _set(gt))

    def test_landmark_count_mismatch(self):
        with pytest.raises(MetricError):
            iod_error(_set(FACE[:4]), _set(FACE))

    def test_mean_is_taken_per_image(self):
        gts = [_set(FACE), _set(FACE)]
        preds = [_set(FACE), _set(FACE + [40.0, 0.0])]
        assert mean_iod(preds, gts) == pytest.approx(50.0)

    def test_prediction_count_mismatch(self):
        with pytest.raises(MetricError, match="2 predictions for 3"):
            mean_iod([_set(FACE)] * 2, [_set(FACE)] * 3)

    def test_no_images(self):
        with pytest.raises(MetricError):
            mean_iod([], [])


class TestPck:
    def test_exact_predictions(self):
        assert pck([_set(FACE)], [_set(FACE)], [(50, 100)]) == 100.0

    def test_just_outside_the_threshold(self):
        assert pck([_set(FACE + [5.1, 0.0])], [_set(FACE)], [(50, 100)]) == 0.0

    def test_on_the_threshold_counts(self):
        assert pck([_set(FACE + [0.0, 5.0])], [_set(FACE)], [(50, 100)]) == 100.0

    def test_threshold_follows_the_longer_side(self):
        shifted = [_set(FACE + [7.0, 0.0])]
        assert pck(shifted, [_set(FACE)], [(50, 100)]) == 0.0
        assert pck(shifted, [_set(FACE)], [(200, 100)]) == 100.0

    def test_accepts_image_arrays(self):
        assert pck([_set(FACE)], [_set(FACE)], [np.zeros((50, 100, 3))]) == 100.0

    def test_invisible_predictions_are_ignored(self):
        visible = [True, True, False, True, True]
        pred = FACE.copy()
        pred[2] = [-500.0, -500.0]
        assert pck([_set(pred)], [_set(FACE, visible)], [(50, 100)]) == 100.0

    def test_partial_hits(self):
        pred = FACE.copy()
        pred[0] += 30.0
        assert pck([_set(pred)], [_set(FACE)], [(50, 100)]) == pytest.approx(80.0)

    def test_nothing_visible(self):
        with pytest.raises(MetricError):
            pck([_set(FACE)], [_set(FACE, [False] * 5)], [(50, 100)])
