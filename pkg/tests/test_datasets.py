import numpy as np
import numpy.testing as npt
import pytest
import torch

from landmark_forge.schemas.dataset import AugmentationConfig
from landmark_forge.schemas.sample import ImageSample, LandmarkSet
from landmark_forge.services.augmentation_service import (
    TwoViewDataset,
    eval_view,
    make_two_views,
    make_unaligned,
    pad_and_resize,
)
from landmark_forge.services.dataset_service import (
    build_matching_pairs,
    load_dataset,
    read_pairs_file,
    split_samples,
    write_dataset,
)
from landmark_forge.services.errors import DatasetError, MissingArtifactError
from landmark_forge.services.synthetic_service import (
    EYE_INDICES,
    generate_synthetic_dataset,
    generate_synthetic_face,
    identity_parameters,
    render_face,
)


class TestSyntheticFaces:
    def test_five_landmarks_inside_canvas(self, small_faces):
        for sample in small_faces:
            assert sample.image.shape == (48, 48, 3)
            assert len(sample.landmarks) == 5
            assert sample.landmarks.eye_indices == EYE_INDICES
            assert sample.landmarks.visible.all()
            assert sample.image.min() >= 0.0 and sample.image.max() <= 1.0

    def test_same_seed_same_pixels(self):
        a = generate_synthetic_dataset(3, 2, canvas=40, seed=5)
        b = generate_synthetic_dataset(3, 2, canvas=40, seed=5)
        for x, y in zip(a, b):
            npt.assert_array_equal(x.image, y.image)
            npt.assert_array_equal(x.landmarks.points, y.landmarks.points)

    def test_single_face_is_deterministic_per_seed(self):
        a, b = generate_synthetic_face(7, canvas=40), generate_synthetic_face(7, canvas=40)
        npt.assert_array_equal(a.image, b.image)
        assert a.identity_id == 7 and len(a.landmarks) == 5
        assert not np.array_equal(a.image, generate_synthetic_face(8, canvas=40).image)

    def test_identities_cycle(self, small_faces):
        assert [s.identity_id for s in small_faces] == [i % 3 for i in range(12)]

    def test_identity_parameters_are_persistent_and_distinct(self):
        npt.assert_array_equal(identity_parameters(4), identity_parameters(4))
        assert not np.allclose(identity_parameters(4), identity_parameters(5))

    def test_rejects_small_canvas(self):
        with pytest.raises(ValueError):
            render_face(0, 16)

    def test_rejects_empty_request(self):
        with pytest.raises(ValueError):
            generate_synthetic_dataset(0, 1)


class TestTwoViews:
    def test_crop_must_fit_the_coarsest_grid(self):
        with pytest.raises(ValueError, match="multiple of 32"):
            AugmentationConfig(crop_size=34, resize_size=40)

    def test_identity_augmentation_gives_equal_views(self, small_faces, tiny_identity_aug):
        pair = make_two_views(small_faces[0], tiny_identity_aug, np.random.default_rng(0))
        npt.assert_array_equal(pair.query_view.image, pair.key_view.image)
        npt.assert_allclose(pair.geometry, np.eye(3), atol=1e-12)

    def test_solarization_only_on_key_view(self, small_faces):
        cfg = AugmentationConfig.identity(crop_size=32, resize_size=32, solarize_prob_target_only=1.0)
        pair = make_two_views(small_faces[1], cfg, np.random.default_rng(0))
        query = pair.query_view.image
        expected = np.where(query >= 0.5, 1.0 - query, query)
        npt.assert_allclose(pair.key_view.image, expected, atol=1e-6)

    def test_geometry_maps_query_landmarks_onto_key_landmarks(self, small_faces, tiny_aug):
        rng = np.random.default_rng(3)
        for sample in small_faces[:6]:
            pair = make_two_views(sample, tiny_aug, rng)
            mapped = pair.query_view.landmarks.transform(pair.geometry)
            npt.assert_allclose(mapped.points, pair.key_view.landmarks.points, atol=0.5)

    def test_views_have_crop_size(self, small_faces, tiny_aug):
        pair = make_two_views(small_faces[2], tiny_aug, np.random.default_rng(1))
        assert pair.query_view.image.shape == (32, 32, 3)
        assert pair.key_view.image.shape == (32, 32, 3)

    def test_dataset_items_depend_on_seed_epoch_and_index_only(self, small_faces, tiny_aug):
        dataset = TwoViewDataset(small_faces, tiny_aug, seed=7)
        first = dataset[4]
        _ = dataset[2]
        again = dataset[4]
        torch.testing.assert_close(first[0], again[0])
        torch.testing.assert_close(first[1], again[1])
        dataset.set_epoch(1)
        assert not torch.equal(first[0], dataset[4][0])


class TestEvalCrops:
    def test_eval_view_shifts_landmarks_with_the_crop(self, small_faces):
        cfg = AugmentationConfig(crop_size=32, resize_size=48)
        view = eval_view(small_faces[0], cfg)
        assert view.image.shape == (32, 32, 3)
        npt.assert_allclose(view.landmarks.points, small_faces[0].landmarks.points - 8.0, atol=1e-9)

    def test_zero_margin_pad_keeps_pixels(self, small_faces):
        sample = small_faces[0]
        same = pad_and_resize(sample, 0, (0, 0), sample.height)
        npt.assert_allclose(same.image, sample.image, atol=1e-6)
        npt.assert_allclose(same.landmarks.points, sample.landmarks.points, atol=1e-9)

    def test_padding_shrinks_the_face_toward_the_center(self, small_faces):
        sample = small_faces[0]
        zoomed = pad_and_resize(sample, 12, (0, 0), sample.height)
        center = np.array([24.0, 24.0])
        expected = center + (sample.landmarks.points - center) * 48.0 / 72.0
        npt.assert_allclose(zoomed.landmarks.points, expected, atol=1e-9)

    def test_unaligned_crop_keeps_size(self, small_faces, tiny_aug):
        moved = make_unaligned(small_faces[0], tiny_aug, np.random.default_rng(0))
        assert moved.image.shape == small_faces[0].image.shape


class TestFolderDataset:
    def test_round_trip_through_disk(self, small_faces, tmp_path):
        write_dataset(small_faces[:4], tmp_path / "faces")
        dataset = load_dataset(tmp_path / "faces")
        assert len(dataset) == 4
        for loaded, original in zip(dataset, small_faces[:4]):
            npt.assert_allclose(loaded.landmarks.points, original.landmarks.points, atol=1e-4)
            assert loaded.identity_id == original.identity_id
            npt.assert_allclose(loaded.image, original.image, atol=1.0 / 255.0)

    def test_folder_without_annotations(self, small_faces, tmp_path):
        root = write_dataset(small_faces[:3], tmp_path / "faces")
        (root / "landmarks.csv").unlink()
        dataset = load_dataset(root)
        assert len(dataset) == 3
        assert all(sample.landmarks is None for sample in dataset)

    def test_missing_root(self, tmp_path):
        with pytest.raises(MissingArtifactError):
            load_dataset(tmp_path / "nowhere")

    def test_malformed_coordinate_names_the_line(self, small_faces, tmp_path):
        root = write_dataset(small_faces[:2], tmp_path / "faces")
        lines = (root / "landmarks.csv").read_text().splitlines()
        fields = lines[2].split(",")
        fields[1] = "abc"
        lines[2] = ",".join(fields)
        (root / "landmarks.csv").write_text("\n".join(lines) + "\n")
        with pytest.raises(DatasetError, match=":3:"):
            load_dataset(root)

    def test_row_naming_a_missing_image(self, small_faces, tmp_path):
        root = write_dataset(small_faces[:2], tmp_path / "faces")
        (root / "images" / "00001.png").unlink()
        with pytest.raises(DatasetError, match="00001.png"):
            load_dataset(root)

    def test_empty_coordinates_are_invisible(self, small_faces, tmp_path):
        root = write_dataset(small_faces[:1], tmp_path / "faces")
        lines = (root / "landmarks.csv").read_text().splitlines()
        fields = lines[1].split(",")
        fields[5], fields[6] = "", ""
        lines[1] = ",".join(fields)
        (root / "landmarks.csv").write_text("\n".join(lines) + "\n")
        sample = load_dataset(root)[0]
        npt.assert_array_equal(sample.landmarks.visible, [True, True, False, True, True])


class TestPairs:
    def test_exact_counts_and_identity_rules(self, small_faces):
        pairs = build_matching_pairs(small_faces, 7, 5, np.random.default_rng(0), return_indices=True)
        same = [p for p in pairs if p[2]]
        diff = [p for p in pairs if not p[2]]
        assert len(same) == 7 and len(diff) == 5
        for ref, query, _ in same:
            assert ref != query
            assert small_faces[ref].identity_id == small_faces[query].identity_id
        for ref, query, _ in diff:
            assert small_faces[ref].identity_id != small_faces[query].identity_id

    def test_single_identity_cannot_form_different_pairs(self):
        samples = generate_synthetic_dataset(3, 1, canvas=32)
        with pytest.raises(DatasetError):
            build_matching_pairs(samples, 1, 1, np.random.default_rng(0))

    def test_annotations_without_identity_column(self, small_faces, tmp_path):
        root = write_dataset(small_faces, tmp_path / "faces")
        lines = (root / "landmarks.csv").read_text().splitlines()
        (root / "landmarks.csv").write_text("\n".join(line.rsplit(",", 1)[0] for line in lines) + "\n")
        dataset = list(load_dataset(root))
        assert all(sample.identity_id == -1 for sample in dataset)
        pairs = build_matching_pairs(dataset, 0, 6, np.random.default_rng(0), return_indices=True)
        assert len(pairs) == 6
        assert all(ref != query and not same for ref, query, same in pairs)
        with pytest.raises(DatasetError):
            build_matching_pairs(dataset, 1, 0, np.random.default_rng(0))

    def test_pairs_file_round_trip(self, small_faces, tmp_path):
        pairs = build_matching_pairs(small_faces, 3, 2, np.random.default_rng(1), return_indices=True)
        root = write_dataset(small_faces, tmp_path / "faces", pairs)
        loaded = read_pairs_file(root / "pairs.txt", load_dataset(root))
        assert [same for _, _, same in loaded] == [same for _, _, same in pairs]

    def test_split_is_deterministic_and_disjoint(self, small_faces):
        train, val = split_samples(small_faces, 0.25, seed=0)
        again, _ = split_samples(small_faces, 0.25, seed=0)
        assert len(val) == 3 and len(train) == 9
        assert [id(s) for s in train] == [id(s) for s in again]
        assert not {id(s) for s in train} & {id(s) for s in val}


class TestLandmarkSet:
    def test_points_outside_the_image_become_invisible(self):
        landmarks = LandmarkSet.from_points([[1, 1], [40, 5]], eye_indices=(0, 1))
        sample = ImageSample(image=np.zeros((32, 32, 3)), landmarks=landmarks)
        npt.assert_array_equal(sample.landmarks.visible, [True, False])

    def test_bad_eye_indices(self):
        with pytest.raises(ValueError):
            LandmarkSet.from_points([[0, 0], [1, 1]], eye_indices=(0, 0))
