import logging

import numpy as np
import numpy.testing as npt
import pytest
import torch

from landmark_forge.models.backbone import Backbone
from landmark_forge.schemas.dataset import AugmentationConfig
from landmark_forge.schemas.encoder import BackboneConfig
from landmark_forge.schemas.features import FeatureMap
from landmark_forge.services import encoder_service
from landmark_forge.services.errors import EncoderError
from landmark_forge.services.evaluation_service import prepare_eval_samples
from landmark_forge.services.extractor_service import HypercolumnExtractor
from landmark_forge.services.hypercolumn_service import (
    argmax_cell,
    brute_force_match,
    build_hypercolumn,
    cell_center,
    cosine_map,
    landmark_cell,
    match_landmarks,
    match_point,
)


def _map(grid, downscale=4, source=None):
    h, w = grid.shape[-2:]
    return FeatureMap(grid=grid, downscale=downscale, source_size=source or (h * downscale, w * downscale))


class TestBuildHypercolumn:
    def test_desk_backbone_width_and_resolution(self):
        backbone = Backbone(BackboneConfig()).eval()
        with torch.no_grad():
            stages = encoder_service.forward_stages(backbone, torch.randn(1, 3, 96, 96))
        hyper = build_hypercolumn(stages, 4)
        assert hyper.channels == 240
        assert hyper.spatial == (24, 24)
        assert hyper.channel_slices == [(0, 16), (16, 48), (48, 112), (112, 240)]

    def test_resnet50_widths(self):
        widths = BackboneConfig.preset("resnet50").stage_channels
        stages = [
            _map(torch.randn(1, c, 96 // r, 96 // r), r, (96, 96)) for c, r in zip(widths, [4, 8, 16, 32])
        ]
        assert build_hypercolumn(stages, 4).channels == 3840

    def test_single_stage_at_target_resolution_is_identity(self):
        grid = torch.randn(2, 5, 6, 6)
        hyper = build_hypercolumn([_map(grid)], 4)
        assert torch.equal(hyper.grid, grid)

    def test_constant_stages_stay_constant(self):
        coarse = _map(torch.full((1, 2, 3, 3), 2.5), 8, (24, 24))
        hyper = build_hypercolumn([coarse], 4)
        torch.testing.assert_close(hyper.grid, torch.full((1, 2, 6, 6), 2.5))

    def test_stage_order_permutes_channels(self):
        a = _map(torch.randn(1, 2, 6, 6), 4, (24, 24))
        b = _map(torch.randn(1, 3, 3, 3), 8, (24, 24))
        ab = build_hypercolumn([a, b]).grid
        ba = build_hypercolumn([b, a]).grid
        assert torch.equal(ab[:, :2], ba[:, 3:])
        assert torch.equal(ab[:, 2:], ba[:, :3])

    def test_stage_order_leaves_cosines_unchanged(self):
        ref = [_map(torch.randn(1, 2, 6, 6), 4, (24, 24)), _map(torch.randn(1, 3, 3, 3), 8, (24, 24))]
        query = [_map(torch.randn(1, 2, 6, 6), 4, (24, 24)), _map(torch.randn(1, 3, 3, 3), 8, (24, 24))]
        forward = cosine_map(build_hypercolumn(ref), (2, 3), build_hypercolumn(query))
        backward = cosine_map(build_hypercolumn(ref[::-1]), (2, 3), build_hypercolumn(query[::-1]))
        torch.testing.assert_close(forward, backward)

    def test_mismatched_sources(self):
        with pytest.raises(EncoderError):
            build_hypercolumn([_map(torch.randn(1, 2, 6, 6), 4, (24, 24)), _map(torch.randn(1, 2, 4, 4), 8, (32, 32))])

    def test_target_coarser_than_finest_stage(self):
        with pytest.raises(EncoderError):
            build_hypercolumn([_map(torch.randn(1, 2, 6, 6), 4, (24, 24))], 8)


class TestMatchPoint:
    def test_two_cell_example(self):
        ref = _map(torch.tensor([1.0, 0.0]).view(1, 2, 1, 1))
        query = _map(torch.tensor([[1.0, 0.0], [0.0, 1.0]]).T.reshape(1, 2, 2, 1))
        distribution, peak = match_point(ref, (0, 0), query, tau=1.0)
        npt.assert_allclose(distribution.mass.numpy().ravel(), [0.7311, 0.2689], atol=1e-4)
        assert peak == cell_center((0, 0), 4) == (2.0, 2.0)

    def test_mass_sums_to_one(self):
        ref = _map(torch.randn(1, 8, 5, 7))
        query = _map(torch.randn(1, 8, 6, 4))
        distribution, _ = match_point(ref, (2, 3), query, tau=0.3)
        assert float(distribution.mass.sum()) == pytest.approx(1.0, abs=1e-5)
        assert distribution.mass.shape == (6, 4)

    def test_self_match_recovers_every_cell(self):
        ref = _map(torch.randn(1, 16, 24, 24, dtype=torch.float64))
        for row in range(24):
            for col in range(24):
                distribution, peak = match_point(ref, (row, col), ref)
                assert argmax_cell(distribution) == (row, col)
                assert peak == cell_center((row, col), 4)

    def test_agrees_with_brute_force_search(self):
        gen = torch.Generator().manual_seed(0)
        ref = _map(torch.randn(1, 12, 9, 9, dtype=torch.float64, generator=gen))
        query = _map(torch.randn(1, 12, 9, 9, dtype=torch.float64, generator=gen))
        rng = np.random.default_rng(0)
        for _ in range(100):
            cell = (int(rng.integers(9)), int(rng.integers(9)))
            distribution, _ = match_point(ref, cell, query)
            assert argmax_cell(distribution) == brute_force_match(ref, cell, query)

    def test_invariant_to_feature_scale(self):
        ref = _map(torch.randn(1, 6, 5, 5, dtype=torch.float64))
        query = _map(torch.randn(1, 6, 5, 5, dtype=torch.float64))
        base, _ = match_point(ref, (1, 2), query)
        scaled, _ = match_point(_map(ref.grid * 0.5), (1, 2), _map(query.grid * 3.0))
        torch.testing.assert_close(base.mass, scaled.mass)

    def test_lower_temperature_concentrates(self):
        ref = _map(torch.randn(1, 6, 5, 5))
        query = _map(torch.randn(1, 6, 5, 5))
        sharp, _ = match_point(ref, (0, 0), query, tau=0.05)
        flat, _ = match_point(ref, (0, 0), query, tau=5.0)
        assert sharp.entropy() < flat.entropy()

    def test_zero_vectors_count_as_cosine_zero(self, caplog):
        query = torch.randn(1, 3, 2, 2)
        query[0, :, 1, 1] = 0.0
        with caplog.at_level(logging.WARNING, logger="landmark_forge"):
            cosines = cosine_map(_map(torch.randn(1, 3, 2, 2)), (0, 0), _map(query))
        assert float(cosines[1, 1]) == 0.0
        assert torch.isfinite(cosines).all()
        assert "zero-norm" in caplog.text

    def test_source_cell_out_of_bounds(self):
        with pytest.raises(ValueError):
            match_point(_map(torch.randn(1, 3, 4, 4)), (4, 0), _map(torch.randn(1, 3, 4, 4)))

    def test_channel_mismatch(self):
        with pytest.raises(EncoderError):
            match_point(_map(torch.randn(1, 3, 4, 4)), (0, 0), _map(torch.randn(1, 4, 4, 4)))


class TestLandmarkCells:
    def test_floor_and_clamp(self):
        assert landmark_cell((9.9, 4.0), 4, (24, 24)) == (1, 2)
        assert landmark_cell((100.0, -5.0), 4, (24, 24)) == (0, 23)

    def test_self_matching_landmarks_land_in_their_cells(self, small_faces, tiny_backbone):
        aug = AugmentationConfig(crop_size=32, resize_size=40)
        sample = prepare_eval_samples(small_faces[:1], aug)[0]
        torch.manual_seed(0)
        extractor = HypercolumnExtractor(Backbone(tiny_backbone), aug)
        predicted = match_landmarks(sample, sample, extractor)
        assert len(predicted) == 5
        offsets = np.abs(predicted.points - sample.landmarks.points)
        assert (offsets <= 2.0 + 1e-9).all()
