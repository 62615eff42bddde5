import csv
import math

import numpy as np
import pytest
import torch

from landmark_forge.schemas.encoder import BackboneConfig
from landmark_forge.schemas.stage1 import Stage1Config
from landmark_forge.services import encoder_service
from landmark_forge.services.errors import DegenerateEmbeddingError
from landmark_forge.services.stage1_service import byol_loss, pair_loss, train_stage1
from landmark_forge.services.synthetic_service import generate_synthetic_dataset
from landmark_forge.utils.schedules import cosine_lr, ema_momentum


class TestRegressionLoss:
    def test_identical_directions(self):
        z = torch.tensor([[3.0, 4.0]])
        torch.testing.assert_close(byol_loss(z, 2 * z), torch.tensor([0.0]))

    def test_antipodal_directions(self):
        z = torch.tensor([[1.0, 2.0]])
        torch.testing.assert_close(byol_loss(z, -z), torch.tensor([4.0]))

    def test_forty_five_degrees(self):
        loss = byol_loss(torch.tensor([[1.0, 0.0]]), torch.tensor([[1.0, 1.0]]) / math.sqrt(2))
        torch.testing.assert_close(loss, torch.tensor([2.0 - math.sqrt(2.0)]))

    def test_bounded_for_random_inputs(self):
        loss = byol_loss(torch.randn(500, 8), torch.randn(500, 8))
        assert bool((loss >= 0).all()) and bool((loss <= 4).all())

    def test_zero_norm_prediction(self):
        with pytest.raises(DegenerateEmbeddingError, match="batch index 1"):
            byol_loss(torch.tensor([[1.0, 0.0], [0.0, 0.0]]), torch.ones(2, 2))

    def test_unnormalized_is_squared_distance(self):
        loss = byol_loss(torch.tensor([[1.0, 2.0]]), torch.tensor([[4.0, 6.0]]), normalize=False)
        torch.testing.assert_close(loss, torch.tensor([25.0]))

    def test_target_receives_no_gradient(self):
        prediction = torch.randn(3, 4, requires_grad=True)
        target = torch.randn(3, 4, requires_grad=True)
        byol_loss(prediction, target).sum().backward()
        assert target.grad is None
        assert prediction.grad is not None

    def test_gradient_matches_finite_differences(self):
        gen = torch.Generator().manual_seed(0)
        x1 = torch.randn(3, 5, dtype=torch.float64, generator=gen)
        x2 = torch.randn(3, 5, dtype=torch.float64, generator=gen)
        w1 = torch.randn(5, 6, dtype=torch.float64, generator=gen, requires_grad=True)
        w2 = torch.randn(6, 4, dtype=torch.float64, generator=gen, requires_grad=True)

        def loss(a, b):
            return byol_loss(torch.tanh(x1 @ a) @ b, torch.tanh(x2 @ a) @ b).sum()

        assert torch.autograd.gradcheck(loss, (w1, w2), eps=1e-6, atol=1e-8, rtol=1e-4)


class TestPairLoss:
    def test_symmetric_loss_doubles_equal_views(self, tiny_backbone):
        encoder = encoder_service.build_encoder(tiny_backbone, seed=0).eval()
        images = torch.randn(4, 3, 32, 32)
        cfg = Stage1Config(epochs=2, warmup_epochs=1)
        single = pair_loss(encoder, images, images, cfg.model_copy(update=dict(symmetric_loss=False)))
        both = pair_loss(encoder, images, images, cfg)
        torch.testing.assert_close(both, 2 * single)


class TestSchedules:
    def test_warmup_starts_at_a_fraction_of_base(self):
        assert cosine_lr(0, 100, 10, 0.3) == pytest.approx(0.03)
        assert cosine_lr(9, 100, 10, 0.3) == pytest.approx(0.3)

    def test_cosine_decays_to_zero(self):
        assert cosine_lr(100, 100, 10, 0.3) == pytest.approx(0.0, abs=1e-12)
        values = [cosine_lr(s, 100, 10, 0.3) for s in range(10, 100)]
        assert all(a >= b for a, b in zip(values, values[1:]))

    def test_momentum_ramps_to_one(self):
        assert ema_momentum(0, 50, 0.99) == pytest.approx(0.99)
        assert ema_momentum(50, 50, 0.99) == pytest.approx(1.0)
        values = [ema_momentum(s, 50, 0.99) for s in range(51)]
        assert all(a <= b for a, b in zip(values, values[1:]))


class TestTraining:
    def test_one_epoch_logs_every_step(self, small_faces, tiny_backbone, tiny_aug, tmp_path):
        encoder = encoder_service.build_encoder(tiny_backbone, seed=0)
        cfg = Stage1Config(epochs=1, warmup_epochs=0, batch_size=4, checkpoint_every=1)
        result = train_stage1(small_faces, encoder, cfg, tiny_aug, tmp_path)
        assert len(result.log.rows) == 3
        assert all(np.isfinite(row["loss"]) for row in result.log.rows)
        assert int(result.encoder.step) == 3
        with open(tmp_path / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 3 and list(rows[0]) == ["step", "epoch", "lr", "loss"]
        assert (tmp_path / "encoder.ckpt").exists()
        assert (tmp_path / "encoder_epoch001.ckpt").exists()

    def test_first_step_uses_warmup_fraction(self, small_faces, tiny_backbone, tiny_aug):
        encoder = encoder_service.build_encoder(tiny_backbone, seed=0)
        cfg = Stage1Config(epochs=2, warmup_epochs=1, batch_size=4, base_lr=0.06)
        result = train_stage1(small_faces, encoder, cfg, tiny_aug)
        assert result.log.rows[0]["lr"] == pytest.approx(0.06 / 3)

    def test_resume_continues_the_schedule(self, small_faces, tiny_backbone, tiny_aug, tmp_path):
        cfg = Stage1Config(epochs=3, warmup_epochs=1, batch_size=4)
        encoder = encoder_service.build_encoder(tiny_backbone, seed=0)
        encoder.step += 6
        path = encoder_service.save_checkpoint(encoder, tmp_path / "encoder.ckpt")
        result = train_stage1(small_faces, encoder_service.load_checkpoint(path), cfg, tiny_aug)
        steps = [row["step"] for row in result.log.rows]
        assert steps == [6, 7, 8]
        assert [row["epoch"] for row in result.log.rows] == [2, 2, 2]
        assert result.log.rows[0]["lr"] == pytest.approx(cosine_lr(6, 9, 3, cfg.base_lr))

    def test_target_follows_online(self, small_faces, tiny_backbone, tiny_aug):
        encoder = encoder_service.build_encoder(tiny_backbone, seed=0)
        before = [p.clone() for p in encoder.target_parameters()]
        train_stage1(small_faces, encoder, Stage1Config(epochs=1, warmup_epochs=0, batch_size=4), tiny_aug)
        assert any(not torch.equal(a, b) for a, b in zip(before, encoder.target_parameters()))


@pytest.mark.slow
class TestTrainingTrend:
    def test_loss_drops_over_twenty_epochs(self, tiny_aug):
        samples = generate_synthetic_dataset(200, 50, canvas=64, seed=0)
        encoder = encoder_service.build_encoder(BackboneConfig(input_size=32), seed=0)
        result = train_stage1(samples, encoder, Stage1Config(epochs=20, batch_size=32), tiny_aug)
        means = result.epoch_means()
        assert means[-1] <= 0.7 * means[0]
