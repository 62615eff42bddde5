"""
Stage 1 Service - instance-level self-supervised training with an online
predictor regressing the momentum target's projection of another view.
Used by: stage1 command, tests
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader
from tqdm import tqdm

from landmark_forge.models.encoder import InstanceEncoder
from landmark_forge.schemas.dataset import AugmentationConfig
from landmark_forge.schemas.sample import ImageSample
from landmark_forge.schemas.stage1 import Stage1Config
from landmark_forge.services import encoder_service
from landmark_forge.services.augmentation_service import TwoViewDataset
from landmark_forge.services.errors import DatasetError, DegenerateEmbeddingError, NumericalError
from landmark_forge.utils.metrics_log import CsvMetricsLog
from landmark_forge.utils.schedules import cosine_lr, ema_momentum

logger = logging.getLogger(__name__)

METRIC_FIELDS = ("step", "epoch", "lr", "loss")


@dataclass
class Stage1Result:
    encoder: InstanceEncoder
    log: CsvMetricsLog
    checkpoint: Optional[Path] = None

    def epoch_means(self) -> List[float]:
        return epoch_means(self.log)


def byol_loss(z1_pred: torch.Tensor, z2_target: torch.Tensor, normalize: bool = True) -> torch.Tensor:
    """
    Per-sample squared distance between the normalized prediction and the
    (detached) target projection: 2 - 2 cos(z1_pred, z2_target).

    normalize=False gives the raw squared L2 distance.
    """
    if z1_pred.dim() == 1:
        z1_pred, z2_target = z1_pred[None], z2_target[None]
    z2_target = z2_target.detach()
    if not normalize:
        return ((z1_pred - z2_target) ** 2).sum(dim=-1)
    for name, z in (("prediction", z1_pred), ("target", z2_target)):
        zero = (z.detach().norm(dim=-1) == 0).nonzero()
        if len(zero) > 0:
            raise DegenerateEmbeddingError(f"zero-norm {name} embedding at batch index {int(zero[0])}")
    p = F.normalize(z1_pred, dim=-1)
    t = F.normalize(z2_target, dim=-1)
    return (2.0 - 2.0 * (p * t).sum(dim=-1)).clamp(0.0, 4.0)


def pair_loss(encoder: InstanceEncoder, query: torch.Tensor, key: torch.Tensor, cfg: Stage1Config) -> torch.Tensor:
    """Mean loss for one batch; both view orderings are summed when symmetric."""
    normalize = not cfg.unnormalized
    prediction = encoder_service.embed(encoder, query, "online", predict=True)
    target = encoder_service.embed(encoder, key, "target")
    loss = byol_loss(prediction, target, normalize).mean()
    if cfg.symmetric_loss:
        prediction = encoder_service.embed(encoder, key, "online", predict=True)
        target = encoder_service.embed(encoder, query, "target")
        loss = loss + byol_loss(prediction, target, normalize).mean()
    return loss


def epoch_means(log: CsvMetricsLog) -> List[float]:
    by_epoch = {}
    for row in log.rows:
        by_epoch.setdefault(row["epoch"], []).append(row["loss"])
    return [sum(v) / len(v) for _, v in sorted(by_epoch.items())]


def _loader(dataset: TwoViewDataset, cfg: Stage1Config, workers: int) -> DataLoader:
    batch_size = min(cfg.batch_size, len(dataset))
    # BatchNorm cannot normalize a trailing batch of one sample
    drop_last = len(dataset) % batch_size == 1
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=True,
        drop_last=drop_last,
        num_workers=workers,
        generator=torch.Generator().manual_seed(cfg.seed),
    )


def train_stage1(
    samples: Sequence[ImageSample],
    encoder: InstanceEncoder,
    cfg: Stage1Config,
    aug_cfg: AugmentationConfig,
    out_dir=None,
    workers: int = 0,
) -> Stage1Result:
    """
    Train the online branch; the target follows by EMA with a cosine momentum ramp.

    Resumes from encoder.step, so a reloaded checkpoint continues its LR schedule.
    Writes metrics.csv and checkpoints into out_dir when given.
    """
    if len(samples) < 2:
        raise DatasetError(f"stage 1 needs at least 2 samples, got {len(samples)}")
    out_dir = Path(out_dir) if out_dir is not None else None
    dataset = TwoViewDataset(list(samples), aug_cfg, seed=cfg.seed)
    loader = _loader(dataset, cfg, workers)
    steps_per_epoch = len(loader)
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch

    optimizer = torch.optim.SGD(
        list(encoder.online_parameters()), lr=cfg.base_lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    log = CsvMetricsLog(out_dir / "metrics.csv" if out_dir else None, METRIC_FIELDS)
    step = int(encoder.step)
    start_epoch = step // steps_per_epoch
    logger.info(
        "Stage 1: %d samples, %d steps/epoch, epochs %d..%d", len(samples), steps_per_epoch, start_epoch, cfg.epochs
    )

    encoder.train()
    for epoch in range(start_epoch, cfg.epochs):
        dataset.set_epoch(epoch)
        progress = tqdm(loader, desc=f"stage1 {epoch + 1}/{cfg.epochs}", leave=False)
        for query, key in progress:
            lr = cosine_lr(step, total_steps, warmup_steps, cfg.base_lr)
            for group in optimizer.param_groups:
                group["lr"] = lr
            loss = pair_loss(encoder, query, key, cfg)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite stage 1 loss at step {step} (lr={lr:.6g})")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            encoder_service.ema_update(encoder, ema_momentum(step, total_steps, cfg.ema_base))
            encoder.step += 1
            log.append(step=step, epoch=epoch, lr=lr, loss=float(loss))
            progress.set_postfix(loss=f"{float(loss):.4f}", lr=f"{lr:.4g}")
            step += 1
        log.flush()
        logger.info("Epoch %d mean loss %.4f", epoch, epoch_means(log)[-1] if log.rows else math.nan)
        if out_dir is not None and cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
            encoder_service.save_checkpoint(encoder, out_dir / f"encoder_epoch{epoch + 1:03d}.ckpt")

    checkpoint = None
    if out_dir is not None:
        checkpoint = encoder_service.save_checkpoint(encoder, out_dir / "encoder.ckpt")
    encoder.eval()
    return Stage1Result(encoder=encoder, log=log, checkpoint=checkpoint)
