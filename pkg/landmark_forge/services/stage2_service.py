"""
Stage 2 Service - distill hypercolumn similarity structure into a compact
dense feature map (FPN decoder + projection head over a frozen encoder).

The teacher is the frozen stage-1 backbone's hypercolumn at downscale 4;
student and teacher similarity distributions over the paired map are
matched with cross-entropy.
Used by: stage2 command, dense extractor, tests
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader
from tqdm import tqdm

from landmark_forge.models.encoder import InstanceEncoder
from landmark_forge.models.fpn import DenseModel
from landmark_forge.schemas.dataset import AugmentationConfig
from landmark_forge.schemas.encoder import BackboneConfig
from landmark_forge.schemas.features import FeatureMap, HypercolumnMap, SimilarityDistribution
from landmark_forge.schemas.sample import ImageSample
from landmark_forge.schemas.stage2 import Stage2Config
from landmark_forge.services import checkpoint_service, encoder_service
from landmark_forge.services.augmentation_service import TwoViewDataset
from landmark_forge.services.errors import CheckpointError, DatasetError, DegenerateEmbeddingError, NumericalError
from landmark_forge.services.hypercolumn_service import build_hypercolumn
from landmark_forge.utils.hashing import path_hash
from landmark_forge.utils.metrics_log import CsvMetricsLog
from landmark_forge.utils.schedules import cosine_lr

logger = logging.getLogger(__name__)

DENSE_KIND = "dense"
DENSE_DOWNSCALE = 4
METRIC_FIELDS = ("step", "epoch", "lr", "loss")

GridLike = Union[FeatureMap, torch.Tensor]


@dataclass
class Stage2Result:
    model: DenseModel
    log: CsvMetricsLog
    stage1_hash: str
    checkpoint: Optional[Path] = None


def _grid(value: GridLike) -> torch.Tensor:
    return value.grid if isinstance(value, FeatureMap) else value


def build_dense_model(
    encoder: Union[InstanceEncoder, BackboneConfig], cfg: Stage2Config, seed: Optional[int] = None
) -> DenseModel:
    """Dense model whose frozen backbone copies the stage-1 online backbone."""
    if seed is not None:
        torch.manual_seed(seed)
    if isinstance(encoder, InstanceEncoder):
        model = DenseModel(encoder.config, cfg)
        model.encoder.load_state_dict(encoder.online_backbone.state_dict())
    else:
        model = DenseModel(encoder, cfg)
    encoder_service.freeze(model.encoder)
    return model


def encoder_stages(model: DenseModel, images: torch.Tensor) -> List[FeatureMap]:
    with torch.no_grad():
        return encoder_service.forward_stages(model.encoder, images)


def teacher_hypercolumn(model: DenseModel, images: torch.Tensor, stages: Optional[List[FeatureMap]] = None) -> HypercolumnMap:
    """Hypercolumn of the frozen encoder at the dense output resolution."""
    stages = stages if stages is not None else encoder_stages(model, images)
    with torch.no_grad():
        return build_hypercolumn(stages, DENSE_DOWNSCALE)


def dense_forward(model: DenseModel, images: torch.Tensor, stages: Optional[List[FeatureMap]] = None) -> FeatureMap:
    """Decoder output at downscale 4; the projection head is not applied."""
    stages = stages if stages is not None else encoder_stages(model, images)
    grid = model.decoder([fm.grid for fm in stages])
    return FeatureMap(grid=grid, downscale=DENSE_DOWNSCALE, source_size=stages[0].source_size)


def project(model: DenseModel, features: FeatureMap) -> FeatureMap:
    if model.projector is None:
        return features
    return FeatureMap(grid=model.projector(features.grid), downscale=features.downscale, source_size=features.source_size)


def _normalize_positions(grid: torch.Tensor, normalize: bool, training: bool, name: str) -> torch.Tensor:
    if not normalize:
        return grid
    if training:
        norms = grid.detach().norm(dim=1)
        zero = (norms == 0).nonzero()
        if len(zero) > 0:
            _, row, col = (int(v) for v in zero[0])
            raise DegenerateEmbeddingError(f"zero-norm {name} feature at position ({row}, {col})")
    return F.normalize(grid, dim=1)


def similarity_logits(
    grid_i: torch.Tensor, grid_j: torch.Tensor, tau: float, normalize: bool = True, training: bool = False
) -> torch.Tensor:
    """(N, h_i*w_i, h_j*w_j) scaled dot products between every position pair."""
    if grid_i.shape[1] != grid_j.shape[1]:
        raise ValueError(f"channel mismatch: {grid_i.shape[1]} vs {grid_j.shape[1]}")
    a = _normalize_positions(grid_i, normalize, training, "source").flatten(2)
    b = _normalize_positions(grid_j, normalize, training, "target").flatten(2)
    return torch.einsum("ncp,ncq->npq", a, b) / tau


def similarity_distribution(
    F_i: GridLike,
    uv: Tuple[int, int],
    F_j: GridLike,
    tau: float,
    normalize: bool = True,
    training: bool = False,
) -> SimilarityDistribution:
    """Softmax over every (k, l) of F_j of <f_i[uv], f_j[k, l]> / tau (first batch item)."""
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    grid_i, grid_j = _grid(F_i)[:1], _grid(F_j)[:1]
    row, col = uv
    h, w = grid_j.shape[-2:]
    source = grid_i[:, :, row:row + 1, col:col + 1]
    logits = similarity_logits(source, grid_j, tau, normalize, training)[0, 0]
    mass = torch.softmax(logits, dim=0).reshape(h, w)
    return SimilarityDistribution(mass=mass, source_uv=(row, col), temperature=tau)


def distill_loss(
    student_i: GridLike,
    student_j: GridLike,
    teacher_i: GridLike,
    teacher_j: GridLike,
    cfg: Stage2Config,
) -> torch.Tensor:
    """
    Cross-entropy between teacher (teacher_tau, detached) and student (tau)
    similarity distributions from every source position of map i over map j.

    Averaged over source positions and batch; summed over positions when
    cfg.sum_reduction.
    """
    student_logits = similarity_logits(_grid(student_i), _grid(student_j), cfg.tau, cfg.normalize, training=True)
    with torch.no_grad():
        teacher_logits = similarity_logits(
            _grid(teacher_i).detach(), _grid(teacher_j).detach(), cfg.resolved_teacher_tau, cfg.normalize
        )
        p = torch.softmax(teacher_logits, dim=-1)
    cross_entropy = -(p * torch.log_softmax(student_logits, dim=-1)).sum(dim=-1)
    if not bool(torch.isfinite(cross_entropy).all()):
        w = _grid(student_i).shape[-1]
        batch, position = (int(v) for v in (~torch.isfinite(cross_entropy)).nonzero()[0])
        raise NumericalError(f"non-finite distillation loss at source position {divmod(position, w)} (batch item {batch})")
    if cfg.sum_reduction:
        return cross_entropy.sum(dim=1).mean()
    return cross_entropy.mean()


def teacher_entropy(teacher_i: GridLike, teacher_j: GridLike, cfg: Stage2Config) -> torch.Tensor:
    """Mean entropy of the teacher distributions; the floor of distill_loss."""
    logits = similarity_logits(_grid(teacher_i), _grid(teacher_j), cfg.resolved_teacher_tau, cfg.normalize)
    p = torch.softmax(logits, dim=-1)
    return -(p * torch.log_softmax(logits, dim=-1)).sum(dim=-1).mean()


def batch_loss(model: DenseModel, query: torch.Tensor, key: torch.Tensor, cfg: Stage2Config) -> torch.Tensor:
    if cfg.pairing_mode == "cross":
        key = key.roll(1, dims=0)
    stages_i = encoder_stages(model, query)
    stages_j = encoder_stages(model, key)
    student_i = project(model, dense_forward(model, query, stages_i))
    student_j = project(model, dense_forward(model, key, stages_j))
    teacher_i = teacher_hypercolumn(model, query, stages_i)
    teacher_j = teacher_hypercolumn(model, key, stages_j)
    return distill_loss(student_i, student_j, teacher_i, teacher_j, cfg)


def train_stage2(
    samples: Sequence[ImageSample],
    stage1: Union[str, Path, InstanceEncoder],
    cfg: Stage2Config,
    aug_cfg: AugmentationConfig,
    out_dir=None,
    workers: int = 0,
) -> Stage2Result:
    """
    Train decoder and projector against the frozen stage-1 hypercolumn teacher.

    `stage1` is a checkpoint path (its hash is recorded for provenance) or an
    in-memory encoder.
    """
    if len(samples) < 2:
        raise DatasetError(f"stage 2 needs at least 2 samples, got {len(samples)}")
    if isinstance(stage1, InstanceEncoder):
        encoder, stage1_hash = stage1, "memory"
    else:
        encoder, stage1_hash = encoder_service.load_checkpoint(stage1), path_hash(stage1)
    torch.manual_seed(cfg.seed)
    model = build_dense_model(encoder, cfg)
    out_dir = Path(out_dir) if out_dir is not None else None

    dataset = TwoViewDataset(list(samples), aug_cfg, seed=cfg.seed)
    batch_size = min(cfg.batch_size, len(dataset))
    loader = DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=True,
        drop_last=len(dataset) % batch_size == 1,
        num_workers=workers,
        generator=torch.Generator().manual_seed(cfg.seed),
    )
    steps_per_epoch = len(loader)
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.warmup_epochs * steps_per_epoch
    optimizer = torch.optim.SGD(
        list(model.trainable_parameters()), lr=cfg.base_lr, momentum=cfg.momentum, weight_decay=cfg.weight_decay
    )
    log = CsvMetricsLog(out_dir / "metrics.csv" if out_dir else None, METRIC_FIELDS)
    logger.info("Stage 2: %d samples, %d steps/epoch, %d epochs, tau %.3g", len(samples), steps_per_epoch, cfg.epochs, cfg.tau)

    model.train()
    step = 0
    for epoch in range(cfg.epochs):
        dataset.set_epoch(epoch)
        progress = tqdm(loader, desc=f"stage2 {epoch + 1}/{cfg.epochs}", leave=False)
        for query, key in progress:
            lr = cosine_lr(step, total_steps, warmup_steps, cfg.base_lr)
            for group in optimizer.param_groups:
                group["lr"] = lr
            loss = batch_loss(model, query, key, cfg)
            if not torch.isfinite(loss):
                raise NumericalError(f"non-finite stage 2 loss at step {step} (lr={lr:.6g})")
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            log.append(step=step, epoch=epoch, lr=lr, loss=float(loss))
            progress.set_postfix(loss=f"{float(loss):.4f}", lr=f"{lr:.4g}")
            step += 1
        log.flush()
        epoch_losses = [row["loss"] for row in log.rows if row["epoch"] == epoch]
        logger.info("Epoch %d mean loss %.4f", epoch, float(np.mean(epoch_losses)))
        if out_dir is not None and cfg.checkpoint_every > 0 and (epoch + 1) % cfg.checkpoint_every == 0:
            save_dense(model, out_dir / f"dense_epoch{epoch + 1:03d}.ckpt", stage1_hash, step)

    model.eval()
    checkpoint = save_dense(model, out_dir / "dense.ckpt", stage1_hash, step) if out_dir is not None else None
    return Stage2Result(model=model, log=log, stage1_hash=stage1_hash, checkpoint=checkpoint)


def save_dense(model: DenseModel, path, stage1_hash: str = "memory", step: int = 0) -> Path:
    config = dict(backbone=model.backbone_config.model_dump(), stage2=model.config.model_dump())
    return checkpoint_service.write_container(
        path, DENSE_KIND, config, model.state_dict(), step=step, extra=dict(stage1_hash=stage1_hash)
    )


def load_dense(path) -> DenseModel:
    header, tensors = checkpoint_service.read_container(path)
    if header["kind"] != DENSE_KIND:
        raise CheckpointError(f"{path}: expected a {DENSE_KIND} checkpoint, found {header['kind']}")
    model = DenseModel(BackboneConfig(**header["config"]["backbone"]), Stage2Config(**header["config"]["stage2"]))
    checkpoint_service.load_into(model, tensors, path)
    model.eval()
    logger.info("Loaded dense checkpoint %s (stage 1 %s)", path, header["extra"].get("stage1_hash", "?")[:12])
    return model


def held_out_views(samples: Sequence[ImageSample], aug_cfg: AugmentationConfig, seed: int) -> Tuple[torch.Tensor, torch.Tensor]:
    """Fixed normalized (query, key) view batches for monitoring."""
    dataset = TwoViewDataset(list(samples), aug_cfg, seed=seed)
    pairs = [dataset[i] for i in range(len(dataset))]
    return torch.stack([q for q, _ in pairs]), torch.stack([k for _, k in pairs])


@torch.no_grad()
def distribution_kl(model: DenseModel, query: torch.Tensor, key: torch.Tensor, cfg: Stage2Config) -> float:
    """Mean KL(teacher || student) over every source position of the view pairs."""
    was_training = model.training
    model.eval()
    stages_i, stages_j = encoder_stages(model, query), encoder_stages(model, key)
    student_i = project(model, dense_forward(model, query, stages_i)).grid
    student_j = project(model, dense_forward(model, key, stages_j)).grid
    teacher = similarity_logits(
        teacher_hypercolumn(model, query, stages_i).grid,
        teacher_hypercolumn(model, key, stages_j).grid,
        cfg.resolved_teacher_tau,
        cfg.normalize,
    )
    student = similarity_logits(student_i, student_j, cfg.tau, cfg.normalize)
    log_p = torch.log_softmax(teacher, dim=-1)
    kl = (log_p.exp() * (log_p - torch.log_softmax(student, dim=-1))).sum(dim=-1)
    model.train(was_training)
    return float(kl.mean())


@torch.no_grad()
def correspondence_agreement(model: DenseModel, query: torch.Tensor, key: torch.Tensor, tolerance: int = 1) -> float:
    """
    Fraction of source positions whose student argmax match in the key map
    lies within `tolerance` cells (Chebyshev) of the teacher argmax match.
    """
    was_training = model.training
    model.eval()
    stages_i, stages_j = encoder_stages(model, query), encoder_stages(model, key)
    student = similarity_logits(dense_forward(model, query, stages_i).grid, dense_forward(model, key, stages_j).grid, 1.0)
    teacher = similarity_logits(
        teacher_hypercolumn(model, query, stages_i).grid, teacher_hypercolumn(model, key, stages_j).grid, 1.0
    )
    w = stages_j[0].grid.shape[-1]
    s_idx, t_idx = student.argmax(dim=-1), teacher.argmax(dim=-1)
    rows = (s_idx // w - t_idx // w).abs()
    cols = (s_idx % w - t_idx % w).abs()
    model.train(was_training)
    return float(((rows <= tolerance) & (cols <= tolerance)).float().mean())
