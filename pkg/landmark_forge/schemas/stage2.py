from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Stage2Config(BaseModel):
    model_config = ConfigDict(extra="forbid")

    tau: float = Field(default=0.05, gt=0)
    teacher_tau: Optional[float] = Field(default=None, gt=0)   # None -> same as tau
    epochs: int = 20
    batch_size: int = 16
    base_lr: float = Field(default=3e-2, gt=0)
    warmup_epochs: int = 2
    momentum: float = 0.9
    weight_decay: float = 1e-4
    pairing_mode: Literal["views", "cross"] = "views"
    output_dim: int = 64
    fpn_channels: int = 64
    projector_dim: Optional[int] = 64       # None -> no projection head
    projector_hidden: int = 256
    normalize: bool = True
    sum_reduction: bool = False
    checkpoint_every: int = 5
    seed: int = 0

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.warmup_epochs >= self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must be < epochs ({self.epochs})")
        return self

    @property
    def resolved_teacher_tau(self) -> float:
        return self.tau if self.teacher_tau is None else self.teacher_tau

    @classmethod
    def preset(cls, name: str, **overrides) -> "Stage2Config":
        # "main" and "supplement" disagree on epochs; neither is canonical.
        presets = {
            "desk": dict(epochs=5, batch_size=16, warmup_epochs=1),
            "main": dict(epochs=20, batch_size=256),
            "supplement": dict(epochs=10, batch_size=256),
        }
        if name not in presets:
            raise ValueError(f"Unknown stage2 preset: {name}")
        values = presets[name]
        values.update(overrides)
        return cls(**values)
