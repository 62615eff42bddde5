from pydantic import BaseModel, ConfigDict, Field, model_validator


class Stage1Config(BaseModel):
    model_config = ConfigDict(extra="forbid")

    epochs: int = 20
    batch_size: int = 32
    base_lr: float = Field(default=3e-2, gt=0)
    warmup_epochs: int = 2
    momentum: float = 0.9                   # optimizer momentum
    weight_decay: float = 1e-4
    ema_base: float = Field(default=0.99, ge=0.0, le=1.0)
    symmetric_loss: bool = True
    unnormalized: bool = False              # literal squared L2 without normalization
    checkpoint_every: int = 5
    seed: int = 0

    @model_validator(mode="after")
    def _check_schedule(self):
        if self.warmup_epochs >= self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must be < epochs ({self.epochs})")
        return self

    @classmethod
    def preset(cls, name: str, **overrides) -> "Stage1Config":
        presets = {
            "desk": dict(epochs=20, batch_size=32),
            "full": dict(epochs=200, batch_size=256),
        }
        if name not in presets:
            raise ValueError(f"Unknown stage1 preset: {name}")
        values = presets[name]
        values.update(overrides)
        return cls(**values)
