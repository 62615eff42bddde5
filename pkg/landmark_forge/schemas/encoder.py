from typing import List, Literal

from pydantic import BaseModel, ConfigDict, field_validator, model_validator


STAGE_DOWNSCALES = [4, 8, 16, 32]


class BackboneConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    stage_channels: List[int] = [16, 32, 64, 128]
    stage_downscales: List[int] = STAGE_DOWNSCALES
    blocks_per_stage: List[int] = [1, 1, 1, 1]
    stem_channels: int = 16
    input_size: int = 96
    block_type: Literal["basic", "bottleneck"] = "basic"
    embedding_dim: int = 32
    hidden_multiplier: int = 4

    @field_validator("stage_downscales")
    @classmethod
    def _fixed_downscales(cls, value):
        if list(value) != STAGE_DOWNSCALES:
            raise ValueError(f"stage_downscales is fixed to {STAGE_DOWNSCALES}")
        return value

    @model_validator(mode="after")
    def _check_stages(self):
        if len(self.stage_channels) != 4 or len(self.blocks_per_stage) != 4:
            raise ValueError("backbone needs exactly four stages")
        if self.input_size // self.stage_downscales[-1] < 1:
            raise ValueError(f"input_size {self.input_size} too small for downscale {self.stage_downscales[-1]}")
        return self

    @property
    def hypercolumn_channels(self) -> int:
        return sum(self.stage_channels)

    @classmethod
    def preset(cls, name: str, **overrides) -> "BackboneConfig":
        presets = {
            "desk": dict(),
            "resnet50": dict(
                stage_channels=[256, 512, 1024, 2048],
                blocks_per_stage=[3, 4, 6, 3],
                stem_channels=64,
                block_type="bottleneck",
                embedding_dim=256,
                hidden_multiplier=16,
            ),
        }
        if name not in presets:
            raise ValueError(f"Unknown backbone preset: {name}")
        values = presets[name]
        values.update(overrides)
        return cls(**values)
