from typing import Literal

from pydantic import BaseModel, ConfigDict, Field


class RegressorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_virtual: int = 50                     # M virtual keypoint heatmaps
    beta: float = Field(default=10.0, gt=0)
    wiring: Literal["virtual", "direct"] = "virtual"
    optimizer: Literal["sgd", "adam"] = "sgd"
    lr: float = Field(default=0.05, gt=0)
    momentum: float = 0.9
    weight_decay: float = 0.0
    iterations: int = 600
    batch_size: int = 32                    # larger than the subset -> full batch
    eval_every: int = 50
    patience: int = 4
    seed: int = 0
