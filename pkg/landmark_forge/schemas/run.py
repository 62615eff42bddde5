from pydantic import BaseModel, ConfigDict

from landmark_forge.schemas.dataset import AugmentationConfig, DatasetConfig
from landmark_forge.schemas.encoder import BackboneConfig
from landmark_forge.schemas.evaluation import EvalConfig
from landmark_forge.schemas.regressor import RegressorConfig
from landmark_forge.schemas.stage1 import Stage1Config
from landmark_forge.schemas.stage2 import Stage2Config


class RunConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    run_name: str = "default"
    seed: int = 0
    workers: int = 0
    dataset: DatasetConfig = DatasetConfig()
    augmentation: AugmentationConfig = AugmentationConfig()
    backbone: BackboneConfig = BackboneConfig()
    stage1: Stage1Config = Stage1Config()
    stage2: Stage2Config = Stage2Config()
    regressor: RegressorConfig = RegressorConfig()
    eval: EvalConfig = EvalConfig()
