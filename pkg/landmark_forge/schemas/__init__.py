from landmark_forge.schemas.sample import LandmarkSet, ImageSample, ViewPair
from landmark_forge.schemas.dataset import AugmentationConfig, DatasetConfig
from landmark_forge.schemas.encoder import BackboneConfig
from landmark_forge.schemas.stage1 import Stage1Config
from landmark_forge.schemas.stage2 import Stage2Config
from landmark_forge.schemas.regressor import RegressorConfig
from landmark_forge.schemas.evaluation import EvalConfig, MatchingReport, ScaleSweepConfig
from landmark_forge.schemas.run import RunConfig
