from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


class ScaleSweepConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_zoom_range: Tuple[float, float] = (1.0, 1.5)
    eval_zoom_grid: List[float] = [1.0, 1.25, 1.5, 1.75, 2.0]
    seed: int = 0

    @model_validator(mode="after")
    def _check_ranges(self):
        low, high = self.train_zoom_range
        if not 1.0 <= low <= high <= 2.0:
            raise ValueError(f"train_zoom_range must lie within [1, 2], got {self.train_zoom_range}")
        for factor in self.eval_zoom_grid:
            if not 1.0 <= factor <= 2.0:
                raise ValueError(f"eval zoom factor {factor} outside [1, 2]")
        return self


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    protocol: Literal["matching", "regression", "fewshot", "scale", "nmf", "pck"] = "matching"
    extractor: Literal["dense", "hypercolumn"] = "dense"
    fewshot_counts: List[int] = [1, 5, 10, 20, 50, 100]
    seeds: List[int] = [0, 1, 2]
    n_annotations: Optional[int] = None     # None -> all annotated training samples
    pck_threshold: float = Field(default=0.05, gt=0)
    nmf_rank: int = 8
    nmf_max_iter: int = 500
    nmf_tol: float = 1e-5
    nmf_images: int = 16
    match_tau: float = Field(default=1.0, gt=0)
    overlay_pairs: int = 4
    scale: ScaleSweepConfig = ScaleSweepConfig()


class PairRecord(BaseModel):
    ref: str
    query: str
    same_identity: bool
    error: float


class MatchingReport(BaseModel):
    same_identity_err: float
    diff_identity_err: float
    n_same: int
    n_diff: int
    records: List[PairRecord] = []


class FewShotRow(BaseModel):
    count: int
    mean_iod: float
    std_iod: float
    n_seeds: int
    single_seed: bool = False


class ScaleRow(BaseModel):
    zoom: float
    iod: float


class ProtocolSummary(BaseModel):
    protocol: str
    checkpoint_hash: str
    metric: str
    value: float
