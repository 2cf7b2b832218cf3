from __future__ import annotations

from pydantic import BaseModel, Field, model_validator


class EpochLoss(BaseModel):
    """One row of a training loss history."""
    epoch: int = Field(ge=0)
    loss: float
    reconstruction: float | None = None
    commitment: float | None = None
    masked: float | None = None
    residual: float | None = None
    null_fraction: float | None = None
    dead_codes_reset: int | None = None


class MetricReport(BaseModel):
    fid: float = Field(ge=0)
    diversity: float = Field(ge=0)
    matching_score: float = Field(ge=0)
    multimodality: float = Field(ge=0)
    r_at: dict[int, float]

    # Reference points and held-out token accuracy
    fid_real_vs_real: float | None = None
    fid_random_vs_real: float | None = None
    masked_token_accuracy: float | None = None

    # Echoed settings
    pool_size: int
    seed: int
    num_real: int
    num_generated: int
    shrinkage: bool
    use_skeleton_embed: bool = True
    use_motion_summary: bool = True
    cfg_scale: float

    @model_validator(mode='after')
    def _check_r_at(self) -> MetricReport:
        if set(self.r_at) != {1, 2, 3}:
            raise ValueError(f"r_at must have keys 1, 2, 3, got {sorted(self.r_at)}")
        values = [self.r_at[k] for k in (1, 2, 3)]
        if any(not 0.0 <= v <= 1.0 for v in values):
            raise ValueError(f"r_at values must lie in [0, 1], got {values}")
        if not values[0] <= values[1] <= values[2]:
            raise ValueError(f"r_at must be non-decreasing in k, got {values}")
        return self


class AblationReport(BaseModel):
    """Paired held-out masked-token accuracy with and without the skeleton embedding."""
    seeds: list[int]
    full: list[float]
    ablated: list[float]
    mean_difference: float
    t_statistic: float | None
    p_value: float | None
    significant: bool


class RejectedFile(BaseModel):
    path: str
    reason: str


class IngestReport(BaseModel):
    accepted: list[str] = Field(default_factory=list)
    resampled: list[str] = Field(default_factory=list)
    rejected: list[RejectedFile] = Field(default_factory=list)
