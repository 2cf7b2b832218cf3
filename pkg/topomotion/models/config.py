"""
Run configuration models.

Field defaults are desk-scale unless noted; full-scale runs use
6 RVQ levels x 512 codes, batch 256, 100 epochs, 8-layer/4-head transformers.
"""
from __future__ import annotations

from pydantic import BaseModel, ConfigDict, Field, model_validator


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra='forbid', validate_assignment=True)


class RvqConfig(_StrictModel):
    levels: int = Field(default=6, ge=1)
    codes_per_level: int = Field(default=512, ge=1)
    code_dim: int = Field(default=32, ge=1)
    temporal_downsample: int = Field(default=2, ge=1)
    beta: float = Field(default=0.25, ge=0)
    encoder_channels: list[int] = Field(default_factory=lambda: [64, 64])
    joint_embed_dim: int = Field(default=32, ge=1)
    max_joints: int = Field(default=64, ge=1)
    ema_decay: float = Field(default=0.99, gt=0, lt=1)

    @model_validator(mode='after')
    def _check(self) -> RvqConfig:
        ds = self.temporal_downsample
        if ds & (ds - 1):
            raise ValueError(f"temporal_downsample must be a power of two, got {ds}")
        if not self.encoder_channels or min(self.encoder_channels) < 1:
            raise ValueError("encoder_channels must be a non-empty list of positive widths")
        return self


class SkelEmbedConfig(_StrictModel):
    layers: int = Field(default=4, ge=1)
    heads: int = Field(default=4, ge=1)
    model_dim: int = Field(default=64, ge=1)
    out_dim: int = Field(default=64, ge=1)
    max_distance_clip: int = Field(default=16, ge=1)
    ffn_mult: int = Field(default=4, ge=1)

    @model_validator(mode='after')
    def _check(self) -> SkelEmbedConfig:
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} must be divisible by heads {self.heads}")
        return self


class GenConfig(_StrictModel):
    """
    Generator settings.

    The number of residual levels V (RVQ levels - 1) and the [MASK] token id
    (codes per level) are derived from the RVQ model the generator is built on.
    """
    layers: int = Field(default=8, ge=1)
    heads: int = Field(default=4, ge=1)
    model_dim: int = Field(default=128, ge=1)
    ffn_mult: int = Field(default=4, ge=1)
    dropout: float = Field(default=0.1, ge=0, lt=1)
    text_dim: int = Field(default=64, ge=1)
    cond_dim: int = Field(default=128, ge=1)
    hash_buckets: int = Field(default=1024, ge=1)
    text_seed: int = 0
    max_tokens: int = Field(default=120, ge=1)
    cfg_dropout_p: float = Field(default=0.1, ge=0, le=1)
    cfg_scale: float = 3.0
    unmask_iters: int = Field(default=10, ge=1)
    temperature: float = Field(default=1.0, gt=0)
    use_skeleton_embed: bool = True
    use_motion_summary: bool = True

    @model_validator(mode='after')
    def _check(self) -> GenConfig:
        if self.model_dim % self.heads:
            raise ValueError(f"model_dim {self.model_dim} must be divisible by heads {self.heads}")
        return self


class MetricConfig(_StrictModel):
    embed_dim: int = Field(default=32, ge=1)
    pool_size: int = Field(default=32, ge=2)
    diversity_pairs: int = Field(default=300, ge=1)
    mm_prompts: int = Field(default=10, ge=1)
    mm_reps: int = Field(default=10, ge=2)
    shrinkage: bool = False
    embedder_epochs: int = Field(default=200, ge=1)
    seed: int = 0


class TrainConfig(_StrictModel):
    seed: int = 0
    batch_size: int = Field(default=16, ge=1)
    learning_rate: float = Field(default=1e-3, gt=0)
    weight_decay: float = Field(default=0.0, ge=0)
    rvq_epochs: int = Field(default=300, ge=1)
    gen_epochs: int = Field(default=300, ge=1)


class RunConfig(_StrictModel):
    rvq: RvqConfig = Field(default_factory=lambda: RvqConfig(codes_per_level=64))
    skelembed: SkelEmbedConfig = Field(default_factory=SkelEmbedConfig)
    generator: GenConfig = Field(default_factory=GenConfig)
    metrics: MetricConfig = Field(default_factory=MetricConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    corpus_path: str | None = None
    checkpoint_path: str | None = None
    out_dir: str = 'runs'
