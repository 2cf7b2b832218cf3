from __future__ import annotations

from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator


class TokenSequences(BaseModel):
    """
    Discrete motion tokens, one row per residual level.

    Row 0 holds the base tokens; all levels share the sequence length n.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    indices: np.ndarray  # (levels, n) int64
    codes_per_level: int = Field(ge=1)

    @field_validator('indices', mode='before')
    @classmethod
    def _coerce(cls, value: Any) -> np.ndarray:
        indices = np.array(value, dtype=np.int64)
        if indices.ndim != 2 or indices.shape[0] < 1 or indices.shape[1] < 1:
            raise ValueError(f"indices must have shape (levels, n) with both extents positive, got {indices.shape}")
        return indices

    @model_validator(mode='after')
    def _check_range(self) -> TokenSequences:
        if self.indices.min() < 0 or self.indices.max() >= self.codes_per_level:
            raise ValueError(f"token indices must lie in [0, {self.codes_per_level})")
        return self

    @field_serializer('indices')
    def _serialize(self, indices: np.ndarray) -> list:
        return indices.tolist()

    @property
    def levels(self) -> int:
        return self.indices.shape[0]

    @property
    def length(self) -> int:
        return self.indices.shape[1]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, TokenSequences):
            return NotImplemented
        return self.codes_per_level == other.codes_per_level and bool(np.array_equal(self.indices, other.indices))

    def __hash__(self) -> int:
        return hash((self.codes_per_level, self.indices.shape, self.indices.tobytes()))
