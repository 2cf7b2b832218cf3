from __future__ import annotations

from enum import Enum
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator

from topomotion.models.skeleton import SkeletonGraph

# Per-joint feature layout
POS = slice(0, 3)
ROT = slice(3, 9)
VEL = slice(9, 12)
FEATURE_DIM = 12


class MotionSequence(BaseModel):
    """
    Per-joint motion features, shape (T, K, 12).

    Layout per joint: root-relative position (the root slot holds the root's own
    position), 6D local rotation (first two matrix columns), per-frame velocity.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    frames: np.ndarray
    fps: float = Field(default=20.0, gt=0)
    species_tag: str = ''

    @field_validator('frames', mode='before')
    @classmethod
    def _coerce_frames(cls, value: Any) -> np.ndarray:
        frames = np.array(value, dtype=np.float64)
        if frames.ndim != 3 or frames.shape[2] != FEATURE_DIM:
            raise ValueError(f"frames must have shape (T, K, {FEATURE_DIM}), got {frames.shape}")
        if frames.shape[0] < 1 or frames.shape[1] < 1:
            raise ValueError(f"frames must have at least one frame and one joint, got {frames.shape}")
        if not np.isfinite(frames).all():
            raise ValueError("frames contain non-finite values")
        return frames

    @field_serializer('frames')
    def _serialize_frames(self, frames: np.ndarray) -> list:
        return frames.tolist()

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def num_joints(self) -> int:
        return self.frames.shape[1]

    @property
    def positions(self) -> np.ndarray:
        return self.frames[..., POS]

    @property
    def rotations(self) -> np.ndarray:
        return self.frames[..., ROT]

    @property
    def velocities(self) -> np.ndarray:
        return self.frames[..., VEL]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, MotionSequence):
            return NotImplemented
        return (
            self.fps == other.fps
            and self.species_tag == other.species_tag
            and self.frames.shape == other.frames.shape
            and bool(np.array_equal(self.frames, other.frames))
        )

    def __hash__(self) -> int:
        return hash((self.frames.shape, self.fps, self.species_tag, self.frames.tobytes()))


class TextRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    summary: str = Field(min_length=1)
    detail: str = ''
    motion_class: str = ''
    species_tag: str = ''

    def prompt(self, use_summary: bool = True) -> str:
        """Conditioning text: summary plus detail, or detail alone."""
        if not use_summary:
            return self.detail or self.summary
        return f"{self.summary}. {self.detail}" if self.detail else self.summary


class Split(str, Enum):
    TRAIN = 'train'
    TEST = 'test'


class CorpusEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    skeleton: str  # key into Corpus.skeletons
    motion: MotionSequence
    text: TextRecord
    split: Split = Split.TRAIN


class SpeciesStats(BaseModel):
    species: str
    sequences: int
    frames: int
    avg_joints: float


class Corpus(BaseModel):
    model_config = ConfigDict(frozen=True)

    skeletons: dict[str, SkeletonGraph]
    entries: list[CorpusEntry]

    def skeleton_for(self, entry: CorpusEntry) -> SkeletonGraph:
        return self.skeletons[entry.skeleton]

    def by_split(self, split: Split) -> list[CorpusEntry]:
        return [e for e in self.entries if e.split == split]

    def train_entries(self) -> list[CorpusEntry]:
        return self.by_split(Split.TRAIN)

    def test_entries(self) -> list[CorpusEntry]:
        return self.by_split(Split.TEST)

    def stats(self) -> list[SpeciesStats]:
        """Per-species sequence, frame and joint counts in first-seen order."""
        grouped: dict[str, list[CorpusEntry]] = {}
        for entry in self.entries:
            grouped.setdefault(entry.text.species_tag or entry.motion.species_tag, []).append(entry)
        return [
            SpeciesStats(
                species=species,
                sequences=len(items),
                frames=sum(e.motion.num_frames for e in items),
                avg_joints=sum(e.motion.num_joints for e in items) / len(items),
            )
            for species, items in grouped.items()
        ]
