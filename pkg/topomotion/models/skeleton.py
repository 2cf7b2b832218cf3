from __future__ import annotations

import math
from enum import IntEnum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

POSITION_CHANNELS = ('Xposition', 'Yposition', 'Zposition')
ROTATION_CHANNELS = ('Xrotation', 'Yrotation', 'Zrotation')
VALID_CHANNELS = frozenset(POSITION_CHANNELS + ROTATION_CHANNELS)


class Relation(IntEnum):
    """Role of column joint j relative to row joint i."""
    SELF = 0
    PARENT = 1
    CHILD = 2
    SIBLING = 3
    OTHER = 4


class Joint(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str = Field(min_length=1)
    parent: int | None  # None marks the root
    offset: tuple[float, float, float]
    channels: tuple[str, ...] = ()  # empty for End Site leaves

    @model_validator(mode='after')
    def _check(self) -> Joint:
        if not all(math.isfinite(v) for v in self.offset):
            raise ValueError(f"Joint {self.name!r} has a non-finite offset {self.offset}")
        unknown = set(self.channels) - VALID_CHANNELS
        if unknown:
            raise ValueError(f"Joint {self.name!r} declares unknown channels {sorted(unknown)}")
        if len(self.channels) not in (0, 3, 6):
            raise ValueError(f"Joint {self.name!r} must declare 0, 3 or 6 channels, got {len(self.channels)}")
        return self

    @property
    def rotation_order(self) -> str:
        """Axis letters of the rotation channels in declared order, e.g. 'ZXY'."""
        return ''.join(c[0] for c in self.channels if c in ROTATION_CHANNELS)


class SkeletonGraph(BaseModel):
    """
    A rooted joint tree in topological order.

    Joint 0 is the root; every other joint's parent index is smaller than its own.
    """
    model_config = ConfigDict(frozen=True)

    name: str = 'skeleton'
    species: str = ''
    joints: tuple[Joint, ...] = Field(min_length=1)

    @model_validator(mode='after')
    def _check_tree(self) -> SkeletonGraph:
        roots = [i for i, j in enumerate(self.joints) if j.parent is None]
        if roots != [0]:
            raise ValueError(f"Exactly one root at index 0 is required, found roots at {roots}")
        for i, joint in enumerate(self.joints[1:], start=1):
            if joint.parent is None or not 0 <= joint.parent < i:
                raise ValueError(f"Joint {i} ({joint.name!r}) has parent {joint.parent}, which must precede it")
        names = [j.name for j in self.joints]
        if len(set(names)) != len(names):
            raise ValueError("Joint names must be unique")
        return self

    @property
    def num_joints(self) -> int:
        return len(self.joints)

    @property
    def parents(self) -> list[int]:
        """Parent indices with -1 for the root."""
        return [-1 if j.parent is None else j.parent for j in self.joints]

    @property
    def offsets(self) -> np.ndarray:
        return np.array([j.offset for j in self.joints], dtype=np.float64).reshape(-1, 3)

    @property
    def children(self) -> list[list[int]]:
        result: list[list[int]] = [[] for _ in self.joints]
        for i, p in enumerate(self.parents):
            if p >= 0:
                result[p].append(i)
        return result

    @property
    def depths(self) -> list[int]:
        depth = [0] * self.num_joints
        for i, p in enumerate(self.parents):
            if p >= 0:
                depth[i] = depth[p] + 1
        return depth

    @property
    def leaves(self) -> list[int]:
        return [i for i, c in enumerate(self.children) if not c]

    @property
    def edges(self) -> frozenset[tuple[int, int]]:
        """(parent, child) bone pairs."""
        return frozenset((p, i) for i, p in enumerate(self.parents) if p >= 0)

    def index_of(self, name: str) -> int:
        for i, joint in enumerate(self.joints):
            if joint.name == name:
                return i
        raise KeyError(name)
