"""
BVH reading and writing.

Supported subset: HIERARCHY with ROOT/JOINT/End Site, OFFSET, CHANNELS (0, 3
or 6), and a MOTION section with Frames / Frame Time. Rotation channel order is
honored per joint; End Site blocks become channel-less leaf joints.
"""
from __future__ import annotations

from typing import Any

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic import ValidationError as PydanticValidationError

from topomotion.exceptions import DimensionError, ParseError
from topomotion.models.motion import MotionSequence
from topomotion.models.skeleton import POSITION_CHANNELS, ROTATION_CHANNELS, Joint, SkeletonGraph
from topomotion.motion.features import forward_kinematics, local_rotations, motion_from_local_rotations
from topomotion.motion.rotation import euler_to_matrix, matrix_to_euler
from topomotion.skeleton.graph import depth_first_order, end_site_name, reorder_joints

_INDENT = '\t'


class BvhClip(BaseModel):
    """Raw MOTION section: one row per frame, channels in hierarchy order."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    frame_time: float = Field(gt=0)
    values: np.ndarray

    @field_validator('values', mode='before')
    @classmethod
    def _coerce(cls, value: Any) -> np.ndarray:
        values = np.array(value, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"values must be (frames, channels), got {values.shape}")
        return values

    @property
    def num_frames(self) -> int:
        return self.values.shape[0]

    @property
    def fps(self) -> float:
        return 1.0 / self.frame_time


class _Tokens:
    """Whitespace tokens of the HIERARCHY section, each tagged with its line number."""

    def __init__(self, lines: list[str], end: int) -> None:
        self._items = [
            (token, number)
            for number, line in enumerate(lines[:end], start=1)
            for token in line.split()
        ]
        self._pos = 0
        self.last_line = max(end, 1)

    @property
    def line(self) -> int:
        if self._pos < len(self._items):
            return self._items[self._pos][1]
        return self.last_line

    def peek(self) -> str | None:
        return self._items[self._pos][0] if self._pos < len(self._items) else None

    def next(self, what: str) -> str:
        if self._pos >= len(self._items):
            raise ParseError(f"Unexpected end of HIERARCHY, expected {what}", self.last_line)
        token = self._items[self._pos][0]
        self._pos += 1
        return token

    def expect(self, literal: str) -> None:
        line = self.line
        token = self.next(repr(literal))
        if token != literal:
            raise ParseError(f"Expected {literal!r}, found {token!r}", line)

    def number(self, what: str) -> float:
        line = self.line
        token = self.next(what)
        try:
            return float(token)
        except ValueError:
            raise ParseError(f"Expected a number for {what}, found {token!r}", line) from None


class _HierarchyParser:
    def __init__(self, tokens: _Tokens) -> None:
        self.tokens = tokens
        self.names: list[str] = []
        self.parents: list[int | None] = []
        self.offsets: list[tuple[float, float, float]] = []
        self.channels: list[tuple[str, ...]] = []
        self._end_sites: dict[int, int] = {}

    def parse(self) -> None:
        self.tokens.expect('HIERARCHY')
        self.tokens.expect('ROOT')
        self._joint(parent=None)
        if self.tokens.peek() is not None:
            raise ParseError(f"Unexpected token {self.tokens.peek()!r} after the root joint", self.tokens.line)

    def _add(self, name: str, parent: int | None) -> int:
        if name in self.names:
            raise ParseError(f"Duplicate joint name {name!r}", self.tokens.line)
        self.names.append(name)
        self.parents.append(parent)
        self.offsets.append((0.0, 0.0, 0.0))
        self.channels.append(())
        return len(self.names) - 1

    def _offset(self, index: int) -> None:
        self.tokens.expect('OFFSET')
        self.offsets[index] = (
            self.tokens.number('OFFSET x'),
            self.tokens.number('OFFSET y'),
            self.tokens.number('OFFSET z'),
        )

    def _joint(self, parent: int | None) -> None:
        line = self.tokens.line
        name = self.tokens.next('joint name')
        if name == '{':
            raise ParseError("Joint is missing a name", line)
        index = self._add(name, parent)
        self.tokens.expect('{')
        self._offset(index)
        if self.tokens.peek() == 'CHANNELS':
            self._channels(index)
        while True:
            line = self.tokens.line
            token = self.tokens.next("'}'")
            if token == '}':
                return
            if token == 'JOINT':
                self._joint(parent=index)
            elif token == 'End':
                self.tokens.expect('Site')
                self._end_site(index)
            else:
                raise ParseError(f"Unexpected token {token!r} inside joint {name!r}", line)

    def _channels(self, index: int) -> None:
        self.tokens.expect('CHANNELS')
        line = self.tokens.line
        count_token = self.tokens.next('channel count')
        try:
            count = int(count_token)
        except ValueError:
            raise ParseError(f"Invalid channel count {count_token!r}", line) from None
        if count not in (0, 3, 6):
            raise ParseError(f"Joint {self.names[index]!r} declares {count} channels, expected 0, 3 or 6", line)
        names = []
        for _ in range(count):
            channel_line = self.tokens.line
            channel = self.tokens.next('channel name')
            if channel in ('{', '}', 'JOINT', 'End'):
                raise ParseError(
                    f"Joint {self.names[index]!r} declares {count} channels but lists {len(names)}", channel_line
                )
            names.append(channel)
        self.channels[index] = tuple(names)

    def _end_site(self, parent: int) -> None:
        ordinal = self._end_sites.get(parent, 0)
        self._end_sites[parent] = ordinal + 1
        name = end_site_name(self.names[parent], ordinal)
        while name in self.names:
            ordinal += 1
            name = end_site_name(self.names[parent], ordinal)
        index = self._add(name, parent)
        self.tokens.expect('{')
        self._offset(index)
        self.tokens.expect('}')


def parse_bvh(text: str, species: str = '', name: str = 'skeleton') -> tuple[SkeletonGraph, BvhClip]:
    """
    Parse BVH text into a skeleton and its raw channel frames.

    :param text: BVH file contents
    :param species: Species tag for the skeleton
    :param name: Skeleton name
    :return: (SkeletonGraph, BvhClip)
    :raises ParseError: On missing sections, unbalanced braces, bad channel counts or frame widths
    """
    lines = text.splitlines()
    if not any(line.split()[:1] == ['HIERARCHY'] for line in lines):
        raise ParseError("Missing HIERARCHY section", 1)
    motion_line = next((i for i, line in enumerate(lines) if line.split()[:1] == ['MOTION']), None)
    if motion_line is None:
        raise ParseError("Missing MOTION section", max(len(lines), 1))

    hierarchy = _HierarchyParser(_Tokens(lines, motion_line))
    hierarchy.parse()
    try:
        joints = tuple(
            Joint(name=n, parent=p, offset=o, channels=c)
            for n, p, o, c in zip(hierarchy.names, hierarchy.parents, hierarchy.offsets, hierarchy.channels)
        )
        skeleton = SkeletonGraph(name=name, species=species, joints=joints)
    except PydanticValidationError as e:
        raise ParseError(f"Invalid hierarchy: {e}", motion_line) from e

    clip = _parse_motion(lines, motion_line, sum(len(c) for c in hierarchy.channels))
    logger.debug(f"Parsed BVH skeleton {name!r}: {skeleton.num_joints} joints, {clip.num_frames} frames")
    return skeleton, clip


def _header_value(lines: list[str], index: int, label: str) -> str:
    if index >= len(lines) or not lines[index].strip().startswith(label):
        raise ParseError(f"Expected '{label}' line", min(index + 1, max(len(lines), 1)))
    return lines[index].strip()[len(label):].strip()


def _parse_motion(lines: list[str], motion_line: int, width: int) -> BvhClip:
    frames_text = _header_value(lines, motion_line + 1, 'Frames:')
    time_text = _header_value(lines, motion_line + 2, 'Frame Time:')
    try:
        declared = int(frames_text)
        frame_time = float(time_text)
    except ValueError:
        raise ParseError(f"Invalid MOTION header: Frames {frames_text!r}, Frame Time {time_text!r}", motion_line + 2) from None
    if frame_time <= 0:
        raise ParseError(f"Frame Time must be positive, got {frame_time}", motion_line + 3)

    rows = []
    for number, line in enumerate(lines[motion_line + 3:], start=motion_line + 4):
        if not line.strip():
            continue
        try:
            values = [float(v) for v in line.split()]
        except ValueError:
            raise ParseError("Non-numeric value in frame data", number) from None
        if len(values) != width:
            raise ParseError(f"Frame has {len(values)} values, expected {width} from declared channels", number)
        rows.append(values)
    if len(rows) != declared:
        raise ParseError(f"Frames: declares {declared} frames, found {len(rows)}", len(lines))
    return BvhClip(frame_time=frame_time, values=np.array(rows, dtype=np.float64).reshape(declared, width))


def _channel_slices(s: SkeletonGraph) -> list[slice]:
    slices, start = [], 0
    for joint in s.joints:
        slices.append(slice(start, start + len(joint.channels)))
        start += len(joint.channels)
    return slices


def bvh_to_motion(s: SkeletonGraph, clip: BvhClip, scale: float = 1.0) -> MotionSequence:
    """
    Forward kinematics over the parsed channels.

    :param s: Skeleton whose offsets are already multiplied by scale
    :param clip: Parsed MOTION section
    :param scale: Factor applied to translation channels
    :return: MotionSequence at the clip's frame rate
    """
    frames = clip.num_frames
    rotmats = np.broadcast_to(np.eye(3), (frames, s.num_joints, 3, 3)).copy()
    translations = np.zeros((frames, s.num_joints, 3))
    for j, (joint, columns) in enumerate(zip(s.joints, _channel_slices(s))):
        values = clip.values[:, columns]
        order = joint.rotation_order
        if order:
            rot_columns = [i for i, c in enumerate(joint.channels) if c in ROTATION_CHANNELS]
            rotmats[:, j] = euler_to_matrix(order, values[:, rot_columns])
        for axis, channel in enumerate(POSITION_CHANNELS):
            if channel in joint.channels:
                translations[:, j, axis] = values[:, joint.channels.index(channel)] * scale
    return motion_from_local_rotations(s, rotmats, translations, fps=clip.fps)


def motion_to_channels(s: SkeletonGraph, motion: MotionSequence) -> np.ndarray:
    """
    Per-frame channel values reproducing motion on s.

    :return: (T, total channels) array in hierarchy order, angles in degrees
    """
    local = local_rotations(motion)
    _, global_rot = forward_kinematics(s, local)
    relative = motion.positions.copy()
    relative[:, 0] = 0.0
    offsets = s.offsets
    columns = []
    for j, joint in enumerate(s.joints):
        if not joint.channels:
            continue
        values = np.zeros((motion.num_frames, len(joint.channels)))
        if joint.parent is None:
            translation = motion.positions[:, 0] - offsets[0]
        else:
            p = joint.parent
            bone = relative[:, j] - relative[:, p]
            translation = np.einsum('tba,tb->ta', global_rot[:, p], bone) - offsets[j]
        order = joint.rotation_order
        angles = matrix_to_euler(order, local[:, j]) if order else None
        for c, channel in enumerate(joint.channels):
            if channel in POSITION_CHANNELS:
                values[:, c] = translation[:, POSITION_CHANNELS.index(channel)]
            elif angles is not None:
                values[:, c] = angles[:, order.index(channel[0])]
        columns.append(values)
    if not columns:
        return np.zeros((motion.num_frames, 0))
    return np.concatenate(columns, axis=1)


def _format(values: Any) -> str:
    return ' '.join(f"{float(v):.8f}" for v in values)


def _is_end_site(s: SkeletonGraph, index: int) -> bool:
    joint = s.joints[index]
    if joint.channels or s.children[index] or joint.parent is None:
        return False
    return joint.name.startswith(end_site_name(s.joints[joint.parent].name))


def export_bvh(s: SkeletonGraph, motion: MotionSequence, frame_time: float | None = None) -> str:
    """
    Render a skeleton and motion as BVH text.

    :param s: Skeleton
    :param motion: Motion with one slot per skeleton joint
    :param frame_time: Seconds per frame, defaults to 1 / motion.fps
    :return: BVH text, joints in depth-first order
    :raises DimensionError: If the joint counts differ
    """
    if motion.num_joints != s.num_joints:
        raise DimensionError(f"Motion has {motion.num_joints} joints, skeleton {s.name!r} has {s.num_joints}")
    order = depth_first_order(s)
    if order != list(range(s.num_joints)):
        s = reorder_joints(s, order)
        motion = motion.model_copy(update={'frames': motion.frames[:, order]})
    frame_time = frame_time if frame_time is not None else 1.0 / motion.fps
    children = s.children
    out = ['HIERARCHY']

    def write(index: int, depth: int) -> None:
        joint = s.joints[index]
        pad = _INDENT * depth
        if _is_end_site(s, index):
            out.extend([f"{pad}End Site", f"{pad}{{", f"{pad}{_INDENT}OFFSET {_format(joint.offset)}", f"{pad}}}"])
            return
        keyword = 'ROOT' if joint.parent is None else 'JOINT'
        out.extend([f"{pad}{keyword} {joint.name}", f"{pad}{{", f"{pad}{_INDENT}OFFSET {_format(joint.offset)}"])
        if joint.channels or joint.parent is not None:
            out.append(f"{pad}{_INDENT}CHANNELS {len(joint.channels)} {' '.join(joint.channels)}".rstrip())
        for child in children[index]:
            write(child, depth + 1)
        out.append(f"{pad}}}")

    write(0, 0)
    channels = motion_to_channels(s, motion)
    out.extend(['MOTION', f"Frames: {motion.num_frames}", f"Frame Time: {frame_time:.8f}"])
    out.extend(_format(row) for row in channels)
    return '\n'.join(out) + '\n'
