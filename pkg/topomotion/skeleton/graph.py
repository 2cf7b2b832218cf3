"""Skeleton topology: relation/distance matrices, normalization, joint padding."""
from collections import deque
from collections.abc import Sequence

import numpy as np
from loguru import logger

from topomotion.exceptions import ValidationError
from topomotion.models.skeleton import Joint, Relation, SkeletonGraph

ROOT_CHANNELS = ('Xposition', 'Yposition', 'Zposition', 'Zrotation', 'Xrotation', 'Yrotation')
JOINT_CHANNELS = ('Zrotation', 'Xrotation', 'Yrotation')
JOINT_FEATURE_DIM = 6

# Chains within this distance of unit length count as already normalized
_UNIT_TOLERANCE = 1e-12


def end_site_name(parent_name: str, ordinal: int = 0) -> str:
    """Name given to an End Site leaf; repeats under one parent get a numeric suffix."""
    return f"{parent_name}_End" if ordinal == 0 else f"{parent_name}_End{ordinal}"


def relation_matrix(s: SkeletonGraph) -> np.ndarray:
    """
    Classify every joint pair.

    entries[i][j] is j's role relative to i: SELF, PARENT (j is i's parent), CHILD
    (i is j's parent), SIBLING (distinct joints sharing a parent) or OTHER.

    :param s: Skeleton
    :return: (K, K) int64 array of Relation codes
    """
    parents = np.array(s.parents)
    k = s.num_joints
    rel = np.full((k, k), int(Relation.OTHER), dtype=np.int64)
    same_parent = (parents[:, None] == parents[None, :]) & (parents[:, None] >= 0)
    rel[same_parent] = int(Relation.SIBLING)
    for i, p in enumerate(parents):
        if p >= 0:
            rel[i, p] = int(Relation.PARENT)
            rel[p, i] = int(Relation.CHILD)
    np.fill_diagonal(rel, int(Relation.SELF))
    return rel


def distance_matrix(s: SkeletonGraph) -> np.ndarray:
    """
    Hop counts on the undirected bone graph, one breadth-first search per joint.

    :param s: Skeleton
    :return: (K, K) int64 array
    """
    k = s.num_joints
    neighbours: list[list[int]] = [list(c) for c in s.children]
    for i, p in enumerate(s.parents):
        if p >= 0:
            neighbours[i].append(p)

    dist = np.full((k, k), -1, dtype=np.int64)
    for source in range(k):
        dist[source, source] = 0
        queue = deque([source])
        while queue:
            node = queue.popleft()
            for nxt in neighbours[node]:
                if dist[source, nxt] < 0:
                    dist[source, nxt] = dist[source, node] + 1
                    queue.append(nxt)
    return dist


def chain_lengths(s: SkeletonGraph) -> np.ndarray:
    """Accumulated bone length from the root to every joint (root offset excluded)."""
    norms = np.linalg.norm(s.offsets, axis=1)
    lengths = np.zeros(s.num_joints)
    for i, p in enumerate(s.parents):
        if p >= 0:
            lengths[i] = lengths[p] + norms[i]
    return lengths


def scale_skeleton(s: SkeletonGraph, factor: float) -> SkeletonGraph:
    joints = tuple(
        j.model_copy(update={'offset': tuple(float(v) * factor for v in j.offset)})
        for j in s.joints
    )
    return s.model_copy(update={'joints': joints})


def normalize_skeleton(s: SkeletonGraph) -> tuple[SkeletonGraph, float]:
    """
    Scale all offsets so the longest root-to-leaf chain has length 1.

    :param s: Skeleton
    :return: (normalized skeleton, scale factor applied)
    :raises ValidationError: If every bone has zero length
    """
    longest = float(chain_lengths(s).max())
    if longest <= 0.0:
        raise ValidationError(f"Skeleton {s.name!r} is degenerate: all bone offsets are zero")
    if abs(longest - 1.0) <= _UNIT_TOLERANCE:
        return s, 1.0
    factor = 1.0 / longest
    return scale_skeleton(s, factor), factor


def joint_features(s: SkeletonGraph) -> np.ndarray:
    """
    Per-joint geometry: [rest offset (3), depth / max depth, child count, bone length].

    :param s: Skeleton
    :return: (K, 6) float64 array
    """
    depths = np.array(s.depths, dtype=np.float64)
    max_depth = depths.max()
    offsets = s.offsets
    return np.concatenate([
        offsets,
        (depths / max_depth if max_depth > 0 else depths)[:, None],
        np.array([len(c) for c in s.children], dtype=np.float64)[:, None],
        np.linalg.norm(offsets, axis=1)[:, None],
    ], axis=1)


def pad_joint_batch(items: Sequence[np.ndarray], joint_axis: int = 0) -> tuple[np.ndarray, list[np.ndarray]]:
    """
    Zero-pad per-sample joint-indexed arrays to the largest joint count.

    :param items: Arrays sharing every extent except the joint axis
    :param joint_axis: Axis holding joints
    :return: (stacked array with a leading batch axis, per-sample boolean joint masks)
    :raises ValidationError: If the batch is empty or trailing extents disagree
    """
    if not items:
        raise ValidationError("Cannot pad an empty batch")
    arrays = [np.asarray(item) for item in items]
    reference = list(arrays[0].shape)
    for array in arrays[1:]:
        other = list(array.shape)
        if len(other) != len(reference) or any(
            a != b for axis, (a, b) in enumerate(zip(reference, other)) if axis != joint_axis
        ):
            raise ValidationError(f"Inconsistent shapes in batch: {tuple(reference)} vs {tuple(other)}")

    j_max = max(a.shape[joint_axis] for a in arrays)
    padded, masks = [], []
    for array in arrays:
        widths = [(0, 0)] * array.ndim
        widths[joint_axis] = (0, j_max - array.shape[joint_axis])
        padded.append(np.pad(array, widths))
        mask = np.zeros(j_max, dtype=bool)
        mask[:array.shape[joint_axis]] = True
        masks.append(mask)
    return np.stack(padded), masks


def reorder_joints(s: SkeletonGraph, order: Sequence[int]) -> SkeletonGraph:
    """
    Relabel joints: new joint i is old joint order[i].

    :raises ValidationError: If order is not a permutation or breaks parent-before-child order
    """
    if sorted(order) != list(range(s.num_joints)):
        raise ValidationError(f"Order {list(order)} is not a permutation of {s.num_joints} joints")
    new_index = {old: new for new, old in enumerate(order)}
    joints = []
    for new, old in enumerate(order):
        joint = s.joints[old]
        parent = None if joint.parent is None else new_index[joint.parent]
        if parent is not None and parent >= new:
            raise ValidationError(f"Order places joint {joint.name!r} before its parent")
        joints.append(joint.model_copy(update={'parent': parent}))
    return s.model_copy(update={'joints': tuple(joints)})


def depth_first_order(s: SkeletonGraph) -> list[int]:
    """Pre-order walk from the root, children by index; the order BVH nests joints in."""
    children = s.children
    order, stack = [], [0]
    while stack:
        joint = stack.pop()
        order.append(joint)
        stack.extend(reversed(children[joint]))
    return order


def random_topological_order(s: SkeletonGraph, rng: np.random.Generator) -> list[int]:
    """Uniformly pick among joints whose parent is already placed, until all are placed."""
    order = [0]
    frontier = list(s.children[0])
    while frontier:
        pick = frontier.pop(int(rng.integers(len(frontier))))
        order.append(pick)
        frontier.extend(s.children[pick])
    return order


def random_tree(
    rng: np.random.Generator,
    num_joints: int,
    species: str = '',
    name: str = 'skeleton',
    chain_bias: float = 0.6,
) -> SkeletonGraph:
    """
    Seeded random skeleton in topological order.

    Parents favour the previous joint (chain_bias) so limbs form chains; leaves
    become channel-less End Site joints.
    """
    if num_joints < 2:
        raise ValidationError(f"A random tree needs at least 2 joints, got {num_joints}")
    parents = [-1]
    for i in range(1, num_joints):
        parents.append(i - 1 if rng.random() < chain_bias else int(rng.integers(0, i)))

    has_child = [False] * num_joints
    for p in parents[1:]:
        has_child[p] = True

    names: list[str] = []
    end_count: dict[int, int] = {}
    for i, p in enumerate(parents):
        if i > 0 and not has_child[i]:
            names.append(end_site_name(names[p], end_count.get(p, 0)))
            end_count[p] = end_count.get(p, 0) + 1
        else:
            names.append(f"{name}_j{i}")

    joints = []
    for i, p in enumerate(parents):
        if p < 0:
            joints.append(Joint(name=names[i], parent=None, offset=(0.0, 0.0, 0.0), channels=ROOT_CHANNELS))
            continue
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        length = rng.uniform(0.05, 0.3)
        joints.append(Joint(
            name=names[i],
            parent=p,
            offset=tuple(float(v) for v in direction * length),
            channels=JOINT_CHANNELS if has_child[i] else (),
        ))
    skeleton = SkeletonGraph(name=name, species=species, joints=tuple(joints))
    logger.debug(f"Built random skeleton {name!r} with {num_joints} joints")
    return skeleton


def with_default_channels(s: SkeletonGraph) -> SkeletonGraph:
    """Give a channel-less root six channels and channel-less inner joints three rotations; leaves stay bare."""
    joints = []
    for i, joint in enumerate(s.joints):
        if not joint.channels and joint.parent is None:
            joint = joint.model_copy(update={'channels': ROOT_CHANNELS})
        elif not joint.channels and s.children[i]:
            joint = joint.model_copy(update={'channels': JOINT_CHANNELS})
        joints.append(joint)
    return s.model_copy(update={'joints': tuple(joints)})
