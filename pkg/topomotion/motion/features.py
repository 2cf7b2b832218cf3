"""
Motion feature construction and the alignment pipeline.

Per-joint feature layout (d = 12): position (3), 6D local rotation (6),
velocity (3). Positions are root-relative except the root slot, which holds
the root's own position. Forward is +Z, up is +Y.
"""
import numpy as np
from scipy.interpolate import interp1d

from topomotion.exceptions import ValidationError
from topomotion.models.motion import POS, ROT, VEL, MotionSequence
from topomotion.models.skeleton import SkeletonGraph
from topomotion.motion.rotation import decode_6d, encode_6d, forward_yaw, yaw_matrix


def compute_velocities(positions: np.ndarray) -> np.ndarray:
    """
    Per-frame finite differences: v[0] = 0, v[t] = p[t] - p[t-1].

    :param positions: (T, K, 3)
    :return: (T, K, 3)
    """
    positions = np.asarray(positions, dtype=np.float64)
    if positions.ndim != 3 or positions.shape[0] < 1:
        raise ValidationError(f"positions must have shape (T>=1, K, 3), got {positions.shape}")
    velocities = np.zeros_like(positions)
    velocities[1:] = positions[1:] - positions[:-1]
    return velocities


def forward_kinematics(
    s: SkeletonGraph,
    local_rotmats: np.ndarray,
    translations: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """
    Global joint positions and rotations from local rotations.

    Each joint sits at parent_position + parent_rotation @ (offset + translation);
    the root sits at offset + translation.

    :param s: Skeleton
    :param local_rotmats: (T, K, 3, 3) local rotations
    :param translations: (T, K, 3) per-joint translation channels, zero if omitted
    :return: (global positions (T, K, 3), global rotations (T, K, 3, 3))
    """
    frames = local_rotmats.shape[0]
    offsets = s.offsets
    if translations is None:
        translations = np.zeros((frames, s.num_joints, 3))
    positions = np.zeros((frames, s.num_joints, 3))
    rotations = np.zeros_like(local_rotmats)
    for j, p in enumerate(s.parents):
        local = offsets[j] + translations[:, j]
        if p < 0:
            positions[:, j] = local
            rotations[:, j] = local_rotmats[:, j]
        else:
            positions[:, j] = positions[:, p] + np.einsum('tab,tb->ta', rotations[:, p], local)
            rotations[:, j] = rotations[:, p] @ local_rotmats[:, j]
    return positions, rotations


def features_from_globals(
    global_positions: np.ndarray,
    local_rot6: np.ndarray,
    fps: float,
    species_tag: str = '',
) -> MotionSequence:
    """Assemble the (T, K, 12) layout from global positions and 6D local rotations."""
    positions = global_positions - global_positions[:, :1]
    positions[:, 0] = global_positions[:, 0]
    frames = np.concatenate([positions, local_rot6, compute_velocities(positions)], axis=-1)
    return MotionSequence(frames=frames, fps=fps, species_tag=species_tag)


def motion_from_local_rotations(
    s: SkeletonGraph,
    local_rotmats: np.ndarray,
    translations: np.ndarray | None = None,
    fps: float = 20.0,
) -> MotionSequence:
    positions, _ = forward_kinematics(s, local_rotmats, translations)
    return features_from_globals(positions, encode_6d(local_rotmats), fps, s.species)


def rest_pose_motion(s: SkeletonGraph, num_frames: int, fps: float = 20.0) -> MotionSequence:
    """Zero motion: identity local rotations, root held at its rest offset."""
    if num_frames < 1:
        raise ValidationError(f"num_frames must be at least 1, got {num_frames}")
    local = np.broadcast_to(np.eye(3), (num_frames, s.num_joints, 3, 3)).copy()
    return motion_from_local_rotations(s, local, fps=fps)


def align_motion(m: MotionSequence) -> MotionSequence:
    """
    Center the frame-0 root at the origin and turn its forward axis to +Z.

    The yaw correction is a single rotation about +Y applied to every position,
    velocity and the root's rotation; child rotations are parent-relative and
    stay untouched. When the frame-0 forward axis is vertical the yaw step is
    skipped.
    """
    frames = m.frames.copy()
    frames[:, 0, POS] -= frames[0, 0, POS]

    theta = forward_yaw(decode_6d(frames[0, 0, ROT]))
    if theta is not None and theta != 0.0:
        turn = yaw_matrix(-theta)
        frames[..., POS] = frames[..., POS] @ turn.T
        frames[..., VEL] = frames[..., VEL] @ turn.T
        root_rot = frames[:, 0, ROT]
        frames[:, 0, 3:6] = root_rot[:, 0:3] @ turn.T
        frames[:, 0, 6:9] = root_rot[:, 3:6] @ turn.T
    return m.model_copy(update={'frames': frames})


def resample_motion(m: MotionSequence, num_frames: int) -> MotionSequence:
    """
    Linearly resample to num_frames, re-orthonormalizing rotations and
    recomputing velocities. fps scales with the length change.
    """
    if num_frames < 2 or m.num_frames < 2:
        raise ValidationError(f"Resampling needs at least 2 source and target frames, got {m.num_frames} -> {num_frames}")
    source = np.linspace(0.0, 1.0, m.num_frames)
    target = np.linspace(0.0, 1.0, num_frames)
    frames = interp1d(source, m.frames, axis=0)(target)
    rot = encode_6d(decode_6d(frames[..., ROT]))
    positions = frames[..., POS]
    resampled = np.concatenate([positions, rot, compute_velocities(positions)], axis=-1)
    fps = m.fps * (num_frames - 1) / (m.num_frames - 1)
    return m.model_copy(update={'frames': resampled, 'fps': fps})


def local_rotations(m: MotionSequence) -> np.ndarray:
    """(T, K, 3, 3) local rotation matrices decoded from the 6D blocks."""
    return decode_6d(m.rotations)


def scale_positions(m: MotionSequence, factor: float) -> MotionSequence:
    """Multiply positions and velocities by factor (undoing skeleton normalization)."""
    frames = m.frames.copy()
    frames[..., POS] *= factor
    frames[..., VEL] *= factor
    return m.model_copy(update={'frames': frames})

