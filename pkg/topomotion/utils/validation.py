"""Shared validation utilities for topomotion."""
from topomotion.exceptions import ValidationError

# Corpus bounds on sequence length, in frames
MIN_FRAMES = 20
MAX_FRAMES = 240

# Bounds on synthetic skeleton size
MIN_JOINTS = 3
MAX_JOINTS = 64


def validate_non_empty(value: str, field_name: str) -> None:
    """
    Validate that a string value is non-empty.

    :param value: Value to validate
    :param field_name: Name of the field for error messages
    :raises ValidationError: If value is empty or whitespace-only
    """
    if not value or not value.strip():
        raise ValidationError(f"{field_name} cannot be empty")


def validate_frame_count(frames: int, low: int = MIN_FRAMES, high: int = MAX_FRAMES) -> None:
    """
    Validate a sequence length against the corpus bounds.

    :param frames: Number of frames
    :param low: Minimum frames (default 20)
    :param high: Maximum frames (default 240)
    :raises ValidationError: If the frame count is out of range
    """
    if frames < low or frames > high:
        raise ValidationError(f"Frame count must be within [{low}, {high}], got {frames}")


def validate_joint_range(joint_range: tuple[int, int]) -> None:
    """
    Validate a (min, max) joint count range for synthetic skeletons.

    :param joint_range: Inclusive (min, max) joint counts
    :raises ValidationError: If the range is inverted or outside [3, 64]
    """
    low, high = joint_range
    if low > high:
        raise ValidationError(f"Joint range is inverted: {joint_range}")
    if low < MIN_JOINTS or high > MAX_JOINTS:
        raise ValidationError(f"Joint range must lie within [{MIN_JOINTS}, {MAX_JOINTS}], got {joint_range}")


def validate_joint_count(num_joints: int, limit: int) -> None:
    """
    Validate a skeleton's joint count against a model's joint-slot capacity.

    :param num_joints: Joints in the skeleton
    :param limit: Largest joint count the model supports
    :raises ValidationError: If the skeleton has more joints than the limit
    """
    if num_joints > limit:
        raise ValidationError(f"Skeleton has {num_joints} joints; the model supports at most max_joints={limit}")
