"""Rotation helpers: 6D representation, yaw matrices, BVH Euler conversion."""
import numpy as np
from scipy.spatial.transform import Rotation

# Columns shorter than this cannot be orthonormalized and fall back to identity
_DEGENERATE_NORM = 1e-8


def encode_6d(rotmats: np.ndarray) -> np.ndarray:
    """(..., 3, 3) rotation matrices -> (..., 6) first two columns."""
    return np.concatenate([rotmats[..., :, 0], rotmats[..., :, 1]], axis=-1)


def decode_6d(rot6: np.ndarray) -> np.ndarray:
    """
    (..., 6) -> (..., 3, 3) via Gram-Schmidt on the two stored columns.

    Degenerate inputs (vanishing or parallel columns) decode to the identity.
    """
    a1 = rot6[..., 0:3]
    a2 = rot6[..., 3:6]
    n1 = np.linalg.norm(a1, axis=-1, keepdims=True)
    b1 = a1 / np.maximum(n1, _DEGENERATE_NORM)
    a2_perp = a2 - np.sum(b1 * a2, axis=-1, keepdims=True) * b1
    n2 = np.linalg.norm(a2_perp, axis=-1, keepdims=True)
    b2 = a2_perp / np.maximum(n2, _DEGENERATE_NORM)
    b3 = np.cross(b1, b2)
    rotmats = np.stack([b1, b2, b3], axis=-1)

    degenerate = (n1[..., 0] < _DEGENERATE_NORM) | (n2[..., 0] < _DEGENERATE_NORM)
    if degenerate.any():
        rotmats[degenerate] = np.eye(3)
    return rotmats


def identity_6d(shape: tuple[int, ...]) -> np.ndarray:
    return np.broadcast_to(np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0]), (*shape, 6)).copy()


def yaw_matrix(theta: float) -> np.ndarray:
    """Rotation by theta about +Y."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def forward_yaw(rotmat: np.ndarray) -> float | None:
    """
    Heading of a rotation's forward (+Z) axis on the ground plane.

    :return: atan2(fx, fz), or None when the forward axis is (nearly) vertical
    """
    forward = rotmat[:, 2]
    if np.hypot(forward[0], forward[2]) < _DEGENERATE_NORM:
        return None
    return float(np.arctan2(forward[0], forward[2]))


def euler_to_matrix(order: str, angles_deg: np.ndarray) -> np.ndarray:
    """
    BVH Euler angles to rotation matrices.

    BVH channel order is intrinsic (ZXY means R = Rz @ Rx @ Ry), which scipy
    spells with upper-case axis letters.

    :param order: Axis letters, e.g. 'ZXY'
    :param angles_deg: (..., 3) angles in degrees, in the order given
    :return: (..., 3, 3)
    """
    flat = np.asarray(angles_deg, dtype=np.float64).reshape(-1, 3)
    mats = Rotation.from_euler(order.upper(), flat, degrees=True).as_matrix()
    return mats.reshape(*np.shape(angles_deg)[:-1], 3, 3)


def matrix_to_euler(order: str, rotmats: np.ndarray) -> np.ndarray:
    """Inverse of ``euler_to_matrix``; returns (..., 3) degrees in the given order."""
    flat = np.asarray(rotmats, dtype=np.float64).reshape(-1, 3, 3)
    angles = Rotation.from_matrix(flat).as_euler(order.upper(), degrees=True)
    return angles.reshape(*np.shape(rotmats)[:-2], 3)
