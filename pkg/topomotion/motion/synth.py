"""
Procedural synthetic corpus.

Each species gets a seeded random skeleton and its own gait signature (per-joint
swing axes, phase offsets and a frequency band), so skeleton identity carries
information about how the species moves. Sequences come from four template
families: walk cycle, jump, idle sway and turn.
"""
import math

import numpy as np
from loguru import logger
from scipy.spatial.transform import Rotation

from topomotion.exceptions import ValidationError
from topomotion.models.motion import Corpus, CorpusEntry, MotionSequence, Split, TextRecord
from topomotion.models.skeleton import SkeletonGraph
from topomotion.motion.features import align_motion, motion_from_local_rotations
from topomotion.skeleton.graph import normalize_skeleton, random_tree
from topomotion.utils.seeding import numpy_rng
from topomotion.utils.validation import validate_frame_count, validate_joint_range

SPECIES_NAMES = (
    'fox', 'heron', 'lizard', 'spider', 'crab', 'horse', 'snake', 'bat',
    'frog', 'beetle', 'otter', 'crane', 'gecko', 'scorpion', 'deer', 'eel',
)
MOTION_CLASSES = ('walk', 'jump', 'idle-sway', 'turn')
_VERBS = {'walk': 'walking', 'jump': 'jumping', 'idle-sway': 'swaying in place', 'turn': 'turning'}

DEFAULT_FPS = 20.0
DEFAULT_TEST_RATIO = 0.05


def species_name(index: int) -> str:
    base = SPECIES_NAMES[index % len(SPECIES_NAMES)]
    return base if index < len(SPECIES_NAMES) else f"{base}{index // len(SPECIES_NAMES)}"


def assign_splits(count: int, seed: int, test_ratio: float = DEFAULT_TEST_RATIO) -> list[Split]:
    """Seeded split: round(count * test_ratio) entries, chosen by permutation, go to TEST."""
    if not 0.0 <= test_ratio < 1.0:
        raise ValidationError(f"test_ratio must lie in [0, 1), got {test_ratio}")
    n_test = math.floor(count * test_ratio + 0.5)
    test = set(numpy_rng(seed, 'split').permutation(count)[:n_test].tolist())
    return [Split.TEST if i in test else Split.TRAIN for i in range(count)]


class _Gait:
    """Per-species swing axes, phase offsets and frequency band."""

    def __init__(self, rng: np.random.Generator, num_joints: int) -> None:
        axes = rng.normal(size=(num_joints, 3))
        self.axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=num_joints)
        self.frequency = rng.uniform(0.5, 2.0)
        self.weights = rng.uniform(0.5, 1.0, size=num_joints)


def _joint_rotations(gait: _Gait, angles: np.ndarray) -> np.ndarray:
    """(T, K) swing angles about each joint's gait axis -> (T, K, 3, 3)."""
    rotvecs = angles[..., None] * gait.axes[None]
    return Rotation.from_rotvec(rotvecs.reshape(-1, 3)).as_matrix().reshape(*angles.shape, 3, 3)


def _template(
    motion_class: str,
    gait: _Gait,
    rng: np.random.Generator,
    num_frames: int,
    fps: float,
) -> tuple[np.ndarray, np.ndarray, str]:
    """Local rotations, root translations and a modifier phrase for one template instance."""
    k = len(gait.phases)
    t = np.arange(num_frames) / fps
    amplitude = rng.uniform(0.6, 1.4)
    frequency = gait.frequency * rng.uniform(0.8, 1.25)
    omega = 2.0 * np.pi * frequency
    translation = np.zeros((num_frames, k, 3))
    yaw = np.zeros(num_frames)

    if motion_class == 'walk':
        swing = 0.4 * amplitude * np.sin(omega * t[:, None] + gait.phases[None])
        translation[:, 0, 2] = 0.5 * amplitude * frequency * t
        translation[:, 0, 1] = 0.03 * amplitude * np.sin(2.0 * omega * t)
        modifier = 'with long strides' if amplitude > 1.0 else 'with short steps'
    elif motion_class == 'jump':
        duration = t[-1] if t[-1] > 0 else 1.0
        phase = t / duration
        crouch = np.sin(np.pi * phase)
        swing = 0.5 * amplitude * crouch[:, None] * np.cos(gait.phases)[None]
        translation[:, 0, 1] = 0.4 * amplitude * crouch
        translation[:, 0, 2] = 0.3 * amplitude * phase
        modifier = 'high into the air' if amplitude > 1.0 else 'in a small hop'
    elif motion_class == 'idle-sway':
        swing = 0.1 * amplitude * np.sin(0.5 * omega * t[:, None] + gait.phases[None])
        translation[:, 0, 0] = 0.05 * amplitude * np.sin(0.5 * omega * t)
        modifier = 'gently' if amplitude < 1.0 else 'restlessly'
    else:
        swing = 0.25 * amplitude * np.sin(omega * t[:, None] + gait.phases[None])
        direction = 1.0 if rng.random() < 0.5 else -1.0
        yaw = direction * 0.8 * amplitude * t
        modifier = 'to the left' if direction > 0 else 'to the right'

    swing = swing * gait.weights[None]
    swing[:, 0] = 0.0
    rotmats = _joint_rotations(gait, swing)
    rotmats[:, 0] = Rotation.from_euler('y', yaw).as_matrix()
    if motion_class == 'turn':
        forward = np.stack([np.sin(yaw), np.zeros_like(yaw), np.cos(yaw)], axis=1)
        translation[1:, 0] = np.cumsum(0.4 * frequency / fps * forward[:-1], axis=0)
    speed = 'quickly' if frequency > gait.frequency else 'slowly'
    return rotmats, translation, f"{speed} {modifier}"


def synth_sequence(
    skeleton: SkeletonGraph,
    gait: _Gait,
    rng: np.random.Generator,
    motion_class: str,
    num_frames: int,
    fps: float = DEFAULT_FPS,
) -> tuple[MotionSequence, TextRecord]:
    rotmats, translation, modifier = _template(motion_class, gait, rng, num_frames, fps)
    motion = align_motion(motion_from_local_rotations(skeleton, rotmats, translation, fps=fps))
    species = skeleton.species
    text = TextRecord(
        summary=f"{species} {motion_class}",
        detail=f"a {species} {_VERBS[motion_class]}, {modifier}",
        motion_class=motion_class,
        species_tag=species,
    )
    return motion, text


def synth_corpus(
    seed: int,
    n_species: int,
    seqs_per_species: int,
    joint_range: tuple[int, int] = (8, 24),
    frame_range: tuple[int, int] = (40, 120),
    test_ratio: float = DEFAULT_TEST_RATIO,
    fps: float = DEFAULT_FPS,
) -> Corpus:
    """
    Build a deterministic synthetic corpus.

    :param seed: Base seed; every draw derives from it
    :param n_species: Number of species (distinct skeletons), at least 2
    :param seqs_per_species: Sequences per species, at least 1
    :param joint_range: Inclusive joint-count range within [3, 64]
    :param frame_range: Inclusive sequence-length range within [20, 240]
    :param test_ratio: Fraction of entries assigned to TEST
    :param fps: Frame rate of the generated motions
    :return: Corpus
    :raises ValidationError: On invalid ranges or counts
    """
    if n_species < 2:
        raise ValidationError(f"n_species must be at least 2, got {n_species}")
    if seqs_per_species < 1:
        raise ValidationError(f"seqs_per_species must be at least 1, got {seqs_per_species}")
    validate_joint_range(joint_range)
    validate_frame_count(frame_range[0])
    validate_frame_count(frame_range[1])
    if frame_range[0] > frame_range[1]:
        raise ValidationError(f"Frame range is inverted: {frame_range}")

    skeletons: dict[str, SkeletonGraph] = {}
    drafts: list[tuple[str, MotionSequence, TextRecord]] = []
    for s in range(n_species):
        name = species_name(s)
        rng = numpy_rng(seed, 'species', s)
        num_joints = int(rng.integers(joint_range[0], joint_range[1] + 1))
        skeleton, _ = normalize_skeleton(random_tree(rng, num_joints, species=name, name=name))
        skeletons[name] = skeleton
        gait = _Gait(rng, num_joints)
        for i in range(seqs_per_species):
            seq_rng = numpy_rng(seed, 'sequence', s, i)
            motion_class = MOTION_CLASSES[int(seq_rng.integers(len(MOTION_CLASSES)))]
            num_frames = int(seq_rng.integers(frame_range[0], frame_range[1] + 1))
            motion, text = synth_sequence(skeleton, gait, seq_rng, motion_class, num_frames, fps)
            drafts.append((name, motion, text))

    splits = assign_splits(len(drafts), seed, test_ratio)
    entries = [
        CorpusEntry(skeleton=name, motion=motion, text=text, split=split)
        for (name, motion, text), split in zip(drafts, splits)
    ]
    logger.info(f"Synthesized {len(entries)} sequences across {n_species} species (seed {seed})")
    return Corpus(skeletons=skeletons, entries=entries)
