"""Corpus persistence, batch validation and text-record export."""
import json

import numpy as np
from loguru import logger
from pydantic import ValidationError as PydanticValidationError

from topomotion.exceptions import DataFormatError, ValidationError
from topomotion.models.motion import Corpus, CorpusEntry, MotionSequence, Split, TextRecord
from topomotion.motion.features import compute_velocities
from topomotion.motion.rotation import decode_6d, encode_6d
from topomotion.skeleton.interchange import skeleton_from_dict, skeleton_to_dict
from topomotion.utils.container import read_container, write_container
from topomotion.utils.io import write_text
from topomotion.utils.validation import MAX_FRAMES, MIN_FRAMES

CORPUS_KIND = 'corpus'

# MotionSequence invariant tolerances
ORTHONORMAL_TOL = 1e-4
VELOCITY_TOL = 1e-6


def save_corpus(corpus: Corpus, path: str) -> str:
    """
    Write a corpus container.

    :param corpus: Corpus to save
    :param path: Destination file
    :return: Payload checksum
    """
    meta = {
        'entry_count': len(corpus.entries),
        'skeletons': {key: skeleton_to_dict(s) for key, s in corpus.skeletons.items()},
        'entries': [
            {
                'skeleton': e.skeleton,
                'split': e.split.value,
                'fps': e.motion.fps,
                'species_tag': e.motion.species_tag,
                'text': e.text.model_dump(mode='json'),
            }
            for e in corpus.entries
        ],
    }
    arrays = {f"motion_{i:06d}": e.motion.frames for i, e in enumerate(corpus.entries)}
    checksum = write_container(path, CORPUS_KIND, meta, arrays)
    logger.info(f"Saved corpus with {len(corpus.entries)} entries to {path}")
    return checksum


def load_corpus(path: str, enforce_frame_bounds: bool = True) -> Corpus:
    """
    Read a corpus container.

    :param path: Source file
    :param enforce_frame_bounds: Reject sequences outside [20, 240] frames
    :return: Corpus with entries in stored order
    :raises DataFormatError: If the container is corrupt or its metadata malformed
    :raises ValidationError: If a sequence violates the frame bounds
    """
    header, arrays = read_container(path, kind=CORPUS_KIND)
    meta = header['meta']
    try:
        skeletons = {key: skeleton_from_dict(raw) for key, raw in meta['skeletons'].items()}
        entries = []
        for i, raw in enumerate(meta['entries']):
            motion = MotionSequence(
                frames=arrays[f"motion_{i:06d}"],
                fps=raw['fps'],
                species_tag=raw['species_tag'],
            )
            if enforce_frame_bounds and not MIN_FRAMES <= motion.num_frames <= MAX_FRAMES:
                raise ValidationError(
                    f"Entry {i} has {motion.num_frames} frames, outside [{MIN_FRAMES}, {MAX_FRAMES}]"
                )
            entries.append(CorpusEntry(
                skeleton=raw['skeleton'],
                motion=motion,
                text=TextRecord(**raw['text']),
                split=Split(raw['split']),
            ))
    except (KeyError, TypeError, PydanticValidationError) as e:
        raise DataFormatError(f"Corpus '{path}' has malformed metadata: {e}") from e
    if len(entries) != meta.get('entry_count', len(entries)):
        raise DataFormatError(f"Corpus '{path}' declares {meta['entry_count']} entries, found {len(entries)}")
    logger.debug(f"Loaded corpus with {len(entries)} entries from {path}")
    return Corpus(skeletons=skeletons, entries=entries)


def validate_motion(motion: MotionSequence, num_joints: int | None = None) -> list[str]:
    """Problems with one sequence against the MotionSequence invariants; empty when valid."""
    problems = []
    if not MIN_FRAMES <= motion.num_frames <= MAX_FRAMES:
        problems.append(f"{motion.num_frames} frames outside [{MIN_FRAMES}, {MAX_FRAMES}]")
    if num_joints is not None and motion.num_joints != num_joints:
        problems.append(f"{motion.num_joints} joints, skeleton has {num_joints}")
    rot = motion.rotations
    drift = np.abs(encode_6d(decode_6d(rot)) - rot).max()
    if drift > ORTHONORMAL_TOL:
        problems.append(f"rotation blocks deviate from orthonormal by {drift:.2e}")
    vel_err = np.abs(motion.velocities - compute_velocities(motion.positions)).max()
    if vel_err > VELOCITY_TOL:
        problems.append(f"velocities disagree with position differences by {vel_err:.2e}")
    return problems


def validate_corpus(corpus: Corpus, raise_on_error: bool = False) -> dict[int, list[str]]:
    """
    Check every entry against the MotionSequence invariants.

    :param corpus: Corpus to check
    :param raise_on_error: Raise instead of returning problems
    :return: Map of entry index to problem descriptions (only failing entries)
    :raises ValidationError: If raise_on_error and any entry fails
    """
    report: dict[int, list[str]] = {}
    for i, entry in enumerate(corpus.entries):
        skeleton = corpus.skeletons.get(entry.skeleton)
        if skeleton is None:
            report[i] = [f"unknown skeleton {entry.skeleton!r}"]
            continue
        problems = validate_motion(entry.motion, skeleton.num_joints)
        if problems:
            report[i] = problems
    if report:
        logger.warning(f"{len(report)} of {len(corpus.entries)} corpus entries failed validation")
        if raise_on_error:
            first = next(iter(report))
            raise ValidationError(f"Entry {first}: {'; '.join(report[first])}")
    return report


def export_text_records(corpus: Corpus, path: str) -> None:
    """Write one JSON object per entry: text fields plus skeleton key and split."""
    lines = [
        json.dumps({**e.text.model_dump(mode='json'), 'skeleton': e.skeleton, 'split': e.split.value})
        for e in corpus.entries
    ]
    write_text('\n'.join(lines) + ('\n' if lines else ''), path)
