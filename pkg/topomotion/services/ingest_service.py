import os
from collections.abc import Sequence

from loguru import logger
from pydantic import ValidationError as PydanticValidationError

from topomotion.exceptions import TopoMotionError, ValidationError
from topomotion.models.motion import Corpus, CorpusEntry, TextRecord
from topomotion.models.report import IngestReport, RejectedFile
from topomotion.motion.features import align_motion, resample_motion
from topomotion.motion.synth import DEFAULT_TEST_RATIO, assign_splits
from topomotion.skeleton.bvh import bvh_to_motion, parse_bvh
from topomotion.skeleton.graph import normalize_skeleton
from topomotion.utils.io import read_model_json, read_text
from topomotion.utils.validation import MAX_FRAMES, MIN_FRAMES, validate_joint_count


def sidecar_path(bvh_path: str) -> str:
    return os.path.splitext(bvh_path)[0] + '.json'


def _text_record(path: str, species: str) -> TextRecord:
    """TextRecord from the sidecar JSON next to the file, or a generic '<species> motion' summary."""
    sidecar = sidecar_path(path)
    if not os.path.exists(sidecar):
        return TextRecord(summary=f"{species} motion", species_tag=species)
    data = read_model_json(sidecar)
    if not isinstance(data, dict):
        raise ValidationError(f"Sidecar '{sidecar}' must hold a JSON object")
    data.pop('species', None)
    try:
        return TextRecord(species_tag=species, **data)
    except (TypeError, PydanticValidationError) as e:
        raise ValidationError(f"Sidecar '{sidecar}' is not a valid text record: {e}") from e


def _species(path: str, default: str | None) -> str:
    sidecar = sidecar_path(path)
    if os.path.exists(sidecar):
        data = read_model_json(sidecar)
        if isinstance(data, dict) and data.get('species'):
            return str(data['species'])
    return default or os.path.splitext(os.path.basename(path))[0]


class IngestService:
    """BVH files to a corpus: parse, normalize, align, and length-check."""

    def ingest(
        self,
        paths: Sequence[str],
        resample: bool = False,
        species: str | None = None,
        seed: int = 0,
        test_ratio: float = DEFAULT_TEST_RATIO,
        max_joints: int | None = None,
    ) -> tuple[Corpus, IngestReport]:
        """
        Ingest BVH files into a corpus.

        Sequences outside [20, 240] frames are rejected, or linearly resampled to
        the nearest bound when ``resample`` is set. Files that fail to parse are
        rejected with the parser's message.

        :param paths: BVH files
        :param resample: Resample out-of-range sequences instead of rejecting them
        :param species: Species tag when no sidecar names one (default: file stem)
        :param seed: Seed for the train/test split
        :param test_ratio: Fraction of accepted entries assigned to the test split
        :param max_joints: Reject skeletons with more joints than this (the RVQ slot capacity)
        :return: (corpus of accepted files, report)
        """
        report = IngestReport()
        skeletons = {}
        drafts = []
        for path in paths:
            try:
                tag = _species(path, species)
                skeleton, clip = parse_bvh(read_text(path), species=tag, name=os.path.basename(path))
                if max_joints is not None:
                    validate_joint_count(skeleton.num_joints, max_joints)
                normalized, factor = normalize_skeleton(skeleton)
                motion = align_motion(bvh_to_motion(normalized, clip, scale=factor))
                if not MIN_FRAMES <= motion.num_frames <= MAX_FRAMES:
                    reason = f"{motion.num_frames} frames outside [{MIN_FRAMES}, {MAX_FRAMES}]"
                    if not resample or motion.num_frames < 2:
                        logger.warning(f"Skipping {path}: {reason}")
                        report.rejected.append(RejectedFile(path=path, reason=reason))
                        continue
                    target = min(max(motion.num_frames, MIN_FRAMES), MAX_FRAMES)
                    motion = resample_motion(motion, target)
                    report.resampled.append(path)
                text = _text_record(path, tag)
            except (TopoMotionError, ValueError) as e:
                report.rejected.append(RejectedFile(path=path, reason=str(e)))
                logger.warning(f"Skipping {path}: {e}")
                continue

            key = os.path.splitext(os.path.basename(path))[0]
            while key in skeletons:
                key += '_'
            skeletons[key] = normalized.model_copy(update={'name': key})
            drafts.append((key, motion.model_copy(update={'species_tag': tag}), text))
            report.accepted.append(path)

        splits = assign_splits(len(drafts), seed, test_ratio) if drafts else []
        entries = [
            CorpusEntry(skeleton=key, motion=motion, text=text, split=split)
            for (key, motion, text), split in zip(drafts, splits)
        ]
        logger.info(f"Ingested {len(entries)} of {len(paths)} files ({len(report.rejected)} rejected)")
        return Corpus(skeletons=skeletons, entries=entries), report
