"""Tests for corpus persistence, validation and text export."""
import json

import numpy as np
import pytest

from topomotion.exceptions import DataFormatError, ValidationError
from topomotion.models.motion import Corpus, CorpusEntry, MotionSequence, Split, TextRecord
from topomotion.motion.corpus import (
    export_text_records,
    load_corpus,
    save_corpus,
    validate_corpus,
    validate_motion,
)
from topomotion.motion.features import rest_pose_motion
from topomotion.utils.container import MAGIC


@pytest.fixture
def saved_corpus(corpus, tmp_path):
    path = str(tmp_path / 'corpus.tmc')
    save_corpus(corpus, path)
    return path


def short_corpus(skeleton, frames: int) -> Corpus:
    entry = CorpusEntry(
        skeleton='fork',
        motion=rest_pose_motion(skeleton, frames),
        text=TextRecord(summary='fork idle'),
    )
    return Corpus(skeletons={'fork': skeleton}, entries=[entry])


class TestSaveLoadCorpus:
    """Tests for save_corpus and load_corpus."""

    def test_round_trip(self, corpus, saved_corpus):
        """Should restore skeletons, entries, splits and texts exactly."""
        loaded = load_corpus(saved_corpus)
        assert loaded == corpus
        assert [e.split for e in loaded.entries] == [e.split for e in corpus.entries]

    def test_checksum_is_stable(self, corpus, tmp_path):
        """Should produce the same checksum for the same corpus."""
        a = save_corpus(corpus, str(tmp_path / 'a.tmc'))
        b = save_corpus(corpus, str(tmp_path / 'b.tmc'))
        assert a == b

    def test_bad_magic(self, saved_corpus):
        """Should reject a file with a foreign magic."""
        with open(saved_corpus, 'r+b') as f:
            f.write(b'NOTMAGIC')
        with pytest.raises(DataFormatError, match="bad magic"):
            load_corpus(saved_corpus)

    def test_truncated(self, saved_corpus):
        """Should reject a truncated payload."""
        with open(saved_corpus, 'rb') as f:
            blob = f.read()
        with open(saved_corpus, 'wb') as f:
            f.write(blob[:-10])
        with pytest.raises(DataFormatError, match="truncated"):
            load_corpus(saved_corpus)

    def test_flipped_payload_byte(self, saved_corpus):
        """Should reject a payload whose checksum no longer matches."""
        with open(saved_corpus, 'rb') as f:
            blob = bytearray(f.read())
        blob[-1] ^= 0xFF
        with open(saved_corpus, 'wb') as f:
            f.write(bytes(blob))
        with pytest.raises(DataFormatError, match="checksum"):
            load_corpus(saved_corpus)

    def test_frame_bounds(self, skeleton, tmp_path):
        """Should reject short sequences unless bounds are waived."""
        path = str(tmp_path / 'short.tmc')
        save_corpus(short_corpus(skeleton, 5), path)
        with pytest.raises(ValidationError, match="outside"):
            load_corpus(path)
        assert load_corpus(path, enforce_frame_bounds=False).entries[0].motion.num_frames == 5

    def test_file_starts_with_magic(self, saved_corpus):
        """Should begin with the container magic."""
        with open(saved_corpus, 'rb') as f:
            assert f.read(8) == MAGIC


class TestValidateMotion:
    """Tests for validate_motion and validate_corpus."""

    def test_valid_rest_pose(self, skeleton):
        """Should report nothing for a valid sequence."""
        assert validate_motion(rest_pose_motion(skeleton, 20), 6) == []

    def test_reports_each_problem(self, skeleton):
        """Should flag length, joint count, rotations and velocities."""
        frames = rest_pose_motion(skeleton, 10).frames.copy()
        frames[2, 1, 3:9] = [2.0, 0.0, 0.0, 0.0, 1.0, 0.0]
        frames[4, 2, 9] = 1.0
        problems = validate_motion(MotionSequence(frames=frames), num_joints=5)
        assert len(problems) == 4
        assert any('orthonormal' in p for p in problems)
        assert any('velocities' in p for p in problems)

    def test_validate_corpus_collects(self, skeleton):
        """Should map failing entry indices to problems."""
        report = validate_corpus(short_corpus(skeleton, 5))
        assert list(report) == [0]

    def test_validate_corpus_raises(self, skeleton):
        """Should raise on request."""
        with pytest.raises(ValidationError, match="Entry 0"):
            validate_corpus(short_corpus(skeleton, 5), raise_on_error=True)

    def test_unknown_skeleton(self, skeleton):
        """Should flag an entry whose skeleton key is missing."""
        corpus = short_corpus(skeleton, 20)
        broken = corpus.model_copy(update={'skeletons': {}})
        assert 'unknown skeleton' in validate_corpus(broken)[0][0]


class TestExportTextRecords:
    """Tests for export_text_records."""

    def test_one_line_per_entry(self, corpus, tmp_path):
        """Should write the text fields with skeleton key and split."""
        path = tmp_path / 'texts.jsonl'
        export_text_records(corpus, str(path))
        lines = path.read_text().splitlines()
        assert len(lines) == len(corpus.entries)
        first = json.loads(lines[0])
        assert first['skeleton'] == corpus.entries[0].skeleton
        assert first['split'] in (Split.TRAIN.value, Split.TEST.value)
        assert first['summary'] == corpus.entries[0].text.summary


class TestCorpusModel:
    """Tests for Corpus helpers."""

    def test_prompt(self):
        """Should join summary and detail, or fall back to the summary."""
        text = TextRecord(summary='fox walk', detail='a fox walking')
        assert text.prompt() == 'fox walk. a fox walking'
        assert text.prompt(use_summary=False) == 'a fox walking'
        assert TextRecord(summary='fox').prompt(use_summary=False) == 'fox'

    def test_stats(self, corpus):
        """Should count frames per species."""
        stats = {s.species: s for s in corpus.stats()}
        fox = [e for e in corpus.entries if e.skeleton == 'fox']
        assert stats['fox'].frames == sum(e.motion.num_frames for e in fox)
        assert np.isclose(stats['fox'].avg_joints, corpus.skeletons['fox'].num_joints)
