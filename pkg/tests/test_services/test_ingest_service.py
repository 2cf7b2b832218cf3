"""Tests for IngestService."""
import json

import pytest

from tests.conftest import FIRST_FRAME_LINE, bvh_text, rest_frames
from topomotion.models.motion import Split
from topomotion.motion.corpus import validate_corpus
from topomotion.services.ingest_service import IngestService, sidecar_path


def write_bvh(path, frames: int = 25) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(bvh_text(rest_frames(frames)))
    return str(path)


@pytest.fixture
def service():
    return IngestService()


class TestIngest:
    """Tests for IngestService.ingest."""

    def test_valid_file(self, service, tmp_path):
        """Should accept a well-formed file with defaults from its name."""
        path = write_bvh(tmp_path / 'walk.bvh')
        corpus, report = service.ingest([path])

        assert report.accepted == [path]
        assert report.rejected == [] and report.resampled == []
        assert list(corpus.skeletons) == ['walk']
        entry = corpus.entries[0]
        assert entry.motion.frames.shape == (25, 6, 12)
        assert entry.text.summary == 'walk motion'
        assert entry.text.species_tag == entry.motion.species_tag == 'walk'
        assert validate_corpus(corpus) == {}

    def test_species_override(self, service, tmp_path):
        """Should tag entries with the given species when there is no sidecar."""
        corpus, _ = service.ingest([write_bvh(tmp_path / 'walk.bvh')], species='otter')
        assert corpus.entries[0].text.summary == 'otter motion'
        assert corpus.skeletons['walk'].species == 'otter'

    def test_sidecar(self, service, tmp_path):
        """Should read text fields and species from the JSON next to the file."""
        path = write_bvh(tmp_path / 'wade.bvh')
        with open(sidecar_path(path), 'w') as f:
            json.dump({'summary': 'heron wading', 'detail': 'a heron wades slowly', 'species': 'heron'}, f)
        corpus, _ = service.ingest([path], species='ignored')

        entry = corpus.entries[0]
        assert entry.text.summary == 'heron wading'
        assert entry.text.detail == 'a heron wades slowly'
        assert entry.text.species_tag == 'heron'
        assert corpus.skeletons['wade'].species == 'heron'

    def test_invalid_sidecar(self, service, tmp_path):
        """Should reject a file whose sidecar is not a text record."""
        path = write_bvh(tmp_path / 'bad.bvh')
        with open(sidecar_path(path), 'w') as f:
            json.dump(['not', 'an', 'object'], f)
        corpus, report = service.ingest([path])
        assert corpus.entries == []
        assert 'JSON object' in report.rejected[0].reason

    def test_short_file_rejected(self, service, tmp_path):
        """Should reject sequences shorter than 20 frames."""
        path = write_bvh(tmp_path / 'short.bvh', frames=10)
        corpus, report = service.ingest([path])
        assert corpus.entries == []
        assert report.rejected[0].path == path
        assert 'outside' in report.rejected[0].reason

    def test_short_file_resampled(self, service, tmp_path):
        """Should stretch short sequences to 20 frames when resampling."""
        path = write_bvh(tmp_path / 'short.bvh', frames=10)
        corpus, report = service.ingest([path], resample=True)
        assert report.resampled == [path]
        assert corpus.entries[0].motion.num_frames == 20
        assert validate_corpus(corpus) == {}

    def test_parse_error_names_line(self, service, tmp_path):
        """Should reject a malformed file with the offending line number."""
        path = tmp_path / 'broken.bvh'
        frames = rest_frames(25)
        text = bvh_text(frames).splitlines()
        text[FIRST_FRAME_LINE - 1] = text[FIRST_FRAME_LINE - 1].replace('0.000000', 'abc', 1)
        path.write_text('\n'.join(text) + '\n')

        corpus, report = service.ingest([str(path)])
        assert corpus.entries == []
        assert f"line {FIRST_FRAME_LINE}" in report.rejected[0].reason

    def test_missing_file(self, service, tmp_path):
        """Should reject a path that does not exist."""
        corpus, report = service.ingest([str(tmp_path / 'nope.bvh')])
        assert corpus.entries == []
        assert 'not found' in report.rejected[0].reason

    def test_duplicate_stems(self, service, tmp_path):
        """Should keep both files under distinct skeleton keys."""
        a = write_bvh(tmp_path / 'a' / 'clip.bvh')
        b = write_bvh(tmp_path / 'b' / 'clip.bvh')
        corpus, report = service.ingest([a, b])
        assert report.accepted == [a, b]
        assert list(corpus.skeletons) == ['clip', 'clip_']
        assert [e.skeleton for e in corpus.entries] == ['clip', 'clip_']

    def test_mixed_batch(self, service, tmp_path):
        """Should keep good files when others fail, and split the accepted ones."""
        good = [write_bvh(tmp_path / f"g{i}.bvh") for i in range(4)]
        bad = write_bvh(tmp_path / 'bad.bvh', frames=5)
        corpus, report = service.ingest([*good, bad], seed=1, test_ratio=0.25)
        assert report.accepted == good
        assert [r.path for r in report.rejected] == [bad]
        assert sum(e.split == Split.TEST for e in corpus.entries) == 1

    def test_too_many_joints(self, service, tmp_path):
        """Should reject skeletons above the joint limit with the limit in the reason."""
        path = write_bvh(tmp_path / 'walk.bvh')
        corpus, report = service.ingest([path], max_joints=4)
        assert corpus.entries == []
        assert 'max_joints=4' in report.rejected[0].reason
