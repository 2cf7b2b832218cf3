"""Tests for RvqService."""
import math

import numpy as np
import pytest
import torch

from tests.conftest import tiny_config
from topomotion.exceptions import DimensionError, ValidationError
from topomotion.models.motion import Corpus
from topomotion.services.checkpoint import load_checkpoint, save_checkpoint
from topomotion.services.rvq_service import RvqService, training_entries
from topomotion.skeleton.graph import random_tree


@pytest.fixture
def service():
    return RvqService(tiny_config())


class TestTrain:
    """Tests for RvqService.train."""

    def test_history(self, rvq_checkpoint):
        """Should record one finite loss row per epoch."""
        history = rvq_checkpoint.history['rvq']
        assert [row.epoch for row in history] == [0, 1]
        assert all(math.isfinite(row.loss) and row.reconstruction is not None for row in history)
        assert rvq_checkpoint.epochs['rvq'] == 2
        assert bool(rvq_checkpoint.rvq.quantizer.initialized)

    def test_progress_callback(self, service, corpus, mocker):
        """Should report (stage, epoch, total) after every epoch."""
        callback = mocker.Mock()
        service.train(corpus, progress_callback=callback)
        assert callback.call_args_list == [mocker.call('rvq', 1, 2), mocker.call('rvq', 2, 2)]

    def test_resume_matches_uninterrupted_run(self, service, corpus, rvq_checkpoint, tmp_path):
        """Should reach bitwise-identical weights when resumed from a saved epoch."""
        path = str(tmp_path / 'half.ckpt')
        save_checkpoint(service.train(corpus, epochs=1), path)
        resumed = service.train(corpus, load_checkpoint(path), epochs=2)

        assert resumed.history['rvq'] == rvq_checkpoint.history['rvq']
        expected = rvq_checkpoint.rvq.state_dict()
        for key, value in resumed.rvq.state_dict().items():
            assert torch.equal(value, expected[key]), key

    def test_already_trained(self, service, corpus, rvq_checkpoint, tmp_path, mocker):
        """Should return without training when the epoch target is reached."""
        path = str(tmp_path / 'done.ckpt')
        save_checkpoint(rvq_checkpoint, path)
        checkpoint = load_checkpoint(path)
        callback = mocker.Mock()
        service.train(corpus, checkpoint, progress_callback=callback)
        callback.assert_not_called()
        assert len(checkpoint.history['rvq']) == 2

    def test_empty_corpus(self, service):
        """Should refuse to train on nothing."""
        with pytest.raises(ValidationError, match="empty"):
            service.train(Corpus(skeletons={}, entries=[]))


class TestTrainingEntries:
    """Tests for training_entries."""

    def test_train_split(self, corpus):
        """Should use the train split when it exists."""
        assert training_entries(corpus) == corpus.train_entries()

    def test_fallback_to_all(self, corpus):
        """Should fall back to every entry when nothing is in the train split."""
        only_test = Corpus(skeletons=corpus.skeletons, entries=corpus.test_entries())
        assert training_entries(only_test) == only_test.entries


class TestTokenize:
    """Tests for tokenize and detokenize."""

    def test_token_shape(self, service, rvq_checkpoint, corpus):
        """Should give (levels, ceil(T / downsample)) indices inside the codebook."""
        entry = corpus.entries[0]
        tokens = service.tokenize(rvq_checkpoint, entry.motion, corpus.skeleton_for(entry))
        assert tokens.indices.shape == (2, math.ceil(entry.motion.num_frames / 2))
        assert tokens.indices.min() >= 0 and tokens.indices.max() < 8

    def test_deterministic(self, service, rvq_checkpoint, corpus):
        """Should tokenize the same motion the same way twice."""
        entry = corpus.entries[1]
        skeleton = corpus.skeleton_for(entry)
        assert service.tokenize(rvq_checkpoint, entry.motion, skeleton) == service.tokenize(
            rvq_checkpoint, entry.motion, skeleton
        )

    def test_detokenize_shape(self, service, rvq_checkpoint, corpus):
        """Should decode to the requested frame count on the skeleton's joints."""
        entry = corpus.entries[2]
        skeleton = corpus.skeleton_for(entry)
        tokens = service.tokenize(rvq_checkpoint, entry.motion, skeleton)
        motion = service.detokenize(rvq_checkpoint, tokens, skeleton, entry.motion.num_frames)
        assert motion.frames.shape == entry.motion.frames.shape
        assert np.isfinite(motion.frames).all()

    def test_joint_mismatch(self, service, rvq_checkpoint, corpus):
        """Should reject a motion whose joint count differs from the skeleton."""
        entry = corpus.entries[0]
        other = random_tree(np.random.default_rng(0), entry.motion.num_joints + 1)
        with pytest.raises(DimensionError):
            service.tokenize(rvq_checkpoint, entry.motion, other)


class TestDiagnostics:
    """Tests for reconstruction_error and codebook_usage."""

    def test_reconstruction_error(self, service, rvq_checkpoint, corpus):
        """Should be a finite non-negative mean absolute error."""
        error = service.reconstruction_error(rvq_checkpoint, corpus)
        assert math.isfinite(error) and error >= 0.0

    def test_reconstruction_error_needs_entries(self, service, rvq_checkpoint, corpus):
        """Should refuse an empty entry list."""
        with pytest.raises(ValidationError):
            service.reconstruction_error(rvq_checkpoint, corpus, [])

    def test_codebook_usage(self, service, rvq_checkpoint, corpus):
        """Should give one fraction per level, each in (0, 1]."""
        usage = service.codebook_usage(rvq_checkpoint, corpus)
        assert len(usage) == 2
        assert all(0.0 < u <= 1.0 for u in usage)
