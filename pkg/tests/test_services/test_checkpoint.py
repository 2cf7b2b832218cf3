"""Tests for checkpoint save and load."""
import pytest
import torch

from tests.conftest import tiny_config
from topomotion.exceptions import CheckpointError, DataFormatError
from topomotion.motion.corpus import save_corpus
from topomotion.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from topomotion.utils.container import write_container


def assert_same_state(a: torch.nn.Module, b: torch.nn.Module) -> None:
    left, right = a.state_dict(), b.state_dict()
    assert left.keys() == right.keys()
    for key in left:
        assert torch.equal(left[key], right[key]), key


class TestRoundTrip:
    """Tests for save_checkpoint and load_checkpoint."""

    def test_rvq_section(self, rvq_checkpoint, tmp_path):
        """Should restore RVQ weights, buffers, counters and history exactly."""
        path = str(tmp_path / 'rvq.ckpt')
        checksum = save_checkpoint(rvq_checkpoint, path)
        loaded = load_checkpoint(path)

        assert len(checksum) == 64
        assert loaded.sections().keys() == {'rvq'}
        assert_same_state(loaded.rvq, rvq_checkpoint.rvq)
        assert loaded.epochs == rvq_checkpoint.epochs
        assert loaded.history == rvq_checkpoint.history
        assert loaded.config == rvq_checkpoint.config
        assert not loaded.has_generator

    def test_optimizer_state(self, rvq_checkpoint, tmp_path):
        """Should restore Adam moments under the same parameter indices."""
        path = str(tmp_path / 'rvq.ckpt')
        save_checkpoint(rvq_checkpoint, path)
        original = rvq_checkpoint.optimizer_state['rvq']
        restored = load_checkpoint(path).optimizer_state['rvq']

        for group, stored in zip(original['param_groups'], restored['param_groups']):
            assert stored['params'] == group['params']
            assert stored['lr'] == group['lr']
        assert restored['state'].keys() == original['state'].keys()
        for index, values in original['state'].items():
            for key, value in values.items():
                assert torch.equal(restored['state'][index][key], torch.as_tensor(value)), (index, key)

    def test_generator_sections(self, trained_checkpoint, tmp_path):
        """Should restore every generator module."""
        path = str(tmp_path / 'full.ckpt')
        save_checkpoint(trained_checkpoint, path)
        loaded = load_checkpoint(path)

        assert loaded.has_generator
        assert loaded.sections().keys() == trained_checkpoint.sections().keys()
        for name, module in trained_checkpoint.sections().items():
            assert_same_state(getattr(loaded, name), module)


class TestErrors:
    """Tests for incomplete or foreign checkpoint files."""

    def test_require_rvq(self):
        """Should name the missing stage."""
        with pytest.raises(CheckpointError, match="train-rvq"):
            Checkpoint(tiny_config()).require_rvq()

    def test_require_generator(self, rvq_checkpoint):
        """Should refuse an RVQ-only checkpoint."""
        with pytest.raises(CheckpointError, match="train-gen"):
            rvq_checkpoint.require_generator()

    def test_corpus_file(self, corpus, tmp_path):
        """Should reject a container of another kind."""
        path = str(tmp_path / 'corpus.bin')
        save_corpus(corpus, path)
        with pytest.raises(DataFormatError, match="expected 'checkpoint'"):
            load_checkpoint(path)

    def test_section_without_tensors(self, tmp_path):
        """Should reject a section whose tensors are missing."""
        path = str(tmp_path / 'empty.ckpt')
        meta = {
            'config': tiny_config().model_dump(mode='json'),
            'sections': ['rvq'],
            'epochs': {},
            'history': {},
        }
        write_container(path, 'checkpoint', meta, {})
        with pytest.raises(CheckpointError, match="does not match"):
            load_checkpoint(path)

    def test_missing_config(self, tmp_path):
        """Should reject metadata without a run configuration."""
        path = str(tmp_path / 'noconfig.ckpt')
        write_container(path, 'checkpoint', {'sections': []}, {})
        with pytest.raises(CheckpointError, match="invalid metadata"):
            load_checkpoint(path)


class TestResetGenerator:
    """Tests for Checkpoint.reset_generator."""

    def test_keeps_rvq(self, trained_checkpoint, tmp_path):
        """Should drop generator sections, optimizer state and history only."""
        path = str(tmp_path / 'full.ckpt')
        save_checkpoint(trained_checkpoint, path)
        checkpoint = load_checkpoint(path)
        checkpoint.reset_generator()

        assert checkpoint.sections().keys() == {'rvq'}
        assert 'generator' not in checkpoint.optimizer_state
        assert 'rvq' in checkpoint.optimizer_state
        assert checkpoint.epochs['generator'] == 0
        assert checkpoint.history['generator'] == []
        assert checkpoint.history['rvq'] == trained_checkpoint.history['rvq']
