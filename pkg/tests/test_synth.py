"""Tests for the procedural synthetic corpus."""
import numpy as np
import pytest

from topomotion.exceptions import ValidationError
from topomotion.models.motion import Split
from topomotion.motion.corpus import validate_corpus
from topomotion.motion.rotation import decode_6d, forward_yaw
from topomotion.motion.synth import MOTION_CLASSES, assign_splits, species_name, synth_corpus
from topomotion.skeleton.graph import chain_lengths


class TestSynthCorpus:
    """Tests for synth_corpus."""

    def test_shape_of_corpus(self, corpus):
        """Should give one skeleton per species and seqs_per_species entries each."""
        assert list(corpus.skeletons) == ['fox', 'heron', 'lizard']
        assert len(corpus.entries) == 9
        assert [s.sequences for s in corpus.stats()] == [3, 3, 3]

    def test_deterministic(self):
        """Should reproduce the corpus from the same seed."""
        a = synth_corpus(seed=5, n_species=2, seqs_per_species=2, joint_range=(4, 8), frame_range=(20, 25))
        b = synth_corpus(seed=5, n_species=2, seqs_per_species=2, joint_range=(4, 8), frame_range=(20, 25))
        assert a == b

    def test_seed_changes_corpus(self):
        """Should differ under a different seed."""
        a = synth_corpus(seed=5, n_species=2, seqs_per_species=2, joint_range=(4, 8), frame_range=(20, 25))
        b = synth_corpus(seed=6, n_species=2, seqs_per_species=2, joint_range=(4, 8), frame_range=(20, 25))
        assert a != b

    def test_ranges_respected(self, corpus):
        """Should keep joint and frame counts inside the requested ranges."""
        for entry in corpus.entries:
            skeleton = corpus.skeleton_for(entry)
            assert 4 <= skeleton.num_joints <= 6
            assert 20 <= entry.motion.num_frames <= 30
            assert entry.motion.num_joints == skeleton.num_joints

    def test_skeletons_normalized(self, corpus):
        """Should normalize each species' longest chain to unit length."""
        for skeleton in corpus.skeletons.values():
            assert chain_lengths(skeleton).max() == pytest.approx(1.0)

    def test_entries_are_valid(self, corpus):
        """Should pass every motion invariant."""
        assert validate_corpus(corpus) == {}

    def test_entries_are_aligned(self, corpus):
        """Should start every sequence at the origin facing +Z."""
        for entry in corpus.entries:
            assert np.allclose(entry.motion.positions[0, 0], 0.0, atol=1e-12)
            yaw = forward_yaw(decode_6d(entry.motion.rotations[0, 0]))
            assert yaw is None or abs(yaw) < 1e-9

    def test_text_records(self, corpus):
        """Should describe species and motion class in the text."""
        for entry in corpus.entries:
            text = entry.text
            assert text.motion_class in MOTION_CLASSES
            assert text.species_tag == entry.skeleton
            assert text.summary == f"{entry.skeleton} {text.motion_class}"
            assert text.detail.startswith(f"a {entry.skeleton} ")

    def test_split_count(self, corpus):
        """Should put round(9 * 0.34) = 3 entries in the test split."""
        assert len(corpus.test_entries()) == 3
        assert len(corpus.train_entries()) == 6

    @pytest.mark.parametrize('kwargs', [
        {'n_species': 1},
        {'seqs_per_species': 0},
        {'joint_range': (2, 5)},
        {'joint_range': (9, 5)},
        {'frame_range': (10, 30)},
        {'frame_range': (30, 20)},
    ])
    def test_invalid_arguments(self, kwargs):
        """Should reject out-of-range arguments."""
        params = {'seed': 0, 'n_species': 2, 'seqs_per_species': 1, **kwargs}
        with pytest.raises(ValidationError):
            synth_corpus(**params)


class TestAssignSplits:
    """Tests for assign_splits."""

    @pytest.mark.parametrize('count, ratio, expected', [(100, 0.05, 5), (10, 0.25, 3), (7, 0.0, 0), (3, 0.5, 2)])
    def test_rounding(self, count, ratio, expected):
        """Should send floor(count * ratio + 0.5) entries to TEST."""
        assert assign_splits(count, seed=1, test_ratio=ratio).count(Split.TEST) == expected

    def test_seeded(self):
        """Should repeat under the same seed."""
        assert assign_splits(40, seed=3) == assign_splits(40, seed=3)

    def test_bad_ratio(self):
        """Should reject ratios outside [0, 1)."""
        with pytest.raises(ValidationError):
            assign_splits(10, seed=0, test_ratio=1.0)


class TestSpeciesName:
    """Tests for species_name."""

    def test_wraps_with_suffix(self):
        """Should suffix names once the base list is exhausted."""
        assert species_name(0) == 'fox'
        assert species_name(16) == 'fox1'
