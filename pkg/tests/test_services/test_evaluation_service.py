"""Tests for the evaluation embedder, metric report and skeleton ablation."""
import numpy as np
import pytest
import torch

from tests.conftest import tiny_config
from topomotion.exceptions import ValidationError
from topomotion.services.evaluation_service import EvaluationService, motion_summary_features, train_eval_embedder
from topomotion.services.generator_service import GeneratorService
from topomotion.services.rvq_service import RvqService


@pytest.fixture
def service():
    config = tiny_config()
    rvq_service = RvqService(config)
    return EvaluationService(config, rvq_service, GeneratorService(config, rvq_service))


@pytest.fixture(scope='module')
def embedder(corpus):
    config = tiny_config()
    return train_eval_embedder(corpus, config.metrics, seed=0, text_dim=config.generator.text_dim)


class TestMotionSummaryFeatures:
    """Tests for motion_summary_features."""

    def test_shape(self, corpus):
        """Should give a (T, 24) mean-and-std summary."""
        motion = corpus.entries[0].motion
        assert motion_summary_features(motion).shape == (motion.num_frames, 24)

    def test_joint_order_invariant(self, corpus):
        """Should not depend on the order joints are stored in."""
        motion = corpus.entries[0].motion
        order = np.random.default_rng(0).permutation(motion.num_joints)
        shuffled = motion.model_copy(update={'frames': motion.frames[:, order]})
        assert torch.allclose(motion_summary_features(shuffled), motion_summary_features(motion), atol=1e-12)


class TestEvalEmbedder:
    """Tests for train_eval_embedder."""

    def test_unit_norm_embeddings(self, embedder, corpus):
        """Should embed texts and motions on the unit sphere."""
        texts = embedder.embed_texts([e.text.prompt() for e in corpus.entries])
        motions = embedder.embed_motions([e.motion for e in corpus.entries])
        assert texts.shape == motions.shape == (len(corpus.entries), 4)
        assert np.allclose(np.linalg.norm(texts, axis=1), 1.0)
        assert np.allclose(np.linalg.norm(motions, axis=1), 1.0)

    def test_seeded(self, embedder, corpus):
        """Should train to the same weights for the same seed."""
        config = tiny_config()
        again = train_eval_embedder(corpus, config.metrics, seed=0, text_dim=config.generator.text_dim)
        motion = corpus.entries[0].motion
        assert np.array_equal(again.embed_motion(motion), embedder.embed_motion(motion))


class TestEvaluate:
    """Tests for EvaluationService.evaluate."""

    def test_report(self, service, trained_checkpoint, corpus, embedder):
        """Should score the three-entry test split with shrinkage and a reduced pool."""
        report = service.evaluate(trained_checkpoint, corpus, embedder, seed=0)
        assert report.num_real == report.num_generated == 3
        assert report.shrinkage
        assert report.pool_size == 3
        assert report.fid_real_vs_real is None
        assert report.fid >= 0.0 and report.fid_random_vs_real >= 0.0
        assert report.r_at[1] <= report.r_at[2] <= report.r_at[3] == 1.0
        assert 0.0 <= report.masked_token_accuracy <= 1.0
        assert report.cfg_scale == tiny_config().generator.cfg_scale

    def test_deterministic(self, service, trained_checkpoint, corpus, embedder):
        """Should reproduce the report for the same seed."""
        a = service.evaluate(trained_checkpoint, corpus, embedder, seed=2)
        b = service.evaluate(trained_checkpoint, corpus, embedder, seed=2)
        assert a == b

    def test_flags_recorded(self, service, trained_checkpoint, corpus, embedder):
        """Should record the ablation switches it ran with."""
        report = service.evaluate(
            trained_checkpoint, corpus, embedder, seed=0, cfg_scale=1.0, use_skeleton_embed=False,
        )
        assert not report.use_skeleton_embed
        assert report.cfg_scale == 1.0

    def test_summary_switch_reaches_token_accuracy(self, service, trained_checkpoint, corpus, embedder, mocker):
        """Should score masked-token accuracy on the same detail-only prompts as the other metrics."""
        accuracy = mocker.spy(service.generator_service, 'masked_token_accuracy')
        report = service.evaluate(trained_checkpoint, corpus, embedder, seed=0, use_motion_summary=False)
        assert not report.use_motion_summary
        assert accuracy.call_args.kwargs['use_motion_summary'] is False
        assert report.masked_token_accuracy == service.generator_service.masked_token_accuracy(
            trained_checkpoint, corpus, 0, corpus.test_entries(), use_motion_summary=False,
        )


class TestSkeletonAblation:
    """Tests for EvaluationService.run_skeleton_ablation."""

    def test_needs_two_seeds(self, service, corpus, rvq_checkpoint):
        """Should refuse a single seed."""
        with pytest.raises(ValidationError, match="2 seeds"):
            service.run_skeleton_ablation(corpus, [0], rvq_checkpoint)

    def test_paired_report(self, service, corpus, rvq_checkpoint):
        """Should score a full and an ablated generator per seed on a shared RVQ."""
        before = {k: v.clone() for k, v in rvq_checkpoint.rvq.state_dict().items()}
        report = service.run_skeleton_ablation(corpus, [0, 1], rvq_checkpoint)

        assert report.seeds == [0, 1]
        assert len(report.full) == len(report.ablated) == 2
        assert all(0.0 <= a <= 1.0 for a in report.full + report.ablated)
        assert report.mean_difference == pytest.approx(np.mean(np.subtract(report.full, report.ablated)))
        assert report.p_value is None or 0.0 <= report.p_value <= 1.0
        for key, value in rvq_checkpoint.rvq.state_dict().items():
            assert torch.equal(value, before[key]), key
