"""Metric reports for a trained checkpoint and the paired-seed skeleton-embedding ablation."""
import math

import numpy as np
import torch
import torch.nn.functional as F
from loguru import logger
from scipy.stats import ttest_rel
from torch import nn

from topomotion.exceptions import ValidationError
from topomotion.metrics import diversity, fid, matching_score, multimodality, r_precision
from topomotion.models.config import MetricConfig, RunConfig
from topomotion.models.motion import FEATURE_DIM, Corpus, CorpusEntry, MotionSequence
from topomotion.models.report import AblationReport, MetricReport
from topomotion.nn.generator import HashedTextEmbedder
from topomotion.numerics import DTYPE, gelu
from topomotion.services.checkpoint import Checkpoint
from topomotion.services.generator_service import GeneratorService
from topomotion.services.rvq_service import RvqService
from topomotion.utils.seeding import derive_seed, numpy_rng, seeded

INFO_NCE_TEMPERATURE = 0.1
_HIDDEN = 64


def motion_summary_features(m: MotionSequence) -> torch.Tensor:
    """(T, 2d) per-frame mean and std over joints; independent of joint count and order."""
    frames = torch.as_tensor(m.frames, dtype=DTYPE)
    return torch.cat([frames.mean(dim=1), frames.std(dim=1, unbiased=False)], dim=-1)


class EvalEmbedder(nn.Module):
    """Text and motion towers mapping into one unit-norm embedding space."""

    def __init__(self, text_dim: int, embed_dim: int) -> None:
        super().__init__()
        self.text_fc1 = nn.Linear(text_dim, _HIDDEN)
        self.text_fc2 = nn.Linear(_HIDDEN, embed_dim)
        self.motion_conv = nn.Conv1d(2 * FEATURE_DIM, _HIDDEN, 3, padding=1)
        self.motion_fc = nn.Linear(_HIDDEN, embed_dim)
        self.to(DTYPE)

    def text_forward(self, f_text: torch.Tensor) -> torch.Tensor:
        return F.normalize(self.text_fc2(gelu(self.text_fc1(f_text))), dim=-1)

    def motion_forward(self, summary: torch.Tensor) -> torch.Tensor:
        """(T, 2d) -> (e,)"""
        h = gelu(self.motion_conv(summary.T[None]))[0].mean(dim=-1)
        return F.normalize(self.motion_fc(h), dim=-1)


class EvalEmbedderPair:
    """Frozen evaluation embedder exposing numpy text and motion encoders."""

    def __init__(self, model: EvalEmbedder, text_embedder: HashedTextEmbedder) -> None:
        self.model = model.eval()
        self.text_embedder = text_embedder

    @torch.no_grad()
    def embed_text(self, text: str) -> np.ndarray:
        return self.model.text_forward(self.text_embedder.embed(text)).numpy()

    @torch.no_grad()
    def embed_motion(self, m: MotionSequence) -> np.ndarray:
        return self.model.motion_forward(motion_summary_features(m)).numpy()

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        return np.stack([self.embed_text(t) for t in texts])

    def embed_motions(self, motions: list[MotionSequence]) -> np.ndarray:
        return np.stack([self.embed_motion(m) for m in motions])


def train_eval_embedder(
    corpus: Corpus,
    config: MetricConfig,
    seed: int,
    text_dim: int = 64,
    use_summary: bool = True,
) -> EvalEmbedderPair:
    """
    Fit the evaluation embedder with a symmetric InfoNCE objective over all
    (prompt, motion) pairs of the train split.

    :raises ValidationError: If the corpus is empty
    """
    entries = corpus.train_entries() or list(corpus.entries)
    if not entries:
        raise ValidationError("Cannot train an evaluation embedder on an empty corpus")
    classes = {e.text.motion_class for e in entries}
    if len(classes) < 2:
        logger.warning(f"Corpus has a single motion class {classes}; evaluation metrics are weakly informative")

    text_embedder = HashedTextEmbedder(text_dim, seed=derive_seed(seed, 'eval-text'))
    texts = torch.stack([text_embedder.embed(e.text.prompt(use_summary)) for e in entries])
    summaries = [motion_summary_features(e.motion) for e in entries]
    with seeded(seed, 'eval-embedder', 'init'):
        model = EvalEmbedder(text_dim, config.embed_dim)
    optimizer = torch.optim.AdamW(model.parameters(), lr=1e-3)
    targets = torch.arange(len(entries))
    for epoch in range(config.embedder_epochs):
        text_emb = model.text_forward(texts)
        motion_emb = torch.stack([model.motion_forward(s) for s in summaries])
        logits = text_emb @ motion_emb.T / INFO_NCE_TEMPERATURE
        loss = 0.5 * (F.cross_entropy(logits, targets) + F.cross_entropy(logits.T, targets))
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        if (epoch + 1) % 50 == 0:
            logger.debug(f"eval embedder epoch {epoch + 1}: InfoNCE {loss.item():.4f}")

    pair = EvalEmbedderPair(model, text_embedder)
    held_out = corpus.test_entries()
    if len(held_out) >= 2:
        pool = min(config.pool_size, len(held_out))
        r1 = r_precision(
            pair.embed_texts([e.text.prompt(use_summary) for e in held_out]),
            pair.embed_motions([e.motion for e in held_out]),
            pool_size=pool,
            seed=seed,
        )[1]
        logger.info(f"Evaluation embedder held-out R@1 {r1:.3f} (chance {1 / pool:.3f})")
    return pair


class EvaluationService:
    """Metric reports and the skeleton-embedding ablation."""

    def __init__(self, config: RunConfig, rvq_service: RvqService, generator_service: GeneratorService):
        self.config = config
        self.rvq_service = rvq_service
        self.generator_service = generator_service

    def _eval_entries(self, corpus: Corpus) -> list[CorpusEntry]:
        entries = corpus.test_entries()
        if len(entries) < 2:
            logger.warning(f"Test split has {len(entries)} entries; evaluating on all {len(corpus.entries)}")
            entries = list(corpus.entries)
        if len(entries) < 2:
            raise ValidationError("Evaluation needs at least 2 corpus entries")
        return entries

    def evaluate(
        self,
        checkpoint: Checkpoint,
        corpus: Corpus,
        embedder: EvalEmbedderPair | None = None,
        seed: int | None = None,
        cfg_scale: float | None = None,
        use_skeleton_embed: bool | None = None,
        use_motion_summary: bool | None = None,
    ) -> MetricReport:
        """
        Generate one motion per evaluation entry and score it against the real motions.

        :raises CheckpointError: If the checkpoint lacks trained sections
        """
        checkpoint.require_generator()
        metrics = self.config.metrics
        gen = self.config.generator
        seed = metrics.seed if seed is None else seed
        scale = gen.cfg_scale if cfg_scale is None else cfg_scale
        use_skel = gen.use_skeleton_embed if use_skeleton_embed is None else use_skeleton_embed
        use_summary = gen.use_motion_summary if use_motion_summary is None else use_motion_summary

        entries = self._eval_entries(corpus)
        if embedder is None:
            embedder = train_eval_embedder(corpus, metrics, seed, gen.text_dim, use_summary)

        def generate(index: int, gen_seed: int) -> MotionSequence:
            entry = entries[index]
            return self.generator_service.generate(
                checkpoint,
                entry.text.prompt(use_summary),
                corpus.skeleton_for(entry),
                entry.motion.num_frames,
                gen_seed,
                cfg_scale=scale,
                use_skeleton_embed=use_skel,
                fps=entry.motion.fps,
            ).motion

        generated = [generate(i, derive_seed(seed, 'evaluate', i)) for i in range(len(entries))]
        real_feats = embedder.embed_motions([e.motion for e in entries])
        gen_feats = embedder.embed_motions(generated)
        text_feats = embedder.embed_texts([e.text.prompt(use_summary) for e in entries])

        count = len(entries)
        shrinkage = metrics.shrinkage
        if count <= metrics.embed_dim and not shrinkage:
            logger.warning(f"Only {count} items for {metrics.embed_dim}-dim embeddings; enabling covariance shrinkage")
            shrinkage = True
        pool = min(metrics.pool_size, count)
        prompts = list(range(min(metrics.mm_prompts, count)))

        report = MetricReport(
            fid=fid(real_feats, gen_feats, shrinkage),
            diversity=diversity(gen_feats, metrics.diversity_pairs, seed),
            matching_score=matching_score(text_feats, gen_feats),
            multimodality=multimodality(
                generate, prompts, metrics.mm_reps, seed, embed_fn=embedder.embed_motion,
            ),
            r_at=r_precision(text_feats, gen_feats, pool, seed),
            fid_real_vs_real=self._real_vs_real(real_feats, seed),
            fid_random_vs_real=fid(real_feats, self._random_feats(embedder, entries, seed), True),
            masked_token_accuracy=self.generator_service.masked_token_accuracy(
                checkpoint, corpus, seed, entries, use_skeleton_embed=use_skel, use_motion_summary=use_summary,
            ),
            pool_size=pool,
            seed=seed,
            num_real=count,
            num_generated=len(generated),
            shrinkage=shrinkage,
            use_skeleton_embed=use_skel,
            use_motion_summary=use_summary,
            cfg_scale=scale,
        )
        logger.info(
            f"FID {report.fid:.4f} (real/real {report.fid_real_vs_real}, random/real {report.fid_random_vs_real:.4f}) "
            f"R@1 {report.r_at[1]:.3f} matching {report.matching_score:.4f}"
        )
        return report

    @staticmethod
    def _real_vs_real(real_feats: np.ndarray, seed: int) -> float | None:
        """FID between two seeded halves of the real set, with shrinkage."""
        if len(real_feats) < 4:
            return None
        order = numpy_rng(seed, 'real-halves').permutation(len(real_feats))
        half = len(order) // 2
        return fid(real_feats[order[:half]], real_feats[order[half:2 * half]], True)

    @staticmethod
    def _random_feats(embedder: EvalEmbedderPair, entries: list[CorpusEntry], seed: int) -> np.ndarray:
        """Embeddings of Gaussian-noise motions shaped like each entry."""
        rng = numpy_rng(seed, 'random-motion')
        noise = [
            MotionSequence(frames=rng.normal(size=e.motion.frames.shape), fps=e.motion.fps) for e in entries
        ]
        return embedder.embed_motions(noise)

    def run_skeleton_ablation(
        self,
        corpus: Corpus,
        seeds: list[int],
        checkpoint: Checkpoint | None = None,
    ) -> AblationReport:
        """
        Paired comparison of held-out masked-token accuracy with and without the skeleton embedding.

        One RVQ model (from ``checkpoint`` or trained here) is shared; for every
        seed a full and an ablated generator are trained and scored on the same
        masks. A one-sided paired t-test checks that the full model is better.

        :raises ValidationError: If fewer than two seeds are given
        """
        if len(seeds) < 2:
            raise ValidationError(f"The ablation needs at least 2 seeds, got {len(seeds)}")
        if checkpoint is None or checkpoint.rvq is None:
            checkpoint = self.rvq_service.train(corpus)
        rvq = checkpoint.require_rvq()

        scores: dict[bool, list[float]] = {True: [], False: []}
        for seed in seeds:
            for use_skel in (True, False):
                config = self.config.model_copy(deep=True)
                config.train.seed = seed
                config.generator.use_skeleton_embed = use_skel
                run = Checkpoint(config)
                run.rvq = rvq
                service = GeneratorService(config, self.rvq_service, self.generator_service.text_embedder)
                service.train(corpus, run)
                accuracy = service.masked_token_accuracy(run, corpus, seed)
                scores[use_skel].append(accuracy)
                logger.info(f"ablation seed {seed} skeleton_embed={use_skel}: accuracy {accuracy:.4f}")

        full, ablated = scores[True], scores[False]
        differences = np.subtract(full, ablated)
        result = ttest_rel(full, ablated, alternative='greater')
        t_stat, p_value = float(result.statistic), float(result.pvalue)
        finite = math.isfinite(t_stat) and math.isfinite(p_value)
        return AblationReport(
            seeds=list(seeds),
            full=full,
            ablated=ablated,
            mean_difference=float(differences.mean()),
            t_statistic=t_stat if finite else None,
            p_value=p_value if finite else None,
            significant=finite and p_value < 0.05,
        )
