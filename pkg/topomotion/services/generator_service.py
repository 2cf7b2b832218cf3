from typing import NamedTuple

import numpy as np
import torch
from loguru import logger

from topomotion.exceptions import NumericalError, ValidationError
from topomotion.models.config import RunConfig
from topomotion.models.motion import POS, ROT, VEL, Corpus, CorpusEntry, MotionSequence
from topomotion.models.report import EpochLoss
from topomotion.models.skeleton import SkeletonGraph
from topomotion.models.tokens import TokenSequences
from topomotion.motion.features import compute_velocities, scale_positions
from topomotion.motion.rotation import decode_6d, encode_6d
from topomotion.nn.generator import (
    HashedTextEmbedder,
    TextEmbedder,
    cosine_mask_ratio,
    guided_logits,
    mask_tokens,
    masked_loss,
    null_condition_mask,
    remaining_masked,
    residual_loss,
    sample_tokens,
)
from topomotion.nn.skelembed import skeleton_embedding
from topomotion.numerics import DTYPE
from topomotion.services.batching import shuffled_batches
from topomotion.services.checkpoint import Checkpoint
from topomotion.services.rvq_service import ProgressCallback, RvqService, training_entries
from topomotion.skeleton.graph import normalize_skeleton
from topomotion.utils.seeding import seeded, torch_generator
from topomotion.utils.validation import validate_frame_count, validate_joint_count, validate_non_empty

ACCURACY_MASK_RATIO = 0.5


class GenerationResult(NamedTuple):
    motion: MotionSequence
    tokens: TokenSequences


class _Prepared(NamedTuple):
    """Per-entry training inputs computed once before the epoch loop."""
    tokens: list[torch.Tensor]  # (n_i, L)
    texts: torch.Tensor  # (N, d_t)
    skeletons: list[str]


def finalize_motion(m: MotionSequence, scale: float = 1.0) -> MotionSequence:
    """Re-orthonormalize rotations, recompute velocities and undo skeleton normalization."""
    frames = m.frames.copy()
    frames[..., ROT] = encode_6d(decode_6d(frames[..., ROT]))
    frames[..., VEL] = compute_velocities(frames[..., POS])
    cleaned = m.model_copy(update={'frames': frames})
    return cleaned if scale == 1.0 else scale_positions(cleaned, scale)


def _pad_tokens(tokens: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([t.shape[0] for t in tokens])
    n = int(lengths.max())
    padded = torch.zeros(len(tokens), n, tokens[0].shape[1], dtype=torch.long)
    for i, t in enumerate(tokens):
        padded[i, :t.shape[0]] = t
    return padded, torch.arange(n)[None, :] < lengths[:, None]


class GeneratorService:
    """Stage two: condition fusion, masked and residual transformers, and sampling."""

    def __init__(self, config: RunConfig, rvq_service: RvqService, text_embedder: TextEmbedder | None = None):
        self.config = config
        self.rvq_service = rvq_service
        gen = config.generator
        self.text_embedder = text_embedder or HashedTextEmbedder(gen.text_dim, gen.hash_buckets, gen.text_seed)

    def _embed_texts(self, texts: list[str]) -> torch.Tensor:
        return torch.stack([self.text_embedder.embed(t) for t in texts])

    def _skeleton_features(
        self,
        checkpoint: Checkpoint,
        corpus: Corpus,
        keys: list[str],
        use_skeleton_embed: bool,
    ) -> torch.Tensor:
        """(B, d_s) skeleton embeddings, computed once per distinct skeleton; zeros when disabled."""
        if not use_skeleton_embed:
            return torch.zeros(len(keys), self.config.skelembed.out_dim, dtype=DTYPE)
        unique = {key: skeleton_embedding(checkpoint.skelembed, corpus.skeletons[key]) for key in dict.fromkeys(keys)}
        return torch.stack([unique[key] for key in keys])

    def _prepare(self, checkpoint: Checkpoint, corpus: Corpus, entries: list[CorpusEntry]) -> _Prepared:
        use_summary = self.config.generator.use_motion_summary
        tokens = [
            torch.as_tensor(self.rvq_service.tokenize(checkpoint, e.motion, corpus.skeleton_for(e)).indices.T)
            for e in entries
        ]
        texts = self._embed_texts([e.text.prompt(use_summary) for e in entries])
        return _Prepared(tokens, texts, [e.skeleton for e in entries])

    def train(
        self,
        corpus: Corpus,
        checkpoint: Checkpoint,
        epochs: int | None = None,
        progress_callback: ProgressCallback | None = None,
    ) -> Checkpoint:
        """
        Train (or resume) the skeleton embedder, fusion MLP and both transformers.

        Each step masks base tokens at a cosine-scheduled ratio for the masked
        transformer and trains the residual transformer on one uniformly drawn
        level. Conditions are swapped for the null condition with probability
        cfg_dropout_p per sample.

        :raises CheckpointError: If the checkpoint has no RVQ section
        :raises NumericalError: If the loss becomes non-finite
        """
        rvq = checkpoint.require_rvq()
        rvq.eval()
        gen = self.config.generator
        train = self.config.train
        total = epochs if epochs is not None else train.gen_epochs
        entries = training_entries(corpus)
        for entry in entries:
            n = rvq.token_length(entry.motion.num_frames)
            if n > gen.max_tokens:
                raise ValidationError(
                    f"Entry with {entry.motion.num_frames} frames needs {n} tokens, above max_tokens {gen.max_tokens}"
                )

        if not checkpoint.has_generator:
            checkpoint.build_generator(train.seed)
        modules = checkpoint.generator_modules()
        params = [p for m in modules for p in m.parameters()]
        optimizer = torch.optim.AdamW(params, lr=train.learning_rate, weight_decay=train.weight_decay)
        if 'generator' in checkpoint.optimizer_state:
            optimizer.load_state_dict(checkpoint.optimizer_state['generator'])
        start = checkpoint.epochs['generator']
        if start >= total:
            logger.info(f"Generator already trained for {start} epochs; nothing to do")
            return checkpoint

        prepared = self._prepare(checkpoint, corpus, entries)
        mask_id = checkpoint.masked.mask_id
        levels = checkpoint.residual_levels
        for module in modules:
            module.train()

        for epoch in range(start, total):
            generator = torch_generator(train.seed, 'generator', 'batches', epoch)
            sums = np.zeros(3)
            null_count = 0
            batches = shuffled_batches(len(entries), train.batch_size, generator)
            with seeded(train.seed, 'dropout', epoch):
                for indices in batches:
                    tokens, valid = _pad_tokens([prepared.tokens[i] for i in indices])
                    b = len(indices)
                    f_skel = self._skeleton_features(
                        checkpoint, corpus, [prepared.skeletons[i] for i in indices], gen.use_skeleton_embed,
                    )
                    null = null_condition_mask(b, gen.cfg_dropout_p, generator)
                    null_count += int(null.sum())
                    cond = checkpoint.fusion(prepared.texts[indices], f_skel, null)

                    ratio = cosine_mask_ratio(torch.rand(b, generator=generator, dtype=DTYPE))
                    base = tokens[..., 0]
                    masked_in, masked = mask_tokens(base, ratio, generator, mask_id, valid)
                    m_loss = masked_loss(checkpoint.masked(masked_in, cond, valid), base, masked)

                    r_loss = torch.zeros((), dtype=DTYPE)
                    if levels:
                        level = int(torch.randint(1, levels + 1, (1,), generator=generator))
                        logits = checkpoint.residual(tokens, level, cond, valid)
                        r_loss = residual_loss(logits, tokens[..., level], level, levels, valid)

                    loss = m_loss + r_loss
                    if not torch.isfinite(loss):
                        raise NumericalError(
                            f"Generator loss became non-finite at epoch {epoch} "
                            f"(masked {m_loss.item()}, residual {r_loss.item()})"
                        )
                    optimizer.zero_grad()
                    loss.backward()
                    optimizer.step()
                    sums += [loss.item(), m_loss.item(), r_loss.item()]

            means = sums / len(batches)
            null_fraction = null_count / len(entries)
            checkpoint.history['generator'].append(EpochLoss(
                epoch=epoch, loss=means[0], masked=means[1], residual=means[2], null_fraction=null_fraction,
            ))
            checkpoint.epochs['generator'] = epoch + 1
            logger.info(
                f"generator epoch {epoch + 1}/{total}: loss {means[0]:.6f} masked {means[1]:.6f} "
                f"residual {means[2]:.6f} null {null_fraction:.2f}"
            )
            if progress_callback:
                progress_callback('generator', epoch + 1, total)

        checkpoint.optimizer_state['generator'] = optimizer.state_dict()
        for module in modules:
            module.eval()
        return checkpoint

    def _conditions(
        self,
        checkpoint: Checkpoint,
        text: str,
        skeleton: SkeletonGraph,
        use_skeleton_embed: bool,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        f_text = self.text_embedder.embed(text)[None]
        if use_skeleton_embed:
            f_skel = skeleton_embedding(checkpoint.skelembed, skeleton)[None]
        else:
            f_skel = torch.zeros(1, self.config.skelembed.out_dim, dtype=DTYPE)
        cond = checkpoint.fusion(f_text, f_skel)
        null = checkpoint.fusion(f_text, f_skel, torch.ones(1, dtype=torch.bool))
        return cond, null

    @torch.no_grad()
    def generate(
        self,
        checkpoint: Checkpoint,
        text: str,
        skeleton: SkeletonGraph,
        num_frames: int,
        seed: int,
        cfg_scale: float | None = None,
        temperature: float | None = None,
        use_skeleton_embed: bool | None = None,
        fps: float = 20.0,
    ) -> GenerationResult:
        """
        Sample a motion for ``text`` on ``skeleton``.

        Base tokens start fully masked and are revealed over unmask_iters rounds,
        keeping the most confident predictions and re-masking the rest on a
        cosine schedule. Residual levels follow, one argmax pass per level. Both
        transformers combine conditional and null logits with guidance.

        :param num_frames: Output length T, in [20, 240]
        :param seed: Sampling seed; equal inputs and seed give identical output
        :raises ValidationError: If text is blank, num_frames is out of range, or the skeleton
            has more joints than the RVQ model supports
        :raises CheckpointError: If the checkpoint lacks trained sections
        """
        validate_non_empty(text, "text")
        validate_frame_count(num_frames)
        checkpoint.require_generator()
        validate_joint_count(skeleton.num_joints, checkpoint.config.rvq.max_joints)
        gen = self.config.generator
        scale = gen.cfg_scale if cfg_scale is None else cfg_scale
        temperature = gen.temperature if temperature is None else temperature
        use_skeleton_embed = gen.use_skeleton_embed if use_skeleton_embed is None else use_skeleton_embed
        for module in checkpoint.sections().values():
            module.eval()

        normalized, factor = normalize_skeleton(skeleton)
        rvq = checkpoint.rvq
        n = rvq.token_length(num_frames)
        cond, null = self._conditions(checkpoint, text, normalized, use_skeleton_embed)
        generator = torch_generator(seed, 'generate')

        mask_id = checkpoint.masked.mask_id
        base = torch.full((1, n), mask_id, dtype=torch.long)
        iterations = gen.unmask_iters
        for step in range(iterations):
            still_masked = base == mask_id
            logits = guided_logits(checkpoint.masked(base, cond), checkpoint.masked(base, null), scale)
            sampled, confidence = sample_tokens(logits, temperature, generator)
            predicted = torch.where(still_masked, sampled, base)
            keep = 0 if step == iterations - 1 else remaining_masked(n, step, iterations)
            base = predicted
            if keep:
                confidence = confidence.masked_fill(~still_masked, torch.inf)
                remask = confidence[0].argsort(stable=True)[:keep]
                base[0, remask] = mask_id

        levels = [base]
        for level in range(1, checkpoint.residual_levels + 1):
            so_far = torch.stack(levels, dim=-1)
            logits = guided_logits(
                checkpoint.residual(so_far, level, cond), checkpoint.residual(so_far, level, null), scale,
            )
            levels.append(logits.argmax(dim=-1))
        tokens = torch.stack(levels, dim=-1)[0]

        raw = self.rvq_service.detokenize(checkpoint, tokens, normalized, num_frames, fps)
        motion = finalize_motion(raw, 1.0 / factor)
        logger.debug(f"Generated {num_frames} frames on {skeleton.name!r} for {text!r} (seed {seed})")
        return GenerationResult(motion, TokenSequences(indices=tokens.T.numpy(), codes_per_level=rvq.quantizer.codes))

    @torch.no_grad()
    def masked_token_accuracy(
        self,
        checkpoint: Checkpoint,
        corpus: Corpus,
        seed: int,
        entries: list[CorpusEntry] | None = None,
        ratio: float = ACCURACY_MASK_RATIO,
        use_skeleton_embed: bool | None = None,
        use_motion_summary: bool | None = None,
    ) -> float:
        """
        Fraction of masked base tokens the masked transformer recovers by argmax.

        Defaults to the test split (all entries if it is empty). Masks are drawn
        from (seed, entry index) so different models see identical masks. The
        skeleton-embedding and motion-summary switches default to the generator config.
        """
        checkpoint.require_generator()
        gen = self.config.generator
        use_skeleton_embed = gen.use_skeleton_embed if use_skeleton_embed is None else use_skeleton_embed
        if entries is None:
            entries = corpus.test_entries() or list(corpus.entries)
        for module in checkpoint.sections().values():
            module.eval()
        use_summary = gen.use_motion_summary if use_motion_summary is None else use_motion_summary
        correct, total = 0, 0
        for i, entry in enumerate(entries):
            skeleton = corpus.skeleton_for(entry)
            base = torch.as_tensor(self.rvq_service.tokenize(checkpoint, entry.motion, skeleton).indices[0])[None]
            cond, _ = self._conditions(checkpoint, entry.text.prompt(use_summary), skeleton, use_skeleton_embed)
            generator = torch_generator(seed, 'accuracy', i)
            masked_in, masked = mask_tokens(base, ratio, generator, checkpoint.masked.mask_id)
            predicted = checkpoint.masked(masked_in, cond).argmax(dim=-1)
            correct += int((predicted[masked] == base[masked]).sum())
            total += int(masked.sum())
        return correct / total if total else 0.0

