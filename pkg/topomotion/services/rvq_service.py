from collections.abc import Callable

import numpy as np
import torch
from loguru import logger

from topomotion.exceptions import DimensionError, NumericalError, ValidationError
from topomotion.models.config import RunConfig
from topomotion.models.motion import Corpus, CorpusEntry, MotionSequence
from topomotion.models.report import EpochLoss
from topomotion.models.skeleton import SkeletonGraph
from topomotion.models.tokens import TokenSequences
from topomotion.nn.rvq import RvqModel, commitment_weights, log_codebook_usage, motion_mask, rvq_loss
from topomotion.numerics import DTYPE
from topomotion.services.batching import collate, feature_statistics, shuffled_batches
from topomotion.services.checkpoint import Checkpoint
from topomotion.skeleton.graph import joint_features
from topomotion.utils.seeding import torch_generator

ProgressCallback = Callable[[str, int, int], None]


def training_entries(corpus: Corpus) -> list[CorpusEntry]:
    """Train split, or every entry when the corpus has no train split."""
    if not corpus.entries:
        raise ValidationError("Cannot train on an empty corpus")
    entries = corpus.train_entries()
    if not entries:
        logger.warning("Corpus has no train split; training on all entries")
        entries = list(corpus.entries)
    return entries


def _skeleton_tensors(s: SkeletonGraph) -> tuple[torch.Tensor, torch.Tensor]:
    feats = torch.as_tensor(joint_features(s), dtype=DTYPE)[None]
    return feats, torch.ones(1, s.num_joints, dtype=torch.bool)


class RvqService:
    """Stage one: train the residual VQ-VAE and convert motion to and from tokens."""

    def __init__(self, config: RunConfig):
        self.config = config

    def train(
        self,
        corpus: Corpus,
        checkpoint: Checkpoint | None = None,
        epochs: int | None = None,
        progress_callback: ProgressCallback | None = None,
    ) -> Checkpoint:
        """
        Train (or resume training) the RVQ model.

        Every epoch draws its batch order from (seed, epoch), so resuming from a
        checkpoint saved after epoch k continues exactly as an uninterrupted run.

        :param corpus: Training corpus
        :param checkpoint: Checkpoint to resume; a fresh one is built when None
        :param epochs: Total epoch count to reach (default config.train.rvq_epochs)
        :param progress_callback: Optional callback(stage, epoch, total)
        :return: The checkpoint holding the trained model, history and optimizer state
        :raises ValidationError: If the corpus is empty
        :raises NumericalError: If the loss becomes non-finite
        """
        train = self.config.train
        total = epochs if epochs is not None else train.rvq_epochs
        entries = training_entries(corpus)

        if checkpoint is None or checkpoint.rvq is None:
            checkpoint = checkpoint or Checkpoint(self.config)
            model = checkpoint.build_rvq(train.seed)
            mean, std = feature_statistics(entries)
            model.feature_mean.copy_(torch.as_tensor(mean))
            model.feature_std.copy_(torch.as_tensor(std))
        model = checkpoint.require_rvq()

        optimizer = torch.optim.AdamW(model.parameters(), lr=train.learning_rate, weight_decay=train.weight_decay)
        if 'rvq' in checkpoint.optimizer_state:
            optimizer.load_state_dict(checkpoint.optimizer_state['rvq'])
        start = checkpoint.epochs['rvq']
        if start >= total:
            logger.info(f"RVQ already trained for {start} epochs; nothing to do")
            return checkpoint

        model.train()
        if not bool(model.quantizer.initialized):
            self._initialize_codebooks(model, corpus, entries)

        beta = self.config.rvq.beta
        for epoch in range(start, total):
            generator = torch_generator(train.seed, 'rvq', 'batches', epoch)
            sums = np.zeros(3)
            batches = shuffled_batches(len(entries), train.batch_size, generator)
            last_residuals: list[torch.Tensor] = []
            for indices in batches:
                batch = collate(corpus, [entries[i] for i in indices])
                x = model.normalize(batch.motion)
                out = model(x, batch.joint_feats, batch.joint_mask, batch.frame_mask)
                loss, recon, commit = rvq_loss(
                    x,
                    out.reconstruction,
                    motion_mask(batch.joint_mask, batch.frame_mask),
                    out.quant.residuals,
                    out.quant.selected,
                    beta,
                    commitment_weights(out.latent_mask, batch.joint_mask),
                )
                if not torch.isfinite(loss):
                    raise NumericalError(
                        f"RVQ loss became non-finite at epoch {epoch} "
                        f"(reconstruction {recon.item()}, commitment {commit.item()})"
                    )
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                model.quantizer.update(out.quant, out.latent_mask)
                sums += [loss.item(), recon.item(), commit.item()]
                last_residuals = [r.detach()[out.latent_mask] for r in out.quant.residuals[:-1]]

            log_codebook_usage(model.quantizer)
            reset = model.quantizer.reset_dead_codes(last_residuals, generator)
            if reset:
                logger.warning(f"Epoch {epoch}: re-seeded {reset} dead codes")
            means = sums / len(batches)
            checkpoint.history['rvq'].append(EpochLoss(
                epoch=epoch, loss=means[0], reconstruction=means[1], commitment=means[2], dead_codes_reset=reset,
            ))
            checkpoint.epochs['rvq'] = epoch + 1
            logger.info(f"rvq epoch {epoch + 1}/{total}: loss {means[0]:.6f} recon {means[1]:.6f} commit {means[2]:.6f}")
            if progress_callback:
                progress_callback('rvq', epoch + 1, total)

        checkpoint.optimizer_state['rvq'] = optimizer.state_dict()
        model.eval()
        return checkpoint

    @torch.no_grad()
    def _initialize_codebooks(self, model: RvqModel, corpus: Corpus, entries: list[CorpusEntry]) -> None:
        latents = []
        for start in range(0, len(entries), self.config.train.batch_size):
            batch = collate(corpus, entries[start:start + self.config.train.batch_size])
            z = model.encode(model.normalize(batch.motion), batch.joint_feats, batch.joint_mask, batch.frame_mask)
            latents.append(z[model.latent_mask(batch.frame_mask)])
        model.quantizer.initialize(torch.cat(latents), torch_generator(self.config.train.seed, 'rvq', 'codebook-init'))
        logger.debug(f"Initialized {model.quantizer.levels} codebooks from {sum(len(z) for z in latents)} latents")

    @torch.no_grad()
    def tokenize(self, checkpoint: Checkpoint, motion: MotionSequence, skeleton: SkeletonGraph) -> TokenSequences:
        """
        Encode and quantize one motion.

        :return: (levels, ceil(T / downsample)) token indices
        :raises DimensionError: If the motion's joint count differs from the skeleton's
        """
        model = checkpoint.require_rvq()
        _check_joints(motion, skeleton)
        feats, mask = _skeleton_tensors(skeleton)
        x = model.normalize(torch.as_tensor(motion.frames, dtype=DTYPE)[None])
        quant = model.quantize(model.encode(x, feats, mask))
        return TokenSequences(indices=quant.tokens[0].T.numpy(), codes_per_level=model.quantizer.codes)

    @torch.no_grad()
    def detokenize(
        self,
        checkpoint: Checkpoint,
        tokens: TokenSequences | torch.Tensor,
        skeleton: SkeletonGraph,
        num_frames: int | None = None,
        fps: float = 20.0,
    ) -> MotionSequence:
        """
        Sum the selected codes and decode them on the skeleton's joints.

        :param tokens: TokenSequences, or an (n, levels) index tensor
        :param num_frames: Keep this many frames (default n * downsample)
        :raises ValidationError: If a token index is outside its codebook
        """
        model = checkpoint.require_rvq()
        indices = torch.as_tensor(tokens.indices.T) if isinstance(tokens, TokenSequences) else tokens
        feats, mask = _skeleton_tensors(skeleton)
        quantized = model.quantizer.lookup(indices)[None]
        frames = model.denormalize(model.decode(quantized, feats, mask, num_frames))[0]
        return MotionSequence(frames=frames.numpy(), fps=fps, species_tag=skeleton.species)

    def reconstruction_error(self, checkpoint: Checkpoint, corpus: Corpus, entries: list[CorpusEntry] | None = None) -> float:
        """Mean absolute error per feature between each motion and its token round trip."""
        entries = list(corpus.entries) if entries is None else entries
        if not entries:
            raise ValidationError("reconstruction_error needs at least one entry")
        total, count = 0.0, 0
        for entry in entries:
            skeleton = corpus.skeleton_for(entry)
            recon = self.detokenize(
                checkpoint, self.tokenize(checkpoint, entry.motion, skeleton), skeleton, entry.motion.num_frames
            )
            total += float(np.abs(recon.frames - entry.motion.frames).sum())
            count += entry.motion.frames.size
        return total / count

    def codebook_usage(self, checkpoint: Checkpoint, corpus: Corpus) -> list[float]:
        """Fraction of codes per level selected at least once when tokenizing the corpus."""
        model = checkpoint.require_rvq()
        used = np.zeros((model.quantizer.levels, model.quantizer.codes), dtype=bool)
        for entry in corpus.entries:
            tokens = self.tokenize(checkpoint, entry.motion, corpus.skeleton_for(entry))
            for level, row in enumerate(tokens.indices):
                used[level, row] = True
        return used.mean(axis=1).tolist()


def _check_joints(motion: MotionSequence, skeleton: SkeletonGraph) -> None:
    if motion.num_joints != skeleton.num_joints:
        raise DimensionError(f"Motion has {motion.num_joints} joints, skeleton {skeleton.name!r} has {skeleton.num_joints}")
