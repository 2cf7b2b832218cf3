"""Padding corpus entries into joint- and frame-masked torch batches."""
from collections.abc import Sequence
from typing import NamedTuple

import numpy as np
import torch

from topomotion.exceptions import ValidationError
from topomotion.models.motion import FEATURE_DIM, Corpus, CorpusEntry
from topomotion.numerics import DTYPE
from topomotion.skeleton.graph import joint_features, pad_joint_batch


class MotionBatch(NamedTuple):
    motion: torch.Tensor  # (B, T, J, d) raw features, zero padded
    joint_feats: torch.Tensor  # (B, J, 6)
    joint_mask: torch.Tensor  # (B, J) bool
    frame_mask: torch.Tensor  # (B, T) bool
    lengths: list[int]


def collate(corpus: Corpus, entries: Sequence[CorpusEntry]) -> MotionBatch:
    """
    Stack entries with zero padding on both the frame and joint axes.

    :raises ValidationError: If entries is empty
    """
    if not entries:
        raise ValidationError("Cannot collate an empty batch")
    lengths = [e.motion.num_frames for e in entries]
    t_max = max(lengths)
    framed = [np.pad(e.motion.frames, ((0, t_max - e.motion.num_frames), (0, 0), (0, 0))) for e in entries]
    motion, masks = pad_joint_batch(framed, joint_axis=1)
    feats, _ = pad_joint_batch([joint_features(corpus.skeleton_for(e)) for e in entries])
    frame_mask = np.arange(t_max)[None, :] < np.array(lengths)[:, None]
    return MotionBatch(
        torch.as_tensor(motion, dtype=DTYPE),
        torch.as_tensor(feats, dtype=DTYPE),
        torch.as_tensor(np.stack(masks)),
        torch.as_tensor(frame_mask),
        lengths,
    )


def shuffled_batches(count: int, batch_size: int, generator: torch.Generator) -> list[list[int]]:
    """Seeded permutation of range(count) cut into batches; the last one may be short."""
    order = torch.randperm(count, generator=generator).tolist()
    return [order[i:i + batch_size] for i in range(0, count, batch_size)]


def feature_statistics(entries: Sequence[CorpusEntry], floor: float = 1e-6) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std over every (frame, joint) of the entries; tiny stds become 1."""
    stacked = np.concatenate([e.motion.frames.reshape(-1, FEATURE_DIM) for e in entries], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    return mean, np.where(std < floor, 1.0, std)
