"""
Evaluation metrics over embedding matrices (rows are items).

All functions are pure given their seeds.
"""
from collections.abc import Callable, Sequence
from typing import TypeVar

import numpy as np
from loguru import logger

from topomotion.exceptions import DimensionError, NumericalError, ValidationError
from topomotion.utils.seeding import numpy_rng

SHRINKAGE = 1e-6
NEGATIVE_EIGEN_TOLERANCE = -1e-8
R_PRECISION_K = (1, 2, 3)

P = TypeVar('P')


def _as_matrix(feats: np.ndarray, name: str) -> np.ndarray:
    array = np.asarray(feats, dtype=np.float64)
    if array.ndim != 2:
        raise DimensionError(f"{name} must be a 2-D (items, dims) array, got shape {array.shape}")
    return array


def _covariance(feats: np.ndarray, shrinkage: bool) -> np.ndarray:
    cov = np.atleast_2d(np.cov(feats, rowvar=False, ddof=1))
    if shrinkage:
        cov = cov + SHRINKAGE * np.eye(cov.shape[0])
    return cov


def _sqrt_psd(matrix: np.ndarray) -> np.ndarray:
    """Square root of a symmetric PSD matrix; eigenvalues below the tolerance are an error."""
    values, vectors = np.linalg.eigh(matrix)
    if values.min() < NEGATIVE_EIGEN_TOLERANCE:
        raise NumericalError(f"Covariance product has a negative eigenvalue {values.min():.3e}")
    return (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T


def fid(real_feats: np.ndarray, gen_feats: np.ndarray, shrinkage: bool = False) -> float:
    """
    Frechet distance between Gaussian fits of two feature sets.

    ||mu_r - mu_g||^2 + tr(S_r + S_g - 2 (S_r S_g)^(1/2)), with the cross term
    computed as tr((A S_g A)^(1/2)) for A = S_r^(1/2), which is symmetric.

    :param real_feats: (N, e)
    :param gen_feats: (M, e)
    :param shrinkage: Add 1e-6 to every covariance diagonal
    :raises ValidationError: If N or M is at most e without shrinkage
    :raises NumericalError: If an eigenvalue is below -1e-8
    """
    real = _as_matrix(real_feats, 'real_feats')
    gen = _as_matrix(gen_feats, 'gen_feats')
    if real.shape[1] != gen.shape[1]:
        raise DimensionError(f"Feature widths differ: {real.shape[1]} vs {gen.shape[1]}")
    dims = real.shape[1]
    if min(len(real), len(gen)) < 2:
        raise ValidationError("fid needs at least 2 items per set")
    if not shrinkage and (len(real) <= dims or len(gen) <= dims):
        raise ValidationError(
            f"Covariance is rank deficient with {len(real)} real and {len(gen)} generated items "
            f"in {dims} dims; enable shrinkage"
        )

    mu_diff = real.mean(axis=0) - gen.mean(axis=0)
    cov_r = _covariance(real, shrinkage)
    cov_g = _covariance(gen, shrinkage)
    root_r = _sqrt_psd(cov_r)
    cross = root_r @ cov_g @ root_r
    cross_root = _sqrt_psd(0.5 * (cross + cross.T))
    value = float(mu_diff @ mu_diff + np.trace(cov_r) + np.trace(cov_g) - 2.0 * np.trace(cross_root))
    return max(value, 0.0)


def diversity(feats: np.ndarray, pairs: int, seed: int) -> float:
    """
    Mean distance over ``pairs`` seeded random index pairs.

    Pairs within one permutation are disjoint; more pairs than fit draw further permutations.

    :raises ValidationError: If there are fewer than 2 items
    """
    array = _as_matrix(feats, 'feats')
    if len(array) < 2:
        raise ValidationError(f"diversity needs at least 2 items, got {len(array)}")
    rng = numpy_rng(seed, 'diversity')
    first: list[int] = []
    second: list[int] = []
    while len(first) < pairs:
        order = rng.permutation(len(array))
        half = len(order) // 2
        first.extend(order[:half])
        second.extend(order[half:2 * half])
    first, second = first[:pairs], second[:pairs]
    return float(np.linalg.norm(array[first] - array[second], axis=1).mean())


def matching_score(text_feats: np.ndarray, motion_feats: np.ndarray) -> float:
    """Mean distance between aligned text and motion rows; lower is better."""
    text = _as_matrix(text_feats, 'text_feats')
    motion = _as_matrix(motion_feats, 'motion_feats')
    if text.shape != motion.shape:
        raise DimensionError(f"Text {text.shape} and motion {motion.shape} feature sets differ")
    return float(np.linalg.norm(text - motion, axis=1).mean())


def r_precision(
    text_feats: np.ndarray,
    motion_feats: np.ndarray,
    pool_size: int = 32,
    seed: int = 0,
    k_values: Sequence[int] = R_PRECISION_K,
) -> dict[int, float]:
    """
    Retrieval precision: each text ranks its own motion among pool_size - 1 seeded distractors.

    A motion's rank is 1 plus the number of pool members strictly closer to the text.

    :return: {k: fraction of queries with rank <= k}
    :raises ValidationError: If there are fewer items than pool_size
    """
    text = _as_matrix(text_feats, 'text_feats')
    motion = _as_matrix(motion_feats, 'motion_feats')
    if text.shape != motion.shape:
        raise DimensionError(f"Text {text.shape} and motion {motion.shape} feature sets differ")
    count = len(text)
    if count < pool_size:
        raise ValidationError(f"r_precision needs at least pool_size={pool_size} items, got {count}")

    rng = numpy_rng(seed, 'r_precision')
    ranks = np.empty(count, dtype=np.int64)
    for i in range(count):
        others = np.delete(np.arange(count), i)
        pool = rng.choice(others, size=pool_size - 1, replace=False)
        true_distance = np.linalg.norm(text[i] - motion[i])
        distances = np.linalg.norm(motion[pool] - text[i], axis=1)
        ranks[i] = 1 + int((distances < true_distance).sum())
    return {k: float((ranks <= k).mean()) for k in k_values}


def _mean_pairwise_distance(feats: np.ndarray) -> float:
    diffs = feats[:, None, :] - feats[None, :, :]
    distances = np.linalg.norm(diffs, axis=-1)
    upper = np.triu_indices(len(feats), k=1)
    return float(distances[upper].mean())


def multimodality(
    generate_fn: Callable[[P, int], np.ndarray],
    prompts: Sequence[P],
    reps: int,
    seed: int,
    embed_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> float:
    """
    Mean pairwise distance between repeated generations of the same prompt, averaged over prompts.

    :param generate_fn: generate_fn(prompt, seed) -> feature vector (or output passed to embed_fn)
    :param prompts: Prompts to repeat
    :param reps: Generations per prompt, at least 2
    :param seed: Base seed; repetition r of prompt p uses a seed derived from (seed, p, r)
    :param embed_fn: Optional mapping from generate_fn output to a feature vector
    """
    if reps < 2:
        raise ValidationError(f"multimodality needs reps >= 2, got {reps}")
    if not prompts:
        raise ValidationError("multimodality needs at least one prompt")
    rng = numpy_rng(seed, 'multimodality')
    per_prompt = []
    for prompt in prompts:
        seeds = rng.choice(2 ** 31, size=reps, replace=False)
        outputs = [generate_fn(prompt, int(s)) for s in seeds]
        feats = np.stack([np.asarray(embed_fn(o) if embed_fn else o, dtype=np.float64) for o in outputs])
        per_prompt.append(_mean_pairwise_distance(feats))
    value = float(np.mean(per_prompt))
    logger.debug(f"multimodality over {len(prompts)} prompts x {reps} reps: {value:.6f}")
    return value
