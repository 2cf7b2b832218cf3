"""
Conditioning and the two token transformers.

The masked transformer predicts base-level tokens (vocabulary K0 plus a
[MASK] id equal to K0). The residual transformer predicts level j from the
summed embeddings of levels 0..j-1; its level-j output head and its level-j
token embedding are one tensor.
"""
import hashlib
import math
import re
from typing import Protocol, runtime_checkable

import torch
import torch.nn.functional as F
from loguru import logger
from torch import nn

from topomotion.exceptions import DimensionError, ValidationError
from topomotion.models.config import GenConfig
from topomotion.numerics import DTYPE, gelu
from topomotion.utils.seeding import numpy_rng, torch_generator

_TOKEN_SPLIT = re.compile(r'[^a-z0-9]+')


@runtime_checkable
class TextEmbedder(Protocol):
    dim: int

    def embed(self, text: str) -> torch.Tensor:
        """Deterministic (dim,) embedding of text."""
        ...


class HashedTextEmbedder:
    """
    Bag of hashed tokens through a fixed seeded projection, L2-normalized.

    Text is lowercased and split on non-alphanumerics; each token is hashed
    into one of ``buckets`` counters.
    """

    def __init__(self, dim: int = 64, buckets: int = 1024, seed: int = 0) -> None:
        self.dim = dim
        self.buckets = buckets
        self.seed = seed
        projection = numpy_rng(seed, 'text-projection').normal(size=(buckets, dim)) / math.sqrt(dim)
        self._projection = torch.as_tensor(projection, dtype=DTYPE)

    @staticmethod
    def tokenize(text: str) -> list[str]:
        return [token for token in _TOKEN_SPLIT.split(text.lower()) if token]

    def bucket(self, token: str) -> int:
        digest = hashlib.blake2b(token.encode('utf-8'), digest_size=8).digest()
        return int.from_bytes(digest, 'little') % self.buckets

    def embed(self, text: str) -> torch.Tensor:
        counts = torch.zeros(self.buckets, dtype=DTYPE)
        for token in self.tokenize(text):
            counts[self.bucket(token)] += 1.0
        vector = counts @ self._projection
        norm = vector.norm()
        return vector / norm if norm > 0 else vector

    def embed_batch(self, texts: list[str]) -> torch.Tensor:
        return torch.stack([self.embed(t) for t in texts]) if texts else torch.zeros(0, self.dim, dtype=DTYPE)


class ConditionFusion(nn.Module):
    """Concatenate text and skeleton embeddings, then a two-layer MLP; null rows use a learned input."""

    def __init__(self, text_dim: int, skel_dim: int, cond_dim: int) -> None:
        super().__init__()
        self.fc1 = nn.Linear(text_dim + skel_dim, cond_dim)
        self.fc2 = nn.Linear(cond_dim, cond_dim)
        self.null_input = nn.Parameter(torch.randn(text_dim + skel_dim) * 0.02)
        self.to(DTYPE)

    def forward(self, f_text: torch.Tensor, f_skel: torch.Tensor, null: torch.Tensor | None = None) -> torch.Tensor:
        """
        :param f_text: (B, d_t)
        :param f_skel: (B, d_s)
        :param null: (B,) bool, rows replaced by the null condition
        :return: (B, d_c)
        """
        joined = torch.cat([f_text, f_skel], dim=-1)
        if null is not None:
            joined = torch.where(null[:, None], self.null_input.expand_as(joined), joined)
        return self.fc2(gelu(self.fc1(joined)))


def _encoder(config: GenConfig) -> nn.TransformerEncoder:
    layer = nn.TransformerEncoderLayer(
        d_model=config.model_dim,
        nhead=config.heads,
        dim_feedforward=config.model_dim * config.ffn_mult,
        dropout=config.dropout,
        activation='gelu',
        batch_first=True,
        norm_first=True,
    )
    return nn.TransformerEncoder(layer, config.layers, enable_nested_tensor=False)


def _padding_mask(valid: torch.Tensor | None, batch: int, length: int) -> torch.Tensor:
    """Key padding mask over [cond, tokens...]; True marks positions to ignore."""
    if valid is None:
        valid = torch.ones(batch, length, dtype=torch.bool)
    return torch.cat([torch.zeros(batch, 1, dtype=torch.bool), ~valid], dim=1)


class MaskedTransformer(nn.Module):
    def __init__(self, num_codes: int, config: GenConfig) -> None:
        super().__init__()
        self.num_codes = num_codes
        self.mask_id = num_codes
        self.max_tokens = config.max_tokens
        d = config.model_dim
        self.token_embedding = nn.Embedding(num_codes + 1, d)
        self.position = nn.Parameter(torch.randn(config.max_tokens + 1, d) * 0.02)
        self.cond_proj = nn.Linear(config.cond_dim, d)
        self.encoder = _encoder(config)
        self.norm = nn.LayerNorm(d)
        self.head = nn.Linear(d, num_codes)
        self.to(DTYPE)

    def forward(self, tokens: torch.Tensor, cond: torch.Tensor, valid: torch.Tensor | None = None) -> torch.Tensor:
        """
        :param tokens: (B, n) base tokens, mask_id where masked
        :param cond: (B, d_c)
        :param valid: (B, n) bool, False past each sequence's end
        :return: (B, n, K0) logits
        """
        b, n = tokens.shape
        if n > self.max_tokens:
            raise DimensionError(f"Sequence of {n} tokens exceeds max_tokens {self.max_tokens}")
        x = torch.cat([self.cond_proj(cond)[:, None], self.token_embedding(tokens)], dim=1) + self.position[:n + 1]
        h = self.encoder(x, src_key_padding_mask=_padding_mask(valid, b, n))
        return self.head(self.norm(h[:, 1:]))


class ResidualTransformer(nn.Module):
    """
    Predicts level j in 1..V from levels 0..j-1.

    ``shared[k]`` (K, D) embeds level-k tokens for k < V and is the output head
    for level k when k >= 1.
    """

    def __init__(self, num_codes: int, residual_levels: int, config: GenConfig) -> None:
        super().__init__()
        if residual_levels < 1:
            raise ValidationError(f"A residual transformer needs at least one residual level, got {residual_levels}")
        self.num_codes = num_codes
        self.residual_levels = residual_levels
        self.max_tokens = config.max_tokens
        d = config.model_dim
        self.shared = nn.Parameter(torch.randn(residual_levels + 1, num_codes, d) * 0.02)
        self.head_bias = nn.Parameter(torch.zeros(residual_levels + 1, num_codes))
        self.level_embedding = nn.Embedding(residual_levels + 1, d)
        self.position = nn.Parameter(torch.randn(config.max_tokens + 1, d) * 0.02)
        self.cond_proj = nn.Linear(config.cond_dim, d)
        self.encoder = _encoder(config)
        self.norm = nn.LayerNorm(d)
        self.to(DTYPE)

    def embedding_weight(self, level: int) -> torch.Tensor:
        return self.shared[level]

    def head_weight(self, level: int) -> torch.Tensor:
        return self.shared[level]

    def check_level(self, level: int) -> None:
        if not 1 <= level <= self.residual_levels:
            raise ValidationError(f"Residual level must lie in [1, {self.residual_levels}], got {level}")

    def forward(
        self,
        tokens: torch.Tensor,
        level: int,
        cond: torch.Tensor,
        valid: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """
        :param tokens: (B, n, L') tokens; only levels 0..level-1 are read
        :param level: Level j to predict, in 1..V
        :param cond: (B, d_c)
        :param valid: (B, n) bool
        :return: (B, n, K) logits for level j
        """
        self.check_level(level)
        b, n = tokens.shape[:2]
        if n > self.max_tokens:
            raise DimensionError(f"Sequence of {n} tokens exceeds max_tokens {self.max_tokens}")
        summed = self.level_embedding.weight[level].expand(b, n, -1)
        for k in range(level):
            summed = summed + F.embedding(tokens[..., k], self.embedding_weight(k))
        x = torch.cat([self.cond_proj(cond)[:, None], summed], dim=1) + self.position[:n + 1]
        h = self.norm(self.encoder(x, src_key_padding_mask=_padding_mask(valid, b, n))[:, 1:])
        return h @ self.head_weight(level).T + self.head_bias[level]


def guided_logits(cond_logits: torch.Tensor, null_logits: torch.Tensor, scale: float) -> torch.Tensor:
    """Classifier-free guidance: l_null + scale * (l_cond - l_null); scale 1 returns l_cond as is."""
    if scale == 1.0:
        return cond_logits
    return null_logits + scale * (cond_logits - null_logits)


def cosine_mask_ratio(u: torch.Tensor) -> torch.Tensor:
    """Training mask ratio cos(pi/2 * u) for u in [0, 1)."""
    return torch.cos(0.5 * math.pi * u)


def remaining_masked(n: int, step: int, iterations: int) -> int:
    """Tokens left masked after decoding round ``step`` (0-based)."""
    return math.floor(n * math.cos(0.5 * math.pi * (step + 1) / iterations))


def null_condition_mask(batch: int, p: float, generator: torch.Generator) -> torch.Tensor:
    """(batch,) bool: True with probability p per sample, marking rows trained on the null condition."""
    return torch.rand(batch, generator=generator, dtype=DTYPE) < p


def mask_tokens(
    tokens: torch.Tensor,
    ratio: float | torch.Tensor,
    seed: int | torch.Generator,
    mask_id: int,
    valid: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Replace ceil(ratio * n) uniformly chosen positions per row with mask_id.

    :param tokens: (n,) or (B, n) indices
    :param ratio: Scalar or (B,) ratios in (0, 1]
    :param seed: Seed or generator
    :param mask_id: Index of [MASK]
    :param valid: (B, n) bool; only valid positions are eligible and n counts them
    :return: (masked tokens, boolean masked-position map), same leading shape as tokens
    """
    squeeze = tokens.dim() == 1
    batch = tokens[None] if squeeze else tokens
    b, n = batch.shape
    ratios = torch.as_tensor(ratio, dtype=DTYPE)
    if ratios.dim() == 0:
        ratios = ratios.expand(b)
    if (ratios <= 0).any() or (ratios > 1).any():
        raise ValidationError(f"Mask ratio must lie in (0, 1], got {ratios.tolist()}")
    if valid is None:
        valid = torch.ones(b, n, dtype=torch.bool)
    generator = seed if isinstance(seed, torch.Generator) else torch_generator(seed, 'mask_tokens')

    scores = torch.rand(b, n, generator=generator, dtype=DTYPE).masked_fill(~valid, math.inf)
    ranks = scores.argsort(dim=1).argsort(dim=1)
    lengths = valid.sum(dim=1).to(DTYPE)
    counts = torch.ceil(ratios * lengths).long()
    masked = (ranks < counts[:, None]) & valid
    out = batch.masked_fill(masked, mask_id)
    return (out[0], masked[0]) if squeeze else (out, masked)


def masked_loss(logits: torch.Tensor, targets: torch.Tensor, masked: torch.Tensor) -> torch.Tensor:
    """
    Mean negative log-likelihood over masked positions only.

    An empty masked set gives 0 (still attached to the graph) and logs a warning.
    """
    if logits.shape[:-1] != targets.shape or targets.shape != masked.shape:
        raise DimensionError(
            f"Logits {tuple(logits.shape)}, targets {tuple(targets.shape)} and mask {tuple(masked.shape)} disagree"
        )
    nll = F.cross_entropy(logits.reshape(-1, logits.shape[-1]), targets.reshape(-1), reduction='none')
    flat = masked.reshape(-1)
    count = int(flat.sum())
    if count == 0:
        logger.warning("masked_loss called with no masked positions; returning 0")
        return logits.sum() * 0.0
    return torch.where(flat, nll, torch.zeros_like(nll)).sum() / count


def residual_loss(
    logits: torch.Tensor,
    targets: torch.Tensor,
    level: int,
    residual_levels: int,
    valid: torch.Tensor | None = None,
) -> torch.Tensor:
    """
    Mean negative log-likelihood of level-j targets over all real positions.

    :raises ValidationError: If level is outside [1, residual_levels]
    """
    if not 1 <= level <= residual_levels:
        raise ValidationError(f"Residual level must lie in [1, {residual_levels}], got {level}")
    if valid is None:
        valid = torch.ones(targets.shape, dtype=torch.bool)
    return masked_loss(logits, targets, valid)


def sample_tokens(
    logits: torch.Tensor,
    temperature: float,
    generator: torch.Generator,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Draw one token per position from softmax(logits / temperature); returns (tokens, their probabilities)."""
    probs = torch.softmax(logits / temperature, dim=-1)
    flat = probs.reshape(-1, probs.shape[-1])
    drawn = torch.multinomial(flat, 1, generator=generator).reshape(probs.shape[:-1])
    return drawn, probs.gather(-1, drawn[..., None])[..., 0]
