"""
Topology-aware skeleton embedding.

Joint geometry goes through a two-layer MLP, a learned CLS token is
prepended, and a stack of pre-norm graph-transformer layers attends with
logits biased by clipped hop distance and kinship relation. The CLS row of
the last layer, layer-normalized and projected, is the skeleton embedding.
No positional encoding over joint order is used, so the embedding depends
on topology and geometry only.
"""
import math

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from topomotion.exceptions import DimensionError
from topomotion.models.config import SkelEmbedConfig
from topomotion.models.skeleton import Relation, SkeletonGraph
from topomotion.numerics import DTYPE, NEG_SENTINEL, gelu, layer_norm, softmax_rows
from topomotion.skeleton.graph import JOINT_FEATURE_DIM, distance_matrix, joint_features, relation_matrix

NUM_RELATIONS = len(Relation)


def skeleton_inputs(s: SkeletonGraph) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """(J (K, 6), D (K, K), R (K, K)) as tensors for one skeleton."""
    return (
        torch.as_tensor(joint_features(s), dtype=DTYPE),
        torch.as_tensor(distance_matrix(s)),
        torch.as_tensor(relation_matrix(s)),
    )


class GraphAttention(nn.Module):
    def __init__(self, dim: int, heads: int) -> None:
        super().__init__()
        self.heads = heads
        self.head_dim = dim // heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def _split(self, t: torch.Tensor) -> torch.Tensor:
        b, n, _ = t.shape
        return t.view(b, n, self.heads, self.head_dim).transpose(1, 2)

    def attention_weights(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        """(B, N, d), (B, H, N, N) -> (B, H, N, N): softmax(q k^T / sqrt(d / H) + bias) per row."""
        q, k = self._split(self.q(x)), self._split(self.k(x))
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.head_dim)
        return softmax_rows(scores, bias).probs

    def forward(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        b, n, d = x.shape
        context = (self.attention_weights(x, bias) @ self._split(self.v(x))).transpose(1, 2).reshape(b, n, d)
        return self.out(context)


class GraphTransformerLayer(nn.Module):
    def __init__(self, dim: int, heads: int, ffn_mult: int) -> None:
        super().__init__()
        self.attn_norm = nn.LayerNorm(dim)
        self.attn = GraphAttention(dim, heads)
        self.ffn_norm = nn.LayerNorm(dim)
        self.ffn_in = nn.Linear(dim, dim * ffn_mult)
        self.ffn_out = nn.Linear(dim * ffn_mult, dim)

    def forward(self, x: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        x = x + self.attn(self.attn_norm(x), bias)
        return x + self.ffn_out(gelu(self.ffn_in(self.ffn_norm(x))))


class SkeletonEmbedder(nn.Module):
    def __init__(self, config: SkelEmbedConfig) -> None:
        super().__init__()
        self.config = config
        d = config.model_dim
        self.joint_fc1 = nn.Linear(JOINT_FEATURE_DIM, d)
        self.joint_fc2 = nn.Linear(d, d)
        self.cls = nn.Parameter(torch.randn(d) * 0.02)
        self.dist_table = nn.Parameter(torch.zeros(config.max_distance_clip + 1, config.heads))
        self.rel_table = nn.Parameter(torch.zeros(NUM_RELATIONS, config.heads))
        self.layers = nn.ModuleList(
            GraphTransformerLayer(d, config.heads, config.ffn_mult) for _ in range(config.layers)
        )
        self.out_norm = nn.LayerNorm(d)
        self.out_proj = nn.Linear(d, config.out_dim)
        self.to(DTYPE)

    def embed_joints(self, joint_feats: torch.Tensor) -> torch.Tensor:
        """(..., K, 6) -> (..., K, d): W2 GELU(W1 J + b1) + b2."""
        return self.joint_fc2(gelu(self.joint_fc1(joint_feats)))

    def build_bias(self, distances: torch.Tensor, relations: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """
        Per-head additive attention bias over CLS + joints.

        :param distances: (B, K, K) hop counts
        :param relations: (B, K, K) Relation codes
        :param mask: (B, K) joint validity
        :return: (B, H, K+1, K+1); padded columns hold NEG_SENTINEL in every row
        """
        if distances.shape != relations.shape or distances.shape[:2] != mask.shape:
            raise DimensionError(
                f"Distance {tuple(distances.shape)}, relation {tuple(relations.shape)} "
                f"and mask {tuple(mask.shape)} extents disagree"
            )
        b, k = mask.shape
        clipped = distances.clamp(max=self.config.max_distance_clip)
        pair = self.dist_table[clipped] + self.rel_table[relations]
        bias = F.pad(pair.permute(0, 3, 1, 2), (1, 0, 1, 0))
        columns = torch.cat([torch.ones(b, 1, dtype=torch.bool), mask], dim=1)
        return bias.masked_fill(~columns[:, None, None, :], NEG_SENTINEL)

    def graph_transformer_forward(self, z0: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
        z = z0
        for layer in self.layers:
            z = layer(z, bias)
        return z

    def forward(
        self,
        joint_feats: torch.Tensor,
        distances: torch.Tensor,
        relations: torch.Tensor,
        mask: torch.Tensor,
    ) -> torch.Tensor:
        """Batched embedding: (B, K, 6), (B, K, K), (B, K, K), (B, K) -> (B, d_s)."""
        tokens = self.embed_joints(joint_feats)
        cls = self.cls.expand(tokens.shape[0], 1, -1)
        z = self.graph_transformer_forward(torch.cat([cls, tokens], dim=1), self.build_bias(distances, relations, mask))
        return self.out_proj(layer_norm(z[:, 0], self.out_norm.weight, self.out_norm.bias, self.out_norm.eps))


def skeleton_embedding(
    model: SkeletonEmbedder,
    s: SkeletonGraph,
    mask: np.ndarray | torch.Tensor | None = None,
) -> torch.Tensor:
    """
    Embedding of one skeleton as a (d_s,) vector.

    Joints flagged invalid by mask (a valid prefix followed by padding) are
    dropped before the forward pass, so padding never changes the result.
    """
    features, distances, relations = skeleton_inputs(s)
    valid = s.num_joints if mask is None else int(torch.as_tensor(mask).bool()[:s.num_joints].sum())
    features, distances, relations = features[:valid], distances[:valid, :valid], relations[:valid, :valid]
    joint_mask = torch.ones(1, valid, dtype=torch.bool)
    return model(features[None], distances[None], relations[None], joint_mask)[0]
