"""
Masked residual VQ-VAE over variable-topology motion.

Shapes: motion x is (B, T, J, d) with a joint mask (B, J) and a frame mask
(B, T); latents are (B, n, d_z) with n = ceil(T / temporal_downsample).
The joint axis is collapsed by masked mean pooling in the encoder and
re-expanded by per-joint heads in the decoder, so padded joints contribute
nothing going in and come out as exact zeros.
"""
import math
from typing import NamedTuple

import torch
import torch.nn.functional as F
from loguru import logger
from torch import nn

from topomotion.exceptions import DimensionError, ValidationError
from topomotion.models.config import RvqConfig
from topomotion.models.motion import FEATURE_DIM
from topomotion.numerics import DTYPE, gelu
from topomotion.utils.validation import validate_joint_count
from topomotion.skeleton.graph import JOINT_FEATURE_DIM

# Denominator floor in the loss normalizers
LOSS_EPS = 1e-8
_EMA_EPS = 1e-5


class QuantizeResult(NamedTuple):
    tokens: torch.Tensor  # (B, n, L) int64
    quantized: torch.Tensor  # (B, n, d_z) sum of selected codes
    residuals: list[torch.Tensor]  # R_1 .. R_{L+1}
    selected: list[torch.Tensor]  # R-hat_1 .. R-hat_L


class RvqOutput(NamedTuple):
    reconstruction: torch.Tensor
    latent: torch.Tensor
    quant: QuantizeResult
    latent_mask: torch.Tensor


class JointMlp(nn.Module):
    """Two-layer GELU MLP applied to the last axis."""

    def __init__(self, in_dim: int, hidden: int, out_dim: int) -> None:
        super().__init__()
        self.fc1 = nn.Linear(in_dim, hidden)
        self.fc2 = nn.Linear(hidden, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(gelu(self.fc1(x)))


class MotionEncoder(nn.Module):
    def __init__(self, config: RvqConfig) -> None:
        super().__init__()
        width = config.joint_embed_dim
        self.joint_mlp = JointMlp(FEATURE_DIM + JOINT_FEATURE_DIM, width, width)
        self.slot_embedding = nn.Parameter(torch.randn(config.max_joints, width) * 0.02)

        convs: list[nn.Module] = []
        prev = width
        for channels in config.encoder_channels:
            convs += [nn.Conv1d(prev, channels, 3, padding=1), nn.GELU(approximate='tanh')]
            prev = channels
        for _ in range(int(math.log2(config.temporal_downsample))):
            convs += [nn.Conv1d(prev, prev, 4, stride=2, padding=1), nn.GELU(approximate='tanh')]
        convs.append(nn.Conv1d(prev, config.code_dim, 3, padding=1))
        self.temporal = nn.Sequential(*convs)

    def forward(
        self,
        x: torch.Tensor,
        joint_feats: torch.Tensor,
        joint_mask: torch.Tensor,
        frame_mask: torch.Tensor,
    ) -> torch.Tensor:
        b, t, j, _ = x.shape
        descriptors = joint_feats[:, None].expand(b, t, j, joint_feats.shape[-1])
        h = self.joint_mlp(torch.cat([x, descriptors], dim=-1)) + self.slot_embedding[:j]
        valid = joint_mask[:, None, :, None]
        h = h.masked_fill(~valid, 0.0)
        count = joint_mask.sum(dim=1).clamp(min=1).to(h.dtype)
        pooled = h.sum(dim=2) / count[:, None, None]
        pooled = pooled.masked_fill(~frame_mask[..., None], 0.0)
        return self.temporal(pooled.transpose(1, 2)).transpose(1, 2)


class MotionDecoder(nn.Module):
    def __init__(self, config: RvqConfig) -> None:
        super().__init__()
        width = config.encoder_channels[-1]
        layers: list[nn.Module] = [nn.Conv1d(config.code_dim, width, 3, padding=1), nn.GELU(approximate='tanh')]
        for _ in range(int(math.log2(config.temporal_downsample))):
            layers += [nn.ConvTranspose1d(width, width, 4, stride=2, padding=1), nn.GELU(approximate='tanh')]
        layers.append(nn.Conv1d(width, width, 3, padding=1))
        self.temporal = nn.Sequential(*layers)
        self.joint_query = JointMlp(JOINT_FEATURE_DIM, width, width)
        self.slot_embedding = nn.Parameter(torch.randn(config.max_joints, width) * 0.02)
        self.head = JointMlp(2 * width, width, FEATURE_DIM)

    def forward(self, quantized: torch.Tensor, joint_feats: torch.Tensor, joint_mask: torch.Tensor) -> torch.Tensor:
        latent = self.temporal(quantized.transpose(1, 2)).transpose(1, 2)
        b, t, width = latent.shape
        j = joint_feats.shape[1]
        queries = self.joint_query(joint_feats) + self.slot_embedding[:j]
        pairs = torch.cat([
            latent[:, :, None].expand(b, t, j, width),
            queries[:, None].expand(b, t, j, width),
        ], dim=-1)
        out = self.head(pairs)
        return out.masked_fill(~joint_mask[:, None, :, None], 0.0)


class ResidualQuantizer(nn.Module):
    """
    L stacked codebooks updated by exponential moving average.

    Codebooks are buffers, not parameters: the optimizer never touches them.
    """

    def __init__(self, levels: int, codes: int, dim: int, decay: float) -> None:
        super().__init__()
        self.levels = levels
        self.codes = codes
        self.decay = decay
        self.register_buffer('codebooks', torch.zeros(levels, codes, dim, dtype=DTYPE))
        self.register_buffer('ema_counts', torch.ones(levels, codes, dtype=DTYPE))
        self.register_buffer('ema_sums', torch.zeros(levels, codes, dim, dtype=DTYPE))
        self.register_buffer('usage', torch.zeros(levels, codes, dtype=DTYPE))
        self.register_buffer('initialized', torch.zeros((), dtype=torch.bool))

    @staticmethod
    def nearest(residual: torch.Tensor, codebook: torch.Tensor) -> torch.Tensor:
        """Index of the closest code per row; ties resolve to the lowest index."""
        distances = ((residual[..., None, :] - codebook) ** 2).sum(dim=-1)
        return distances.argmin(dim=-1)

    def forward(self, z: torch.Tensor, tokens: torch.Tensor | None = None) -> QuantizeResult:
        """
        Residual quantization: R_1 = z, R_{l+1} = R_l - code(R_l).

        :param z: (..., d_z) latents
        :param tokens: Fixed (..., L) indices to use instead of nearest-neighbour search
        """
        residual = z
        residuals = [residual]
        selected = []
        indices = []
        quantized = torch.zeros_like(z)
        for level in range(self.levels):
            codebook = self.codebooks[level]
            if tokens is None:
                index = self.nearest(residual.detach(), codebook)
            else:
                index = tokens[..., level]
            chosen = codebook[index]
            residual = residual - chosen
            quantized = quantized + chosen
            indices.append(index)
            selected.append(chosen)
            residuals.append(residual)
        return QuantizeResult(torch.stack(indices, dim=-1), quantized, residuals, selected)

    def lookup(self, tokens: torch.Tensor) -> torch.Tensor:
        """Sum of codes selected by (..., L) tokens."""
        if tokens.shape[-1] != self.levels:
            raise DimensionError(f"Tokens have {tokens.shape[-1]} levels, quantizer has {self.levels}")
        if tokens.numel() and (tokens.min() < 0 or tokens.max() >= self.codes):
            raise ValidationError(f"Token index out of codebook range [0, {self.codes})")
        quantized = torch.zeros(*tokens.shape[:-1], self.codebooks.shape[-1], dtype=self.codebooks.dtype)
        for level in range(self.levels):
            quantized = quantized + self.codebooks[level][tokens[..., level]]
        return quantized

    @torch.no_grad()
    def initialize(self, z: torch.Tensor, generator: torch.Generator) -> None:
        """Seed every level's codes from latent rows (N, d_z), level by level."""
        residual = z
        for level in range(self.levels):
            picks = torch.randint(0, residual.shape[0], (self.codes,), generator=generator)
            self.codebooks[level] = residual[picks]
            self.ema_sums[level] = residual[picks]
            self.ema_counts[level] = 1.0
            residual = residual - self.codebooks[level][self.nearest(residual, self.codebooks[level])]
        self.initialized.fill_(True)

    @torch.no_grad()
    def update(self, quant: QuantizeResult, mask: torch.Tensor) -> None:
        """EMA step from one batch; mask (B, n) selects real latent positions."""
        flat_mask = mask.reshape(-1)
        for level in range(self.levels):
            index = quant.tokens[..., level].reshape(-1)[flat_mask]
            residual = quant.residuals[level].detach().reshape(-1, self.codebooks.shape[-1])[flat_mask]
            onehot = F.one_hot(index, self.codes).to(DTYPE)
            counts = onehot.sum(dim=0)
            sums = onehot.T @ residual
            self.usage[level] += counts
            self.ema_counts[level].mul_(self.decay).add_(counts, alpha=1 - self.decay)
            self.ema_sums[level].mul_(self.decay).add_(sums, alpha=1 - self.decay)
            total = self.ema_counts[level].sum()
            smoothed = (self.ema_counts[level] + _EMA_EPS) / (total + self.codes * _EMA_EPS) * total
            self.codebooks[level] = self.ema_sums[level] / smoothed[:, None]

    @torch.no_grad()
    def reset_dead_codes(self, residuals: list[torch.Tensor], generator: torch.Generator) -> int:
        """
        Re-seed codes unused since the last reset from residual rows of the same level.

        :param residuals: Per-level (N, d_z) residuals, typically from the last batch
        :return: Number of codes re-seeded
        """
        reset = 0
        for level in range(self.levels):
            dead = (self.usage[level] == 0).nonzero().reshape(-1)
            if dead.numel() and residuals[level].shape[0]:
                picks = torch.randint(0, residuals[level].shape[0], (dead.numel(),), generator=generator)
                self.codebooks[level, dead] = residuals[level][picks]
                self.ema_sums[level, dead] = residuals[level][picks]
                self.ema_counts[level, dead] = 1.0
                reset += dead.numel()
        self.usage.zero_()
        return reset


class RvqModel(nn.Module):
    def __init__(self, config: RvqConfig) -> None:
        super().__init__()
        self.config = config
        self.encoder = MotionEncoder(config)
        self.decoder = MotionDecoder(config)
        self.quantizer = ResidualQuantizer(config.levels, config.codes_per_level, config.code_dim, config.ema_decay)
        self.register_buffer('feature_mean', torch.zeros(FEATURE_DIM, dtype=DTYPE))
        self.register_buffer('feature_std', torch.ones(FEATURE_DIM, dtype=DTYPE))
        self.to(DTYPE)

    @property
    def downsample(self) -> int:
        return self.config.temporal_downsample

    def token_length(self, num_frames: int) -> int:
        return math.ceil(num_frames / self.downsample)

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.feature_mean) / self.feature_std

    def denormalize(self, x: torch.Tensor) -> torch.Tensor:
        return x * self.feature_std + self.feature_mean

    def latent_mask(self, frame_mask: torch.Tensor) -> torch.Tensor:
        """(B, T) frame validity -> (B, n): a latent is real when its first frame is."""
        n = self.token_length(frame_mask.shape[1])
        padded = F.pad(frame_mask, (0, n * self.downsample - frame_mask.shape[1]), value=False)
        return padded[:, ::self.downsample]

    def encode(
        self,
        x: torch.Tensor,
        joint_feats: torch.Tensor,
        joint_mask: torch.Tensor,
        frame_mask: torch.Tensor | None = None,
    ) -> torch.Tensor:
        """
        Normalized motion (B, T, J, d) -> latents (B, n, d_z).

        :raises ValidationError: If T is shorter than the downsampling factor or J exceeds max_joints
        """
        b, t = x.shape[:2]
        validate_joint_count(x.shape[2], self.config.max_joints)
        if t < self.downsample:
            raise ValidationError(f"Sequence of {t} frames is shorter than the downsampling factor {self.downsample}")
        if frame_mask is None:
            frame_mask = torch.ones(b, t, dtype=torch.bool)
        extra = self.token_length(t) * self.downsample - t
        if extra:
            x = torch.cat([x, x[:, -1:].expand(b, extra, *x.shape[2:])], dim=1)
            frame_mask = torch.cat([frame_mask, frame_mask[:, -1:].expand(b, extra)], dim=1)
        return self.encoder(x, joint_feats, joint_mask, frame_mask)

    def quantize(self, z: torch.Tensor, tokens: torch.Tensor | None = None) -> QuantizeResult:
        return self.quantizer(z, tokens)

    def decode(
        self,
        quantized: torch.Tensor,
        joint_feats: torch.Tensor,
        joint_mask: torch.Tensor,
        num_frames: int | None = None,
    ) -> torch.Tensor:
        """Latents (B, n, d_z) -> normalized motion (B, n * downsample, J, d), optionally cut to num_frames."""
        validate_joint_count(joint_feats.shape[1], self.config.max_joints)
        out = self.decoder(quantized, joint_feats, joint_mask)
        return out if num_frames is None else out[:, :num_frames]

    def forward(
        self,
        x: torch.Tensor,
        joint_feats: torch.Tensor,
        joint_mask: torch.Tensor,
        frame_mask: torch.Tensor | None = None,
        tokens: torch.Tensor | None = None,
    ) -> RvqOutput:
        """Encode, quantize with a straight-through estimator, decode."""
        if frame_mask is None:
            frame_mask = torch.ones(x.shape[:2], dtype=torch.bool)
        z = self.encode(x, joint_feats, joint_mask, frame_mask)
        quant = self.quantize(z, tokens)
        straight_through = z + (quant.quantized - z).detach()
        recon = self.decode(straight_through, joint_feats, joint_mask, num_frames=x.shape[1])
        return RvqOutput(recon, z, quant, self.latent_mask(frame_mask))


def motion_mask(joint_mask: torch.Tensor, frame_mask: torch.Tensor) -> torch.Tensor:
    """(B, J) and (B, T) validity -> (B, T, J)."""
    return frame_mask[:, :, None] & joint_mask[:, None, :]


def rvq_loss(
    target: torch.Tensor,
    reconstruction: torch.Tensor,
    mask: torch.Tensor,
    residuals: list[torch.Tensor],
    selected: list[torch.Tensor],
    beta: float,
    latent_weight: torch.Tensor | None = None,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """
    Masked L1 reconstruction plus beta times the residual commitment.

    reconstruction = sum(M * ||x - x_hat||_1) / (sum(M) + eps), the L1 norm summed over
    the d features of each valid joint-frame.
    commitment = sum_l sum_i w_i ||R_l,i - sg(R-hat_l,i)||^2 / (sum(w) + eps), where
    w weights each latent position (by its count of valid joints, or 1).

    :param target: (B, T, J, d)
    :param reconstruction: (B, T, J, d)
    :param mask: (B, T, J) validity
    :param residuals: R_1 .. R_L (extra trailing entries are ignored)
    :param selected: R-hat_1 .. R-hat_L
    :param beta: Commitment weight
    :param latent_weight: (B, n) weights; all ones if omitted
    :return: (total, reconstruction term, commitment term)
    """
    if target.shape != reconstruction.shape:
        raise DimensionError(f"Target {tuple(target.shape)} and reconstruction {tuple(reconstruction.shape)} differ")
    valid = mask[..., None]
    diff = torch.where(valid, (target - reconstruction).abs(), torch.zeros_like(target))
    denom = mask.to(target.dtype).sum() + LOSS_EPS
    recon = diff.sum() / denom

    if latent_weight is None:
        latent_weight = torch.ones(residuals[0].shape[:-1], dtype=target.dtype)
    weight_total = latent_weight.sum() + LOSS_EPS
    commit = torch.zeros((), dtype=target.dtype)
    for residual, code in zip(residuals, selected):
        sq = ((residual - code.detach()) ** 2).sum(dim=-1)
        commit = commit + (latent_weight * sq).sum() / weight_total
    return recon + beta * commit, recon, commit


def commitment_weights(latent_mask: torch.Tensor, joint_mask: torch.Tensor) -> torch.Tensor:
    """(B, n) latent weights: valid-joint count at real latent positions, 0 elsewhere."""
    counts = joint_mask.sum(dim=1).to(DTYPE)
    return latent_mask.to(DTYPE) * counts[:, None]


def log_codebook_usage(quantizer: ResidualQuantizer) -> list[float]:
    """Fraction of codes used per level since the last reset."""
    fractions = [(quantizer.usage[level] > 0).to(DTYPE).mean().item() for level in range(quantizer.levels)]
    logger.debug(f"Codebook usage per level: {[round(f, 3) for f in fractions]}")
    return fractions
