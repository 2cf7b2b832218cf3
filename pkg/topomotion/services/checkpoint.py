"""
Unified checkpoint: RVQ, skeleton embedder, condition fusion and both token
transformers, plus optimizer state, epoch counters and loss histories.

Stored in the shared binary container under kind "checkpoint". Module tensors
are saved as ``<section>/<state key>``; optimizer tensors as
``optim/<stage>/<param index>/<state key>``.
"""
from __future__ import annotations

from typing import Any

import numpy as np
import torch
from loguru import logger
from pydantic import ValidationError as PydanticValidationError
from torch import nn

from topomotion.exceptions import CheckpointError
from topomotion.models.config import RunConfig
from topomotion.models.report import EpochLoss
from topomotion.nn.generator import ConditionFusion, MaskedTransformer, ResidualTransformer
from topomotion.nn.rvq import RvqModel
from topomotion.nn.skelembed import SkeletonEmbedder
from topomotion.utils.container import read_container, write_container
from topomotion.utils.seeding import seeded

CHECKPOINT_KIND = 'checkpoint'
GENERATOR_SECTIONS = ('skelembed', 'fusion', 'masked', 'residual')
SECTIONS = ('rvq', *GENERATOR_SECTIONS)
STAGES = ('rvq', 'generator')


class Checkpoint:
    """Mutable bundle of trained modules for one run configuration."""

    def __init__(self, config: RunConfig) -> None:
        self.config = config
        self.rvq: RvqModel | None = None
        self.skelembed: SkeletonEmbedder | None = None
        self.fusion: ConditionFusion | None = None
        self.masked: MaskedTransformer | None = None
        self.residual: ResidualTransformer | None = None
        self.optimizer_state: dict[str, dict[str, Any]] = {}
        self.epochs: dict[str, int] = {stage: 0 for stage in STAGES}
        self.history: dict[str, list[EpochLoss]] = {stage: [] for stage in STAGES}

    @property
    def residual_levels(self) -> int:
        return self.config.rvq.levels - 1

    @property
    def has_generator(self) -> bool:
        required = [self.skelembed, self.fusion, self.masked]
        if self.residual_levels:
            required.append(self.residual)
        return all(module is not None for module in required)

    def sections(self) -> dict[str, nn.Module]:
        present = {name: getattr(self, name) for name in SECTIONS}
        return {name: module for name, module in present.items() if module is not None}

    def build_rvq(self, seed: int) -> RvqModel:
        with seeded(seed, 'init', 'rvq'):
            self.rvq = RvqModel(self.config.rvq)
        return self.rvq

    def build_generator(self, seed: int) -> None:
        """Fresh skeleton embedder, fusion MLP and transformers sized from the RVQ config."""
        gen = self.config.generator
        codes = self.config.rvq.codes_per_level
        with seeded(seed, 'init', 'generator'):
            self.skelembed = SkeletonEmbedder(self.config.skelembed)
            self.fusion = ConditionFusion(gen.text_dim, self.config.skelembed.out_dim, gen.cond_dim)
            self.masked = MaskedTransformer(codes, gen)
            self.residual = ResidualTransformer(codes, self.residual_levels, gen) if self.residual_levels else None

    def reset_generator(self) -> None:
        """Drop generator sections, their optimizer state and history."""
        self.skelembed = self.fusion = self.masked = self.residual = None
        self.optimizer_state.pop('generator', None)
        self.epochs['generator'] = 0
        self.history['generator'] = []

    def generator_modules(self) -> list[nn.Module]:
        return [m for m in (self.skelembed, self.fusion, self.masked, self.residual) if m is not None]

    def require_rvq(self) -> RvqModel:
        if self.rvq is None:
            raise CheckpointError("Checkpoint has no trained RVQ section; run train-rvq first")
        return self.rvq

    def require_generator(self) -> None:
        self.require_rvq()
        if not self.has_generator:
            raise CheckpointError("Checkpoint has no trained generator sections; run train-gen first")


def _optimizer_arrays(stage: str, state: dict[str, Any]) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    arrays: dict[str, np.ndarray] = {}
    dtypes: dict[str, str] = {}
    for index, values in state['state'].items():
        for key, value in values.items():
            name = f"optim/{stage}/{index}/{key}"
            tensor = torch.as_tensor(value)
            arrays[name] = tensor.detach().cpu().numpy()
            dtypes[name] = str(tensor.dtype).removeprefix('torch.')
    return arrays, {'param_groups': state['param_groups'], 'dtypes': dtypes}


def _optimizer_state(stage: str, meta: dict[str, Any], arrays: dict[str, np.ndarray]) -> dict[str, Any]:
    state: dict[int, dict[str, torch.Tensor]] = {}
    prefix = f"optim/{stage}/"
    for name, dtype in meta['dtypes'].items():
        index, key = name.removeprefix(prefix).split('/', 1)
        state.setdefault(int(index), {})[key] = torch.as_tensor(arrays[name], dtype=getattr(torch, dtype))
    return {'state': state, 'param_groups': meta['param_groups']}


def save_checkpoint(checkpoint: Checkpoint, path: str) -> str:
    """
    Write every present section and optimizer state to ``path``.

    :return: Hex sha256 checksum of the payload
    """
    arrays: dict[str, np.ndarray] = {}
    for section, module in checkpoint.sections().items():
        for key, value in module.state_dict().items():
            arrays[f"{section}/{key}"] = value.detach().cpu().numpy()

    optimizers: dict[str, Any] = {}
    for stage, state in checkpoint.optimizer_state.items():
        stage_arrays, stage_meta = _optimizer_arrays(stage, state)
        arrays.update(stage_arrays)
        optimizers[stage] = stage_meta

    meta = {
        'config': checkpoint.config.model_dump(mode='json'),
        'sections': list(checkpoint.sections()),
        'epochs': checkpoint.epochs,
        'history': {stage: [row.model_dump(mode='json') for row in rows] for stage, rows in checkpoint.history.items()},
        'optimizers': optimizers,
    }
    checksum = write_container(path, CHECKPOINT_KIND, meta, arrays)
    logger.info(f"Saved checkpoint with sections {meta['sections']} to {path}")
    return checksum


def load_checkpoint(path: str) -> Checkpoint:
    """
    Rebuild a checkpoint from disk.

    :raises DataFormatError: If the container is corrupt
    :raises CheckpointError: If the stored config or a section's tensors are incomplete
    """
    header, arrays = read_container(path, CHECKPOINT_KIND)
    meta = header['meta']
    try:
        config = RunConfig.model_validate(meta['config'])
        checkpoint = Checkpoint(config)
        checkpoint.epochs.update(meta['epochs'])
        checkpoint.history = {
            stage: [EpochLoss.model_validate(row) for row in rows] for stage, rows in meta['history'].items()
        }
    except (KeyError, PydanticValidationError) as e:
        raise CheckpointError(f"Checkpoint '{path}' has invalid metadata: {e}") from e

    sections = meta.get('sections', [])
    if 'rvq' in sections:
        checkpoint.build_rvq(config.train.seed)
    if any(name in sections for name in GENERATOR_SECTIONS):
        checkpoint.build_generator(config.train.seed)
    for section in sections:
        module = getattr(checkpoint, section, None)
        if module is None:
            raise CheckpointError(f"Checkpoint '{path}' names unknown section {section!r}")
        prefix = f"{section}/"
        state = {
            name.removeprefix(prefix): torch.as_tensor(array)
            for name, array in arrays.items()
            if name.startswith(prefix)
        }
        try:
            module.load_state_dict(state, strict=True)
        except RuntimeError as e:
            raise CheckpointError(f"Checkpoint '{path}' section {section!r} does not match its config: {e}") from e

    for stage, stage_meta in meta.get('optimizers', {}).items():
        checkpoint.optimizer_state[stage] = _optimizer_state(stage, stage_meta, arrays)
    logger.debug(f"Loaded checkpoint {path} with sections {sections}")
    return checkpoint
