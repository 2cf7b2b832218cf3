import csv
import io
import sys
from collections.abc import Sequence

import torch
from loguru import logger
from pydantic import ValidationError as PydanticValidationError

from topomotion.exceptions import ConfigurationError
from topomotion.models.config import RunConfig
from topomotion.models.motion import Corpus
from topomotion.models.report import AblationReport, EpochLoss, IngestReport, MetricReport
from topomotion.models.skeleton import SkeletonGraph
from topomotion.motion.synth import synth_corpus
from topomotion.nn.generator import HashedTextEmbedder
from topomotion.services.checkpoint import Checkpoint
from topomotion.services.evaluation_service import EvaluationService
from topomotion.services.generator_service import GenerationResult, GeneratorService
from topomotion.services.ingest_service import IngestService
from topomotion.services.rvq_service import ProgressCallback, RvqService
from topomotion.utils.io import IOError, read_model_json, write_text
from topomotion.utils.settings import get_settings

LOSS_COLUMNS = tuple(EpochLoss.model_fields)


class Pipeline:
    """
    Main orchestrator for topomotion.

    Wires the corpus, RVQ, generator and evaluation services around one run
    configuration and provides the operations the command line exposes.
    """

    def __init__(self, config: RunConfig | None = None) -> None:
        self._init_logger()
        settings = get_settings()
        torch.set_num_threads(settings.num_threads)
        self.config = config or RunConfig()

        gen = self.config.generator
        self.text_embedder = HashedTextEmbedder(gen.text_dim, gen.hash_buckets, gen.text_seed)
        self.ingest_service = IngestService()
        self.rvq_service = RvqService(self.config)
        self.generator_service = GeneratorService(self.config, self.rvq_service, self.text_embedder)
        self.evaluation_service = EvaluationService(self.config, self.rvq_service, self.generator_service)

    def _init_logger(self) -> None:
        """Configure logging based on the TOPOMOTION_DEBUG environment variable.

        If TOPOMOTION_DEBUG is set to a truthy value, enables DEBUG level logging
        with source locations. Otherwise INFO and above are shown as bare messages.
        """
        logger.remove()
        settings = get_settings()
        level = "DEBUG" if settings.debug else "INFO"
        log_format = (
            "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
            "<level>{level: <8}</level> | "
            "<cyan>{name}</cyan>:<cyan>{function}</cyan>:<cyan>{line}</cyan> - "
            "<level>{message}</level>"
        ) if settings.debug else "<level>{message}</level>"
        logger.add(sys.stderr, level=level, format=log_format)

    @staticmethod
    def load_config(path: str | None = None, overrides: dict | None = None) -> RunConfig:
        """
        Load a run configuration from JSON, falling back to TOPOMOTION_CONFIG, then defaults.

        :param path: Config file path
        :param overrides: Nested values applied over the file, e.g. {'train': {'seed': 3}}
        :raises ConfigurationError: If the file is unreadable or fails schema validation
        """
        path = path or get_settings().config_path
        data: dict = {}
        if path:
            try:
                loaded = read_model_json(path)
            except (ValueError, IOError) as e:
                raise ConfigurationError(f"Cannot read config '{path}': {e}") from e
            if not isinstance(loaded, dict):
                raise ConfigurationError(f"Config '{path}' must hold a JSON object")
            data = loaded
        for section, values in (overrides or {}).items():
            if isinstance(values, dict):
                data.setdefault(section, {}).update(values)
            else:
                data[section] = values
        try:
            return RunConfig.model_validate(data)
        except PydanticValidationError as e:
            raise ConfigurationError(f"Invalid run configuration: {e}") from e

    def synth(self, seed: int, n_species: int, seqs_per_species: int, **kwargs) -> Corpus:
        return synth_corpus(seed, n_species, seqs_per_species, **kwargs)

    def ingest(self, paths: Sequence[str], resample: bool = False, species: str | None = None) -> tuple[Corpus, IngestReport]:
        return self.ingest_service.ingest(
            paths,
            resample=resample,
            species=species,
            seed=self.config.train.seed,
            max_joints=self.config.rvq.max_joints,
        )

    def train_rvq(
        self,
        corpus: Corpus,
        checkpoint: Checkpoint | None = None,
        epochs: int | None = None,
        progress_callback: ProgressCallback | None = None,
    ) -> Checkpoint:
        return self.rvq_service.train(corpus, checkpoint, epochs, progress_callback)

    def train_generator(
        self,
        corpus: Corpus,
        checkpoint: Checkpoint,
        epochs: int | None = None,
        progress_callback: ProgressCallback | None = None,
    ) -> Checkpoint:
        return self.generator_service.train(corpus, checkpoint, epochs, progress_callback)

    def generate(
        self,
        checkpoint: Checkpoint,
        text: str,
        skeleton: SkeletonGraph,
        num_frames: int,
        seed: int,
        cfg_scale: float | None = None,
    ) -> GenerationResult:
        return self.generator_service.generate(checkpoint, text, skeleton, num_frames, seed, cfg_scale)

    def evaluate(self, checkpoint: Checkpoint, corpus: Corpus, **kwargs) -> MetricReport:
        return self.evaluation_service.evaluate(checkpoint, corpus, **kwargs)

    def skeleton_ablation(self, corpus: Corpus, seeds: list[int], checkpoint: Checkpoint | None = None) -> AblationReport:
        return self.evaluation_service.run_skeleton_ablation(corpus, seeds, checkpoint)

    @staticmethod
    def write_loss_csv(history: list[EpochLoss], path: str) -> None:
        """One row per epoch; absent values are left empty."""
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=LOSS_COLUMNS, lineterminator='\n')
        writer.writeheader()
        for row in history:
            writer.writerow({k: ('' if v is None else v) for k, v in row.model_dump().items()})
        write_text(buffer.getvalue(), path)
        logger.debug(f"Wrote {len(history)} loss rows to {path}")
