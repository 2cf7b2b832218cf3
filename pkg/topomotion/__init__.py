"""topomotion.

Text-conditioned motion generation for skeletons of arbitrary topology:
BVH parsing, a residual vector-quantized motion tokenizer, a skeleton-aware
masked token generator, and the evaluation metrics around them.

Example usage:
    from topomotion import Pipeline

    pipeline = Pipeline()
    corpus = pipeline.synth(seed=0, n_species=4, seqs_per_species=8)
    checkpoint = pipeline.train_rvq(corpus)
    checkpoint = pipeline.train_generator(corpus, checkpoint)
    result = pipeline.generate(checkpoint, "a fox walking", corpus.skeletons['fox'], 60, seed=1)
"""

from topomotion.pipeline import Pipeline
from topomotion.exceptions import (
    TopoMotionError,
    ConfigurationError,
    ValidationError,
    DimensionError,
    ParseError,
    DataFormatError,
    CheckpointError,
    NumericalError,
)

# Models
from topomotion.models.config import RunConfig
from topomotion.models.motion import Corpus, CorpusEntry, MotionSequence, TextRecord
from topomotion.models.report import AblationReport, IngestReport, MetricReport
from topomotion.models.skeleton import Joint, SkeletonGraph
from topomotion.models.tokens import TokenSequences

# Services
from topomotion.services.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from topomotion.services.rvq_service import RvqService
from topomotion.services.generator_service import GeneratorService
from topomotion.services.evaluation_service import EvaluationService

__version__ = "0.1.0"

__all__ = [
    # Main entry point
    "Pipeline",
    # Exceptions
    "TopoMotionError",
    "ConfigurationError",
    "ValidationError",
    "DimensionError",
    "ParseError",
    "DataFormatError",
    "CheckpointError",
    "NumericalError",
    # Models
    "RunConfig",
    "Corpus",
    "CorpusEntry",
    "MotionSequence",
    "TextRecord",
    "AblationReport",
    "IngestReport",
    "MetricReport",
    "Joint",
    "SkeletonGraph",
    "TokenSequences",
    # Services
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "RvqService",
    "GeneratorService",
    "EvaluationService",
]
