"""Shared pytest fixtures for topomotion tests."""
import pytest

from topomotion.models.config import (
    GenConfig,
    MetricConfig,
    RunConfig,
    RvqConfig,
    SkelEmbedConfig,
    TrainConfig,
)
from topomotion.models.skeleton import Joint, SkeletonGraph
from topomotion.motion.synth import synth_corpus
from topomotion.services.generator_service import GeneratorService
from topomotion.services.rvq_service import RvqService
from topomotion.skeleton.graph import JOINT_CHANNELS, ROOT_CHANNELS

BVH_HIERARCHY = """HIERARCHY
ROOT hips
{
\tOFFSET 0.0 0.0 0.0
\tCHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
\tJOINT spine
\t{
\t\tOFFSET 0.0 0.5 0.0
\t\tCHANNELS 3 Zrotation Xrotation Yrotation
\t\tJOINT left
\t\t{
\t\t\tOFFSET 0.3 0.0 0.0
\t\t\tCHANNELS 3 Zrotation Xrotation Yrotation
\t\t\tEnd Site
\t\t\t{
\t\t\t\tOFFSET 0.2 0.0 0.0
\t\t\t}
\t\t}
\t\tJOINT right
\t\t{
\t\t\tOFFSET -0.3 0.0 0.0
\t\t\tCHANNELS 3 Zrotation Xrotation Yrotation
\t\t\tEnd Site
\t\t\t{
\t\t\t\tOFFSET -0.2 0.0 0.0
\t\t\t}
\t\t}
\t}
}
"""

# Line of the first frame row in bvh_text output
FIRST_FRAME_LINE = 33
CHANNEL_COUNT = 15


def bvh_text(frames: list[list[float]], frame_time: float = 0.05) -> str:
    """The six-joint fixture hierarchy followed by the given channel rows."""
    rows = '\n'.join(' '.join(f"{v:.6f}" for v in row) for row in frames)
    return f"{BVH_HIERARCHY}MOTION\nFrames: {len(frames)}\nFrame Time: {frame_time}\n{rows}\n"


def rest_frames(count: int) -> list[list[float]]:
    return [[0.0] * CHANNEL_COUNT for _ in range(count)]


def tiny_config(**overrides) -> RunConfig:
    """Desk-scale run configuration small enough for unit tests."""
    config = RunConfig(
        rvq=RvqConfig(
            levels=2, codes_per_level=8, code_dim=8, encoder_channels=[16], joint_embed_dim=8, max_joints=32,
        ),
        skelembed=SkelEmbedConfig(layers=1, heads=2, model_dim=8, out_dim=8, ffn_mult=2),
        generator=GenConfig(
            layers=1, heads=2, model_dim=16, ffn_mult=2, dropout=0.0, text_dim=16, cond_dim=16,
            hash_buckets=64, max_tokens=60, unmask_iters=4,
        ),
        metrics=MetricConfig(
            embed_dim=4, pool_size=4, diversity_pairs=10, mm_prompts=2, mm_reps=2, embedder_epochs=5,
        ),
        train=TrainConfig(batch_size=4, rvq_epochs=2, gen_epochs=2),
    )
    return config.model_copy(update=overrides) if overrides else config


@pytest.fixture
def config():
    """A fresh tiny run configuration."""
    return tiny_config()


@pytest.fixture
def skeleton():
    """Six-joint Y-shaped skeleton whose longest chain already has unit length."""
    return SkeletonGraph(
        name='fork',
        species='fork',
        joints=(
            Joint(name='hips', parent=None, offset=(0.0, 0.0, 0.0), channels=ROOT_CHANNELS),
            Joint(name='spine', parent=0, offset=(0.0, 0.5, 0.0), channels=JOINT_CHANNELS),
            Joint(name='left', parent=1, offset=(0.3, 0.0, 0.0), channels=JOINT_CHANNELS),
            Joint(name='left_End', parent=2, offset=(0.2, 0.0, 0.0)),
            Joint(name='right', parent=1, offset=(-0.3, 0.0, 0.0), channels=JOINT_CHANNELS),
            Joint(name='right_End', parent=4, offset=(-0.2, 0.0, 0.0)),
        ),
    )


@pytest.fixture(scope='session')
def corpus():
    """Nine short synthetic sequences over three species; three land in the test split."""
    return synth_corpus(seed=0, n_species=3, seqs_per_species=3, joint_range=(4, 6), frame_range=(20, 30), test_ratio=0.34)


@pytest.fixture(scope='session')
def rvq_checkpoint(corpus):
    """RVQ trained for two epochs on the shared corpus. Do not mutate."""
    return RvqService(tiny_config()).train(corpus)


@pytest.fixture(scope='session')
def trained_checkpoint(corpus):
    """RVQ plus generator sections, two epochs each. Do not mutate."""
    config = tiny_config()
    rvq_service = RvqService(config)
    checkpoint = rvq_service.train(corpus)
    return GeneratorService(config, rvq_service).train(corpus, checkpoint)
