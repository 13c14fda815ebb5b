import numpy as np
import pytest

from cubeqa.backbone import BackboneSpec
from cubeqa.pipeline import PipelineConfig
from cubeqa.projector import ProjectionConfig
from cubeqa.regressor import TrainConfig
from cubeqa.synth import generate_synthetic_dataset


def small_config(**overrides):
    """Low-resolution pipeline settings that keep unit tests fast."""
    kw = dict(
        projection=ProjectionConfig(render_resolution=128, splat_radius=1, resize_min=64, crop_size=48),
        backbone_c=BackboneSpec(role="c", seed=0, widths=(4, 8)),
        backbone_s=BackboneSpec(role="s", seed=1, widths=(4, 8)),
        train=TrainConfig(epochs=20, k_folds=3, hidden=16, learning_rate=1e-3),
    )
    kw.update(overrides)
    return PipelineConfig(**kw)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def tiny_synth(tmp_path_factory):
    """3 contents x (pristine + 3 distortions at level 1) = 12 rows."""
    out = tmp_path_factory.mktemp("tiny_synth")
    manifest = generate_synthetic_dataset(out, seed=3, n_contents=3, levels=(1,), n_points=6000)
    return manifest
