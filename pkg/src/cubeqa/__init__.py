"""Projection-based full-reference and no-reference point cloud quality assessment."""

__version__ = "0.1.0"

from .backbone import BackboneSpec, extract_feature_map
from .features import (
    QualityFeatureVector,
    SimilarityConstants,
    channel_statistics,
    fr_quality_vector,
    nr_quality_vector,
    structure_similarity,
    texture_similarity,
)
from .metrics import ScoredSet, bw_cc, build_pairs, ds_auc, plcc, runtime_report, srcc
from .pipeline import (
    DatasetManifest,
    PipelineConfig,
    run_evaluation,
    score_fr,
    score_nr,
    train_from_manifest,
)
from .ply import PointCloud, normalize_to_unit_cube, parse_ply, read_ply, write_ply
from .projector import (
    ProjectionConfig,
    ProjectionSet,
    crop_patch,
    remove_background,
    render_cube_projections,
    resize_min_dimension,
)
from .regressor import (
    FusionWeights,
    RegressionHead,
    TrainConfig,
    adam_step,
    fuse_projection_scores,
    head_forward,
    kfold_split,
    mse_loss,
    train_heads,
)
from .synth import generate_synthetic_dataset
