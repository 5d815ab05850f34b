"""maskfuse: refine video semantic segmentation with class-agnostic masklets."""

from .classifier import (
    MlpModel,
    TrainConfig,
    compose_segmentation,
    load_model,
    mlp_forward,
    mlp_train,
    pool_features,
    predict_classes,
    save_model,
)
from .errors import (
    ConfigError,
    FormatError,
    MaskfuseError,
    MetricUndefinedError,
    TrainingDivergedError,
    ValidationError,
)
from .filtering import FilterConfig, filter_masklets, stability_score
from .ingest import (
    ClipManifest,
    FeatureMap,
    FrameEntry,
    read_featuremap,
    read_labelmap,
    read_manifest,
    read_masklets,
    write_featuremap,
    write_labelmap,
    write_manifest,
    write_masklets,
)
from .masks import BinaryMask, LabelMap, Masklet, MaskletSet, mask_area, mask_iou, rle_decode, rle_encode
from .metrics import (
    ConfusionMatrix,
    MetricsReport,
    accumulate_confusion,
    boundary_band,
    fwiou,
    mbiou,
    miou,
    mvc,
    per_class_iou,
    vc_n,
)
from .pipeline import (
    PipelineConfig,
    SweepSpec,
    load_bundle,
    refine_bundle,
    run_eval,
    run_pipeline,
    run_sweep,
)
from .refiner import RefineConfig, predominant_class, refine_clip, refine_frame, track_votes
from .synth import (
    PerturbConfig,
    ScoreModel,
    SynthConfig,
    class_centers,
    generate_clip,
    generate_features,
    oracle_masklets,
    perturb_prediction,
)
from .tracker import MaskletTrack, TrackerConfig, build_tracks, stitch_windows, track_clip

__version__ = "0.1.0"
