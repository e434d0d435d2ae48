"""Deterministic tooling around a pluggable damage detector.

The package covers everything in a UAV damage-inspection pipeline except
the neural detector itself: polygon-annotation ingestion, Poisson-blending
and collage-based augmentation, sliding-window subdivision with prediction
merging, any-overlap detection metrics, and physical area measurement. The
detector is a boundary defined by the prediction interchange JSON format in
:mod:`towervision.tile`.
"""

from .annot import (
    AnnotatedImage,
    DatasetManifest,
    MaskRegion,
    PolygonRegion,
    parse_via,
    read_image_manifest,
    split_manifest,
    write_image_manifest,
)
from .blend import CloneTask, SolverSettings, residual, seamless_clone, solve_interior
from .core import (
    ClassLabel,
    ConfigurationError,
    CorruptRleError,
    Instance,
    InvalidPolygonError,
    ShapeMismatchError,
    ToolkitError,
    load_image,
    mask_overlap,
    rasterize,
    rle_decode,
    rle_encode,
    save_image,
)
from .metrics import (
    AreaMeasurement,
    EvalPair,
    ReferenceScale,
    ThresholdSweep,
    aggregate_iou,
    measure_area,
    overlay_detections,
    precision_recall,
    sweep,
)
from .seeds import derive_rng, derive_seed
from .synth import (
    BasicAugmentSettings,
    ExemplarCrop,
    SynthSettings,
    SyntheticSample,
    basic_augment,
    build_background,
    generate_sample,
    generate_samples,
    load_exemplar_library,
    make_exemplar,
    replay_sample,
    save_exemplar,
    transform_exemplar,
    write_dataset,
)
from .tile import (
    MergeSettings,
    MockDetectorSettings,
    PredictionSet,
    TilingPlan,
    Window,
    clip_to_window,
    downscale_image,
    extract_windows,
    merge_predictions,
    mock_detect,
    plan_tiling,
    read_predictions,
    resize_mask,
    upscale_predictions,
    validate_interchange,
    write_predictions,
)

__version__ = "0.1.0"
