"""Flow-guided frame sampling and category-level artifact auditing.

The pipeline: dense optical flow scores every frame transition, the
sampler concentrates a fixed frame budget around the strongest motion
peaks, one yes/no question per artifact category is posed to a pluggable
predictor backend, and answers are aggregated into per-axis accuracy
reports.
"""

from .frameio import (
    DEFAULT_MAX_DIM,
    FrameError,
    FrameSequence,
    LumaImage,
    downscale,
    downscale_sequence,
    load_luma,
    load_sequence,
)
from .optflow import (
    FlowError,
    FlowField,
    FlowParams,
    flow_mean_magnitude,
    flow_two_frame,
    magnitude_stat,
    poly_expansion,
    read_flow,
    write_flow,
)
from .predictor import (
    AlwaysNoBackend,
    Backend,
    CommandBackend,
    PredictRequest,
    PredictResponse,
    ThresholdBackend,
    make_backend,
)
from .qa_eval import (
    Answer,
    AnnotationRecord,
    EvalError,
    EvalReport,
    PredictionRecord,
    QAPair,
    accuracy,
    evaluate,
    evaluate_records,
    generate_qa,
    parse_answer,
)
from .sampler import (
    Clip,
    InstabilityProfile,
    SampledIndices,
    SamplerError,
    SamplerParams,
    find_peaks,
    finalize_clips,
    fmg_dfs,
    instability_profile,
    smooth,
    top_k_peaks,
    build_clips,
    uniform_indices,
)
from .synthgen import FixtureSpec, generate, generate_frames
from .taxonomy import (
    ArtifactCategory,
    Axis,
    Taxonomy,
    TaxonomyError,
    default_taxonomy_path,
    load_taxonomy,
    parse_taxonomy,
)

__version__ = "0.1.0"
