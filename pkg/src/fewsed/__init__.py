"""Few-shot bioacoustic sound event detection.

Detects the remaining events of a recording from its first few annotated
examples: PCEN mel features, pooled segment embeddings, a two-prototype
classifier, optional negative re-selection from the query region, and
optional teacher-student adaptation of the prototypes.
"""

from .adaptation import (
    AdaptiveConfig,
    AdaptStep,
    LossBreakdown,
    adapt_student,
    adaptive_loss,
    kl_divergence_sum,
    mutual_information_terms,
    student_loss_gradient,
)
from .embedders import (
    EmbedderSpec,
    LabeledFeatures,
    embed,
    finetune_on_support,
    l2_normalize,
    pretrain_embedder,
    segment_stats,
)
from .episodes import (
    Annotation,
    Episode,
    SegmentGrid,
    SegmentPlan,
    build_episode,
    make_grid,
    parse_annotations,
    plan_segments,
)
from .errors import FewsedError, PipelineStageError
from .frontend import FrontendConfig, PcenGram, PcenParams, Waveform, load_wav, mel_pcen, resample
from .pipeline import (
    EpisodeResult,
    EvalConfig,
    PipelineConfig,
    load_config,
    run_benchmark,
    run_episode,
    run_recording,
    save_config,
)
from .prototypes import (
    ClassifierWeights,
    SelectionResult,
    build_prototypes,
    predict_probs,
    rebuild_classifier,
    select_negatives,
)
from .scoring import (
    EvalResult,
    PredictedEvent,
    aggregate,
    evaluate_events,
    f_measure,
    match_events,
    threshold_and_merge,
)
from .synth import PROFILES, SynthProfile, SynthTask, generate_corpus, generate_task

__version__ = "0.1.0"
