"""Hard text-image pair mining and desk-scale continuous training over
precomputed embedding matrices."""

from .analysis import (
    CriteriaCurve,
    RankSimilarityMatrix,
    criteria_curve,
    kendall_tau,
    tau_sensitivity,
)
from .errors import (
    ConfigError,
    DataError,
    DivergenceError,
    ManifestError,
    PairmineError,
    ZeroNormRowError,
)
from .losses import (
    LossBatch,
    LossConfig,
    LossValueAndGrads,
    clip_loss,
    finetune_loss,
    hnml,
)
from .mining import (
    HardPairResult,
    MiningConfig,
    MiningReport,
    MiningSummary,
    fast_pool,
    filter_noise,
    mine_fast,
    mine_hpm,
    mine_im,
    mine_tm,
    read_report,
    score_candidates,
    top_k_ranked,
    write_report,
    write_summary,
)
from .similarity import SupportVector, cosine, support_vector
from .store import (
    Manifest,
    PairDataset,
    SynthResult,
    load_dataset,
    load_ground_truth,
    normalize,
    save_dataset,
    save_ground_truth,
    synth_clusters,
)
from .training import (
    BatchPlan,
    ComposerConfig,
    ToyEncoder,
    TraceEntry,
    TrainConfig,
    compose_batch,
    eval_retrieval,
    load_encoder,
    save_encoder,
    train,
)

__version__ = "0.1.0"
