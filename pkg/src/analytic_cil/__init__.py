"""Analytic class-incremental classifiers (LDA, RGDA, low-rank RGDA) and
Hopfield-style drift compensation for Gaussian class statistics."""

from .classifiers import (
    LinearClassifier,
    RegularizationParams,
    RgdaClassifier,
    SgdConfig,
    build_lda,
    build_rgda,
    regularize_covariance,
    rgda_score,
    train_sgd_baseline,
)
from .errors import DimensionError, FormatError, NumericalError
from .hopdc import (
    AnchorBank,
    HopdcConfig,
    build_anchor_bank,
    compensate_class,
    compensate_registry,
    estimate_drift,
    hopfield_energy,
    hopfield_update,
    topk_softmax,
    verify_error_bound,
)
from .lr_rgda import (
    FactorCache,
    LrRgdaClassifier,
    build_lr_rgda,
    log_det_lemma,
    low_rank_factor,
    lr_rgda_score,
    woodbury_inverse,
)
from .stats import (
    FeatureMatrix,
    GaussianClassStats,
    StatsRegistry,
    accumulate,
    average_covariance,
    reestimate_from_samples,
)

__version__ = "0.1.0"
