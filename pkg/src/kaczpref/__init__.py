"""Kaczmarz-family online preference learning.

Update rules (damped, plain, and normalized projections plus session
blocks), the bidirectional candidate-sampling pipeline, and a
deterministic population simulator for benchmarking alignment,
session stability, and label-noise robustness.
"""

from .core import (
    DEFAULT_DIM,
    DegenerateVectorError,
    HyperParams,
    Label,
    PreferenceState,
    TagVector,
    cosine_score,
    normalize,
    row_norm_sq,
)
from .updaters import (
    DecayMeasurement,
    DegenerateUpdateError,
    GramDiagnostics,
    GramFactorizationError,
    MethodKind,
    NormBoundResult,
    SessionBatch,
    UpdateMethod,
    apply_sequential,
    block_nk_update,
    block_tk_update,
    decay_measurement,
    gram_solve,
    hinge_residual,
    k_nonorm_update,
    nk_update,
    norm_bound_check,
    ogd_update,
    tk_update,
)

__version__ = "0.1.0"
