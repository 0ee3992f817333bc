"""Block-wise low-rank completion of symmetric matrices from overlapping noisy sources."""
from .baselines import pretrain_complete, smc_complete, smc_impute, zero_impute
from .core import (
    AggregatedMatrix,
    CompletionResult,
    GroundTruth,
    PairRecord,
    SourceObservation,
    aggregate,
    complete,
    embeddings_of,
    estimate_noise,
    impute_pair,
)
from .errors import (
    BeltError,
    CompletionError,
    GenerationError,
    NumericalError,
    PreconditionError,
    ValidationError,
)
from .metrics import MetricRow, precision_at_k, relative_errors, translate
from .spectral import EigPair, coherence, condition_number, procrustes_map, select_rank, top_r_eig

__version__ = "0.1.0"
