"""Ruin probabilities and overshoot laws for Markov-modulated jump processes
whose downward jumps are exponential (almost lower-semicontinuous processes).
"""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    ConsistencyError,
    DegenerateSampleError,
    DomainError,
    DriftError,
    ImproperRationalError,
    MMRiskError,
    ModelError,
    MultiplicityError,
    NoRootError,
    PipelineError,
    SchemaError,
    SingularityError,
    SpectralError,
    UnsupportedError,
)
from .model import (  # noqa: F401
    ErlangMixture,
    MarkovChainSpec,
    ProcessSpec,
    StateJumpLaw,
    ValidatedModel,
    drift_m1,
    dual_spec,
    load_model,
    make_model,
    example_model,
    reverse_chain,
    validate_spec,
)
