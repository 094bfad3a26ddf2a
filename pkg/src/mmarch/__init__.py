"""mm-arch: a deterministic cognitive-architecture runtime.

A central production system reads working-memory buffers that peripheral
shadow production systems fill by filtering an activation-ranked middle
memory, which in turn is fed by pluggable generative predictors.
"""

from .chunks import (
    WILDCARD,
    Chunk,
    ChunkFactory,
    Query,
    complete_query,
    make_chunk,
    make_query,
    match_query,
)
from .codec import Codebook, UnpackResult, bind, cosine, pack, unbind, unpack
from .errors import (
    BindingError,
    ChunkError,
    MMArchError,
    ModelValidationError,
    OwnershipError,
    TemporalOrderError,
    TraceFormatError,
    UnknownEntryError,
    UnsupportedTraceVersion,
)
from .memory import Buffer, MiddleMemory, MMEntry, WorkingMemory, context_vector
from .metrics import RunMetrics, metrics
from .model import ModelDefinition, dumps_model, load_model, parse_model, write_model
from .productions import Action, Condition, Production, Template, UtilityLearner
from .runtime import Session, run
from .shadows import ContributionLedger, ShadowSystem
from .trace import Trace, TraceEvent, read_trace, trace_to_bytes, write_trace

__version__ = "0.1.0"
