"""OpenMP pragma generation toolkit.

Turns pragma generation into a testable pipeline: corpus preprocessing
with pragma-after-scope repositioning, a three-part pragma model
(prefix, directives/clauses, control structures), pluggable completion
backends, chained iterative prompting, and evaluation harnesses for
perplexity and strict/clause/control matching.
"""

from .backends import (CompletionRequest, CompletionResult, NGramBackend,
                       NGramModel, RemoteBackend, ScriptedBackend,
                       load_model, save_model, train_ngram)
from .chain import (BatchResult, ChainState, basic_generate, chain_of_omp,
                    generate_batch)
from .corpus import (CorpusSample, SplitSpec, TrainingText,
                     extract_omp_regions, pragma_frequency, reposition,
                     size_filter, split, strip_comments)
from .errors import (BackendUnavailable, BadMagic, ChainStalled,
                     CorruptPayload, EmptyCorpus, MalformedPragma,
                     NoLogprobSupport, NotTrained, OmpForgeError,
                     ScriptedExhausted, UnknownClause, VersionMismatch)
from .evaluate import (EvalReport, PerplexityAccumulator, eval_chain_vs_basic,
                       eval_clause_task, eval_generation, perplexity)
from .pragma import (PragmaAst, PragmaItem, canonical, clause_and_control_match,
                     clause_match, first_component, parse_pragma,
                     render_pragma, strict_match)

__version__ = "0.1.0"

__all__ = [
    "BackendUnavailable", "BadMagic", "BatchResult", "ChainStalled",
    "ChainState", "CompletionRequest", "CompletionResult", "CorpusSample",
    "CorruptPayload", "EmptyCorpus", "EvalReport", "MalformedPragma",
    "NGramBackend", "NGramModel", "NoLogprobSupport", "NotTrained",
    "OmpForgeError", "PerplexityAccumulator", "PragmaAst", "PragmaItem",
    "RemoteBackend", "ScriptedBackend", "ScriptedExhausted", "SplitSpec",
    "TrainingText", "UnknownClause", "VersionMismatch", "basic_generate",
    "canonical", "chain_of_omp", "clause_and_control_match", "clause_match",
    "eval_chain_vs_basic", "eval_clause_task", "eval_generation",
    "extract_omp_regions", "first_component", "generate_batch", "load_model",
    "parse_pragma", "perplexity", "pragma_frequency", "render_pragma",
    "reposition", "save_model", "size_filter", "split", "strict_match",
    "strip_comments", "train_ngram",
]
