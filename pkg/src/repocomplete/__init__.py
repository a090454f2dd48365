"""Repository-level code completion harness.

Index a repository into overlapping line windows, retrieve similar snippets
for a completion hole, assemble prompts under a token budget, iterate
retrieval with the model's own drafts, and score the results.
"""

from .dataset import (
    ApiDefinition,
    CallSite,
    CompletionSample,
    collect_api_index,
    extract_api_samples,
    extract_function_samples,
    extract_line_samples,
    load_samples,
    save_samples,
)
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    ExecutionError,
    RepoCompleteError,
    RetrievalError,
)
from .evaluation import (
    EvalRecord,
    PassRateResult,
    aggregate,
    edit_similarity,
    exact_match,
    levenshtein,
    pass_rate,
)
from .generation import (
    Generator,
    HttpGenerator,
    MockGenerator,
    estimate_tokens,
    truncate_for_task,
)
from .pipeline import (
    IterationTrace,
    PipelineConfig,
    PromptBundle,
    SampleResult,
    build_prompt,
    build_query,
    run_sample,
)
from .repo_index import (
    CodeSnippet,
    IndexConfig,
    SnippetIndex,
    SourceFile,
    build_index,
    exclusion_mask,
    load_index,
    save_index,
    tokenize,
)
from .retrieval import (
    EmbeddingProvider,
    HttpEmbeddingProvider,
    MockEmbeddingProvider,
    RetrievalQuery,
    ScoredSnippet,
    jaccard,
    retrieve,
    retrieve_dense,
)

__version__ = "0.1.0"

__all__ = [
    "ApiDefinition",
    "BackendError",
    "CallSite",
    "CodeSnippet",
    "CompletionSample",
    "ConfigError",
    "DataError",
    "EmbeddingProvider",
    "EvalRecord",
    "ExecutionError",
    "Generator",
    "HttpEmbeddingProvider",
    "HttpGenerator",
    "IndexConfig",
    "IterationTrace",
    "MockEmbeddingProvider",
    "MockGenerator",
    "PassRateResult",
    "PipelineConfig",
    "PromptBundle",
    "RepoCompleteError",
    "RetrievalError",
    "RetrievalQuery",
    "SampleResult",
    "ScoredSnippet",
    "SnippetIndex",
    "SourceFile",
    "aggregate",
    "build_index",
    "build_prompt",
    "build_query",
    "collect_api_index",
    "edit_similarity",
    "estimate_tokens",
    "exact_match",
    "exclusion_mask",
    "extract_api_samples",
    "extract_function_samples",
    "extract_line_samples",
    "jaccard",
    "levenshtein",
    "load_index",
    "load_samples",
    "pass_rate",
    "retrieve",
    "retrieve_dense",
    "run_sample",
    "save_index",
    "save_samples",
    "tokenize",
    "truncate_for_task",
]
