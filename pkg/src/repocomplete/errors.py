"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: usage problems are raised by argparse
itself, DataError means malformed or inconsistent input artifacts, and
BackendError covers remote generation/embedding failures.
"""


class RepoCompleteError(Exception):
    """Base class for package-specific failures."""


class ConfigError(RepoCompleteError):
    """Invalid or missing configuration (bad credentials, bad endpoint)."""


class DataError(RepoCompleteError):
    """Malformed input file, schema violation, or inconsistent artifacts."""


class BackendError(RepoCompleteError):
    """A remote backend failed after retries were exhausted."""


class RetrievalError(BackendError):
    """Dense retrieval could not obtain embeddings."""


class ExecutionError(RepoCompleteError):
    """A test command could not be executed at all (distinct from failing)."""
