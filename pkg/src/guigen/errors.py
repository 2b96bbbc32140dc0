"""Exception hierarchy shared across the package."""


class GuigenError(Exception):
    """Base class for all package errors."""


class ConfigError(GuigenError):
    """Invalid or contradictory run configuration (fatal, exit code 2)."""


class IngestError(GuigenError):
    """Unreadable dataset source."""


class ProviderError(GuigenError):
    """Base class for provider transport/backend failures."""


class RetryableProviderError(ProviderError):
    """Transient transport failure; callers may retry."""


class FatalProviderError(ProviderError):
    """Non-retryable provider failure (bad credentials, misconfiguration)."""


class ContextOverflowError(ProviderError):
    """Backend reported the request exceeds its context window."""


class IndexBuildError(GuigenError):
    """Index construction aborted; carries how far it got."""

    def __init__(self, message: str, completed_entries: int):
        super().__init__(message)
        self.completed_entries = completed_entries


class IndexMismatchError(GuigenError):
    """Index built with a different embedding provider than the one in use."""


class ParseError(GuigenError):
    """LLM response did not match the demanded output grammar after a re-ask."""


class ExtractionError(GuigenError):
    """No HTML document candidate found in raw LLM text."""


class GenerationError(GuigenError):
    """A generation strategy stage failed; message names the stage."""


class StorageError(GuigenError):
    """Prototype/manifest persistence failed."""


class FallbackSignal(GuigenError):
    """Control-flow signal: retrieval produced zero usable screens, caller
    should fall back to plain instruction prompting."""
