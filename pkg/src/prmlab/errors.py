"""Exception hierarchy shared across the package."""


class PrmlabError(Exception):
    """Base class for all package errors."""


class ParseError(PrmlabError):
    """Raw solution text could not be parsed."""


class InvalidInputError(PrmlabError):
    """A precondition on arguments was violated."""


class GradingError(PrmlabError):
    """Grading infrastructure failed (distinct from an incorrect solution)."""


class TransportError(PrmlabError):
    """A backend was unreachable after exhausting retries."""


class ProtocolError(PrmlabError):
    """A remote backend returned a malformed response."""


class CorpusMissError(PrmlabError):
    """The replay corpus has no (or not enough) records for a key."""


class TrainingError(PrmlabError):
    """Verifier training failed (bad data or divergence)."""


class UnsupportedMethodError(PrmlabError):
    """The requested evaluation method does not apply to this pool."""


class ConfigError(PrmlabError):
    """Run configuration failed validation.

    ``errors`` carries every individual problem found, not just the first.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {e}" for e in self.errors))
