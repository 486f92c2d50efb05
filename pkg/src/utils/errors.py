"""
Error types for the CAPE-KG engine.
Everything raised on purpose derives from CapeKGError so the CLI can tell
user errors (exit 1) apart from crashes (exit 2).
"""


class CapeKGError(Exception):
    """Base class for all expected, user-facing failures."""


class EmptySymbol(CapeKGError):
    """Raised when a symbol normalizes to the empty string."""


class ParseError(CapeKGError):
    """Malformed record in a facts/edits/fixtures file."""

    def __init__(self, message, line=None, path=None):
        self.line = line
        self.path = path
        where = ""
        if path:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(f"{where}{message}")


class BaseGraphSealed(CapeKGError):
    """Write attempted on a sealed base graph."""


class DuplicateCase(CapeKGError):
    """An overlay for this case already exists."""


class UnknownCase(CapeKGError):
    """No overlay is registered for this case."""


class CaseMismatch(CapeKGError):
    """Edit routed to an overlay of a different case."""


class SequenceError(CapeKGError):
    """Edit sequence numbers must strictly increase within a case."""


class ExtractionFailed(CapeKGError):
    """The detector produced no usable triple for an edit statement."""


class OracleUnavailable(CapeKGError):
    """Transport-level failure talking to an oracle."""


class ScriptMiss(CapeKGError):
    """The scripted LLM has no pattern matching the prompt."""


class DecompositionParseError(CapeKGError):
    """The LLM reply did not contain parseable numbered sub-questions."""


class SchemaError(CapeKGError):
    """Dataset record is missing a required field."""

    def __init__(self, message, index=None, field=None):
        self.index = index
        self.field = field
        prefix = f"case #{index}: " if index is not None else ""
        super().__init__(f"{prefix}{message}")


class ConfigError(CapeKGError):
    """Invalid configuration value or unknown config key."""


class UsageError(CapeKGError):
    """Bad command line."""
