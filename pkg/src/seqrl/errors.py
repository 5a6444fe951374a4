"""Exception types shared across the toolkit.

The CLI maps each family to a distinct exit code; library code raises plain
ValueError / IndexError / RuntimeError for local contract violations and these
types for configuration and file-level problems.
"""


class ToolkitError(Exception):
    """Base class for errors the CLI reports with a category tag."""

    exit_code = 1
    category = "error"


class ConfigError(ToolkitError):
    """Invalid or inconsistent configuration values."""

    exit_code = 2
    category = "config"


class SchemaError(ToolkitError):
    """Structurally valid file whose contents do not match expectations."""

    exit_code = 3
    category = "schema"


class ParseError(ToolkitError):
    """Malformed file content. Carries the 1-based line number."""

    exit_code = 3
    category = "parse"

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
