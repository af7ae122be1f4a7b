"""Exception taxonomy shared across modules.

ValueError is used for bad arguments and contract violations; the classes
here mark the two failure families the CLI maps to dedicated exit codes.
"""


class FormatError(Exception):
    """A file is missing, truncated, corrupt, or structurally inconsistent."""


class NumericError(Exception):
    """An optimization produced a non-finite value and was aborted."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace
