"""Exception hierarchy.

Each class carries the CLI exit code used for its failure class so that
callers scripting the command line can tell format, numeric and transport
problems apart.
"""


class AirtError(Exception):
    exit_code = 1


class FormatError(AirtError, ValueError):
    """Malformed file, schema violation or contract-violating input."""

    exit_code = 2

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericError(AirtError, ArithmeticError):
    """Stability violation, divergence, or a degenerate statistic."""

    exit_code = 3


class DivergenceError(NumericError):
    def __init__(self, message, epoch):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch


class TransportError(AirtError):
    """Timeout or retry exhaustion talking to a detection endpoint."""

    exit_code = 4


class ProtocolError(AirtError):
    """Detection endpoint answered with a payload violating the wire protocol."""

    exit_code = 4

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload
