"""
Exception hierarchy shared by every layer. Each class carries the exit code
the CLI returns for it.
"""
from typing import Optional


class NlsError(Exception):
    """Base error for the smoother toolkit"""
    exit_code = 1


class ConfigurationError(NlsError):
    """Invalid configuration, layer specs or objective"""
    exit_code = 2


class InputError(NlsError):
    """Dimension mismatches and empty inputs"""


class NumericError(NlsError):
    """Non-finite values or singular systems"""

    def __init__(self, message: str, layer: Optional[int] = None, instance: Optional[int] = None):
        super().__init__(message)
        self.layer = layer
        self.instance = instance


class IngestionError(NlsError):
    """CSV cells that cannot be used, with their location"""

    def __init__(self, message: str, row: Optional[int] = None, column: Optional[str] = None):
        super().__init__(message)
        self.row = row
        self.column = column
