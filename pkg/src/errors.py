from typing import Optional


class CoopNetError(Exception):
    """Base class for all coopnet failures"""


class ConfigError(CoopNetError, ValueError):
    pass


class NetworkError(CoopNetError, ValueError):
    pass


class SurveyDataError(CoopNetError, ValueError):
    """Malformed survey input; carries the 1-based file line when known"""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ModelError(CoopNetError, ValueError):
    """Invalid model specification or a non-finite density evaluation"""

    def __init__(self, message: str, row: Optional[int] = None, parameter: Optional[str] = None):
        self.row = row
        self.parameter = parameter
        super().__init__(message)


class SamplerError(CoopNetError):
    pass


class DiagnosticsError(CoopNetError, ValueError):
    pass
