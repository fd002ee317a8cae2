"""Exception hierarchy. Every error carries a short machine-readable code."""


class ListDTRError(Exception):
    code = "E_GENERIC"


class RegionIndexError(ListDTRError, IndexError):
    code = "E_INDEX"


class RegimeFormatError(ListDTRError, ValueError):
    """Malformed regime document; ``location`` points at the offending element."""

    code = "E_PARSE"

    def __init__(self, message, location=None):
        self.location = location
        if location is not None:
            message = f"{location}: {message}"
        super().__init__(message)


class DatasetError(ListDTRError, ValueError):
    code = "E_DATA"


class KrrSolveError(ListDTRError, ArithmeticError):
    code = "E_SOLVE"


class ClauseSearchError(ListDTRError, ValueError):
    code = "E_SEARCH"


class PositivityError(ListDTRError, ValueError):
    code = "E_POSITIVITY"


class ScenarioError(ListDTRError, ValueError):
    code = "E_SCENARIO"


class ConfigError(ListDTRError, ValueError):
    code = "E_CONFIG"
