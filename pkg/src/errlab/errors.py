"""Exception types raised across errlab."""


class ErrlabError(Exception):
    """Base class for all library errors."""


class ConfigError(ErrlabError):
    """Bad configuration or input data (CLI exit code 2)."""


class NotPositiveSemiDefinite(ErrlabError):
    pass


class NonFiniteIntegrand(ErrlabError):
    pass


class DomainError(ErrlabError, ValueError):
    pass


class Degenerate(ErrlabError, ValueError):
    pass


class NonPositiveTruth(ErrlabError):
    pass


class UnknownScenario(ConfigError):
    pass


class MissingNotImputed(ErrlabError):
    pass


class StratumTooSmall(ErrlabError):
    pass


class RankDeficient(ErrlabError):
    def __init__(self, columns, message=None):
        self.columns = list(columns)
        super().__init__(message or f"design is rank deficient at columns {self.columns}")


class WidthMismatch(ErrlabError, ValueError):
    pass


class LengthMismatch(ErrlabError, ValueError):
    pass


class NonFiniteActivation(ErrlabError, FloatingPointError):
    pass


class Diverged(ErrlabError):
    pass


class IndivisibleBudget(ConfigError):
    pass


class PartialFailure(ErrlabError):
    def __init__(self, failed_cells, table=None):
        self.failed_cells = list(failed_cells)
        self.table = table
        super().__init__(f"{len(self.failed_cells)} experiment cell(s) had failed replications")


class SchemaMismatch(ConfigError):
    pass


class ParseError(ConfigError):
    def __init__(self, row, column, message):
        self.row = row
        self.column = column
        super().__init__(f"row {row}, column {column!r}: {message}")


class TooManyLevels(ConfigError):
    pass


class MalformedResults(ConfigError):
    pass
