"""Exception and warning types.

Every error carries a short machine-readable ``category`` so the command line
front end can report failures without parsing messages.
"""


class IrfavgError(Exception):
    category = "error"


class InsufficientDataError(IrfavgError):
    category = "insufficient-data"


class SingularDesignError(IrfavgError):
    category = "singular-design"

    def __init__(self, message, column=None):
        super().__init__(message)
        self.column = column


class DegenerateCovarianceError(IrfavgError):
    category = "degenerate-covariance"


class StationarityError(IrfavgError):
    category = "non-stationary"


class IdentificationError(IrfavgError):
    category = "identification"


class IrrelevantInstrumentError(IdentificationError):
    category = "irrelevant-instrument"


class HorizonMismatchError(IrfavgError):
    category = "horizon-mismatch"


class BootstrapFailureError(IrfavgError):
    category = "bootstrap-failure"


class ExperimentFailureError(IrfavgError):
    category = "experiment-failure"


class CsvFormatError(IrfavgError):
    category = "csv-format"

    def __init__(self, path, line, message):
        super().__init__(f"{path}:{line}: {message}")
        self.path = path
        self.line = line


class ConfigError(IrfavgError):
    category = "config"


class WeakInstrumentWarning(UserWarning):
    pass


class ExplosiveModelWarning(UserWarning):
    pass
