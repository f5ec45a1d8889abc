"""Exception types. Each carries a short category used by the CLI error line."""


class HierSLUError(Exception):
    category = "error"


class ConfigError(HierSLUError):
    category = "config"


class DataError(HierSLUError):
    category = "data"


class NumericalDomainError(HierSLUError):
    category = "numerical"

    def __init__(self, message, batch_index=None):
        if batch_index is not None:
            message = f"{message} (batch index {batch_index})"
        super().__init__(message)
        self.batch_index = batch_index
