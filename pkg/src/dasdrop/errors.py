"""Exception hierarchy. Each class carries a short category used by the CLI."""


class DasError(Exception):
    category = "runtime"


class ShapeError(DasError, ValueError):
    category = "shape"


class MaskError(DasError, ValueError):
    category = "mask"


class ContractError(DasError, ValueError):
    category = "contract"


class SchemaError(DasError, ValueError):
    category = "schema"


class ConfigError(DasError, ValueError):
    category = "config"


class DataError(DasError, ValueError):
    category = "data"


class CompatibilityError(DasError, ValueError):
    category = "compat"


class UndefinedMetricError(DasError, ValueError):
    category = "metric"


class DivergenceError(DasError, ArithmeticError):
    category = "divergence"

    def __init__(self, message, last_good=None):
        super().__init__(message)
        self.last_good = last_good
