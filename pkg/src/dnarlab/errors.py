"""Exception hierarchy shared by all dnarlab modules."""


class DnarError(Exception):
    """Base class for every error raised by dnarlab."""


class ConfigurationError(DnarError):
    """Invalid user input; the CLI maps these to exit status 2."""


class NumericalError(DnarError):
    """A computation broke down; the CLI maps these to exit status 1."""


class SingularEvaluation(NumericalError):
    pass


class NonFiniteState(NumericalError):
    pass


class DimensionMismatch(ConfigurationError):
    pass


class MarginalMismatch(ConfigurationError):
    pass


class NonNormalizable(ConfigurationError):
    pass


class KernelTooWide(ConfigurationError):
    pass


class DomainMismatch(ConfigurationError):
    pass


class CenterMismatch(ConfigurationError):
    pass


class NonzeroMeanOmega(ConfigurationError):
    pass


class FormatError(ConfigurationError):
    pass


class SchemaError(ConfigurationError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class VersionError(ConfigurationError):
    pass
