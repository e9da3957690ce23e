"""Exception hierarchy shared by all modules."""


class SysIdError(Exception):
    """Base class for errors raised by langevin_sysid."""


class InvalidModelError(SysIdError, ValueError):
    """A right-hand side produced non-finite output at the initial state."""


class InsufficientDataError(SysIdError, ValueError):
    """Too few samples for the requested stencil or estimator."""


class ChainFailure(SysIdError, RuntimeError):
    """A Markov chain produced non-finite values.

    Attributes:
        iteration: iteration index at which the failure was detected, if known.
        round_index: outer thresholding round, filled in by the identify loop.
    """

    def __init__(self, message, iteration=None, round_index=None):
        super().__init__(message)
        self.iteration = iteration
        self.round_index = round_index

    def __str__(self):
        msg = super().__str__()
        where = []
        if self.round_index is not None:
            where.append(f"round {self.round_index}")
        if self.iteration is not None:
            where.append(f"iteration {self.iteration}")
        return f"{msg} ({', '.join(where)})" if where else msg


class ConfigurationError(SysIdError, ValueError):
    """Invalid sampler, acquisition or experiment configuration."""


class DegenerateEntryError(SysIdError, ValueError):
    """An active coefficient has an exactly-zero mode estimate."""


class BandUnavailableError(SysIdError, RuntimeError):
    """Every ensemble member diverged, so no credible band can be formed."""


class DataError(SysIdError, ValueError):
    """A data file could not be parsed or is inconsistent."""

    def __init__(self, message, row=None):
        super().__init__(message)
        self.row = row
