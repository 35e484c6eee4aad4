"""Exception hierarchy shared by every module of the workbench."""


class HybridQCError(Exception):
    """Base class for all errors raised by hybridqc."""


class DimensionError(HybridQCError, ValueError):
    """Array shapes or vector lengths do not conform."""


class ConfigurationError(HybridQCError, ValueError):
    """An invalid setting: wire index, qubit count, epsilon, template id..."""


class DataError(HybridQCError, ValueError):
    """A dataset is empty, single-class, or inconsistent."""


class FormatError(HybridQCError, ValueError):
    """A file (checkpoint, PPM, template, CSV) is malformed."""


class ContractError(HybridQCError, RuntimeError):
    """An API precondition was violated, e.g. backward from a non-scalar."""


class UnsupportedOracleError(HybridQCError, ValueError):
    """The parameter-shift oracle cannot differentiate the requested parameter."""
