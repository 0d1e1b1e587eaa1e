class DimerError(Exception):
    """Base class for every error raised by nsdimer."""


class UsageError(DimerError, ValueError):
    """Invalid user input: empty grids, unsupported parameter combinations."""


class DimensionMismatchError(DimerError, ValueError):
    pass


class MemoryCapError(UsageError):
    """Floquet map requested above the configured particle-number cap."""


class NumericalError(DimerError, RuntimeError):
    """Integration produced non-finite values or exceeded its step budget."""


class PoleSingularityError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    pass


class DarkStateJumpError(NumericalError):
    """A jump was triggered on a state annihilated by the jump operator."""


class DegenerateCloudError(NumericalError):
    """Stroboscopic point cloud has zero extent; rotation number is undefined."""


class OutputIntegrityError(DimerError, RuntimeError):
    """Run directory holds files the manifest does not account for."""
