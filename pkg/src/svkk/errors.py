"""Exception types raised by the svkk package."""


class SvkkError(Exception):
    """Base class for all svkk errors."""


class InvalidInputError(SvkkError, ValueError):
    """An operation received data that violates its preconditions."""


class InvalidConfigError(SvkkError, ValueError):
    """A configuration is internally inconsistent or physically impossible."""


class UnsupportedRatioError(InvalidInputError):
    """A resampling ratio is not expressible with a small rational factor."""


class SyncFailureError(SvkkError):
    """Frame synchronization could not find a reliable correlation peak."""


class DegenerateTrainingError(SvkkError):
    """The measured training Stokes vectors are too ill-conditioned to invert."""


class EqualizerDivergedError(SvkkError):
    """Adaptive equalizer tap energy exceeded the divergence alarm threshold."""

    def __init__(self, symbol_index: int, tap_energy: float):
        self.symbol_index = symbol_index
        self.tap_energy = tap_energy
        super().__init__(
            f"equalizer diverged at symbol {symbol_index} "
            f"(tap energy {tap_energy:.3e})"
        )


class EstimationUnavailableError(SvkkError):
    """A spectral estimate cannot be formed from the available data."""


class PipelineError(SvkkError):
    """A pipeline stage failed; the message names the stage."""
