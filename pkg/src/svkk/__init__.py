"""Stokes-vector Kramers-Kronig direct-detection link simulator.

End-to-end simulation of a dual-polarization QAM transceiver that transmits
a digital carrier, detects the four Stokes rails directly, de-rotates the
polarization state with trained 1-tap coefficients, reconstructs the complex
fields from the power rails via the Kramers-Kronig relation, and equalizes
with an adaptive 4x4 real MIMO filter.
"""

__version__ = "0.1.0"

from .channel import FiberParams, ImpairmentSet, JonesRotation
from .config import EqualizerSpec, LinkConfig, RotationSpec, SweepSpec
from .kk import KKConfig, kk_reconstruct, min_phase_monitor
from .metrics import LinkResult, estimate_osnr, evm_snr, hard_decide
from .pipeline import RunOutput, run_link, run_sweep
from .signals import RealSignal, Signal
from .stokes import DerotationMatrix, StokesRails, detect_stokes
from .studies import STUDIES, run_study
from .txdsp import DualPolFrame, FrameLayout, ModFormat, build_frame, get_format

__all__ = [
    "__version__",
    "Signal",
    "RealSignal",
    "ModFormat",
    "FrameLayout",
    "DualPolFrame",
    "get_format",
    "build_frame",
    "FiberParams",
    "JonesRotation",
    "ImpairmentSet",
    "StokesRails",
    "DerotationMatrix",
    "detect_stokes",
    "KKConfig",
    "kk_reconstruct",
    "min_phase_monitor",
    "LinkResult",
    "evm_snr",
    "estimate_osnr",
    "hard_decide",
    "LinkConfig",
    "SweepSpec",
    "RotationSpec",
    "EqualizerSpec",
    "run_link",
    "run_sweep",
    "run_study",
    "STUDIES",
    "RunOutput",
]
