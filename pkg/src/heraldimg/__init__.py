"""Simulation and analysis of heralded single-photon images of hybrid
polarization/spatial-mode entanglement recorded with a gated ICCD camera."""

from .camera import CameraConfig, Frame, dark_frame, expose, sample_photons, simulate_frame
from .config import ExperimentConfig
from .counting import (
    BackgroundEstimator,
    BackgroundModel,
    Calibration,
    PhotonCalibrator,
    PhotonCount,
    PhotonEvent,
    PhotonExtractor,
    calibrate,
    estimate_background,
    extract_events,
    signal_to_photons,
    simulate_calibration,
)
from .exceptions import (
    DegenerateError,
    FormatError,
    HeraldImgError,
    NumericError,
    ParameterError,
    TooFewEventsError,
    UndefinedVisibilityError,
)
from .modes import (
    ComplexField,
    GridSpec,
    ModeSpec,
    ScalarField,
    default_waist,
    hg_field,
    ig_field,
    intensity,
    lg_field,
    mode_field,
    overlap,
    superpose,
)
from .state import HybridState, PolarizationState, SeparableState, herald, poincare_scan, separable_witness_value
from .witness import (
    AngularHistogram,
    WitnessAnalyzer,
    WitnessReport,
    align_gamma1,
    angular_bin,
    compute_witness,
    run_experiment,
    state_visibility_for,
    visibility,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
