"""Energy model for HEVC intra decoding: feature traces, model evaluation,
power-log integration and constant calibration."""

from .calibration import (
    FitResult,
    MeasurementPair,
    SimulatorConfig,
    design_vector,
    fit_coeff_energy,
    fit_constants,
    fit_value_energy,
    simulate,
    spanning_corpus,
)
from .measurement import (
    EnergyMeasurement,
    PowerLog,
    decoder_energy,
    differential_unit_energy,
    integrate_power_log,
)
from .model import (
    EnergyConstants,
    EstimateReport,
    builtin_constants,
    estimate_accurate,
    estimate_simplified,
    mode_spread,
    relative_error,
)
from .trace import FeatureCounts, StreamHeader, TraceRecord, aggregate, classify_mode, validate_record

__version__ = "0.1.0"
