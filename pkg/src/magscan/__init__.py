"""magscan: digital twin of a CPT atomic-magnetometer scan experiment."""

from .atoms import (
    MU_B_KHZ_PER_UT,
    AtomSpecies,
    FieldVector,
    ScanAxis,
    allowed_harmonics,
    larmor_frequency,
    partition_by_range,
    predict_rf_positions,
    predict_scan_positions,
    rf_detuning,
)
from .exceptions import (
    AmbiguousAssignmentError,
    CalibrationError,
    ConfigError,
    DomainError,
    FitError,
    InstrumentError,
    InsufficientDataError,
    MagscanError,
    NotEstimableError,
    ProtocolError,
    SchemaError,
    TransportError,
)
from .forward import (
    CellModel,
    ExperimentConfig,
    ModulationConfig,
    ScanDefinition,
    steady_absorption,
    synthesize_timeseries,
    zero_field_response,
)
from .lockin import LockinSettings, auto_phase, demodulate, run_scan
from .presets import RB85, arc_cell, bf_cell
from .traces import Trace

__version__ = "0.1.0"
