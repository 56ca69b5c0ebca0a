"""Bundled species, cell and experiment presets.

Cell numbers are phenomenological: dip amplitudes and widths are tuned so
every feature the scan geometry allows clears the detection threshold at the
default noise level, with the buffer-gas (BF) and anti-relaxation-coated
(ARC) presets reproducing their characteristic demodulated widths under the
standard modulation settings.
"""

from __future__ import annotations

from .atoms import AtomSpecies, FieldVector, ScanAxis
from .forward import (
    ABSORPTION,
    TRANSMISSION,
    CellModel,
    ExperimentConfig,
    ModulationConfig,
    ScanDefinition,
)
from .lockin import LockinSettings

RB85 = AtomSpecies.from_constants(
    name="rb85",
    g_f=1.0 / 3.0,
    hfs_splitting_khz=3035732.0,
    n_max=5,
)


def bf_cell() -> CellModel:
    """Buffer-gas cell: broad two-photon lines, strong zero-field signal."""
    return CellModel(
        kind="BF",
        two_photon_hwhm_khz=3.8,
        harmonic_amp={
            0: 0.004,
            1: 0.003, -1: 0.003,
            2: 0.0035, -2: 0.0035,
            3: 0.003, -3: 0.003,
            4: 0.004, -4: 0.004,
            5: 0.0025, -5: 0.0025,
        },
        zf_width_ut=5.0,
        zf_amp=0.4,
        zf_sign={
            ScanAxis.BX: TRANSMISSION,
            ScanAxis.BY: TRANSMISSION,
            ScanAxis.BZ: ABSORPTION,
        },
        baseline=1.0,
    )


def arc_cell() -> CellModel:
    """Anti-relaxation-coated cell: narrow lines, weaker zero-field signal."""
    return CellModel(
        kind="ARC",
        two_photon_hwhm_khz=2.3,
        harmonic_amp={
            0: 0.003,
            1: 0.002, -1: 0.002,
            2: 0.0025, -2: 0.0025,
            3: 0.0025, -3: 0.0025,
            4: 0.003, -4: 0.003,
            5: 0.0025, -5: 0.0025,
        },
        zf_width_ut=3.0,
        zf_amp=0.008,
        zf_sign={
            ScanAxis.BX: TRANSMISSION,
            ScanAxis.BY: TRANSMISSION,
            ScanAxis.BZ: ABSORPTION,
        },
        baseline=1.0,
    )


def cell_by_name(name: str) -> CellModel:
    key = name.strip().lower()
    if key == "bf":
        return bf_cell()
    if key == "arc":
        return arc_cell()
    raise ValueError(f"unknown cell preset {name!r} (expected bf or arc)")


def species_by_name(name: str) -> AtomSpecies:
    if name.strip().lower() == "rb85":
        return RB85
    raise ValueError(f"unknown species preset {name!r}")


def bf_modulation(b_axis: ScanAxis = ScanAxis.BZ) -> ModulationConfig:
    return ModulationConfig(
        rf_amp_khz=0.65, rf_freq_hz=440.0, b_axis=b_axis, b_amp_ut=0.14, b_freq_hz=39.0
    )


def arc_modulation(b_axis: ScanAxis = ScanAxis.BZ) -> ModulationConfig:
    return ModulationConfig(
        rf_amp_khz=10.0, rf_freq_hz=440.0, b_axis=b_axis, b_amp_ut=2.0, b_freq_hz=39.0
    )


def modulation_for(cell_kind: str, b_axis: ScanAxis) -> ModulationConfig:
    return bf_modulation(b_axis) if cell_kind.upper() == "BF" else arc_modulation(b_axis)


def lockin_sensitivities(cell_kind: str):
    """(CPT, MM) full-scale sensitivities in volts for a cell preset."""
    if cell_kind.upper() == "BF":
        return 300e-6, 1e-3
    return 100e-6, 300e-6


def cpt_lockin(cell_kind: str, rf_freq_hz: float = 440.0) -> LockinSettings:
    sens, _ = lockin_sensitivities(cell_kind)
    return LockinSettings(rf_freq_hz, max(0.01, 3.0 / rf_freq_hz), sens)


def mm_lockin(cell_kind: str, b_freq_hz: float = 39.0) -> LockinSettings:
    _, sens = lockin_sensitivities(cell_kind)
    return LockinSettings(b_freq_hz, max(0.08, 3.0 / b_freq_hz), sens)


def bf_scan_config(
    axis: ScanAxis,
    delta_rf_khz: float = -58.0,
    span_ut: float = 8.0,
    points: int = 200,
    background: FieldVector = FieldVector(),
    noise_rms: float = 2e-4,
    seed: int = 1,
) -> ExperimentConfig:
    """BF-cell sweep of one field axis, dither on the swept axis."""
    return ExperimentConfig(
        species=RB85,
        cell=bf_cell(),
        delta_rf_khz=delta_rf_khz,
        background=background,
        scan=ScanDefinition(axis, -span_ut, span_ut, points),
        modulation=bf_modulation(b_axis=axis),
        noise_rms=noise_rms,
        seed=seed,
    )


def arc_scan_config(
    axis: ScanAxis,
    delta_rf_khz: float = 316.0,
    span_ut: float = 40.0,
    points: int = 200,
    background: FieldVector = FieldVector(),
    noise_rms: float = 2e-4,
    seed: int = 1,
) -> ExperimentConfig:
    """ARC-cell sweep of one field axis, dither on the swept axis."""
    return ExperimentConfig(
        species=RB85,
        cell=arc_cell(),
        delta_rf_khz=delta_rf_khz,
        background=background,
        scan=ScanDefinition(axis, -span_ut, span_ut, points),
        modulation=arc_modulation(b_axis=axis),
        noise_rms=noise_rms,
        seed=seed,
    )
