"""Phenomenological forward model of the photodetector signal.

The transmitted-light level is a baseline minus a sum of two-photon
(quantum-interference) Lorentzian dips, one per harmonic, plus a broad
population-redistribution term centered at zero total field.  Everything is
an even function of every field component, so line shapes mirror exactly
between the negative and positive side of any field sweep while their
derivatives flip sign.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .atoms import AtomSpecies, FieldVector, ScanAxis
from .exceptions import ConfigError, DomainError

ABSORPTION = "absorption"
TRANSMISSION = "transmission"

# Residual odd-harmonic weight at purely transverse geometry.  The
# sigma-pi interference weight 4*sin^2(t)*cos^2(t) alone would vanish at
# 90 deg, but odd features are plainly visible when sweeping a transverse
# axis with the others nulled, so a sin^2(t) floor keeps them alive while
# the optimum stays near 45 deg.
ODD_TRANSVERSE_FLOOR = 0.5


@dataclass(frozen=True)
class CellModel:
    """Phenomenological line-shape parameters of one vapor cell.

    ``harmonic_amp`` maps harmonic number to a relative dip amplitude; the
    geometry weighting (longitudinal for even n, transverse-angle for odd n)
    is applied on top of it.  ``zf_sign`` states whether the zero-field term
    reads as enhanced absorption or transmission for each swept field axis.
    """

    kind: str
    two_photon_hwhm_khz: float
    harmonic_amp: dict
    zf_width_ut: float
    zf_amp: float
    zf_sign: dict
    baseline: float = 1.0

    def __post_init__(self):
        if self.two_photon_hwhm_khz <= 0:
            raise ConfigError("two_photon_hwhm_khz must be positive")
        if self.zf_width_ut <= 0:
            raise ConfigError("zf_width_ut must be positive")
        if self.zf_amp < 0 or any(a < 0 for a in self.harmonic_amp.values()):
            raise ConfigError("amplitudes must be >= 0")
        for axis, sign in self.zf_sign.items():
            if sign not in (ABSORPTION, TRANSMISSION):
                raise ConfigError(f"zf_sign[{axis}] must be absorption|transmission")

    def zf_orientation(self, axis: ScanAxis) -> float:
        """+1 for a transmission peak, -1 for an absorption dip."""
        sign = self.zf_sign.get(axis, ABSORPTION)
        return 1.0 if sign == TRANSMISSION else -1.0

    def scaled(self, factor: float) -> "CellModel":
        """Copy with every resonance amplitude multiplied by ``factor``."""
        return replace(
            self,
            harmonic_amp={n: a * factor for n, a in self.harmonic_amp.items()},
            zf_amp=self.zf_amp * factor,
        )


@dataclass(frozen=True)
class ModulationConfig:
    """Slow dither applied to the RF detuning and to one field axis."""

    rf_amp_khz: float = 0.65
    rf_freq_hz: float = 440.0
    b_axis: ScanAxis = ScanAxis.BZ
    b_amp_ut: float = 0.14
    b_freq_hz: float = 39.0

    def __post_init__(self):
        if self.rf_freq_hz <= 0 or self.b_freq_hz <= 0:
            raise ConfigError("modulation frequencies must be positive")
        if self.rf_freq_hz == self.b_freq_hz:
            raise ConfigError("modulation frequencies must be distinct")
        if not self.b_axis.is_field:
            raise ConfigError("b_axis must be a field axis")
        if self.rf_amp_khz < 0 or self.b_amp_ut < 0:
            raise ConfigError("modulation amplitudes must be >= 0")

    @property
    def slowest_period_s(self) -> float:
        return 1.0 / min(self.rf_freq_hz, self.b_freq_hz)


@dataclass(frozen=True)
class ScanDefinition:
    """Sweep of the control variable: field axis in uT or RF detuning in kHz."""

    axis: ScanAxis
    start: float
    stop: float
    points: int

    def __post_init__(self):
        if self.points < 2:
            raise ConfigError("a scan needs at least 2 points")
        if self.start == self.stop:
            raise ConfigError("scan start and stop must differ")

    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.points)


@dataclass(frozen=True)
class ExperimentConfig:
    """Full state of one virtual scan run."""

    species: AtomSpecies
    cell: CellModel
    delta_rf_khz: float
    background: FieldVector = field(default_factory=FieldVector)
    applied: FieldVector = field(default_factory=FieldVector)
    scan: ScanDefinition = None
    modulation: ModulationConfig = field(default_factory=ModulationConfig)
    sample_rate_hz: float = 12000.0
    integration_window_s: float = 0.5
    noise_rms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.scan is None:
            raise ConfigError("scan definition is required")
        fastest = max(self.modulation.rf_freq_hz, self.modulation.b_freq_hz)
        if self.sample_rate_hz <= 20.0 * fastest:
            raise ConfigError(
                f"sample rate {self.sample_rate_hz} Hz must exceed 20x the "
                f"fastest modulation ({fastest} Hz)"
            )
        if self.integration_window_s < 5.0 * self.modulation.slowest_period_s:
            raise ConfigError(
                "integration window must cover >= 5 periods of the slowest oscillator"
            )
        if self.noise_rms < 0:
            raise ConfigError("noise_rms must be >= 0")

    def scan_values(self) -> np.ndarray:
        return self.scan.values()

    def static_base(self) -> FieldVector:
        """Field before the scan offset: background plus coil-applied field."""
        return self.background + self.applied

    def point_state(self, scan_index: int):
        """(delta_rf_khz, FieldVector) at one scan point, modulation excluded."""
        values = self.scan_values()
        if not 0 <= scan_index < len(values):
            raise IndexError(f"scan index {scan_index} out of range 0..{len(values) - 1}")
        x = float(values[scan_index])
        base = self.static_base()
        if self.scan.axis.is_field:
            idx = self.scan.axis.vector_index
            comps = [base.bx, base.by, base.bz]
            comps[idx] += x
            return self.delta_rf_khz, FieldVector(*comps)
        return x, base


def _absorption_core(species, cell, zf_orientation, nu, bx, by, bz):
    """Vectorized photodetector level for instantaneous detuning and field."""
    b_sq = bx * bx + by * by + bz * bz
    b = np.sqrt(b_sq)
    with np.errstate(invalid="ignore", divide="ignore"):
        cos2 = np.where(b_sq > 0.0, bz * bz / np.where(b_sq > 0.0, b_sq, 1.0), 1.0)
    sin2 = 1.0 - cos2
    w_even = cos2
    w_odd = 4.0 * sin2 * cos2 + ODD_TRANSVERSE_FLOOR * sin2
    gamma = species.gamma_khz_per_ut
    hwhm = cell.two_photon_hwhm_khz
    total = np.zeros(np.broadcast(nu, b).shape)
    for n, amp in cell.harmonic_amp.items():
        if amp == 0.0:
            continue
        weight = w_even if n % 2 == 0 else w_odd
        u = (nu - n * gamma * b) / hwhm
        total += amp * weight / (1.0 + u * u)
    zf = cell.zf_amp / (1.0 + b_sq / cell.zf_width_ut**2)
    return cell.baseline - total + zf_orientation * zf


def steady_absorption(config: ExperimentConfig, nu_inst_khz: float, b_inst: FieldVector) -> float:
    """Photodetector level for one instantaneous detuning and field.

    Even in every field component; each harmonic dip peaks where
    ``nu_inst = n * gamma * |B|``.
    """
    value = _absorption_core(
        config.species,
        config.cell,
        config.cell.zf_orientation(config.scan.axis),
        np.float64(nu_inst_khz),
        np.float64(b_inst.bx),
        np.float64(b_inst.by),
        np.float64(b_inst.bz),
    )
    return float(value)


def zero_field_response(config: ExperimentConfig, b_inst: FieldVector) -> float:
    """Signed population-redistribution contribution at one field value.

    A Lorentzian in the total field magnitude: growing any transverse
    component both weakens it and broadens it along the swept axis, and it
    does not depend on the RF detuning at all.
    """
    b_sq = b_inst.bx**2 + b_inst.by**2 + b_inst.bz**2
    zf = config.cell.zf_amp / (1.0 + b_sq / config.cell.zf_width_ut**2)
    return config.cell.zf_orientation(config.scan.axis) * zf


def sample_times(config: ExperimentConfig) -> np.ndarray:
    n = int(round(config.integration_window_s * config.sample_rate_hz))
    return np.arange(n) / config.sample_rate_hz


def _modulated_inputs(config, t, delta_khz, base: FieldVector):
    mod = config.modulation
    nu = delta_khz + mod.rf_amp_khz * np.sin(2.0 * np.pi * mod.rf_freq_hz * t)
    dither = mod.b_amp_ut * np.sin(2.0 * np.pi * mod.b_freq_hz * t)
    comps = [np.full_like(t, base.bx), np.full_like(t, base.by), np.full_like(t, base.bz)]
    comps[mod.b_axis.vector_index] = comps[mod.b_axis.vector_index] + dither
    return nu, comps


def synthesize_point(config: ExperimentConfig, delta_khz, base: FieldVector, seed_key):
    """Time series of the modulated photodetector signal at a fixed state.

    ``seed_key`` feeds ``numpy.random.default_rng`` so the noise stream is
    reproducible and independent per scan point.
    """
    t = sample_times(config)
    nu, (bx, by, bz) = _modulated_inputs(config, t, delta_khz, base)
    v = _absorption_core(
        config.species,
        config.cell,
        config.cell.zf_orientation(config.scan.axis),
        nu,
        bx,
        by,
        bz,
    )
    if config.noise_rms > 0:
        rng = np.random.default_rng(seed_key)
        v = v + rng.normal(0.0, config.noise_rms, v.shape)
    return t, v


def synthesize_timeseries(config: ExperimentConfig, scan_index: int):
    """Synthesize the photodetector series for one scan point.

    Deterministic for a fixed config seed; the per-point noise stream is
    derived from ``(seed, scan_index)`` so points may be generated in any
    order (or in parallel) with identical results.
    """
    delta, base = config.point_state(scan_index)
    return synthesize_point(config, delta, base, (config.seed, scan_index))


def synthesize_grid(config: ExperimentConfig):
    """All scan points stacked: (t, values[points, samples]).

    Row ``i`` is exactly ``synthesize_timeseries(config, i)`` so per-point
    and whole-scan synthesis agree bit for bit.
    """
    t = sample_times(config)
    rows = np.empty((config.scan.points, len(t)))
    for i in range(config.scan.points):
        rows[i] = synthesize_timeseries(config, i)[1]
    return t, rows
