"""Atomic constants and closed-form resonance math for magnetic-scan spectra.

The magnetometer couples two optical side modes (separation ``2 * nu_rf``) to
ground Zeeman states split by the Larmor frequency.  A resonance occurs when

    2 * nu_rf = hfs_splitting + n * larmor(B),   n = -n_max .. +n_max

so with the detuning ``delta_rf = 2 * nu_rf - hfs_splitting`` the resonance
condition reads ``delta_rf = n * gamma * |B|``.  Sweeping ``delta_rf`` at
fixed field is the conventional mode; sweeping one field component at fixed
``delta_rf`` is the modified mode, which places each harmonic at a symmetric
pair of positions on the swept axis.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .exceptions import DomainError

# Bohr magneton over Planck constant, in kHz per uT.
MU_B_KHZ_PER_UT = 13.996245


class ScanAxis(Enum):
    """What the experiment sweeps: the RF detuning or one field axis."""

    RF = "RF"
    BX = "BX"
    BY = "BY"
    BZ = "BZ"

    @property
    def is_field(self) -> bool:
        return self is not ScanAxis.RF

    @property
    def vector_index(self) -> int:
        """Component index (0, 1, 2) of a field axis in an (x, y, z) triple."""
        if not self.is_field:
            raise DomainError("RF scan axis has no field component")
        return {"BX": 0, "BY": 1, "BZ": 2}[self.value]

    @classmethod
    def from_string(cls, text: str) -> "ScanAxis":
        key = text.strip().upper()
        aliases = {"X": "BX", "Y": "BY", "Z": "BZ"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise DomainError(f"unknown scan axis {text!r}") from None


@dataclass(frozen=True)
class AtomSpecies:
    """Ground-state constants of one alkali isotope.

    Attributes
    ----------
    name : str
        Identifier, e.g. ``"rb85"``.
    g_f : float
        Magnitude of the ground-state gyromagnetic factor.
    hfs_splitting_khz : float
        Ground hyperfine splitting in kHz.
    n_max : int
        Largest |n| harmonic the level structure supports.
    gamma_khz_per_ut : float
        Larmor slope ``g_f * mu_B / h`` in kHz/uT.
    """

    name: str
    g_f: float
    hfs_splitting_khz: float
    n_max: int
    gamma_khz_per_ut: float

    def __post_init__(self):
        if self.g_f <= 0:
            raise DomainError("g_f must be positive")
        if self.hfs_splitting_khz <= 0:
            raise DomainError("hfs_splitting_khz must be positive")
        if self.n_max < 1:
            raise DomainError("n_max must be >= 1")
        expected = self.g_f * MU_B_KHZ_PER_UT
        if not math.isclose(self.gamma_khz_per_ut, expected, rel_tol=1e-6):
            raise DomainError(
                f"gamma {self.gamma_khz_per_ut} inconsistent with "
                f"g_f * mu_B/h = {expected}"
            )

    @classmethod
    def from_constants(cls, name, g_f, hfs_splitting_khz, n_max) -> "AtomSpecies":
        """Build a species with the Larmor slope derived from g_f."""
        return cls(name, g_f, hfs_splitting_khz, n_max, g_f * MU_B_KHZ_PER_UT)


@dataclass(frozen=True)
class FieldVector:
    """Three-axis magnetic field in uT."""

    bx: float = 0.0
    by: float = 0.0
    bz: float = 0.0

    def magnitude(self) -> float:
        return math.sqrt(self.bx**2 + self.by**2 + self.bz**2)

    def component(self, axis: ScanAxis) -> float:
        return (self.bx, self.by, self.bz)[axis.vector_index]

    def perp(self, axis: ScanAxis) -> float:
        """Magnitude of the projection orthogonal to ``axis``."""
        idx = axis.vector_index
        comps = [self.bx, self.by, self.bz]
        comps.pop(idx)
        return math.hypot(*comps)

    def with_component(self, axis: ScanAxis, value: float) -> "FieldVector":
        comps = [self.bx, self.by, self.bz]
        comps[axis.vector_index] = value
        return FieldVector(*comps)

    def __add__(self, other: "FieldVector") -> "FieldVector":
        return FieldVector(self.bx + other.bx, self.by + other.by, self.bz + other.bz)

    def transverse(self) -> float:
        """Component transverse to the light propagation direction (z)."""
        return math.hypot(self.bx, self.by)


def larmor_frequency(species: AtomSpecies, b_total_ut: float) -> float:
    """Larmor frequency in kHz for a total field magnitude in uT.

    Linear in the field with slope ``species.gamma_khz_per_ut``; zero at
    zero field.  Negative magnitudes are rejected.
    """
    if b_total_ut < 0:
        raise DomainError(f"total field must be >= 0, got {b_total_ut}")
    return species.gamma_khz_per_ut * b_total_ut


def rf_detuning(nu_rf_khz: float, species: AtomSpecies) -> float:
    """Two-photon detuning ``2 * nu_rf - hfs_splitting`` in kHz.

    The factor 2 reflects that the light-field separation is twice the RF
    oscillator frequency (the +-1 side modes take part).
    """
    if nu_rf_khz <= 0:
        raise DomainError("nu_rf must be positive")
    return 2.0 * nu_rf_khz - species.hfs_splitting_khz


def allowed_harmonics(
    scan: ScanAxis, perp_field_ut: float, species: AtomSpecies
) -> frozenset:
    """Set of harmonic numbers observable for a given scan geometry.

    Circular light along z drives only sigma couplings when the field is
    longitudinal, producing even harmonics; a transverse field admits pi
    couplings and hence odd harmonics.  Scanning a field axis can never show
    n = 0 (magnetically insensitive), while an RF scan always can.

    - BZ scan, zero perpendicular field: even n only.
    - BZ scan, nonzero perpendicular field: all nonzero n.
    - BX/BY scan: odd n only (even features are too feeble to observe).
    - RF scan: even n plus 0 for purely longitudinal fields, every n
      (including 0) once a transverse component is present.
    """
    if perp_field_ut < 0:
        raise DomainError("perpendicular field must be >= 0")
    n_max = species.n_max
    even = frozenset(n for n in range(-n_max, n_max + 1) if n != 0 and n % 2 == 0)
    odd = frozenset(n for n in range(-n_max, n_max + 1) if n % 2 != 0)
    if scan is ScanAxis.RF:
        if perp_field_ut == 0:
            return even | {0}
        return even | odd | {0}
    if scan is ScanAxis.BZ:
        if perp_field_ut == 0:
            return even
        return even | odd
    return odd


def predict_scan_positions(
    delta_rf_khz: float,
    scan: ScanAxis,
    perp_field_ut: float,
    species: AtomSpecies,
) -> list:
    """Resonance positions on a swept field axis at fixed RF detuning.

    For each allowed harmonic n the resonance condition
    ``|delta_rf| = |n| * gamma * sqrt(x**2 + perp**2)`` has the symmetric
    pair of roots ``x = +-sqrt((delta_rf / (n * gamma))**2 - perp**2)``.
    Harmonics whose on-axis radius ``|delta_rf| / (|n| gamma)`` is smaller
    than the perpendicular field never come on resonance and are omitted.

    Returns
    -------
    list of (n, position_ut)
        Sorted by position.  The feature on the negative side of the scan
        carries the positive harmonic label and vice versa, matching the
        usual +-n / -+x marking of scan plots.
    """
    if delta_rf_khz == 0:
        raise DomainError("delta_rf = 0 is degenerate: all harmonics collapse at zero field")
    if not scan.is_field:
        raise DomainError("positions on a swept field axis require a B scan axis")
    if perp_field_ut < 0:
        raise DomainError("perpendicular field must be >= 0")
    gamma = species.gamma_khz_per_ut
    out = []
    for n in allowed_harmonics(scan, perp_field_ut, species):
        radius = abs(delta_rf_khz) / (abs(n) * gamma)
        if radius < perp_field_ut:
            continue
        pos = math.sqrt(radius**2 - perp_field_ut**2)
        out.append((n, -pos if n > 0 else pos))
    out.sort(key=lambda item: (item[1], item[0]))
    return out


def predict_rf_positions(field: FieldVector, species: AtomSpecies) -> list:
    """Resonance detunings for a conventional RF sweep at fixed field.

    Every allowed harmonic sits at ``delta_rf = n * gamma * |B|``; adjacent
    harmonics are spaced by one Larmor frequency.

    Returns
    -------
    list of (n, delta_rf_khz), sorted by detuning.
    """
    b_total = field.magnitude()
    ns = allowed_harmonics(ScanAxis.RF, field.transverse(), species)
    out = [(n, n * species.gamma_khz_per_ut * b_total) for n in sorted(ns)]
    out.sort(key=lambda item: (item[1], item[0]))
    return out


def partition_by_range(predictions, start: float, stop: float):
    """Split (n, position) predictions into in-range and beyond-range lists.

    Used to flag resonances that a given sweep window cannot reach.
    """
    lo, hi = min(start, stop), max(start, stop)
    inside = [p for p in predictions if lo <= p[1] <= hi]
    beyond = [p for p in predictions if not (lo <= p[1] <= hi)]
    return inside, beyond
