"""Instrument abstraction: simulated, replayed, or remote hardware.

The calibration pipeline only talks to the :class:`Instrument` interface, so
it cannot see the coil factors and background field a real bench would hide.
:class:`VirtualInstrument` holds that hidden truth and synthesizes traces;
:class:`ReplayInstrument` serves recorded trace CSVs verbatim.
"""

from __future__ import annotations

import itertools
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace

import numpy as np

from .atoms import AtomSpecies, FieldVector, ScanAxis
from .exceptions import InstrumentError
from .forward import (
    CellModel,
    ExperimentConfig,
    ModulationConfig,
    ScanDefinition,
    synthesize_point,
)
from .lockin import LockinSettings, demodulate, run_scan
from .presets import RB85, bf_cell, bf_modulation, cpt_lockin, mm_lockin
from .traces import Trace, mm_channel_for

AXES = ("X", "Y", "Z")

MAX_SCAN_POINTS = 20000


def _axis_to_scan(axis: str) -> ScanAxis:
    try:
        return {"X": ScanAxis.BX, "Y": ScanAxis.BY, "Z": ScanAxis.BZ}[axis.upper()]
    except KeyError:
        raise InstrumentError(f"unknown coil axis {axis!r}") from None


class Instrument(ABC):
    """Control surface the calibration pipeline drives."""

    @abstractmethod
    def idn(self) -> str: ...

    @abstractmethod
    def set_coil(self, axis: str, volts: float) -> None: ...

    @abstractmethod
    def set_rf_detuning(self, khz: float) -> None: ...

    @abstractmethod
    def set_rf_modulation(self, amp_khz: float, freq_hz: float) -> None: ...

    @abstractmethod
    def set_b_modulation(self, axis: str, amp_ut: float, freq_hz: float) -> None: ...

    @abstractmethod
    def read(self, lia: int) -> float: ...

    @abstractmethod
    def scan_coil(self, axis: str, start_v: float, stop_v: float, points: int, lia: int) -> Trace: ...

    @abstractmethod
    def scan_rf(self, start_khz: float, stop_khz: float, points: int, lia: int) -> Trace: ...

    def close(self) -> None:
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


@dataclass
class InstrumentTruth:
    """Hidden ground truth of a simulated bench.

    ``factors`` maps coil drive (V) to field (uT) per axis; ``background``
    is the ambient field the calibration should discover.
    """

    factors: tuple = (1.0, 1.0, 1.0)
    background: FieldVector = field(default_factory=FieldVector)
    species: AtomSpecies = RB85
    cell: CellModel = field(default_factory=bf_cell)
    v_limit: float = 120.0
    seed: int = 0
    noise_rms: float = 2e-4
    sample_rate_hz: float = 12000.0
    integration_window_s: float = 0.5
    initial_delta_rf_khz: float = -58.0
    idn: str = "cpt-magscan-sim-1"

    def __post_init__(self):
        if len(self.factors) != 3 or any(f <= 0 for f in self.factors):
            raise InstrumentError("factors must be three positive values")
        if self.v_limit <= 0:
            raise InstrumentError("v_limit must be positive")


class VirtualInstrument(Instrument):
    """Simulated bench: hidden (factor, background) behind a coil-drive API.

    Every read/scan derives a fresh deterministic noise seed from the truth
    seed and an operation counter, so a fixed seed reproduces entire
    sessions bit for bit regardless of transport.
    """

    def __init__(self, truth: InstrumentTruth):
        self.truth = truth
        self._coils = {"X": 0.0, "Y": 0.0, "Z": 0.0}
        self._delta_rf = truth.initial_delta_rf_khz
        self._modulation = bf_modulation(ScanAxis.BZ)
        if truth.cell.kind.upper() == "ARC":
            from .presets import arc_modulation

            self._modulation = arc_modulation(ScanAxis.BZ)
        self._lockins = {
            1: cpt_lockin(truth.cell.kind, self._modulation.rf_freq_hz),
            2: mm_lockin(truth.cell.kind, self._modulation.b_freq_hz),
        }
        self._ops = itertools.count()

    # -- state ------------------------------------------------------------

    def idn(self) -> str:
        return self.truth.idn

    def set_coil(self, axis: str, volts: float) -> None:
        axis = axis.upper()
        _axis_to_scan(axis)
        if not np.isfinite(volts) or abs(volts) > self.truth.v_limit:
            raise InstrumentError(
                f"coil drive {volts} V outside +-{self.truth.v_limit} V"
            )
        self._coils[axis] = float(volts)

    def set_rf_detuning(self, khz: float) -> None:
        if not np.isfinite(khz):
            raise InstrumentError("RF detuning must be finite")
        self._delta_rf = float(khz)

    def set_rf_modulation(self, amp_khz: float, freq_hz: float) -> None:
        if amp_khz < 0 or freq_hz <= 0:
            raise InstrumentError("invalid RF modulation")
        self._modulation = replace(self._modulation, rf_amp_khz=amp_khz, rf_freq_hz=freq_hz)
        self._lockins[1] = replace(self._lockins[1], reference_freq_hz=freq_hz,
                                   time_constant_s=max(0.01, 3.0 / freq_hz))

    def set_b_modulation(self, axis: str, amp_ut: float, freq_hz: float) -> None:
        if amp_ut < 0 or freq_hz <= 0:
            raise InstrumentError("invalid field modulation")
        self._modulation = replace(
            self._modulation,
            b_axis=_axis_to_scan(axis),
            b_amp_ut=amp_ut,
            b_freq_hz=freq_hz,
        )
        self._lockins[2] = replace(self._lockins[2], reference_freq_hz=freq_hz,
                                   time_constant_s=max(0.08, 3.0 / freq_hz))

    def coil_settings(self) -> dict:
        return dict(self._coils)

    # -- physics ----------------------------------------------------------

    def _factor(self, axis: str) -> float:
        return self.truth.factors[AXES.index(axis.upper())]

    def _applied_except(self, skip_axis: str = None) -> FieldVector:
        comps = [0.0, 0.0, 0.0]
        for i, axis in enumerate(AXES):
            if skip_axis is not None and axis == skip_axis.upper():
                continue
            comps[i] = self._factor(axis) * self._coils[axis]
        return FieldVector(*comps)

    def _next_seed(self) -> int:
        return (self.truth.seed * 1000003 + next(self._ops)) % (2**63)

    def _lia_settings(self, lia: int) -> LockinSettings:
        if lia not in (1, 2):
            raise InstrumentError(f"LIA must be 1 or 2, got {lia}")
        return self._lockins[lia]

    def _check_scan(self, points: int):
        if not 2 <= points <= MAX_SCAN_POINTS:
            raise InstrumentError(f"points must be in 2..{MAX_SCAN_POINTS}")

    def _public_metadata(self, command: str) -> dict:
        md = {
            "instrument.idn": self.truth.idn,
            "instrument.command": command,
            "instrument.delta_rf_khz": repr(self._delta_rf),
            "instrument.coils_v": " ".join(repr(self._coils[a]) for a in AXES),
            "modulation.rf_amp_khz": repr(self._modulation.rf_amp_khz),
            "modulation.rf_freq_hz": repr(self._modulation.rf_freq_hz),
            "modulation.b_axis": self._modulation.b_axis.value,
            "modulation.b_amp_ut": repr(self._modulation.b_amp_ut),
            "modulation.b_freq_hz": repr(self._modulation.b_freq_hz),
        }
        return md

    def scan_coil(self, axis: str, start_v: float, stop_v: float, points: int, lia: int) -> Trace:
        axis = axis.upper()
        scan_axis = _axis_to_scan(axis)
        settings = self._lia_settings(lia)
        self._check_scan(points)
        for v in (start_v, stop_v):
            if not np.isfinite(v) or abs(v) > self.truth.v_limit:
                raise InstrumentError(f"scan endpoint {v} V outside +-{self.truth.v_limit} V")
        if start_v == stop_v:
            raise InstrumentError("scan endpoints must differ")
        factor = self._factor(axis)
        config = ExperimentConfig(
            species=self.truth.species,
            cell=self.truth.cell,
            delta_rf_khz=self._delta_rf,
            background=self.truth.background,
            applied=self._applied_except(axis),
            scan=ScanDefinition(scan_axis, factor * start_v, factor * stop_v, points),
            modulation=self._modulation,
            sample_rate_hz=self.truth.sample_rate_hz,
            integration_window_s=self.truth.integration_window_s,
            noise_rms=self.truth.noise_rms,
            seed=self._next_seed(),
        )
        channel = "CPT" if lia == 1 else "MM"
        traces = run_scan(
            config,
            [channel],
            cpt_settings=self._lockins[1],
            mm_settings=self._lockins[2],
        )
        trace = next(iter(traces.values()))
        command = f"SCAN COIL {axis} {start_v!r} {stop_v!r} {points} LIA {lia}"
        return Trace(
            channel=trace.channel,
            scan_axis=scan_axis,
            control_unit="V",
            controls=np.linspace(start_v, stop_v, points),
            values=trace.values,
            metadata=self._public_metadata(command),
        )

    def scan_rf(self, start_khz: float, stop_khz: float, points: int, lia: int) -> Trace:
        settings = self._lia_settings(lia)
        self._check_scan(points)
        if not (np.isfinite(start_khz) and np.isfinite(stop_khz)) or start_khz == stop_khz:
            raise InstrumentError("invalid RF scan endpoints")
        config = ExperimentConfig(
            species=self.truth.species,
            cell=self.truth.cell,
            delta_rf_khz=self._delta_rf,
            background=self.truth.background,
            applied=self._applied_except(None),
            scan=ScanDefinition(ScanAxis.RF, start_khz, stop_khz, points),
            modulation=self._modulation,
            sample_rate_hz=self.truth.sample_rate_hz,
            integration_window_s=self.truth.integration_window_s,
            noise_rms=self.truth.noise_rms,
            seed=self._next_seed(),
        )
        channel = "CPT" if lia == 1 else "MM"
        traces = run_scan(
            config,
            [channel],
            cpt_settings=self._lockins[1],
            mm_settings=self._lockins[2],
        )
        trace = next(iter(traces.values()))
        command = f"SCAN RFDET {start_khz!r} {stop_khz!r} {points} LIA {lia}"
        return Trace(
            channel=trace.channel,
            scan_axis=ScanAxis.RF,
            control_unit="kHz",
            controls=trace.controls,
            values=trace.values,
            metadata=self._public_metadata(command),
        )

    def read(self, lia: int) -> float:
        """One demodulated value at the current static settings."""
        from .lockin import CPT_SIGN, MM_SIGN

        settings = self._lia_settings(lia)
        config = ExperimentConfig(
            species=self.truth.species,
            cell=self.truth.cell,
            delta_rf_khz=self._delta_rf,
            background=self.truth.background,
            applied=FieldVector(),
            scan=ScanDefinition(self._modulation.b_axis, 0.0, 1.0, 2),
            modulation=self._modulation,
            sample_rate_hz=self.truth.sample_rate_hz,
            integration_window_s=self.truth.integration_window_s,
            noise_rms=self.truth.noise_rms,
            seed=self._next_seed(),
        )
        base = self.truth.background + self._applied_except(None)
        t, v = synthesize_point(config, self._delta_rf, base, (config.seed, 0))
        sign = CPT_SIGN if lia == 1 else MM_SIGN
        return sign * demodulate(t, v, settings)


class ReplayInstrument(Instrument):
    """Serves recorded traces verbatim, in file order, matched on request.

    A scan request consumes the first unserved trace whose scan kind, axis
    and channel agree with the request; the requested grid is ignored, the
    recording is returned as-is.
    """

    def __init__(self, traces, idn: str = "cpt-magscan-replay-1"):
        self._traces = list(traces)
        self._served = [False] * len(self._traces)
        self._idn = idn
        self._mod_axis = ScanAxis.BZ

    @classmethod
    def from_paths(cls, paths, idn: str = "cpt-magscan-replay-1") -> "ReplayInstrument":
        return cls([Trace.from_csv(p) for p in paths], idn=idn)

    def idn(self) -> str:
        return self._idn

    def set_coil(self, axis: str, volts: float) -> None:
        _axis_to_scan(axis)

    def set_rf_detuning(self, khz: float) -> None:
        pass

    def set_rf_modulation(self, amp_khz: float, freq_hz: float) -> None:
        pass

    def set_b_modulation(self, axis: str, amp_ut: float, freq_hz: float) -> None:
        self._mod_axis = _axis_to_scan(axis)

    def read(self, lia: int) -> float:
        raise InstrumentError("replay backend serves scans only")

    def _pop(self, scan_axis: ScanAxis, lia: int) -> Trace:
        want_cpt = lia == 1
        for i, tr in enumerate(self._traces):
            if self._served[i]:
                continue
            if tr.scan_axis is not scan_axis:
                continue
            if want_cpt != (tr.channel == "CPT"):
                continue
            self._served[i] = True
            return tr
        raise InstrumentError(
            f"no recorded trace left for axis={scan_axis.value} lia={lia}"
        )

    def scan_coil(self, axis: str, start_v: float, stop_v: float, points: int, lia: int) -> Trace:
        if lia not in (1, 2):
            raise InstrumentError(f"LIA must be 1 or 2, got {lia}")
        return self._pop(_axis_to_scan(axis), lia)

    def scan_rf(self, start_khz: float, stop_khz: float, points: int, lia: int) -> Trace:
        if lia not in (1, 2):
            raise InstrumentError(f"LIA must be 1 or 2, got {lia}")
        return self._pop(ScanAxis.RF, lia)
