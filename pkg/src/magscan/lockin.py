"""Numerical phase-sensitive detection.

Two software lock-ins mirror the bench setup: the CPT channel references the
RF dither, the MM channel references the field dither.  Demodulation is a
sine mixer followed by a single-pole low-pass; the first five time constants
are discarded as settling and the remainder is averaged over a whole number
of reference periods, which kills the large baseline-at-reference leakage a
plain mean would keep.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.signal import lfilter

from .exceptions import ConfigError, InsufficientDataError
from .forward import ExperimentConfig, synthesize_grid
from .traces import Trace, mm_channel_for

SETTLE_TIME_CONSTANTS = 5.0

# Fixed demodulated-sign conventions: with these, the zero-field feature of
# a buffer-gas cell swept along z reads as enhanced absorption (negative
# central slope) in the MM channel.
CPT_SIGN = 1.0
MM_SIGN = -1.0


@dataclass(frozen=True)
class LockinSettings:
    """Reference and filter settings of one lock-in channel."""

    reference_freq_hz: float
    time_constant_s: float
    sensitivity_v: float
    reference_phase_rad: float = 0.0

    def __post_init__(self):
        if self.reference_freq_hz <= 0:
            raise ConfigError("reference frequency must be positive")
        if self.time_constant_s < 3.0 / self.reference_freq_hz:
            raise ConfigError(
                "time constant must be >= 3 reference periods "
                f"({3.0 / self.reference_freq_hz:.4g} s)"
            )
        if self.sensitivity_v <= 0:
            raise ConfigError("sensitivity must be positive")


def _mix_and_filter(t, values, settings: LockinSettings):
    reference = np.sin(
        2.0 * np.pi * settings.reference_freq_hz * t + settings.reference_phase_rad
    )
    values = np.asarray(values, dtype=float)
    # AC-coupled input: the photodetector baseline would otherwise leak its
    # settling transient into the output mean
    values = values - np.mean(values, axis=-1, keepdims=True)
    mixed = values * reference
    dt = float(t[1] - t[0])
    k = dt / (settings.time_constant_s + dt)
    # y[n] = (1-k) y[n-1] + k x[n], primed with the first sample to shorten
    # the start-up transient.
    if mixed.ndim == 1:
        zi = np.array([(1.0 - k) * mixed[0]])
    else:
        zi = (1.0 - k) * mixed[:, :1]
    filtered, _ = lfilter([k], [1.0, k - 1.0], mixed, axis=-1, zi=zi)
    return filtered


def _settled_slice(t, settings: LockinSettings):
    duration = float(t[-1] - t[0])
    if duration < SETTLE_TIME_CONSTANTS * settings.time_constant_s:
        raise InsufficientDataError(
            f"series of {duration:.4g} s is shorter than "
            f"{SETTLE_TIME_CONSTANTS:g} time constants"
        )
    t0 = t[0] + SETTLE_TIME_CONSTANTS * settings.time_constant_s
    i0 = int(np.searchsorted(t, t0))
    span = float(t[-1] - t[i0])
    periods = int(np.floor(span * settings.reference_freq_hz))
    if periods < 1:
        raise InsufficientDataError(
            "less than one reference period remains after settling"
        )
    t1 = t[i0] + periods / settings.reference_freq_hz
    i1 = int(np.searchsorted(t, t1, side="right"))
    return i0, i1


def demodulate(t, values, settings: LockinSettings) -> float:
    """Demodulated amplitude of a time series, in full-scale units.

    Returns the settled mean of ``values * sin(2 pi f_ref t + phase)``
    after the single-pole low-pass, divided by the sensitivity.  A pure
    tone ``A sin(2 pi f_ref t)`` at zero phase and unit sensitivity gives
    ``A / 2``; for a small dither of amplitude ``a`` across a line shape
    the output approaches ``(a / 2)`` times the local derivative.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 1 or len(t) < 2:
        raise InsufficientDataError("need a 1-D time base with >= 2 samples")
    filtered = _mix_and_filter(t, values, settings)
    i0, i1 = _settled_slice(t, settings)
    return float(np.mean(filtered[i0:i1])) / settings.sensitivity_v


def _demodulate_rows(t, rows, settings: LockinSettings) -> np.ndarray:
    filtered = _mix_and_filter(t, rows, settings)
    i0, i1 = _settled_slice(t, settings)
    return np.mean(filtered[:, i0:i1], axis=1) / settings.sensitivity_v


def auto_phase(t, values, settings: LockinSettings) -> float:
    """Reference phase that maximizes the demodulated output of ``values``."""
    t = np.asarray(t, dtype=float)
    in_phase = demodulate(t, values, settings)
    quad = demodulate(
        t, values, replace(settings, reference_phase_rad=settings.reference_phase_rad + np.pi / 2.0)
    )
    return settings.reference_phase_rad + float(np.arctan2(quad, in_phase))


def default_cpt_settings(config: ExperimentConfig, sensitivity_v: float = 1.0) -> LockinSettings:
    f = config.modulation.rf_freq_hz
    return LockinSettings(f, max(0.01, 3.0 / f), sensitivity_v)


def default_mm_settings(config: ExperimentConfig, sensitivity_v: float = 1.0) -> LockinSettings:
    f = config.modulation.b_freq_hz
    return LockinSettings(f, max(0.08, 3.0 / f), sensitivity_v)


def _normalize_channels(config, channels):
    resolved = []
    mm_name = mm_channel_for(config.modulation.b_axis)
    for ch in channels:
        name = ch.strip()
        if name.upper() == "CPT":
            resolved.append("CPT")
        elif name.upper() == "MM":
            resolved.append(mm_name)
        elif name in ("MM_x", "MM_y", "MM_z"):
            if name != mm_name:
                raise ConfigError(
                    f"channel {name} does not match modulated axis "
                    f"{config.modulation.b_axis.value}"
                )
            resolved.append(name)
        else:
            raise ConfigError(f"unknown channel {ch!r}")
    return resolved


def config_metadata(config: ExperimentConfig) -> dict:
    """Flat key=value snapshot of a config, embedded in trace headers."""
    m = config.modulation
    s = config.scan
    md = {
        "species.name": config.species.name,
        "species.g_f": repr(config.species.g_f),
        "species.hfs_splitting_khz": repr(config.species.hfs_splitting_khz),
        "species.n_max": str(config.species.n_max),
        "species.gamma_khz_per_ut": repr(config.species.gamma_khz_per_ut),
        "cell.kind": config.cell.kind,
        "cell.two_photon_hwhm_khz": repr(config.cell.two_photon_hwhm_khz),
        "cell.zf_width_ut": repr(config.cell.zf_width_ut),
        "cell.zf_amp": repr(config.cell.zf_amp),
        "cell.baseline": repr(config.cell.baseline),
        "cell.harmonic_amp": ";".join(
            f"{n}:{a!r}" for n, a in sorted(config.cell.harmonic_amp.items())
        ),
        "delta_rf_khz": repr(config.delta_rf_khz),
        "background_ut": f"{config.background.bx!r} {config.background.by!r} {config.background.bz!r}",
        "applied_ut": f"{config.applied.bx!r} {config.applied.by!r} {config.applied.bz!r}",
        "scan.axis": s.axis.value,
        "scan.start": repr(float(s.start)),
        "scan.stop": repr(float(s.stop)),
        "scan.points": str(s.points),
        "modulation.rf_amp_khz": repr(m.rf_amp_khz),
        "modulation.rf_freq_hz": repr(m.rf_freq_hz),
        "modulation.b_axis": m.b_axis.value,
        "modulation.b_amp_ut": repr(m.b_amp_ut),
        "modulation.b_freq_hz": repr(m.b_freq_hz),
        "sample_rate_hz": repr(config.sample_rate_hz),
        "integration_window_s": repr(config.integration_window_s),
        "noise_rms": repr(config.noise_rms),
        "seed": str(config.seed),
        "lockin.filter": "single-pole IIR, forward only",
    }
    return md


def run_scan(
    config: ExperimentConfig,
    channels=("CPT",),
    cpt_settings: LockinSettings = None,
    mm_settings: LockinSettings = None,
) -> dict:
    """Scan the control variable and demodulate the selected channels.

    The photodetector series of each scan point is synthesized once and fed
    to every selected lock-in.  Returns ``{channel: Trace}``; control values
    are in uT for field scans and kHz for RF scans.

    ``"MM"`` selects the channel of the modulated field axis.
    """
    selected = _normalize_channels(config, channels)
    if not selected:
        raise ConfigError("no channels selected")
    if cpt_settings is None:
        cpt_settings = default_cpt_settings(config)
    if mm_settings is None:
        mm_settings = default_mm_settings(config)
    t, rows = synthesize_grid(config)
    controls = config.scan_values()
    unit = "uT" if config.scan.axis.is_field else "kHz"
    md = config_metadata(config)
    out = {}
    for ch in selected:
        if ch == "CPT":
            settings, sign = cpt_settings, CPT_SIGN
        else:
            settings, sign = mm_settings, MM_SIGN
        values = sign * _demodulate_rows(t, rows, settings)
        ch_md = dict(md)
        ch_md["lockin.reference_freq_hz"] = repr(settings.reference_freq_hz)
        ch_md["lockin.time_constant_s"] = repr(settings.time_constant_s)
        ch_md["lockin.sensitivity_v"] = repr(settings.sensitivity_v)
        ch_md["lockin.reference_phase_rad"] = repr(settings.reference_phase_rad)
        out[ch] = Trace(
            channel=ch,
            scan_axis=config.scan.axis,
            control_unit=unit,
            controls=controls,
            values=values,
            metadata=ch_md,
        )
    return out
