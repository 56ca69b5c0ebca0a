"""Coil-calibration pipeline built on the modified field-scanning method.

The procedure mirrors the bench workflow: sweep each coil, locate the
symmetric quantum-interference pairs, cancel the ambient background from
their midpoint, and only then regress the drive-to-field factor of each coil
against the positions the resonance condition predicts.  A conventional
baseline (RF sweeps at several drive settings) is provided for
cross-checking.

Field-axis bias estimation is immune to fields on the orthogonal axes (the
pairs stay symmetric), but factor fits are not: a perpendicular component p
moves every pair from its on-axis radius r to sqrt(r**2 - p**2).  The
pipeline therefore compensates every axis before fitting any factor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .atoms import AtomSpecies, ScanAxis
from .exceptions import (
    AmbiguousAssignmentError,
    CalibrationError,
    FitError,
    InsufficientDataError,
    NotEstimableError,
)
from .features import (
    assign_harmonics,
    detect_features,
    find_broad_feature,
    zero_field_crossing,
)
from .instrument import AXES, Instrument, _axis_to_scan
from .presets import RB85

RF_SCAN_METHOD = "RF_scan"
B_SCAN_METHOD = "B_scan"
ZERO_FIELD_METHOD = "zero_field"


@dataclass(frozen=True)
class CoilCalibration:
    """Per-axis calibration result.

    ``bias_control`` is the drive (control units) at which the axis field is
    zero; ``factor`` converts control units to uT.
    """

    axis: str
    bias_control: float
    factor: float
    residual_rms_ut: float
    method: str
    n_features: int = 0
    low_confidence: bool = False

    def __post_init__(self):
        if self.factor <= 0:
            raise FitError(f"calibration factor must be positive, got {self.factor}")

    @property
    def background_ut(self) -> float:
        """Ambient field along the axis implied by the zero-drive point."""
        return -self.factor * self.bias_control


def estimate_bias(features) -> float:
    """Control value of true zero field from symmetric resonance pairs.

    Averages the midpoints of every assigned +-n pair.
    """
    by_n = {}
    for f in features:
        if f.n is not None:
            by_n.setdefault(abs(f.n), {})[int(np.sign(f.n))] = f.center
    midpoints = [
        0.5 * (sides[1] + sides[-1])
        for sides in by_n.values()
        if 1 in sides and -1 in sides
    ]
    if not midpoints:
        raise NotEstimableError("no assigned +-n pair to take a midpoint from")
    return float(np.mean(midpoints))


def estimate_bias_zero_field(trace, expected_width: float = None) -> float:
    """Control value of zero field from the broad zero-field feature."""
    return zero_field_crossing(trace, expected_width)


def fit_factor(features, delta_rf_khz: float, species: AtomSpecies, axis: str = "?") -> CoilCalibration:
    """Least-squares line through (control, predicted field) points.

    Each assigned harmonic n predicts the axis field ``-|delta_rf| / (n *
    gamma)`` at its feature (positive labels sit on the negative side).  The
    fitted slope is the uT-per-control-unit factor, the zero crossing the
    bias control value.
    """
    assigned = [f for f in features if f.n is not None]
    by_n = {}
    for f in assigned:
        by_n.setdefault(abs(f.n), set()).add(int(np.sign(f.n)))
    pairs = sum(1 for sides in by_n.values() if sides == {1, -1})
    if pairs < 2:
        raise FitError(f"need >= 2 assigned +-n pairs, got {pairs}")
    gamma = species.gamma_khz_per_ut
    controls = np.array([f.center for f in assigned])
    predicted = np.array([-abs(delta_rf_khz) / (f.n * gamma) for f in assigned])
    if np.ptp(controls) == 0:
        raise FitError("all features at one control value: rank-deficient fit")
    slope, intercept = np.polyfit(controls, predicted, 1)
    if slope <= 0:
        raise FitError(
            f"fitted factor {slope:.4g} is not positive (coil polarity reversed?)"
        )
    residuals = predicted - (slope * controls + intercept)
    return CoilCalibration(
        axis=axis,
        bias_control=float(-intercept / slope),
        factor=float(slope),
        residual_rms_ut=float(np.sqrt(np.mean(residuals**2))),
        method=B_SCAN_METHOD,
        n_features=len(assigned),
    )


@dataclass(frozen=True)
class CalibrationPlan:
    """Everything the automated procedure is allowed to know.

    The coil factors and background are the unknowns; the cell physics
    (expected zero-field width, rough feature width) and the RF detuning
    are operator knowledge.
    """

    axes: tuple = ("X", "Y", "Z")
    species: AtomSpecies = RB85
    delta_rf_khz: float = -58.0
    points: int = 201
    bias_tolerance_ut: float = 0.1
    max_bias_iterations: int = 3
    initial_span_v: float = 10.0
    span_margin: float = 1.45
    expected_zf_width_ut: float = 5.0
    expected_feature_width_ut: float = 0.6
    b_mod_amp_ut: float = 0.14
    b_mod_freq_hz: float = 39.0
    rf_mod_amp_khz: float = 0.65
    rf_mod_freq_hz: float = 440.0
    v_limit: float = 120.0
    # conventional (RF-sweep) baseline
    rf_points: int = 501
    rf_span_khz: float = 350.0
    rf_max_span_khz: float = 1400.0
    rf_initial_setting_v: float = 2.0
    rf_expected_feature_width_khz: float = 10.0

    def target_radius_ut(self, axis: str) -> float:
        """On-axis position of the outermost harmonic the scans target."""
        n_small = 2 if axis.upper() == "Z" else 3
        return abs(self.delta_rf_khz) / (n_small * self.species.gamma_khz_per_ut)


@dataclass
class AxisReport:
    axis: str
    calibration: CoilCalibration
    background_pair_ut: float
    background_zero_field_ut: float
    compensation_v: float
    bias_iterations: int
    conventional: CoilCalibration = None
    background_rf_ut: float = None


@dataclass
class CalibrationReport:
    """Tables-style summary comparing the bias and factor estimates."""

    axes: dict
    delta_rf_khz: float
    idn: str = ""

    def _row(self, fmt, getter):
        return [fmt.format(getter(self.axes[a])) if a in self.axes else "-" for a in AXES]

    def to_dict(self) -> dict:
        out = {"schema": "magscan-report/1", "idn": self.idn, "delta_rf_khz": self.delta_rf_khz, "axes": {}}
        for a, r in self.axes.items():
            entry = {
                "factor_ut_per_v": r.calibration.factor,
                "bias_control_v": r.calibration.bias_control,
                "background_pair_ut": r.background_pair_ut,
                "background_zero_field_ut": r.background_zero_field_ut,
                "compensation_v": r.compensation_v,
                "residual_rms_ut": r.calibration.residual_rms_ut,
                "bias_iterations": r.bias_iterations,
            }
            if r.conventional is not None:
                entry["factor_rf_ut_per_v"] = r.conventional.factor
                entry["background_rf_ut"] = r.background_rf_ut
                entry["rf_low_confidence"] = r.conventional.low_confidence
            out["axes"][a] = entry
        return out

    def format_text(self) -> str:
        lines = []
        lines.append(f"Instrument: {self.idn}    RF detuning: {self.delta_rf_khz:g} kHz")
        lines.append("")
        lines.append("Bias field (uT)")
        header = f"{'method':<22}" + "".join(f"{'B' + a.lower():>10}" for a in AXES)
        lines.append(header)
        lines.append(f"{'B-scan pairs':<22}" + "".join(
            f"{v:>10}" for v in self._row("{:.2f}", lambda r: r.background_pair_ut)))
        lines.append(f"{'Zero-field resonance':<22}" + "".join(
            f"{v:>10}" for v in self._row("{:.2f}", lambda r: r.background_zero_field_ut)))
        if any(r.conventional is not None for r in self.axes.values()):
            lines.append(f"{'RF scanning':<22}" + "".join(
                f"{v:>10}" for v in self._row(
                    "{:.2f}", lambda r: r.background_rf_ut if r.background_rf_ut is not None else float("nan"))))
        lines.append("")
        lines.append("Calibration factor (uT/V)")
        lines.append(header)
        lines.append(f"{'B-scan pairs':<22}" + "".join(
            f"{v:>10}" for v in self._row("{:.3f}", lambda r: r.calibration.factor)))
        if any(r.conventional is not None for r in self.axes.values()):
            lines.append(f"{'RF scanning':<22}" + "".join(
                f"{v:>10}" for v in self._row(
                    "{:.3f}", lambda r: r.conventional.factor if r.conventional else float("nan"))))
        lines.append("")
        return "\n".join(lines)

    def format_csv(self) -> str:
        rows = ["# schema=magscan-report/1", "section,method,axis,value"]
        for a, r in self.axes.items():
            rows.append(f"bias_ut,pairs,{a},{r.background_pair_ut!r}")
            rows.append(f"bias_ut,zero_field,{a},{r.background_zero_field_ut!r}")
            rows.append(f"factor_ut_per_v,b_scan,{a},{r.calibration.factor!r}")
            if r.conventional is not None:
                rows.append(f"bias_ut,rf_scan,{a},{r.background_rf_ut!r}")
                rows.append(f"factor_ut_per_v,rf_scan,{a},{r.conventional.factor!r}")
        return "\n".join(rows) + "\n"


def _clip_window(center: float, span: float, limit: float):
    lo = max(-limit, center - span)
    hi = min(limit, center + span)
    if hi - lo <= 0:
        raise CalibrationError(f"window around {center} V collapsed at the +-{limit} V limit")
    return lo, hi


def _range_axis(instrument, axis, plan, diag):
    """Locate the zero-field feature in drive units: rough center + factor."""
    center, span = 0.0, plan.initial_span_v
    for attempt in range(8):
        lo, hi = _clip_window(center, span, plan.v_limit)
        trace = instrument.scan_coil(axis, lo, hi, plan.points, lia=2)
        broad = find_broad_feature(trace)
        if broad is not None and broad.width < 0.6 * (hi - lo):
            rough = 1.155 * plan.expected_zf_width_ut / broad.width
            diag.append(
                f"{axis}: ranging ok on attempt {attempt + 1}: zero-field feature at "
                f"{broad.center:.3g} V, width {broad.width:.3g} V, rough factor {rough:.3g} uT/V"
            )
            return broad.center, rough
        if span >= plan.v_limit and attempt >= 5:
            break
        span = min(span * 2.5, plan.v_limit)
        diag.append(f"{axis}: ranging attempt {attempt + 1} found nothing, widening to +-{span:.3g} V")
    raise CalibrationError(
        f"axis {axis}: could not locate the zero-field feature within +-{plan.v_limit} V",
        diag,
    )


# Retry ladder for mis-sized windows: the rough factor behind the first span
# can be off either way, so alternate shrinking and widening.
SPAN_LADDER = (1.0, 0.625, 1.6, 0.39, 2.56)


def _scan_zero_crossing(instrument, axis, plan, center, factor_est, diag):
    """Refined zero-field-feature crossing around the current estimate."""
    span0 = 3.0 * plan.expected_zf_width_ut / factor_est
    last_error = None
    for attempt, mult in enumerate(SPAN_LADDER):
        span = span0 * mult
        lo, hi = _clip_window(center, span, plan.v_limit)
        trace = instrument.scan_coil(axis, lo, hi, plan.points, lia=2)
        try:
            return zero_field_crossing(
                trace, expected_width=plan.expected_zf_width_ut / factor_est
            )
        except NotEstimableError as err:
            last_error = err
            diag.append(
                f"{axis}: zero-field scan attempt {attempt + 1} at +-{span:.3g} V failed ({err})"
            )
    raise CalibrationError(f"axis {axis}: zero-field feature lost: {last_error}", diag)


def _attempt_assign(instrument, axis, plan, center, span, factor_est):
    lo, hi = _clip_window(center, span, plan.v_limit)
    trace = instrument.scan_coil(axis, lo, hi, plan.points, lia=1)
    feats = detect_features(
        trace, expected_width=plan.expected_feature_width_ut / factor_est
    )
    assigned = assign_harmonics(
        feats,
        plan.delta_rf_khz,
        plan.species,
        _axis_to_scan(axis),
        control_unit="V",
    )
    cal = fit_factor(assigned, plan.delta_rf_khz, plan.species, axis=axis)
    return trace, assigned, cal


def _scan_and_assign(instrument, axis, plan, center, factor_est, diag):
    """Quantum-interference scan, assignment and factor fit.

    Tries a ladder of window sizes around the rough-factor guess; once a
    fit succeeds, rescans at the window the fitted factor implies if the
    first guess was badly sized, so the final fit always comes from a
    well-proportioned sweep.
    """
    span0 = plan.span_margin * plan.target_radius_ut(axis) / factor_est
    result = None
    last_error = None
    for attempt, mult in enumerate(SPAN_LADDER):
        span = span0 * mult
        try:
            result = _attempt_assign(instrument, axis, plan, center, span, factor_est)
            break
        except (AmbiguousAssignmentError, FitError, InsufficientDataError, NotEstimableError) as err:
            last_error = err
            diag.append(f"{axis}: scan attempt {attempt + 1} at +-{span:.3g} V failed ({err})")
    if result is None:
        raise CalibrationError(f"axis {axis}: quantum-interference scan failed: {last_error}", diag)
    _, _, cal = result
    ideal = plan.span_margin * plan.target_radius_ut(axis) / cal.factor
    if not 1.0 / 1.3 <= span / ideal <= 1.3:
        diag.append(
            f"{axis}: window +-{span:.3g} V poorly sized for factor "
            f"{cal.factor:.3g} uT/V; rescanning at +-{ideal:.3g} V"
        )
        try:
            result = _attempt_assign(instrument, axis, plan, center, ideal, cal.factor)
        except (AmbiguousAssignmentError, FitError, InsufficientDataError, NotEstimableError) as err:
            diag.append(f"{axis}: refinement rescan failed ({err}); keeping first fit")
    return result


def auto_calibrate(instrument: Instrument, plan: CalibrationPlan = None) -> CalibrationReport:
    """Automated scan -> cancel -> rescan calibration of every planned axis.

    Phase A cancels the background axis by axis using the zero-field
    feature of the MM channel: its central crossing marks true zero on the
    swept axis exactly, however large the fields on the other axes are.
    The compensating drive is applied and the crossing re-measured until
    the residual is below ``plan.bias_tolerance_ut`` (at most
    ``plan.max_bias_iterations`` refinements).  Harmonic numbers and coil
    factors are deliberately left to phase B: position grids on an
    uncompensated field inherit the sqrt(r**2 - p**2) shrinkage.  Phase B
    rescans each fully compensated axis, assigns harmonics, fits the
    factor, and reports the pair-method and zero-field-method bias
    estimates side by side.
    """
    if plan is None:
        plan = CalibrationPlan()
    diag = []
    instrument.set_rf_detuning(plan.delta_rf_khz)
    instrument.set_rf_modulation(plan.rf_mod_amp_khz, plan.rf_mod_freq_hz)

    factors = {}
    compensation = {}
    iterations = {}

    # Phase A: background compensation, axis by axis
    for axis in plan.axes:
        instrument.set_b_modulation(axis, plan.b_mod_amp_ut, plan.b_mod_freq_hz)
        center, factor_est = _range_axis(instrument, axis, plan, diag)
        converged = False
        for it in range(plan.max_bias_iterations + 1):
            bias_c = _scan_zero_crossing(instrument, axis, plan, center, factor_est, diag)
            instrument.set_coil(axis, bias_c)
            residual_ut = abs(bias_c - center) * factor_est
            diag.append(
                f"{axis}: bias iteration {it}: {bias_c:.4g} V, residual {residual_ut:.3g} uT"
            )
            center = bias_c
            if it > 0 and residual_ut < plan.bias_tolerance_ut:
                converged = True
                iterations[axis] = it
                break
        if not converged:
            raise CalibrationError(
                f"axis {axis}: bias loop did not converge below "
                f"{plan.bias_tolerance_ut} uT in {plan.max_bias_iterations} iterations",
                diag,
            )
        compensation[axis] = bias_c
        factors[axis] = factor_est
        diag.append(f"{axis}: compensated at {bias_c:.4g} V (rough factor {factor_est:.4g} uT/V)")

    # Phase B: factor fits on the fully compensated field
    axes_out = {}
    for axis in plan.axes:
        instrument.set_b_modulation(axis, plan.b_mod_amp_ut, plan.b_mod_freq_hz)
        _, assigned, cal = _scan_and_assign(
            instrument, axis, plan, compensation[axis], factors[axis], diag
        )
        pair_bias_v = estimate_bias(assigned)
        zf_span = max(3.0 * plan.expected_zf_width_ut, plan.target_radius_ut(axis)) / cal.factor
        lo, hi = _clip_window(compensation[axis], zf_span, plan.v_limit)
        mm_trace = instrument.scan_coil(axis, lo, hi, plan.points, lia=2)
        zf_bias_v = estimate_bias_zero_field(
            mm_trace, expected_width=plan.expected_zf_width_ut / cal.factor
        )
        axes_out[axis] = AxisReport(
            axis=axis,
            calibration=cal,
            background_pair_ut=-cal.factor * pair_bias_v,
            background_zero_field_ut=-cal.factor * zf_bias_v,
            compensation_v=compensation[axis],
            bias_iterations=iterations[axis],
        )
        diag.append(
            f"{axis}: factor {cal.factor:.4g} uT/V, pair bias {pair_bias_v:.4g} V, "
            f"zero-field bias {zf_bias_v:.4g} V"
        )
    report = CalibrationReport(axes=axes_out, delta_rf_khz=plan.delta_rf_khz, idn=instrument.idn())
    report.diagnostics = diag
    return report


# -- conventional baseline ----------------------------------------------------


def _classify_comb(centers, width_khz):
    """Larmor frequency from a detected RF resonance comb.

    Combs come in three kinds: all harmonics (spacing = Larmor), even plus
    the clock line (spacing doubled, center line present), odd only
    (spacing doubled, no center line).  The extent of the comb relative to
    its spacing plus the presence of a center feature identifies the kind.
    """
    centers = np.sort(np.asarray(centers, dtype=float))
    if len(centers) < 4:
        raise FitError(f"comb of {len(centers)} features is too sparse to classify")
    spacings = np.diff(centers)
    s = float(np.median(spacings))
    if s < 2.2 * width_khz:
        raise FitError("resonances not resolved: comb spacing too close to the line width")
    if np.any(np.abs(spacings - s) > 0.3 * s):
        raise FitError("irregular comb spacing")
    has_center = bool(np.any(np.abs(centers) < 0.35 * s))
    extent = float(np.max(np.abs(centers)))
    levels = extent / s
    if has_center:
        omega = s if levels >= 3.5 else s / 2.0
    else:
        omega = s / 2.0
    return omega


def _measure_omega(instrument, plan, diag, label):
    """RF sweep -> comb -> Larmor frequency, widening the span as needed."""
    span = plan.rf_span_khz
    while True:
        trace = instrument.scan_rf(-span, span, plan.rf_points, lia=1)
        feats = detect_features(trace, expected_width=plan.rf_expected_feature_width_khz)
        if not feats:
            return None, f"{label}: no resonances above threshold"
        centers = np.array([f.center for f in feats])
        width = float(np.median([f.width for f in feats]))
        if np.max(np.abs(centers)) > 0.75 * span and span < plan.rf_max_span_khz:
            span = min(span * 2.0, plan.rf_max_span_khz)
            diag.append(f"{label}: comb truncated, widening RF span to +-{span:g} kHz")
            continue
        try:
            omega = _classify_comb(centers, width)
        except FitError:
            # weak-parity stragglers can break the spacing; retry on the
            # prominent half of the comb
            amps = np.array([f.amplitude for f in feats])
            strong = centers[amps >= 0.5 * np.max(amps)]
            try:
                omega = _classify_comb(strong, width)
            except FitError as err:
                return None, f"{label}: {err}"
        return float(omega), None


def conventional_calibrate(
    instrument: Instrument,
    plan: CalibrationPlan = None,
    centers: dict = None,
) -> dict:
    """Baseline calibration: RF sweeps at several drive settings per axis.

    At each drive the Larmor frequency is read off the resonance comb and
    converted to a total field; the factor comes from fitting
    ``B = sqrt((factor * drive + background)**2 + perp**2)`` over the
    settings.  Needs >= 3 usable settings for the full fit; with exactly 2
    a linear fallback is returned flagged ``low_confidence``.
    """
    if plan is None:
        plan = CalibrationPlan()
    if centers is None:
        centers = {}
    diag = []
    gamma = plan.species.gamma_khz_per_ut
    instrument.set_rf_modulation(plan.rf_mod_amp_khz, plan.rf_mod_freq_hz)
    out = {}
    for axis in plan.axes:
        base = float(centers.get(axis, 0.0))
        instrument.set_b_modulation(axis, plan.b_mod_amp_ut, plan.b_mod_freq_hz)
        # probe for a drive amplitude that resolves the comb
        probe = plan.rf_initial_setting_v
        good = None
        while probe <= plan.v_limit - abs(base):
            instrument.set_coil(axis, base + probe)
            omega, problem = _measure_omega(instrument, plan, diag, f"{axis} probe {probe:g} V")
            if omega is not None:
                good = probe
                break
            diag.append(problem + "; doubling the drive")
            probe *= 2.0
        if good is None:
            instrument.set_coil(axis, base)
            raise CalibrationError(f"axis {axis}: no drive setting produced a usable comb", diag)
        # offsets spread over one side plus a sign flip: every |drive| at or
        # above the proven probe resolves, and near-zero backgrounds cannot
        # collapse the drive-field slope
        top = min(2.0 * good, plan.v_limit - abs(base))
        offsets = [good, 0.5 * (good + top), top, -0.5 * (good + top)]
        points = []
        for off in offsets:
            instrument.set_coil(axis, base + off)
            omega, problem = _measure_omega(instrument, plan, diag, f"{axis} at {off:+g} V")
            if omega is None:
                diag.append(f"{axis}: setting {off:+g} V excluded: {problem}")
                continue
            points.append((base + off, omega / gamma))
        instrument.set_coil(axis, base)
        if len(points) < 2:
            raise CalibrationError(
                f"axis {axis}: fewer than 2 usable drive settings for the baseline fit", diag
            )
        out[axis] = _fit_conventional(points, axis)
        diag.append(
            f"{axis}: conventional factor {out[axis].factor:.4g} uT/V from {len(points)} settings"
        )
    return out


def _fit_conventional(points, axis: str) -> CoilCalibration:
    controls = np.array([p[0] for p in points])
    totals = np.array([p[1] for p in points])
    if len(points) == 2:
        dc = controls[1] - controls[0]
        if dc == 0:
            raise FitError("two settings at the same drive: rank-deficient")
        f = (totals[1] - totals[0]) / dc
        if f < 0:
            f = (totals[0] - totals[1]) / dc
            bias = controls[1] + totals[1] / f
        else:
            bias = controls[0] - totals[0] / f
        if f <= 0:
            raise FitError("degenerate two-point baseline fit")
        return CoilCalibration(
            axis=axis,
            bias_control=float(bias),
            factor=float(f),
            residual_rms_ut=0.0,
            method=RF_SCAN_METHOD,
            n_features=len(points),
            low_confidence=True,
        )

    def model(params):
        f, bg, perp = params
        return np.sqrt((f * controls + bg) ** 2 + perp**2) - totals

    slope0, inter0 = np.polyfit(controls, totals, 1)
    best = None
    for f0 in (abs(slope0) + 1e-6, max(np.ptp(totals) / max(np.ptp(controls), 1e-9), 1e-3)):
        for bg0 in (inter0, -inter0, 0.0):
            try:
                res = least_squares(
                    model,
                    x0=[f0, bg0, max(1e-3, float(np.min(totals)) * 0.5)],
                    bounds=([1e-9, -np.inf, 0.0], [np.inf, np.inf, np.inf]),
                )
            except ValueError:
                continue
            if best is None or res.cost < best.cost:
                best = res
    if best is None:
        raise FitError("conventional model fit failed to start")
    f, bg, _perp = best.x
    residual_rms = float(np.sqrt(np.mean(model(best.x) ** 2)))
    return CoilCalibration(
        axis=axis,
        bias_control=float(-bg / f),
        factor=float(f),
        residual_rms_ut=residual_rms,
        method=RF_SCAN_METHOD,
        n_features=len(points),
    )


def attach_conventional(report: CalibrationReport, conventional: dict) -> CalibrationReport:
    """Merge baseline results into an automated-calibration report."""
    for axis, cal in conventional.items():
        if axis in report.axes:
            report.axes[axis].conventional = cal
            report.axes[axis].background_rf_ut = cal.background_ut
    return report
