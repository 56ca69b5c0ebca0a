"""Dispersive-feature detection and harmonic assignment on demodulated traces.

A lock-in trace of a resonance is the derivative of its line shape: an
extremum pair with a zero crossing in between.  Detection finds such pairs
on a lightly smoothed trace, thresholds them against a robust noise estimate
from the trace tails, and rejects the spurious "pair" formed between two
neighboring real features by comparing each candidate's extrema gap with the
distance to surrounding prominent extrema.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.ndimage import uniform_filter1d

from .atoms import AtomSpecies, ScanAxis
from .exceptions import (
    AmbiguousAssignmentError,
    DomainError,
    InsufficientDataError,
    NotEstimableError,
)
from .traces import Trace

MIN_TRACE_POINTS = 50

# Relative floor on the detection threshold: tails of far-off resonances
# wiggle a noise-free trace at up to a few percent of the largest feature.
RELATIVE_FLOOR = 0.05

# Accepted relative deviation from the 1/|n| position grid when assigning
# harmonic numbers; absorbs rounding of the anchor values.
ASSIGN_TOLERANCE = 0.07


@dataclass(frozen=True)
class ResonanceFeature:
    """One dispersive feature of a demodulated trace.

    ``center`` is the interpolated crossing between the extrema, ``width``
    their separation, ``amplitude`` the peak-to-peak excursion and
    ``slope_sign`` the sign of d(value)/d(control) through the crossing.
    ``n`` is filled in by :func:`assign_harmonics`.
    """

    center: float
    width: float
    amplitude: float
    slope_sign: int
    n: int = None

    def __post_init__(self):
        if self.width <= 0 or self.amplitude <= 0:
            raise DomainError("feature width and amplitude must be positive")
        if self.slope_sign not in (-1, 1):
            raise DomainError("slope_sign must be -1 or +1")


def _ascending(trace: Trace):
    x = trace.controls
    v = trace.values
    if len(x) > 1 and x[1] < x[0]:
        return x[::-1].copy(), v[::-1].copy()
    return x, v


def _local_extrema(sm):
    d = np.sign(np.diff(sm))
    # carry the previous slope across flat runs
    for i in range(1, len(d)):
        if d[i] == 0:
            d[i] = d[i - 1]
    idx = np.where(d[1:] != d[:-1])[0] + 1
    kinds = [1 if d[i - 1] > 0 else -1 for i in idx]  # 1 = maximum
    return list(zip(idx.tolist(), kinds))


def noise_sigma(trace: Trace, smooth_window: int = 5) -> float:
    """Robust noise estimate: scaled MAD of the detrended trace tails."""
    _, v = _ascending(trace)
    sm = uniform_filter1d(v, size=max(3, smooth_window), mode="nearest")
    resid = v - sm
    k = max(5, len(v) // 10)
    tails = np.concatenate([resid[:k], resid[-k:]])
    return 1.4826 * float(np.median(np.abs(tails - np.median(tails))))


def detect_features(
    trace: Trace,
    expected_width: float = None,
    threshold_factor: float = 5.0,
) -> list:
    """Find dispersive features in a demodulated trace.

    Parameters
    ----------
    trace : Trace
        At least 50 points.
    expected_width : float, optional
        Rough demodulated feature width in control units; sets the
        smoothing window and caps how wide a candidate may be.
    threshold_factor : float
        Peak-to-peak threshold in units of the robust noise estimate.

    Returns
    -------
    list of ResonanceFeature, sorted by center.  Empty when nothing clears
    the threshold (a flat trace is not an error).
    """
    if len(trace) < MIN_TRACE_POINTS:
        raise InsufficientDataError(
            f"need >= {MIN_TRACE_POINTS} points, got {len(trace)}"
        )
    x, v = _ascending(trace)
    step = float(np.median(np.diff(x)))
    if expected_width is not None and expected_width > 0:
        window = max(5, int(round(expected_width / step / 5.0)))
    else:
        window = 5
    sm = uniform_filter1d(v, size=window, mode="nearest")
    resid = v - sm
    k = max(5, len(v) // 10)
    tails = np.concatenate([resid[:k], resid[-k:]])
    sigma = 1.4826 * float(np.median(np.abs(tails - np.median(tails))))
    spread = float(np.max(sm) - np.min(sm))
    threshold = max(threshold_factor * sigma, RELATIVE_FLOOR * spread, 1e-300)

    extrema = _local_extrema(sm)
    baseline = float(np.median(sm))
    candidates = []
    for (i, ki), (j, kj) in zip(extrema, extrema[1:]):
        if ki == kj:
            continue
        pkpk = abs(sm[j] - sm[i])
        if pkpk < threshold:
            continue
        # both excursions must leave the baseline, otherwise this is a real
        # extremum paired with a ripple
        if min(abs(sm[i] - baseline), abs(sm[j] - baseline)) < 0.2 * pkpk:
            continue
        gap = x[j] - x[i]
        if expected_width is not None and expected_width > 0 and gap > 3.0 * expected_width:
            continue
        candidates.append((pkpk, i, j))

    # Inter-feature "pairs" (one feature's trailing extremum against the next
    # feature's leading one) have gaps on the feature-spacing scale and can
    # even beat real features in peak-to-peak when neighboring tails add up.
    # Real features share the linewidth scale (the widest legitimate spread,
    # adjacent harmonic orders, is a factor 2), so the narrowest candidate
    # anchors the cut (floored at a few samples against noise flukes).
    if candidates:
        gaps = np.array([x[j] - x[i] for _, i, j in candidates])
        cut = 2.6 * max(float(np.min(gaps)), 2.0 * step)
        candidates = [c for c, g in zip(candidates, gaps) if g <= cut]

    accepted = []
    used = set()
    for pkpk, i, j in sorted(candidates, reverse=True):
        if i in used or j in used:
            continue
        # an extremum hugging the window edge belongs to a truncated feature
        # whose center is unreliable
        guard = max(window, (j - i) // 2 + 1)
        if i < guard or j >= len(sm) - guard:
            continue
        mid = 0.5 * (sm[i] + sm[j])
        crossing = None
        for kk in range(i, j):
            a, b = sm[kk] - mid, sm[kk + 1] - mid
            if a == 0.0:
                crossing = x[kk]
                break
            if a * b < 0:
                crossing = x[kk] + (x[kk + 1] - x[kk]) * a / (a - b)
                break
        if crossing is None:
            continue
        used.update((i, j))
        accepted.append(
            ResonanceFeature(
                center=float(crossing),
                width=float(x[j] - x[i]),
                amplitude=float(pkpk),
                slope_sign=1 if sm[j] > sm[i] else -1,
            )
        )
    accepted.sort(key=lambda f: f.center)
    return accepted


def center_slope(trace: Trace, feature: ResonanceFeature) -> float:
    """Local d(value)/d(control) at a feature center (linear fit)."""
    x, v = _ascending(trace)
    mask = np.abs(x - feature.center) <= 0.5 * feature.width
    if mask.sum() < 2:
        raise InsufficientDataError("feature narrower than the sampling step")
    coeff = np.polyfit(x[mask], v[mask], 1)
    return float(coeff[0])


def _symmetry_center(features, match_tol):
    """Center maximizing the number of mirror-matched feature pairs."""
    centers = np.array([f.center for f in features])
    best = None
    for i in range(len(centers)):
        for j in range(i + 1, len(centers)):
            c0 = 0.5 * (centers[i] + centers[j])
            mirrored = 2.0 * c0 - centers
            pairs = []
            used = set()
            for a in range(len(centers)):
                if a in used:
                    continue
                others = [
                    b
                    for b in range(len(centers))
                    if b != a and b not in used and abs(centers[b] - mirrored[a]) <= match_tol
                ]
                if others:
                    b = min(others, key=lambda b: abs(centers[b] - mirrored[a]))
                    used.update((a, b))
                    pairs.append((a, b))
            if pairs:
                midpoints = [0.5 * (centers[a] + centers[b]) for a, b in pairs]
                spread = float(np.max(midpoints) - np.min(midpoints)) if len(midpoints) > 1 else 0.0
                if best is None or (len(pairs), -spread) > (len(best[1]), -best[2]):
                    best = (float(np.mean(midpoints)), pairs, spread)
    if best is None:
        raise AmbiguousAssignmentError(
            "no symmetric feature pair found (single unpaired feature?)"
        )
    return best[0], best[1]


def symmetry_center(features) -> float:
    """Mirror-symmetry center of a feature set, without harmonic labels.

    Mean midpoint of the best mirror pairing; needs at least one symmetric
    pair.  Unlike :func:`assign_harmonics` this is valid however large the
    orthogonal field is, because pairs stay symmetric when their positions
    shrink.
    """
    feats = sorted(features, key=lambda f: f.center)
    if len(feats) < 2:
        raise AmbiguousAssignmentError("need at least one symmetric pair", [])
    match_tol = 0.5 * float(np.median([f.width for f in feats]))
    c0, _ = _symmetry_center(feats, match_tol)
    return c0


def assign_harmonics(
    features,
    delta_rf_khz: float,
    species: AtomSpecies,
    scan: ScanAxis,
    tolerance: float = ASSIGN_TOLERANCE,
    control_unit: str = "uT",
    rough_scale: float = None,
) -> list:
    """Label detected features with their harmonic numbers.

    Distances from the symmetry center are matched against the 1/|n| grid
    restricted to the parity class of the scan axis (even for BZ, odd for
    BX/BY).  The match uses position ratios only, so it works on raw
    (uncalibrated) control units; when controls are in uT the absolute
    prediction additionally disambiguates single-pair inputs.  The feature
    on the negative side of the center gets the positive harmonic label.

    The 1/|n| grid assumes the field orthogonal to the scan axis is small
    against the innermost position; run after background compensation.

    Raises
    ------
    AmbiguousAssignmentError
        If no symmetric pair exists or several assignments fit within the
        tolerance; lists the candidate assignments.
    """
    if not scan.is_field:
        raise DomainError("harmonic assignment applies to field-axis scans")
    if delta_rf_khz == 0:
        raise DomainError("delta_rf = 0 cannot anchor a harmonic grid")
    feats = sorted(features, key=lambda f: f.center)
    if len(feats) < 2:
        raise AmbiguousAssignmentError("need at least one symmetric pair", [])
    match_tol = 0.5 * float(np.median([f.width for f in feats]))
    c0, pairs = _symmetry_center(feats, match_tol)
    if scan is ScanAxis.BZ:
        klass = [n for n in range(2, species.n_max + 1, 2)]
    else:
        klass = [n for n in range(1, species.n_max + 1, 2)]
    # Genuine resonances on one side of the center all share a slope sign
    # (each total-field resonance is one physical harmonic, mirrored onto
    # both sides); the connecting structure between close features runs the
    # opposite way.  Prune pairs that contradict their side's majority.
    votes = {-1: {}, 1: {}}
    for a, b in pairs:
        for idx in (a, b):
            side = -1 if feats[idx].center < c0 else 1
            sign = feats[idx].slope_sign
            votes[side][sign] = votes[side].get(sign, 0.0) + feats[idx].amplitude
    majority = {
        side: max(v, key=v.get) if v else 0 for side, v in votes.items()
    }
    kept_pairs = []
    for a, b in pairs:
        ok = True
        for idx in (a, b):
            side = -1 if feats[idx].center < c0 else 1
            if majority[side] != 0 and feats[idx].slope_sign != majority[side]:
                ok = False
        if ok:
            kept_pairs.append((a, b))
    if kept_pairs:
        pairs = kept_pairs

    # work per mirror pair: each pair has one distance from the center
    pair_dist = {}
    for a, b in pairs:
        d = 0.5 * (abs(feats[a].center - c0) + abs(feats[b].center - c0))
        if d > 0:
            pair_dist[(a, b)] = d
    if not pair_dist:
        raise AmbiguousAssignmentError("all pairs collapse at the symmetry center", [])
    d_max = max(pair_dist.values())

    # anchor hypotheses: try each harmonic for the outermost pair, map the
    # rest onto the implied grid; features that fit nothing (tail-overlap
    # artifacts) stay unlabeled rather than vetoing the hypothesis
    hypotheses = []
    for anchor in klass:
        scale = d_max * anchor  # implied |delta_rf| / gamma in control units
        mapping = {}
        for key, d in pair_dist.items():
            matches = [
                n for n in klass if abs(d - scale / n) <= tolerance * (scale / n)
            ]
            if len(matches) > 1:
                raise AmbiguousAssignmentError(
                    f"pair at distance {d:g} matches several harmonics", matches
                )
            if matches:
                mapping[key] = matches[0]
        values = list(mapping.values())
        if mapping and len(set(values)) == len(values):
            hypotheses.append((anchor, scale, mapping, len(mapping)))

    if not hypotheses:
        raise AmbiguousAssignmentError(
            "no harmonic assignment fits the position grid", klass
        )
    best_count = max(h[3] for h in hypotheses)
    hypotheses = [h for h in hypotheses if h[3] == best_count]
    if len(hypotheses) > 1:
        if control_unit == "uT":
            k_abs = abs(delta_rf_khz) / species.gamma_khz_per_ut
            close = [
                h for h in hypotheses if abs(h[1] - k_abs) <= tolerance * k_abs
            ]
            if len(close) == 1:
                hypotheses = close
        if len(hypotheses) > 1:
            raise AmbiguousAssignmentError(
                "several harmonic assignments fit within tolerance",
                [h[2] for h in hypotheses],
            )
    pair_mapping = hypotheses[0][2]
    mapping = {}
    for (a, b), magnitude in pair_mapping.items():
        mapping[a] = magnitude
        mapping[b] = magnitude
    out = []
    for i, f in enumerate(feats):
        if i in mapping:
            magnitude = mapping[i]
            sign = 1 if f.center < c0 else -1
            out.append(replace(f, n=sign * magnitude))
        else:
            out.append(f)
    return out


def find_broad_feature(trace: Trace, threshold_factor: float = 5.0):
    """Locate the dominant broad dispersive feature (the zero-field term).

    Heavy smoothing suppresses narrow quantum-interference features, then
    the global extremum pair is taken.  Returns None when the excursion
    does not clear the noise threshold.
    """
    x, v = _ascending(trace)
    window = max(7, len(v) // 12)
    sm = uniform_filter1d(v, size=window, mode="nearest")
    sigma = noise_sigma(trace)
    imax = int(np.argmax(sm))
    imin = int(np.argmin(sm))
    pkpk = float(sm[imax] - sm[imin])
    if pkpk < threshold_factor * sigma or imax == imin:
        return None
    i, j = sorted((imax, imin))
    mid = 0.5 * (sm[i] + sm[j])
    crossing = None
    for kk in range(i, j):
        a, b = sm[kk] - mid, sm[kk + 1] - mid
        if a == 0.0:
            crossing = x[kk]
            break
        if a * b < 0:
            crossing = x[kk] + (x[kk + 1] - x[kk]) * a / (a - b)
            break
    if crossing is None:
        return None
    # deconvolve the smoothing from the extrema separation so the width
    # reflects the feature, not the filter
    step = float(np.median(np.diff(x)))
    raw_width = float(x[j] - x[i])
    win_width = window * step
    width = float(np.sqrt(max(raw_width**2 - win_width**2, (2.0 * step) ** 2)))
    return ResonanceFeature(
        center=float(crossing),
        width=width,
        amplitude=pkpk,
        slope_sign=1 if sm[j] > sm[i] else -1,
    )


def zero_field_crossing(trace: Trace, expected_width: float = None) -> float:
    """Control value where the broad zero-field feature crosses zero.

    The trace is smoothed on the scale of the expected zero-field width so
    narrow quantum-interference features do not pull the crossing, then the
    sign change between the global extrema is interpolated linearly.
    """
    x, v = _ascending(trace)
    if expected_width is not None and expected_width > 0:
        step = float(np.median(np.diff(x)))
        window = int(np.clip(round(expected_width / step / 3.0), 5, len(v) // 3))
    else:
        window = max(7, len(v) // 12)
    sm = uniform_filter1d(v, size=window, mode="nearest")
    sigma = noise_sigma(trace)
    imax = int(np.argmax(sm))
    imin = int(np.argmin(sm))
    if float(sm[imax] - sm[imin]) < 5.0 * sigma:
        raise NotEstimableError("no zero-field feature above the noise floor")
    i, j = sorted((imax, imin))
    for kk in range(i, j):
        a, b = sm[kk], sm[kk + 1]
        if a == 0.0:
            return float(x[kk])
        if a * b < 0:
            return float(x[kk] + (x[kk + 1] - x[kk]) * a / (a - b))
    raise NotEstimableError("zero-field feature has no central zero crossing")
