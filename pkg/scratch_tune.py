"""Scratch: tune preset constants through the synth+demod chain."""
import time

import numpy as np

import magscan as m
from magscan.lockin import run_scan
from magscan.presets import bf_scan_config, arc_scan_config, cpt_lockin, mm_lockin


def feature_stats(trace, around, halfwin):
    x, v = trace.controls, trace.values
    mask = (x > around - halfwin) & (x < around + halfwin)
    xs, vs = x[mask], v[mask]
    imax, imin = np.argmax(vs), np.argmin(vs)
    width = abs(xs[imax] - xs[imin])
    pkpk = vs[imax] - vs[imin]
    return width, pkpk, xs[imax], xs[imin]


t0 = time.time()
cfg = bf_scan_config(m.ScanAxis.BZ, points=400, span_ut=8.0, noise_rms=0.0)
traces = run_scan(cfg, ["CPT", "MM"], cpt_settings=cpt_lockin("BF"), mm_settings=mm_lockin("BF"))
print(f"BF BZ scan 400pts both channels: {time.time()-t0:.2f} s")
cpt, mm = traces["CPT"], traces["MM_z"]
print("CPT range:", cpt.values.min(), cpt.values.max())
print("MM  range:", mm.values.min(), mm.values.max())
for pos in (3.108, 6.216):
    w, a, xm, xn = feature_stats(cpt, -pos, 1.2)
    print(f"CPT feature @ -{pos}: width={w:.3f} pkpk={a:.4g}")
    w, a, xm, xn = feature_stats(mm, -pos, 1.2)
    print(f"MM  feature @ -{pos}: width={w:.3f} pkpk={a:.4g}")
# zero-field MM feature
w, a, xm, xn = feature_stats(mm, 0.0, 3.0)
print(f"MM zf: extrema at {xm:.2f},{xn:.2f} width={w:.3f} pkpk={a:.4g}")
# central slope sign of MM zf (absorption convention -> negative)
x, v = mm.controls, mm.values
c = np.argmin(np.abs(x))
slope = (v[c + 2] - v[c - 2]) / (x[c + 2] - x[c - 2])
print(f"MM zf central slope: {slope:.4g} (want negative)")
# CPT center flatness
mask = np.abs(cpt.controls) < 1.0
print(f"CPT central pkpk: {cpt.values[mask].max() - cpt.values[mask].min():.3g}")

print()
t0 = time.time()
cfg2 = arc_scan_config(m.ScanAxis.BZ, points=400, span_ut=40.0, noise_rms=0.0)
tr2 = run_scan(cfg2, ["CPT", "MM"], cpt_settings=cpt_lockin("ARC"), mm_settings=mm_lockin("ARC"))
print(f"ARC BZ scan: {time.time()-t0:.2f} s")
cpt2, mm2 = tr2["CPT"], tr2["MM_z"]
for pos in (16.93, 33.87):
    w, a, _, _ = feature_stats(cpt2, -pos, 6.0)
    print(f"ARC CPT @ -{pos}: width={w:.3f} pkpk={a:.4g}")
    w, a, _, _ = feature_stats(mm2, -pos, 6.0)
    print(f"ARC MM  @ -{pos}: width={w:.3f} pkpk={a:.4g}")
w, a, _, _ = feature_stats(mm2, 0.0, 5.0)
print(f"ARC MM zf: width={w:.3f} pkpk={a:.4g}")

# BX odd check (BF)
cfg3 = bf_scan_config(m.ScanAxis.BX, points=400, span_ut=8.0, noise_rms=0.0)
tr3 = run_scan(cfg3, ["CPT"], cpt_settings=cpt_lockin("BF"))["CPT"]
for pos, n in ((4.144, 3), (2.486, 5)):
    w, a, _, _ = feature_stats(tr3, -pos, 0.8)
    print(f"BF BX CPT n={n} @ -{pos:.2f}: width={w:.3f} pkpk={a:.4g}")
# even absent on BX?
w, a, _, _ = feature_stats(tr3, -6.216, 0.8)
print(f"BF BX CPT even slot @ -6.22: pkpk={a:.3g} (want ~0)")
