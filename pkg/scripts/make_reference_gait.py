"""Regenerate src/atd3gait/data/reference_gait.csv.

The table is a periodic cubic spline through hand-placed keypoints that
follow the usual shape of adult sagittal-plane joint angles over one gait
cycle (heel strike to heel strike). It is a smooth stand-in for a measured
normative dataset, not a measurement.
"""
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicSpline

KEYPOINTS = {
    # percent of cycle -> degrees; flexion / dorsiflexion positive
    "hip": [(0, 30), (10, 28), (30, 10), (50, -8), (60, -5), (75, 20), (88, 33), (100, 30)],
    "knee": [(0, 5), (15, 18), (30, 8), (40, 5), (55, 15), (70, 60), (80, 50), (92, 10), (100, 5)],
    "ankle": [(0, 0), (8, -6), (30, 6), (45, 10), (55, 3), (62, -18), (75, -5), (88, 0), (100, 0)],
}

HEADER = """\
# Reference sagittal-plane gait, one cycle from right heel strike, 100 samples.
# Synthetic: periodic cubic spline through keypoints shaped like typical adult
# walking (hip ~30 deg flexion at heel strike, knee swing peak ~60 deg,
# ankle push-off ~-18 deg). Regenerate with scripts/make_reference_gait.py.
"""


def build():
    pct = np.arange(100)
    cols = {}
    for joint, pts in KEYPOINTS.items():
        x, y = zip(*pts)
        cols[joint] = CubicSpline(x, y, bc_type="periodic")(pct)
    return pct, cols


def main():
    pct, cols = build()
    out = Path(__file__).resolve().parents[1] / "src" / "atd3gait" / "data" / "reference_gait.csv"
    lines = [HEADER.rstrip("\n"), "percent,hip,knee,ankle"]
    for i in pct:
        lines.append(f"{i},{cols['hip'][i]:.4f},{cols['knee'][i]:.4f},{cols['ankle'][i]:.4f}")
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
