"""Write the S0->S1 / S0->S2 reference curves used as calibration targets.

Only the qualitative features of the measured accumulative switching curves
are available to this project, so the reference is a smooth reconstruction
anchored on them:

* both probabilities are ~0 at 2 V;
* P(S0->S1) climbs past 0.9, then falls as S2 takes over;
* the weak write voltage 2.82 V sits on the rising edge (intermediate P(S1));
* the strong write voltage 3.6 V gives P(S2) > 0.9, and P(S2) -> 1 by 4 V.

P(reach >= S1) and P(reach S2) are logistic in voltage; P(S1) is their
difference.  Sampled on the 2-4 V / 20 mV measurement grid with trials=50.
"""
import argparse
from pathlib import Path

import numpy as np

from fesynapse.device import SwitchCurves, measurement_grid

ANY_SWITCH = (2.86, 0.065)  # midpoint V, logistic scale V
FULL_SWITCH = (3.42, 0.075)


def logistic(v, mid, scale):
    return 1.0 / (1.0 + np.exp(-(v - mid) / scale))


def reference_curves() -> SwitchCurves:
    v = measurement_grid()
    p_any = logistic(v, *ANY_SWITCH)
    p_s2 = logistic(v, *FULL_SWITCH)
    return SwitchCurves(v, np.round(p_any - p_s2, 4), np.round(p_s2, 4), 50)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", type=Path,
                    default=Path(__file__).resolve().parents[1] / "src/fesynapse/resources/switching_reference.csv")
    args = ap.parse_args()
    args.out.write_text(reference_curves().to_csv(
        "reference accumulative switching curves (logistic reconstruction, see scripts/make_reference_curves.py)"))
    print("wrote", args.out)
