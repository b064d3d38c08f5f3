"""Print the headline numbers from a directory of finished runs.

    python scripts/summarize.py runs
"""
import csv
import json
import sys
from pathlib import Path


def table(path: Path) -> list[dict]:
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


def main(root: Path) -> None:
    if (root / "curves" / "curves_report.json").exists():
        rep = json.loads((root / "curves" / "curves_report.json").read_text())
        print(f"curves: peak P(S0->S1) {rep['peak_p_s0_s1']:.3f}, "
              f"mse vs reference {rep['mse_vs_target']:.4f}")
    if (root / "domain_sweep" / "domain_sweep.csv").exists():
        rows = table(root / "domain_sweep" / "domain_sweep.csv")
        print("domain sweep: " + ", ".join(f"n={r['n_domains']}:{r['plateaus']}" for r in rows))
    if (root / "desk_scale" / "binary_fraction.csv").exists():
        for r in table(root / "desk_scale" / "binary_fraction.csv"):
            print(f"binary fraction {float(r['binary_fraction']):.2f}: "
                  f"{100 * float(r['mean_accuracy']):.2f} % +- {100 * float(r['sd_accuracy']):.2f}")
    for name in ("full_scale", "full_scale_binary"):
        if (root / name / "report.json").exists():
            rep = json.loads((root / name / "report.json").read_text())
            print(f"{name.replace('_', ' ')}: {100 * rep['mean_accuracy']:.2f} %")


if __name__ == "__main__":
    main(Path(sys.argv[1] if len(sys.argv) > 1 else "runs"))
