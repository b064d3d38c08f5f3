"""Refit the device parameters to the reference curves and install them as the packaged defaults file.

    python scripts/calibrate_device.py [--config configs/calibrate.json]

The fitted parameters land in ``runs/calibrate/calibrated_device.json`` and are
copied, without the run metadata, to ``src/fesynapse/resources``.  Update the
``DeviceParams`` defaults by hand if you want them to follow.
"""
import argparse
import json
from pathlib import Path

from fesynapse.config import ExperimentConfig
from fesynapse.experiments import run

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "calibrate.json")
    args = ap.parse_args()
    cfg = ExperimentConfig.load(args.config)
    res = run(cfg)["result"]
    fitted = json.loads((Path(cfg.out) / "calibrated_device.json").read_text())
    fitted.pop("_meta", None)
    dest = ROOT / "src" / "fesynapse" / "resources" / "calibrated_device.json"
    dest.write_text(json.dumps(fitted, indent=2) + "\n")
    print(f"mse {res.initial_mse:.5f} -> {res.mse:.5f} ({res.n_evals} evaluations); wrote {dest}")
