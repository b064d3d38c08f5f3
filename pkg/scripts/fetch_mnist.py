"""Build MNIST IDX files from the digits bundled in the npm ``mnist`` package.

The sandbox this project was developed in has no route to the usual MNIST
mirrors, but the npm registry is reachable and the ``mnist`` package ships
10 000 genuine MNIST digits as JSON (pixel/255 rounded to 3 decimals, which
round-trips to the original bytes exactly).  The digits are written out as a
single gzipped IDX pair that ``fesynapse.data.load_idx`` reads; ``take_split``
then carves train/test subsets from it.

If you have the official ``train-images-idx3-ubyte`` files, skip this script
and point the config's ``data.images`` and ``data.labels`` at them instead.

    python scripts/fetch_mnist.py --out data/mnist
"""
import argparse
import json
import subprocess
import tarfile
import tempfile
from pathlib import Path

import numpy as np

from fesynapse.data import Dataset, write_idx


def _npm_pack(workdir: Path) -> Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True,
                   capture_output=True)
    return next(workdir.glob("mnist-*.tgz"))


def load_npm_digits(tarball: Path) -> Dataset:
    images, labels = [], []
    with tarfile.open(tarball) as tf:
        for digit in range(10):
            member = tf.extractfile(f"package/src/digits/{digit}.json")
            raw = np.asarray(json.load(member)["data"], dtype=np.float64)
            pix = np.rint(raw * 255.0)
            if np.abs(pix / 255.0 - raw).max() > 0.5 / 255.0:
                raise ValueError(f"digit {digit}: values are not byte/255 roundings")
            block = pix.astype(np.uint8).reshape(-1, 28, 28)
            images.append(block)
            labels.append(np.full(len(block), digit, dtype=np.uint8))
    return Dataset(np.concatenate(images), np.concatenate(labels), split="npm-mnist-10k")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("data/mnist"))
    ap.add_argument("--tarball", type=Path, default=None,
                    help="use an already downloaded mnist-*.tgz")
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tarball = args.tarball or _npm_pack(Path(tmp))
        ds = load_npm_digits(tarball)

    args.out.mkdir(parents=True, exist_ok=True)
    img_path = args.out / "mnist10k-images-idx3-ubyte.gz"
    lbl_path = args.out / "mnist10k-labels-idx1-ubyte.gz"
    write_idx(ds, img_path, lbl_path)
    counts = np.bincount(ds.labels, minlength=10)
    print(f"wrote {len(ds)} digits to {img_path} / {lbl_path}")
    print("class counts:", " ".join(f"{d}:{c}" for d, c in enumerate(counts)))


if __name__ == "__main__":
    main()
