"""The five batch experiments, each a pure function of an ExperimentConfig.

Outputs land in ``config.out``.  CSV files start with a comment line carrying
the config hash and seed; JSON files carry the same under a ``_meta`` key.
Nothing time-dependent is written, so re-running a config reproduces every
file byte for byte.  Files are written to a temporary name and renamed into
place, so an aborted run never leaves a truncated result behind.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import device as dev
from .config import ExperimentConfig
from .crossbar import CrossbarArray
from .data import Dataset, load_idx, take_split
from .snn import N_CLASSES, N_INPUTS, Network
from .synapse import Level, SynapseModel, from_device_curves, matched_binary

log = logging.getLogger(__name__)

REFERENCE_CURVES = "switching_reference.csv"

# independent random streams per purpose, derived from the run seed
_STREAM_CURVES, _STREAM_SYNAPSE, _STREAM_NETWORK = 1, 2, 3


# -- output helpers ------------------------------------------------------------

def header(cfg: ExperimentConfig) -> str:
    """Provenance text for comment lines (without the comment marker)."""
    return f"config_hash={cfg.digest()} seed={cfg.seed} experiment={cfg.experiment}"


def meta(cfg: ExperimentConfig) -> dict:
    return {"config_hash": cfg.digest(), "seed": cfg.seed, "experiment": cfg.experiment}


def atomic_write(path, data: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data.encode() if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(cfg: ExperimentConfig, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(f"# {header(cfg)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_json(cfg: ExperimentConfig, path, payload: dict) -> Path:
    return atomic_write(path, json.dumps({"_meta": meta(cfg), **payload}, indent=2, sort_keys=True) + "\n")


def write_effective_config(cfg: ExperimentConfig) -> Path:
    return atomic_write(Path(cfg.out) / "effective_config.json", cfg.to_json())


def _rng(cfg: ExperimentConfig, *keys) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, *keys])


# -- device experiments --------------------------------------------------------

def voltage_grid(cfg: ExperimentConfig) -> np.ndarray:
    c = cfg.curves
    return dev.measurement_grid(c.v_start, c.v_stop, c.v_step)


def target_curves(cfg: ExperimentConfig) -> dev.SwitchCurves:
    if cfg.curves.target_csv:
        return dev.SwitchCurves.read_csv(cfg.curves.target_csv)
    ref = resources.files("fesynapse.resources").joinpath(REFERENCE_CURVES)
    with resources.as_file(ref) as p:
        return dev.SwitchCurves.read_csv(p)


def run_curves(cfg: ExperimentConfig) -> dict:
    """Accumulative curves on one sampled device plus a side-by-side with the targets."""
    grid = voltage_grid(cfg)
    c = dev.accumulative_curves(cfg.device, grid, cfg.curves.trials, _rng(cfg, _STREAM_CURVES),
                                cfg.protocol, method=cfg.curves.method)
    out = Path(cfg.out)
    atomic_write(out / "curves.csv", c.to_csv(header(cfg)))
    tgt = target_curves(cfg)
    rows, errs = [], []
    for v, s1, s2 in zip(c.voltages, c.p_s0_to_s1, c.p_s0_to_s2):
        if tgt.voltages[0] - 1e-9 <= v <= tgt.voltages[-1] + 1e-9:
            t1, t2 = tgt.interp(float(v))
            errs += [(s1 - t1) ** 2, (s2 - t2) ** 2]
            rows.append((float(v), float(s1), float(s2), float(t1), float(t2)))
    atomic_write(out / "comparison.csv",
                 csv_text(cfg, ["voltage", "sim_s0_s1", "sim_s0_s2", "target_s0_s1", "target_s0_s2"], rows))
    mse = float(np.mean(errs)) if errs else float("nan")
    write_json(cfg, out / "curves_report.json",
               {"mse_vs_target": mse, "peak_p_s0_s1": float(c.p_s0_to_s1.max()),
                "trials": cfg.curves.trials})
    write_effective_config(cfg)
    return {"curves": c, "mse": mse}


def run_calibrate(cfg: ExperimentConfig) -> dict:
    targets = target_curves(cfg)
    cc = cfg.calibration
    res = dev.calibrate(cfg.device, targets, trials=cc.trials, n_devices=cc.n_devices,
                        max_evals=cc.max_evals, seed=cfg.seed, protocol=cfg.protocol)
    out = Path(cfg.out)
    write_json(cfg, out / "calibrated_device.json", res.params.to_dict())
    rows = [("initial", res.initial_mse), ("fitted", res.mse)]
    atomic_write(out / "fit_report.csv", csv_text(cfg, ["params", "mse"], rows))
    write_json(cfg, out / "fit_summary.json",
               {"converged": res.converged, "n_evals": res.n_evals, "message": res.message,
                "initial_mse": res.initial_mse, "mse": res.mse})
    write_effective_config(cfg)
    return {"result": res}


def run_domain_sweep(cfg: ExperimentConfig) -> dict:
    ds = cfg.domain_sweep
    table = dev.states_vs_domains(cfg.device, [int(n) for n in ds.n_list], voltage_grid(cfg),
                                  ds.trials, _rng(cfg, _STREAM_CURVES), cfg.protocol,
                                  method=ds.method, reliability=ds.reliability,
                                  min_gap=ds.min_gap, sustain=ds.sustain)
    atomic_write(Path(cfg.out) / "domain_sweep.csv",
                 csv_text(cfg, ["n_domains", "plateaus"], table))
    write_effective_config(cfg)
    return {"table": table}


# -- network experiments ------------------------------------------------------

def build_synapses(cfg: ExperimentConfig) -> tuple[SynapseModel, SynapseModel]:
    """Tri-state model (from file or from pooled device curves) and its matched binary twin."""
    sc = cfg.synapse
    if sc.model_path:
        tri = SynapseModel.load(sc.model_path)
    else:
        c = dev.population_curves(cfg.device, voltage_grid(cfg), cfg.curves.trials,
                                  cfg.curves.n_devices, _rng(cfg, _STREAM_SYNAPSE),
                                  cfg.protocol, method=cfg.curves.method)
        tri = from_device_curves(c, sc.v_weak, sc.v_strong, sc.weight_map)
    return tri, matched_binary(tri)


def load_dataset(cfg: ExperimentConfig) -> Dataset:
    return load_idx(cfg.data.images, cfg.data.labels, split="mnist")


def init_crossbar(xbar: CrossbarArray, mode: str, rng: np.random.Generator) -> None:
    if mode == "all-s0":
        return
    if mode == "weak-pulse":
        # one weak programming pulse on every cell: a sparse random start
        for j in range(xbar.cols):
            xbar.program_column(j, np.full(xbar.rows, Level.WEAK), rng)
        return
    if mode == "random":
        st = rng.integers(0, 3, size=(xbar.rows, xbar.cols)).astype(np.int8)
        st[xbar.binary_mask & (st == 1)] = rng.choice(np.array([0, 2], np.int8),
                                                      size=int((xbar.binary_mask & (st == 1)).sum()))
        xbar.state[:] = st
        xbar._weights = None
        return
    raise ValueError(f"unknown init mode {mode!r}")


@dataclass
class RunResult:
    fraction: float
    repeat: int
    accuracy: float
    degenerate_patterns: int
    confusion: np.ndarray
    crossbar: dict
    log_lines: str


def train_eval_once(cfg: ExperimentConfig, tri: SynapseModel, binary: SynapseModel,
                    data: Dataset, fraction: float, repeat: int,
                    checkpoint_dir: Path | None = None) -> RunResult:
    """One network: split, build, train, label and test.

    The split and network streams depend only on (seed, repeat), so runs at
    different binary fractions share data order and Poisson streams as far
    as their trajectories allow.
    """
    split_seed = cfg.seed + repeat
    train, test = take_split(data, cfg.data.n_train, cfg.data.n_test, split_seed)
    rng = _rng(cfg, _STREAM_NETWORK, repeat)
    xbar = CrossbarArray(N_INPUTS, cfg.neuron.n_neurons, tri, binary)
    if fraction > 0:
        xbar.inject_binary_fraction(fraction, rng)
    init_crossbar(xbar, cfg.network.init, rng)
    net = Network(xbar, cfg.neuron, cfg.rule, cfg.encoding)
    logbuf = io.StringIO()
    logbuf.write(json.dumps({"_meta": meta(cfg), "repeat": repeat, "binary_fraction": fraction}) + "\n")

    def checkpoint(i):
        if checkpoint_dir is not None:
            write_json(cfg, checkpoint_dir / f"checkpoint_f{fraction:g}_r{repeat}_p{i}.json",
                       xbar.to_dict())

    net.train(train, rng, log_file=logbuf, checkpoint_every=cfg.network.checkpoint_every,
              checkpoint=checkpoint)
    net.assign_labels(train, rng)
    ev = net.evaluate(test, rng)
    if ev.degenerate:
        log.warning("repeat %d, fraction %g: %d silent test patterns", repeat, fraction,
                    ev.degenerate_patterns)
    return RunResult(fraction, repeat, ev.accuracy, ev.degenerate_patterns, ev.confusion,
                     xbar.to_dict(), logbuf.getvalue())


def _task(args):
    cfg_dict, tri_d, bin_d, fraction, repeat, ckpt = args
    cfg = ExperimentConfig.from_dict(cfg_dict)
    data = load_dataset(cfg)
    return train_eval_once(cfg, SynapseModel.from_dict(tri_d), SynapseModel.from_dict(bin_d),
                           data, fraction, repeat, Path(ckpt) if ckpt else None)


def _run_many(cfg: ExperimentConfig, tri, binary, points, jobs: int, ckpt_dir) -> list[RunResult]:
    args = [(cfg.to_dict(), tri.to_dict(), binary.to_dict(), f, r, str(ckpt_dir) if ckpt_dir else "")
            for f, r in points]
    if jobs > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_task, args))
    data = load_dataset(cfg)
    return [train_eval_once(cfg, tri, binary, data, f, r, ckpt_dir) for f, r in points]


def mean_sd(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    return float(v.mean()), float(v.std(ddof=1)) if len(v) > 1 else 0.0


def _confusion_rows(conf):
    return [[c] + conf[c].tolist() for c in range(N_CLASSES)]


def run_train_eval(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    out = Path(cfg.out)
    tri, binary = build_synapses(cfg)
    write_json(cfg, out / "synapse_model.json", tri.to_dict())
    ckpt_dir = out / "checkpoints" if cfg.network.checkpoint_every else None
    frac = cfg.network.binary_fraction
    results = _run_many(cfg, tri, binary, [(frac, r) for r in range(cfg.repeats)], jobs, ckpt_dir)
    rows = []
    for res in results:
        r = res.repeat
        rows.append((r, cfg.seed + r, res.accuracy, res.degenerate_patterns))
        atomic_write(out / f"confusion_r{r}.csv",
                     csv_text(cfg, ["true"] + [f"pred_{c}" for c in range(N_CLASSES)],
                              _confusion_rows(res.confusion)))
        write_json(cfg, out / f"crossbar_r{r}.json", res.crossbar)
        atomic_write(out / f"train_r{r}.jsonl", res.log_lines)
        xbar = CrossbarArray.from_dict(res.crossbar)
        atomic_write(out / f"weights_r{r}.pgm", pgm_bytes(cfg, xbar.weight_image()))
    atomic_write(out / "accuracy.csv",
                 csv_text(cfg, ["repeat", "split_seed", "accuracy", "degenerate_patterns"], rows))
    m, s = mean_sd([r.accuracy for r in results])
    write_json(cfg, out / "report.json",
               {"binary_fraction": frac, "mean_accuracy": m, "sd_accuracy": s,
                "accuracies": [r.accuracy for r in results],
                "degenerate_patterns": [r.degenerate_patterns for r in results],
                "p_weak": tri.p_weak, "p_strong": tri.p_strong})
    write_effective_config(cfg)
    log.info("train-eval: accuracy %.4f +- %.4f over %d repeats", m, s, len(results))
    return {"mean": m, "sd": s, "results": results}


def run_binary_fraction_sweep(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    out = Path(cfg.out)
    tri, binary = build_synapses(cfg)
    write_json(cfg, out / "synapse_model.json", tri.to_dict())
    points = [(float(f), r) for f in cfg.sweep.fractions for r in range(cfg.repeats)]
    results = _run_many(cfg, tri, binary, points, jobs, None)
    per_run = [(res.fraction, res.repeat, res.accuracy, res.degenerate_patterns) for res in results]
    atomic_write(out / "runs.csv",
                 csv_text(cfg, ["binary_fraction", "repeat", "accuracy", "degenerate_patterns"], per_run))
    summary = []
    for f in cfg.sweep.fractions:
        accs = [res.accuracy for res in results if res.fraction == float(f)]
        m, s = mean_sd(accs)
        summary.append((float(f), m, s, len(accs)))
    atomic_write(out / "binary_fraction.csv",
                 csv_text(cfg, ["binary_fraction", "mean_accuracy", "sd_accuracy", "repeats"], summary))
    write_effective_config(cfg)
    return {"summary": summary, "results": results}


def pgm_bytes(cfg: ExperimentConfig, img: np.ndarray) -> bytes:
    img = np.asarray(img, dtype=np.uint8)
    h, w = img.shape
    return f"P5\n# {header(cfg)}\n{w} {h}\n255\n".encode() + img.tobytes()


RUNNERS = {
    "calibrate": run_calibrate,
    "curves": run_curves,
    "domain-sweep": run_domain_sweep,
    "train-eval": run_train_eval,
    "binary-fraction-sweep": run_binary_fraction_sweep,
}


def run(cfg: ExperimentConfig, jobs: int = 1) -> dict:
    fn = RUNNERS[cfg.experiment]
    if cfg.experiment in ("train-eval", "binary-fraction-sweep"):
        return fn(cfg, jobs=jobs)
    return fn(cfg)


def summarize_gap(summary) -> float:
    """Accuracy at fraction 0 minus accuracy at fraction 1, when both were run."""
    d = {f: m for f, m, _, _ in summary}
    if 0.0 not in d or 1.0 not in d:
        return math.nan
    return d[0.0] - d[1.0]
