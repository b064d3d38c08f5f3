"""Monte Carlo model of a multi-domain ferroelectric gate stack.

Each domain carries a polarization sign, an activation field and a history
value: the time integral of 1/tau accumulated while the applied field opposes
its polarization.  Over a step of length dt a domain flips with probability

    1 - exp(h_before**beta - h_after**beta)

and its history restarts from zero when it does.  The nucleation time constant
follows Merz's law, tau = tau0 * exp((E_a / |E_fe|)**alpha), with the field in
the ferroelectric taken as a fixed fraction of the gate voltage.

Every routine accepts arrays with arbitrary leading (batch) dimensions; the
domain axis is always last.  That lets one call simulate many trials of one
device, or one trial of many voltages, without Python loops.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)

S0, S1, S2 = 0, 1, 2
STATE_LABELS = ("S0", "S1", "S2")

# activation fields are clamped here so tau stays finite and positive
EA_FLOOR = 1e-3  # MV/cm


@dataclass(frozen=True)
class DeviceParams:
    n_domains: int = 20
    t_fe: float = 8.0  # nm
    divider_kappa: float = 0.6
    tau0: float = 2.6742677e-09  # s
    alpha: float = 1.0130296
    ea_mean: float = 13.562228  # MV/cm
    ea_sigma: float = 0.0039797  # MV/cm
    beta: float = 1.3691559
    vth_high: float = 1.5  # V
    vth_low: float = 0.2  # V
    state_bounds: tuple = (0.38461538461538464, 0.8846153846153846)

    def __post_init__(self):
        object.__setattr__(self, "state_bounds", tuple(float(b) for b in self.state_bounds))
        for name in ("t_fe", "divider_kappa", "tau0", "alpha", "ea_mean", "ea_sigma",
                     "beta", "vth_high", "vth_low"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite, got {getattr(self, name)}")
        if int(self.n_domains) != self.n_domains or self.n_domains < 1:
            raise ValueError(f"n_domains must be a positive integer, got {self.n_domains}")
        if self.t_fe <= 0:
            raise ValueError("t_fe must be positive")
        if not 0 < self.divider_kappa <= 1:
            raise ValueError("divider_kappa must lie in (0, 1]")
        if self.tau0 <= 0 or self.alpha <= 0 or self.beta <= 0:
            raise ValueError("tau0, alpha and beta must be positive")
        if self.ea_sigma < 0:
            raise ValueError("ea_sigma must be non-negative")
        if self.vth_high <= self.vth_low:
            raise ValueError("vth_high must exceed vth_low")
        lo, hi = self.state_bounds
        if not 0 < lo < hi < 1:
            raise ValueError(f"state_bounds must satisfy 0 < lo < hi < 1, got {self.state_bounds}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["state_bounds"] = list(self.state_bounds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeviceParams":
        # "_meta" carries run provenance (config hash, seed) and is not a parameter
        return cls(**{k: v for k, v in d.items() if k != "_meta"})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DeviceParams":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class PulseSpec:
    amplitude: float  # V
    width: float  # s
    dt: float | None = None  # s; defaults to width / 100

    def __post_init__(self):
        if self.dt is None:
            object.__setattr__(self, "dt", self.width / 100)
        if not self.width > 0:
            raise ValueError("pulse width must be positive")
        if not 0 < self.dt <= self.width:
            raise ValueError("need 0 < dt <= width")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.width / self.dt)))


@dataclass(frozen=True)
class PulseProtocol:
    """Reset-then-program measurement sequence.

    The programming width is not reported for the measured device; it is a
    fixed constant that the calibration absorbs through tau0.
    """

    program_width: float = 1e-6
    reset_amplitude: float = -4.0
    reset_width: float = 1e-4
    steps_per_pulse: int = 100
    deterministic_reset: bool = False

    def program(self, amplitude) -> PulseSpec:
        return PulseSpec(amplitude, self.program_width, self.program_width / self.steps_per_pulse)

    def reset(self) -> PulseSpec:
        return PulseSpec(self.reset_amplitude, self.reset_width,
                         self.reset_width / self.steps_per_pulse)


@dataclass
class DomainEnsemble:
    polarization: np.ndarray  # int8, +1/-1
    e_a: np.ndarray  # MV/cm
    history: np.ndarray  # dimensionless, >= 0

    def __post_init__(self):
        self.polarization = np.asarray(self.polarization, dtype=np.int8)
        self.history = np.asarray(self.history, dtype=np.float64)
        self.e_a = np.asarray(self.e_a, dtype=np.float64)
        if self.polarization.shape[-1:] != self.e_a.shape[-1:] or \
                self.polarization.shape != self.history.shape:
            raise ValueError("polarization, e_a and history disagree on shape")

    @property
    def n_domains(self) -> int:
        return self.polarization.shape[-1]

    def copy(self) -> "DomainEnsemble":
        return DomainEnsemble(self.polarization.copy(), self.e_a.copy(), self.history.copy())

    def tiled(self, batch_shape) -> "DomainEnsemble":
        """Independent copies of this device stacked along new leading axes."""
        shape = tuple(batch_shape) + self.polarization.shape
        return DomainEnsemble(np.broadcast_to(self.polarization, shape).copy(),
                              self.e_a.copy(),
                              np.broadcast_to(self.history, shape).copy())


@dataclass(frozen=True)
class DeviceReadout:
    v_th: float
    switched_fraction: float
    state: str


@dataclass
class SwitchCurves:
    voltages: np.ndarray
    p_s0_to_s1: np.ndarray
    p_s0_to_s2: np.ndarray
    trials: np.ndarray
    # per-trial switched fractions, (n_voltages, trials); not serialized
    fractions: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.voltages = np.asarray(self.voltages, dtype=np.float64)
        n = len(self.voltages)
        self.p_s0_to_s1 = np.asarray(self.p_s0_to_s1, dtype=np.float64)
        self.p_s0_to_s2 = np.asarray(self.p_s0_to_s2, dtype=np.float64)
        self.trials = np.broadcast_to(np.asarray(self.trials, dtype=np.int64), (n,)).copy()
        if self.p_s0_to_s1.shape != (n,) or self.p_s0_to_s2.shape != (n,):
            raise ValueError("probability arrays must match the voltage grid")
        for p in (self.p_s0_to_s1, self.p_s0_to_s2):
            if np.any(p < 0) or np.any(p > 1):
                raise ValueError("probabilities must lie in [0, 1]")
        if np.any(self.p_s0_to_s1 + self.p_s0_to_s2 > 1 + 1 / np.maximum(self.trials, 1) + 1e-12):
            raise ValueError("p_s0_to_s1 + p_s0_to_s2 exceeds 1")

    def interp(self, v: float) -> tuple[float, float]:
        """Linear interpolation of (p_s0_to_s1, p_s0_to_s2) at voltage ``v``."""
        if not self.voltages[0] - 1e-9 <= v <= self.voltages[-1] + 1e-9:
            raise ValueError(f"{v} V lies outside the curve grid "
                             f"[{self.voltages[0]}, {self.voltages[-1]}]")
        return (float(np.interp(v, self.voltages, self.p_s0_to_s1)),
                float(np.interp(v, self.voltages, self.p_s0_to_s2)))

    def to_csv(self, header_comment: str | None = None) -> str:
        buf = io.StringIO()
        if header_comment:
            buf.write(f"# {header_comment}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["voltage", "p_s0_s1", "p_s0_s2", "trials"])
        for v, a, b, t in zip(self.voltages, self.p_s0_to_s1, self.p_s0_to_s2, self.trials):
            w.writerow([f"{v:.4f}", f"{a:.6f}", f"{b:.6f}", int(t)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "SwitchCurves":
        rows = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
        reader = csv.DictReader(rows)
        if reader.fieldnames != ["voltage", "p_s0_s1", "p_s0_s2", "trials"]:
            raise ValueError(f"unexpected curve CSV header {reader.fieldnames}")
        recs = list(reader)
        if not recs:
            raise ValueError("curve CSV has no rows")
        return cls([float(r["voltage"]) for r in recs], [float(r["p_s0_s1"]) for r in recs],
                   [float(r["p_s0_s2"]) for r in recs], [int(r["trials"]) for r in recs])

    @classmethod
    def read_csv(cls, path) -> "SwitchCurves":
        return cls.from_csv(Path(path).read_text())

    def to_dict(self) -> dict:
        return {"voltages": self.voltages.tolist(), "p_s0_to_s1": self.p_s0_to_s1.tolist(),
                "p_s0_to_s2": self.p_s0_to_s2.tolist(), "trials": self.trials.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "SwitchCurves":
        return cls(d["voltages"], d["p_s0_to_s1"], d["p_s0_to_s2"], d["trials"])


# -- physics ------------------------------------------------------------------

def sample_device(params: DeviceParams, rng: np.random.Generator) -> DomainEnsemble:
    """Fresh device: all domains down, zero history, e_a ~ N(mean, sigma) clamped at a floor."""
    z = rng.standard_normal(params.n_domains)
    e_a = np.maximum(params.ea_mean + params.ea_sigma * z, EA_FLOOR)
    n = params.n_domains
    return DomainEnsemble(-np.ones(n, np.int8), e_a, np.zeros(n))


def field_from_voltage(v, params: DeviceParams):
    """Field across the ferroelectric in MV/cm (capacitive divider, t_fe in nm)."""
    # V / (t_fe * 1e-7 cm) / 1e6 = V / (0.1 * t_fe) in MV/cm
    return params.divider_kappa * np.asarray(v, dtype=np.float64) / (0.1 * params.t_fe)


def tau(e_fe, e_a, params: DeviceParams):
    """Merz-law nucleation time; +inf where the field is not positive."""
    e_fe = np.asarray(e_fe, dtype=np.float64)
    e_a = np.asarray(e_a, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        t = params.tau0 * np.exp((e_a / e_fe) ** params.alpha)
    t = np.where(e_fe > 0, t, np.inf)
    return t[()] if t.ndim == 0 else t


def _opposing(polarization, e_fe):
    e = np.asarray(e_fe)[..., None]
    return ((e > 0) & (polarization < 0)) | ((e < 0) & (polarization > 0))


def step_history(ens: DomainEnsemble, e_fe, dt: float, params: DeviceParams) -> DomainEnsemble:
    """Advance histories of domains that oppose the field by dt / tau."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    opp = _opposing(ens.polarization, e_fe)
    rate = 1.0 / tau(np.abs(np.asarray(e_fe, dtype=np.float64))[..., None], ens.e_a, params)
    out = ens.copy()
    out.history = np.where(opp, ens.history + dt * rate, ens.history)
    return out


def switch_prob(h_before, h_after, beta):
    h_before = np.asarray(h_before, dtype=np.float64)
    h_after = np.asarray(h_after, dtype=np.float64)
    if np.any(h_after < h_before):
        raise ValueError("history must not decrease over a step")
    if np.any(h_before < 0):
        raise ValueError("history must be non-negative")
    p = -np.expm1(h_before ** beta - h_after ** beta)
    p = np.clip(p, 0.0, 1.0)
    return p[()] if p.ndim == 0 else p


def _run_pulse(pol, hist, e_a, e_fe, n_steps, dt, params, rng, method="steps"):
    """In-place kernel behind apply_pulse. ``e_fe`` broadcasts against the batch shape.

    method="steps" integrates step by step, drawing one uniform per opposing
    domain per step.  method="exact" exploits that the field is constant over
    the pulse: survival telescopes to exp(h_start**beta - h_end**beta), so
    one exponential draw per domain decides whether it flips at all.  After
    a flip the domain is aligned with the field and stays put, so both
    methods sample the same end state distribution.
    """
    e_b = np.asarray(e_fe, dtype=np.float64)[..., None]
    direction = np.sign(e_b).astype(np.int8)
    rate = np.broadcast_to(dt / tau(np.abs(e_b), e_a, params), pol.shape)
    beta = params.beta
    if method == "exact":
        opp = (pol != direction) & (direction != 0) & (rate > 0)
        h0 = hist[opp]
        h1 = h0 + n_steps * rate[opp]
        flip = rng.standard_exponential(h0.shape) < h1 ** beta - h0 ** beta
        h1[flip] = 0.0
        hist[opp] = h1
        pol[opp] = np.where(flip, -pol[opp], pol[opp])
        return pol, hist
    if method != "steps":
        raise ValueError(f"unknown pulse method {method!r}")
    for _ in range(n_steps):
        opp = (pol != direction) & (direction != 0) & (rate > 0)
        if not opp.any():
            break
        h_old = hist[opp]
        h_new = h_old + rate[opp]
        flip = rng.random(h_old.shape) < -np.expm1(h_old ** beta - h_new ** beta)
        h_new[flip] = 0.0
        hist[opp] = h_new
        pol[opp] = np.where(flip, -pol[opp], pol[opp])
    return pol, hist


def apply_pulse(ens: DomainEnsemble, pulse: PulseSpec, params: DeviceParams,
                rng: np.random.Generator, method: str = "steps") -> DomainEnsemble:
    """Integrate one rectangular pulse in steps of pulse.dt; returns a new ensemble."""
    out = ens.copy()
    e_fe = field_from_voltage(pulse.amplitude, params)
    if np.all(e_fe == 0):
        return out
    _run_pulse(out.polarization, out.history, out.e_a, e_fe, pulse.n_steps, pulse.dt,
               params, rng, method)
    return out


def reset_device(ens: DomainEnsemble, params: DeviceParams, rng: np.random.Generator,
                 protocol: PulseProtocol = PulseProtocol(), method: str = "steps") -> DomainEnsemble:
    """Apply the saturating reset and clear all histories."""
    if protocol.deterministic_reset:
        out = ens.copy()
        out.polarization[...] = -1
    else:
        out = apply_pulse(ens, protocol.reset(), params, rng, method)
    out.history[...] = 0.0
    return out


def switched_fraction(polarization) -> np.ndarray:
    return np.mean(np.asarray(polarization) > 0, axis=-1)


def classify(fraction, params: DeviceParams):
    """State index 0/1/2 from switched fraction using params.state_bounds."""
    return np.searchsorted(np.asarray(params.state_bounds), fraction, side="right")


def threshold_voltage(fraction, params: DeviceParams):
    return params.vth_high - (params.vth_high - params.vth_low) * np.asarray(fraction)


def readout(ens: DomainEnsemble, params: DeviceParams) -> DeviceReadout:
    if ens.polarization.ndim != 1:
        raise ValueError("readout takes a single device; use switched_fraction for batches")
    f = float(switched_fraction(ens.polarization))
    return DeviceReadout(float(threshold_voltage(f, params)), f,
                         STATE_LABELS[int(classify(f, params))])


# -- measurement protocols ----------------------------------------------------

def simulate_fractions(params: DeviceParams, v_grid, trials: int, rng: np.random.Generator,
                       protocol: PulseProtocol = PulseProtocol(),
                       device: DomainEnsemble | None = None, method: str = "steps") -> np.ndarray:
    """Switched fraction after reset+program for each (voltage, trial) on one device.

    The same sampled device is cycled ``trials`` times per voltage, matching a
    repeated measurement of a single transistor.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    v_grid = np.asarray(v_grid, dtype=np.float64)
    dev = device if device is not None else sample_device(params, rng)
    batch = dev.tiled((len(v_grid), trials))
    batch = reset_device(batch, params, rng, protocol, method)
    pulse = protocol.program(1.0)
    e_fe = np.broadcast_to(field_from_voltage(v_grid, params)[:, None], (len(v_grid), trials))
    _run_pulse(batch.polarization, batch.history, batch.e_a, e_fe,
               pulse.n_steps, pulse.dt, params, rng, method)
    return switched_fraction(batch.polarization)


def accumulative_curves(params: DeviceParams, v_grid: Sequence[float], trials: int,
                        rng: np.random.Generator,
                        protocol: PulseProtocol = PulseProtocol(),
                        method: str = "steps") -> SwitchCurves:
    """Fraction of reset-then-program trials that end in S1 and in S2 at each voltage."""
    frac = simulate_fractions(params, v_grid, trials, rng, protocol, method=method)
    states = classify(frac, params)
    return SwitchCurves(v_grid, (states == S1).mean(axis=1), (states == S2).mean(axis=1),
                        trials, fractions=frac)


def population_curves(params: DeviceParams, v_grid: Sequence[float], trials: int,
                      n_devices: int, rng: np.random.Generator,
                      protocol: PulseProtocol = PulseProtocol(),
                      method: str = "exact") -> SwitchCurves:
    """Accumulative curves pooled over ``n_devices`` independently sampled devices."""
    if n_devices < 1:
        raise ValueError("n_devices must be >= 1")
    curves = [accumulative_curves(params, v_grid, trials, rng, protocol, method)
              for _ in range(n_devices)]
    return SwitchCurves(v_grid, np.mean([c.p_s0_to_s1 for c in curves], axis=0),
                        np.mean([c.p_s0_to_s2 for c in curves], axis=0), trials * n_devices)


def bounds_from_levels(vth_high: float, vth_low: float, vth_mid: float) -> tuple[float, float]:
    """Switched-fraction bounds placing each state's level at the centre of its band.

    The intermediate level sits at switched fraction
    f1 = (vth_high - vth_mid) / (vth_high - vth_low); the bounds are the
    midpoints between 0, f1 and 1, so a reading is classified to the nearest
    V_th level.
    """
    if not vth_low < vth_mid < vth_high:
        raise ValueError("vth_mid must lie strictly between vth_low and vth_high")
    f1 = (vth_high - vth_mid) / (vth_high - vth_low)
    return (f1 / 2, (f1 + 1) / 2)


def measurement_grid(start=2.0, stop=4.0, step=0.02) -> np.ndarray:
    n = int(round((stop - start) / step)) + 1
    return np.round(start + step * np.arange(n), 10)


# -- calibration --------------------------------------------------------------

FIT_FIELDS = ("tau0", "alpha", "ea_mean", "ea_sigma", "beta")


def _pack(p: DeviceParams) -> np.ndarray:
    return np.array([math.log(p.tau0), math.log(p.alpha), math.log(p.ea_mean),
                     p.ea_sigma, math.log(p.beta)])


def _unpack(x, base: DeviceParams) -> DeviceParams:
    return replace(base, tau0=math.exp(x[0]), alpha=math.exp(x[1]), ea_mean=math.exp(x[2]),
                   ea_sigma=abs(float(x[3])), beta=math.exp(x[4]))


def curve_mse(sim: SwitchCurves, target: SwitchCurves) -> float:
    d1 = sim.p_s0_to_s1 - target.p_s0_to_s1
    d2 = sim.p_s0_to_s2 - target.p_s0_to_s2
    return float(np.mean(np.concatenate([d1, d2]) ** 2))


@dataclass
class CalibrationResult:
    params: DeviceParams
    mse: float
    initial_mse: float
    n_evals: int
    converged: bool
    message: str = ""


def calibrate(initial: DeviceParams, targets: SwitchCurves, *, trials: int = 200,
              n_devices: int = 4, max_evals: int = 600, seed: int = 0,
              protocol: PulseProtocol = PulseProtocol(),
              method: str = "exact") -> CalibrationResult:
    """Fit tau0, alpha, ea_mean, ea_sigma, beta to target curves by Nelder-Mead.

    The objective is the curve MSE averaged over ``n_devices`` sampled
    devices, so the fit describes a typical device rather than one draw.
    Every candidate reuses the same seeds (common random numbers), which makes
    the stochastic objective a deterministic function of the parameters.
    n_domains and the remaining fields stay at ``initial``'s values.

    Running out of budget sets ``converged=False`` and emits a RuntimeWarning;
    the best point seen is still returned.
    """
    if len(targets.voltages) == 0:
        raise ValueError("empty target curves")
    v = targets.voltages
    seeds = np.random.SeedSequence(seed).spawn(n_devices)
    evals = 0

    def objective(x):
        nonlocal evals
        evals += 1
        try:
            cand = _unpack(x, initial)
        except (ValueError, OverflowError):
            return 1.0
        errs = [curve_mse(accumulative_curves(cand, v, trials, np.random.default_rng(s),
                                              protocol, method), targets) for s in seeds]
        return float(np.mean(errs))

    x0 = _pack(initial)
    f0 = objective(x0)
    # simplex edges move tau0 by a factor e, the rest by roughly 10-15 %
    step = np.array([1.0, 0.15, 0.1, max(0.05 * initial.ea_mean, 0.05), 0.15])
    simplex = np.vstack([x0] + [x0 + np.eye(5)[i] * step[i] for i in range(5)])
    res = minimize(objective, x0, method="Nelder-Mead",
                   options={"maxfev": max_evals, "initial_simplex": simplex,
                            "xatol": 1e-4, "fatol": 1e-7})
    best_x, best_f = (res.x, float(res.fun)) if res.fun <= f0 else (x0, f0)
    result = CalibrationResult(_unpack(best_x, initial), best_f, f0, evals,
                               bool(res.success), str(res.message))
    if not res.success:
        warnings.warn(f"calibration stopped without converging after {evals} evaluations "
                      f"({res.message}); returning best-so-far mse={best_f:.5f}",
                      RuntimeWarning, stacklevel=2)
    log.info("calibration: mse %.5f -> %.5f in %d evaluations", f0, best_f, evals)
    return result


# -- domain-count scaling -----------------------------------------------------

def programming_spread(fractions: np.ndarray, reliability: float = 0.95) -> np.ndarray:
    """Width of the shortest interval holding ``reliability`` of the trials, per voltage."""
    fr = np.sort(np.asarray(fractions), axis=-1)
    n = fr.shape[-1]
    m = int(math.ceil(reliability * n))
    widths = fr[..., m - 1:] - fr[..., : n - m + 1]
    return widths.min(axis=-1)


def count_states(fractions: np.ndarray, n_domains: int, *, reliability: float = 0.95,
                 min_gap: float = 0.1, sustain: int = 3) -> int:
    """Number of programmable conductance levels a device resolves.

    ``fractions`` is (n_voltages, trials).  The programming spread at each
    voltage is the width of the band holding ``reliability`` of the trials;
    the device's resolution is the largest spread sustained over ``sustain``
    consecutive voltages, floored at ``min_gap``.  Levels that close together
    cannot be told apart, so the count is 1 + floor(1 / resolution), capped at
    n_domains + 1.
    """
    w = programming_spread(fractions, reliability)
    if len(w) >= sustain:
        windows = np.lib.stride_tricks.sliding_window_view(w, sustain)
        spread = float(windows.min(axis=1).max())
    else:
        spread = float(w.min())
    resolution = max(spread, min_gap)
    return int(min(n_domains + 1, 1 + math.floor(1.0 / resolution + 1e-9)))


def states_vs_domains(params: DeviceParams, n_list: Sequence[int], v_grid, trials: int,
                      rng: np.random.Generator, protocol: PulseProtocol = PulseProtocol(),
                      method: str = "steps", **rule) -> list[tuple[int, int]]:
    out = []
    for n in n_list:
        if n < 1:
            raise ValueError("domain counts must be >= 1")
        p = replace(params, n_domains=int(n))
        frac = simulate_fractions(p, v_grid, trials, rng, protocol, method=method)
        out.append((int(n), count_states(frac, int(n), **rule)))
    return out
