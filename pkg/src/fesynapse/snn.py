"""Spiking network trained with the stepped two-pulse learning rule.

784 Poisson inputs drive a layer of LIF neurons through a crossbar.  Every
firing neuron inhibits all the others (winner-take-all), and an adaptive
threshold keeps a few neurons from winning every pattern.  Learning happens
only on postsynaptic spikes.  Each input row of the firing neuron's column
receives one pulse chosen from the time since that input last spiked:

    delta <= timing_threshold           -> strong pulse (towards S2)
    timing_threshold < delta <= window  -> weak pulse   (towards S1)
    otherwise                           -> reset with probability depression_prob

Time is in ms throughout; membrane quantities are normalised
(rest 0, base threshold 1).
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .crossbar import CrossbarArray
from .data import Dataset
from .synapse import Level

log = logging.getLogger(__name__)

N_INPUTS = 784
N_CLASSES = 10


@dataclass(frozen=True)
class NeuronParams:
    n_neurons: int = 100
    v_rest: float = 0.0
    v_reset: float = 0.0
    v_thresh_base: float = 1.0
    tau_mem: float = 100.0  # ms
    refractory: float = 5.0  # ms
    theta_plus: float = 0.05
    theta_decay: float = 1e7  # ms
    inhibition_strength: float = 1.0
    input_gain: float = 0.02  # membrane jump per unit column current

    def __post_init__(self):
        if not self.v_reset < self.v_thresh_base:
            raise ValueError("v_reset must be below the base threshold")
        if self.tau_mem <= 0 or self.refractory <= 0 or self.theta_decay <= 0:
            raise ValueError("time constants must be positive")
        if self.n_neurons < 1:
            raise ValueError("need at least one neuron")


@dataclass(frozen=True)
class LearnRuleParams:
    timing_threshold: float = 2.0  # ms
    stdp_window: float = 40.0  # ms
    depression_enabled: bool = True
    depression_prob: float = 0.1

    def __post_init__(self):
        if not 0 < self.timing_threshold < self.stdp_window:
            raise ValueError("need 0 < timing_threshold < stdp_window")
        if not 0.0 <= self.depression_prob <= 1.0:
            raise ValueError("depression_prob must be a probability")


@dataclass(frozen=True)
class EncodingParams:
    duration: float = 350.0  # ms
    dt: float = 0.5  # ms
    max_rate: float = 63.75  # Hz

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


@dataclass
class SnnState:
    membrane: np.ndarray
    theta: np.ndarray
    refractory_until: np.ndarray
    last_pre_spike: np.ndarray
    last_post_spike: np.ndarray
    weights: CrossbarArray
    t: float = 0.0

    @classmethod
    def fresh(cls, params: NeuronParams, weights: CrossbarArray) -> "SnnState":
        n = params.n_neurons
        if weights.cols != n:
            raise ValueError(f"crossbar has {weights.cols} columns for {n} neurons")
        return cls(np.full(n, params.v_rest), np.zeros(n), np.full(n, -np.inf),
                   np.full(weights.rows, -np.inf), np.full(n, -np.inf), weights)

    def begin_pattern(self, params: NeuronParams) -> None:
        """Return the dynamic variables to rest; theta and weights persist."""
        self.membrane[:] = params.v_rest
        self.refractory_until[:] = -np.inf
        self.last_pre_spike[:] = -np.inf
        self.last_post_spike[:] = -np.inf
        self.t = 0.0


# -- building blocks ----------------------------------------------------------

def encode_poisson(image, duration: float, dt: float, max_rate: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Bernoulli approximation of Poisson rate coding: (steps, pixels) bool raster."""
    pix = np.asarray(image, dtype=np.float64).reshape(-1)
    if np.any(pix < 0) or np.any(pix > 255):
        raise ValueError("pixel values must lie in [0, 255]")
    n_steps = int(round(duration / dt))
    p = pix / 255.0 * max_rate * dt * 1e-3
    lit = np.flatnonzero(p > 0)  # dark pixels never fire, so draw only for the rest
    raster = np.zeros((n_steps, pix.size), dtype=bool)
    raster[:, lit] = rng.random((n_steps, lit.size)) < p[lit]
    return raster


def lif_step(state: SnnState, input_currents, dt: float, params: NeuronParams,
             adapt: bool = True) -> np.ndarray:
    """Advance membranes by dt; returns the boolean spike vector for this step.

    Neurons inside their refractory period are held at v_reset and ignore
    input.  ``adapt`` toggles the threshold increment and its decay.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = state.membrane
    active = state.refractory_until <= state.t
    leak = np.exp(-dt / params.tau_mem)
    v[:] = params.v_rest + (v - params.v_rest) * leak
    v += np.where(active, input_currents, 0.0)
    v[~active] = params.v_reset
    fired = v > params.v_thresh_base + state.theta
    if fired.any():
        v[fired] = params.v_reset
        state.refractory_until[fired] = state.t + params.refractory
        state.last_post_spike[fired] = state.t
        if adapt:
            state.theta[fired] += params.theta_plus
    if adapt:
        state.theta *= np.exp(-dt / params.theta_decay)
    state.t += dt
    return fired


def wta_inhibit(spikes, strength: float) -> np.ndarray:
    """Inhibitory current: every spiking neuron hits all others, never itself."""
    spikes = np.asarray(spikes, dtype=np.float64)
    return -strength * (spikes.sum() - spikes)


def stdp_decide(pre_t, post_t: float, rule: LearnRuleParams,
                rng: np.random.Generator | None = None) -> Level:
    """Pulse for one synapse given its last presynaptic spike time (None if none).

    Out-of-window and anti-causal events get NONE unless ``rng`` is given and
    depression is enabled, in which case they get RESET with depression_prob.
    """
    last = np.array([-np.inf if pre_t is None else float(pre_t)])
    depress = None
    if rng is not None and rule.depression_enabled:
        depress = np.array([rng.random() < rule.depression_prob])
    return Level(int(stdp_levels(last, post_t, rule, depress)[0]))


def stdp_levels(last_pre, post_t: float, rule: LearnRuleParams, depress=None) -> np.ndarray:
    """Vectorised stdp_decide.

    ``depress`` marks which out-of-window synapses receive a reset pulse
    (drawn by the caller with depression_prob); the rest get NONE.  A
    presynaptic spike later than post_t (anti-causal) counts as out of window.
    """
    delta = post_t - np.asarray(last_pre, dtype=np.float64)
    lv = np.full(delta.shape, Level.NONE, dtype=np.int64)
    causal = delta >= 0
    lv[causal & (delta <= rule.timing_threshold)] = Level.STRONG
    lv[causal & (delta > rule.timing_threshold) & (delta <= rule.stdp_window)] = Level.WEAK
    if rule.depression_enabled and depress is not None:
        out = ~causal | (delta > rule.stdp_window)
        lv[out & np.asarray(depress, bool)] = Level.RESET
    return lv


@njit(cache=True)
def _advance(v, theta, refr_until, last_pre, last_post, w, indptr, pre, k0, n_steps, dt,
             v_rest, v_reset, v_th, leak, refractory, theta_plus, theta_leak,
             inh_strength, inhibition, adapt, stop_on_spike, counts, fired):
    """Run steps k0.. until the end, or until just after a spike if stop_on_spike.

    Returns the index of the next step to run; ``fired`` holds the spikes of
    the last step executed and ``inhibition`` the input queued for the next.
    """
    n = v.shape[0]
    for k in range(k0, n_steps):
        t = k * dt
        for p in range(indptr[k], indptr[k + 1]):
            last_pre[pre[p]] = t
        n_fired = 0
        for j in range(n):
            vj = v_rest + (v[j] - v_rest) * leak
            if refr_until[j] <= t:
                cur = inhibition[j]
                for p in range(indptr[k], indptr[k + 1]):
                    cur += w[pre[p], j]
                vj += cur
            else:
                vj = v_reset
            fired[j] = vj > v_th + theta[j]
            if fired[j]:
                vj = v_reset
                refr_until[j] = t + refractory
                last_post[j] = t
                counts[j] += 1
                n_fired += 1
                if adapt:
                    theta[j] += theta_plus
            v[j] = vj
        for j in range(n):
            inhibition[j] = -inh_strength * (n_fired - (1 if fired[j] else 0))
            if adapt:
                theta[j] *= theta_leak
        if n_fired > 0 and stop_on_spike:
            return k + 1
    return n_steps


# -- network ------------------------------------------------------------------

@dataclass
class PatternResult:
    spike_counts: np.ndarray
    pulses: dict = field(default_factory=dict)


@dataclass
class EvalResult:
    accuracy: float
    confusion: np.ndarray  # (true, predicted)
    degenerate_patterns: int
    predictions: np.ndarray

    @property
    def degenerate(self) -> bool:
        return self.degenerate_patterns > 0


class Network:
    def __init__(self, weights: CrossbarArray, neuron: NeuronParams = NeuronParams(),
                 rule: LearnRuleParams = LearnRuleParams(),
                 encoding: EncodingParams = EncodingParams()):
        if weights.rows != N_INPUTS:
            raise ValueError(f"crossbar must have {N_INPUTS} rows")
        self.neuron, self.rule, self.encoding = neuron, rule, encoding
        self.state = SnnState.fresh(neuron, weights)
        self.labels: np.ndarray | None = None

    @property
    def weights(self) -> CrossbarArray:
        return self.state.weights

    def present(self, image, rng: np.random.Generator, learn: bool) -> PatternResult:
        """Show one image for the encoding duration and return per-neuron spike counts.

        The step loop runs in a compiled kernel with the same update order as
        lif_step followed by wta_inhibit.  During learning it hands control
        back at every step with a postsynaptic spike so the pulses can be drawn
        from ``rng``.
        """
        enc, prm, st = self.encoding, self.neuron, self.state
        raster = encode_poisson(image, enc.duration, enc.dt, enc.max_rate, rng)
        n_steps = raster.shape[0]
        st.begin_pattern(prm)
        xbar = st.weights
        w = np.array(xbar.weights, dtype=np.float64) * prm.input_gain
        steps, pre = np.nonzero(raster)
        indptr = np.zeros(n_steps + 1, np.int64)
        np.cumsum(np.bincount(steps, minlength=n_steps), out=indptr[1:])
        pre = pre.astype(np.int64)
        counts = np.zeros(prm.n_neurons, np.int64)
        fired = np.zeros(prm.n_neurons, np.bool_)
        inhibition = np.zeros(prm.n_neurons)
        pulses = {"strong": 0, "weak": 0, "reset": 0}
        leak = float(np.exp(-enc.dt / prm.tau_mem))
        theta_leak = float(np.exp(-enc.dt / prm.theta_decay))
        k = 0
        while k < n_steps:
            k = _advance(st.membrane, st.theta, st.refractory_until, st.last_pre_spike,
                         st.last_post_spike, w, indptr, pre, k, n_steps, enc.dt,
                         prm.v_rest, prm.v_reset, prm.v_thresh_base, leak, prm.refractory,
                         prm.theta_plus, theta_leak, prm.inhibition_strength, inhibition,
                         learn, learn, counts, fired)
            if not learn or k >= n_steps and not fired.any():
                break
            now = (k - 1) * enc.dt
            for j in np.flatnonzero(fired):
                depress = rng.random(xbar.rows) < self.rule.depression_prob
                levels = stdp_levels(st.last_pre_spike, now, self.rule, depress)
                xbar.program_column(j, levels, rng)
                w[:, j] = xbar.column_weights(j) * prm.input_gain
                pulses["strong"] += int((levels == Level.STRONG).sum())
                pulses["weak"] += int((levels == Level.WEAK).sum())
                pulses["reset"] += int((levels == Level.RESET).sum())
            fired[:] = False
        st.t = n_steps * enc.dt
        return PatternResult(counts, pulses)

    def train(self, data: Dataset, rng: np.random.Generator, log_file=None,
              checkpoint_every: int = 0, checkpoint=None) -> None:
        """One pass over ``data`` with learning on.

        ``log_file`` receives one JSON line per pattern.  ``checkpoint(i)`` is
        called after every ``checkpoint_every`` patterns.
        """
        if len(data) == 0:
            raise ValueError("empty training set")
        for i in range(len(data)):
            res = self.present(data.images[i], rng, learn=True)
            if log_file is not None:
                log_file.write(json.dumps({"pattern": i, "label": int(data.labels[i]),
                                           "spike_counts": res.spike_counts.tolist(),
                                           "pulses": res.pulses}) + "\n")
            if checkpoint is not None and checkpoint_every and (i + 1) % checkpoint_every == 0:
                checkpoint(i + 1)
        log.info("trained on %d patterns; S2 fraction %.3f, S1 fraction %.3f", len(data),
                 (self.weights.state == 2).mean(), (self.weights.state == 1).mean())

    def response_counts(self, data: Dataset, rng: np.random.Generator) -> np.ndarray:
        return np.stack([self.present(img, rng, learn=False).spike_counts for img in data.images]) \
            if len(data) else np.zeros((0, self.neuron.n_neurons), np.int64)

    def assign_labels(self, data: Dataset, rng: np.random.Generator) -> np.ndarray:
        """Label each neuron by its highest mean response per class; silent neurons get -1."""
        counts = self.response_counts(data, rng)
        self.labels = labels_from_counts(counts, data.labels)
        return self.labels

    def evaluate(self, data: Dataset, rng: np.random.Generator) -> EvalResult:
        if self.labels is None:
            raise RuntimeError("network has no neuron labels; call assign_labels first")
        counts = self.response_counts(data, rng)
        return score(counts, data.labels, self.labels)


def labels_from_counts(counts: np.ndarray, classes: np.ndarray) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.float64)
    classes = np.asarray(classes)
    per_class = np.zeros((counts.shape[1], N_CLASSES))
    for c in range(N_CLASSES):
        m = classes == c
        if m.any():
            per_class[:, c] = counts[m].mean(axis=0)
    labels = np.argmax(per_class, axis=1)  # ties go to the lower class index
    labels[per_class.sum(axis=1) == 0] = -1
    return labels


def predict(counts: np.ndarray, neuron_labels: np.ndarray):
    """Class with the highest mean spike count over its neurons; silent patterns -> 0."""
    counts = np.asarray(counts, dtype=np.float64)
    scores = np.zeros((counts.shape[0], N_CLASSES))
    for c in range(N_CLASSES):
        m = neuron_labels == c
        if m.any():
            scores[:, c] = counts[:, m].mean(axis=1)
    silent = counts.sum(axis=1) == 0
    pred = np.argmax(scores, axis=1)
    pred[silent] = 0
    return pred, silent


def score(counts, true_labels, neuron_labels) -> EvalResult:
    pred, silent = predict(counts, neuron_labels)
    true_labels = np.asarray(true_labels)
    conf = np.zeros((N_CLASSES, N_CLASSES), np.int64)
    np.add.at(conf, (true_labels, pred), 1)
    acc = float((pred == true_labels).mean()) if len(true_labels) else 0.0
    return EvalResult(acc, conf, int(silent.sum()), pred)


def params_dict(*objs) -> dict:
    return {type(o).__name__: asdict(o) for o in objs}
