import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fesynapse.crossbar import CrossbarArray
from fesynapse.data import Dataset
from fesynapse.snn import (EncodingParams, LearnRuleParams, Network, NeuronParams, SnnState,
                           encode_poisson, labels_from_counts, lif_step, predict, score,
                           stdp_decide, stdp_levels, wta_inhibit)
from fesynapse.synapse import Level, State, make_tristate, matched_binary

import oracles

TRI = make_tristate(0.35, 0.92)
BIN = matched_binary(TRI)
RULE = LearnRuleParams(timing_threshold=1.0, stdp_window=20.0, depression_prob=0.1)


def crossbar(n=10, seed=0, fill=Level.WEAK):
    xb = CrossbarArray(784, n, TRI, BIN)
    rng = np.random.default_rng(seed)
    for j in range(n):
        xb.program_column(j, np.full(784, fill), rng)
    return xb


def digit_like(seed=0, n=1):
    rng = np.random.default_rng(seed)
    imgs = np.zeros((n, 28, 28), np.uint8)
    for k in range(n):
        r, c = rng.integers(6, 16, size=2)
        imgs[k, r:r + 10, c:c + 4] = 255
    return imgs


# -- encoder --------------------------------------------------------------------

def test_encode_blank_image_is_silent():
    r = encode_poisson(np.zeros((28, 28)), 350, 0.5, 63.75, np.random.default_rng(0))
    assert r.shape == (700, 784) and not r.any()


def test_encode_full_pixel_mean_count():
    rng = np.random.default_rng(0)
    counts = [encode_poisson(np.full((1, 1), 255), 350, 0.5, 63.75, rng).sum() for _ in range(4000)]
    mean = oracles.poisson_mean(63.75, 350)
    assert mean == pytest.approx(22.31, abs=0.01)
    assert abs(np.mean(counts) - mean) <= 3 * math.sqrt(mean / len(counts))


def test_encode_rate_scales_linearly():
    img = np.full((28, 28), 128)
    a = sum(encode_poisson(img, 100, 0.5, 20.0, np.random.default_rng(s)).sum() for s in range(20))
    b = sum(encode_poisson(img, 100, 0.5, 40.0, np.random.default_rng(s + 99)).sum() for s in range(20))
    assert b / a == pytest.approx(2.0, rel=0.05)


def test_encode_rejects_bad_pixels():
    with pytest.raises(ValueError):
        encode_poisson(np.full((2, 2), 300), 10, 0.5, 10, np.random.default_rng(0))


# -- neuron dynamics ------------------------------------------------------------------

def state_for(prm, n=3):
    return SnnState.fresh(prm, CrossbarArray(784, n, TRI, BIN))


def test_lif_zero_input_stays_at_rest():
    prm = NeuronParams(n_neurons=3)
    s = state_for(prm)
    for _ in range(100):
        assert not lif_step(s, np.zeros(3), 0.5, prm).any()
    assert np.all(s.membrane == prm.v_rest)


def test_lif_constant_drive_spikes_no_faster_than_refractory():
    prm = NeuronParams(n_neurons=1, refractory=5.0, theta_plus=0.0)
    s = state_for(prm, 1)
    times = [k * 0.5 for k in range(400) if lif_step(s, np.array([5.0]), 0.5, prm)[0]]
    gaps = np.diff(times)
    assert len(times) > 10
    assert gaps.min() >= prm.refractory
    assert np.all(gaps == gaps[0])


def test_lif_subthreshold_impulse_decays_with_tau():
    prm = NeuronParams(n_neurons=1, tau_mem=100.0)
    s = state_for(prm, 1)
    lif_step(s, np.array([0.99]), 0.5, prm)
    v0 = s.membrane[0]
    for _ in range(1000):  # 5 tau
        lif_step(s, np.zeros(1), 0.5, prm)
    expected = oracles.exp_decay(v0, 500.0, 100.0)
    assert s.membrane[0] == pytest.approx(expected, rel=0.01)


def test_lif_theta_grows_on_fire_and_decays():
    prm = NeuronParams(n_neurons=1, theta_plus=0.1, theta_decay=10.0)
    s = state_for(prm, 1)
    assert lif_step(s, np.array([2.0]), 0.5, prm)[0]
    assert s.theta[0] == pytest.approx(0.1 * math.exp(-0.05))
    frozen = s.theta[0]
    lif_step(s, np.zeros(1), 0.5, prm, adapt=False)
    assert s.theta[0] == frozen


@settings(max_examples=60)
@given(st.lists(st.floats(-2, 3), min_size=40, max_size=40))
def test_membrane_never_ends_step_above_threshold(drive):
    prm = NeuronParams(n_neurons=2, theta_plus=0.02)
    s = state_for(prm, 2)
    for x in drive:
        lif_step(s, np.array([x, x / 2]), 0.5, prm)
        assert np.all(s.membrane <= prm.v_thresh_base + s.theta)


def test_lif_rejects_bad_dt():
    prm = NeuronParams(n_neurons=1)
    with pytest.raises(ValueError):
        lif_step(state_for(prm, 1), np.zeros(1), 0.0, prm)


def test_neuron_params_validation():
    with pytest.raises(ValueError):
        NeuronParams(v_reset=1.0, v_thresh_base=1.0)
    with pytest.raises(ValueError):
        NeuronParams(tau_mem=0.0)


# -- inhibition -----------------------------------------------------------------

def test_wta_inhibit():
    assert np.all(wta_inhibit(np.zeros(4, bool), 1.5) == 0)
    inh = wta_inhibit(np.array([0, 1, 0, 0], bool), 1.5)
    assert inh.tolist() == [-1.5, 0.0, -1.5, -1.5]
    inh = wta_inhibit(np.array([1, 1, 0], bool), 1.0)
    assert inh.tolist() == [-1.0, -1.0, -2.0]


# -- learning rule ----------------------------------------------------------------

def test_stdp_decide_examples():
    assert stdp_decide(10.0, 10.0, RULE) == Level.STRONG
    assert stdp_decide(9.0, 10.0, RULE) == Level.STRONG  # delta == threshold is inclusive
    assert stdp_decide(5.0, 10.0, RULE) == Level.WEAK
    assert stdp_decide(-10.0, 10.0, RULE) == Level.WEAK  # delta == window
    assert stdp_decide(-10.01, 10.0, RULE) == Level.NONE
    assert stdp_decide(None, 10.0, RULE) == Level.NONE
    assert stdp_decide(11.0, 10.0, RULE) == Level.NONE  # anti-causal


def test_stdp_decide_depression_rate():
    rule = LearnRuleParams(1.0, 20.0, depression_enabled=True, depression_prob=0.25)
    rng = np.random.default_rng(0)
    n = 20_000
    hits = sum(stdp_decide(None, 10.0, rule, rng) == Level.RESET for _ in range(n))
    assert abs(hits / n - 0.25) <= 3 * oracles.binomial_se(0.25, n)
    off = LearnRuleParams(1.0, 20.0, depression_enabled=False)
    assert stdp_decide(None, 10.0, off, rng) == Level.NONE


@given(st.floats(-100, 100), st.floats(0.5, 10), st.floats(10.5, 80))
def test_stdp_levels_partition(delta, tt, win):
    rule = LearnRuleParams(tt, win)
    pre = 50.0 - delta
    lv = stdp_levels(np.array([pre]), 50.0, rule)[0]
    delta = 50.0 - pre  # the difference actually representable in floats
    if 0 <= delta <= tt:
        assert lv == Level.STRONG
    elif tt < delta <= win:
        assert lv == Level.WEAK
    else:
        assert lv == Level.NONE


def test_rule_params_validation():
    with pytest.raises(ValueError):
        LearnRuleParams(timing_threshold=20.0, stdp_window=10.0)
    with pytest.raises(ValueError):
        LearnRuleParams(depression_prob=1.5)


# -- kernel equivalence -------------------------------------------------------------

def reference_present(net: Network, image, rng):
    """Step-by-step simulation with lif_step and wta_inhibit, learning off."""
    enc, prm, st_ = net.encoding, net.neuron, net.state
    raster = encode_poisson(image, enc.duration, enc.dt, enc.max_rate, rng)
    st_.begin_pattern(prm)
    w = np.asarray(net.weights.weights, dtype=np.float64) * prm.input_gain
    counts = np.zeros(prm.n_neurons, np.int64)
    inh = np.zeros(prm.n_neurons)
    for k in range(raster.shape[0]):
        drive = w[raster[k]].sum(axis=0) + inh
        fired = lif_step(st_, drive, enc.dt, prm, adapt=False)
        counts += fired
        inh = wta_inhibit(fired, prm.inhibition_strength)
    return counts


def test_compiled_kernel_matches_reference_loop():
    prm = NeuronParams(n_neurons=12, input_gain=0.03, inhibition_strength=0.3)
    img = digit_like(1)[0]
    fast = Network(crossbar(12, seed=2), prm)
    slow = Network(crossbar(12, seed=2), prm)
    for s in range(5):
        a = fast.present(img, np.random.default_rng(s), learn=False).spike_counts
        b = reference_present(slow, img, np.random.default_rng(s))
        assert a.tolist() == b.tolist()
        assert np.allclose(fast.state.membrane, slow.state.membrane)
    assert a.sum() > 0


# -- training / evaluation -------------------------------------------------------------

def small_net(n=10, seed=0, rule=RULE, **kw):
    return Network(crossbar(n, seed), NeuronParams(n_neurons=n, input_gain=0.03, **kw), rule)


def dataset(n=20, seed=0):
    imgs = digit_like(seed, n)
    return Dataset(imgs, (np.arange(n) % 10).astype(np.uint8), "synthetic")


def test_zero_duration_patterns_leave_weights():
    net = Network(crossbar(5), NeuronParams(n_neurons=5), RULE, EncodingParams(duration=0.0))
    before = net.weights.state.copy()
    net.train(dataset(5), np.random.default_rng(0))
    assert np.array_equal(net.weights.state, before)


def test_train_rejects_empty():
    ds = Dataset(np.zeros((0, 28, 28), np.uint8), np.zeros(0, np.uint8))
    with pytest.raises(ValueError):
        small_net().train(ds, np.random.default_rng(0))


def test_repeated_pattern_winner_s2_nondecreasing():
    rule = LearnRuleParams(1.0, 20.0, depression_enabled=False)
    net = small_net(rule=rule)
    img = digit_like(3)[0]
    rng = np.random.default_rng(0)
    prev = net.weights.count(State.S2, axis=0)
    winners = set()
    for _ in range(15):
        res = net.present(img, rng, learn=True)
        now = net.weights.count(State.S2, axis=0)
        assert np.all(now >= prev)
        if res.spike_counts.any():
            winners.add(int(np.argmax(res.spike_counts)))
        prev = now
    assert winners


def test_train_writes_jsonl(tmp_path):
    import io
    import json
    buf = io.StringIO()
    small_net().train(dataset(4), np.random.default_rng(0), log_file=buf)
    lines = [json.loads(x) for x in buf.getvalue().splitlines()]
    assert [d["pattern"] for d in lines] == [0, 1, 2, 3]
    assert set(lines[0]["pulses"]) == {"strong", "weak", "reset"}
    assert len(lines[0]["spike_counts"]) == 10


def test_checkpoint_callback_interval():
    seen = []
    small_net().train(dataset(7), np.random.default_rng(0), checkpoint_every=3, checkpoint=seen.append)
    assert seen == [3, 6]


def test_evaluate_is_read_only_and_repeatable():
    net = small_net()
    ds = dataset(20)
    net.train(ds, np.random.default_rng(0))
    net.assign_labels(ds, np.random.default_rng(1))
    before = net.weights.to_dict()
    theta = net.state.theta.copy()
    a = net.evaluate(ds, np.random.default_rng(5))
    b = net.evaluate(ds, np.random.default_rng(5))
    assert net.weights.to_dict() == before
    assert np.array_equal(net.state.theta, theta)
    assert a.accuracy == b.accuracy and np.array_equal(a.confusion, b.confusion)


def test_evaluate_needs_labels():
    with pytest.raises(RuntimeError):
        small_net().evaluate(dataset(3), np.random.default_rng(0))


def test_dead_network_predicts_class_zero():
    net = Network(crossbar(5, fill=Level.NONE), NeuronParams(n_neurons=5), RULE)
    ds = dataset(20)
    labels = net.assign_labels(ds, np.random.default_rng(0))
    assert np.all(labels == -1)
    ev = net.evaluate(ds, np.random.default_rng(0))
    assert ev.degenerate_patterns == 20 and ev.degenerate
    assert np.all(ev.predictions == 0)
    assert ev.accuracy == pytest.approx(np.mean(ds.labels == 0))


def test_labels_ties_go_to_lower_class_and_silent_is_unassigned():
    counts = np.array([[2, 0, 0], [2, 0, 0]])
    classes = np.array([3, 1])
    labels = labels_from_counts(counts, classes)
    assert labels.tolist() == [1, -1, -1]


def test_predict_and_score():
    labels = np.array([0, 1, 1, 2])
    counts = np.array([[5, 1, 1, 0], [0, 4, 2, 0], [0, 0, 0, 0]])
    pred, silent = predict(counts, labels)
    assert pred.tolist() == [0, 1, 0] and silent.tolist() == [False, False, True]
    ev = score(counts, np.array([0, 1, 2]), labels)
    assert ev.accuracy == pytest.approx(2 / 3)
    assert ev.confusion[2, 0] == 1 and ev.degenerate_patterns == 1


def test_network_rejects_mismatched_crossbar():
    with pytest.raises(ValueError):
        Network(CrossbarArray(784, 4, TRI, BIN), NeuronParams(n_neurons=5))
    with pytest.raises(ValueError):
        Network(CrossbarArray(100, 5, TRI, BIN), NeuronParams(n_neurons=5))
