import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import constant_net, synth_dataset, synth_net
from oracles import grad_relative_error, numeric_grads
from sdnverify import sdn
from sdnverify.linrules import Box
from sdnverify.sdn import (
    ABSENT,
    DoorAssignment,
    SDNetwork,
    TrainConfig,
    TrainingDivergence,
    accuracy,
    assign_doors,
    door_penalty,
    forward,
    forward_batch,
    init_params,
    loss,
    loss_and_grads,
    parse_arch,
    sat_rate,
    sda_forward,
    softmax,
)

# group size 2: G0 mixed, G1 all+, G2 mixed, G3 all-, G4 all+
FIG3_LAYOUT = [0.4, -0.1, 0.2, 0.9, -0.3, 0.5, -0.6, -0.2, 0.7, 0.1]


@pytest.mark.parametrize("z, size, expected", [
    (FIG3_LAYOUT, 2, DoorAssignment(1, 3)),
    ([0.5, -0.5, -0.1, 0.2, 0.3, -0.4], 2, DoorAssignment(None, None)),
    ([0.1, 0.2, 0.3, 0.4, -0.5, -0.6], 2, DoorAssignment(0, 2)),
    ([0.0, 0.0, 1.0, 1.0, -1.0, -1.0], 2, DoorAssignment(1, 2)),
    ([0.0, 0.0, 0.0], 1, DoorAssignment(None, None)),
])
def test_assign_doors_examples(z, size, expected):
    assert assign_doors(z, size) == expected


def test_assign_doors_rejects_bad_width():
    with pytest.raises(ValueError):
        assign_doors([1.0, 2.0, 3.0], 2)


@settings(max_examples=200)
@given(z=arrays(np.float64, 12, elements=st.sampled_from([-1.0, -0.5, 0.0, 0.5, 1.0])),
       size=st.sampled_from([1, 2, 3, 4, 6]))
def test_door_minimality(z, size):
    doors = assign_doors(z, size)
    groups = z.reshape(-1, size)
    pos = [bool(np.all(g > 0)) for g in groups]
    neg = [bool(np.all(g < 0)) for g in groups]
    if doors.active is None:
        assert not any(pos)
    else:
        assert pos[doors.active] and not any(pos[:doors.active])
    if doors.inactive is None:
        assert not any(neg)
    else:
        assert neg[doors.inactive] and not any(neg[:doors.inactive])
    assert doors.active is None or doors.active != doors.inactive


def test_sda_forward_examples():
    # groups of one neuron: active door 0 (1.5), inactive door 1 (-0.7), trivial 0.3
    z = np.array([1.5, -0.7, 0.3, -0.2])
    doors = assign_doors(z, 1)
    assert doors == DoorAssignment(0, 1)
    out = sda_forward(z, doors, 2.0, 1)
    np.testing.assert_allclose(out, [3.0, 0.0, 0.3, -0.2])


def test_sda_forward_trivial_group_is_copied():
    z = np.array([0.3, -0.1, 0.2, 0.4])
    out = sda_forward(z, assign_doors(z, 2), 2.0, 2)
    np.testing.assert_allclose(out, [0.3, -0.1, 0.4, 0.8])


def test_zero_weight_net_is_uniform_and_doorless():
    params = [(np.zeros((3, 4)), np.zeros(4)), (np.zeros((4, 5)), np.zeros(5))]
    net = SDNetwork.from_params(params, [2], [2])
    probs, pattern = forward(net, [0.1, 0.2, 0.3])
    np.testing.assert_allclose(probs, np.full(5, 0.2))
    assert pattern.layers == ((None, None),)
    assert sat_rate(net, np.random.default_rng(0).uniform(size=(50, 3))) == 0.0


def test_sat_rate_all_doors_present():
    net = constant_net()
    assert sat_rate(net, np.random.default_rng(0).uniform(size=(40, 2))) == 1.0


def test_argmax_logits_matches_argmax_softmax(rng):
    net = synth_net(0)
    X = rng.uniform(size=(500, 2))
    tr = forward_batch(net, X)
    assert np.array_equal(tr.logits.argmax(1), softmax(tr.logits).argmax(1))


def test_accuracy_of_constant_net_on_balanced_labels():
    w2 = np.zeros((4, 10))
    net = SDNetwork.from_params([(np.zeros((2, 4)), np.ones(4)), (w2, np.zeros(10))], [2], [2])
    y = np.repeat(np.arange(10), 20)
    assert accuracy(net, np.zeros((200, 2)), y) == pytest.approx(0.1)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_input_raises_divergence():
    net = constant_net()
    with pytest.raises(TrainingDivergence):
        forward_batch(net, np.array([[np.inf, 0.0]]))


def test_penalty_for_missing_active_door():
    # G0 = (-0.2, 0.3) is the group with the most positive neurons; G1 gives the inactive door
    z = np.array([[-0.2, 0.3, -1.0, -1.0]])
    act, inact = sdn.door_indices(z, 2)
    assert act[0] == ABSENT and inact[0] == 1
    pen, grad = door_penalty(z, 2, act, inact)
    assert pen[0] == pytest.approx(0.2)
    np.testing.assert_array_equal(grad, [[-1.0, 0.0, 0.0, 0.0]])


def test_penalty_single_mixed_group_counts_both_sides():
    z = np.array([[-0.2, 0.3]])
    act, inact = sdn.door_indices(z, 2)
    pen, _ = door_penalty(z, 2, act, inact)
    assert pen[0] == pytest.approx(0.2 + 0.3)


def test_penalty_enters_loss_with_lambda():
    params = [(np.zeros((2, 4)), np.array([-0.2, 0.3, -1.0, -1.0])),
              (np.zeros((4, 2)), np.zeros(2))]
    X = np.zeros((3, 2))
    y = np.array([0, 1, 0])
    with_pen, _, _ = loss_and_grads(params, [2], [2], 2.0, X, y, lam=1.0)
    without, _, _ = loss_and_grads(params, [2], [2], 2.0, X, y, lam=0.0)
    assert with_pen - without == pytest.approx(0.2)
    assert without == pytest.approx(np.log(2))


def test_penalty_zero_when_both_doors_present(rng):
    net = constant_net()
    X = rng.uniform(size=(20, 2))
    y = rng.integers(0, 3, 20)
    assert loss(net, X, y, TrainConfig(lam=5.0)) == pytest.approx(
        loss(net, X, y, TrainConfig(lam=0.0)))


@pytest.mark.parametrize("kind", ["cross_entropy", "squared_error"])
def test_lambda_zero_is_data_loss(kind, rng):
    params = init_params([3, 6, 4], rng, np.float64)
    X = rng.normal(size=(16, 3))
    y = rng.integers(0, 4, 16)
    value, _, tr = loss_and_grads(params, [2], [3], 2.0, X, y, lam=0.0, loss_kind=kind)
    p = softmax(tr.logits)
    if kind == "cross_entropy":
        expected = -np.log(p[np.arange(16), y]).mean()
    else:
        expected = ((p - np.eye(4)[y]) ** 2).sum(axis=1).mean()
    assert value == pytest.approx(expected, rel=1e-12)


def _stable_case(rng, widths, sizes, counts, n=6, margin=1e-3, tries=200):
    for _ in range(tries):
        params = init_params(widths, rng, np.float64)
        X = rng.normal(size=(n, widths[0]))
        tr = sdn.forward_params(params, sizes, counts, 2.0, X)
        if all(np.abs(z).min() > margin for z in tr.preacts):
            return params, X
    raise RuntimeError("no stable point found")


@pytest.mark.parametrize("kind", ["cross_entropy", "squared_error"])
def test_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(7)
    sizes, counts = [2, 3], [3, 2]
    for _ in range(5):
        params, X = _stable_case(rng, [3, 6, 6, 4], sizes, counts)
        y = rng.integers(0, 4, X.shape[0])
        _, grads, _ = loss_and_grads(params, sizes, counts, 2.0, X, y, 0.5, kind)
        num = numeric_grads(params, sizes, counts, X, y, 0.5, kind)
        assert grad_relative_error(grads, num) < 1e-4


def test_forward_is_affine_within_a_pattern(rng):
    net = synth_net(0)
    X = rng.uniform(size=(4000, 2))
    tr = forward_batch(net, X)
    keys = [tuple(d.ravel()) for d in tr.doors]
    by_key = {}
    for i, k in enumerate(keys):
        by_key.setdefault(k, []).append(i)
    checked = 0
    for members in by_key.values():
        if len(members) < 2:
            continue
        a, b = X[members[0]], X[members[-1]]
        for t in (0.25, 0.5, 0.75):
            mid = t * a + (1 - t) * b
            tm = forward_batch(net, mid[None])
            if tuple(tm.doors[0].ravel()) != keys[members[0]]:
                continue  # the pattern's cell need not be convex
            expected = t * tr.logits[members[0]] + (1 - t) * tr.logits[members[-1]]
            np.testing.assert_allclose(tm.logits[0], expected, rtol=1e-9, atol=1e-9)
            checked += 1
    assert checked > 10


def test_model_json_roundtrip(tmp_path):
    net = synth_net(0)
    path = tmp_path / "m.json"
    net.save(path)
    back = SDNetwork.load(path)
    for a, b in zip(net.layers, back.layers):
        np.testing.assert_array_equal(a.weights, b.weights)
        np.testing.assert_array_equal(a.biases, b.biases)
    assert back.group_sizes == net.group_sizes and back.group_counts == net.group_counts
    assert back.input_bounds == net.input_bounds
    obj = json.loads(path.read_text())
    assert {"alpha", "group_size", "group_count", "layers", "classes", "input_bounds"} <= set(obj)


def test_hidden_width_must_match_groups():
    params = [(np.zeros((2, 4)), np.zeros(4)), (np.zeros((4, 2)), np.zeros(2))]
    with pytest.raises(ValueError):
        SDNetwork.from_params(params, [3], [2])


def test_alpha_must_exceed_one():
    params = [(np.zeros((2, 4)), np.zeros(4)), (np.zeros((4, 2)), np.zeros(2))]
    with pytest.raises(ValueError):
        SDNetwork.from_params(params, [2], [2], alpha=1.0)


@pytest.mark.parametrize("text, counts, sizes", [
    ("16x4,12x2", [16, 12], [4, 2]),
    ("20x1,20x1", [20, 20], [1, 1]),
    ("", [], []),
])
def test_parse_arch(text, counts, sizes):
    assert parse_arch(text) == (counts, sizes)


@pytest.mark.parametrize("bad", ["16", "16x", "0x2", "ax2"])
def test_parse_arch_rejects(bad):
    with pytest.raises(ValueError):
        parse_arch(bad)


@pytest.mark.parametrize("field, value", [("lam", -1.0), ("epochs", -1), ("batch_size", 0),
                                          ("loss_kind", "hinge")])
def test_train_config_validation(field, value):
    with pytest.raises(ValueError):
        TrainConfig(**{field: value})


def test_training_is_deterministic():
    ds = synth_dataset()
    cfg = TrainConfig(epochs=3, batch_size=64, learning_rate=3e-3, seed=5)
    a, ha = sdn.train(cfg, ds.inputs, ds.labels, [4], [2], input_bounds=ds.input_bounds)
    b, hb = sdn.train(cfg, ds.inputs, ds.labels, [4], [2], input_bounds=ds.input_bounds)
    assert json.dumps(a.to_json()) == json.dumps(b.to_json())
    assert [r.loss for r in ha] == [r.loss for r in hb]


def test_xor_data_is_learned():
    rng = np.random.default_rng(0)
    X = rng.uniform(-1, 1, size=(2000, 2))
    y = (X[:, 0] * X[:, 1] > 0).astype(int)
    cfg = TrainConfig(epochs=60, batch_size=64, learning_rate=3e-3, seed=0)
    net, _ = sdn.train(cfg, X, y, [8, 8], [2, 2], input_bounds=Box.cube(2, -1, 1))
    assert accuracy(net, X, y) >= 0.95


def test_trained_net_fits_its_training_points():
    ds = synth_dataset()
    net = synth_net(0, "8x2,8x2", 300)
    acc = accuracy(net, ds.inputs, ds.labels)
    assert acc >= 0.95
    # single-point forward agrees with the batched accuracy
    hits = [forward(net, x)[0].argmax() == y for x, y in zip(ds.inputs, ds.labels)]
    assert np.mean(hits) == pytest.approx(acc)


def test_large_penalty_drives_sat_rate_up():
    ds = synth_dataset()
    sats = []
    for lam in (0.0, 10.0):
        cfg = TrainConfig(epochs=40, batch_size=64, learning_rate=3e-3, lam=lam, seed=0)
        net, _ = sdn.train(cfg, ds.inputs, ds.labels, [6, 6], [2, 2],
                           input_bounds=ds.input_bounds)
        sats.append(sat_rate(net, ds.inputs))
    assert sats[1] >= 0.99
    assert sats[1] >= sats[0]


def test_training_log_csv(tmp_path):
    ds = synth_dataset()
    _, hist = sdn.train(TrainConfig(epochs=2, batch_size=256), ds.inputs, ds.labels, [2], [2])
    path = tmp_path / "log.csv"
    sdn.write_training_log(hist, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,loss,accuracy,sat_rate" and len(lines) == 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_training_divergence_reports_epoch():
    X = np.array([[1e39, 1e39]] * 4)  # overflows float32
    with pytest.raises(TrainingDivergence) as info:
        sdn.train(TrainConfig(epochs=1, batch_size=4), X, np.array([0, 1, 0, 1]),
                  [2], [2])
    assert info.value.epoch == 1
