import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dltest import mutation as mu
from dltest import tensornet as tn
from dltest.dataset import Dataset

from conftest import tiny_dataset


def net(seed=0):
    # conv(4) -> pool -> flatten -> dense(6) -> dense(6) -> dense(3)
    spec = [("conv2d", 4, 3), ("relu",), ("maxpool2d", 2), ("flatten",),
            ("dense", 6), ("relu",), ("dense", 6), ("relu",), ("dense", 3), ("softmax",)]
    model = tn.build_model(spec, (1, 8, 8), seed=seed)
    rng = np.random.default_rng(seed + 100)
    for i in model.param_layers():
        model.layers[i].bias[:] = rng.normal(0, 0.1, model.layers[i].bias.shape)
    return model


def weights(model):
    return [(l.weights.copy(), l.bias.copy()) for l in model.layers if l.has_params]


def test_eligible_neurons_exclude_output():
    model = net()
    assert len(mu.eligible_neurons(model)) == 4 + 6 + 6
    base = tn.build_architecture("baseline")
    assert len(mu.eligible_neurons(base)) == 32 + 64 + 128 + 128


def test_outgoing_slice_of_conv_channel_into_dense():
    # zeroing channel j's outgoing columns must equal zeroing the channel's activation
    model = net(3)
    x = np.random.default_rng(0).random((5, 1, 8, 8)).astype(np.float32)
    k, idx = mu.outgoing_slice(model, 0, 2)
    blocked = model.copy()
    blocked.layers[k].weights[idx] = 0
    silenced = model.copy()
    silenced.layers[0].weights[2] = 0
    silenced.layers[0].bias[2] = -1e3
    np.testing.assert_allclose(tn.forward(blocked, x)[0], tn.forward(silenced, x)[0], atol=1e-6)
    assert blocked.layers[k].weights[:, 2::4].size == 6 * 9
    assert np.count_nonzero(blocked.layers[k].weights == 0) >= 54


@pytest.mark.parametrize("kind", mu.NEURON_KINDS)
def test_ratio_zero_is_identity(kind):
    model = net()
    m = mu.mutate(model, mu.MutationOperator(kind, 0.0, 5))
    assert m.weights_changed == 0 and m.layers_touched == ()
    for (a, b), (c, d) in zip(weights(model), weights(m.model)):
        assert np.array_equal(a, c) and np.array_equal(b, d)


@pytest.mark.parametrize("kind", list(mu.Kind))
def test_original_never_aliased(kind):
    model = net()
    before = weights(model)
    n_layers = len(model.layers)
    op = mu.MutationOperator(kind, 0.5 if kind.neuron_level else None, 1)
    m = mu.mutate(model, op)
    for layer in m.model.layers:
        if layer.has_params:
            layer.weights += 1.0
    assert len(model.layers) == n_layers
    for (a, b), (c, d) in zip(before, weights(model)):
        assert np.array_equal(a, c) and np.array_equal(b, d)


def test_neb_on_ten_unit_dense_layer():
    model = tn.build_model([("flatten",), ("dense", 10), ("relu",), ("dense", 4), ("softmax",)], (1, 3, 3), seed=0)
    m = mu.mutate(model, mu.MutationOperator("NEB", 0.5, 2))
    out = m.model.layers[3].weights
    zero_cols = [j for j in range(10) if np.all(out[:, j] == 0)]
    assert len(zero_cols) == 5
    assert m.weights_changed == 5 * 4
    assert np.array_equal(m.model.layers[1].weights, model.layers[1].weights)


def changed_rows(a, b):
    return {j for j in range(a.shape[0]) if not np.array_equal(a[j], b[j])}


@pytest.mark.parametrize("kind", ["GF", "WS", "NAI"])
def test_incoming_operators_touch_only_selected_rows(kind):
    model = net(1)
    ratio = 0.25
    m = mu.mutate(model, mu.MutationOperator(kind, ratio, 4))
    total_rows = 0
    for i in model.param_layers()[:-1]:
        total_rows += len(changed_rows(model.layers[i].weights, m.model.layers[i].weights))
    assert total_rows == int(np.ceil(ratio * 16))
    # output layer and biases (except NAI) untouched
    assert np.array_equal(model.layers[8].weights, m.model.layers[8].weights)
    if kind != "NAI":
        for i in model.param_layers():
            assert np.array_equal(model.layers[i].bias, m.model.layers[i].bias)


@pytest.mark.parametrize("kind", ["WS", "NS"])
def test_multiset_preserved(kind):
    model = net(2)
    m = mu.mutate(model, mu.MutationOperator(kind, 0.5, 0))
    for a, b in zip(weights(model), weights(m.model)):
        assert np.array_equal(np.sort(a[0].ravel()), np.sort(b[0].ravel()))
    assert m.weights_changed > 0


def test_nai_preserves_absolute_values():
    model = net(2)
    m = mu.mutate(model, mu.MutationOperator("NAI", 0.5, 0))
    for a, b in zip(weights(model), weights(m.model)):
        assert np.array_equal(np.sort(np.abs(a[0].ravel())), np.sort(np.abs(b[0].ravel())))


def test_nai_negates_preactivation():
    model = tn.build_model([("flatten",), ("dense", 4), ("relu",), ("dense", 2)], (1, 2, 2), seed=0)
    model.layers[1].bias[:] = [0.1, -0.2, 0.3, 0.4]
    m = mu.mutate(model, mu.MutationOperator("NAI", 1.0, 0)).model
    x = np.random.default_rng(0).random((3, 1, 2, 2)).astype(np.float32)
    pre = lambda mod: tn._run(mod, x, stop=2)[0]
    np.testing.assert_allclose(pre(m), -pre(model), atol=1e-7)


def test_gf_noise_scale_follows_layer_std():
    model = tn.build_model([("flatten",), ("dense", 400), ("relu",), ("dense", 2)], (1, 10, 10), seed=0)
    m = mu.mutate(model, mu.MutationOperator("GF", 1.0, 0)).model
    noise = m.layers[1].weights - model.layers[1].weights
    assert noise.std() == pytest.approx(model.layers[1].weights.std(), rel=0.02)


def test_ns_swaps_outgoing_weights_of_pairs():
    model = tn.build_model([("flatten",), ("dense", 6), ("relu",), ("dense", 3)], (1, 2, 2), seed=0)
    m = mu.mutate(model, mu.MutationOperator("NS", 0.5, 1)).model
    assert np.array_equal(m.layers[1].weights, model.layers[1].weights)
    before, after = model.layers[3].weights, m.layers[3].weights
    moved = [j for j in range(6) if not np.array_equal(before[:, j], after[:, j])]
    assert len(moved) in (2, 4)
    for j in moved:
        assert any(np.array_equal(after[:, j], before[:, k]) for k in moved if k != j)


def test_layer_operators():
    model = net()
    ld = mu.mutate(model, mu.MutationOperator("LD", None, 0))
    assert ld.model.layers[6].kind == "identity"
    la = mu.mutate(model, mu.MutationOperator("LA", None, 0))
    assert len(la.model.layers) == len(model.layers) + 1
    assert np.array_equal(la.model.layers[7].weights, model.layers[6].weights)
    la.model.check_chain()
    afr = mu.mutate(model, mu.MutationOperator("AFR", None, 3))
    assert sum(l.kind == "identity" for l in afr.model.layers) == 1
    assert afr.model.layers[-1].kind == "softmax"
    x = np.zeros((2, 1, 8, 8), np.float32)
    for m in (ld, la, afr):
        assert tn.forward(m.model, x)[0].shape == (2, 3)


def test_layer_operator_without_eligible_layer():
    model = tn.build_architecture("linear", input_shape=(1, 4, 4))
    with pytest.raises(mu.MutationError):
        mu.mutate(model, mu.MutationOperator("LD"))
    with pytest.raises(mu.MutationError):
        mu.mutate(model, mu.MutationOperator("AFR"))


@pytest.mark.parametrize("bad", [("GF", None), ("GF", 1.5), ("WS", -0.1), ("LD", 0.1)])
def test_operator_validation(bad):
    with pytest.raises(mu.MutationError):
        mu.MutationOperator(*bad)


def test_mutation_deterministic():
    model = net()
    a = mu.mutate(model, mu.MutationOperator("GF", 0.3, 9)).model
    b = mu.mutate(model, mu.MutationOperator("GF", 0.3, 9)).model
    c = mu.mutate(model, mu.MutationOperator("GF", 0.3, 10)).model
    assert all(np.array_equal(x[0], y[0]) for x, y in zip(weights(a), weights(b)))
    assert not all(np.array_equal(x[0], y[0]) for x, y in zip(weights(a), weights(c)))


@settings(max_examples=25, deadline=None)
@given(ratio=st.floats(0, 1), seed=st.integers(0, 10**6), kind=st.sampled_from(["GF", "WS", "NAI"]))
def test_selection_count_property(ratio, seed, kind):
    model = net()
    m = mu.mutate(model, mu.MutationOperator(kind, ratio, seed))
    rows = sum(len(changed_rows(model.layers[i].weights, m.model.layers[i].weights))
               for i in model.param_layers()[:-1])
    # WS may draw the identity permutation; the others always change a selected row
    expected = int(np.ceil(ratio * 16 - 1e-9))
    assert rows <= expected
    if kind != "WS":
        assert rows == expected


def test_mutation_score_against_brute_force():
    ds = tiny_dataset(60, seed=1)
    model = tn.train_new(tn.TrainConfig(epochs=15, batch_size=8, seed=0, architecture="small_cnn"), ds)[0]
    mutants = [mu.mutate(model, mu.MutationOperator("GF", 0.1, s)) for s in range(8)]
    mutants.append(mu.mutate(model, mu.MutationOperator("GF", 0.0, 0)))
    score = mu.mutation_score(model, mutants, ds, threshold=0.0)
    base = tn.predict(model, ds.images)
    killed = sum(any(p != q for p, q in zip(tn.predict(m.model, ds.images), base)) for m in mutants)
    assert score.killed == killed and score.total == 9
    assert score.score == pytest.approx(killed / 9)
    assert score.details[-1]["killed"] is False


def test_mutation_score_edges():
    model = net()
    ds = tiny_dataset(10, seed=0)
    empty = Dataset(ds.images[:0], ds.labels[:0])
    s = mu.mutation_score(model, [mu.mutate(model, mu.MutationOperator("GF", 0.5, 0))], empty)
    assert s.killed == 0 and s.score == 0
    with pytest.raises(mu.MutationError):
        mu.mutation_score(model, [], ds)
    # a mutant far below the threshold is excluded, not counted
    dead = model.copy()
    for layer in dead.layers:
        if layer.has_params:
            layer.weights[:] = 0
            layer.bias[:] = 0
    dead.layers[8].bias[:] = [0, 0, 5]
    labels = np.zeros(10, np.int64)
    s = mu.mutation_score(model, [dead], Dataset(ds.images, labels), threshold=0.8)
    acc = np.mean(tn.predict(model, ds.images) == 0)
    if acc > 0:
        assert s.excluded == 1 and s.total == 0


def test_lcr_detect():
    model = net()
    x = np.random.default_rng(0).random((1, 8, 8)).astype(np.float32)
    lcr0, flag0 = mu.lcr_detect(model, x, 5, mu.MutationOperator("GF", 0.0, 0), tau=0.0)
    assert lcr0 == 0 and not flag0
    op = mu.MutationOperator("GF", 1.0, 3)
    lcr, flag = mu.lcr_detect(model, x, 10, op, tau=1.0)
    assert 0 <= lcr <= 1 and not flag
    assert mu.lcr_detect(model, x, 10, op, tau=1.0)[0] == lcr


def test_label_change_rates_brute_force():
    model = net(4)
    x = np.random.default_rng(1).random((20, 1, 8, 8)).astype(np.float32)
    mutants = mu.lcr_mutants(model, 6, mu.MutationOperator("GF", 0.5, 2))
    rates = mu.label_change_rates(model, mutants, x)
    for n in range(20):
        base = tn.predict(model, x[n:n + 1])[0]
        expect = np.mean([tn.predict(m, x[n:n + 1])[0] != base for m in mutants])
        assert rates[n] == expect
    assert mu.calibrate_tau([0.0] * 95 + [1.0] * 5) <= 1.0


def test_sweep_rows_and_csv():
    ds = tiny_dataset(20, seed=0)
    model = net()
    rows = mu.run_mut_sweep(model, ds, ["GF", "NEB"], [0.1, 0.5], seeds=(0, 1))
    assert len(rows) == 8
    assert all(r.accuracy + r.error == pytest.approx(100) for r in rows)
    text = mu.to_csv(rows)
    assert text.splitlines()[0] == "kind,ratio,seed,accuracy,error"
    with pytest.raises(mu.MutationError):
        mu.run_mut_sweep(model, ds, ["GF"], [0.5, 0.1])
    layer_rows = mu.run_layer_mutants(model, ds)
    assert [r.kind for r in layer_rows] == ["LD", "LA", "AFR"]
