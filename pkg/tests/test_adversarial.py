import numpy as np
import pytest

from dltest import adversarial as adv
from dltest import tensornet as tn
from dltest.dataset import Dataset

from conftest import tiny_dataset


def linear_binary(seed=0, d=(1, 3, 3)):
    """2-class linear model in float64 with random weights and bias."""
    model = tn.astype(tn.build_model([("flatten",), ("dense", 2)], d, seed=seed), np.float64)
    rng = np.random.default_rng(seed)
    model.layers[1].weights[:] = rng.normal(size=model.layers[1].weights.shape)
    model.layers[1].bias[:] = rng.normal(size=2)
    return model


def margin(model, x):
    z = tn.logits(model, x[None])[0]
    return z[1] - z[0]


def test_fgsm_epsilon_zero_is_identity():
    model = linear_binary()
    x = np.random.default_rng(0).random((4, 1, 3, 3)).astype(np.float32)
    pred = tn.predict(model, x)
    res = adv.fgsm(model, x, pred, 0.0)
    assert np.array_equal(res.x_adv, x)
    assert not res.success.any()
    assert np.all(res.linf == 0)


def test_fgsm_linear_margin_drop():
    # no clipping: the true-class margin falls by exactly eps * ||w1 - w0||_1
    model = linear_binary(2)
    w = model.layers[1].weights[1] - model.layers[1].weights[0]
    x = np.full((1, 3, 3), 0.5)
    y = 1 if margin(model, x) > 0 else 0
    eps = 0.05
    res = adv.fgsm(model, x, y, eps, clip=None)
    drop = (margin(model, x) - margin(model, res.x_adv[0])) * (1 if y == 1 else -1)
    assert drop == pytest.approx(eps * np.abs(w).sum(), rel=1e-5)


def test_fgsm_bounds_and_determinism():
    model = linear_binary(1)
    x = np.random.default_rng(1).random((20, 1, 3, 3)).astype(np.float32)
    y = np.random.default_rng(2).integers(0, 2, 20)
    a, b = adv.fgsm(model, x, y, 0.3), adv.fgsm(model, x, y, 0.3)
    assert np.array_equal(a.x_adv, b.x_adv)
    assert a.x_adv.min() >= 0 and a.x_adv.max() <= 1
    assert np.all(a.linf <= 0.3 + 1e-6)
    assert np.array_equal(a.success, a.adversarial_labels != a.original_labels)


def test_targeted_fgsm_moves_towards_target():
    model = linear_binary(3)
    x = np.full((1, 3, 3), 0.5)
    z0 = tn.logits(model, x[None])[0]
    res = adv.fgsm(model, x, 0, 0.1, target=1, clip=None)
    z1 = tn.logits(model, res.x_adv)[0]
    assert z1[1] - z1[0] > z0[1] - z0[0]


def test_ifgsm_single_step_equals_fgsm():
    model = linear_binary(4)
    x = np.random.default_rng(3).random((6, 1, 3, 3))
    y = np.zeros(6, int)
    a = adv.fgsm(model, x, y, 0.1)
    b = adv.ifgsm(model, x, y, 0.1, steps=1, step_size=0.1)
    np.testing.assert_array_equal(a.x_adv, b.x_adv)
    c = adv.ifgsm(model, x, y, 0.0, steps=3)
    assert np.array_equal(c.x_adv.astype(np.float32), x.astype(np.float32))


def test_ifgsm_projection():
    model = linear_binary(5)
    x = np.random.default_rng(4).random((10, 1, 3, 3))
    res = adv.ifgsm(model, x, np.zeros(10, int), 0.05, steps=7, step_size=0.03)
    assert np.all(res.linf <= 0.05 + 1e-6)
    assert res.x_adv.min() >= 0 and res.x_adv.max() <= 1


@pytest.mark.parametrize("seed", range(10))
def test_deepfool_linear_matches_point_to_hyperplane(seed):
    model = linear_binary(seed, d=(1, 1, 2))
    x = np.random.default_rng(seed + 50).normal(size=(1, 1, 2))
    w = model.layers[1].weights[1] - model.layers[1].weights[0]
    f = margin(model, x)
    analytic = -f / np.dot(w, w) * w
    res = adv.deepfool(model, x, max_iter=5, overshoot=0.02, clip=None)
    np.testing.assert_allclose(res.perturbation[0].ravel(), analytic, atol=1e-5)
    assert np.linalg.norm(res.perturbation[0]) == pytest.approx(abs(f) / np.linalg.norm(w), abs=1e-5)
    assert res.iterations[0] == 1
    assert res.success[0]


def test_deepfool_multiclass_crosses_boundary(small_cnn):
    x = np.random.default_rng(0).random((5, 1, 8, 8)).astype(np.float32)
    res = adv.deepfool(small_cnn, x, max_iter=50)
    assert res.success.all()
    assert np.all(res.iterations >= 1)
    assert res.x_adv.min() >= 0 and res.x_adv.max() <= 1
    assert np.array_equal(res.x_adv, adv.deepfool(small_cnn, x, max_iter=50).x_adv)


def test_attack_spec_validation():
    with pytest.raises(adv.AttackError):
        adv.AttackSpec("deepfool", max_iter=0)
    with pytest.raises(adv.AttackError):
        adv.AttackSpec("fgsm", epsilon=-0.1)
    with pytest.raises(adv.AttackError):
        adv.AttackSpec("jsma")
    with pytest.raises(adv.AttackError):
        adv.deepfool(linear_binary(), np.zeros((1, 3, 3)), max_iter=0)


def test_robustness_curve():
    ds = tiny_dataset(40, seed=2)
    model = tn.train_new(tn.TrainConfig(epochs=20, batch_size=8, architecture="small_cnn"), ds)[0]
    curve = adv.robustness_curve(model, ds, [0, 0.05, 0.1, 0.3])
    assert curve[0] == (0.0, tn.evaluate(model, ds).accuracy)
    accs = [a for _, a in curve]
    assert all(b <= a + 0.5 for a, b in zip(accs, accs[1:]))
    with pytest.raises(adv.AttackError):
        adv.robustness_curve(model, ds, [0.1, 0.2])


def test_constant_model_flat_curve():
    model = tn.build_model([("flatten",), ("dense", 4), ("softmax",)], (1, 8, 8), zero=True)
    model.layers[1].bias[:] = [0, 3, 0, 0]
    ds = tiny_dataset(20, seed=0)
    accs = {a for _, a in adv.robustness_curve(model, ds)}
    assert len(accs) == 1


def test_corpus_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.random((3, 1, 28, 28)).astype(np.float32)
    adv.write_corpus(tmp_path / "c.bin", [7, 8, 9], 0.2, [True, False, True], images)
    assert (tmp_path / "c.bin").stat().st_size == 3 * (4 + 4 + 1 + 784 * 4)
    ids, eps, ok, back = adv.read_corpus(tmp_path / "c.bin")
    assert list(ids) == [7, 8, 9] and np.all(eps == np.float32(0.2))
    assert list(ok) == [True, False, True]
    assert np.array_equal(back, images)
    (tmp_path / "bad.bin").write_bytes(b"\0" * 10)
    with pytest.raises(adv.AttackError):
        adv.read_corpus(tmp_path / "bad.bin")
