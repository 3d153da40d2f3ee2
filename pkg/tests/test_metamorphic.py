import numpy as np
import pytest

from dltest import metamorphic as mt
from dltest import tensornet as tn
from dltest import transforms as T
from dltest.dataset import Dataset

from conftest import tiny_dataset

CFG = tn.TrainConfig(epochs=2, batch_size=8, architecture="small_cnn")


def constant_model(label):
    model = tn.build_model([("flatten",), ("dense", 4), ("softmax",)], (1, 8, 8), zero=True)
    model.layers[1].bias[label] = 2.0
    return model


def column_model():
    """Predicts 1 when column 0 holds any brightness, else 0."""
    model = tn.build_model([("flatten",), ("dense", 2), ("softmax",)], (1, 8, 8), zero=True)
    model.layers[1].bias[0] = 0.5
    model.layers[1].weights[1, np.arange(8) * 8] = 10.0
    return model


def test_regime_sides():
    assert [(r.augments_train, r.augments_test) for r in mt.REGIMES] == [
        (False, False), (True, False), (False, True), (True, True)]
    assert mt.Regime("TestAugOnly") is mt.Regime.TEST_AUG_ONLY


def test_augmenting_regime_needs_relation():
    ds = tiny_dataset(10)
    for regime in ("TrainAugOnly", "TestAugOnly", "TrainAndTestAug"):
        with pytest.raises(ValueError):
            mt.run_mt(CFG, ds, ds, [], regime, model=constant_model(0))
    res = mt.run_mt(CFG, ds, ds, [], "WithoutAug", model=constant_model(0))
    assert res.mr_config == "none"


def test_combine_keeps_list_order():
    a, b = T.rotation(30), T.shift(0.1)
    assert mt.combine([a]) is a
    assert mt.combine([a, b]).label() == "rotation30+shift0.1"
    assert mt.combine([b, a]).label() == "shift0.1+rotation30"


def test_augmented_test_set_fixed_per_seed():
    ds = tiny_dataset(20)
    spec = T.rotation(45)
    a, b = mt.augment_test_set(ds, spec, 0), mt.augment_test_set(ds, spec, 0)
    assert np.array_equal(a.images, b.images)
    assert not np.array_equal(a.images, mt.augment_test_set(ds, spec, 1).images)
    assert np.array_equal(a.labels, ds.labels)
    # each image gets its own draw
    seeds = mt.evaluation_draw_seeds(20, 0)
    np.testing.assert_array_equal(a.images[3], T.apply(spec, ds.images[3], seeds[3]))
    # small batches change nothing
    np.testing.assert_array_equal(mt.augment_test_set(ds, spec, 0, batch=3).images, a.images)


def test_identity_relation_changes_nothing():
    ds = tiny_dataset(15)
    assert np.array_equal(mt.augment_test_set(ds, T.IDENTITY, 4).images, ds.images)
    assert not mt.mr_violations(constant_model(1), ds.images, T.rotation(90)).any()
    model = tn.build_model([("flatten",), ("dense", 4), ("softmax",)], (1, 8, 8), seed=0)
    assert not mt.mr_violations(model, ds.images, T.IDENTITY).any()


def test_check_mr_hand_built_violation():
    img = np.zeros((1, 8, 8), np.float32)
    img[0, :, 7] = 1.0
    model = column_model()
    assert tn.predict(model, img[None])[0] == 0
    # the flip moves the bar into column 0
    check = mt.check_mr(model, img, T.hflip_spec())
    assert check.violation and (check.label_orig, check.label_transformed) == (0, 1)
    assert not mt.check_mr(model, img, T.IDENTITY).violation


def test_violation_rate_matches_mask():
    ds = tiny_dataset(30, seed=2)
    model = tn.build_model([("flatten",), ("dense", 4), ("softmax",)], (1, 8, 8), seed=5)
    mask = mt.mr_violations(model, ds.images, T.rotation(90), seed=1)
    assert mt.mr_violation_rate(model, ds, T.rotation(90), seed=1) == pytest.approx(100 * mask.mean())
    assert mt.mr_violation_rate(model, Dataset(ds.images[:0], ds.labels[:0]), T.rotation(90)) == 0.0


def test_run_mt_with_injected_model():
    ds = tiny_dataset(30, seed=3)
    model = tn.train_new(CFG, ds)[0]
    spec = T.rotation(60)
    clean = mt.run_mt(CFG, ds, ds, [], "WithoutAug", model=model)
    assert clean.accuracy == tn.evaluate(model, ds).accuracy
    only_test = mt.run_mt(CFG, ds, ds, [spec], "TestAugOnly", model=model)
    assert only_test.accuracy == tn.evaluate(model, mt.augment_test_set(ds, spec, CFG.seed)).accuracy
    assert only_test.mr_config == "rotation60"
    assert only_test.accuracy + only_test.error == pytest.approx(100)


def test_campaign_layout_and_determinism():
    ds = tiny_dataset(40, seed=4)
    configs = [T.rotation(30), T.shift(0.25)]
    a = mt.run_campaign(CFG, ds, ds, configs)
    assert len(a) == 1 + 3 * len(configs)
    assert [(r.regime.value, r.mr_config) for r in a[:4]] == [
        ("WithoutAug", "none"), ("TrainAugOnly", "rotation30"),
        ("TestAugOnly", "rotation30"), ("TrainAndTestAug", "rotation30")]
    assert mt.to_csv(a) == mt.to_csv(mt.run_campaign(CFG, ds, ds, configs))
    # a regime subset gives the same numbers for the cells it keeps
    sub = mt.run_campaign(CFG, ds, ds, configs, regimes=["TestAugOnly"])
    assert [r.accuracy for r in sub] == [r.accuracy for r in a if r.regime is mt.Regime.TEST_AUG_ONLY]


def test_csv_format():
    rows = [mt.MtResult(mt.Regime.TEST_AUG_ONLY, "rotation30", 96.234, 3.766, 2)]
    assert mt.to_csv(rows).splitlines() == ["regime,mr_config,accuracy,error,seed",
                                            "TestAugOnly,rotation30,96.23,3.77,2"]
