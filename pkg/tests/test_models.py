import numpy as np
import pytest
from numpy.testing import assert_array_equal

from conftest import toy_dataset
from zoneids.data import Dataset
from zoneids.errors import SingleClassError
from zoneids.models import (
    TrainConfig,
    binary_f1,
    build_autoencoder,
    build_universal,
    load_autoencoder,
    load_universal,
    save_autoencoder,
    save_universal,
    train_autoencoder,
    train_universal,
)


def widths(model, prefix, count):
    return [model.net.params[f"{prefix}{i}.bias"].shape[0] for i in range(1, count + 1)]


@pytest.mark.parametrize("scale,conv,dense", [
    (1.0, [64, 32, 16], [256, 64, 16]),
    (0.125, [8, 4, 2], [32, 8, 2]),
])
def test_universal_layer_widths(scale, conv, dense):
    u = build_universal(20, scale=scale)
    assert widths(u, "conv", 3) == conv
    assert widths(u, "dense", 3) == dense
    assert u.net.params["out.bias"].shape == (1,)
    assert u.net.params["conv1.weight"].shape[-1] == 3


def test_universal_zero_output_weights_give_half():
    u = build_universal(10, scale=0.25, seed=3)
    u.net.params["out.weight"][:] = 0.0
    p = u.predict_proba(np.random.default_rng(0).random((7, 10)))
    assert_array_equal(p, 0.5)


def test_autoencoder_bottleneck_and_shapes():
    ae = build_autoencoder(32)
    z = ae.net.run(np.zeros((2, 1, 32)), stop="bottleneck_drop")
    assert z.shape[-1] == 8
    for w in (32, 64):
        model = build_autoencoder(w, scale=0.25)
        assert model.reconstruct(np.zeros((3, w))).shape == (3, w)


def test_autoencoder_pads_odd_width_and_ignores_padding():
    ae = build_autoencoder(30, scale=0.25, seed=1)
    assert ae.padded_width == 32
    x = np.random.default_rng(0).random((4, 30))
    full = ae.net.run(np.pad(x, ((0, 0), (0, 2)))[:, None, :])[:, 0, :]
    expected = np.mean((full[:, :30] - x) ** 2, axis=1)
    np.testing.assert_allclose(ae.errors(x), expected, rtol=0, atol=1e-15)


def test_universal_learns_separable_data():
    train = toy_dataset(400, 8, seed=0, shift=3.0)
    val = toy_dataset(200, 8, seed=1, shift=3.0)
    u = build_universal(8, scale=0.25, seed=0)
    _, tlog = train_universal(u, train, val, TrainConfig(10, 32, 0.2, seed=0))
    f1 = binary_f1(val.labels, u.predict_proba(val.features) >= 0.5)
    acc = np.mean((u.predict_proba(val.features) >= 0.5) == val.labels)
    assert acc >= 0.95 and f1 >= 0.95
    assert tlog.records[tlog.best_epoch - 1].val_f1 == max(r.val_f1 for r in tlog.records)


def test_zero_epochs_leave_weights_unchanged():
    u = build_universal(8, scale=0.125, seed=0)
    before = u.net.params.copy()
    _, tlog = train_universal(u, toy_dataset(), toy_dataset(seed=1), TrainConfig(0, 16, 0.1))
    assert u.net.params.bit_equal(before)
    assert tlog.records == []


def test_checkpoint_restores_best_epoch_not_last():
    train = toy_dataset(200, 8, seed=2, shift=1.0)
    val = toy_dataset(200, 8, seed=3, shift=1.0)
    u = build_universal(8, scale=0.125, seed=4)
    _, tlog = train_universal(u, train, val, TrainConfig(8, 16, 0.3, seed=1))
    final_f1 = binary_f1(val.labels, u.predict_proba(val.features) >= 0.5)
    assert final_f1 == pytest.approx(max(r.val_f1 for r in tlog.records), abs=1e-12)
    assert final_f1 >= tlog.records[-1].val_f1


def test_universal_single_class_rejected():
    only = Dataset(np.zeros((10, 8)), ["benign"] * 10, [f"f{j}" for j in range(8)])
    with pytest.raises(SingleClassError):
        train_universal(build_universal(8, 0.125), only, only, TrainConfig(1))


def test_autoencoder_learns_constant_input():
    data = Dataset(np.full((64, 12), 0.4), ["benign"] * 64, [f"f{j}" for j in range(12)])
    ae = build_autoencoder(12, scale=0.25, seed=0)
    train_autoencoder(ae, data, TrainConfig(60, 16, 0.2, seed=0))
    assert ae.errors(data.features).mean() < 1e-3


def test_autoencoder_separates_shifted_rows():
    for seed in range(5):
        rng = np.random.default_rng(seed)
        normal = Dataset(np.clip(rng.normal(0.3, 0.05, (300, 16)), 0, 1), ["benign"] * 300,
                         [f"f{j}" for j in range(16)])
        ae = build_autoencoder(16, scale=0.25, seed=seed)
        train_autoencoder(ae, normal, TrainConfig(15, 32, 0.2, seed=seed))
        fresh = np.clip(rng.normal(0.3, 0.05, (100, 16)), 0, 1)
        shifted = np.clip(rng.normal(0.8, 0.05, (100, 16)), 0, 1)
        assert ae.errors(fresh).mean() < ae.errors(shifted).mean()


def test_autoencoder_rejects_attack_rows():
    with pytest.raises(ValueError):
        train_autoencoder(build_autoencoder(8, 0.25), toy_dataset(), TrainConfig(1))


def test_save_load_round_trip(tmp_path):
    u = build_universal(8, scale=0.125, seed=5)
    ae = build_autoencoder(10, scale=0.25, seed=5)
    save_universal(u, tmp_path / "u")
    save_autoencoder(ae, tmp_path / "a")
    x = np.random.default_rng(0).random((5, 8))
    assert_array_equal(load_universal(tmp_path / "u").predict_proba(x), u.predict_proba(x))
    xa = np.random.default_rng(1).random((5, 10))
    assert_array_equal(load_autoencoder(tmp_path / "a").errors(xa), ae.errors(xa))


def test_training_is_deterministic():
    def run():
        u = build_universal(8, scale=0.125, seed=2)
        train_universal(u, toy_dataset(), toy_dataset(seed=1), TrainConfig(3, 32, 0.1, seed=7))
        return u.net.params

    assert run().bit_equal(run())


def test_train_config_validation():
    for kw in ({"epochs": -1}, {"batch_size": 0}, {"learning_rate": 0.0},
               {"checkpoint_metric": "acc"}):
        with pytest.raises(ValueError):
            TrainConfig(**kw)
