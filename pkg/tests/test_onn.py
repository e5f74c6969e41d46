import gzip
import struct

import numpy as np
import pytest

from mzimesh.onn import (
    Activation,
    Dataset,
    IdxFormatError,
    OnnModel,
    PcaReducer,
    TrainingConfig,
    TrainingDivergedError,
    centroid_accuracy,
    evaluate_accuracy,
    forward,
    gaussian_dataset,
    loss_and_grad,
    mnist_reduced,
    numerical_grad,
    predict,
    read_idx,
    train,
    trial_accuracies,
    write_idx,
)
from mzimesh.propagation import MeshState, NoiseConfig, main_matrix, propagate_fields
from mzimesh.topology import build

KINDS = ("reck", "clements", "diamond", "bokun")


def grad_error(model, x, y):
    _, g = loss_and_grad(model, x, y)
    n = numerical_grad(model, x, y, h=1e-5)
    return np.max(np.abs(g - n)) / np.max(np.abs(n))


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("loss_fn", ["mean-square-error", "categorical-cross-entropy"])
def test_gradient_single_layer(kind, loss_fn, rng):
    m = OnnModel.create(kind, 4, 1, seed=3, loss_fn=loss_fn)
    data = gaussian_dataset(4, 3, seed=4)
    assert grad_error(m, data.encoded, data.one_hot) < 1e-5


@pytest.mark.parametrize("act", [Activation("identity"), Activation("modrelu", b=0.1),
                                 Activation("electro-optic")])
@pytest.mark.parametrize("kind", ["reck", "bokun"])
def test_gradient_two_layers(act, kind):
    m = OnnModel.create(kind, 4, 2, seed=5, activation=act)
    data = gaussian_dataset(4, 3, seed=6)
    assert grad_error(m, data.encoded, data.one_hot) < 1e-5


def test_power_conservation_and_routing(rng):
    for kind in KINDS:
        m = OnnModel.create(kind, 6, 2, seed=1, activation=Activation("identity"))
        x = rng.standard_normal((5, 6)) + 1j * rng.standard_normal((5, 6))
        x /= np.linalg.norm(x, axis=1, keepdims=True)
        s = m.layers[0]
        full = np.zeros((5, s.topology.n_ports), complex)
        full[:, s.topology.main_rows] = x
        # every port counts: Diamond and Bokun send some light to auxiliary outputs
        assert np.allclose(np.sum(np.abs(propagate_fields(s, full)) ** 2, axis=1), 1.0, atol=1e-10)
        if kind in ("reck", "clements"):
            assert np.allclose(forward(m, x).sum(axis=1), 1.0, atol=1e-10)
        else:
            assert np.all(forward(m, x).sum(axis=1) <= 1.0 + 1e-10)
    t = build("clements", 6)
    m = OnnModel([MeshState.zeros(t)])
    out = forward(m, np.eye(6)[2])
    assert np.isclose(out.max(), 1.0) and np.isclose(np.sort(out)[-2], 0.0)
    with pytest.raises(ValueError):
        forward(m, np.ones(5))


def test_output_scaling_keeps_predictions(rng):
    # a single linear layer: attenuating the input scales every output power equally
    m = OnnModel.create("clements", 6, 1, seed=2)
    x = rng.standard_normal((50, 6)).astype(complex)
    for a in (1.0, 0.5, 1e-3):
        assert np.array_equal(predict(m, a * x), predict(m, x))
        assert np.allclose(forward(m, a * x), a * a * forward(m, x))


def test_gaussian_dataset_examples():
    tr = gaussian_dataset(10, 100, separation=4, spread=1, seed=0)
    va = gaussian_dataset(10, 50, separation=4, spread=1, seed=1)
    assert centroid_accuracy(tr, va) == 1.0
    assert len(gaussian_dataset(10, 0)) == 0
    a, b = gaussian_dataset(5, 10, seed=9), gaussian_dataset(5, 10, seed=9)
    assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)
    # RMS radius of each cluster equals the spread
    big = gaussian_dataset(4, 20000, separation=0, spread=2.0, seed=3)
    assert np.sqrt(np.mean(np.sum(big.features**2, axis=1))) == pytest.approx(2.0, rel=0.01)
    with pytest.raises(ValueError):
        gaussian_dataset(1, 10)
    enc = tr.encoded
    assert np.allclose(np.sum(np.abs(enc) ** 2, axis=1), 1.0)


def test_zero_epochs_and_determinism():
    data = gaussian_dataset(4, 10, seed=1)
    m = OnnModel.create("bokun", 4, 1, seed=0)
    r0 = train(m, data, TrainingConfig(epochs=0))
    assert r0.model is m and r0.loss_curve == []
    a = train(m, data, TrainingConfig(epochs=3, seed=7))
    b = train(m, data, TrainingConfig(epochs=3, seed=7))
    assert np.array_equal(a.model.flat_params(), b.model.flat_params())
    assert a.loss_curve == b.loss_curve
    noise = NoiseConfig(0.05, 0.05, 3)
    assert evaluate_accuracy(a.model, data, noise, 0.2, 4) == evaluate_accuracy(a.model, data, noise, 0.2, 4)


def test_finite_difference_mode_matches_analytic_training():
    data = gaussian_dataset(4, 4, seed=2)
    m = OnnModel.create("reck", 4, 1, seed=0)
    a = train(m, data, TrainingConfig(epochs=1, batch_size=16, seed=1))
    b = train(m, data, TrainingConfig(epochs=1, batch_size=16, seed=1, gradient_mode="finite-difference"))
    assert np.max(np.abs(a.model.flat_params() - b.model.flat_params())) < 1e-6


def test_divergence_reported():
    data = gaussian_dataset(4, 4, seed=2)
    data.features[0, 0] = np.nan
    with pytest.raises(TrainingDivergedError, match="epoch 0"):
        train(OnnModel.create("reck", 4), data, TrainingConfig(epochs=1, batch_size=16))


def test_training_config_rejects_bad_values():
    for kw in ({"epochs": -1}, {"batch_size": 0}, {"learning_rate": 0}, {"gradient_mode": "x"}):
        with pytest.raises(ValueError):
            TrainingConfig(**kw)


@pytest.fixture(scope="module")
def trained_reck():
    tr = gaussian_dataset(10, 60, spread=3, seed=11)
    va = gaussian_dataset(10, 20, spread=3, seed=12)
    r = train(OnnModel.create("reck", 10, 1, seed=0), tr, TrainingConfig(epochs=15, seed=0))
    return r.model, va


def test_noise_free_trials_identical(trained_reck):
    m, va = trained_reck
    acc = trial_accuracies(m, va, NoiseConfig(), 0.0, 3)
    assert acc[0] == acc[1] == acc[2] >= 0.9


def test_huge_noise_matches_random_mesh_oracle(trained_reck):
    """With sigma = 10 rad the trained phases are erased: accuracy equals that of uniform-phase meshes.

    Uniform-phase meshes are not Haar random; they keep some memory of the
    input port, so on data whose class sits on its own input axis the floor
    is above 1/10.
    """
    m, va = trained_reck
    got = evaluate_accuracy(m, va, NoiseConfig(10, 10, 1), 0.0, 20)
    r = np.random.default_rng(99)
    t = m.layers[0].topology
    hits = [np.mean(np.argmax(np.abs(va.encoded @ main_matrix(MeshState.random(t, r)).T) ** 2, axis=1)
                    == va.labels) for _ in range(300)]
    assert abs(got - np.mean(hits)) < 0.03
    assert got < 0.35
    # without input-port information the same noise gives chance level
    flat = Dataset(np.ones((200, 10)), np.arange(200) % 10, 10)
    assert abs(evaluate_accuracy(m, flat, NoiseConfig(10, 10, 1), 0.0, 20) - 0.1) < 0.05


def test_reck_accuracy_falls_with_loss(trained_reck):
    m, va = trained_reck
    accs = [evaluate_accuracy(m, va, NoiseConfig(), loss) for loss in (0.0, 0.5, 1.0, 2.0, 4.0)]
    assert all(b <= a + 0.02 for a, b in zip(accs, accs[1:]))
    assert accs[-1] < accs[0]


def test_save_load_round_trip(tmp_path):
    m = OnnModel.create("diamond", 4, 2, seed=3, activation=Activation("electro-optic", alpha=0.2),
                        loss_fn="categorical-cross-entropy")
    m.save(tmp_path / "m.json")
    back = OnnModel.load(tmp_path / "m.json")
    assert np.array_equal(back.flat_params(), m.flat_params())
    assert back.activation == m.activation and back.loss_fn == m.loss_fn
    with pytest.raises(ValueError, match="malformed"):
        OnnModel.from_dict({"kind": "reck"})


def test_idx_round_trip_and_gzip(tmp_path, rng):
    arr = rng.integers(0, 256, (7, 28, 28), dtype=np.uint8)
    write_idx(tmp_path / "a.idx", arr)
    assert np.array_equal(read_idx(tmp_path / "a.idx", 0x803), arr)
    raw = (tmp_path / "a.idx").read_bytes()
    (tmp_path / "a.idx.gz").write_bytes(gzip.compress(raw))
    assert np.array_equal(read_idx(tmp_path / "a.idx.gz"), arr)


def test_idx_malformed_offsets(tmp_path):
    bad_magic = tmp_path / "m.idx"
    bad_magic.write_bytes(struct.pack(">HBB", 1, 8, 1) + struct.pack(">I", 3) + b"abc")
    with pytest.raises(IdxFormatError) as e:
        read_idx(bad_magic)
    assert e.value.offset == 0
    wrong = tmp_path / "w.idx"
    write_idx(wrong, np.zeros(3, np.uint8))
    with pytest.raises(IdxFormatError) as e:
        read_idx(wrong, 0x803)
    assert e.value.offset == 0
    short = tmp_path / "s.idx"
    short.write_bytes(struct.pack(">HBB", 0, 8, 3) + struct.pack(">I", 2))
    with pytest.raises(IdxFormatError) as e:
        read_idx(short)
    assert e.value.offset == 8
    payload = tmp_path / "p.idx"
    payload.write_bytes(struct.pack(">HBB", 0, 8, 1) + struct.pack(">I", 10) + b"abc")
    with pytest.raises(IdxFormatError) as e:
        read_idx(payload)
    assert e.value.offset == 8


def test_pca_matches_eigendecomposition(rng):
    base = rng.standard_normal((1000, 12)) @ rng.standard_normal((12, 60))
    x = base + 0.01 * rng.standard_normal((1000, 60))
    red = PcaReducer.fit(x, 10)
    xc = x - x.mean(axis=0)
    w = np.sort(np.linalg.eigvalsh(xc.T @ xc / 999))[::-1]
    assert np.max(np.abs(red.explained - w[:10]) / w[:10]) < 1e-8
    # reconstruction error equals the discarded variance
    rec = xc @ red.components.T @ red.components
    assert np.sum((xc - rec) ** 2) / 999 == pytest.approx(w[10:].sum(), rel=1e-8)
    out = red.transform(x)
    assert out.shape == (1000, 10) and out.min() >= 0 and out.max() <= 1


def test_mnist_reduced_on_synthetic_idx(tmp_path, rng):
    imgs = rng.integers(0, 256, (120, 28, 28), dtype=np.uint8)
    labels = np.arange(120, dtype=np.uint8) % 10
    write_idx(tmp_path / "i.idx", imgs)
    write_idx(tmp_path / "l.idx", labels)
    data, red = mnist_reduced(tmp_path / "i.idx", tmp_path / "l.idx", 10)
    assert data.features.shape == (120, 10) and data.n_classes == 10
    assert set(np.bincount(data.labels)) == {12}
    val, _ = mnist_reduced(tmp_path / "i.idx", tmp_path / "l.idx", 10, reducer=red)
    assert np.array_equal(val.features, data.features)
    with pytest.raises(IdxFormatError):
        mnist_reduced(tmp_path / "l.idx", tmp_path / "i.idx")


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((3, 2)), np.zeros(2), 2)
    with pytest.raises(ValueError):
        Activation("relu")
