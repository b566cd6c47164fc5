import csv
import hashlib

import numpy as np
import pytest
from hypothesis import given, strategies as st

from faceenhance.geogan import (GeoGanConfig, GeoGanModel, TrainingDiverged, build_model, enhance_code, geo_d_loss,
                                geo_g_loss, load_checkpoint, save_checkpoint, train_geometry_gan, write_history)
from faceenhance.tensorcore import AdamState, adam_step, mlp
from oracles import numeric_grad, rel_err


def _zero(net):
    for _, p in net.parameters():
        p[...] = 0.0
    return net


def _const_disc(value, dim=32):
    d = _zero(mlp("D", [dim, 64, 64, 64, 64, 1]))
    d.layers[-1].params["bias"][0] = value
    return d


def _model(g, d, dim=32, residual=False):
    return GeoGanModel(g, d, np.zeros(dim), np.ones(dim), residual)


def _small(seed, residual=True, dim=4, hidden=6):
    m = build_model(seed, residual, code_dim=dim, hidden=hidden)
    r = np.random.default_rng(seed)
    for net in (m.generator, m.discriminator):
        for layer in net.layers:
            if layer.kind == "FullyConnected":
                layer.params["bias"] = r.normal(0, 0.2, layer.params["bias"].shape)
    m.shift = r.normal(0, 1, dim)
    m.scale = r.uniform(0.5, 2.0, dim)
    return m


def test_config_defaults_and_validation():
    c = GeoGanConfig()
    assert (c.lr, c.batch_size, c.iterations, c.feature_layers) == (1e-4, 8, 15000, (1, 2, 3, 4))
    for bad in (dict(batch_size=1), dict(iterations=0), dict(pairing="nn"), dict(feature_layers=(5,))):
        with pytest.raises(ValueError):
            GeoGanConfig(**bad)


def test_generator_discriminator_layer_sizes():
    m = build_model(0)
    for net, out in ((m.generator, 32), (m.discriminator, 1)):
        fc = [layer for layer in net.layers if layer.kind == "FullyConnected"]
        assert [(layer.in_features, layer.out_features) for layer in fc] == [(32, 64), (64, 64), (64, 64), (64, 64),
                                                                            (64, out)]
        assert [layer.kind for layer in net.layers[:-1]] == ["FullyConnected", "ReLU"] * 4


# --- discriminator loss ----------------------------------------------------------------

def test_d_loss_perfect_discriminator_is_zero():
    # D(z) = relu(z_0): zero on fakes (G outputs 0) and on x (z_0 < 0), one on y (z_0 = 1)
    d = _zero(mlp("D", [32, 64, 64, 64, 64, 1]))
    for layer in d.layers:
        if layer.kind == "FullyConnected":
            layer.params["weight"][0, 0] = 1.0
    m = _model(_zero(mlp("G", [32, 64, 64, 64, 64, 32])), d)
    x = np.zeros((4, 32))
    x[:, 0] = -1.0
    y = np.zeros((3, 32))
    y[:, 0] = 1.0
    assert geo_d_loss(m, x, y)[0] == 0.0


def test_d_loss_half_everywhere():
    m = _model(_zero(mlp("G", [32, 64, 64, 64, 64, 32])), _const_disc(0.5))
    r = np.random.default_rng(0)
    assert geo_d_loss(m, r.normal(size=(8, 32)), r.normal(size=(8, 32)))[0] == 0.75


@pytest.mark.parametrize("seed", range(5))
def test_d_loss_gradient(seed):
    m = _small(seed)
    r = np.random.default_rng(seed)
    bx, by = r.normal(size=(5, 4)), r.normal(size=(3, 4))
    _, grads = geo_d_loss(m, bx, by)
    D = m.discriminator
    for i, layer in enumerate(D.layers):
        for k in layer.trainable:
            num = numeric_grad(lambda: geo_d_loss(m, bx, by)[0], layer.params[k])
            assert rel_err(grads[i][k], num) < 1e-4


def test_d_loss_gradient_full_size():
    m = build_model(3)
    r = np.random.default_rng(1)
    bx, by = r.normal(size=(8, 32)), r.normal(size=(8, 32))
    _, grads = geo_d_loss(m, bx, by)
    for i, layer in enumerate(m.discriminator.layers):
        for k in layer.trainable:
            coords = r.choice(layer.params[k].size, min(20, layer.params[k].size), replace=False)
            num = numeric_grad(lambda: geo_d_loss(m, bx, by)[0], layer.params[k], coords=coords)
            assert rel_err(grads[i][k].ravel()[coords], num.ravel()[coords]) < 1e-4


def test_d_step_decreases_loss():
    wins = 0
    for seed in range(40):
        m = _small(seed, dim=4, hidden=8)
        r = np.random.default_rng(100 + seed)
        bx, by = r.normal(size=(8, 4)), r.normal(size=(8, 4))
        before, grads = geo_d_loss(m, bx, by)
        adam_step(AdamState(lr=1e-6), m.discriminator.parameters(), m.discriminator.flat_grads(grads))
        wins += geo_d_loss(m, bx, by)[0] < before
    assert wins >= 38


# --- generator loss --------------------------------------------------------------------

def _const_generator(c):
    g = _zero(mlp("G", [32, 64, 64, 64, 64, 32]))
    g.layers[-1].params["bias"][:] = c
    return g


def test_g_loss_zero_when_matched_and_fooled():
    c = np.linspace(-1, 1, 32)
    m = _model(_const_generator(c), _const_disc(1.0))
    y = np.tile(c, (6, 1))
    assert geo_g_loss(m, np.random.default_rng(0).normal(size=(6, 32)), y)[0] == 0.0


def test_g_loss_one_when_rejected_but_matched():
    c = np.linspace(-1, 1, 32)
    m = _model(_const_generator(c), _const_disc(0.0))
    y = np.tile(c, (6, 1))
    assert geo_g_loss(m, np.zeros((6, 32)), y)[0] == 1.0


@pytest.mark.parametrize("feature_net", ["discriminator", "generator"])
@pytest.mark.parametrize("pairing", ["mean", "random"])
@pytest.mark.parametrize("residual", [True, False])
def test_g_loss_gradient(feature_net, pairing, residual):
    cfg = GeoGanConfig(feature_net=feature_net, pairing=pairing)
    for seed in range(2):
        m = _small(seed, residual)
        r = np.random.default_rng(seed + 10)
        bx, by = r.normal(size=(5, 4)), r.normal(size=(5, 4))
        _, grads = geo_g_loss(m, bx, by, cfg)
        for i, layer in enumerate(m.generator.layers):
            for k in layer.trainable:
                num = numeric_grad(lambda: geo_g_loss(m, bx, by, cfg)[0], layer.params[k])
                assert rel_err(grads[i][k], num) < 1e-4


@given(st.integers(0, 10 ** 6))
def test_losses_nonnegative(seed):
    m = _small(seed % 50)
    r = np.random.default_rng(seed)
    bx, by = r.normal(0, 3, size=(4, 4)), r.normal(0, 3, size=(4, 4))
    assert geo_d_loss(m, bx, by)[0] >= 0
    assert geo_g_loss(m, bx, by)[0] >= 0


def test_empty_batches_rejected():
    m = _small(0)
    with pytest.raises(ValueError):
        geo_d_loss(m, np.zeros((0, 4)), np.zeros((2, 4)))
    with pytest.raises(ValueError):
        geo_g_loss(m, np.zeros((2, 4)), np.zeros((0, 4)))


# --- inference ---------------------------------------------------------------------------

def test_zero_generator_gives_zero_code():
    m = _model(_zero(mlp("G", [32, 64, 64, 64, 64, 32])), _const_disc(0.0))
    out = enhance_code(m, np.random.default_rng(0).normal(size=32))
    assert out.shape == (32,) and np.all(out == 0.0)


def test_enhance_code_matches_forward():
    m = build_model(4)
    r = np.random.default_rng(2)
    m.shift = r.normal(size=32)
    m.scale = r.uniform(0.5, 2, 32)
    x = r.normal(size=(3, 32))
    z = (x - m.shift) / m.scale
    want = (z + m.generator.forward(z).output) * m.scale + m.shift
    assert np.array_equal(enhance_code(m, x), want)
    z1 = z[1:2]
    assert np.array_equal(enhance_code(m, x[1]), ((z1 + m.generator.forward(z1).output) * m.scale + m.shift)[0])


# --- training ------------------------------------------------------------------------------

def _clusters(seed=0, n=300, dim=32):
    r = np.random.default_rng(seed)
    cov = np.linspace(2.0, 0.2, dim)
    x = r.normal(size=(n, dim)) * cov
    y = r.normal(size=(n, dim)) * cov + np.where(np.arange(dim) < 3, 3.0, 0.0)
    return x, y


def test_training_is_deterministic_and_pure():
    x, y = _clusters()
    hx, hy = hashlib.sha256(x.tobytes()).hexdigest(), hashlib.sha256(y.tobytes()).hexdigest()
    cfg = GeoGanConfig(iterations=150, seed=5, checkpoint_every=50)
    a = train_geometry_gan(cfg, x, y)
    b = train_geometry_gan(cfg, x, y)
    assert a.history == b.history and len(a.history) == 150
    assert [c["iteration"] for c in a.checkpoints] == [0, 50, 100, 150]
    assert hashlib.sha256(x.tobytes()).hexdigest() == hx and hashlib.sha256(y.tobytes()).hexdigest() == hy


def test_same_distribution_stays_near_identity():
    x, _ = _clusters(1, n=600)
    res = train_geometry_gan(GeoGanConfig(iterations=2000, seed=1), x, x)
    out = enhance_code(res.model, x)
    displacement = np.mean(np.linalg.norm(out - x, axis=1))
    spread = np.mean(np.linalg.norm(x - x.mean(0), axis=1))
    assert displacement < spread


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_last_checkpoint():
    x, y = _clusters()
    with pytest.raises(TrainingDiverged) as info:
        train_geometry_gan(GeoGanConfig(iterations=400, lr=1e200, checkpoint_every=1), x, y)
    assert info.value.checkpoint is not None
    assert info.value.checkpoint["iteration"] == len(info.value.history)


def test_checkpoint_round_trip(tmp_path):
    x, y = _clusters()
    cfg = GeoGanConfig(iterations=20, seed=2)
    res = train_geometry_gan(cfg, x, y, checkpoint_dir=str(tmp_path / "ck"))
    save_checkpoint(res.model, cfg, 20, tmp_path / "final")
    back, meta = load_checkpoint(tmp_path / "final")
    assert meta["iteration"] == 20 and meta["config"]["batch_size"] == 8
    assert np.array_equal(enhance_code(back, x[:5]), enhance_code(res.model, x[:5]))
    assert (tmp_path / "ck" / "iter_000020" / "generator.json").exists()
    write_history(res.history, tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["iteration", "d_loss", "g_loss"] and len(rows) == 21
