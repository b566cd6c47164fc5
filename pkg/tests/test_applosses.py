import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from faceenhance import applosses as A
from faceenhance.geoembed import reference_landmarks
from faceenhance.synth import render_face
from faceenhance.tensorcore import deserialize_network, serialize_network
from oracles import numeric_grad, rel_err

EXPECTED_TRACE = [(32, 224, 224), (64, 112, 112), (128, 56, 56), (128, 56, 56), (128, 56, 56), (128, 56, 56),
            (64, 28, 28), (32, 14, 14), (16, 7, 7), (784,), (512,), (32,)]


class OneHot:
    """Descriptor stub: basis vector chosen by the first pixel."""
    dim = 4

    def __call__(self, img):
        v = np.zeros(4)
        v[int(img[0, 0, 0] * 3.999)] = 1.0
        return v

    def vjp(self, img, g):
        return np.zeros_like(img)


# --- adversarial ---------------------------------------------------------------------------

def test_adv_d_trivial():
    assert A.adv_d_loss(np.zeros(3), np.zeros(4), np.ones(2))[0] == 0.0
    assert A.adv_d_loss(np.full(3, 0.5), np.full(3, 0.5), np.full(3, 0.5))[0] == 0.75


def test_adv_d_vs_direct_sum(rng):
    f, x, y = rng.normal(size=5), rng.normal(size=4), rng.normal(size=6)
    want = sum(v * v for v in f) / 5 + sum(v * v for v in x) / 4 + sum((1 - v) ** 2 for v in y) / 6
    assert A.adv_d_loss(f, x, y)[0] == pytest.approx(want, rel=1e-14)


def test_adv_g_trivial_and_oracle(rng):
    assert A.adv_g_loss(np.ones(3))[0] == 0.0
    assert A.adv_g_loss(np.zeros(3))[0] == 1.0
    f = rng.normal(size=7)
    assert A.adv_g_loss(f)[0] == pytest.approx(sum((1 - v) ** 2 for v in f) / 7, rel=1e-14)


# --- identity ----------------------------------------------------------------------------------

def test_identity_fixed_point(rng):
    x = rng.random((20, 20, 3))
    assert A.identity_loss(A.ToyIdentityDescriptor(), x, x)[0] == 0.0


def test_identity_orthogonal_descriptors():
    a = np.zeros((2, 2, 1))
    b = np.full((2, 2, 1), 0.9)
    assert A.identity_loss(OneHot(), a, b)[0] == pytest.approx(math.sqrt(2), abs=1e-15)


def test_toy_descriptor_definition(rng):
    img = rng.random((32, 32, 3))
    gray = img @ np.array([0.299, 0.587, 0.114])
    down = gray.reshape(16, 2, 16, 2).mean(axis=(1, 3)).ravel()
    psi = A.ToyIdentityDescriptor()
    np.testing.assert_allclose(psi(img), down / np.linalg.norm(down), rtol=1e-13)
    assert psi.dim == 256


def test_identity_vs_l2_oracle(rng):
    psi = A.ToyIdentityDescriptor()
    x, xh = rng.random((24, 20, 3)), rng.random((24, 20, 3))
    d = psi(x) - psi(xh)
    assert A.identity_loss(psi, x, xh)[0] == pytest.approx(math.sqrt(sum(v * v for v in d)), rel=1e-13)


# --- pixel and TV --------------------------------------------------------------------------------

def test_pixel_trivial_and_oracle(rng):
    x = rng.random((5, 6, 3))
    assert A.pixel_loss(x, x)[0] == 0.0
    assert A.pixel_loss(x, x + 0.5)[0] == pytest.approx(0.5, abs=1e-15)
    xh = rng.random((5, 6, 3))
    want = sum(abs(a - b) for a, b in zip(x.ravel(), xh.ravel())) / x.size
    assert A.pixel_loss(x, xh)[0] == pytest.approx(want, rel=1e-13)
    with pytest.raises(ValueError):
        A.pixel_loss(x, xh[:4])


def test_tv_trivial():
    assert A.tv_loss(np.full((4, 5, 3), 0.3))[0] == 0.0
    assert A.tv_loss(np.array([[[0.0], [1.0]]]))[0] == 1.0


def test_tv_vs_direct_sum(rng):
    x = rng.random((6, 5, 2))
    h, w, c = x.shape
    total = 0.0
    for ch in range(c):
        v = sum(abs(x[i + 1, j, ch] - x[i, j, ch]) for i in range(h - 1) for j in range(w)) / ((h - 1) * w)
        hz = sum(abs(x[i, j + 1, ch] - x[i, j, ch]) for i in range(h) for j in range(w - 1)) / (h * (w - 1))
        total += v + hz
    assert A.tv_loss(x)[0] == pytest.approx(total / c, rel=1e-13)


@given(st.integers(0, 10 ** 6))
def test_flip_invariance_and_nonnegativity(seed):
    r = np.random.default_rng(seed)
    x, xh = r.random((5, 7, 3)), r.random((5, 7, 3))
    assert A.pixel_loss(x, xh)[0] == pytest.approx(A.pixel_loss(x[:, ::-1], xh[:, ::-1])[0], rel=1e-12)
    assert A.tv_loss(xh)[0] == pytest.approx(A.tv_loss(xh[:, ::-1])[0], rel=1e-12)
    psi = A.ToyIdentityDescriptor()
    for v in (A.pixel_loss(x, xh)[0], A.tv_loss(xh)[0], A.identity_loss(psi, x, xh)[0],
              A.adv_g_loss(r.normal(size=3))[0], A.adv_d_loss(*r.normal(size=(3, 4)))[0],
              A.consistency_energy(r.normal(size=5), r.normal(size=5))[0]):
        assert v >= 0


# --- consistency ---------------------------------------------------------------------------------

def test_gec_direct_form(rng):
    c = rng.normal(size=32)
    assert A.gec_loss(c, c.copy(), None)[0] == 0.0
    e = np.zeros(32)
    e[7] = 1.0
    assert A.gec_loss(c, c + e, None)[0] == 1.0
    d = rng.normal(size=32)
    assert A.gec_loss(c, d, None)[0] == pytest.approx(math.sqrt(sum((a - b) ** 2 for a, b in zip(c, d))), rel=1e-13)


def test_gec_through_extractor_matches_direct(rng):
    ext = A.GeometryExtractor(A.build_extractor_network(16, seed=1))
    x = rng.random((16, 16, 3))
    code = rng.normal(size=32)
    assert A.gec_loss(code, ext, x)[0] == pytest.approx(np.linalg.norm(code - ext(x)), rel=1e-13)


# --- total ---------------------------------------------------------------------------------------

def test_total_with_default_weights():
    ones = dict.fromkeys(A.COMPONENTS, 1.0)
    assert A.total_g_loss(ones, A.LossWeights()) == 1016.00001
    assert A.total_g_loss(dict.fromkeys(A.COMPONENTS, 0.0)) == 0.0
    w = A.LossWeights()
    assert (w.app_g, w.identity, w.pixel, w.tv, w.gec) == (10.0, 1.0, 5.0, 1e-5, 1e3)


def test_total_vs_weighted_sum_and_linearity(rng):
    w = A.LossWeights()
    comp = dict(zip(A.COMPONENTS, rng.random(5)))
    want = sum(getattr(w, k) * comp[k] for k in A.COMPONENTS)
    assert A.total_g_loss(comp, w) == pytest.approx(want, rel=1e-15)
    for k in A.COMPONENTS:
        doubled = dict(comp, **{k: 2 * comp[k]})
        assert A.total_g_loss(doubled, w) - A.total_g_loss(comp, w) == pytest.approx(getattr(w, k) * comp[k],
                                                                                      rel=1e-9, abs=1e-12)


def test_total_rejects_missing_and_negative():
    with pytest.raises(KeyError):
        A.total_g_loss({"app_g": 1.0})
    with pytest.raises(ValueError):
        A.LossWeights(tv=-1.0)


# --- gradients with respect to the generated image ------------------------------------------------

def _check(f, grad, x):
    return rel_err(grad, numeric_grad(f, x))


def test_gradients_wrt_x_hat(rng):
    x = rng.random((8, 8, 3))
    xh = rng.random((8, 8, 3))
    psi = A.ToyIdentityDescriptor()
    assert _check(lambda: A.pixel_loss(x, xh)[0], A.pixel_loss(x, xh)[1], xh) < 1e-4
    assert _check(lambda: A.tv_loss(xh)[0], A.tv_loss(xh)[1], xh) < 1e-4
    assert _check(lambda: A.identity_loss(psi, x, xh)[0], A.identity_loss(psi, x, xh)[1], xh) < 1e-4


def test_adversarial_gradients_through_pyramid(rng):
    disc = A.PyramidDiscriminator(A.small_feature_extractor(seed=2), seed=2)
    xh = rng.random((2, 8, 8, 3))
    s_x = rng.normal(size=2)
    s_y = rng.normal(size=2)

    def g_loss():
        return A.adv_g_loss(disc.score(xh)[0])[0]

    def d_loss():
        return A.adv_d_loss(disc.score(xh)[0], s_x, s_y)[0]

    s, vjp = disc.score(xh)
    assert _check(g_loss, vjp(A.adv_g_loss(s)[1]), xh) < 1e-4
    assert _check(d_loss, vjp(A.adv_d_loss(s, s_x, s_y)[1][0]), xh) < 1e-4


def test_gec_gradient_through_extractor(rng):
    net = A.build_extractor_network(16, seed=3)
    for layer in net.layers:
        if layer.kind == "BatchNorm":
            layer.params["running_mean"] = rng.normal(0, 0.1, layer.num_features)
            layer.params["running_var"] = rng.uniform(0.5, 1.5, layer.num_features)
    ext = A.GeometryExtractor(net)
    xh = rng.random((16, 16, 3))
    code = rng.normal(size=32)
    _, (g_code, g_x) = A.gec_loss(code, ext, xh)
    coords = rng.choice(xh.size, 40, replace=False)
    num = numeric_grad(lambda: A.gec_loss(code, ext, xh)[0], xh, coords=coords)
    assert rel_err(g_x.ravel()[coords], num.ravel()[coords]) < 1e-4
    assert _check(lambda: A.gec_loss(code, ext, xh)[0], g_code, code) < 1e-4


# --- extractor -----------------------------------------------------------------------------------

def test_reference_shape_trace():
    ext = A.GeometryExtractor(A.build_extractor_network(224))
    assert ext.shape_trace() == EXPECTED_TRACE
    kinds = [layer.kind for layer in ext.network.layers[:27]]
    assert kinds == ["Conv2d", "BatchNorm", "ReLU"] * 9


def test_extractor_other_resolution():
    ext = A.GeometryExtractor(A.build_extractor_network(56))
    trace = ext.shape_trace()
    assert trace[0] == (32, 56, 56) and trace[8] == (16, 2, 2) and trace[-3:] == [(784,), (512,), (32,)]
    assert ext(np.zeros((56, 56, 3))).shape == (32,)


def test_extractor_serialises(rng):
    net = A.build_extractor_network(24, seed=4)
    back = deserialize_network(serialize_network(net))
    x = rng.random((1, 24, 24, 3))
    assert np.array_equal(A.GeometryExtractor(back)(x), A.GeometryExtractor(net)(x))
    assert back.meta["resolution"] == 24


def test_memorises_single_sample():
    img = render_face(reference_landmarks().points, 48)[None]
    code = np.random.default_rng(0).normal(0, 3, (1, 32))
    res = A.train_geometry_extractor(img, code, epochs=80, batch_size=1)
    assert res.epoch_loss[-1] < 1e-4
    half = len(res.epoch_loss) // 2
    assert np.mean(res.epoch_loss[half:]) < np.mean(res.epoch_loss[:half])


def test_extractor_input_checks():
    with pytest.raises(ValueError):
        A.train_geometry_extractor(np.zeros((2, 16, 16, 3)), np.zeros((3, 32)))
    with pytest.raises(ValueError):
        A.train_geometry_extractor(np.zeros((2, 16, 16, 3)), np.zeros((2, 32)), resolution=24)
