"""Appearance-branch and consistency losses, plus the distance-feature extractor.

Every loss returns ``(value, grads)`` where the gradients are with respect to
the loss inputs. Images are float arrays shaped (H, W, C) or (N, H, W, C);
batch losses are means over the batch.

Total variation (anisotropic L1, per channel):

    tv(x) = mean_{i,j} |x[i+1, j] - x[i, j]| + mean_{i,j} |x[i, j+1] - x[i, j]|

where each mean runs over the positions where that difference exists (an
empty set contributes 0), averaged over channels and batch.
"""
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .tensorcore import (AdamState, BatchNorm, Conv2d, Linear, Network, NonFiniteError, ReLU, adam_step)

log = logging.getLogger(__name__)


def _batch(img):
    a = np.asarray(img, dtype=np.float64)
    return (a[None], True) if a.ndim == 3 else (a, False)


def _unbatch(g, single):
    return g[0] if single else g


def to_nchw(imgs):
    return np.ascontiguousarray(np.asarray(imgs, dtype=np.float64).transpose(0, 3, 1, 2))


def to_nhwc(t):
    return np.ascontiguousarray(t.transpose(0, 2, 3, 1))


# --- adversarial -------------------------------------------------------------------

def adv_d_loss(scores_fake, scores_x, scores_y):
    """Least-squares discriminator loss; fakes and unattractive faces are negatives."""
    f = np.asarray(scores_fake, dtype=np.float64)
    x = np.asarray(scores_x, dtype=np.float64)
    y = np.asarray(scores_y, dtype=np.float64)
    value = float(np.mean(f ** 2) + np.mean(x ** 2) + np.mean((1.0 - y) ** 2))
    return value, (2.0 * f / f.size, 2.0 * x / x.size, -2.0 * (1.0 - y) / y.size)


def adv_g_loss(scores_fake):
    f = np.asarray(scores_fake, dtype=np.float64)
    return float(np.mean((1.0 - f) ** 2)), -2.0 * (1.0 - f) / f.size


# --- identity ------------------------------------------------------------------------

def _area_matrix(n_out, n_in):
    """Row-stochastic box-filter resampling matrix (n_out, n_in)."""
    R = np.zeros((n_out, n_in))
    scale = n_in / n_out
    for i in range(n_out):
        lo, hi = i * scale, (i + 1) * scale
        for j in range(int(np.floor(lo)), min(int(np.ceil(hi)), n_in)):
            R[i, j] = min(hi, j + 1) - max(lo, j)
        R[i] /= R[i].sum()
    return R


class ToyIdentityDescriptor:
    """Stand-in face descriptor: 16x16 grayscale box downsample, L2-normalised.

    Any object with ``dim``, ``__call__(img) -> vector`` and
    ``vjp(img, g) -> d<g, psi(img)>/d img`` can replace it.
    """

    LUMA = np.array([0.299, 0.587, 0.114])

    def __init__(self, size=16):
        self.size = size
        self.dim = size * size
        self._cache = {}

    def _ops(self, h, w):
        key = (h, w)
        if key not in self._cache:
            self._cache[key] = (_area_matrix(self.size, h), _area_matrix(self.size, w))
        return self._cache[key]

    def _gray_weights(self, c):
        return self.LUMA if c == 3 else np.ones(c) / c

    def raw(self, img):
        img = np.asarray(img, dtype=np.float64)
        h, w, c = img.shape
        Ry, Rx = self._ops(h, w)
        gray = img @ self._gray_weights(c)
        return (Ry @ gray @ Rx.T).ravel()

    def __call__(self, img):
        v = self.raw(img)
        n = np.linalg.norm(v)
        return v / n if n > 0 else v

    def vjp(self, img, g):
        img = np.asarray(img, dtype=np.float64)
        h, w, c = img.shape
        v = self.raw(img)
        n = np.linalg.norm(v)
        if n == 0:
            return np.zeros_like(img)
        psi = v / n
        gv = (g - psi * (psi @ g)) / n
        Ry, Rx = self._ops(h, w)
        ggray = Ry.T @ gv.reshape(self.size, self.size) @ Rx
        return ggray[:, :, None] * self._gray_weights(c)[None, None, :]


def identity_loss(psi, x, x_hat):
    """||psi(x) - psi(x_hat)||_2, averaged over the batch; gradient wrt ``x_hat``."""
    xb, _ = _batch(x)
    hb, single = _batch(x_hat)
    vals, grads = [], []
    for a, b in zip(xb, hb):
        diff = psi(a) - psi(b)
        n = float(np.linalg.norm(diff))
        vals.append(n)
        u = diff / n if n > 0 else np.zeros_like(diff)
        grads.append(psi.vjp(b, -u) / len(hb))
    return float(np.mean(vals)), _unbatch(np.stack(grads), single)


# --- pixel and total variation ---------------------------------------------------------

def pixel_loss(x, x_hat):
    """Mean absolute difference over W*H*C (and batch); gradient wrt ``x_hat``."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise ValueError(f"image shapes differ: {x.shape} vs {x_hat.shape}")
    d = x_hat - x
    return float(np.mean(np.abs(d))), np.sign(d) / d.size


def tv_loss(x_hat):
    xb, single = _batch(x_hat)
    n, h, w, c = xb.shape
    g = np.zeros_like(xb)
    value = 0.0
    norm = n * c
    if h > 1:
        dy = xb[:, 1:] - xb[:, :-1]
        cnt = (h - 1) * w
        value += np.abs(dy).sum() / (cnt * norm)
        s = np.sign(dy) / (cnt * norm)
        g[:, 1:] += s
        g[:, :-1] -= s
    if w > 1:
        dx = xb[:, :, 1:] - xb[:, :, :-1]
        cnt = h * (w - 1)
        value += np.abs(dx).sum() / (cnt * norm)
        s = np.sign(dx) / (cnt * norm)
        g[:, :, 1:] += s
        g[:, :, :-1] -= s
    return float(value), _unbatch(g, single)


# --- geometry consistency ---------------------------------------------------------------

def consistency_energy(codes_a, codes_b):
    """mean_b ||a_b - b_b||_2 with gradients wrt both arguments."""
    a = np.atleast_2d(np.asarray(codes_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(codes_b, dtype=np.float64))
    diff = a - b
    norms = np.linalg.norm(diff, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    ga = np.where(norms[:, None] > 0, diff / safe[:, None], 0.0) / len(a)
    single = np.ndim(codes_a) == 1
    return float(norms.mean()), ((ga[0], -ga[0]) if single else (ga, -ga))


def gec_loss(g_geo_out, extractor, x_hat):
    """||G_geo(l_x) - E(x_hat)||_2 through the extractor network.

    ``extractor`` is a :class:`GeometryExtractor` (evaluated in inference
    mode) or, for the direct code form, a code array standing in for E(x_hat).
    Returns ``(value, (grad_code, grad_x_hat))``; ``grad_x_hat`` is ``None``
    for the direct form.
    """
    if not isinstance(extractor, GeometryExtractor):
        value, (ga, _) = consistency_energy(g_geo_out, extractor)
        return value, (ga, None)
    hb, single = _batch(x_hat)
    tr = extractor.network.forward(to_nchw(hb))
    e = tr.output
    code = np.atleast_2d(np.asarray(g_geo_out, dtype=np.float64))
    value, (ga, ge) = consistency_energy(code, e)
    _, gin = extractor.network.backward(tr, ge)
    gx = to_nhwc(gin)
    return value, ((ga[0] if np.ndim(g_geo_out) == 1 else ga), _unbatch(gx, single))


# --- total ------------------------------------------------------------------------------

@dataclass
class LossWeights:
    app_g: float = 10.0
    identity: float = 1.0
    pixel: float = 5.0
    tv: float = 1e-5
    gec: float = 1e3

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"weight {k} must be nonnegative")

    def to_dict(self):
        return asdict(self)


COMPONENTS = ("app_g", "identity", "pixel", "tv", "gec")


def total_g_loss(components, weights=None):
    """Weighted sum of the generator-side loss values (a mapping keyed by COMPONENTS)."""
    w = weights or LossWeights()
    missing = set(COMPONENTS) - set(components)
    if missing:
        raise KeyError(f"missing loss components: {sorted(missing)}")
    total = 0.0
    for k in COMPONENTS:
        total += getattr(w, k) * float(components[k])
    return total


def total_d_loss(scores_fake, scores_x, scores_y):
    return adv_d_loss(scores_fake, scores_x, scores_y)


# --- stand-in feature pyramid discriminator ----------------------------------------------

class FeatureExtractor:
    """A conv network exposing activations at declared layers."""

    def __init__(self, network, layers):
        self.network = network
        self.layers = list(layers)

    def __call__(self, imgs):
        tr = self.network.forward(to_nchw(_batch(imgs)[0]))
        return [tr.activations[i] for i in self.layers]


def small_feature_extractor(channels=(4, 8), seed=0):
    layers, c_in = [], 3
    for c in channels:
        layers += [Conv2d(c_in, c, 3, stride=2, padding=1), ReLU()]
        c_in = c
    net = Network("stand_in_pyramid", layers).init(seed)
    return FeatureExtractor(net, [2 * i + 1 for i in range(len(channels))])


class PyramidDiscriminator:
    """Score = sum over levels of <w_l, global-average-pooled features_l> + b."""

    def __init__(self, extractor, seed=0):
        self.extractor = extractor
        rng = np.random.default_rng(seed)
        self.heads = []
        for li in extractor.layers:
            c = self._channels(li)
            self.heads.append(rng.normal(0.0, 1.0 / np.sqrt(c), c))
        self.bias = 0.5

    def _channels(self, li):
        for layer in self.extractor.network.layers[li::-1]:
            if layer.kind == "Conv2d":
                return layer.out_channels
        raise ValueError("feature layer has no preceding convolution")

    def score(self, imgs):
        """Scores (N,) and a closure giving d(sum g_n * score_n)/d imgs."""
        xb, single = _batch(imgs)
        net = self.extractor.network
        tr = net.forward(to_nchw(xb))
        s = np.full(len(xb), self.bias)
        for li, w in zip(self.extractor.layers, self.heads):
            s = s + tr.activations[li].mean(axis=(2, 3)) @ w

        def vjp(g):
            g = np.asarray(g, dtype=np.float64).reshape(-1)
            extra = {}
            for li, w in zip(self.extractor.layers, self.heads):
                a = tr.activations[li]
                extra[li] = (g[:, None] * w[None, :])[:, :, None, None] * np.ones_like(a) / (a.shape[2] * a.shape[3])
            _, gin = net.backward(tr, None, extra)
            return _unbatch(to_nhwc(gin), single)

        return s, vjp


# --- distance feature extractor ---------------------------------------------------------

EXTRACTOR_CONVS = (
    # out_channels, kernel, stride, padding
    (32, 9, 1, 4),
    (64, 3, 2, 1),
    (128, 3, 2, 1),
    (128, 3, 1, 1),
    (128, 3, 1, 1),
    (128, 3, 1, 1),
    (64, 3, 2, 1),
    (32, 3, 2, 1),
    (16, 3, 2, 1),
)
EXTRACTOR_FC = (784, 512)


def build_extractor_network(resolution=224, code_dim=32, seed=0):
    layers, c_in = [], 3
    shape = (3, resolution, resolution)
    for c, k, s, p in EXTRACTOR_CONVS:
        conv = Conv2d(c_in, c, k, stride=s, padding=p)
        shape = conv.out_shape(shape)
        layers += [conv, BatchNorm(c), ReLU()]
        c_in = c
    flat = int(np.prod(shape))
    widths = (flat,) + EXTRACTOR_FC
    for a, b in zip(widths[:-1], widths[1:]):
        layers += [Linear(a, b), ReLU()]
    layers.append(Linear(widths[-1], code_dim))
    net = Network("E_geo", layers, {"resolution": resolution}).init(seed)
    return net


@dataclass
class GeometryExtractor:
    network: Network

    @property
    def resolution(self):
        return int(self.network.meta.get("resolution", 224))

    def __call__(self, imgs):
        xb, single = _batch(imgs)
        out = self.network(to_nchw(xb))
        return out[0] if single else out

    def shape_trace(self):
        """Activation sizes after each conv block and each FC layer."""
        r = self.resolution
        shapes = self.network.shapes((3, r, r))
        rows = []
        for layer, shape in zip(self.network.layers, shapes):
            if layer.kind in ("Conv2d", "FullyConnected"):
                rows.append(tuple(shape))
        return rows


@dataclass
class ExtractorTrainResult:
    extractor: GeometryExtractor
    epoch_loss: list = field(default_factory=list)   # mean training MSE per epoch, code units
    seconds: float = 0.0


def recalibrate_batchnorm(net, X, batch_size):
    """Set BatchNorm running statistics to batch averages over ``X`` at the current weights."""
    sums = {}
    n_batches = 0
    for s in range(0, len(X), batch_size):
        tr = net.forward(X[s:s + batch_size], training=True)
        n_batches += 1
        for i, (layer, cache) in enumerate(zip(net.layers, tr.caches)):
            if layer.kind != "BatchNorm":
                continue
            _, _, _, _, mean, var, m = cache
            acc = sums.setdefault(i, [0.0, 0.0])
            acc[0] = acc[0] + mean
            acc[1] = acc[1] + var * m / max(m - 1, 1)
    for i, (mean_sum, var_sum) in sums.items():
        net.layers[i].params["running_mean"] = mean_sum / n_batches
        net.layers[i].params["running_var"] = var_sum / n_batches


def train_geometry_extractor(images, codes, resolution=None, epochs=20, batch_size=16, lr=1e-3, seed=0,
                             time_budget=None):
    """L2 regression of E(x) onto geometry codes with Adam.

    Targets are centred and divided by their overall spread during training;
    the scaling is folded back into the final FC layer so the returned network outputs codes
    directly. Loss history is in code units (mean over samples and dims).
    BatchNorm running statistics are recomputed at the final weights.
    """
    imgs = np.asarray(images, dtype=np.float64)
    Y = np.atleast_2d(np.asarray(codes, dtype=np.float64))
    if len(imgs) != len(Y) or len(imgs) == 0:
        raise ValueError("need equally many (>0) images and codes")
    res = resolution or imgs.shape[1]
    if imgs.shape[1] != res or imgs.shape[2] != res:
        raise ValueError(f"images must be {res}x{res}, got {imgs.shape[1:3]}")
    net = build_extractor_network(res, Y.shape[1], seed)
    if len(Y) > 1:
        mu = Y.mean(axis=0)
        # one scale for all dims keeps the loss proportional to code-space MSE
        spread = float(np.sqrt(np.mean(Y.var(axis=0))))
        sd = np.full(Y.shape[1], spread if spread > 1e-12 else 1.0)
    else:
        mu, sd = np.zeros(Y.shape[1]), np.ones(Y.shape[1])
    Yn = (Y - mu) / sd
    X = to_nchw(imgs)
    rng = np.random.default_rng([seed, 11])
    state = AdamState(lr=lr)
    params = net.parameters()
    n = len(X)
    history = []
    t0 = time.perf_counter()
    for ep in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for s in range(0, n, batch_size):
            idx = order[s:s + batch_size]
            tr = net.forward(X[idx], training=True)
            diff = tr.output - Yn[idx]
            # loss in code units so the history is comparable to code variance
            total += float(((diff * sd) ** 2).sum())
            g = 2.0 * diff / diff.size
            grads, _ = net.backward(tr, g)
            try:
                adam_step(state, params, net.flat_grads(grads))
            except NonFiniteError as exc:
                raise NonFiniteError(f"extractor training diverged in epoch {ep + 1}: {exc}") from exc
            net.commit_stats(tr)
        history.append(total / (n * Y.shape[1]))
        log.info("extractor epoch %d: mse %.6g", ep + 1, history[-1])
        if time_budget is not None and time.perf_counter() - t0 > time_budget:
            break
    recalibrate_batchnorm(net, X, batch_size)
    last = net.layers[-1]
    last.params["weight"] = last.params["weight"] * sd[:, None]
    last.params["bias"] = last.params["bias"] * sd + mu
    return ExtractorTrainResult(GeometryExtractor(net), history, time.perf_counter() - t0)
