"""Minimal deterministic layer engine: FC, ReLU, Conv2d and BatchNorm.

Tensors are float64 numpy arrays with a leading batch axis. ``forward`` never
mutates a network; it returns a :class:`Trace` holding every activation and
the caches needed by ``backward``. BatchNorm running statistics are only
updated through :meth:`Network.commit_stats`.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels

FORMAT_VERSION = 1


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class FormatError(ValueError):
    pass


class Layer:
    kind = None
    trainable = ()

    def __init__(self):
        self.params = {}

    @property
    def hyper(self):
        return {}

    def out_shape(self, in_shape):
        return in_shape

    def init(self, rng):
        pass


class Linear(Layer):
    """Fully connected layer; inputs with more than two axes are flattened."""

    kind = "FullyConnected"
    trainable = ("weight", "bias")

    def __init__(self, in_features, out_features):
        super().__init__()
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.params = {
            "weight": np.zeros((self.out_features, self.in_features)),
            "bias": np.zeros(self.out_features),
        }

    @property
    def hyper(self):
        return {"in_features": self.in_features, "out_features": self.out_features}

    def out_shape(self, in_shape):
        if math.prod(in_shape) != self.in_features:
            raise ShapeError(f"expected {self.in_features} input features, got shape {tuple(in_shape)}")
        return (self.out_features,)

    def init(self, rng):
        bound = math.sqrt(6.0 / (self.in_features + self.out_features))
        self.params["weight"] = rng.uniform(-bound, bound, (self.out_features, self.in_features))
        self.params["bias"] = np.zeros(self.out_features)

    def forward(self, x, training):
        x2 = x.reshape(x.shape[0], -1)
        return x2 @ self.params["weight"].T + self.params["bias"], (x.shape, x2)

    def backward(self, cache, gy):
        shape, x2 = cache
        grads = {"weight": gy.T @ x2, "bias": gy.sum(axis=0)}
        return (gy @ self.params["weight"]).reshape(shape), grads


class ReLU(Layer):
    kind = "ReLU"

    def forward(self, x, training):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, mask, gy):
        return np.where(mask, gy, 0.0), {}


class Conv2d(Layer):
    kind = "Conv2d"
    trainable = ("weight", "bias")

    def __init__(self, in_channels, out_channels, kernel_size, stride=1, padding=0):
        super().__init__()
        if stride < 1:
            raise ValueError("stride must be >= 1")
        if kernel_size < 1 or padding < 0:
            raise ValueError("kernel_size must be >= 1 and padding >= 0")
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = int(kernel_size)
        self.stride = int(stride)
        self.padding = int(padding)
        k = self.kernel_size
        self.params = {
            "weight": np.zeros((self.out_channels, self.in_channels, k, k)),
            "bias": np.zeros(self.out_channels),
        }

    @property
    def hyper(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
        }

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_channels:
            raise ShapeError(f"expected ({self.in_channels}, H, W) input, got {tuple(in_shape)}")
        _, h, w = in_shape
        k, s, p = self.kernel_size, self.stride, self.padding
        if k > h + 2 * p or k > w + 2 * p:
            raise ShapeError(f"kernel {k} larger than padded input {h + 2 * p}x{w + 2 * p}")
        return (self.out_channels, (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1)

    def init(self, rng):
        k2 = self.kernel_size ** 2
        bound = math.sqrt(6.0 / (self.in_channels * k2 + self.out_channels * k2))
        self.params["weight"] = rng.uniform(-bound, bound, self.params["weight"].shape)
        self.params["bias"] = np.zeros(self.out_channels)

    def forward(self, x, training):
        n = x.shape[0]
        _, ho, wo = self.out_shape(x.shape[1:])
        x = np.ascontiguousarray(x, dtype=np.float64)
        cols = kernels.im2col(x, self.kernel_size, self.stride, self.padding)
        w2 = self.params["weight"].reshape(self.out_channels, -1)
        y = w2 @ cols + self.params["bias"][:, None]
        y = y.reshape(self.out_channels, n, ho, wo).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(y), (x.shape, cols)

    def backward(self, cache, gy):
        shape, cols = cache
        gy2 = gy.transpose(1, 0, 2, 3).reshape(self.out_channels, -1)
        w2 = self.params["weight"].reshape(self.out_channels, -1)
        grads = {
            "weight": (gy2 @ cols.T).reshape(self.params["weight"].shape),
            "bias": gy2.sum(axis=1),
        }
        gx = kernels.col2im(w2.T @ gy2, shape, self.kernel_size, self.stride, self.padding)
        return gx, grads


class BatchNorm(Layer):
    """Per-feature (or per-channel for 4-D input) batch normalisation.

    Training mode normalises with biased batch statistics; inference uses the
    running averages, which :meth:`Network.commit_stats` blends with
    ``momentum`` (running variance tracks the unbiased batch variance).
    """

    kind = "BatchNorm"
    trainable = ("weight", "bias")

    def __init__(self, num_features, eps=1e-5, momentum=0.1):
        super().__init__()
        self.num_features = int(num_features)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.params = {
            "weight": np.ones(self.num_features),
            "bias": np.zeros(self.num_features),
            "running_mean": np.zeros(self.num_features),
            "running_var": np.ones(self.num_features),
        }

    @property
    def hyper(self):
        return {"num_features": self.num_features, "eps": self.eps, "momentum": self.momentum}

    def out_shape(self, in_shape):
        if in_shape[0] != self.num_features:
            raise ShapeError(f"expected {self.num_features} features, got shape {tuple(in_shape)}")
        return in_shape

    def init(self, rng):
        self.params["weight"] = np.ones(self.num_features)
        self.params["bias"] = np.zeros(self.num_features)
        self.params["running_mean"] = np.zeros(self.num_features)
        self.params["running_var"] = np.ones(self.num_features)

    def _view(self, v, ndim):
        return v.reshape((1, -1) + (1,) * (ndim - 2))

    def forward(self, x, training):
        axes = (0,) + tuple(range(2, x.ndim))
        if training:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
        else:
            mean = self.params["running_mean"]
            var = self.params["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._view(mean, x.ndim)) * self._view(inv_std, x.ndim)
        y = xhat * self._view(self.params["weight"], x.ndim) + self._view(self.params["bias"], x.ndim)
        count = x.size // self.num_features
        return y, (xhat, inv_std, training, axes, mean, var, count)

    def backward(self, cache, gy):
        xhat, inv_std, training, axes, _, _, m = cache
        nd = gy.ndim
        grads = {"weight": (gy * xhat).sum(axis=axes), "bias": gy.sum(axis=axes)}
        g_xhat = gy * self._view(self.params["weight"], nd)
        if not training:
            return g_xhat * self._view(inv_std, nd), grads
        s1 = g_xhat.sum(axis=axes)
        s2 = (g_xhat * xhat).sum(axis=axes)
        gx = (g_xhat - self._view(s1, nd) / m - xhat * self._view(s2, nd) / m) * self._view(inv_std, nd)
        return gx, grads


LAYER_KINDS = {cls.kind: cls for cls in (Linear, ReLU, Conv2d, BatchNorm)}


@dataclass
class Trace:
    """Everything one forward pass produced."""

    network: "Network"
    input: np.ndarray
    activations: list
    caches: list
    training: bool

    @property
    def output(self):
        return self.activations[-1]


@dataclass
class Network:
    name: str
    layers: list
    meta: dict = field(default_factory=dict)

    def init(self, seed):
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng)
        return self

    def shapes(self, in_shape):
        """Per-layer output shapes (without batch axis) for a given input shape."""
        out = []
        shape = tuple(in_shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = tuple(layer.out_shape(shape))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            out.append(shape)
        return out

    def forward(self, x, training=False):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim < 2:
            raise ShapeError("input needs a leading batch axis")
        self.shapes(x.shape[1:])
        acts, caches = [], []
        h = x
        for layer in self.layers:
            h, cache = layer.forward(h, training)
            acts.append(h)
            caches.append(cache)
        return Trace(self, x, acts, caches, training)

    def __call__(self, x):
        return self.forward(x).output

    def backward(self, trace, upstream, extra=None):
        """Backpropagate ``upstream`` (gradient of the output).

        ``extra`` maps layer index -> additional gradient with respect to that
        layer's output, used for losses on intermediate activations.
        Returns ``(param_grads, input_grad)`` where ``param_grads[i]`` is a dict
        of gradients for layer ``i``.
        """
        if trace is None or not isinstance(trace, Trace) or trace.caches is None:
            raise ValueError("backward requires the trace of a forward pass")
        if trace.network is not self:
            raise ValueError("trace belongs to a different network")
        extra = extra or {}
        g = None if upstream is None else np.asarray(upstream, dtype=np.float64)
        if g is not None and g.shape != trace.output.shape:
            raise ShapeError(f"upstream gradient shape {g.shape} != output shape {trace.output.shape}")
        grads = [None] * len(self.layers)
        for i in range(len(self.layers) - 1, -1, -1):
            if i in extra:
                g = extra[i] if g is None else g + extra[i]
            if g is None:
                grads[i] = {k: np.zeros_like(self.layers[i].params[k]) for k in self.layers[i].trainable}
                continue
            g, grads[i] = self.layers[i].backward(trace.caches[i], g)
        if g is None:
            g = np.zeros_like(trace.input)
        return grads, g

    def parameters(self):
        """Trainable parameters as ``[(key, array)]`` with keys ``"i.name"``."""
        return [(f"{i}.{k}", layer.params[k]) for i, layer in enumerate(self.layers) for k in layer.trainable]

    def flat_grads(self, grads):
        return [grads[i][k] for i, layer in enumerate(self.layers) for k in layer.trainable]

    def fc_features(self):
        """Layer indices holding the post-ReLU output of each FC-ReLU pair."""
        feats = []
        for i, layer in enumerate(self.layers[:-1]):
            if layer.kind == "FullyConnected" and self.layers[i + 1].kind == "ReLU":
                feats.append(i + 1)
        return feats

    def commit_stats(self, trace):
        """Blend the batch statistics of a training-mode trace into running averages."""
        if not trace.training:
            return
        for layer, cache in zip(self.layers, trace.caches):
            if layer.kind != "BatchNorm":
                continue
            _, _, _, _, mean, var, m = cache
            unbiased = var * m / max(m - 1, 1)
            mom = layer.momentum
            layer.params["running_mean"] = (1 - mom) * layer.params["running_mean"] + mom * mean
            layer.params["running_var"] = (1 - mom) * layer.params["running_var"] + mom * unbiased

    def copy(self):
        return network_from_dict(network_to_dict(self))

    def to_json(self):
        return serialize_network(self)


def forward(net, x, training=False):
    return net.forward(x, training)


def backward(net, trace, upstream, extra=None):
    return net.backward(trace, upstream, extra)


def mlp(name, sizes, final_relu=False):
    """FC-ReLU stack with the given layer widths."""
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Linear(a, b))
        if i < len(sizes) - 2 or final_relu:
            layers.append(ReLU())
    return Network(name, layers)


# --- Adam -------------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state, params, grads):
    """Apply one Adam update in place.

    ``params`` is a list of ``(key, array)`` pairs as from
    :meth:`Network.parameters` and ``grads`` the matching list of arrays.
    All gradients are validated before any parameter moves.
    """
    if len(params) != len(grads):
        raise ShapeError("params and grads differ in length")
    for (key, p), g in zip(params, grads):
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {key} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            bad = int(np.size(g) - np.count_nonzero(np.isfinite(g)))
            raise NonFiniteError(f"non-finite gradient for {key} at step {state.step + 1} ({bad} entries)")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for (key, p), g in zip(params, grads):
        m = state.m.get(key)
        if m is None:
            m = np.zeros_like(p)
            state.v[key] = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * g * g
        state.m[key] = m
        state.v[key] = v
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# --- serialisation ------------------------------------------------------------

def network_to_dict(net):
    layers = []
    for layer in net.layers:
        layers.append({
            "kind": layer.kind,
            "hyper": layer.hyper,
            "params": [
                {"name": k, "shape": list(v.shape), "data": [float(x) for x in v.ravel()]}
                for k, v in layer.params.items()
            ],
        })
    return {"version": FORMAT_VERSION, "name": net.name, "meta": net.meta, "layers": layers}


def network_from_dict(doc):
    if not isinstance(doc, dict):
        raise FormatError("network document must be an object")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"unsupported network format version {doc.get('version')!r}")
    try:
        layers = []
        for i, spec in enumerate(doc["layers"]):
            cls = LAYER_KINDS.get(spec["kind"])
            if cls is None:
                raise FormatError(f"layer {i}: unknown kind {spec['kind']!r}")
            layer = cls(**spec["hyper"])
            for p in spec["params"]:
                name, shape, data = p["name"], tuple(p["shape"]), p["data"]
                if name not in layer.params:
                    raise FormatError(f"layer {i}: unexpected parameter {name!r}")
                if len(data) != math.prod(shape):
                    raise FormatError(
                        f"layer {i}: parameter {name!r} declares shape {list(shape)} "
                        f"but carries {len(data)} values")
                if shape != layer.params[name].shape:
                    raise FormatError(f"layer {i}: parameter {name!r} has shape {list(shape)}, "
                                      f"expected {list(layer.params[name].shape)}")
                layer.params[name] = np.array(data, dtype=np.float64).reshape(shape)
            layers.append(layer)
        return Network(doc["name"], layers, dict(doc.get("meta") or {}))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"malformed network document: {exc!r}") from None


def serialize_network(net):
    return json.dumps(network_to_dict(net), indent=1, allow_nan=False)


def deserialize_network(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"network file is not valid JSON: {exc}") from None
    return network_from_dict(doc)


def save_network(net, path):
    with open(path, "w") as f:
        f.write(serialize_network(net))


def load_network(path):
    with open(path) as f:
        return deserialize_network(f.read())
