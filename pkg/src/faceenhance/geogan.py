"""Geometry enhancement GAN over 32-dim geometry codes.

Generator: FC-ReLU 32->64 x4 then FC->32. Discriminator: the same trunk with
an FC->1 head. Both networks see codes standardised per dimension with
statistics pooled over the two training sets; all losses are computed in that
standardised space.

Discriminator loss (unattractive and generated codes are both negatives):

    mean D(G(x))^2 + mean D(x)^2 + mean (1 - D(y))^2

Generator loss (unpaired, so expectations become batch means):

    mean (1 - D(G(x)))^2
    + sum_i || mean_b f_i(G(x)) - mean_b f_i(y) ||_2     (i = 1..4 FC-ReLU outputs)
    + || mean_b G(x) - mean_b y ||_2
"""
import csv
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .tensorcore import AdamState, NonFiniteError, adam_step, load_network, mlp, save_network

CODE_DIM = 32
HIDDEN = 64


@dataclass
class GeoGanConfig:
    lr: float = 1e-4
    batch_size: int = 8
    iterations: int = 15000
    seed: int = 0
    feature_layers: tuple = (1, 2, 3, 4)
    feature_net: str = "discriminator"   # or "generator" for the literal reading
    pairing: str = "mean"                # or "random": per-sample pairing within the batch
    residual: bool = True                # G(l) = l + f(l)
    checkpoint_every: int = 1000
    eval_size: int = 256

    def __post_init__(self):
        self.feature_layers = tuple(int(i) for i in self.feature_layers)
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.feature_net not in ("discriminator", "generator"):
            raise ValueError("feature_net must be 'discriminator' or 'generator'")
        if self.pairing not in ("mean", "random"):
            raise ValueError("pairing must be 'mean' or 'random'")
        if not set(self.feature_layers) <= {1, 2, 3, 4}:
            raise ValueError("feature layers are indexed 1..4")

    def to_dict(self):
        d = asdict(self)
        d["feature_layers"] = list(self.feature_layers)
        return d


@dataclass
class GeoGanModel:
    generator: object
    discriminator: object
    shift: np.ndarray = field(default_factory=lambda: np.zeros(CODE_DIM))
    scale: np.ndarray = field(default_factory=lambda: np.ones(CODE_DIM))
    residual: bool = True

    def normalize(self, codes):
        return (np.asarray(codes, dtype=np.float64) - self.shift) / self.scale

    def denormalize(self, z):
        return z * self.scale + self.shift

    def generate_normalized(self, z):
        out = self.generator(z)
        return z + out if self.residual else out


def build_model(seed=0, residual=True, code_dim=CODE_DIM, hidden=HIDDEN):
    trunk = [code_dim] + [hidden] * 4
    g = mlp("G_geo", trunk + [code_dim]).init(seed)
    d = mlp("D_geo", trunk + [1]).init(seed + 1)
    return GeoGanModel(g, d, np.zeros(code_dim), np.ones(code_dim), residual)


def _feature_index(net, layers):
    idx = net.fc_features()
    return [idx[i - 1] for i in layers]


def geo_d_loss(model, batch_x, batch_y):
    """Discriminator loss and its gradients (list of per-layer dicts)."""
    zx = model.normalize(batch_x)
    zy = model.normalize(batch_y)
    if len(zx) == 0 or len(zy) == 0:
        raise ValueError("batches must be nonempty")
    fake = model.generate_normalized(zx)
    nx, ny = len(zx), len(zy)
    D = model.discriminator
    tr = D.forward(np.vstack([fake, zx, zy]))
    s = tr.output[:, 0]
    if not np.all(np.isfinite(s)):
        raise NonFiniteError("non-finite discriminator scores")
    sf, sx, sy = s[:nx], s[nx:2 * nx], s[2 * nx:]
    loss = float(np.mean(sf ** 2) + np.mean(sx ** 2) + np.mean((1.0 - sy) ** 2))
    up = np.concatenate([2.0 * sf / nx, 2.0 * sx / nx, -2.0 * (1.0 - sy) / ny])[:, None]
    grads, _ = D.backward(tr, up)
    return loss, grads


def _norm_grad(v):
    n = float(np.linalg.norm(v))
    return n, (v / n if n > 0 else np.zeros_like(v))


def _feature_terms(fake_feats, real_feats, pairing):
    """Value and gradients wrt fake / real features of the matching term."""
    nf, nr = len(fake_feats), len(real_feats)
    if pairing == "mean":
        n, u = _norm_grad(fake_feats.mean(axis=0) - real_feats.mean(axis=0))
        return n, np.tile(u / nf, (nf, 1)), np.tile(-u / nr, (nr, 1))
    if nf != nr:
        raise ValueError("random pairing needs equal batch sizes")
    diff = fake_feats - real_feats
    norms = np.linalg.norm(diff, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    g = np.where(norms[:, None] > 0, diff / safe[:, None], 0.0) / nf
    return float(norms.mean()), g, -g


def geo_g_loss(model, batch_x, batch_y, config=None):
    """Generator loss and its gradients with the discriminator held fixed."""
    config = config or GeoGanConfig()
    zx = model.normalize(batch_x)
    zy = model.normalize(batch_y)
    if len(zx) == 0 or len(zy) == 0:
        raise ValueError("batches must be nonempty")
    G, D = model.generator, model.discriminator
    nx = len(zx)
    gtr = G.forward(zx)
    out = zx + gtr.output if model.residual else gtr.output
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite generator output")

    dtr = D.forward(out)
    s = dtr.output[:, 0]
    adv = float(np.mean((1.0 - s) ** 2))
    d_up = (-2.0 * (1.0 - s) / nx)[:, None]

    F = D if config.feature_net == "discriminator" else G
    feat_idx = _feature_index(F, config.feature_layers)
    ftr_fake = dtr if F is D else G.forward(out)
    ftr_real = F.forward(zy)
    feat_total = 0.0
    fake_extra, real_extra = {}, {}
    for li in feat_idx:
        val, gf, gr = _feature_terms(ftr_fake.activations[li], ftr_real.activations[li], config.pairing)
        feat_total += val
        fake_extra[li] = gf
        real_extra[li] = gr

    out_val, g_out_term, _ = _feature_terms(out, zy, config.pairing)

    g_grads_extra = []
    if F is D:
        _, g_out = D.backward(dtr, d_up, fake_extra)
    else:
        _, g_out = D.backward(dtr, d_up)
        pg, gin = G.backward(ftr_fake, None, fake_extra)
        g_out = g_out + gin
        g_grads_extra.append(pg)
        pg_real, _ = G.backward(ftr_real, None, real_extra)
        g_grads_extra.append(pg_real)
    g_out = g_out + g_out_term
    grads, _ = G.backward(gtr, g_out)
    for extra in g_grads_extra:
        for layer_g, layer_e in zip(grads, extra):
            for k in layer_g:
                layer_g[k] = layer_g[k] + layer_e[k]
    loss = adv + feat_total + out_val
    return float(loss), grads


def enhance_code(model, l_x):
    """Map a geometry code (or a batch of them) through the generator."""
    l_x = np.asarray(l_x, dtype=np.float64)
    single = l_x.ndim == 1
    z = model.normalize(np.atleast_2d(l_x))
    out = model.denormalize(model.generate_normalized(z))
    return out[0] if single else out


def discriminator_score(model, codes):
    return model.discriminator(model.normalize(codes))[:, 0]


class TrainingDiverged(RuntimeError):
    def __init__(self, message, checkpoint, history):
        super().__init__(message)
        self.checkpoint = checkpoint
        self.history = history


@dataclass
class TrainResult:
    model: GeoGanModel
    history: list                     # (iteration, d_loss, g_loss)
    checkpoints: list                 # dicts with iteration and diagnostics
    config: GeoGanConfig


def _snapshot(model):
    return GeoGanModel(model.generator.copy(), model.discriminator.copy(),
                       model.shift.copy(), model.scale.copy(), model.residual)


def train_critic(codes_x, codes_y, seed=0, iterations=3000, batch_size=32, lr=1e-3):
    """Fixed reference discriminator: same architecture, trained on real codes only.

    Scores unattractive codes towards 0 and attractive codes towards 1 with the
    least-squares objective. Used to compare generator checkpoints on a common
    scale, since the adversarial discriminator itself keeps moving.
    """
    X = np.asarray(codes_x, dtype=np.float64)
    Y = np.asarray(codes_y, dtype=np.float64)
    rng = np.random.default_rng([seed, 7])
    model = build_model(int(rng.integers(2 ** 31)), True, X.shape[1])
    pooled = np.vstack([X, Y])
    model.shift = pooled.mean(axis=0)
    model.scale = np.maximum(pooled.std(axis=0), 1e-8)
    D = model.discriminator
    state = AdamState(lr=lr)
    for _ in range(iterations):
        zx = model.normalize(X[rng.choice(len(X), batch_size)])
        zy = model.normalize(Y[rng.choice(len(Y), batch_size)])
        tr = D.forward(np.vstack([zx, zy]))
        s = tr.output[:, 0]
        up = np.concatenate([2.0 * s[:batch_size], -2.0 * (1.0 - s[batch_size:])]) / batch_size
        grads, _ = D.backward(tr, up[:, None])
        adam_step(state, D.parameters(), D.flat_grads(grads))
    return lambda codes: discriminator_score(model, codes)


def train_geometry_gan(config, codes_x, codes_y, checkpoint_dir=None, on_checkpoint=None, critic=None):
    """Alternating 1:1 D-step / G-step training with Adam.

    Deterministic for a given seed. Every ``checkpoint_every`` iterations (and
    at the end) a snapshot is taken and scored on fixed evaluation subsets:
    ``score_gap`` is mean D(y) - mean D(G(x)) under that checkpoint's
    discriminator, ``critic_gap`` the same gap under the fixed ``critic`` (if
    given) and ``mean_gap`` is ||mean G(x) - mean y|| in code units.
    """
    X = np.array(codes_x, dtype=np.float64, copy=True)
    Y = np.array(codes_y, dtype=np.float64, copy=True)
    if len(X) == 0 or len(Y) == 0:
        raise ValueError("both code sets must be nonempty")
    if X.shape[1] != Y.shape[1]:
        raise ValueError("code sets differ in dimension")
    dim = X.shape[1]
    rng = np.random.default_rng(config.seed)
    model = build_model(int(rng.integers(2 ** 31)), config.residual, dim)
    pooled = np.vstack([X, Y])
    model.shift = pooled.mean(axis=0)
    model.scale = np.maximum(pooled.std(axis=0), 1e-8)

    d_state = AdamState(lr=config.lr)
    g_state = AdamState(lr=config.lr)
    B = config.batch_size
    eval_x = X[:config.eval_size]
    eval_y = Y[:config.eval_size]
    mean_y = eval_y.mean(axis=0)

    history, checkpoints = [], []

    def take_checkpoint(it):
        snap = _snapshot(model)
        gx = enhance_code(snap, eval_x)
        info = {
            "iteration": it,
            "score_gap": float(discriminator_score(snap, eval_y).mean() - discriminator_score(snap, gx).mean()),
            "mean_gap": float(np.linalg.norm(gx.mean(axis=0) - mean_y)),
            "critic_gap": float(critic(eval_y).mean() - critic(gx).mean()) if critic else None,
            "model": snap,
        }
        checkpoints.append(info)
        if checkpoint_dir:
            save_checkpoint(snap, config, it, os.path.join(checkpoint_dir, f"iter_{it:06d}"))
        if on_checkpoint:
            on_checkpoint(info)
        return info

    last_good = take_checkpoint(0)
    for it in range(1, config.iterations + 1):
        bx = X[rng.choice(len(X), B, replace=len(X) < B)]
        by = Y[rng.choice(len(Y), B, replace=len(Y) < B)]
        try:
            d_loss, d_grads = geo_d_loss(model, bx, by)
            adam_step(d_state, model.discriminator.parameters(), model.discriminator.flat_grads(d_grads))
            g_loss, g_grads = geo_g_loss(model, bx, by, config)
            adam_step(g_state, model.generator.parameters(), model.generator.flat_grads(g_grads))
        except (NonFiniteError, FloatingPointError) as exc:
            raise TrainingDiverged(f"training diverged at iteration {it}: {exc}", last_good, history) from exc
        if not (np.isfinite(d_loss) and np.isfinite(g_loss)):
            raise TrainingDiverged(f"non-finite loss at iteration {it}", last_good, history)
        history.append((it, d_loss, g_loss))
        if it % config.checkpoint_every == 0 or it == config.iterations:
            last_good = take_checkpoint(it)
    return TrainResult(model, history, checkpoints, config)


# --- persistence ---------------------------------------------------------------

def save_checkpoint(model, config, iteration, path):
    os.makedirs(path, exist_ok=True)
    save_network(model.generator, os.path.join(path, "generator.json"))
    save_network(model.discriminator, os.path.join(path, "discriminator.json"))
    meta = {
        "version": 1,
        "iteration": int(iteration),
        "config": config.to_dict(),
        "residual": bool(model.residual),
        "shift": [float(v) for v in model.shift],
        "scale": [float(v) for v in model.scale],
    }
    with open(os.path.join(path, "checkpoint.json"), "w") as f:
        json.dump(meta, f, indent=1)


def load_checkpoint(path):
    with open(os.path.join(path, "checkpoint.json")) as f:
        meta = json.load(f)
    if meta.get("version") != 1:
        raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
    g = load_network(os.path.join(path, "generator.json"))
    d = load_network(os.path.join(path, "discriminator.json"))
    model = GeoGanModel(g, d, np.array(meta["shift"]), np.array(meta["scale"]), bool(meta["residual"]))
    return model, meta


def write_history(history, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["iteration", "d_loss", "g_loss"])
        for it, dl, gl in history:
            w.writerow([it, repr(dl), repr(gl)])
