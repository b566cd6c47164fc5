"""Synthetic parametric faces: landmark sets, polygon renders and codes.

Two classes share identity parameters (face length, eye spacing, ...) and
differ in the means of cheek width, eye size and mouth curvature: the
attractive class has narrower cheeks and larger eyes.
"""
import json
import os
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw

from . import layout
from .geoembed import LandmarkSet, pca_encode, pca_fit, reference_landmarks, save_landmarks, \
    save_pca, triangulate
from .layout import FaceParams

DEFAULT_N_ATTRACTIVE = 3702
DEFAULT_N_UNATTRACTIVE = 4096

CLASS_PARAMS = ("cheek_width", "eye_size", "mouth_curvature")
SHARED_STD = {
    "face_length": 3.0,
    "eye_spacing": 1.2,
    "nose_length": 2.0,
    "brow_height": 1.5,
    "mouth_width": 1.0,
}


@dataclass
class SyntheticFaceSpec:
    seed: int = 0
    # (mean, std) per class-dependent parameter
    attractive: dict = field(default_factory=lambda: {
        "cheek_width": (64.0, 2.0), "eye_size": (1.18, 0.06), "mouth_curvature": (2.0, 1.0)})
    unattractive: dict = field(default_factory=lambda: {
        "cheek_width": (74.0, 2.0), "eye_size": (0.92, 0.06), "mouth_curvature": (-0.5, 1.0)})
    jitter: float = 0.4          # per-landmark Gaussian noise, px
    resolution: int = 224

    def __post_init__(self):
        for name in CLASS_PARAMS:
            if name not in self.attractive or name not in self.unattractive:
                raise ValueError(f"missing class parameter {name!r}")
        if not self.attractive["cheek_width"][0] < self.unattractive["cheek_width"][0]:
            raise ValueError("attractive class must have the smaller mean cheek width")
        if not self.attractive["eye_size"][0] > self.unattractive["eye_size"][0]:
            raise ValueError("attractive class must have the larger mean eye size")

    def to_dict(self):
        return {"seed": self.seed, "attractive": {k: list(v) for k, v in self.attractive.items()},
                "unattractive": {k: list(v) for k, v in self.unattractive.items()},
                "jitter": self.jitter, "resolution": self.resolution}


def sample_face(rng, spec, cls):
    """One (FaceParams, landmarks) draw for class ``"attractive"`` or ``"unattractive"``."""
    dist = spec.attractive if cls == "attractive" else spec.unattractive
    base = FaceParams()
    values = {}
    for name in CLASS_PARAMS:
        mean, std = dist[name]
        values[name] = float(rng.normal(mean, std))
    for name, std in SHARED_STD.items():
        values[name] = float(rng.normal(getattr(base, name), std))
    params = FaceParams(**values)
    pts = layout.face_landmarks(params) + rng.normal(0.0, spec.jitter, (60, 2))
    pts = np.clip(pts, 0.5, layout.CANVAS - 0.5)
    return params, pts


@dataclass
class SyntheticDataset:
    ids: list
    labels: np.ndarray          # 1 attractive, 0 unattractive
    params: list
    landmarks: np.ndarray       # (N, 60, 2)
    spec: SyntheticFaceSpec

    def images(self, indices=None, resolution=None):
        idx = range(len(self.ids)) if indices is None else indices
        res = resolution or self.spec.resolution
        return np.stack([render_face(self.landmarks[i], res) for i in idx])


def synth_faces(spec, n_attractive=DEFAULT_N_ATTRACTIVE, n_unattractive=DEFAULT_N_UNATTRACTIVE):
    """Draw landmark sets; attractive faces first, each class from its own stream."""
    ids, labels, params, pts = [], [], [], []
    for cls, n, label, stream in (("attractive", n_attractive, 1, 1), ("unattractive", n_unattractive, 0, 2)):
        rng = np.random.default_rng([spec.seed, stream])
        prefix = "attr" if label else "unattr"
        for i in range(n):
            p, q = sample_face(rng, spec, cls)
            ids.append(f"{prefix}_{i:05d}")
            labels.append(label)
            params.append(p)
            pts.append(q)
    arr = np.array(pts) if pts else np.zeros((0, 60, 2))
    return SyntheticDataset(ids, np.array(labels, dtype=int), params, arr, spec)


SKIN = (222, 184, 152)
BACKGROUND = (46, 58, 84)


def render_face(points, resolution=224, supersample=2):
    """Filled-polygon render of a landmark set as an (R, R, 3) float image."""
    s = layout.CANVAS * supersample
    k = float(supersample)
    p = [(float(x) * k, float(y) * k) for x, y in np.asarray(points)]
    im = Image.new("RGB", (s, s), BACKGROUND)
    dr = ImageDraw.Draw(im)
    g = layout.GROUPS
    outline = [p[i] for i in g["chin"]] + [p[i] for i in reversed(g["left_eyebrow"] + g["right_eyebrow"])]
    dr.polygon(outline, fill=SKIN)
    for name in ("left_eyebrow", "right_eyebrow"):
        dr.line([p[i] for i in g[name]], fill=(70, 45, 30), width=int(4 * k))
    for name in ("left_eye", "right_eye"):
        dr.polygon([p[i] for i in g[name]], fill=(245, 245, 240))
        cx = sum(p[i][0] for i in g[name]) / 6.0
        cy = sum(p[i][1] for i in g[name]) / 6.0
        r = 3.5 * k
        dr.ellipse([cx - r, cy - r, cx + r, cy + r], fill=(40, 30, 25))
    dr.line([p[i] for i in g["nose_bridge"]], fill=(170, 120, 100), width=int(2 * k))
    dr.line([p[i] for i in g["nose_tip"]], fill=(150, 100, 85), width=int(2 * k))
    lips = [p[i] for i in g["top_lip"]] + [p[i] for i in g["bottom_lip"]]
    dr.polygon(lips, fill=(190, 70, 80))
    im = im.resize((resolution, resolution), Image.BOX)
    return np.asarray(im, dtype=np.float64) / 255.0


def reference_mesh():
    return triangulate(reference_landmarks())


def dataset_distances(ds, mesh):
    e = np.asarray(mesh.edges)
    diff = ds.landmarks[:, e[:, 0]] - ds.landmarks[:, e[:, 1]]
    return np.hypot(diff[..., 0], diff[..., 1])


def write_dataset(ds, out_dir, k=32, render=True):
    """Write landmark JSON, PNG renders, a manifest, the PCA model and codes.

    Output is byte-identical for identical inputs.
    """
    from .warp import write_png

    os.makedirs(os.path.join(out_dir, "landmarks"), exist_ok=True)
    if render:
        os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    entries = []
    for i, fid in enumerate(ds.ids):
        img_rel = os.path.join("images", fid + ".png")
        lm = LandmarkSet(ds.landmarks[i], image=img_rel if render else "")
        save_landmarks(lm, os.path.join(out_dir, "landmarks", fid + ".json"))
        if render:
            write_png(render_face(ds.landmarks[i], ds.spec.resolution), os.path.join(out_dir, img_rel))
        entries.append({
            "id": fid,
            "class": "attractive" if ds.labels[i] else "unattractive",
            "landmarks": os.path.join("landmarks", fid + ".json"),
            "image": img_rel if render else None,
            "params": ds.params[i].to_dict(),
        })
    mesh = reference_mesh()
    dists = dataset_distances(ds, mesh)
    pca = None
    codes = None
    if len(ds.ids) > k:
        pca = pca_fit(dists, k, mesh=mesh)
        save_pca(pca, os.path.join(out_dir, "pca.json"))
        codes = pca_encode(pca, dists)
        with open(os.path.join(out_dir, "codes.json"), "w") as f:
            json.dump({"version": 1, "ids": ds.ids, "labels": ds.labels.tolist(),
                       "codes": codes.tolist()}, f)
    manifest = {
        "version": 1,
        "spec": ds.spec.to_dict(),
        "n_attractive": int(ds.labels.sum()),
        "n_unattractive": int((ds.labels == 0).sum()),
        "n_edges": len(mesh.edges),
        "entries": entries,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=1)
    return manifest, pca, codes


def synth_dataset(spec, n_attractive=DEFAULT_N_ATTRACTIVE, n_unattractive=DEFAULT_N_UNATTRACTIVE,
                  out_dir=None, k=32, render=True):
    ds = synth_faces(spec, n_attractive, n_unattractive)
    if out_dir is not None:
        write_dataset(ds, out_dir, k=k, render=render)
    return ds


def load_dataset_codes(data_dir):
    with open(os.path.join(data_dir, "codes.json")) as f:
        doc = json.load(f)
    return doc["ids"], np.array(doc["labels"]), np.array(doc["codes"])
