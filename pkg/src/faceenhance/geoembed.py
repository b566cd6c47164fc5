"""Landmarks <-> geometry codes: Delaunay mesh, edge distances and PCA."""
import json
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import layout
from .predicates import incircle, orient2d

LANDMARK_VERSION = 1
PCA_VERSION = 1


class DegenerateInputError(ValueError):
    pass


@dataclass
class LandmarkSet:
    """60 named 2-D points in pixel units on a square canvas."""

    points: np.ndarray
    groups: dict = field(default_factory=lambda: dict(layout.GROUPS))
    image: str = ""
    canvas: tuple = (layout.CANVAS, layout.CANVAS)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        pts = self.points
        if pts.shape != (60, 2):
            raise ValueError(f"expected 60 (x, y) landmarks, got array of shape {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmarks must be finite")
        w, h = self.canvas
        if pts[:, 0].min() < 0 or pts[:, 1].min() < 0 or pts[:, 0].max() > w or pts[:, 1].max() > h:
            raise ValueError(f"landmarks must lie within the {w}x{h} canvas")
        if len({(float(x), float(y)) for x, y in pts}) != len(pts):
            raise ValueError("landmarks contain coincident points")

    def to_dict(self):
        return {
            "version": LANDMARK_VERSION,
            "image": self.image,
            "canvas": list(self.canvas),
            "points": [[float(x), float(y)] for x, y in self.points],
            "groups": self.groups,
        }


def _as_points(obj):
    return obj.points if isinstance(obj, LandmarkSet) else np.asarray(obj, dtype=np.float64)


def load_landmarks(path):
    with open(path) as f:
        doc = json.load(f)
    if doc.get("version") != LANDMARK_VERSION:
        raise ValueError(f"{path}: unsupported landmark file version {doc.get('version')!r}")
    return LandmarkSet(np.array(doc["points"], dtype=np.float64),
                       groups=doc.get("groups") or dict(layout.GROUPS),
                       image=doc.get("image", ""),
                       canvas=tuple(doc.get("canvas", (layout.CANVAS, layout.CANVAS))))


def save_landmarks(lms, path):
    with open(path, "w") as f:
        json.dump(lms.to_dict(), f, indent=1)


def reference_landmarks():
    """The bundled reference face (60 points, 150-edge Delaunay mesh)."""
    text = resources.files("faceenhance").joinpath("data/reference_landmarks.json").read_text()
    doc = json.loads(text)
    return LandmarkSet(np.array(doc["points"]), groups=doc["groups"], image=doc.get("image", ""))


# --- triangulation ------------------------------------------------------------

GHOST = -1


@dataclass
class FaceMesh:
    triangles: list   # counter-clockwise index triples
    edges: list       # sorted (i, j) with i < j, lexicographic order

    @property
    def n_edges(self):
        return len(self.edges)

    @classmethod
    def from_triangles(cls, triangles):
        tris = sorted(tuple(int(v) for v in t) for t in triangles)
        edges = set()
        for a, b, c in tris:
            for u, v in ((a, b), (b, c), (c, a)):
                edges.add((min(u, v), max(u, v)))
        return cls(tris, sorted(edges))

    def to_dict(self):
        return {"triangles": [list(t) for t in self.triangles], "edges": [list(e) for e in self.edges]}

    @classmethod
    def from_dict(cls, doc):
        return cls([tuple(t) for t in doc["triangles"]], [tuple(e) for e in doc["edges"]])


def _conflicts(tri, p, pts):
    a, b, c = tri
    if c == GHOST:
        o = orient2d(pts[a], pts[b], p)
        if o > 0:
            return True
        if o < 0:
            return False
        # on the hull line: only a point strictly inside the edge splits it
        lo = np.minimum(pts[a], pts[b])
        hi = np.maximum(pts[a], pts[b])
        axis = 0 if hi[0] - lo[0] >= hi[1] - lo[1] else 1
        return lo[axis] < p[axis] < hi[axis]
    return incircle(pts[a], pts[b], pts[c], p) > 0


def _canonical(tri):
    a, b, c = tri
    if a == GHOST:
        return (b, c, GHOST)
    if b == GHOST:
        return (c, a, GHOST)
    return tri


def triangulate(landmarks):
    """Delaunay triangulation by incremental (Bowyer-Watson) insertion.

    Points are inserted in index order against ghost triangles that close the
    hull, so no bounding super-triangle is needed. The in-circle test is
    strict, which keeps the earlier-inserted configuration when four points are
    cocircular; output is fully deterministic.
    """
    pts = _as_points(landmarks)
    n = len(pts)
    if pts.ndim != 2 or pts.shape[1] != 2 or n < 3:
        raise DegenerateInputError("need at least three 2-D points")
    if len({(float(x), float(y)) for x, y in pts}) != n:
        raise DegenerateInputError("points must be pairwise distinct")
    p = [(float(x), float(y)) for x, y in pts]

    k = next((i for i in range(2, n) if orient2d(p[0], p[1], p[i]) != 0), None)
    if k is None:
        raise DegenerateInputError("all points are collinear")
    a, b = (0, 1) if orient2d(p[0], p[1], p[k]) > 0 else (1, 0)
    tris = [(a, b, k), (b, a, GHOST), (k, b, GHOST), (a, k, GHOST)]

    for i in range(2, n):
        if i == k:
            continue
        q = p[i]
        cavity = [t for t in tris if _conflicts(t, q, p)]
        inner = set()
        for t in cavity:
            inner.update(((t[0], t[1]), (t[1], t[2]), (t[2], t[0])))
        new = []
        for u, v in inner:
            if (v, u) not in inner:
                new.append(_canonical((u, v, i)))
        cav = set(cavity)
        tris = [t for t in tris if t not in cav] + new

    solid = []
    for t in tris:
        if GHOST in t:
            continue
        j = t.index(min(t))
        solid.append(t[j:] + t[:j])
    return FaceMesh.from_triangles(solid)


def extract_distances(landmarks, mesh):
    """Euclidean length of every mesh edge, in mesh edge order."""
    pts = _as_points(landmarks)
    e = np.asarray(mesh.edges if isinstance(mesh, FaceMesh) else mesh, dtype=np.intp)
    if e.size and (e.min() < 0 or e.max() >= len(pts)):
        raise IndexError("mesh references a landmark index out of range")
    diff = pts[e[:, 0]] - pts[e[:, 1]]
    return np.hypot(diff[:, 0], diff[:, 1])


# --- PCA -------------------------------------------------------------------------

@dataclass
class PcaModel:
    mean: np.ndarray
    components: np.ndarray      # (k, D), orthonormal rows
    eigenvalues: np.ndarray     # (k,), descending
    explained_ratio: float
    total_variance: float
    n_samples: int
    mesh: FaceMesh = None

    @property
    def k(self):
        return self.components.shape[0]

    @property
    def dim(self):
        return self.components.shape[1]

    def to_dict(self):
        return {
            "version": PCA_VERSION,
            "n_edges": int(self.dim),
            "k": int(self.k),
            "n_samples": int(self.n_samples),
            "explained_ratio": float(self.explained_ratio),
            "total_variance": float(self.total_variance),
            "mean": [float(v) for v in self.mean],
            "components": [[float(v) for v in row] for row in self.components],
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "mesh": self.mesh.to_dict() if self.mesh is not None else None,
        }

    @classmethod
    def from_dict(cls, doc):
        if doc.get("version") != PCA_VERSION:
            raise ValueError(f"unsupported PCA model version {doc.get('version')!r}")
        comps = np.array(doc["components"], dtype=np.float64).reshape(doc["k"], doc["n_edges"])
        mesh = FaceMesh.from_dict(doc["mesh"]) if doc.get("mesh") else None
        return cls(np.array(doc["mean"]), comps, np.array(doc["eigenvalues"]),
                   doc["explained_ratio"], doc["total_variance"], doc["n_samples"], mesh)


def pca_fit(samples, k=32, mesh=None):
    """Top-``k`` principal subspace of the samples.

    Eigenvalues are those of the population covariance (divisor N), so the
    mean squared reconstruction error over the fitting set equals the sum of
    the discarded eigenvalues. Each component is signed so that its
    largest-magnitude entry is positive.
    """
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("samples must be a 2-D array (n_samples, dim)")
    n, d = X.shape
    if k < 1 or k > d:
        raise ValueError(f"k must be in [1, {d}]")
    if n < k + 1:
        raise ValueError(f"need at least k+1 = {k + 1} samples, got {n}")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    comps = evecs[:, order].T
    idx = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(d), idx])
    signs[signs == 0] = 1.0
    comps = comps * signs[:, None]
    total = float(evals.sum())
    kept = evals[:k]
    ratio = float(kept.sum() / total) if total > 0 else 1.0
    return PcaModel(mean, np.ascontiguousarray(comps[:k]), kept.copy(), ratio, total, n, mesh)


def pca_encode(model, d):
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1] != model.dim:
        raise ValueError(f"distance vector has length {d.shape[-1]}, model expects {model.dim}")
    return (d - model.mean) @ model.components.T


def pca_decode(model, c):
    c = np.asarray(c, dtype=np.float64)
    if c.shape[-1] != model.k:
        raise ValueError(f"code has length {c.shape[-1]}, model expects {model.k}")
    return model.mean + c @ model.components


def save_pca(model, path):
    with open(path, "w") as f:
        json.dump(model.to_dict(), f)


def load_pca(path):
    with open(path) as f:
        return PcaModel.from_dict(json.load(f))


def load_landmark_dir(path):
    """All landmark files in a directory, sorted by file name.

    JSON files without a ``points`` entry (manifests and the like) are skipped;
    malformed landmark files raise.
    """
    names = sorted(n for n in os.listdir(path) if n.endswith(".json"))
    out = []
    for name in names:
        full = os.path.join(path, name)
        with open(full) as f:
            doc = json.load(f)
        if not isinstance(doc, dict) or "points" not in doc:
            continue
        out.append((name, load_landmarks(full)))
    return out
