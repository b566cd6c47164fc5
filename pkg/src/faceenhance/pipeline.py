"""End-to-end geometry enhancement: landmarks -> code -> enhanced code -> warp."""
import csv
import json
import logging
import os
import time
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .applosses import LossWeights, ToyIdentityDescriptor
from .geoembed import LandmarkSet, extract_distances, load_pca, pca_encode
from .geogan import enhance_code, load_checkpoint
from .knn import DEFAULT_K, knn_enhance, load_bank
from .lmsolver import LmOptions, NotConvergedWarning, recover_enhanced_landmarks
from .warp import as_image, warp_face

log = logging.getLogger(__name__)

STAGES = ("x_to_lx", "lx_to_ly", "ly_to_y")
METHODS = ("gan", "knn")


class ArtifactError(RuntimeError):
    """A trained artifact is missing or unreadable."""


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class PipelineConfig:
    pca: str = None
    gan_checkpoint: str = None
    extractor: str = None
    bank: str = None
    weights: LossWeights = field(default_factory=LossWeights)
    solver: LmOptions = field(default_factory=LmOptions)
    seed: int = 0
    method: str = "gan"
    k_neighbors: int = DEFAULT_K

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.solver, dict):
            self.solver = LmOptions(**self.solver)
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")

    def to_dict(self):
        d = asdict(self)
        d["version"] = 1
        return d

    @classmethod
    def from_dict(cls, doc, base_dir="."):
        doc = dict(doc)
        version = doc.pop("version", 1)
        if version != 1:
            raise ValueError(f"unsupported config version {version!r}")
        unknown = set(doc) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        for key in ("pca", "gan_checkpoint", "extractor", "bank"):
            if doc.get(key):
                doc[key] = os.path.normpath(os.path.join(base_dir, doc[key]))
        return cls(**doc)

    @classmethod
    def load(cls, path):
        """Read a JSON config; relative artifact paths resolve against its directory."""
        with open(path) as f:
            doc = json.load(f)
        return cls.from_dict(doc, os.path.dirname(os.path.abspath(path)))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)

    def required(self, method=None):
        method = method or self.method
        return ["pca", "gan_checkpoint" if method == "gan" else "bank"]


@dataclass
class Artifacts:
    pca: object
    model: object = None
    bank: object = None

    @property
    def mesh(self):
        return self.pca.mesh


def load_artifacts(config, method=None):
    method = method or config.method
    out = {}
    for key in config.required(method):
        path = getattr(config, key)
        if not path or not os.path.exists(path):
            raise ArtifactError(f"{key} artifact not found: {path!r}")
        try:
            if key == "pca":
                out["pca"] = load_pca(path)
            elif key == "gan_checkpoint":
                out["model"] = load_checkpoint(path)[0]
            else:
                out["bank"] = load_bank(path)
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise ArtifactError(f"cannot load {key} from {path}: {exc}") from exc
    if out["pca"].mesh is None:
        raise ArtifactError("PCA model carries no mesh")
    return Artifacts(**out)


@dataclass
class EnhanceResult:
    image: np.ndarray
    landmarks: np.ndarray       # recovered (60, 2) points, canvas frame
    code_x: np.ndarray
    code_y: np.ndarray
    fit: object
    timings: dict
    warnings: list = field(default_factory=list)


def enhance_face(img, landmarks, config, method=None, artifacts=None):
    """Enhance one face.

    ``landmarks`` are in canvas units; an image of a different size is
    treated as the canvas resampled to that size.
    """
    method = method or config.method
    if method not in METHODS:
        raise ValueError(f"method must be one of {METHODS}, got {method!r}")
    art = artifacts or load_artifacts(config, method)
    img = as_image(img)
    lms = landmarks if isinstance(landmarks, LandmarkSet) else LandmarkSet(np.asarray(landmarks, dtype=np.float64))
    timings = {}
    notes = []
    t_start = time.perf_counter()

    stage = STAGES[0]
    t0 = time.perf_counter()
    try:
        l_x = pca_encode(art.pca, extract_distances(lms, art.mesh))
    except Exception as exc:
        raise StageError(stage, exc) from exc
    timings[stage] = time.perf_counter() - t0

    stage = STAGES[1]
    t0 = time.perf_counter()
    try:
        if method == "gan":
            l_y = enhance_code(art.model, l_x)
        else:
            l_y = knn_enhance(art.bank, l_x, config.k_neighbors)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    timings[stage] = time.perf_counter() - t0

    stage = STAGES[2]
    t0 = time.perf_counter()
    try:
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            fit = recover_enhanced_landmarks(art.pca, art.mesh, l_y, lms.points, config.solver)
            # landmarks live on the canvas; the image may be sampled at another size
            k = np.array([img.shape[1] / lms.canvas[0], img.shape[0] / lms.canvas[1]])
            out = warp_face(img, lms.points * k, fit.points * k, art.mesh)
    except Exception as exc:
        raise StageError(stage, exc) from exc
    timings[stage] = time.perf_counter() - t0
    timings["total"] = time.perf_counter() - t_start

    for w in caught:
        notes.append(str(w.message))
        if issubclass(w.category, NotConvergedWarning):
            log.warning("%s", w.message)
    return EnhanceResult(out, fit.points, l_x, l_y, fit, timings, notes)


def write_timings(timings, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stage", "seconds"])
        for stage in STAGES + ("total",):
            w.writerow([stage, f"{timings[stage]:.6f}"])


def eval_identity(x, x_hat, psi=None):
    """Cosine similarity of identity descriptors."""
    psi = psi or ToyIdentityDescriptor()
    a = np.asarray(psi(as_image(x)), dtype=np.float64)
    b = np.asarray(psi(as_image(x_hat)), dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ValueError("identity descriptor is the zero vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))
