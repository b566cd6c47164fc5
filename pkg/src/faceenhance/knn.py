"""Nearest-neighbour geometry baseline over a bank of attractive codes.

Distances are accumulated one dimension at a time and weighted sums one
neighbour at a time, so a plain-Python loop reproduces the results exactly.
"""
import json
from dataclasses import dataclass

import numpy as np

DEFAULT_K = 3


@dataclass
class GeometryBank:
    codes: np.ndarray
    ids: list

    def __post_init__(self):
        self.codes = np.atleast_2d(np.asarray(self.codes, dtype=np.float64))
        if self.codes.size == 0 or len(self.codes) == 0:
            raise ValueError("geometry bank is empty")
        if len(self.ids) != len(self.codes):
            raise ValueError(f"{len(self.ids)} ids for {len(self.codes)} codes")
        if not np.all(np.isfinite(self.codes)):
            raise ValueError("bank codes must be finite")
        self.ids = [str(i) for i in self.ids]

    def __len__(self):
        return len(self.codes)

    @property
    def dim(self):
        return self.codes.shape[1]

    def to_dict(self):
        return {"version": 1, "ids": list(self.ids), "codes": self.codes.tolist()}

    @classmethod
    def from_dict(cls, doc):
        if doc.get("version") != 1:
            raise ValueError(f"unsupported bank version {doc.get('version')!r}")
        return cls(np.array(doc["codes"], dtype=np.float64), list(doc["ids"]))


def save_bank(bank, path):
    with open(path, "w") as f:
        json.dump(bank.to_dict(), f)


def load_bank(path):
    with open(path) as f:
        return GeometryBank.from_dict(json.load(f))


def _distances(bank, l_x):
    q = np.asarray(l_x, dtype=np.float64).reshape(-1)
    if q.shape[0] != bank.dim:
        raise ValueError(f"query has dimension {q.shape[0]}, bank has {bank.dim}")
    acc = np.zeros(len(bank))
    for j in range(bank.dim):
        d = bank.codes[:, j] - q[j]
        acc = acc + d * d
    return np.sqrt(acc)


def nearest_neighbors(bank, l_x, K=DEFAULT_K):
    """Indices and distances of the K nearest codes; ties keep bank order."""
    if not 1 <= K <= len(bank):
        raise ValueError(f"K={K} must lie in [1, {len(bank)}]")
    d = _distances(bank, l_x)
    order = np.argsort(d, kind="stable")[:K]
    return order, d[order]


def knn_enhance(bank, l_x, K=DEFAULT_K):
    """Inverse-distance-weighted mean of the K nearest bank codes."""
    idx, dist = nearest_neighbors(bank, l_x, K)
    if dist[0] == 0.0:
        return bank.codes[idx[0]].copy()
    w = 1.0 / dist
    wsum = 0.0
    for wi in w:
        wsum += wi
    out = np.zeros(bank.dim)
    for wi, i in zip(w, idx):
        out = out + (wi / wsum) * bank.codes[i]
    return out


def nearest_reference(bank, l_x):
    idx, _ = nearest_neighbors(bank, l_x, 1)
    return bank.ids[int(idx[0])]
