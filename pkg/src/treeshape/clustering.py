"""Agglomerative hierarchical clustering of a distance matrix.

Clusters are merged pairwise, closest first, with single / complete /
average linkage.  Ties are broken toward the lexicographically smallest
cluster-id pair so results are reproducible.  Merge records follow the
usual convention: leaves are 0..m-1 and merge k creates cluster m+k.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metric import DistanceMatrix

LINKAGE_METHODS = ("single", "complete", "average")


@dataclass(frozen=True)
class Dendrogram:
    """Merge history of an agglomerative clustering run."""

    merges: np.ndarray  # (m-1, 4): left id, right id, height, new size
    leaf_labels: tuple[str, ...]

    def __post_init__(self) -> None:
        merges = np.array(self.merges, dtype=float).reshape(-1, 4)
        if len(merges) != len(self.leaf_labels) - 1:
            raise ValueError("a dendrogram over m leaves needs exactly m-1 merges")
        merges.flags.writeable = False
        object.__setattr__(self, "merges", merges)
        object.__setattr__(self, "leaf_labels", tuple(self.leaf_labels))

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_labels)

    def heights(self) -> np.ndarray:
        return self.merges[:, 2]

    def to_dict(self) -> dict:
        return {
            "leaf_labels": list(self.leaf_labels),
            "merges": [
                {
                    "left": int(l),
                    "right": int(r),
                    "height": float(h),
                    "size": int(s),
                }
                for l, r, h, s in self.merges
            ],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def from_dict(cls, data: dict) -> "Dendrogram":
        merges = np.array(
            [[m["left"], m["right"], m["height"], m["size"]] for m in data["merges"]],
            dtype=float,
        ).reshape(-1, 4)
        return cls(merges=merges, leaf_labels=tuple(data["leaf_labels"]))

    @classmethod
    def load(cls, path: str | Path) -> "Dendrogram":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _validate_matrix(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim != 2 or values.shape[0] != values.shape[1]:
        raise ValueError("distance matrix must be square")
    if not np.all(np.isfinite(values)):
        raise ValueError("distance matrix has non-finite entries")
    if np.any(values < 0):
        raise ValueError("distance matrix has negative entries")
    if np.max(np.abs(values - values.T)) > 1e-9:
        raise ValueError("distance matrix asymmetry exceeds 1e-9")
    return 0.5 * (values + values.T)


def linkage(
    d: DistanceMatrix | np.ndarray,
    method: str = "single",
    labels: tuple[str, ...] | None = None,
) -> Dendrogram:
    """Agglomerate all leaves into one tree of m-1 merges."""
    if isinstance(d, DistanceMatrix):
        labels = d.labels
        values = d.values
    else:
        values = d
    values = _validate_matrix(values)
    m = len(values)
    if labels is None:
        labels = tuple(str(i) for i in range(m))
    if m < 2:
        raise ValueError("need at least 2 leaves")

    active: dict[int, int] = {i: 1 for i in range(m)}  # cluster id -> size
    dist: dict[tuple[int, int], float] = {
        (i, j): float(values[i, j]) for i in range(m) for j in range(i + 1, m)
    }
    merges = []
    next_id = m
    for _ in range(m - 1):
        (ci, cj) = min(dist, key=lambda key: (dist[key], key))
        height = dist[(ci, cj)]
        size = active[ci] + active[cj]
        merges.append((ci, cj, height, size))
        for other in active:
            if other in (ci, cj):
                continue
            a = dist.pop((min(ci, other), max(ci, other)))
            b = dist.pop((min(cj, other), max(cj, other)))
            if method == "single":
                new = min(a, b)
            elif method == "complete":
                new = max(a, b)
            elif method == "average":
                new = (active[ci] * a + active[cj] * b) / size
            else:
                raise ValueError(f"unknown linkage method: {method!r}")
            dist[(other, next_id)] = new
        del dist[(ci, cj)]
        del active[ci]
        del active[cj]
        active[next_id] = size
        next_id += 1
    return Dendrogram(merges=np.array(merges, dtype=float), leaf_labels=tuple(labels))


def cut(dend: Dendrogram, k: int) -> np.ndarray:
    """Labels for k clusters: drop the k-1 highest merges, keep components.

    Labels are contiguous integers in order of first occurrence over the
    leaves.
    """
    m = dend.n_leaves
    if not (1 <= k <= m):
        raise ValueError(f"k must be in [1, {m}], got {k}")
    parent = list(range(2 * m - 1))

    def find(x: int) -> int:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for idx in range(m - k):  # all but the k-1 highest merges
        left, right, _, _ = dend.merges[idx]
        new_id = m + idx
        parent[find(int(left))] = new_id
        parent[find(int(right))] = new_id
    labels = np.empty(m, dtype=int)
    remap: dict[int, int] = {}
    for leaf in range(m):
        root = find(leaf)
        if root not in remap:
            remap[root] = len(remap)
        labels[leaf] = remap[root]
    return labels
