"""Domain model for two-layer root trees.

A root tree is a main curve plus lateral branches, each lateral attached to
the main curve at a normalized arc-length position t in [0, 1].  Laterals
may be *virtual*: zero-length placeholders (a single point sitting on the
main curve) used to equalize lateral counts between trees before matching.

Trees are immutable; every operation returns a new tree.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_MAIN_SAMPLES = 100
DEFAULT_LATERAL_SAMPLES = 50

# Attachment tolerance, relative to the main-curve arc length.  Skeletonized
# scans carry pixel noise, so exact incidence cannot be required.
ATTACH_TOL_FACTOR = 1e-3


class RootFormatError(ValueError):
    """A root file could not be parsed into a tree."""


class TreeValidationError(ValueError):
    """A structural invariant of a root tree is violated."""


def polyline_length(points: np.ndarray) -> float:
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def _cumulative_arclength(points: np.ndarray) -> np.ndarray:
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    return np.concatenate([[0.0], np.cumsum(seg)])


def point_on_polyline(points: np.ndarray, t: float) -> np.ndarray:
    """Point at normalized arc-length position t in [0, 1] along a polyline."""
    cum = _cumulative_arclength(points)
    total = cum[-1]
    if total <= 0.0:
        return points[0].copy()
    target = float(t) * total
    x = np.interp(target, cum, points[:, 0])
    y = np.interp(target, cum, points[:, 1])
    return np.array([x, y])


def project_to_polyline(points: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    """Nearest point of a polyline to x: (arc-length fraction, distance)."""
    starts = points[:-1]
    vecs = points[1:] - starts
    lens_sq = np.einsum("ij,ij->i", vecs, vecs)
    u = np.zeros(len(starts))
    moving = lens_sq > 0
    u[moving] = np.einsum("ij,ij->i", (x - starts)[moving], vecs[moving]) / lens_sq[moving]
    u = np.clip(u, 0.0, 1.0)
    candidates = starts + u[:, None] * vecs
    dists = np.linalg.norm(candidates - x, axis=1)
    k = int(np.argmin(dists))
    cum = _cumulative_arclength(points)
    total = cum[-1]
    if total <= 0.0:
        return 0.0, float(dists[k])
    arc = cum[k] + u[k] * (cum[k + 1] - cum[k])
    return float(arc / total), float(dists[k])


def _freeze(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class Branch:
    """A discretized planar curve, ordered base to tip.

    Virtual branches carry exactly one point (their attachment location) and
    represent zero-length laterals.
    """

    points: np.ndarray
    is_virtual: bool = False

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise TreeValidationError("branch points must be an (n, 2) array")
        if not np.all(np.isfinite(pts)):
            raise TreeValidationError("branch coordinates must be finite")
        if self.is_virtual:
            if len(pts) != 1:
                raise TreeValidationError("virtual branch must have exactly one point")
        else:
            if len(pts) < 2:
                raise TreeValidationError("branch needs at least 2 points")
            if polyline_length(pts) <= 0.0:
                raise TreeValidationError("branch has zero length")
        object.__setattr__(self, "points", _freeze(pts))

    @property
    def n_points(self) -> int:
        return len(self.points)

    @property
    def length(self) -> float:
        return polyline_length(self.points)

    @property
    def start(self) -> np.ndarray:
        return self.points[0]

    def point_at(self, t: float) -> np.ndarray:
        return point_on_polyline(self.points, t)


class Lateral(NamedTuple):
    t: float
    branch: Branch


@dataclass(frozen=True)
class RootTree:
    """A main branch plus laterals attached at arc-length positions.

    Laterals are stored sorted by t (stable, so ties keep insertion order).
    Non-virtual laterals must start on the main curve at their t position,
    within ``ATTACH_TOL_FACTOR * main length``.
    """

    id: str
    main: Branch
    laterals: tuple[Lateral, ...] = ()

    def __post_init__(self) -> None:
        if self.main.is_virtual:
            raise TreeValidationError("main branch cannot be virtual")
        lats = tuple(Lateral(float(t), br) for t, br in self.laterals)
        for t, _ in lats:
            if not (0.0 <= t <= 1.0):
                raise TreeValidationError(f"t out of range: {t!r} not in [0, 1]")
        lats = tuple(sorted(lats, key=lambda lb: lb.t))
        tol = ATTACH_TOL_FACTOR * self.main.length
        for t, br in lats:
            if br.is_virtual:
                continue
            gap = float(np.linalg.norm(br.start - self.main.point_at(t)))
            if gap > tol:
                raise TreeValidationError(
                    f"lateral at t={t:.6g} starts {gap:.6g} from the main curve "
                    f"(tolerance {tol:.6g})"
                )
        object.__setattr__(self, "laterals", lats)

    @property
    def n_laterals(self) -> int:
        return len(self.laterals)

    @property
    def real_laterals(self) -> tuple[Lateral, ...]:
        return tuple(l for l in self.laterals if not l.branch.is_virtual)

    def lateral_ts(self) -> np.ndarray:
        return np.array([t for t, _ in self.laterals], dtype=float)


# ---------------------------------------------------------------------------
# file format


def tree_to_dict(tree: RootTree) -> dict:
    out: dict = {
        "id": tree.id,
        "main": [[float(x), float(y)] for x, y in tree.main.points],
        "laterals": [],
    }
    for t, br in tree.laterals:
        entry = {
            "t": float(t),
            "points": [[float(x), float(y)] for x, y in br.points],
        }
        if br.is_virtual:
            entry["virtual"] = True
        out["laterals"].append(entry)
    return out


def tree_from_dict(data: dict, fallback_id: str = "root") -> RootTree:
    if not isinstance(data, dict):
        raise RootFormatError("root object must be a JSON object")
    try:
        main_pts = np.asarray(data["main"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise RootFormatError(f"invalid or missing 'main' array: {exc}") from exc
    laterals = []
    for i, entry in enumerate(data.get("laterals", [])):
        try:
            t = float(entry["t"])
            pts = np.asarray(entry["points"], dtype=float)
            virtual = bool(entry.get("virtual", False))
        except (KeyError, TypeError, ValueError) as exc:
            raise RootFormatError(f"invalid lateral #{i}: {exc}") from exc
        laterals.append(Lateral(t, Branch(pts, is_virtual=virtual)))
    tree_id = str(data.get("id", fallback_id))
    return RootTree(id=tree_id, main=Branch(main_pts), laterals=tuple(laterals))


def load_root(path: str | Path) -> RootTree:
    """Load and validate a single root tree from a JSON file."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise RootFormatError(f"{path}: not valid JSON: {exc}") from exc
    return tree_from_dict(data, fallback_id=path.stem)


def save_root(tree: RootTree, path: str | Path) -> None:
    """Write a tree as JSON; ``load_root`` reproduces it exactly."""
    Path(path).write_text(
        json.dumps(tree_to_dict(tree), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def load_collection(path: str | Path) -> list[RootTree]:
    """Load a collection: a directory of root files or one JSON array.

    Directory entries are read in sorted filename order so downstream
    results are reproducible.
    """
    path = Path(path)
    if path.is_dir():
        files = sorted(p for p in path.iterdir() if p.suffix == ".json")
        if not files:
            raise RootFormatError(f"{path}: no .json root files found")
        return [load_root(p) for p in files]
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise RootFormatError(f"{path}: expected a JSON array of root objects")
    return [tree_from_dict(d, fallback_id=f"{path.stem}-{i}") for i, d in enumerate(data)]


# ---------------------------------------------------------------------------
# geometry operations


def resample_branch(branch: Branch, n: int) -> Branch:
    """Resample to n points uniformly spaced in arc length, endpoints exact.

    Interpolation along the polyline is iterated to a fixed point so that the
    *output* polyline's own segments are uniform (relative deviation below
    1e-9); a single pass leaves chord-length variation of order curvature^2 /
    n^2, which would also break resampling idempotence.
    """
    if branch.is_virtual:
        raise TreeValidationError("cannot resample a virtual branch")
    if n < 2:
        raise ValueError(f"need n >= 2 sample points, got {n}")
    pts = np.asarray(branch.points, dtype=float)
    if len(pts) == n:
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        mean = seg.mean()
        if mean > 0 and np.max(np.abs(seg - mean)) / mean < 1e-12:
            return branch  # already at the fixed point
    first, last = pts[0].copy(), pts[-1].copy()
    for _ in range(20):
        cum = _cumulative_arclength(pts)
        target = np.linspace(0.0, cum[-1], n)
        pts = np.column_stack(
            [np.interp(target, cum, pts[:, 0]), np.interp(target, cum, pts[:, 1])]
        )
        pts[0] = first
        pts[-1] = last
        seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
        mean = seg.mean()
        if mean <= 0 or np.max(np.abs(seg - mean)) / mean < 1e-12:
            break
    return Branch(pts)


def resample_tree(
    tree: RootTree,
    n_main: int = DEFAULT_MAIN_SAMPLES,
    n_lateral: int = DEFAULT_LATERAL_SAMPLES,
) -> RootTree:
    """Resample main and laterals; virtual laterals pass through unchanged.

    Resampling shifts the main polyline slightly, so each real lateral's t is
    re-derived by projecting its (unchanged) start point onto the new main;
    the attachment invariant then survives coarse sample counts.
    """
    main = resample_branch(tree.main, n_main)
    laterals = []
    for t, br in tree.laterals:
        if br.is_virtual:
            laterals.append(Lateral(t, br))
        else:
            t_new, _ = project_to_polyline(main.points, br.points[0])
            laterals.append(Lateral(t_new, resample_branch(br, n_lateral)))
    return RootTree(id=tree.id, main=main, laterals=tuple(laterals))


def normalize_scale(tree: RootTree) -> RootTree:
    """Scale the whole tree by 1 / (main arc length); t values unchanged."""
    length = tree.main.length
    if length <= 0.0:
        raise TreeValidationError("cannot normalize a zero-length main branch")
    f = 1.0 / length
    main = Branch(tree.main.points * f)
    laterals = tuple(
        Lateral(t, Branch(br.points * f, is_virtual=br.is_virtual))
        for t, br in tree.laterals
    )
    return RootTree(id=tree.id, main=main, laterals=laterals)


def virtual_lateral(tree: RootTree, t: float) -> Lateral:
    point = tree.main.point_at(t)
    return Lateral(float(t), Branch(point[None, :], is_virtual=True))


def _with_extra_virtuals(tree: RootTree, ts: Iterable[float]) -> RootTree:
    extra = tuple(virtual_lateral(tree, t) for t in ts)
    return RootTree(id=tree.id, main=tree.main, laterals=tree.laterals + extra)


def augment_pair(a: RootTree, b: RootTree) -> tuple[RootTree, RootTree]:
    """Give both trees the same lateral count by adding virtual laterals.

    Each tree gains one virtual lateral at every attachment position of the
    other tree, so both end up with n_a + n_b laterals.  Existing laterals
    are untouched.
    """
    ts_a = [t for t, _ in a.laterals]
    ts_b = [t for t, _ in b.laterals]
    return _with_extra_virtuals(a, ts_b), _with_extra_virtuals(b, ts_a)


def augment_collection(trees: Sequence[RootTree]) -> list[RootTree]:
    """Equalize lateral counts across a collection.

    Every tree gains virtual laterals at the attachment positions of all
    *other* trees (with multiplicity), so each output has sum(n_i) laterals.
    """
    if not trees:
        raise ValueError("empty collection")
    all_ts = [[t for t, _ in tree.laterals] for tree in trees]
    out = []
    for i, tree in enumerate(trees):
        other = [t for j, ts in enumerate(all_ts) if j != i for t in ts]
        out.append(_with_extra_virtuals(tree, other))
    return out


def extract_bio_params(tree: RootTree) -> tuple[float, float, float]:
    """(main length, mean lateral length, population std of lateral lengths).

    Virtual laterals are excluded; with no real laterals both statistics
    are 0.
    """
    lengths = [br.length for _, br in tree.real_laterals]
    if not lengths:
        return (tree.main.length, 0.0, 0.0)
    arr = np.asarray(lengths)
    return (tree.main.length, float(arr.mean()), float(arr.std()))
