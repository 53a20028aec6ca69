"""Statistical atlases of root-tree collections.

The collection is equalized in lateral count, registered to an evolving mean
found by gradient descent, and analyzed in the (flat) tangent space at the
mean.  Tangent coordinates carry the metric weights and quadrature weights,
so ordinary Euclidean inner products reproduce the tree dissimilarity and
PCA is consistent with the metric.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .metric import DEFAULT_OPTIONS, PairOptions, parallel_map, resolve_workers
from .registration import apply_registration, preshape_dissimilarity_sq, register
from .srvf import (
    DEFAULT_WEIGHTS,
    LateralSrvf,
    Srvf,
    SrvfTree,
    Weights,
    srvft_to_tree,
    tree_to_srvft,
    trapezoid_weights,
)
from .tree_model import (
    RootTree,
    augment_collection,
    normalize_scale,
    resample_tree,
)


@dataclass(frozen=True)
class TangentLayout:
    """Block structure of flattened SRVF-trees: main, lateral SRVFs, then s."""

    n_main: int
    n_lateral: int
    n_laterals: int

    @property
    def dim(self) -> int:
        return 2 * self.n_main + self.n_laterals * (2 * self.n_lateral + 1)

    @classmethod
    def of(cls, Q: SrvfTree) -> "TangentLayout":
        n_lat = Q.laterals[0].q.n if Q.laterals else 0
        return cls(n_main=Q.q0.n, n_lateral=n_lat, n_laterals=Q.n_laterals)

    def matches(self, Q: SrvfTree) -> bool:
        return TangentLayout.of(Q) == self or (
            self.n_laterals == 0 and Q.n_laterals == 0 and Q.q0.n == self.n_main
        )

    def metric_scale(self, w: Weights) -> np.ndarray:
        """Per-coordinate scale making the Euclidean norm match the metric."""
        if not (w.lambda_m > 0 and (self.n_laterals == 0 or (w.lambda_s > 0 and w.lambda_p > 0))):
            raise ValueError("tangent-space operations need strictly positive weights")
        parts = [np.repeat(np.sqrt(w.lambda_m * trapezoid_weights(self.n_main)), 2)]
        if self.n_laterals:
            lat = np.repeat(np.sqrt(w.lambda_s * trapezoid_weights(self.n_lateral)), 2)
            parts.extend([lat] * self.n_laterals)
            parts.append(np.full(self.n_laterals, np.sqrt(w.lambda_p)))
        return np.concatenate(parts)


def flatten_srvft(Q: SrvfTree) -> np.ndarray:
    parts = [Q.q0.samples.ravel()]
    parts.extend(q.samples.ravel() for q, _ in Q.laterals)
    parts.append(Q.s_values())
    return np.concatenate(parts)


def unflatten_srvft(vec: np.ndarray, layout: TangentLayout, anchor: np.ndarray) -> SrvfTree:
    pos = 2 * layout.n_main
    q0 = Srvf(vec[:pos].reshape(-1, 2))
    laterals = []
    block = 2 * layout.n_lateral
    s_vals = vec[pos + layout.n_laterals * block :]
    for k in range(layout.n_laterals):
        q = Srvf(vec[pos + k * block : pos + (k + 1) * block].reshape(-1, 2))
        laterals.append(LateralSrvf(q, float(s_vals[k])))
    return SrvfTree(q0=q0, laterals=tuple(laterals), anchor=anchor)


def log_map(mu: SrvfTree, x: SrvfTree, w: Weights) -> np.ndarray:
    """Tangent vector at mu pointing to x (x must be registered to mu).

    Coordinates are metric-scaled, so the squared Euclidean norm equals the
    dissimilarity between mu and x.
    """
    layout = TangentLayout.of(mu)
    if not layout.matches(x):
        raise ValueError("layout mismatch between mean and sample")
    return (flatten_srvft(x) - flatten_srvft(mu)) * layout.metric_scale(w)


def exp_map(mu: SrvfTree, v: np.ndarray, w: Weights) -> SrvfTree:
    """Inverse of ``log_map``; attachment positions are clamped to [0, 1]."""
    layout = TangentLayout.of(mu)
    if len(v) != layout.dim:
        raise ValueError(f"tangent dimension {len(v)} != layout dimension {layout.dim}")
    vec = flatten_srvft(mu) + np.asarray(v, dtype=float) / layout.metric_scale(w)
    if layout.n_laterals:
        s_start = layout.dim - layout.n_laterals
        s = vec[s_start:]
        clamped = np.clip(s, 0.0, 1.0)
        if np.any(clamped != s):
            warnings.warn("attachment positions clamped to [0, 1]")
            vec = vec.copy()
            vec[s_start:] = clamped
    return unflatten_srvft(vec, layout, mu.anchor)


# ---------------------------------------------------------------------------
# Karcher mean


@dataclass(frozen=True)
class KarcherResult:
    mean: SrvfTree
    registered: tuple[SrvfTree, ...]
    objective: tuple[float, ...]
    converged: bool


def _register_to(args: tuple) -> SrvfTree:
    mu, Q, w, max_iter, tol, remap_s = args
    return apply_registration(
        Q, register(mu, Q, w, max_iter=max_iter, tol=tol, remap_s=remap_s)
    )


def _registration_cost(args: tuple) -> float:
    mu, Q, w, max_iter, tol, remap_s = args
    return register(mu, Q, w, max_iter=max_iter, tol=tol, remap_s=remap_s).cost


def prepare_collection(
    trees: Sequence[RootTree], opts: PairOptions = DEFAULT_OPTIONS
) -> list[SrvfTree]:
    """Normalize/resample/augment a collection and convert to SRVF-trees."""
    if opts.normalize:
        trees = [normalize_scale(t) for t in trees]
    trees = [resample_tree(t, opts.n_main, opts.n_lateral) for t in trees]
    return [tree_to_srvft(t, opts.n_lateral) for t in augment_collection(trees)]


def karcher_mean(
    trees: Sequence[RootTree],
    w: Weights = DEFAULT_WEIGHTS,
    step: float = 0.5,
    max_iter: int = 30,
    tol: float = 1e-6,
    opts: PairOptions = DEFAULT_OPTIONS,
    n_jobs: int | None = None,
) -> KarcherResult:
    """Gradient-descent mean of a collection under the registered metric.

    Starts at the medoid (the sample with the smallest summed squared
    registered distance to all others), then repeatedly registers every
    sample to the current mean and moves the mean toward the tangent
    average.  A step that would increase the objective is halved until it
    does not, so the objective sequence is nonincreasing.
    """
    if not trees:
        raise ValueError("empty collection")
    samples = prepare_collection(trees, opts)
    m = len(samples)
    if m == 1:
        return KarcherResult(samples[0], (samples[0],), (0.0,), True)
    jobs = resolve_workers(n_jobs)

    def reg_args(mu: SrvfTree) -> list[tuple]:
        return [(mu, Q, w, opts.max_iter, opts.tol, opts.remap_s) for Q in samples]

    # medoid initialization
    pair_cost = np.zeros((m, m))
    pairs = [(samples[i], samples[j], w, opts.max_iter, opts.tol, opts.remap_s)
             for i in range(m) for j in range(i + 1, m)]
    costs = parallel_map(_registration_cost, pairs, jobs)
    k = 0
    for i in range(m):
        for j in range(i + 1, m):
            pair_cost[i, j] = pair_cost[j, i] = costs[k]
            k += 1
    medoid = int(np.argmin(pair_cost.sum(axis=1)))
    mu = samples[medoid]
    anchor = np.mean([Q.anchor for Q in samples], axis=0)
    mu = SrvfTree(q0=mu.q0, laterals=mu.laterals, anchor=anchor)

    layout = TangentLayout.of(mu)
    scale = layout.metric_scale(w)
    registered = parallel_map(_register_to, reg_args(mu), jobs)
    objective = [float(sum(preshape_dissimilarity_sq(mu, Q, w) for Q in registered))]
    converged = False
    for _ in range(max_iter):
        flat_mu = flatten_srvft(mu)
        vbar = np.mean([flatten_srvft(Q) for Q in registered], axis=0) - flat_mu
        if float(np.linalg.norm(vbar * scale)) < tol:
            converged = True
            break
        accepted = False
        step_k = step
        for _ in range(8):
            candidate = unflatten_srvft(flat_mu + step_k * vbar, layout, mu.anchor)
            cand_registered = parallel_map(_register_to, reg_args(candidate), jobs)
            cand_obj = float(
                sum(preshape_dissimilarity_sq(candidate, Q, w) for Q in cand_registered)
            )
            if cand_obj <= objective[-1] + 1e-15:
                mu = candidate
                registered = cand_registered
                objective.append(cand_obj)
                accepted = True
                break
            step_k *= 0.5
        if not accepted:
            converged = True
            break
    return KarcherResult(mu, tuple(registered), tuple(objective), converged)


# ---------------------------------------------------------------------------
# tangent PCA


@dataclass(frozen=True)
class Atlas:
    """Mean, principal modes and training coefficients of a collection."""

    mean: SrvfTree
    eigenvalues: np.ndarray  # descending, nonnegative
    modes: np.ndarray  # (n_modes, dim), orthonormal rows
    retained: int
    training_coeffs: np.ndarray  # (n_samples, retained)
    weights: Weights
    layout: TangentLayout
    ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        ev = np.array(self.eigenvalues, dtype=float)
        ev.flags.writeable = False
        object.__setattr__(self, "eigenvalues", ev)
        md = np.array(self.modes, dtype=float).reshape(len(ev), self.layout.dim)
        md.flags.writeable = False
        object.__setattr__(self, "modes", md)
        tc = np.array(self.training_coeffs, dtype=float)
        tc = tc.reshape(tc.shape[0] if tc.size else 0, self.retained)
        tc.flags.writeable = False
        object.__setattr__(self, "training_coeffs", tc)
        if self.retained > len(ev):
            raise ValueError("retained exceeds available modes")

    @property
    def n_modes(self) -> int:
        return len(self.eigenvalues)

    def variance_ratio(self) -> np.ndarray:
        total = self.eigenvalues.sum()
        if total <= 0:
            return np.zeros_like(self.eigenvalues)
        return np.cumsum(self.eigenvalues) / total

    def tangent_from_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        coeffs = np.asarray(coeffs, dtype=float)
        k = len(coeffs)
        scaled = coeffs * np.sqrt(self.eigenvalues[:k])
        return scaled @ self.modes[:k]

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.to_debug_dict(),
            "eigenvalues": self.eigenvalues.tolist(),
            "modes": self.modes.tolist(),
            "retained": int(self.retained),
            "training_coeffs": self.training_coeffs.tolist(),
            "weights": list(self.weights.as_tuple()),
            "layout": {
                "n_main": self.layout.n_main,
                "n_lateral": self.layout.n_lateral,
                "n_laterals": self.layout.n_laterals,
            },
            "ids": list(self.ids),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Atlas":
        mean_d = data["mean"]
        mean = SrvfTree(
            q0=Srvf(np.array(mean_d["q0"], dtype=float)),
            laterals=tuple(
                LateralSrvf(Srvf(np.array(l["q"], dtype=float)), float(l["s"]))
                for l in mean_d["laterals"]
            ),
            anchor=np.array(mean_d["anchor"], dtype=float),
        )
        lay = data["layout"]
        return cls(
            mean=mean,
            eigenvalues=np.array(data["eigenvalues"], dtype=float),
            modes=np.array(data["modes"], dtype=float),
            retained=int(data["retained"]),
            training_coeffs=np.array(data["training_coeffs"], dtype=float),
            weights=Weights(*data["weights"]),
            layout=TangentLayout(lay["n_main"], lay["n_lateral"], lay["n_laterals"]),
            ids=tuple(data.get("ids", ())),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "Atlas":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


VARIANCE_TARGET = 0.99


def _gram_modes(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenpairs of the sample covariance via the Gram matrix.

    ``V`` holds one tangent vector per row.  Returns (eigenvalues desc,
    modes) restricted to the positive spectrum; exact for covariances of
    rank up to the sample count.
    """
    m = len(V)
    G = (V @ V.T) / (m - 1)
    evals, evecs = np.linalg.eigh(G)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    # relative rank cutoff plus an absolute floor: registration noise on
    # identical trees leaves eigenvalue dust around machine precision squared
    floor = max(evals[0] * 1e-12 if evals.size else 0.0, 1e-20)
    keep = evals > floor
    evals = evals[keep]
    evecs = evecs[:, keep]
    modes = []
    for k in range(len(evals)):
        direction = evecs[:, k] @ V
        norm = np.linalg.norm(direction)
        modes.append(direction / norm)
    modes = np.array(modes).reshape(len(evals), V.shape[1])
    # re-enforce orthonormality (finite-precision Gram matrices drift)
    for k in range(len(modes)):
        for j in range(k):
            modes[k] -= (modes[k] @ modes[j]) * modes[j]
        modes[k] /= np.linalg.norm(modes[k])
    return evals, modes


def fit_atlas(
    trees: Sequence[RootTree],
    w: Weights = DEFAULT_WEIGHTS,
    step: float = 0.5,
    max_iter: int = 30,
    tol: float = 1e-6,
    opts: PairOptions = DEFAULT_OPTIONS,
    n_jobs: int | None = None,
    variance_target: float = VARIANCE_TARGET,
) -> Atlas:
    """Karcher mean plus tangent covariance eigenmodes of a collection.

    Modes are computed with the Gram-matrix trick (the covariance has rank
    below the sample count, so the small Gram eigenproblem is exact), the
    retained count is the smallest one whose cumulative variance ratio
    exceeds ``variance_target``, and per-sample coefficients are stored for
    regression.
    """
    if len(trees) < 2:
        raise ValueError("need at least 2 trees to fit an atlas")
    result = karcher_mean(trees, w, step=step, max_iter=max_iter, tol=tol, opts=opts, n_jobs=n_jobs)
    mu = result.mean
    layout = TangentLayout.of(mu)
    V = np.array([log_map(mu, Q, w) for Q in result.registered])
    evals, modes = _gram_modes(V)
    total = evals.sum()
    if total <= 0 or not evals.size:
        retained = 0
    else:
        ratio = np.cumsum(evals) / total
        retained = int(np.searchsorted(ratio, variance_target) + 1)
        retained = min(retained, len(evals))
    coeffs = np.zeros((len(V), retained))
    for j in range(retained):
        coeffs[:, j] = (V @ modes[j]) / np.sqrt(evals[j])
    return Atlas(
        mean=mu,
        eigenvalues=evals,
        modes=modes,
        retained=retained,
        training_coeffs=coeffs,
        weights=w,
        layout=layout,
        ids=tuple(t.id for t in trees),
    )


def mode_path(atlas: Atlas, mode: int, alpha: float, tree_id: str | None = None) -> RootTree:
    """Tree at ``alpha`` standard deviations along one principal mode."""
    if not (0 <= mode < atlas.retained):
        raise IndexError(f"mode {mode} out of range (retained={atlas.retained})")
    v = alpha * np.sqrt(atlas.eigenvalues[mode]) * atlas.modes[mode]
    Q = exp_map(atlas.mean, v, atlas.weights)
    return srvft_to_tree(Q, tree_id=tree_id or f"mode{mode}_alpha{alpha:+.2f}")


def sample_random(
    atlas: Atlas,
    rng: np.random.Generator | int,
    coeff_range: tuple[float, float] = (-1.0, 1.0),
    tree_id: str = "sample",
) -> RootTree:
    """Draw one tree from the Gaussian mode model.

    Coefficients are standard normal draws, redrawn until they fall inside
    ``coeff_range`` so implausibly remote trees are avoided.  Deterministic
    for a seeded generator.
    """
    if atlas.retained < 1:
        raise ValueError("atlas has no retained modes to sample from")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(int(rng))
    lo, hi = coeff_range
    coeffs = np.empty(atlas.retained)
    for i in range(atlas.retained):
        b = rng.standard_normal()
        while not (lo <= b <= hi):
            b = rng.standard_normal()
        coeffs[i] = b
    Q = exp_map(atlas.mean, atlas.tangent_from_coeffs(coeffs), atlas.weights)
    return srvft_to_tree(Q, tree_id=tree_id)


# ---------------------------------------------------------------------------
# regression from biological parameters


@dataclass(frozen=True)
class RegressionModel:
    """Affine map from parameters to retained-mode coefficients."""

    M: np.ndarray  # (retained, n_params + 1)
    param_names: tuple[str, ...]
    atlas: Atlas

    def __post_init__(self) -> None:
        M = np.array(self.M, dtype=float)
        if M.ndim != 2 or M.shape[1] != len(self.param_names) + 1:
            raise ValueError("M must have one column per parameter plus an affine column")
        M.flags.writeable = False
        object.__setattr__(self, "M", M)
        object.__setattr__(self, "param_names", tuple(self.param_names))

    def to_dict(self) -> dict:
        return {
            "M": self.M.tolist(),
            "param_names": list(self.param_names),
            "atlas": self.atlas.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionModel":
        return cls(
            M=np.array(data["M"], dtype=float),
            param_names=tuple(data["param_names"]),
            atlas=Atlas.from_dict(data["atlas"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(
            json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n",
            encoding="utf-8",
        )

    @classmethod
    def load(cls, path: str | Path) -> "RegressionModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def fit_regression(
    atlas: Atlas,
    params: np.ndarray,
    param_names: Sequence[str] | None = None,
) -> RegressionModel:
    """Least-squares affine map from per-sample parameters to coefficients.

    ``params`` has one row per training sample.  The map is B P^+ where B
    stacks coefficient columns and P stacks [p; 1] columns; singular values
    below 1e-10 of the largest are treated as zero, and a rank-deficient P
    is reported (the minimum-norm solution is still returned).
    """
    params = np.asarray(params, dtype=float)
    if params.ndim != 2:
        raise ValueError("params must be a 2D array (samples x parameters)")
    m, l = params.shape
    if m != len(atlas.training_coeffs):
        raise ValueError("one parameter row per training sample required")
    if l + 1 > m:
        raise ValueError(f"need at least {l + 1} samples for {l} parameters")
    if not np.all(np.isfinite(params)):
        raise ValueError("parameters must be finite")
    if param_names is None:
        param_names = tuple(f"p{i + 1}" for i in range(l))
    B = atlas.training_coeffs.T  # (retained, m)
    P = np.vstack([params.T, np.ones(m)])  # (l+1, m)
    if np.linalg.matrix_rank(P, tol=1e-10 * max(np.linalg.norm(P), 1e-300)) < l + 1:
        warnings.warn("parameter matrix is rank deficient; minimum-norm solution returned")
    M = B @ np.linalg.pinv(P, rcond=1e-10)
    return RegressionModel(M=M, param_names=tuple(param_names), atlas=atlas)


def predict(model: RegressionModel, params: Sequence[float], tree_id: str = "predicted") -> RootTree:
    """Synthesize the tree for one parameter vector."""
    p = np.asarray(params, dtype=float)
    if p.shape != (len(model.param_names),):
        raise ValueError(f"expected {len(model.param_names)} parameter values")
    if not np.all(np.isfinite(p)):
        raise ValueError("parameters must be finite")
    coeffs = model.M @ np.concatenate([p, [1.0]])
    atlas = model.atlas
    Q = exp_map(atlas.mean, atlas.tangent_from_coeffs(coeffs), atlas.weights)
    return srvft_to_tree(Q, tree_id=tree_id)
