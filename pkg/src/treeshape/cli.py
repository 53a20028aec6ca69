"""Batch command-line interface.

One subcommand per workflow; machine-readable results go to ``--out`` (the
extension picks JSON, CSV or SVG) and a short human summary is printed.
All commands are deterministic for fixed inputs, flags and ``--seed``,
independent of the worker count.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import clustering, metric, render, statistics
from .metric import DistanceMatrix, PairOptions
from .srvf import Weights
from .statistics import Atlas, RegressionModel
from .tree_model import (
    RootTree,
    extract_bio_params,
    load_collection,
    load_root,
    save_root,
    tree_to_dict,
)

BIO_PARAM_NAMES = ("main_length", "lateral_mean_length", "lateral_std_length")


def _json_text(payload) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _write_trees(path: Path, trees: list[RootTree]) -> None:
    if path.suffix == ".svg":
        _write_text(path, render.render_tree_row(trees, titles=[t.id for t in trees]))
    elif len(trees) == 1:
        _write_text(path, _json_text(tree_to_dict(trees[0])))
    else:
        _write_text(path, _json_text([tree_to_dict(t) for t in trees]))


def _add_weight_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--lambda-m", type=float, default=0.02, help="main-shape weight")
    parser.add_argument("--lambda-s", type=float, default=1.0, help="lateral-shape weight")
    parser.add_argument("--lambda-p", type=float, default=1.0, help="attachment-position weight")


def _add_pipeline_args(parser: argparse.ArgumentParser) -> None:
    _add_weight_args(parser)
    parser.add_argument("--normalize", action="store_true",
                        help="rescale every tree by its main-root length before analysis")
    parser.add_argument("--n-main", type=int, default=100, help="main-branch sample count")
    parser.add_argument("--n-lat", type=int, default=50, help="lateral-branch sample count")
    parser.add_argument("--reg-iter", type=int, default=10, help="registration sweeps")
    parser.add_argument("--reg-tol", type=float, default=1e-8, help="registration stop tolerance")
    parser.add_argument("--fixed-s", action="store_true",
                        help="keep attachment positions fixed under reparameterization")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker count (default: ${metric.THREADS_ENV_VAR} or 1)")


def _weights(args: argparse.Namespace) -> Weights:
    return Weights(args.lambda_m, args.lambda_s, args.lambda_p)


def _pair_options(args: argparse.Namespace) -> PairOptions:
    return PairOptions(
        n_main=args.n_main,
        n_lateral=args.n_lat,
        normalize=args.normalize,
        max_iter=args.reg_iter,
        tol=args.reg_tol,
        remap_s=not args.fixed_s,
    )


def _parse_range(text: str, count: int) -> tuple[float, ...]:
    parts = text.split(":")
    if len(parts) != count:
        raise ValueError(f"expected {count} colon-separated values, got {text!r}")
    return tuple(float(p) for p in parts)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeshape",
        description="Elastic shape analysis of two-layer root trees.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distance", help="registered distance between two roots")
    p.add_argument("a"), p.add_argument("b")
    _add_pipeline_args(p)
    p.add_argument("--out", type=Path, default=None, help="optional JSON report")

    p = sub.add_parser("geodesic", help="optimal deformation between two roots")
    p.add_argument("a"), p.add_argument("b")
    p.add_argument("--steps", type=int, default=5, help="number of path steps incl. endpoints")
    _add_pipeline_args(p)
    p.add_argument("--out", type=Path, required=True, help=".svg strip or .json tree array")

    p = sub.add_parser("matrix", help="pairwise distance matrix of a collection")
    p.add_argument("trees", help="directory of root files or a JSON array")
    _add_pipeline_args(p)
    p.add_argument("--out", type=Path, required=True, help=".csv or .json matrix")

    p = sub.add_parser("mean", help="Karcher mean of a collection")
    p.add_argument("trees")
    _add_pipeline_args(p)
    p.add_argument("--max-iter", type=int, default=30, help="mean descent iterations")
    p.add_argument("--tol", type=float, default=1e-6, help="mean gradient tolerance")
    p.add_argument("--step", type=float, default=0.5, help="descent step size")
    p.add_argument("--out", type=Path, required=True, help=".json root or .svg drawing")

    p = sub.add_parser("atlas", help="mean + principal modes of a collection")
    p.add_argument("trees")
    _add_pipeline_args(p)
    p.add_argument("--max-iter", type=int, default=30, help="mean descent iterations")
    p.add_argument("--tol", type=float, default=1e-6, help="mean gradient tolerance")
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--out", type=Path, required=True, help="atlas .json")

    p = sub.add_parser("modes", help="sweep one principal mode of an atlas")
    p.add_argument("atlas")
    p.add_argument("--mode", type=int, default=0, help="mode index (0-based)")
    p.add_argument("--alpha-range", default="-2:2:5",
                   help="LO:HI:COUNT sweep in standard deviations "
                        "(use --alpha-range=-2:2:5 for negative bounds)")
    p.add_argument("--out", type=Path, required=True, help=".svg row or .json tree array")

    p = sub.add_parser("sample", help="randomly synthesize roots from an atlas")
    p.add_argument("atlas")
    p.add_argument("--n", type=int, default=1, help="number of samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--range", default="-1:1",
                   help="LO:HI bound on mode coefficients (--range=-1:1 form "
                        "for negative bounds)")
    p.add_argument("--out", type=Path, required=True, help=".json tree array or .svg row")

    p = sub.add_parser("regress-fit", help="fit biological-parameter regression")
    p.add_argument("trees")
    _add_pipeline_args(p)
    p.add_argument("--max-iter", type=int, default=30, help="mean descent iterations")
    p.add_argument("--tol", type=float, default=1e-6, help="mean gradient tolerance")
    p.add_argument("--step", type=float, default=0.5)
    p.add_argument("--out", type=Path, required=True, help="model .json")

    p = sub.add_parser("regress-predict", help="synthesize a root from parameters")
    p.add_argument("model")
    p.add_argument("--params", required=True, help="comma-separated parameter values")
    p.add_argument("--out", type=Path, required=True, help=".json root or .svg drawing")

    p = sub.add_parser("cluster", help="hierarchical clustering of a collection")
    p.add_argument("input", help="distance matrix (.csv/.json) or tree collection")
    p.add_argument("--linkage", choices=clustering.LINKAGE_METHODS, default="single")
    p.add_argument("--k", type=int, default=None, help="also cut into k clusters")
    _add_pipeline_args(p)
    p.add_argument("--out", type=Path, required=True, help=".json dendrogram or .svg drawing")

    p = sub.add_parser("render", help="draw one root file as SVG")
    p.add_argument("tree")
    p.add_argument("--out", type=Path, required=True, help="output .svg")

    return parser


# ---------------------------------------------------------------------------
# subcommand implementations


def _cmd_distance(args) -> int:
    a, b = load_root(args.a), load_root(args.b)
    Qa, Qb, reg = metric.register_pair(a, b, _weights(args), _pair_options(args))
    d = float(np.sqrt(max(reg.cost, 0.0)))
    if d < 1e-12:
        d = 0.0  # numerically zero at shape scale
    print(f"distance({a.id}, {b.id}) = {d:.9g}")
    if args.out is not None:
        payload = {
            "a": a.id,
            "b": b.id,
            "distance": d,
            "cost_sq": float(reg.cost),
            "rotation_angle": reg.angle,
            "assignment": reg.assignment.tolist(),
            "sweeps": len(reg.cost_history) - 1,
        }
        _write_text(args.out, _json_text(payload))
    return 0


def _cmd_geodesic(args) -> int:
    a, b = load_root(args.a), load_root(args.b)
    path = metric.geodesic(a, b, _weights(args), steps=args.steps, opts=_pair_options(args))
    trees = path.trees(id_prefix=f"{a.id}-to-{b.id}")
    if args.out.suffix == ".svg":
        titles = [f"r={r:.2f}" for r in path.r_values]
        _write_text(args.out, render.render_tree_row(trees, titles=titles))
    else:
        _write_text(args.out, _json_text([tree_to_dict(t) for t in trees]))
    print(
        f"geodesic {a.id} -> {b.id}: {args.steps} steps, "
        f"distance {np.sqrt(max(path.length_sq, 0.0)):.9g}"
    )
    return 0


def _cmd_matrix(args) -> int:
    trees = load_collection(args.trees)
    dm = metric.pairwise_matrix(trees, _weights(args), _pair_options(args), n_jobs=args.threads)
    dm.save(args.out)
    print(f"{len(trees)} trees, {len(trees) * (len(trees) - 1) // 2} pairs -> {args.out}")
    for i, j, msg in dm.failures:
        print(f"pair ({dm.labels[i]}, {dm.labels[j]}) failed: {msg}", file=sys.stderr)
    return 0


def _cmd_mean(args) -> int:
    trees = load_collection(args.trees)
    result = statistics.karcher_mean(
        trees, _weights(args), step=args.step, max_iter=args.max_iter,
        tol=args.tol, opts=_pair_options(args), n_jobs=args.threads,
    )
    from .srvf import srvft_to_tree

    mean_tree = srvft_to_tree(result.mean, tree_id="karcher-mean")
    if args.out.suffix == ".svg":
        _write_text(args.out, render.render_tree(mean_tree))
    else:
        save_root(mean_tree, args.out)
    obj = result.objective
    print(
        f"mean of {len(trees)} trees in {len(obj) - 1} accepted steps; "
        f"objective {obj[0]:.6g} -> {obj[-1]:.6g}"
        f" ({'converged' if result.converged else 'iteration limit'})"
    )
    return 0


def _fit_atlas_from_args(args) -> tuple[list[RootTree], Atlas]:
    trees = load_collection(args.trees)
    atlas = statistics.fit_atlas(
        trees, _weights(args), step=args.step, max_iter=args.max_iter,
        tol=args.tol, opts=_pair_options(args), n_jobs=args.threads,
    )
    return trees, atlas


def _cmd_atlas(args) -> int:
    trees, atlas = _fit_atlas_from_args(args)
    atlas.save(args.out)
    ratios = atlas.variance_ratio()
    covered = ratios[atlas.retained - 1] if atlas.retained else 0.0
    print(
        f"atlas of {len(trees)} trees: {atlas.n_modes} modes, "
        f"{atlas.retained} retained ({covered:.4f} of variance) -> {args.out}"
    )
    return 0


def _cmd_modes(args) -> int:
    atlas = Atlas.load(args.atlas)
    lo, hi, count = _parse_range(args.alpha_range, 3)
    alphas = np.linspace(lo, hi, int(count))
    trees = [statistics.mode_path(atlas, args.mode, float(a)) for a in alphas]
    if args.out.suffix == ".svg":
        _write_text(args.out, render.render_tree_row(
            trees, titles=[f"alpha={a:+.2f}" for a in alphas]))
    else:
        _write_text(args.out, _json_text([tree_to_dict(t) for t in trees]))
    print(f"mode {args.mode}: {len(alphas)} steps over [{lo}, {hi}] -> {args.out}")
    return 0


def _cmd_sample(args) -> int:
    atlas = Atlas.load(args.atlas)
    lo, hi = _parse_range(args.range, 2)
    rng = np.random.default_rng(args.seed)
    trees = [
        statistics.sample_random(atlas, rng, (lo, hi), tree_id=f"sample-{i:03d}")
        for i in range(args.n)
    ]
    _write_trees(args.out, trees)
    print(f"{args.n} samples (seed {args.seed}) -> {args.out}")
    return 0


def _cmd_regress_fit(args) -> int:
    trees, atlas = _fit_atlas_from_args(args)
    params = np.array([extract_bio_params(t) for t in trees])
    model = statistics.fit_regression(atlas, params, BIO_PARAM_NAMES)
    model.save(args.out)
    resid = float(np.linalg.norm(
        atlas.training_coeffs.T
        - model.M @ np.vstack([params.T, np.ones(len(trees))])
    ))
    print(
        f"regression over {', '.join(BIO_PARAM_NAMES)}: "
        f"training residual {resid:.6g} -> {args.out}"
    )
    return 0


def _cmd_regress_predict(args) -> int:
    model = RegressionModel.load(args.model)
    values = [float(v) for v in args.params.split(",")]
    tree = statistics.predict(model, values)
    if args.out.suffix == ".svg":
        _write_text(args.out, render.render_tree(tree))
    else:
        save_root(tree, args.out)
    pairs = ", ".join(f"{n}={v:g}" for n, v in zip(model.param_names, values))
    print(f"predicted root for {pairs} -> {args.out}")
    return 0


def _cmd_cluster(args) -> int:
    path = Path(args.input)
    if path.is_file() and path.suffix in (".csv", ".json"):
        dm = DistanceMatrix.load(path)
    else:
        trees = load_collection(path)
        dm = metric.pairwise_matrix(trees, _weights(args), _pair_options(args),
                                    n_jobs=args.threads)
    dend = clustering.linkage(dm, method=args.linkage)
    labels = clustering.cut(dend, args.k) if args.k is not None else None
    if args.out.suffix == ".svg":
        _write_text(args.out, render.render_dendrogram(dend))
    else:
        payload = dend.to_dict()
        if labels is not None:
            payload["clusters"] = {"k": args.k, "labels": labels.tolist()}
        _write_text(args.out, _json_text(payload))
    print(f"{args.linkage} linkage over {dend.n_leaves} trees -> {args.out}")
    if labels is not None:
        for leaf, lab in zip(dend.leaf_labels, labels):
            print(f"  {leaf}: cluster {lab}")
    return 0


def _cmd_render(args) -> int:
    tree = load_root(args.tree)
    _write_text(args.out, render.render_tree(tree))
    print(f"rendered {tree.id} -> {args.out}")
    return 0


_COMMANDS = {
    "distance": _cmd_distance,
    "geodesic": _cmd_geodesic,
    "matrix": _cmd_matrix,
    "mean": _cmd_mean,
    "atlas": _cmd_atlas,
    "modes": _cmd_modes,
    "sample": _cmd_sample,
    "regress-fit": _cmd_regress_fit,
    "regress-predict": _cmd_regress_predict,
    "cluster": _cmd_cluster,
    "render": _cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses 2 for usage errors
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, OSError, KeyError, IndexError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
