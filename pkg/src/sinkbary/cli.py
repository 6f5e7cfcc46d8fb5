"""Command-line entry point: ``sinkbary <command> [options]``.

Exit codes: 0 success, 2 invalid input, 3 Sinkhorn did not converge (outputs
are still written), 4 a checked bound was violated.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

from . import analysis
from .errors import InvalidMeasure, MaxIterationsExceeded, NumericalOverflow, SinkbaryError
from .frank_wolfe import BarycenterProblem, ContinuousMinimize, FWConfig, GridMinimize, barycenter
from .io import (
    read_graph,
    read_image,
    read_measure,
    read_points,
    rasterize,
    write_json,
    write_measure,
    write_pgm,
    write_trace,
)
from .measure import image_to_measure
from .sinkhorn import SinkhornConfig
from .tasks import compress, kmeans, propagate

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CONVERGENCE = 3
EXIT_BOUND = 4


class InputError(Exception):
    pass


def default_seed() -> int:
    env = os.environ.get("SINKBARY_SEED")
    if env is None or not env.strip():
        return 0
    try:
        return int(env)
    except ValueError:
        raise InputError(f"SINKBARY_SEED must be an integer, got {env!r}")


def _common(p: argparse.ArgumentParser, iters: int = 100) -> None:
    p.add_argument("--epsilon", type=float, default=0.05, help="entropic regularization")
    p.add_argument("--tol", type=float, default=1e-9, help="Sinkhorn sup-norm tolerance")
    p.add_argument("--max-sink-iters", type=int, default=10_000, help="Sinkhorn sweep limit")
    p.add_argument("--iters", type=int, default=iters, help="Frank-Wolfe iterations K")
    p.add_argument("--seed", type=int, default=None, help="random seed (default: $SINKBARY_SEED or 0)")
    p.add_argument("--minimize", choices=("grid", "continuous"), default="continuous")
    p.add_argument("--grid-file", default=None, help="CSV of candidate points for grid mode")
    p.add_argument("--merge-radius", type=float, default=0.0)
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out-dir", default="out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sinkbary", description="Sinkhorn barycenters by Frank-Wolfe")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("barycenter", help="barycenter of measure files")
    p.add_argument("measures", nargs="+", help="measure files (.json or .csv)")
    p.add_argument("--weights", type=float, nargs="+", default=None, help="mixing weights (default uniform)")
    p.add_argument("--objective-every", type=int, default=0,
                   help="evaluate the objective every n steps (0: first and last only)")
    _common(p)

    p = sub.add_parser("compress", help="compress a measure or grayscale image")
    p.add_argument("input", help="measure file or image (.pgm, .png)")
    p.add_argument("--pixel-extent", type=float, default=None, help="pixel side length (default 1/max(H, W))")
    _common(p, iters=500)

    p = sub.add_parser("kmeans", help="k-means clustering of measures")
    p.add_argument("measures", nargs="+")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--lloyd-iters", type=int, default=10)
    _common(p, iters=50)

    p = sub.add_parser("propagate", help="propagate measures over a graph")
    p.add_argument("graph", help="graph JSON file")
    p.add_argument("--weighting", choices=("inverse-distance", "exp-kernel"), default="inverse-distance")
    p.add_argument("--sigma", type=float, default=1.0, help="bandwidth of the exp-kernel weighting")
    p.add_argument("--sweeps", type=int, default=3)
    _common(p, iters=50)

    p = sub.add_parser("bench", help="run the empirical bound checks")
    p.add_argument("--suite", action="append", choices=analysis.SUITES + ("mmd-lipschitz", "all"), default=None,
                   help="suite to run (repeatable; default: all)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out-dir", default="out")

    p = sub.add_parser("render", help="rasterize a 2-D measure to a PGM image")
    p.add_argument("measure")
    p.add_argument("--resolution", default="64x64", help="HxW pixels")
    p.add_argument("--box", type=float, nargs=4, default=None, metavar=("XLO", "YLO", "XHI", "YHI"),
                   help="region spanned by pixel centres (default: atom bounding box)")
    p.add_argument("--out", default=None, help="output PGM path (default <out-dir>/render.pgm)")
    p.add_argument("--out-dir", default="out")
    return parser


# ----------------------------------------------------------------------------
# configuration
# ----------------------------------------------------------------------------

def _seed(args) -> int:
    return default_seed() if args.seed is None else int(args.seed)


def _configs(args):
    try:
        scfg = SinkhornConfig(args.epsilon, tolerance=args.tol, max_iterations=args.max_sink_iters)
    except ValueError as exc:
        raise InputError(str(exc))
    if args.minimize == "grid":
        cands = read_points(args.grid_file) if args.grid_file else None
        spec = GridMinimize(candidates=cands)
    else:
        if args.grid_file:
            raise InputError("--grid-file needs --minimize grid")
        spec = ContinuousMinimize()
    if args.iters < 1 or args.workers < 1:
        raise InputError("--iters and --workers must be >= 1")
    fcfg = FWConfig(iterations=args.iters, minimize=spec, merge_radius=args.merge_radius,
                    seed=_seed(args), workers=args.workers)
    return scfg, fcfg


def _fw_summary(st, scfg) -> dict:
    objs = [o for o in st.objective_trace if o == o]
    return {
        "iterations": st.k,
        "epsilon": scfg.epsilon,
        "atoms": st.barycenter.n,
        "final_objective": objs[-1] if objs else None,
        "final_gap": st.gap_trace[-1] if st.gap_trace else None,
        "sinkhorn_iters_total": int(sum(st.sinkhorn_iters)),
        "converged": bool(st.all_converged),
    }


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------

def cmd_barycenter(args) -> int:
    measures = [read_measure(p) for p in args.measures]
    scfg, fcfg = _configs(args)
    every = args.objective_every if args.objective_every > 0 else args.iters
    fcfg = dataclasses.replace(fcfg, objective_every=every)
    problem = BarycenterProblem(measures, args.weights)
    st = barycenter(problem, scfg, fcfg)
    os.makedirs(args.out_dir, exist_ok=True)
    write_measure(os.path.join(args.out_dir, "barycenter.json"), st.barycenter)
    write_trace(os.path.join(args.out_dir, "trace.csv"), st)
    summary = _fw_summary(st, scfg)
    summary["mix_weights"] = problem.mix_weights.tolist()
    write_json(os.path.join(args.out_dir, "summary.json"), summary)
    return EXIT_OK if st.all_converged else EXIT_CONVERGENCE


def _load_source(path, pixel_extent):
    ext = os.path.splitext(path)[1].lower()
    if ext in (".pgm", ".png"):
        img = read_image(path)
        extent = pixel_extent if pixel_extent is not None else 1.0 / max(img.shape)
        return image_to_measure(img, extent)
    return read_measure(path)


def cmd_compress(args) -> int:
    beta = _load_source(args.input, args.pixel_extent)
    scfg, fcfg = _configs(args)
    half = max(1, args.iters // 2)
    fcfg = dataclasses.replace(fcfg, objective_every=half)
    st = compress(beta, args.iters, scfg, fcfg)
    os.makedirs(args.out_dir, exist_ok=True)
    write_measure(os.path.join(args.out_dir, "compressed.json"), st.barycenter)
    write_trace(os.path.join(args.out_dir, "trace.csv"), st)
    summary = _fw_summary(st, scfg)
    summary["source_atoms"] = beta.n
    write_json(os.path.join(args.out_dir, "summary.json"), summary)
    return EXIT_OK if st.all_converged else EXIT_CONVERGENCE


def cmd_kmeans(args) -> int:
    measures = [read_measure(p) for p in args.measures]
    scfg, fcfg = _configs(args)
    if not 1 <= args.k <= len(measures):
        raise InputError(f"--k must be between 1 and {len(measures)}")
    model = kmeans(measures, args.k, args.lloyd_iters, scfg, fcfg, seed=_seed(args))
    os.makedirs(args.out_dir, exist_ok=True)
    for j, c in enumerate(model.centroids):
        write_measure(os.path.join(args.out_dir, f"centroid_{j}.json"), c)
    with open(os.path.join(args.out_dir, "assignments.csv"), "w") as fh:
        fh.write("index,file,cluster\n")
        for i, (p, a) in enumerate(zip(args.measures, model.assignments)):
            fh.write(f"{i},{os.path.basename(p)},{int(a)}\n")
    write_json(os.path.join(args.out_dir, "summary.json"), {
        "k": args.k, "epsilon": scfg.epsilon, "inertia": model.inertia,
        "inertia_trace": model.inertia_trace, "reseeded": model.reseeded,
    })
    return EXIT_OK


def cmd_propagate(args) -> int:
    graph = read_graph(args.graph)
    scfg, fcfg = _configs(args)
    res = propagate(graph, args.weighting, args.sweeps, scfg, fcfg, sigma=args.sigma)
    os.makedirs(args.out_dir, exist_ok=True)
    for v, m in sorted(res.measures.items()):
        write_measure(os.path.join(args.out_dir, f"vertex_{v}.json"), m)
    with open(os.path.join(args.out_dir, "objective.csv"), "w") as fh:
        fh.write("sweep,objective\n")
        for s, o in enumerate(res.objective_trace):
            fh.write(f"{s},{o!r}\n")
    write_json(os.path.join(args.out_dir, "summary.json"), {
        "weighting": args.weighting, "epsilon": scfg.epsilon, "sweeps": args.sweeps,
        "objective_trace": res.objective_trace,
    })
    return EXIT_OK


def cmd_bench(args) -> int:
    names = args.suite or ["all"]
    if "all" in names:
        names = list(analysis.SUITES)
    seed = _seed(args)
    os.makedirs(args.out_dir, exist_ok=True)
    summaries = []
    for name in dict.fromkeys(names):
        rep = analysis.run_suite(name, seed=seed)
        rep.write(args.out_dir)
        summaries.append(rep.summary())
        print(f"{name}: {'pass' if rep.passed else 'FAIL'}")
    write_json(os.path.join(args.out_dir, "bench.json"), summaries)
    return EXIT_OK if all(s["pass"] for s in summaries) else EXIT_BOUND


def cmd_render(args) -> int:
    m = read_measure(args.measure)
    try:
        h, w = (int(t) for t in args.resolution.lower().split("x"))
    except ValueError:
        raise InputError(f"--resolution must look like HxW, got {args.resolution!r}")
    box = None
    if args.box is not None:
        box = ((args.box[0], args.box[1]), (args.box[2], args.box[3]))
    img = rasterize(m, (h, w), box)
    out = args.out or os.path.join(args.out_dir, "render.pgm")
    os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
    write_pgm(out, img)
    return EXIT_OK


COMMANDS = {
    "barycenter": cmd_barycenter,
    "compress": cmd_compress,
    "kmeans": cmd_kmeans,
    "propagate": cmd_propagate,
    "bench": cmd_bench,
    "render": cmd_render,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (InputError, InvalidMeasure, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"sinkbary: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (MaxIterationsExceeded, NumericalOverflow) as exc:
        print(f"sinkbary: error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValueError, SinkbaryError) as exc:
        print(f"sinkbary: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
