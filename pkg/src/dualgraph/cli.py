"""Command-line entry point: ``dualgraph {separate,evaluate,synth,laplacian}``.

Parameter precedence, lowest to highest: built-in defaults, ``--manifest``
(replay of an earlier run), ``--config`` JSON file, explicit flags. JSON keys
are the flag names without dashes (``lambda1``, ``motion-threshold`` or
``motion_threshold``).

Exit codes: 0 success, 1 runtime error, 2 usage error.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import graph, metrics, solver, synth, video_io

log = logging.getLogger("dualgraph")

# flag name -> default; None means "derive from data" or "off"
SEPARATE_DEFAULTS: dict[str, object] = {
    "pattern": "*.pgm",
    "lambda1": None,
    "lambda2": 0.1,
    "gamma1": 0.1,
    "gamma2": 0.1,
    "rho1": 1.0,
    "rho2": 1.0,
    "hs": 1.0,
    "ht": 1.0,
    "patch": 3,
    "knn": 4,
    "presmooth": 0.0,
    "sigma_scale": None,
    "dt": None,
    "tout": 200,
    "tin": 5,
    "tol": 1e-4,
    "update_mode": "paper",
    "motion_threshold": None,
    "mask_threshold": 0.05,
    "seed": 0,
    "checkpoint_every": 0,
}

_FLOAT_OR_NONE = {"lambda1", "sigma_scale", "dt", "motion_threshold"}


class UsageError(Exception):
    pass


def _utc_now() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is not None:
        moment = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
    else:
        moment = datetime.now(tz=timezone.utc)
    return moment.isoformat(timespec="seconds")


def _normalize_keys(raw: dict) -> dict:
    out = {}
    for key, value in raw.items():
        k = key.lstrip("-").replace("-", "_")
        if k not in SEPARATE_DEFAULTS:
            raise UsageError(f"unknown config key {key!r}")
        out[k] = value
    return out


def _coerce(params: dict) -> dict:
    out = dict(params)
    for key, default in SEPARATE_DEFAULTS.items():
        value = out[key]
        if value is None:
            continue
        if key in _FLOAT_OR_NONE or isinstance(default, float):
            out[key] = float(value)
        elif isinstance(default, int) and not isinstance(default, bool):
            out[key] = int(value)
        else:
            out[key] = str(value)
    return out


def _config_hash(params: dict) -> str:
    return hashlib.sha256(json.dumps(params, sort_keys=True).encode()).hexdigest()[:16]


def _dflt(key: str) -> str:
    return f"(default: {SEPARATE_DEFAULTS[key]})"


def _add_separate(sub) -> None:
    p = sub.add_parser("separate", help="split a frame directory into background and foreground",
                       argument_default=argparse.SUPPRESS)
    p.add_argument("--input", help="directory of input frames (PGM/PNG)")
    p.add_argument("--output", help="output directory")
    p.add_argument("--pattern", help=f"glob for frame files {_dflt('pattern')}")
    p.add_argument("--config", help="JSON file of flag values")
    p.add_argument("--manifest", help="replay the parameters and input of an earlier run")
    for flag, help_text in [
        ("lambda1", "weighted nuclear norm weight; default sqrt(max(n, m))"),
        ("lambda2", f"foreground l1 weight {_dflt('lambda2')}"),
        ("gamma1", f"spatial graph weight {_dflt('gamma1')}"),
        ("gamma2", f"temporal graph weight {_dflt('gamma2')}"),
        ("rho1", f"penalty for U = L {_dflt('rho1')}"),
        ("rho2", f"penalty for D - L - S = V {_dflt('rho2')}"),
        ("hs", f"spatial filtering parameter {_dflt('hs')}"),
        ("ht", f"temporal filtering parameter {_dflt('ht')}"),
        ("presmooth", f"Gaussian pre-smoothing sigma for patches, 0 = off {_dflt('presmooth')}"),
        ("sigma-scale", "weight scale sigma; default largest singular value of D / 4"),
        ("dt", "L gradient step; default 0.9 / (2 gamma1 + 2 gamma2 + rho1 + rho2)"),
        ("tol", f"relative-change tolerance {_dflt('tol')}"),
        ("motion-threshold", "drop frames whose L1 change is below this (default: off)"),
        ("mask-threshold", f"foreground mask threshold on |S| {_dflt('mask_threshold')}"),
    ]:
        p.add_argument(f"--{flag}", type=float, help=help_text)
    for flag, key, help_text in [
        ("patch", "patch", "patch side length (odd)"),
        ("knn", "knn", "location-nearest neighbours per node"),
        ("tout", "tout", "max outer iterations"),
        ("tin", "tin", "gradient steps per L-update"),
        ("seed", "seed", "recorded in the manifest; the solver is deterministic"),
        ("checkpoint-every", "checkpoint_every", "write a solver checkpoint every N iterations"),
    ]:
        p.add_argument(f"--{flag}", type=int, help=f"{help_text} {_dflt(key)}")
    p.add_argument("--update-mode", choices=solver.UPDATE_MODES, help=f"S-update form {_dflt('update_mode')}")
    p.set_defaults(func=cmd_separate)


def _resolve_separate(args: argparse.Namespace) -> tuple[dict, str, str]:
    params = dict(SEPARATE_DEFAULTS)
    input_dir = output_dir = None
    if "manifest" in args:
        manifest = json.loads(Path(args.manifest).read_text())
        params.update(_normalize_keys(manifest["config"]))
        input_dir, output_dir = manifest.get("input"), manifest.get("output")
    if "config" in args:
        params.update(_normalize_keys(json.loads(Path(args.config).read_text())))
    for key in SEPARATE_DEFAULTS:
        if key in args:
            params[key] = getattr(args, key)
    input_dir = getattr(args, "input", input_dir)
    output_dir = getattr(args, "output", output_dir)
    if input_dir is None or output_dir is None:
        raise UsageError("--input and --output are required (directly or via --manifest)")
    return _coerce(params), str(input_dir), str(output_dir)


def _write_manifest(path: Path, manifest: dict) -> None:
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def cmd_separate(args: argparse.Namespace) -> int:
    params, input_dir, output_dir = _resolve_separate(args)
    try:
        gcfg = graph.GraphConfig(h_s=params["hs"], h_t=params["ht"], p=params["patch"],
                                 k=params["knn"], gaussian_presmooth_sigma=params["presmooth"])
        scfg = solver.SolverConfig(
            lambda1=params["lambda1"], lambda2=params["lambda2"], gamma1=params["gamma1"],
            gamma2=params["gamma2"], rho1=params["rho1"], rho2=params["rho2"], dt=params["dt"],
            sigma_scale=params["sigma_scale"], T_out=params["tout"], T_in=params["tin"],
            tol=params["tol"], update_mode=params["update_mode"],
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc

    seq = video_io.load_frames(input_dir, params["pattern"])
    D = video_io.to_matrix(seq)
    kept = list(range(D.m))
    if params["motion_threshold"] is not None:
        D, kept = video_io.remove_motionless(D, params["motion_threshold"])
    scfg = scfg.resolve(D)

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "software": {"name": "dualgraph", "version": __version__},
        "command": "separate",
        "input": input_dir,
        "output": output_dir,
        "config": params,
        "config_hash": _config_hash(params),
        "graph_config": asdict(gcfg),
        "solver_config": asdict(scfg),
        "kept_frames": kept,
        "timestamps": {"started": _utc_now(), "finished": None},
    }
    _write_manifest(out / "manifest.json", manifest)

    Phi_s, Phi_t = graph.build_laplacians(D, gcfg)
    ckpt = out / "checkpoint" if params["checkpoint_every"] else None
    result = solver.run(D, Phi_s, Phi_t, scfg, checkpoint_dir=ckpt,
                        checkpoint_every=params["checkpoint_every"])

    L = D.with_data(result.L)
    S = D.with_data(result.S)
    video_io.write_frames(out / "bg", video_io.from_matrix(L.data, D.n1, D.n2))
    video_io.write_frames(out / "fg", video_io.from_matrix(np.abs(S.data), D.n1, D.n2))
    masks = metrics.threshold_mask(S, params["mask_threshold"])
    video_io.write_frames(out / "masks", video_io.FrameSequence(masks.astype(float)))
    video_io.write_pgm(out / "background.pgm", video_io.mean_background(L))
    video_io.save_dgm(out / "L.dgm", L.data, D.n1, D.n2)
    video_io.save_dgm(out / "S.dgm", S.data, D.n1, D.n2)
    solver.write_history_csv(out / "history.csv", result.history)

    manifest["iterations"] = result.iterations
    manifest["converged"] = result.converged
    manifest["timestamps"]["finished"] = _utc_now()
    _write_manifest(out / "manifest.json", manifest)
    print(f"separated {D.m} frames of {D.n1}x{D.n2} in {result.iterations} iterations "
          f"(converged: {result.converged}) -> {out}")
    return 0


def _add_evaluate(sub) -> None:
    p = sub.add_parser("evaluate", help="score a recovered background and/or foreground masks")
    p.add_argument("--background", help="recovered background: PGM image, or DGM1 dump of L")
    p.add_argument("--truth-background", help="ground-truth background: PGM image or DGM1 dump")
    p.add_argument("--masks", help="directory of predicted mask PGMs")
    p.add_argument("--foreground", help="DGM1 dump of S, thresholded with --mask-threshold")
    p.add_argument("--mask-threshold", type=float, default=SEPARATE_DEFAULTS["mask_threshold"],
                   help="threshold on |S| for --foreground (default: %(default)s)")
    p.add_argument("--truth-masks", help="directory of ground-truth mask PGMs (>127 = foreground)")
    p.add_argument("--per-frame", action="store_true",
                   help="average per-frame scores instead of pooling counts")
    p.add_argument("--output", help="write the report CSV here")
    p.set_defaults(func=cmd_evaluate)


def _load_background(path: str) -> np.ndarray:
    if path.endswith(".dgm"):
        return video_io.mean_background(video_io.load_dgm(path))
    return video_io.read_pgm(path)


def cmd_evaluate(args: argparse.Namespace) -> int:
    values: dict[str, float] = {}
    if bool(args.background) != bool(args.truth_background):
        raise UsageError("--background and --truth-background go together")
    if args.background:
        est = _load_background(args.background)
        truth = _load_background(args.truth_background)
        values["re"] = metrics.relative_error(est, truth)
        values["psnr"] = metrics.psnr(est, truth)
    if args.masks or args.foreground:
        if not args.truth_masks:
            raise UsageError("--truth-masks is required to score masks")
        if args.masks:
            pred = metrics.load_masks(args.masks)
        else:
            pred = metrics.threshold_mask(video_io.load_dgm(args.foreground), args.mask_threshold)
        truth_masks = metrics.load_masks(args.truth_masks)
        scores = metrics.detection_metrics(pred, truth_masks, per_frame=args.per_frame)
        values.update(precision=scores.precision, recall=scores.recall,
                      f_measure=scores.f_measure)
        if scores.degenerate:
            print(f"note: 0/0 reported as 0 for {', '.join(scores.degenerate)}", file=sys.stderr)
    if not values:
        raise UsageError("nothing to evaluate: give --background/--truth-background and/or masks")
    report = metrics.MetricsReport(**values)
    text = report.to_csv()
    sys.stdout.write(text)
    if args.output:
        Path(args.output).write_text(text)
    return 0


def _add_synth(sub) -> None:
    d = synth.SynthSpec()
    p = sub.add_parser("synth", help="write a synthetic video with ground truth")
    p.add_argument("--output", required=True)
    p.add_argument("--n1", type=int, default=d.n1)
    p.add_argument("--n2", type=int, default=d.n2)
    p.add_argument("--m", type=int, default=d.m)
    p.add_argument("--bg-rank", type=int, default=d.bg_rank)
    p.add_argument("--object-size", type=int, nargs=2, default=list(d.object_size), metavar=("H", "W"))
    p.add_argument("--start", type=int, nargs=2, metavar=("ROW", "COL"),
                   help="top-left object position in frame 0 (default: centred rows, column 2)")
    p.add_argument("--velocity", type=int, nargs=2, default=[0, 2], metavar=("DROW", "DCOL"))
    p.add_argument("--delta", type=float, default=d.object_intensity_delta)
    p.add_argument("--outlier-fraction", type=float, default=d.outlier_fraction)
    p.add_argument("--outlier-magnitude", type=float, default=d.outlier_magnitude)
    p.add_argument("--seed", type=int, default=d.rng_seed)
    p.set_defaults(func=cmd_synth)


def cmd_synth(args: argparse.Namespace) -> int:
    h, w = args.object_size
    start = tuple(args.start) if args.start else ((args.n1 - h) // 2, 2)
    spec = synth.SynthSpec(
        n1=args.n1, n2=args.n2, m=args.m, bg_rank=args.bg_rank, object_size=(h, w),
        trajectory=tuple(synth.linear_trajectory(start, tuple(args.velocity), args.m)),
        object_intensity_delta=args.delta, outlier_fraction=args.outlier_fraction,
        outlier_magnitude=args.outlier_magnitude, rng_seed=args.seed,
    )
    D, L_true, S_true, masks = synth.generate(spec)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    video_io.write_frames(out / "frames", video_io.from_matrix(D.data, D.n1, D.n2))
    video_io.write_frames(out / "masks", video_io.FrameSequence(masks.astype(float)))
    video_io.save_dgm(out / "D.dgm", D.data, D.n1, D.n2)
    video_io.save_dgm(out / "L_true.dgm", L_true.data, D.n1, D.n2)
    video_io.save_dgm(out / "S_true.dgm", S_true.data, D.n1, D.n2)
    video_io.write_pgm(out / "background_true.pgm", video_io.mean_background(L_true))
    spec_json = asdict(spec)
    (out / "spec.json").write_text(json.dumps(spec_json, indent=2, sort_keys=True) + "\n")
    print(f"wrote {spec.m} frames of {spec.n1}x{spec.n2} to {out}")
    return 0


def _add_laplacian(sub) -> None:
    p = sub.add_parser("laplacian", help="build and dump a normalized graph Laplacian")
    p.add_argument("--input", required=True, help="directory of frames")
    p.add_argument("--pattern", default="*.pgm")
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--temporal", action="store_true")
    which.add_argument("--spatial", action="store_true")
    p.add_argument("--output", required=True, help="SPSYM text file")
    p.add_argument("--hs", type=float, default=1.0)
    p.add_argument("--ht", type=float, default=1.0)
    p.add_argument("--patch", type=int, default=3)
    p.add_argument("--knn", type=int, default=4)
    p.add_argument("--presmooth", type=float, default=0.0)
    p.set_defaults(func=cmd_laplacian)


def cmd_laplacian(args: argparse.Namespace) -> int:
    try:
        cfg = graph.GraphConfig(h_s=args.hs, h_t=args.ht, p=args.patch, k=args.knn,
                                gaussian_presmooth_sigma=args.presmooth)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    D = video_io.to_matrix(video_io.load_frames(args.input, args.pattern))
    A = graph.temporal_adjacency(D, cfg) if args.temporal else graph.spatial_adjacency(D, cfg)
    Phi = graph.normalized_laplacian(A)
    graph.write_spsym(args.output, Phi)
    lo, hi = graph.eigen_bounds(Phi)
    nnz = graph.sp.triu(Phi).nnz
    print(f"dim {Phi.shape[0]}")
    print(f"nnz {nnz}")
    print(f"lambda_min {lo:.6g}")
    print(f"lambda_max {hi:.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualgraph", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_separate(sub)
    _add_evaluate(sub)
    _add_synth(sub)
    _add_laplacian(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dualgraph: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report any pipeline failure as exit 1
        print(f"dualgraph: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
