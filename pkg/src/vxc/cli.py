"""``vxc`` command-line interface.

Exit codes: 0 success, 1 runtime failure (bad file, failed check), 2 usage
or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from vxc.config import TRAIN_SCHEMA, echo_config, read_config_file, resolve, train_config_from
from vxc.exceptions import ConfigurationError, UsageError, VXCError

log = logging.getLogger("vxc")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SEED_ENV = "VXC_SEED"


def default_seed(seed: Optional[int]) -> int:
    """Explicit seed, else $VXC_SEED, else 0."""
    if seed is not None:
        return seed
    env = os.environ.get(SEED_ENV)
    if env is None or not env.strip():
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigurationError(f"{SEED_ENV} must be an integer, got {env!r}") from None


def _echo(out: Path, args: argparse.Namespace, extra: Optional[dict] = None) -> None:
    values = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    values.update(extra or {})
    echo_config(out, values)


def _int_list(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _load_model(path, expect_kind: Optional[str] = None):
    from vxc.trainer import model_from_checkpoint

    model, cfg = model_from_checkpoint(path)
    if expect_kind is not None and model.kind != expect_kind:
        raise ConfigurationError(f"{path} holds a {model.kind} model, not {expect_kind}")
    return model, cfg


def _codec_of(model, path):
    codec = getattr(model, "codec", None)
    if codec is None:
        raise ConfigurationError(f"{path} holds a {model.kind} model, which has no image codec")
    return codec


# -- commands -------------------------------------------------------------

def cmd_gen_data(args) -> int:
    from vxc.data import build_dataset, manifest_hash

    args.seed = default_seed(args.seed)
    if args.views < 1:
        raise UsageError(f"--views must be >= 1, got {args.views}")
    manifest = build_dataset(args.out, n_train=args.train, n_test=args.test, V=args.views, seed=args.seed,
                             D=args.grid, height=args.size, width=args.size, workers=args.workers,
                             force=args.force)
    _echo(Path(args.out), args)
    print(f"{len(manifest.split('train'))} train / {len(manifest.split('test'))} test examples in {args.out}; "
          f"manifest sha256 {manifest_hash(args.out)}")
    return EXIT_OK


def cmd_train(args) -> int:
    from vxc.data import load_split
    from vxc.trainer import Trainer

    file_values = read_config_file(args.config) if args.config else {}
    overrides = {k: getattr(args, k) for k in TRAIN_SCHEMA}
    if overrides["seed"] is None and "seed" not in file_values and os.environ.get(SEED_ENV):
        overrides["seed"] = default_seed(None)
    values = resolve(TRAIN_SCHEMA, file_values, overrides)
    cfg = train_config_from(values, args.model)
    data = load_split(values["data"], "train")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    echo_config(out, {"model": args.model, **values})

    def report(m):
        print(f"epoch {m.epoch}: L_comp={m.L_comp:.5f} L_3D={m.L_3D:.5f} L_total={m.L_total:.5f} "
              f"({m.wall_s:.1f}s)", flush=True)

    trainer = Trainer(cfg, out, on_epoch=report)
    if args.resume and trainer.resume():
        print(f"resumed at epoch {trainer.epoch}")
    trainer.fit(data)
    print(f"checkpoints and metrics.csv in {out}")
    return EXIT_OK


def cmd_compress(args) -> int:
    from vxc.codec import compress
    from vxc.data import read_ppm

    model, _ = _load_model(args.checkpoint, args.model)
    codec = _codec_of(model, args.checkpoint)
    n_iter = args.n_iter or codec.cfg.n_iter_max
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo(out, args)
    for src in args.inputs:
        img = read_ppm(src).astype(np.float64) / 255.0
        bs, _ = compress(codec, img, n_iter)
        dst = out / (Path(src).stem + ".vxc")
        bs.save(dst)
        print(f"{src} -> {dst} ({len(bs.to_bytes())} bytes, N={n_iter})")
    return EXIT_OK


def cmd_decompress(args) -> int:
    from vxc.codec import Bitstream, decompress
    from vxc.data import write_ppm

    model, _ = _load_model(args.checkpoint, args.model)
    codec = _codec_of(model, args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo(out, args)
    for src in args.inputs:
        img = decompress(codec, Bitstream.load(src), args.n_iter)
        dst = out / (Path(src).stem + ".ppm")
        write_ppm(dst, img)
        print(f"{src} -> {dst}")
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    from vxc.data import load_split, read_ppm, write_vox
    from vxc.evaluate import predict_occupancy
    from vxc.recon3d import IOU_THRESHOLD

    model, _ = _load_model(args.checkpoint, args.model)
    if args.views:
        views = np.stack([read_ppm(v) for v in args.views]).astype(np.float32)[None] / 255.0
        names = ["recon"]
    elif args.data:
        split = load_split(args.data, args.split, args.limit)
        views = split.views[:, :args.n_views]
        names = split.ids
    else:
        raise UsageError("give either --views or --data")
    n_iter = None if model.kind == "implicit" else (args.n_iter or model.cfg.codec.n_iter_max)
    p = predict_occupancy(model, views, n_iter)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _echo(out, args)
    for name, grid in zip(names, p):
        write_vox(out / f"{name}.vox", grid > IOU_THRESHOLD)
        if args.probabilities:
            write_vox(out / f"{name}_p.vox", grid.astype(np.float32))
    print(f"{len(names)} grid(s) written to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    from vxc.data import load_split
    from vxc.evaluate import evaluate, write_report

    model, _ = _load_model(args.checkpoint, args.model)
    split = load_split(args.data, args.split, args.limit)
    results = evaluate(model, split.views, split.grids, args.rates, n_views=args.n_views, threads=args.threads)
    out = Path(args.out)
    _echo(out, args)
    paths = write_report(out, results, model.kind, bins=args.bins, ids=split.ids)
    for r in results:
        print(f"{model.kind} rate_param={r.rate_param} rate={r.row()[1]} mIoU={r.miou:.4f} std={r.std:.4f} "
              f"n={len(r.ious)}")
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from vxc import gradchecks

    reports = gradchecks.run_all(trials=args.trials, seed=default_seed(args.seed), composites=args.all)
    for r in reports:
        print(r)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo(out, args)
        with open(out / "gradcheck.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("name", "passed", "max_rel_err", "tol", "n_checked", "mode"))
            for r in reports:
                w.writerow((r.name, int(r.passed), f"{r.max_rel_err:.6e}", r.tol, r.n_checked, r.mode))
    failed = [r.name for r in reports if not r.passed]
    if failed:
        print(f"FAILED: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAIL
    print(f"all {len(reports)} checks passed")
    return EXIT_OK


def cmd_bench(args) -> int:
    from threadpoolctl import threadpool_limits

    from vxc.bench import desk_models, format_table, run_bench

    seed = default_seed(args.seed)
    with threadpool_limits(1):
        timings = run_bench(desk_models(seed=seed), batch=args.batch, n_views=args.n_views, n_iter=args.n_iter,
                            iters=args.iters, warmup=args.warmup, backward=not args.forward_only, seed=seed)
    table = format_table(timings)
    print(table)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _echo(out, args)
        with open(out / "bench.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("model", "forward_ms", "backward_ms", "iters"))
            for name, t in timings.items():
                w.writerow((name, f"{t.forward_ms:.4f}", f"{t.backward_ms:.4f}", len(t.forward_samples)))
        (out / "bench.txt").write_text(table + "\n")
    return EXIT_OK


# -- parser ---------------------------------------------------------------

def _add_train_overrides(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("config overrides (take precedence over --config)")
    for key, spec in TRAIN_SCHEMA.items():
        # kept as text so the schema converts flag and file values identically
        g.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, metavar=key.upper(),
                       help=f"{spec.help} (default: {spec.default})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vxc", description="Joint image compression and multi-view voxel "
                                     "reconstruction on synthetic shapes.",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    fmt = argparse.ArgumentDefaultsHelpFormatter

    p = sub.add_parser("gen-data", help="render the synthetic shape corpus", formatter_class=fmt)
    p.add_argument("--out", required=True, help="dataset directory")
    p.add_argument("--train", type=int, default=64, help="training examples")
    p.add_argument("--test", type=int, default=16, help="test examples")
    p.add_argument("--views", type=int, default=5, help="rendered views per example")
    p.add_argument("--seed", type=int, default=None, help=f"corpus seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--size", type=int, default=32, help="square image extent")
    p.add_argument("--grid", type=int, default=32, help="voxel grid extent D")
    p.add_argument("--workers", type=int, default=1, help="rendering processes")
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a joint model")
    p.add_argument("--model", required=True, choices=("sequential", "direct", "implicit"))
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--out", required=True, help="run directory for checkpoints and metrics")
    p.add_argument("--resume", action="store_true", help="continue from the newest checkpoint in --out")
    _add_train_overrides(p)
    p.set_defaults(func=cmd_train)

    def common(p, inputs: bool = True):
        p.add_argument("--checkpoint", required=True, help="VXCK checkpoint written by train")
        p.add_argument("--model", choices=("sequential", "direct", "implicit"), default=None,
                       help="expected model kind; mismatches are rejected")
        p.add_argument("--out", required=True, help="output directory")
        if inputs:
            p.add_argument("inputs", nargs="+", help="input files")

    p = sub.add_parser("compress", help="encode PPM images to VXC1 bitstreams", formatter_class=fmt)
    common(p)
    p.add_argument("--n-iter", type=int, default=None, help="codec iterations N (default: N_max)")
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("decompress", help="decode VXC1 bitstreams to PPM images", formatter_class=fmt)
    common(p)
    p.add_argument("--n-iter", type=int, default=None, help="decode only the first N codes")
    p.set_defaults(func=cmd_decompress)

    p = sub.add_parser("reconstruct", help="predict VOX1 occupancy grids", formatter_class=fmt)
    common(p, inputs=False)
    p.add_argument("--views", nargs="+", help="PPM views of one object")
    p.add_argument("--data", help="dataset directory (alternative to --views)")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--limit", type=int, default=None, help="first LIMIT examples only")
    p.add_argument("--n-views", type=int, default=5, help="views per example taken from --data")
    p.add_argument("--n-iter", type=int, default=None, help="codec iterations (default: N_max)")
    p.add_argument("--probabilities", action="store_true", help="also write float occupancy grids")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("eval", help="test-set mIoU per rate with CSV and SVG output", formatter_class=fmt)
    common(p, inputs=False)
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--limit", type=int, default=None, help="first LIMIT examples only")
    p.add_argument("--rates", type=_int_list, default=None,
                   help="comma-separated N values (codec models) or K (implicit); default: all achievable")
    p.add_argument("--n-views", type=int, default=5, help="views per example")
    p.add_argument("--threads", type=int, default=1, help="inference threads")
    p.add_argument("--bins", action="store_true", help="write IoU significance bins for the last rate")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification", formatter_class=fmt)
    p.add_argument("--all", action="store_true", help="include recurrent cells, codec, 3-D and joint composites")
    p.add_argument("--trials", type=int, default=1, help="random draws per primitive")
    p.add_argument("--seed", type=int, default=None, help=f"seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--out", default=None, help="write gradcheck.csv here")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("bench", help="single-threaded forward/backward timings", formatter_class=fmt)
    p.add_argument("--iters", type=int, default=50, help="timed iterations per model")
    p.add_argument("--warmup", type=int, default=5, help="untimed warm-up iterations")
    p.add_argument("--batch", type=int, default=1, help="examples per forward")
    p.add_argument("--n-views", type=int, default=5, help="views per example")
    p.add_argument("--n-iter", type=int, default=4, help="codec iterations N")
    p.add_argument("--forward-only", action="store_true", help="skip backward timing")
    p.add_argument("--seed", type=int, default=None, help=f"seed (falls back to ${SEED_ENV}, then 0)")
    p.add_argument("--out", default=None, help="write bench.csv and bench.txt here")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError) as err:
        print(f"vxc {args.command}: error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (VXCError, OSError, ValueError) as err:
        print(f"vxc {args.command}: error: {err}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
