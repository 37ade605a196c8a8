"""Command-line entry point.

Verbs: world, dataset, train, simulate, evaluate, report, gradcheck.
Exit codes: 0 on success, 1 when the requested operation fails, 2 for bad
usage or configuration.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np

from . import pipeline
from .dataset import load_dataset
from .metrics import compute_metrics
from .sim import DisturbanceSpec

log = logging.getLogger("arnav")


def _load_config(args) -> pipeline.RunConfig:
    cfg = pipeline.load_run_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, master_seed=args.seed)
    return cfg


def _disturbance(name: str) -> DisturbanceSpec:
    if name == "none":
        return DisturbanceSpec.none()
    if name == "standard":
        return DisturbanceSpec.standard()
    if os.path.exists(name):
        with open(name) as f:
            return DisturbanceSpec(**json.load(f))
    raise ValueError(f"unknown disturbance {name!r} (none, standard, or a JSON file)")


def cmd_world(args) -> int:
    cfg = _load_config(args)
    world = cfg.build_world()
    os.makedirs(args.out, exist_ok=True)
    # coarse overview raster: one sample every 20 m
    ns = np.arange(10.0, world.extent_north, 20.0)
    es = np.arange(10.0, world.extent_east, 20.0)
    grid_n, grid_e = np.meshgrid(ns, es, indexing="ij")
    colors = world.color_at(grid_n, grid_e)
    path = os.path.join(args.out, "world_preview.npz")
    np.savez_compressed(path, colors=colors, north=ns, east=es)
    print(f"world seed={world.seed} extent=({world.extent_north:.0f}, "
          f"{world.extent_east:.0f}) m; preview -> {path}")
    return 0


def cmd_dataset(args) -> int:
    cfg = _load_config(args)
    manifest = pipeline.prepare_dataset(cfg, args.out)
    n = sum(s["records"] for s in manifest["shards"])
    print(f"wrote {len(manifest['shards'])} route shards, {n} training windows -> {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    shards, _ = load_dataset(args.data)
    say = print if not args.quiet else (lambda s: None)
    try:
        if args.target in ("model", "both"):
            pipeline.train_model(cfg, shards, args.out, resume=args.resume, progress=say)
        if args.target in ("classifier", "both"):
            pipeline.train_classifier(cfg, shards, args.out, progress=say)
    except pipeline.TrainingDiverged as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    print(f"checkpoints -> {args.out}")
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    spec = _disturbance(args.disturbance)
    logs = pipeline.run_campaign(
        cfg, args.navigator, spec, args.out, args.model_dir,
        progress=print if not args.quiet else None,
    )
    ok = sum(1 for l in logs if l.status.startswith("success"))
    print(f"{ok}/{len(logs)} flights within the outer success radius -> {args.out}")
    return 0


def cmd_evaluate(args) -> int:
    logs = pipeline.load_campaign(args.logs)
    report = compute_metrics(logs)
    print(json.dumps(dataclasses.asdict(report), indent=1, sort_keys=True, default=str))
    return 0


def cmd_report(args) -> int:
    rows = []
    for spec in args.campaign:
        if "=" not in spec:
            raise ValueError(f"expected label=logdir, got {spec!r}")
        label, path = spec.split("=", 1)
        logs = pipeline.load_campaign(path)
        storage = 0
        metrics_path = os.path.join(path, "metrics.json")
        if os.path.exists(metrics_path):
            with open(metrics_path) as f:
                storage = json.load(f).get("storage_bytes", 0)
        rows.append((label, compute_metrics(logs, storage_bytes=storage)))
    text = pipeline.write_report(rows, args.out)
    print(text, end="")
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import run_builtin_gradchecks

    failures = run_builtin_gradchecks(tol=args.tol)
    if failures:
        for name, err in failures:
            print(f"FAIL {name}: max relative error {err:.3e}", file=sys.stderr)
        return 1
    print("all gradient checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="arnav", description=__doc__)
    p.add_argument("--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config=True, seed=True):
        if config:
            sp.add_argument("--config", default=None, help="TOML run config")
        if seed:
            sp.add_argument("--seed", type=int, default=None, help="override master seed")

    sp = sub.add_parser("world", help="summarize the procedural map and write a preview raster")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_world)

    sp = sub.add_parser("dataset", help="generate routes and write training shards")
    common(sp)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_dataset)

    sp = sub.add_parser("train", help="train the direction model and/or baseline classifier")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset directory")
    sp.add_argument("--out", required=True, help="checkpoint directory")
    sp.add_argument("--target", choices=["model", "classifier", "both"], default="both")
    sp.add_argument("--resume", action="store_true")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("simulate", help="fly a closed-loop evaluation campaign")
    common(sp)
    sp.add_argument("--navigator", default="ours",
                    help="ours | oracle | classify | match[:N]")
    sp.add_argument("--disturbance", default="none",
                    help="none | standard | JSON file of disturbance fields")
    sp.add_argument("--model-dir", required=True, help="directory with checkpoints")
    sp.add_argument("--out", required=True, help="directory for flight logs")
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_simulate)

    sp = sub.add_parser("evaluate", help="compute metrics over a campaign's logs")
    sp.add_argument("--logs", required=True)
    sp.set_defaults(fn=cmd_evaluate)

    sp = sub.add_parser("report", help="tabulate several campaigns into one CSV")
    sp.add_argument("--campaign", action="append", required=True,
                    metavar="LABEL=LOGDIR")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_report)

    sp = sub.add_parser("gradcheck", help="finite-difference checks of the autodiff engine")
    sp.add_argument("--tol", type=float, default=1e-6)
    sp.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
