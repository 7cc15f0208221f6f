"""Command line: generate synthetic datasets, run experiment grids, evaluate
checkpoints, and serve the annotation API.

Every grid-config field can be overridden by a flag of the same name;
--seed pins all randomness of a run.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

from .checkpoint import load_checkpoint
from .data import (
    NoiseSpec,
    flip_labels,
    generate_synthetic,
    load_features,
    load_triplets,
    sample_triplets,
    save_features,
    save_triplets,
    split,
)
from .evaluation import (
    apply_overrides,
    compute_tga,
    emit_curves,
    grid_from_config,
    run_grid,
    summarize,
)


def cmd_generate(args) -> int:
    os.makedirs(args.out_dir, exist_ok=True)
    objects, metric = generate_synthetic(args.n, args.d, args.seed)
    pool = sample_triplets(objects, metric, args.pool_size, seed=args.seed + 1)
    train_pool, test_pool = split(pool, args.train_count, args.test_count, seed=args.seed + 2)
    if args.noise_rate > 0:
        train_pool = flip_labels(train_pool, NoiseSpec(args.noise_rate, seed=args.seed + 3))
    save_features(os.path.join(args.out_dir, "features.csv"), objects)
    save_triplets(os.path.join(args.out_dir, "train_triplets.csv"), train_pool, objects)
    save_triplets(os.path.join(args.out_dir, "test_triplets.csv"), test_pool, objects)
    with open(os.path.join(args.out_dir, "metric.json"), "w", encoding="utf-8") as f:
        json.dump({"factor": metric.factor.tolist()}, f)
    print(
        f"wrote {len(objects)} objects, {len(train_pool)} train / {len(test_pool)} test "
        f"triplets to {args.out_dir}"
    )
    return 0


def cmd_run(args) -> int:
    with open(args.config, "r", encoding="utf-8") as f:
        grid = grid_from_config(json.load(f))
    overrides = {
        "strategy": args.strategy,
        "batch_size": args.batch_size,
        "initial_pool": args.initial_pool,
        "noise_rate": args.noise_rate,
        "mu": args.mu,
        "rounds": args.rounds,
        "epochs": args.epochs,
        "oversample": args.oversample,
        "informativeness": args.informativeness,
        "diversity": args.diversity,
        "learning_rate": args.learning_rate,
        "seed": args.seed,
        "seeds": [int(s) for s in args.seeds.split(",")] if args.seeds else None,
    }
    grid = apply_overrides(grid, overrides)
    result = run_grid(grid, record_timing=not args.no_timing)
    emit_curves(result.records, args.out)
    for failure in result.failures:
        print(f"FAILED {failure}", file=sys.stderr)
    for cell in summarize(result.records):
        final = cell["mean"][-1] if cell["mean"] else float("nan")
        print(
            f"{cell['strategy']}: b={cell['batch_size']} l={cell['initial_pool']} "
            f"noise={cell['noise_rate']} final TGA {final:.4f} "
            f"(std {cell['std'][-1]:.4f}, {cell['seeds_per_round'][-1]} seeds)"
        )
    print(f"curves written to {args.out}")
    return 1 if result.failures else 0


def cmd_evaluate(args) -> int:
    state, _, _ = load_checkpoint(args.checkpoint)
    objects = load_features(args.features)
    test_pool = load_triplets(args.triplets, objects)
    tga = compute_tga(state.model, objects.features, test_pool)
    print(f"TGA {tga:.6f} over {len(test_pool)} triplets (round {state.round}, "
          f"{state.labeled_count} labeled)")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.root), host=args.host, port=args.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="triplearn",
        description="Triplet-based perceptual metric learning with batch-decorrelated "
        "active annotation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset and triplet pools")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--d", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--pool-size", type=int, default=40000)
    g.add_argument("--train-count", type=int, default=20000)
    g.add_argument("--test-count", type=int, default=20000)
    g.add_argument("--noise-rate", type=float, default=0.0)
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run an experiment grid from a JSON config")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True, help="curves CSV path")
    r.add_argument("--strategy")
    r.add_argument("--batch-size", type=int, dest="batch_size")
    r.add_argument("--initial-pool", type=int, dest="initial_pool")
    r.add_argument("--noise-rate", type=float, dest="noise_rate")
    r.add_argument("--mu", type=float)
    r.add_argument("--rounds", type=int)
    r.add_argument("--epochs", type=int)
    r.add_argument("--oversample", type=int)
    r.add_argument("--informativeness")
    r.add_argument("--diversity")
    r.add_argument("--learning-rate", type=float, dest="learning_rate")
    r.add_argument("--seed", type=int)
    r.add_argument("--seeds", help="comma-separated seed list")
    r.add_argument("--no-timing", action="store_true",
                   help="write zero wall-clock columns for byte-reproducible output")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("evaluate", help="TGA of a checkpointed model on a triplet file")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--features", required=True)
    e.add_argument("--triplets", required=True)
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("serve", help="run the annotation service")
    s.add_argument("--root", required=True, help="directory for session state")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
