"""Command-line interface.

Pipeline order: make-scene -> gen-dataset -> train-diffuser / train-policy
-> gen-path / rollout / eval.
"""
from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import env
from .eval_harness import (
    ReportTables,
    emit_max_report,
    emit_report,
    eval_max_legible,
    eval_sweep,
    oracle_baseline,
    straight_line_metrics,
)
from .path_diffuser import Stage1Config, generate_path, load_stage1, save_stage1, train_stage1
from .policy import (
    Stage2Config,
    load_stage2,
    rollout,
    save_stage2,
    save_trajectory,
    train_stage2,
)
from .qd import QdConfig, generate_multi_target_dataset, load_dataset, save_dataset


def _parse_cells(spec: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in spec.lower().split("x"))
    except ValueError:
        raise SystemExit(f"invalid cell grid spec {spec!r}; expected e.g. 10x10 or 6x6x6")


def _parse_levels(spec: str) -> list[float]:
    return [float(part) for part in spec.split(",") if part.strip()]


def cmd_make_scene(args) -> None:
    scene = env.make_scene(args.variant, intended_index=args.intended)
    env.save_scene(scene, args.out)
    print(f"wrote scene ({scene.dim}D, {scene.goals.shape[0]} goals) to {args.out}")


def cmd_gen_dataset(args) -> None:
    scene = env.load_scene(args.scene)
    config = QdConfig(
        cell_grid=_parse_cells(args.cells) if args.cells else None,
        alpha=args.alpha,
        k=args.k,
        seed=args.seed,
    )
    targets = None if args.targets == "all" else [int(args.targets)]
    records, metadata = generate_multi_target_dataset(
        scene, args.budget, config, targets=targets
    )
    save_dataset(records, args.out, config, metadata)
    for name, info in metadata["targets"].items():
        print(
            f"target {name}: {info['cohort_size']} records, "
            f"fill rate {info['fill_rate']:.2f}, straight-line ell {info['straight_line_ell']:+.2f}"
        )
    print(f"wrote {len(records)} records to {args.out}")


def cmd_train_diffuser(args) -> None:
    records, _ = load_dataset(args.dataset)
    config = Stage1Config(
        hidden=args.hidden,
        n_blocks=args.blocks,
        train_steps=args.steps,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
    )
    model = train_stage1(records, config)
    save_stage1(model, args.out)
    print(f"trained path diffuser ({model.net.n_params} params, "
          f"final loss {model.final_loss:.4f}) -> {args.out}")


def cmd_train_policy(args) -> None:
    records, _ = load_dataset(args.dataset)
    config = Stage2Config(
        hidden=args.hidden,
        n_blocks=args.blocks,
        train_steps=args.steps,
        batch_size=args.batch,
        lr=args.lr,
        seed=args.seed,
    )
    model = train_stage2(records, config)
    save_stage2(model, args.out)
    print(f"trained guided policy ({model.net.n_params} params, "
          f"final loss {model.final_loss:.4f}) -> {args.out}")


def cmd_gen_path(args) -> None:
    model = load_stage1(args.ckpt)
    scene = env.load_scene(args.scene)
    ps = generate_path(model, scene, args.ell, args.seed)
    with open(args.out, "w") as fh:
        json.dump(
            {
                "ell": ps.ell,
                "waypoints": ps.path.waypoints.tolist(),
                "start_snapped": ps.start_snapped,
                "goal_miss": ps.goal_miss,
            },
            fh,
        )
        fh.write("\n")
    flags = []
    if ps.goal_miss:
        flags.append("goal-miss")
    if ps.start_miss:
        flags.append("start-miss")
    print(f"wrote {len(ps.path)}-waypoint path to {args.out}"
          + (f" [{', '.join(flags)}]" if flags else ""))


def cmd_rollout(args) -> None:
    diffuser = load_stage1(args.diffuser)
    policy_model = load_stage2(args.policy)
    scene = env.load_scene(args.scene)
    rng_words = np.random.SeedSequence((args.seed, scene.intended_index)).generate_state(2)
    ps = generate_path(diffuser, scene, args.ell, int(rng_words[0]))
    result = rollout(policy_model, scene, ps.path, max_steps=args.max_steps, seed=int(rng_words[1]))
    save_trajectory(result.trajectory, args.out)
    print(
        f"{result.outcome} in {len(result.trajectory) - 1} steps "
        f"({result.n_replans} replans) -> {args.out}"
    )


def cmd_eval(args) -> None:
    diffuser = load_stage1(args.diffuser)
    policy_model = load_stage2(args.policy)
    scene = env.load_scene(args.scene)
    oracle_rows = None
    if args.dataset:
        records, _ = load_dataset(args.dataset)
        oracle_rows = oracle_baseline(records, scene)
    straight_rows = [
        straight_line_metrics(scene.with_intended(ti)) for ti in range(scene.goals.shape[0])
    ]
    if args.mode == "max":
        result = eval_max_legible(diffuser, policy_model, scene, args.episodes, args.seed)
        tables = ReportTables(
            scene=scene,
            max_legible=result,
            oracle_rows=oracle_rows,
            straight_rows=straight_rows,
        )
        paths = emit_max_report(tables, args.out)
        for row in result.rows:
            print(
                f"target {row['target']}: SR {row['sr']:.2f}  "
                f"L_d {row['ld_mean']:.3f}  L_p {row['lp_mean']:.4f}"
            )
    else:
        levels = _parse_levels(args.levels) if args.levels else None
        sweep = eval_sweep(
            diffuser,
            policy_model,
            scene,
            ell_levels=levels or (-1.0, -0.5, 0.0, 0.5, 1.0),
            n_per_level=args.episodes,
            seed=args.seed,
        )
        tables = ReportTables(
            scene=scene, sweep=sweep, oracle_rows=oracle_rows, straight_rows=straight_rows
        )
        paths = emit_report(tables, args.out)
        for row in sweep.rows:
            print(
                f"ell {row['ell']:+.2f}: L_p {row['lp_mean']:.4f} +- {row['lp_std']:.4f}  "
                f"SR {row['sr']:.2f}"
            )
        print(f"Spearman(ell, L_p) = {sweep.spearman:.3f}")
    print("wrote " + ", ".join(paths))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="legimod", description="Controllable-legibility motion generation pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", help="write a scene file")
    p.add_argument("--variant", default="2d_default", choices=["2d_default", "3d_default"])
    p.add_argument("--intended", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("gen-dataset", help="generate a quality-diversity dataset")
    p.add_argument("--scene", required=True)
    p.add_argument("--budget", type=int, default=10_000)
    p.add_argument("--cells", default=None, help="cell grid, e.g. 10x10 or 6x6x6")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--targets", default="all", help="'all' or a goal index")
    p.add_argument("--k", type=int, default=8)
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=cmd_gen_dataset)

    for name, fn, extra in [
        ("train-diffuser", cmd_train_diffuser, 12_000),
        ("train-policy", cmd_train_policy, 12_000),
    ]:
        p = sub.add_parser(name, help=f"{name.replace('-', ' ')} on a dataset")
        p.add_argument("--dataset", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--steps", type=int, default=extra)
        p.add_argument("--hidden", type=int, default=128)
        p.add_argument("--blocks", type=int, default=2)
        p.add_argument("--batch", type=int, default=64 if "diffuser" in name else 128)
        p.add_argument("--lr", type=float, default=2e-3)
        p.set_defaults(func=fn)

    p = sub.add_parser("gen-path", help="sample a path at a legibility level")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--ell", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_path)

    p = sub.add_parser("rollout", help="generate a path and execute it")
    p.add_argument("--policy", required=True)
    p.add_argument("--diffuser", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--ell", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="run the evaluation protocols and emit a report")
    p.add_argument("--diffuser", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--mode", choices=["max", "sweep"], required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--levels", default=None, help="comma-separated ell levels for sweep mode")
    p.add_argument("--dataset", default=None, help="dataset file for the oracle baseline rows")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
