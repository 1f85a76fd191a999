"""Command line entry point: scene generation, policy training, suite runs.

All randomness flows from --seed; reruns with the same seed write byte
identical artifacts. Exit code 0 means no infrastructure error; task
failures are data in the report, not process errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from .bench import (
    ABLATION_PRESETS, RunParams, metrics, run_suite, write_report_csv,
    write_summary_json,
)
from .control import ControlConfig
from .imitation import (
    DatasetConfig, TrainConfig, collect_dataset, load_policy, save_dataset_csv,
    save_policy, train_bc,
)
from .mapping import MapConfig
from .planner import ParseError, parse_task_file
from .raycast import RenderConfig
from .scene_repr import ReprConfig
from .scenegen import ConfigError, SceneGenConfig, generate_scene
from .world import save_scene


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--config", type=str, default=None,
                   help="JSON config file; flags override it")


def _map_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--grid-side", type=int, default=None)
    p.add_argument("--embed-dim", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--update-iters", type=int, default=None)
    p.add_argument("--visibility-threshold", type=int, default=None)
    p.add_argument("--nav-threshold", type=float, default=None)
    p.add_argument("--fine-horizon", type=int, default=None)
    p.add_argument("--retries", type=int, default=None)
    p.add_argument("--subgoal-budget", type=int, default=None)
    p.add_argument("--episode-budget", type=int, default=None)
    p.add_argument("--rays", type=int, default=None)
    p.add_argument("--fov", type=float, default=None)
    p.add_argument("--max-range", type=float, default=None)
    p.add_argument("--noise-class-flip", type=float, default=None)
    p.add_argument("--noise-depth-sigma", type=float, default=None)


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path) as f:
        return json.load(f)


def effective_params(args) -> tuple[RunParams, dict]:
    """Defaults, overlaid by the config file, overlaid by CLI flags."""
    cfg = _load_config_file(getattr(args, "config", None))

    def pick(flag, key, default):
        v = getattr(args, flag, None)
        if v is not None:
            return v
        return cfg.get(key, default)

    map_cfg = MapConfig(grid_side=pick("grid_side", "grid_side", 80))
    render = RenderConfig(
        n_rays=pick("rays", "rays", 120),
        fov_deg=pick("fov", "fov", 60.0),
        max_range=pick("max_range", "max_range", 10.0),
        noise_class_flip=pick("noise_class_flip", "noise_class_flip", 0.0),
        noise_depth_sigma=pick("noise_depth_sigma", "noise_depth_sigma", 0.0),
    )
    control = ControlConfig(
        tau_nav=pick("nav_threshold", "nav_threshold", 0.5),
        fine_horizon=pick("fine_horizon", "fine_horizon", 8),
        retries=pick("retries", "retries", 3),
        subgoal_budget=pick("subgoal_budget", "subgoal_budget", 250),
        rho=pick("visibility_threshold", "visibility_threshold", 8),
    )
    repr_cfg = ReprConfig(
        learn_rate=pick("learning_rate", "learning_rate", 0.01),
        iters=pick("update_iters", "update_iters", 10),
    )
    params = RunParams(
        map=map_cfg, render=render, control=control, repr=repr_cfg,
        embed_dim=pick("embed_dim", "embed_dim", 256),
        episode_budget=pick("episode_budget", "episode_budget", 1200),
    )
    echo = {
        "seed": args.seed,
        "grid_side": map_cfg.grid_side,
        "embed_dim": params.embed_dim,
        "learning_rate": repr_cfg.learn_rate,
        "update_iters": repr_cfg.iters,
        "visibility_threshold": control.rho,
        "nav_threshold": control.tau_nav,
        "fine_horizon": control.fine_horizon,
        "retries": control.retries,
        "subgoal_budget": control.subgoal_budget,
        "episode_budget": params.episode_budget,
        "rays": render.n_rays,
        "fov": render.fov_deg,
        "max_range": render.max_range,
        "noise_class_flip": render.noise_class_flip,
        "noise_depth_sigma": render.noise_depth_sigma,
    }
    return params, echo


def cmd_gen_scenes(args) -> int:
    os.makedirs(args.out, exist_ok=True)
    cfg = SceneGenConfig(width=args.width, height=args.height)
    for i in range(args.count):
        try:
            scene = generate_scene(cfg, args.seed + i)
        except ConfigError as e:
            print(f"error: {e}", file=sys.stderr)
            return 2
        save_scene(scene, os.path.join(args.out, f"scene_{args.seed + i:06d}.json"))
    print(f"wrote {args.count} scenes to {args.out}")
    return 0


def cmd_train_policy(args) -> int:
    seeds = list(range(args.seed + 1000, args.seed + 1000 + args.train_scenes))
    heldout = list(range(args.seed + 2000, args.seed + 2000 + args.heldout_scenes))
    ds_cfg = DatasetConfig(train_seeds=tuple(seeds), heldout_seeds=tuple(heldout))
    dataset = collect_dataset(ds_cfg)
    if len(dataset) == 0:
        print("error: empty dataset", file=sys.stderr)
        return 2
    params, train_metrics = train_bc(dataset, TrainConfig(seed=args.seed))
    save_policy(params, args.out)
    if args.dataset_out:
        save_dataset_csv(dataset, args.dataset_out)
    metrics_path = args.out + ".metrics.json"
    with open(metrics_path, "w") as f:
        payload = {
            "rows": len(dataset),
            "skipped_pairs": dataset.skipped_pairs,
            "train_accuracy": train_metrics["train_accuracy"],
            "heldout_accuracy": train_metrics["heldout_accuracy"],
            "final_loss": train_metrics["epoch_loss"][-1],
        }
        f.write(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    print(f"policy -> {args.out}  heldout accuracy "
          f"{train_metrics['heldout_accuracy']:.4f}")
    return 0


def cmd_run(args) -> int:
    params, echo = effective_params(args)
    try:
        tasks = parse_task_file(args.tasks)
    except (OSError, ParseError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.ablation not in ABLATION_PRESETS and args.ablation != "expert":
        print(f"error: unknown ablation {args.ablation!r}; choose from "
              f"{sorted(ABLATION_PRESETS) + ['expert']}", file=sys.stderr)
        return 2
    policy = None
    expert_drive = args.ablation == "expert"
    mode = ABLATION_PRESETS.get(args.ablation, ABLATION_PRESETS["full"])
    if not expert_drive and mode.use_fine:
        try:
            policy = load_policy(args.policy)
        except (OSError, ValueError, TypeError) as e:
            print(f"error: cannot load policy: {e}", file=sys.stderr)
            return 2

    os.makedirs(args.out, exist_ok=True)
    suite = [(t, args.seed * 1_000_000 + i * 100) for i, t in enumerate(tasks)]

    on_step = None
    if args.render:
        from .viz import scene_overlay, write_ppm
        frames_dir = os.path.join(args.out, "frames")
        os.makedirs(frames_dir, exist_ok=True)
        counter = {"n": 0}

        def on_step(driver):
            img = scene_overlay(driver.scene, driver.trajectory,
                                (driver.agent.x, driver.agent.z))
            write_ppm(img, os.path.join(frames_dir,
                                        f"step_{counter['n']:06d}.ppm"))
            counter["n"] += 1

    results = []
    from .bench import run_episode
    for i, (task, seed) in enumerate(suite):
        results.append(run_episode(task, seed, mode, policy, params,
                                   expert_drive=expert_drive, on_step=on_step))
    echo["ablation"] = args.ablation
    echo["tasks"] = args.tasks
    write_report_csv(results, os.path.join(args.out, "report.csv"))
    write_summary_json(results, os.path.join(args.out, "summary.json"), echo)
    m = metrics(results)
    print(f"episodes {m['episodes']}  SR {m['SR']:.3f}  GC {m['GC']:.3f}  "
          f"PLWSR {m['PLWSR']:.3f}  PLWGC {m['PLWGC']:.3f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="semgrid",
        description="gridworld semantic-map navigation and interaction stack")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-scenes", help="write seeded scene JSON files")
    _add_common(g)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--out", type=str, required=True)
    g.add_argument("--width", type=int, default=12)
    g.add_argument("--height", type=int, default=12)
    g.set_defaults(func=cmd_gen_scenes)

    t = sub.add_parser("train-policy", help="collect expert data and clone it")
    _add_common(t)
    t.add_argument("--out", type=str, required=True)
    t.add_argument("--train-scenes", type=int, default=40)
    t.add_argument("--heldout-scenes", type=int, default=10)
    t.add_argument("--dataset-out", type=str, default=None)
    t.set_defaults(func=cmd_train_policy)

    r = sub.add_parser("run", help="execute a task suite and write reports")
    _add_common(r)
    r.add_argument("--tasks", type=str, required=True)
    r.add_argument("--policy", type=str, default=None)
    r.add_argument("--ablation", type=str, default="full")
    r.add_argument("--out", type=str, default="out")
    r.add_argument("--render", action="store_true",
                   help="write one scene PPM per executed step")
    _map_flags(r)
    r.set_defaults(func=cmd_run)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
