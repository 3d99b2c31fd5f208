"""Command-line entry points: gen-demos, train, eval, serve, inspect."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .data import DatasetReader, write_dataset
from .detector import DEFAULT_METRIC_THRESHOLDS, DetectorConfig
from .evaluation import counterfactual_eval, metric_comparison, run_rollout
from .operators import EXPERT, SUBOPTIMAL, OperatorProfile, generate_dataset
from .policy import PolicyConfig
from .sim import OBS_DIM, TASK_IDS, TaskSpec
from .training import (TrainConfig, finetune, load_detector, load_policy,
                       train_error_detector, train_policy)


def _cmd_gen_demos(args):
    task = TaskSpec(task_id=args.task, layout_variant=args.layout)
    if args.profile == "expert":
        profile = EXPERT
    elif args.profile == "suboptimal":
        profile = SUBOPTIMAL
    else:
        profile = OperatorProfile(noise_scale=args.noise, dither_prob=args.dither,
                                  pause_prob=args.pause, seed=1)
    episodes, attempts = generate_dataset(task, args.n, profile, start_seed=args.seed,
                                          keep_failures=not args.drop_failures)
    n_success = sum(1 for e in episodes if e.success)
    write_dataset(args.out, episodes, header_extra={
        "command": "gen-demos", "task": args.task, "layout": args.layout,
        "profile": args.profile, "n": args.n, "seed": args.seed})
    print(f"wrote {len(episodes)} episodes ({n_success} successful, "
          f"{attempts} attempts) to {args.out}")


def _cmd_train(args):
    cfg = TrainConfig(epochs=args.epochs, steps_per_epoch=args.steps,
                      batch_size=args.batch, lr=args.lr, eval_episodes=args.eval_episodes,
                      seed=args.seed, checkpoint_dir=args.ckpt_dir)
    overrides = json.loads(Path(args.config).read_text()) if args.config else {}
    reader = DatasetReader(args.data)
    if args.kind == "policy":
        pc = (PolicyConfig.compact(reader.obs_dim, args.arch) if args.preset == "compact"
              else PolicyConfig.full(reader.obs_dim, args.arch))
        if overrides:
            pc = PolicyConfig.from_json({**pc.to_json(), **overrides})
        if cfg.lr == 0.0:
            cfg = TrainConfig(**{**cfg.__dict__, "lr": 1e-4})
        res = train_policy(cfg, args.data, pc, metrics_path=args.metrics)
    else:
        dc = (DetectorConfig.compact(reader.obs_dim) if args.preset == "compact"
              else DetectorConfig(obs_dim=reader.obs_dim))
        if overrides:
            dc = DetectorConfig.from_json({**dc.to_json(), **overrides})
        if args.lr == 1e-4:   # detector default differs from the policy default
            cfg = TrainConfig(**{**cfg.__dict__, "lr": 1e-3})
        out = args.ckpt_dir and str(Path(args.ckpt_dir) / f"detector_s{args.seed}.mmck")
        res = train_error_detector(cfg, args.data, dc, metrics_path=args.metrics,
                                   checkpoint_path=out)
    for entry in res.metrics:
        print(json.dumps(entry))
    if res.aborted:
        print("training aborted on non-finite loss; last good checkpoint retained",
              file=sys.stderr)
        sys.exit(1)
    print(f"final checkpoint: {res.final_checkpoint}")


def _cmd_finetune(args):
    cfg = TrainConfig(epochs=args.epochs, steps_per_epoch=args.steps,
                      batch_size=args.batch, lr=args.lr, eval_episodes=args.eval_episodes,
                      seed=args.seed, checkpoint_dir=args.ckpt_dir)
    res = finetune(args.checkpoint, args.data, cfg, metrics_path=args.metrics,
                   out_checkpoint=args.out)
    for entry in res.metrics:
        print(json.dumps(entry))
    print(f"finetuned checkpoint: {res.final_checkpoint}")


def _cmd_eval(args):
    policy, manifest = load_policy(args.policy)
    task = TaskSpec.from_json(manifest["task"]) if args.task is None else \
        TaskSpec(task_id=args.task, layout_variant=args.layout)
    seeds = [int(s) for s in
             np.random.SeedSequence([args.seed, 0xEA55]).generate_state(args.episodes)]
    report = {"task": task.task_id, "layout": task.layout_variant,
              "policy": args.policy, "episodes": args.episodes}
    if args.detector:
        det, _ = load_detector(args.detector)
        mcfg = det.config
        if args.threshold is not None:
            mcfg = DetectorConfig.from_json({**mcfg.to_json(), "threshold": args.threshold})
        if args.compare_metrics:
            report["metric_comparison"] = metric_comparison(
                policy, det, task, seeds, DEFAULT_METRIC_THRESHOLDS, monitor_cfg=mcfg)
        else:
            res = counterfactual_eval(policy, det, task, seeds, monitor_cfg=mcfg)
            res.pop("pairs")
            report.update(res)
    else:
        wins = 0
        for s in seeds:
            rec = run_rollout(policy, task, env_seed=s, rollout_seed=s, greedy=args.greedy)
            wins += int(rec.success)
        report["success_rate"] = wins / len(seeds)
    text = json.dumps(report, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)


def _cmd_serve(args):
    import uvicorn

    from .teleop import create_app
    task = TaskSpec(task_id=args.task, layout_variant=args.layout)
    app = create_app(task, out_path=args.out, seed=args.seed, static_dir=args.static)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")


def _cmd_inspect(args):
    reader = DatasetReader(args.file)
    info = dict(reader.header)
    info["episodes"] = len(reader)
    info["successful"] = sum(1 for e in reader.index if e["success"])
    info["norm_mean"] = f"<{len(info['norm_mean'])} floats>"
    info["norm_std"] = f"<{len(info['norm_std'])} floats>"
    print(json.dumps(info, indent=2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="momart",
                                description="planar mobile-manipulation workbench")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-demos", help="generate scripted demonstrations")
    g.add_argument("--task", required=True, choices=TASK_IDS)
    g.add_argument("--layout", default="canonical", choices=("canonical", "swapped"))
    g.add_argument("--n", type=int, default=110)
    g.add_argument("--profile", default="expert", choices=("expert", "suboptimal", "custom"))
    g.add_argument("--noise", type=float, default=0.25)
    g.add_argument("--dither", type=float, default=0.08)
    g.add_argument("--pause", type=float, default=0.05)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--drop-failures", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=_cmd_gen_demos)

    t = sub.add_parser("train", help="train a policy or the error detector")
    t.add_argument("--kind", required=True, choices=("policy", "detector"))
    t.add_argument("--arch", default="tiered", choices=("rnn", "tiered"))
    t.add_argument("--data", required=True)
    t.add_argument("--preset", default="compact", choices=("compact", "full"))
    t.add_argument("--config", help="JSON file with config overrides")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--steps", type=int, default=500)
    t.add_argument("--batch", type=int, default=16)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--eval-episodes", type=int, default=30)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--ckpt-dir", default="checkpoints")
    t.add_argument("--metrics", help="JSON-lines metric log path")
    t.set_defaults(func=_cmd_train)

    f = sub.add_parser("finetune", help="few-shot finetuning of a checkpoint")
    f.add_argument("--checkpoint", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--epochs", type=int, default=5)
    f.add_argument("--steps", type=int, default=500)
    f.add_argument("--batch", type=int, default=16)
    f.add_argument("--lr", type=float, default=1e-4)
    f.add_argument("--eval-episodes", type=int, default=30)
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--ckpt-dir", default="checkpoints")
    f.add_argument("--metrics")
    f.add_argument("--out", required=True)
    f.set_defaults(func=_cmd_finetune)

    e = sub.add_parser("eval", help="rollout evaluation / counterfactual scoring")
    e.add_argument("--policy", required=True)
    e.add_argument("--detector")
    e.add_argument("--task", choices=TASK_IDS)
    e.add_argument("--layout", default="canonical", choices=("canonical", "swapped"))
    e.add_argument("--episodes", type=int, default=30)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--threshold", type=float)
    e.add_argument("--greedy", action="store_true")
    e.add_argument("--compare-metrics", action="store_true")
    e.add_argument("--out")
    e.set_defaults(func=_cmd_eval)

    s = sub.add_parser("serve", help="run the teleoperation session server")
    s.add_argument("--task", required=True, choices=TASK_IDS)
    s.add_argument("--layout", default="canonical", choices=("canonical", "swapped"))
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="MMDS file recorded episodes are appended to")
    s.add_argument("--static", help="directory with built client assets")
    s.set_defaults(func=_cmd_serve)

    i = sub.add_parser("inspect", help="print an MMDS file header")
    i.add_argument("file")
    i.set_defaults(func=_cmd_inspect)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args.func(args)


if __name__ == "__main__":
    main()
