"""Trainers for the policies and the error detector, plus few-shot finetuning.

Everything is seeded: batch sampling, weight init, evaluation rollouts and
noise draws all derive from the run seed, so a repeated run produces
byte-identical checkpoints and metric logs.  An epoch is a fixed number of
gradient steps followed by evaluation rollouts (policies) or a loss report
(detector).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .data import DatasetReader, PairSampler, WindowSampler
from .detector import DetectorConfig, DetectorModel, elbo_loss_and_grads
from .evaluation import run_rollout
from .optim import Adam, NonFiniteGradient
from .policy import PolicyConfig, PolicyModel, bc_loss_and_grads
from .sim import TaskSpec
from .tensorcore import NonFiniteValue


class TrainError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    steps_per_epoch: int = 500
    batch_size: int = 16
    lr: float = 1e-4
    eval_episodes: int = 30
    seed: int = 0
    checkpoint_dir: str | None = None
    include_failures: bool = False
    grad_clip: float = 10.0
    greedy_eval: bool = False


def _task_of(reader: DatasetReader) -> TaskSpec:
    ep = reader.read_episode(0)
    return TaskSpec(task_id=ep.task_id, layout_variant=ep.extra.get("layout", "canonical"))


def _rng(*ids) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(ids))))


def _eval_policy(model: PolicyModel, task: TaskSpec, cfg: TrainConfig, epoch: int) -> float:
    wins = 0
    for i in range(cfg.eval_episodes):
        ss = np.random.SeedSequence([cfg.seed, 0xE7A1, epoch, i])
        env_seed, rollout_seed = [int(x) for x in ss.generate_state(2)]
        rec = run_rollout(model, task, env_seed=env_seed, rollout_seed=rollout_seed,
                          greedy=cfg.greedy_eval)
        wins += int(rec.success)
    return wins / cfg.eval_episodes


@dataclass
class TrainResult:
    checkpoints: list[str]
    metrics: list[dict]
    final_checkpoint: str | None
    aborted: bool = False


def train_policy(cfg: TrainConfig, dataset_path, policy_config: PolicyConfig,
                 metrics_path=None, model: PolicyModel | None = None) -> TrainResult:
    """Behavior cloning: per epoch, `steps_per_epoch` Adam steps on the window
    loss, then evaluation rollouts.  NaN loss aborts with the last good
    checkpoint retained."""
    reader = DatasetReader(dataset_path)
    task = _task_of(reader)
    sampler = WindowSampler(reader, policy_config.window, _rng(cfg.seed, 0x5A11),
                            include_failures=cfg.include_failures)
    if model is None:
        model = PolicyModel.create(policy_config, cfg.seed)
    adam = Adam(model.store, lr=cfg.lr, clip_norm=cfg.grad_clip)
    ckdir = Path(cfg.checkpoint_dir) if cfg.checkpoint_dir else None
    if ckdir:
        ckdir.mkdir(parents=True, exist_ok=True)

    checkpoints: list[str] = []
    metrics: list[dict] = []
    aborted = False
    for epoch in range(cfg.epochs):
        losses = []
        try:
            for _ in range(cfg.steps_per_epoch):
                obs, act, mask = sampler.sample(cfg.batch_size)
                # finite checks stay off in the hot loop; the loss value and
                # the optimizer's gradient check still catch a blow-up
                loss, grads = bc_loss_and_grads(model, obs, act, mask, cfg.batch_size,
                                                check_finite=False)
                if not np.isfinite(loss):
                    raise NonFiniteValue("loss")
                adam.step(grads)
                losses.append(loss)
        except (NonFiniteValue, NonFiniteGradient):
            aborted = True
        if aborted:
            break
        rate = _eval_policy(model, task, cfg, epoch)
        entry = {"epoch": epoch, "loss": float(np.mean(losses)), "success_rate": rate}
        metrics.append(entry)
        if metrics_path:
            mode = "w" if epoch == 0 else "a"
            with open(metrics_path, mode) as f:
                f.write(json.dumps(entry) + "\n")
        if ckdir:
            path = str(ckdir / f"policy_{policy_config.architecture}_s{cfg.seed}_e{epoch:03d}.mmck")
            save_checkpoint(path, model.store, _policy_manifest(policy_config, cfg, epoch, task))
            checkpoints.append(path)
    return TrainResult(checkpoints=checkpoints, metrics=metrics,
                       final_checkpoint=checkpoints[-1] if checkpoints else None,
                       aborted=aborted)


def _policy_manifest(policy_config, cfg, epoch, task):
    return {"kind": "policy", "policy": policy_config.to_json(),
            "train_seed": cfg.seed, "epoch": epoch, "task": task.to_json()}


def train_error_detector(cfg: TrainConfig, dataset_path, det_config: DetectorConfig,
                         metrics_path=None, model: DetectorModel | None = None,
                         checkpoint_path=None) -> TrainResult:
    """Optimizes the reconstruction+KL objective on (state, goal) pairs drawn
    `horizon` steps apart; dataset normalization stats ride in the checkpoint."""
    reader = DatasetReader(dataset_path)
    task = _task_of(reader)
    sampler = PairSampler(reader, det_config.horizon, _rng(cfg.seed, 0x9A1E),
                          include_failures=cfg.include_failures)
    if model is None:
        model = DetectorModel.create(det_config, cfg.seed)
    if not model.has_norm_stats:
        mean, std = reader.norm_stats
        model.set_norm_stats(mean, std)
    trainable = [n for n in model.store.names() if n not in ("norm_mean", "norm_std")]
    adam = Adam(model.store, lr=cfg.lr, clip_norm=cfg.grad_clip)
    noise_rng = _rng(cfg.seed, 0x01BE)

    metrics: list[dict] = []
    aborted = False
    for epoch in range(cfg.epochs):
        losses = []
        try:
            for _ in range(cfg.steps_per_epoch):
                s, sg = sampler.sample(cfg.batch_size)
                noise = noise_rng.standard_normal((cfg.batch_size, det_config.latent_dim))
                loss, grads = elbo_loss_and_grads(model, s, sg, noise, check_finite=False)
                if not np.isfinite(loss):
                    raise NonFiniteValue("loss")
                adam.step({k: grads[k] for k in trainable if k in grads})
                losses.append(loss)
        except (NonFiniteValue, NonFiniteGradient):
            aborted = True
        if aborted:
            break
        entry = {"epoch": epoch, "loss": float(np.mean(losses))}
        metrics.append(entry)
        if metrics_path:
            with open(metrics_path, "w" if epoch == 0 else "a") as f:
                f.write(json.dumps(entry) + "\n")
    final = None
    if checkpoint_path:
        save_checkpoint(checkpoint_path, model.store,
                        {"kind": "detector", "detector": det_config.to_json(),
                         "train_seed": cfg.seed, "task": task.to_json()})
        final = str(checkpoint_path)
    return TrainResult(checkpoints=[final] if final else [], metrics=metrics,
                       final_checkpoint=final, aborted=aborted)


# -- checkpoint loading ----------------------------------------------------------


def load_policy(path) -> tuple[PolicyModel, dict]:
    store, manifest = load_checkpoint(path)
    if manifest.get("kind") != "policy":
        raise TrainError(f"{path} is not a policy checkpoint")
    model = PolicyModel(PolicyConfig.from_json(manifest["policy"]), store)
    return model, manifest


def load_detector(path) -> tuple[DetectorModel, dict]:
    store, manifest = load_checkpoint(path)
    if manifest.get("kind") != "detector":
        raise TrainError(f"{path} is not a detector checkpoint")
    model = DetectorModel(DetectorConfig.from_json(manifest["detector"]), store)
    return model, manifest


def finetune(checkpoint_path, dataset_path, cfg: TrainConfig,
             metrics_path=None, out_checkpoint=None) -> TrainResult:
    """Resume optimization on a new dataset with a fresh optimizer.

    Works for both policy and detector checkpoints; the architecture must
    match the stored one (it is taken from the checkpoint manifest).
    """
    store, manifest = load_checkpoint(checkpoint_path)
    kind = manifest.get("kind")
    if kind == "policy":
        pc = PolicyConfig.from_json(manifest["policy"])
        reader = DatasetReader(dataset_path)
        if reader.obs_dim != pc.obs_dim:
            raise TrainError("dataset does not match the checkpoint architecture")
        model = PolicyModel(pc, store)
        res = train_policy(cfg, dataset_path, pc, metrics_path=metrics_path, model=model)
        if out_checkpoint and not res.aborted:
            task = _task_of(reader)
            save_checkpoint(out_checkpoint, model.store,
                            _policy_manifest(pc, cfg, cfg.epochs - 1, task))
            res.final_checkpoint = str(out_checkpoint)
        return res
    if kind == "detector":
        dc = DetectorConfig.from_json(manifest["detector"])
        reader = DatasetReader(dataset_path)
        if reader.obs_dim != dc.obs_dim:
            raise TrainError("dataset does not match the checkpoint architecture")
        model = DetectorModel(dc, store)
        return train_error_detector(cfg, dataset_path, dc, metrics_path=metrics_path,
                                    model=model, checkpoint_path=out_checkpoint)
    raise TrainError(f"unknown checkpoint kind {kind!r}")
