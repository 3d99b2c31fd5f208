"""Rollout runner, top-3 success aggregation, and counterfactual detector scoring.

RNG discipline: the environment layout comes from the env seed; the policy's
action sampling at step t comes from a fresh generator keyed by
(rollout seed, t).  Runs with and without a detector therefore consume
identical sampling noise at identical step indices, which keeps the
counterfactual pairing well-defined even after a recovery maneuver injects
extra environment steps.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .detector import (DetectorConfig, DetectorModel, MetricError, MonitorContext,
                       monitor_step, policy_uncertainty_metric, recover_controller)
from .operators import quantize_action
from .policy import GmmParams, PolicyModel, gmm_log_prob, gmm_sample
from .sim import KitchenSim, TaskSpec


class EvalError(Exception):
    pass


@dataclass
class StepLog:
    t: int
    obs_hash: str
    action: np.ndarray
    eps: float | None
    decision: str   # none | recover | terminate | recovery-step


@dataclass
class RolloutRecord:
    task_id: str
    layout_variant: str
    env_seed: int
    rollout_seed: int
    detector_attached: bool
    steps: list[StepLog] = field(default_factory=list)
    cause: str = ""
    success: bool = False
    triggered: bool = False
    obs_trace: np.ndarray | None = None

    @property
    def length(self) -> int:
        return len(self.steps)


def _obs_hash(obs: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(obs).tobytes()).hexdigest()[:16]


def _step_rng(rollout_seed: int, tag: int, t: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([rollout_seed, tag, t])))


def greedy_action(dist: GmmParams) -> np.ndarray:
    return dist.means[int(np.argmax(dist.weights))].copy()


def run_rollout(policy: PolicyModel | None, task: TaskSpec, env_seed: int,
                rollout_seed: int = 0, detector: DetectorModel | None = None,
                monitor_cfg: DetectorConfig | None = None, metric_kind: str = "recon",
                metric_threshold: float | None = None, greedy: bool = False,
                replay_actions: np.ndarray | None = None, collect_obs: bool = False,
                monitor_log=None, max_steps: int | None = None) -> RolloutRecord:
    """One episode following the detector's runtime loop.

    Order per tick: success/timeout checks, monitor decision (and recovery if
    demanded), then policy action and environment step.  With a detector whose
    threshold is +inf the trajectory is bit-identical to a detector-free run.
    """
    env = KitchenSim(task, env_seed)
    rec = RolloutRecord(task_id=task.task_id, layout_variant=task.layout_variant,
                        env_seed=env_seed, rollout_seed=rollout_seed,
                        detector_attached=detector is not None)
    state = policy.initial_state() if policy is not None else None
    mcfg = monitor_cfg
    if detector is not None and mcfg is None:
        mcfg = detector.config
    if detector is not None and metric_threshold is not None:
        mcfg = DetectorConfig.from_json({**mcfg.to_json(), "threshold": metric_threshold})
    ctx = MonitorContext() if detector is not None else None
    obs = env.observe().vector()
    obs_trace = [] if collect_obs else None   # one row per executed action
    last_policy_metric: list[float | None] = [None]

    def pair_metric_fn(s, sg):
        if metric_kind == "recon":
            return detector.error(s, sg)
        if metric_kind == "kl":
            rng = _step_rng(rollout_seed, 0xD37, ctx.t + 1)
            return detector.kl_metric(s, sg, rng)
        if metric_kind == "enc_var_mean":
            return float(np.mean(detector.encoder_variances(s, sg)))
        if metric_kind == "enc_var_max":
            return float(np.max(detector.encoder_variances(s, sg)))
        if metric_kind == "policy_neg_log_logprob":
            if last_policy_metric[0] is None:
                return -math.inf   # no action taken yet; nothing to score
            return last_policy_metric[0]
        raise EvalError(f"unknown metric kind {metric_kind!r}")

    while True:
        if env.success:
            rec.cause = "success"
            rec.success = True
            break
        if env.terminal or (max_steps is not None and env.state.steps >= max_steps):
            rec.cause = "timeout"
            break

        eps = None
        decision = "none"
        if detector is not None:
            d = monitor_step(ctx, mcfg, detector, obs, metric_fn=pair_metric_fn)
            eps, decision = d.epsilon, d.kind
            if monitor_log is not None and eps is not None:
                monitor_log.write(json.dumps({"t": ctx.t, "eps": eps,
                                              "decision": decision, "k": ctx.errors}) + "\n")
            if decision != "none":
                rec.triggered = True
            if decision == "terminate":
                rec.steps.append(StepLog(env.state.steps, _obs_hash(obs), np.zeros(6), eps, decision))
                rec.cause = "terminate"
                break
            if decision == "recover":
                n_before = env.state.steps
                buf0 = len(ctx.buffer)
                post = recover_controller(env, ctx, mcfg, detector,
                                          metric_fn=None if metric_kind == "recon" else pair_metric_fn)
                taken = env.state.steps - n_before
                for k in range(taken):
                    rec.steps.append(StepLog(n_before + k, "", np.zeros(6), None, "recovery-step"))
                if collect_obs:
                    # the observation consumed by recovery step k
                    obs_trace.extend(o.astype(np.float32)
                                     for o in ctx.buffer[buf0 - 1:buf0 - 1 + taken])
                if env.terminal:
                    rec.cause = "success" if env.success else "timeout"
                    rec.success = env.success
                    break
                if post > mcfg.threshold:
                    ctx.mark_terminated()
                    rec.steps.append(StepLog(env.state.steps, _obs_hash(ctx.buffer[-1]),
                                             np.zeros(6), post, "terminate"))
                    if monitor_log is not None:
                        monitor_log.write(json.dumps(
                            {"t": ctx.t, "eps": post, "decision": "terminate",
                             "k": ctx.errors}) + "\n")
                    rec.cause = "terminate"
                    break
                obs = ctx.buffer[-1]

        if replay_actions is not None:
            if env.state.steps >= len(replay_actions):
                rec.cause = "timeout"
                break
            a = quantize_action(replay_actions[env.state.steps])
        else:
            if state.t >= policy.config.window:
                # the policy is trained on fresh-state windows of length T;
                # roll out in T-step chunks exactly like the trainer samples
                state = policy.initial_state()
            dist = policy.step(obs, state)
            if greedy:
                a = greedy_action(dist)
            else:
                rng = _step_rng(rollout_seed, 0xAC7, env.state.steps)
                a = gmm_sample(dist, rng)
            a = quantize_action(np.clip(a, -1.0, 1.0))
            if metric_kind == "policy_neg_log_logprob":
                try:
                    last_policy_metric[0] = policy_uncertainty_metric(
                        gmm_log_prob(dist, a, sigma_floor=0.0))
                except MetricError:
                    raise
        if collect_obs:
            obs_trace.append(obs.astype(np.float32))
        result = env.step(a)
        rec.steps.append(StepLog(env.state.steps - 1, _obs_hash(obs), a, eps, decision))
        obs = result.obs

    if state is not None:
        state.mark_done()
    if collect_obs:
        rec.obs_trace = np.asarray(obs_trace, dtype=np.float32)
    return rec


# -- counterfactual scoring ----------------------------------------------------------


@dataclass
class ConfusionCounts:
    n_pos_t: int = 0
    n_pos_f: int = 0
    n_neg_t: int = 0
    n_neg_f: int = 0

    @property
    def total(self) -> int:
        return self.n_pos_t + self.n_pos_f + self.n_neg_t + self.n_neg_f

    def precision(self) -> float | None:
        denom = self.n_pos_t + self.n_pos_f
        return self.n_pos_t / denom if denom else None

    def recall(self) -> float | None:
        denom = self.n_pos_t + self.n_neg_f
        return self.n_pos_t / denom if denom else None

    def add(self, triggered: bool, baseline_failed: bool):
        if triggered and baseline_failed:
            self.n_pos_t += 1
        elif triggered and not baseline_failed:
            self.n_pos_f += 1
        elif not triggered and not baseline_failed:
            self.n_neg_t += 1
        else:
            self.n_neg_f += 1


def counterfactual_eval(policy: PolicyModel, detector: DetectorModel, task: TaskSpec,
                        seeds, monitor_cfg: DetectorConfig | None = None,
                        metric_kind: str = "recon",
                        metric_threshold: float | None = None,
                        max_steps: int | None = None) -> dict:
    """Paired monitored/unmonitored rollouts per seed; episode-level confusion.

    A positive is any episode whose monitored run triggered an intervention;
    its truth label is the unmonitored twin's failure.  Success with the
    detector counts terminate as failure and recover-then-success as success.
    """
    counts = ConfusionCounts()
    succ_with = 0
    succ_without = 0
    pairs = []
    for seed in seeds:
        with_det = run_rollout(policy, task, env_seed=seed, rollout_seed=seed,
                               detector=detector, monitor_cfg=monitor_cfg,
                               metric_kind=metric_kind, metric_threshold=metric_threshold,
                               max_steps=max_steps)
        without = run_rollout(policy, task, env_seed=seed, rollout_seed=seed,
                              max_steps=max_steps)
        counts.add(with_det.triggered, not without.success)
        succ_with += int(with_det.success)
        succ_without += int(without.success)
        pairs.append((with_det, without))
    n = len(pairs)
    prec = counts.precision()
    rc = counts.recall()
    return {
        "episodes": n,
        "counts": {"n_pos_t": counts.n_pos_t, "n_pos_f": counts.n_pos_f,
                   "n_neg_t": counts.n_neg_t, "n_neg_f": counts.n_neg_f},
        "precision": prec if prec is not None else "n/a",
        "recall": rc if rc is not None else "n/a",
        "success_rate_with_detector": succ_with / n,
        "success_rate_without_detector": succ_without / n,
        "pairs": pairs,
    }


def pooled_counterfactual(results: list[dict]) -> dict:
    """Pool episode counts from several counterfactual_eval results."""
    c = ConfusionCounts()
    sw = s0 = n = 0
    for r in results:
        k = r["counts"]
        c.n_pos_t += k["n_pos_t"]
        c.n_pos_f += k["n_pos_f"]
        c.n_neg_t += k["n_neg_t"]
        c.n_neg_f += k["n_neg_f"]
        sw += round(r["success_rate_with_detector"] * r["episodes"])
        s0 += round(r["success_rate_without_detector"] * r["episodes"])
        n += r["episodes"]
    prec, rc = c.precision(), c.recall()
    return {
        "episodes": n,
        "counts": {"n_pos_t": c.n_pos_t, "n_pos_f": c.n_pos_f,
                   "n_neg_t": c.n_neg_t, "n_neg_f": c.n_neg_f},
        "precision": prec if prec is not None else "n/a",
        "recall": rc if rc is not None else "n/a",
        "success_rate_with_detector": sw / n,
        "success_rate_without_detector": s0 / n,
    }


def top3_success(per_epoch_rates_by_seed: dict | list) -> dict:
    """Per seed, the mean of the 3 best per-epoch success rates; mean +- std
    across seeds (population std)."""
    if isinstance(per_epoch_rates_by_seed, dict):
        series = list(per_epoch_rates_by_seed.values())
        seeds = list(per_epoch_rates_by_seed.keys())
    else:
        series = list(per_epoch_rates_by_seed)
        seeds = list(range(len(series)))
    per_seed = []
    for rates in series:
        if len(rates) < 3:
            raise EvalError("top-3 aggregation needs at least 3 epochs per seed")
        top = sorted(rates, reverse=True)[:3]
        per_seed.append(sum(top) / 3.0)
    arr = np.array(per_seed)
    return {"mean": float(arr.mean()), "std": float(arr.std()),
            "per_seed": {str(s): float(v) for s, v in zip(seeds, per_seed)}}


def metric_comparison(policy: PolicyModel, detector: DetectorModel, task: TaskSpec,
                      seeds, thresholds: dict, monitor_cfg: DetectorConfig | None = None,
                      max_steps: int | None = None) -> dict:
    """Counterfactual precision/recall for each error metric at its threshold.

    A metric that is undefined mid-rollout (the policy-uncertainty metric with
    log p >= 0) gets an excluded row instead of fabricated numbers.
    """
    rows = {}
    for kind, psi in thresholds.items():
        try:
            res = counterfactual_eval(policy, detector, task, seeds,
                                      monitor_cfg=monitor_cfg, metric_kind=kind,
                                      metric_threshold=psi, max_steps=max_steps)
            rows[kind] = {"threshold": psi, "precision": res["precision"],
                          "recall": res["recall"], "counts": res["counts"]}
        except MetricError as e:
            rows[kind] = {"threshold": psi, "excluded": True, "reason": str(e)}
    return rows
