"""Goal-reconstruction error detector and its runtime monitor.

The detector is a conditional VAE over z-score-normalized observation vectors:
an encoder maps (state, goal-state) to a diagonal-Gaussian posterior over a
latent z, a conditional mixture prior maps the state alone to a GMM over z,
and a decoder reconstructs the goal state from (z, state).  The monitored
error is the mean squared reconstruction error epsilon of a goal observation
H steps ahead of its condition state; at run time the pair is taken backwards
out of a replay buffer (condition = the observation H steps ago, goal = now).

The monitor is a small state machine: the first error above the threshold
triggers a recovery maneuver (arm to default pose, base stopped); a failed
post-recovery check or reaching the error budget K terminates the episode.
Termination is absorbing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensorcore import GraphBuilder, ParamStore, evaluate, glorot_uniform, gradient

LOG_2PI = math.log(2.0 * math.pi)

METRIC_KINDS = ("recon", "kl", "enc_var_mean", "enc_var_max", "policy_neg_log_logprob")

# Per-metric trigger thresholds used by the metric-comparison harness.
DEFAULT_METRIC_THRESHOLDS = {
    "recon": 0.05,
    "kl": 35.0,
    "enc_var_mean": 0.0011,
    "enc_var_max": 0.0017,
    "policy_neg_log_logprob": 17.0,
}


class DetectorError(Exception):
    pass


class MetricError(DetectorError):
    """An error metric is undefined for the given inputs."""


class MonitorError(DetectorError):
    pass


@dataclass(frozen=True)
class DetectorConfig:
    obs_dim: int
    horizon: int = 10              # H: steps between condition state and goal state
    threshold: float = 0.05       # psi
    error_budget: int = 2          # K
    latent_dim: int = 16
    prior_modes: int = 10
    encoder_dims: tuple[int, ...] = (300, 400)
    decoder_dims: tuple[int, ...] = (300, 400)
    prior_dims: tuple[int, ...] = (128, 128)
    kl_weight: float = 1e-5
    recovery_steps: int = 30       # R: ticks of the scripted recovery maneuver
    sigma_floor: float = 1e-4
    kl_mc_samples: int = 16        # sample count for the KL error metric
    norm_std_floor: float = 0.02   # extra std floor applied when z-scoring inputs

    def __post_init__(self):
        if self.horizon < 1 or self.threshold <= 0 or self.error_budget < 1:
            raise DetectorError("need horizon >= 1, threshold > 0, error budget >= 1")

    @classmethod
    def compact(cls, obs_dim: int) -> "DetectorConfig":
        return cls(obs_dim=obs_dim, encoder_dims=(128, 128), decoder_dims=(128, 128),
                   prior_dims=(64, 64))

    def to_json(self) -> dict:
        return {
            "obs_dim": self.obs_dim, "horizon": self.horizon, "threshold": self.threshold,
            "error_budget": self.error_budget, "latent_dim": self.latent_dim,
            "prior_modes": self.prior_modes, "encoder_dims": list(self.encoder_dims),
            "decoder_dims": list(self.decoder_dims), "prior_dims": list(self.prior_dims),
            "kl_weight": self.kl_weight, "recovery_steps": self.recovery_steps,
            "sigma_floor": self.sigma_floor, "kl_mc_samples": self.kl_mc_samples,
            "norm_std_floor": self.norm_std_floor,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DetectorConfig":
        return cls(obs_dim=d["obs_dim"], horizon=d["horizon"], threshold=d["threshold"],
                   error_budget=d["error_budget"], latent_dim=d["latent_dim"],
                   prior_modes=d["prior_modes"], encoder_dims=tuple(d["encoder_dims"]),
                   decoder_dims=tuple(d["decoder_dims"]), prior_dims=tuple(d["prior_dims"]),
                   kl_weight=d["kl_weight"], recovery_steps=d["recovery_steps"],
                   sigma_floor=d["sigma_floor"], kl_mc_samples=d["kl_mc_samples"],
                   norm_std_floor=d["norm_std_floor"])


class DetectorModel:
    def __init__(self, config: DetectorConfig, store: ParamStore):
        self.config = config
        self.store = store
        self._graphs: dict = {}

    @classmethod
    def create(cls, config: DetectorConfig, seed: int,
               norm_mean: np.ndarray | None = None,
               norm_std: np.ndarray | None = None) -> "DetectorModel":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0xDE7])))
        store = ParamStore()
        cfg = config

        def mlp(prefix, dims_in, dims):
            d = dims_in
            for i, width in enumerate(dims):
                store.add(f"{prefix}{i}_w", glorot_uniform(rng, d, width))
                store.add(f"{prefix}{i}_b", np.zeros((1, width)))
                d = width
            return d

        def linear(name, fan_in, fan_out, bias=0.0):
            store.add(f"{name}_w", glorot_uniform(rng, fan_in, fan_out))
            store.add(f"{name}_b", np.full((1, fan_out), bias))

        d = mlp("enc", 2 * cfg.obs_dim, cfg.encoder_dims)
        linear("enc_mu", d, cfg.latent_dim)
        linear("enc_sig", d, cfg.latent_dim, bias=-1.0)

        d = mlp("prior", cfg.obs_dim, cfg.prior_dims)
        linear("prior_w", d, cfg.prior_modes)
        linear("prior_mu", d, cfg.prior_modes * cfg.latent_dim)
        linear("prior_sig", d, cfg.prior_modes * cfg.latent_dim, bias=-1.0)

        d = mlp("dec", cfg.latent_dim + cfg.obs_dim, cfg.decoder_dims)
        linear("dec_out", d, cfg.obs_dim)

        if norm_mean is not None:
            store.add("norm_mean", np.asarray(norm_mean, dtype=np.float64).reshape(-1))
            store.add("norm_std", np.asarray(norm_std, dtype=np.float64).reshape(-1))
        return cls(cfg, store)

    # -- normalization --------------------------------------------------------

    @property
    def has_norm_stats(self) -> bool:
        return "norm_mean" in self.store

    def set_norm_stats(self, mean, std):
        if self.has_norm_stats:
            self.store.replace("norm_mean", np.asarray(mean, dtype=np.float64).reshape(-1))
            self.store.replace("norm_std", np.asarray(std, dtype=np.float64).reshape(-1))
        else:
            self.store.add("norm_mean", np.asarray(mean, dtype=np.float64).reshape(-1))
            self.store.add("norm_std", np.asarray(std, dtype=np.float64).reshape(-1))

    def normalize(self, obs: np.ndarray) -> np.ndarray:
        if not self.has_norm_stats:
            raise DetectorError("normalization stats missing; train or attach dataset stats first")
        std = np.maximum(self.store["norm_std"], self.config.norm_std_floor)
        return (np.asarray(obs, dtype=np.float64) - self.store["norm_mean"]) / std

    # -- graphs ----------------------------------------------------------------

    def _mlp(self, g, x, prefix, n):
        for i in range(n):
            x = g.relu(g.add(g.matmul(x, g.param(f"{prefix}{i}_w")), g.param(f"{prefix}{i}_b")))
        return x

    def _linear(self, g, x, name):
        return g.add(g.matmul(x, g.param(f"{name}_w")), g.param(f"{name}_b"))

    def _build(self, batch: int, sampled: bool):
        """Forward graph; `sampled` draws z via a noise input, else z = posterior mean."""
        cfg = self.config
        L, K = cfg.latent_dim, cfg.prior_modes
        g = GraphBuilder(self.store)
        s = g.input("s", (batch, cfg.obs_dim))
        sg = g.input("sg", (batch, cfg.obs_dim))

        e = self._mlp(g, g.concat([s, sg], axis=1), "enc", len(cfg.encoder_dims))
        mu_q = self._linear(g, e, "enc_mu")
        sig_q = g.add(g.softplus(self._linear(g, e, "enc_sig")), g.const(cfg.sigma_floor))

        if sampled:
            noise = g.input("noise", (batch, L))
            z = g.add(mu_q, g.mul(sig_q, noise))
            # log q(z) collapses to a function of the noise draw
            log_q = g.sub(g.mul(g.const(-0.5), g.sum(g.mul(noise, noise), axis=1, keepdims=True)),
                          g.add(g.sum(g.log(sig_q), axis=1, keepdims=True), g.const(0.5 * L * LOG_2PI)))
        else:
            z = mu_q
            log_q = g.sub(g.const(np.zeros((batch, 1))),
                          g.add(g.sum(g.log(sig_q), axis=1, keepdims=True), g.const(0.5 * L * LOG_2PI)))

        p = self._mlp(g, s, "prior", len(cfg.prior_dims))
        logits = self._linear(g, p, "prior_w")
        logw = g.sub(logits, g.logsumexp(logits, axis=1))
        mu_p = g.reshape(self._linear(g, p, "prior_mu"), (batch, K, L))
        sig_p = g.add(g.softplus(g.reshape(self._linear(g, p, "prior_sig"), (batch, K, L))),
                      g.const(cfg.sigma_floor))
        z3 = g.reshape(z, (batch, 1, L))
        zs = g.div(g.sub(z3, mu_p), sig_p)
        comp = g.sum(g.sub(g.mul(g.const(-0.5), g.mul(zs, zs)),
                           g.add(g.log(sig_p), g.const(0.5 * LOG_2PI))), axis=2)
        log_p = g.logsumexp(g.add(logw, comp), axis=1)
        kl = g.sub(log_q, log_p)

        dec = self._mlp(g, g.concat([z, s], axis=1), "dec", len(cfg.decoder_dims))
        recon = self._linear(g, dec, "dec_out")
        diff = g.sub(recon, sg)
        eps = g.mean(g.mul(diff, diff), axis=1, keepdims=True)

        loss = g.add(g.mean(eps), g.mul(g.const(cfg.kl_weight), g.mean(kl)))
        g.output("loss", loss)
        g.output("eps", eps)
        g.output("kl", kl)
        g.output("recon", recon)
        g.output("q_var", g.mul(sig_q, sig_q))
        return g.finish()

    def graph(self, batch: int, sampled: bool):
        key = (batch, sampled)
        if key not in self._graphs:
            self._graphs[key] = self._build(batch, sampled)
        return self._graphs[key]

    # -- inference -------------------------------------------------------------

    def forward(self, s_raw, sg_raw, rng: np.random.Generator | None = None):
        """Reconstruct the goal observation; returns (recon, eps, kl_estimate).

        With an rng, z is one reparameterized posterior sample; without, z is
        the posterior mean and the result is a pure function of the inputs and
        weights (this is the monitored path).
        """
        s = self.normalize(s_raw).reshape(1, -1)
        sg = self.normalize(sg_raw).reshape(1, -1)
        if rng is not None:
            noise = rng.standard_normal((1, self.config.latent_dim))
            out = evaluate(self.graph(1, True), {"s": s, "sg": sg, "noise": noise})
        else:
            out = evaluate(self.graph(1, False), {"s": s, "sg": sg})
        return out["recon"][0], float(out["eps"][0, 0]), float(out["kl"][0, 0])

    def error(self, s_raw, sg_raw) -> float:
        """Deterministic reconstruction error epsilon (posterior-mean z)."""
        return self.forward(s_raw, sg_raw)[1]

    def encoder_variances(self, s_raw, sg_raw) -> np.ndarray:
        s = self.normalize(s_raw).reshape(1, -1)
        sg = self.normalize(sg_raw).reshape(1, -1)
        out = evaluate(self.graph(1, False), {"s": s, "sg": sg})
        return out["q_var"][0]

    def kl_metric(self, s_raw, sg_raw, rng: np.random.Generator) -> float:
        """Monte-Carlo KL(posterior || conditional prior), kl_mc_samples draws."""
        n = self.config.kl_mc_samples
        s = np.tile(self.normalize(s_raw).reshape(1, -1), (n, 1))
        sg = np.tile(self.normalize(sg_raw).reshape(1, -1), (n, 1))
        noise = rng.standard_normal((n, self.config.latent_dim))
        out = evaluate(self.graph(n, True), {"s": s, "sg": sg, "noise": noise})
        return float(np.mean(out["kl"]))


def elbo_loss(model: DetectorModel, s_raw, sg_raw, rng=None, noise=None) -> float:
    """mean(eps) + kl_weight * mean(kl) over a batch of (state, goal) pairs."""
    batch = len(s_raw)
    if batch == 0:
        raise DetectorError("empty batch")
    if noise is None:
        if rng is None:
            raise DetectorError("need rng or an explicit noise draw")
        noise = rng.standard_normal((batch, model.config.latent_dim))
    s = model.normalize(s_raw)
    sg = model.normalize(sg_raw)
    out = evaluate(model.graph(batch, True), {"s": s, "sg": sg, "noise": noise})
    return float(out["loss"])


def elbo_loss_and_grads(model: DetectorModel, s_raw, sg_raw, noise, check_finite: bool = True):
    batch = len(s_raw)
    if batch == 0:
        raise DetectorError("empty batch")
    s = model.normalize(s_raw)
    sg = model.normalize(sg_raw)
    grads, out = gradient(model.graph(batch, True), {"s": s, "sg": sg, "noise": noise},
                          "loss", check_finite=check_finite)
    grads.pop("norm_mean", None)
    grads.pop("norm_std", None)
    return float(out["loss"]), grads


def policy_uncertainty_metric(log_prob: float) -> float:
    """-log(-log p) of a policy action likelihood. Undefined for log p >= 0
    (continuous densities above 1), in which case a MetricError is raised."""
    if log_prob >= 0.0:
        raise MetricError(f"policy log-probability {log_prob} >= 0; metric undefined")
    return -math.log(-log_prob)


def error_metric(kind: str, model: DetectorModel | None = None, s=None, sg=None,
                 rng=None, log_prob: float | None = None) -> float:
    """Dispatch for the runtime error metrics used by the comparison harness."""
    if kind == "recon":
        return model.error(s, sg)
    if kind == "kl":
        return model.kl_metric(s, sg, rng)
    if kind == "enc_var_mean":
        return float(np.mean(model.encoder_variances(s, sg)))
    if kind == "enc_var_max":
        return float(np.max(model.encoder_variances(s, sg)))
    if kind == "policy_neg_log_logprob":
        return policy_uncertainty_metric(log_prob)
    raise MetricError(f"unknown metric kind {kind!r}")


# -- runtime monitor -----------------------------------------------------------


@dataclass(frozen=True)
class MonitorDecision:
    kind: str                     # "none" | "recover" | "terminate"
    epsilon: float | None
    threshold: float


@dataclass
class MonitorContext:
    """Replay buffer beta plus the error count and phase of one rollout."""

    buffer: list = field(default_factory=list)
    errors: int = 0                # k
    phase: str = "monitoring"      # monitoring | recovering | terminated

    @property
    def t(self) -> int:
        return len(self.buffer) - 1

    def mark_terminated(self):
        self.phase = "terminated"

    def append_suspended(self, obs):
        """Buffer an observation while monitoring is suspended (recovery)."""
        self.buffer.append(np.asarray(obs, dtype=np.float64))


def monitor_step(ctx: MonitorContext, cfg: DetectorConfig, model: DetectorModel,
                 obs, metric_fn=None) -> MonitorDecision:
    """Append the new observation and decide none/recover/terminate.

    The error is computed between the observation `horizon` steps back
    (condition) and the current one (goal), only once the buffer is deep
    enough.  `metric_fn(s, sg)` overrides the reconstruction error for the
    metric-comparison harness.
    """
    if ctx.phase == "terminated":
        raise MonitorError("monitor_step called after terminate")
    if ctx.phase == "recovering":
        raise MonitorError("monitoring is suspended during recovery")
    ctx.buffer.append(np.asarray(obs, dtype=np.float64))
    t = ctx.t
    eps = None
    if t > cfg.horizon:
        fn = metric_fn if metric_fn is not None else model.error
        eps = float(fn(ctx.buffer[t - cfg.horizon], ctx.buffer[t]))
        if eps > cfg.threshold:
            ctx.errors += 1
            if ctx.errors >= cfg.error_budget:
                ctx.phase = "terminated"
                return MonitorDecision("terminate", eps, cfg.threshold)
            ctx.phase = "recovering"
            return MonitorDecision("recover", eps, cfg.threshold)
    return MonitorDecision("none", eps, cfg.threshold)


def recover_controller(env, ctx: MonitorContext, cfg: DetectorConfig,
                       model: DetectorModel, metric_fn=None) -> float:
    """Run the scripted recovery maneuver and return the post-recovery error.

    Issues `recovery_steps` ticks of [zero base twist, arm reset] while the
    buffer keeps filling (monitoring suspended), then re-evaluates the error
    with condition = the observation at recovery start and goal = the
    observation after recovery.
    """
    if ctx.phase != "recovering":
        raise MonitorError(f"recover_controller in phase {ctx.phase!r}")
    if env.terminal:
        raise MonitorError("environment already terminated")
    start_obs = ctx.buffer[-1]
    grasp = 1.0 if env.state.gripper_closed else -1.0
    action = np.array([0.0, 0.0, 0.0, 0.0, grasp, 1.0])
    for _ in range(cfg.recovery_steps):
        if env.terminal:
            break
        result = env.step(action)
        ctx.append_suspended(result.obs)
    fn = metric_fn if metric_fn is not None else model.error
    eps = float(fn(start_obs, ctx.buffer[-1]))
    ctx.phase = "monitoring"
    return eps
