"""Recurrent visuo-motor policies with mixture-of-Gaussians action heads.

Two architectures share one implementation:

* ``rnn`` — a single gated recurrent tier updating every step; the tier's
  hidden state feeds the actor MLP.
* ``tiered`` — N gated recurrent tiers with strictly increasing update
  periods.  Tier i updates its state only on steps where ``t % period_i == 0``
  and emits a bounded message vector; messages flow top-down (slow to fast),
  each tier consuming the encoded observation plus the message of the tier
  above.  The fastest tier's message feeds the actor MLP.

Between updates a tier holds its hidden state and keeps re-emitting its last
message (zeros before the first update).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .tensorcore import GraphBuilder, ParamStore, evaluate, glorot_uniform, gradient

LOG_2PI = math.log(2.0 * math.pi)


class PolicyError(Exception):
    pass


class StateReuseError(PolicyError):
    """Recurrent state carried across an episode boundary without a reset."""


def tier_update_schedule(t: int, periods) -> list[bool]:
    """Which tiers update their hidden state at step t (t counted from the
    last recurrent-state reset)."""
    if t < 0:
        raise PolicyError(f"negative step index {t}")
    return [t % p == 0 for p in periods]


@dataclass(frozen=True)
class PolicyConfig:
    obs_dim: int
    action_dim: int = 6
    architecture: str = "tiered"            # "rnn" | "tiered"
    window: int = 50                        # training sequence length T
    periods: tuple[int, ...] = (1, 10)      # per-tier update periods, strictly increasing
    hidden: tuple[int, ...] = (1000, 400)   # per-tier hidden dims
    message_dim: int = 32
    encoder_dims: tuple[int, ...] = (300, 400)
    actor_dims: tuple[int, ...] = (300, 400)
    modes: int = 5
    sigma_floor: float = 1e-4
    loss_kind: str = "nll"                  # "nll" | "l2" (ablation)
    # trailing observation features (scan + proprioception) that skip the
    # raster encoder and feed the recurrent tiers directly; low-dimensional
    # but decision-critical, they would otherwise drown among raster cells
    direct_features: int = 0

    def __post_init__(self):
        if self.architecture not in ("rnn", "tiered"):
            raise PolicyError(f"unknown architecture {self.architecture!r}")
        if len(self.periods) != len(self.hidden):
            raise PolicyError("periods and hidden dims must align")
        if self.periods[0] != 1:
            raise PolicyError("the fastest tier must have period 1")
        if any(a >= b for a, b in zip(self.periods, self.periods[1:])):
            raise PolicyError(f"periods must be strictly increasing: {self.periods}")
        if self.message_dim <= 0 or self.modes < 1 or self.window < 1:
            raise PolicyError("message_dim, modes, window must be positive")
        if self.architecture == "rnn" and len(self.periods) != 1:
            raise PolicyError("rnn architecture is a single tier")

    @property
    def n_tiers(self) -> int:
        return len(self.periods)

    @property
    def horizons(self) -> tuple[int, ...]:
        """Updates per training window for each tier."""
        return tuple(math.ceil(self.window / p) for p in self.periods)

    @property
    def tiered(self) -> bool:
        return self.architecture == "tiered"

    @classmethod
    def full(cls, obs_dim: int, architecture: str = "tiered",
             direct_features: int = 37) -> "PolicyConfig":
        if architecture == "rnn":
            return cls(obs_dim=obs_dim, architecture="rnn", periods=(1,), hidden=(1200,),
                       direct_features=direct_features)
        return cls(obs_dim=obs_dim, direct_features=direct_features)

    @classmethod
    def compact(cls, obs_dim: int, architecture: str = "tiered",
                direct_features: int = 37) -> "PolicyConfig":
        """Desk-scale preset for CPU training runs."""
        if architecture == "rnn":
            return cls(obs_dim=obs_dim, architecture="rnn", periods=(1,), hidden=(160,),
                       encoder_dims=(128, 64), actor_dims=(64, 64), message_dim=16,
                       direct_features=direct_features)
        return cls(obs_dim=obs_dim, architecture="tiered", periods=(1, 10), hidden=(128, 64),
                   encoder_dims=(128, 64), actor_dims=(64, 64), message_dim=16,
                   direct_features=direct_features)

    def to_json(self) -> dict:
        return {
            "obs_dim": self.obs_dim, "action_dim": self.action_dim,
            "architecture": self.architecture, "window": self.window,
            "periods": list(self.periods), "hidden": list(self.hidden),
            "message_dim": self.message_dim, "encoder_dims": list(self.encoder_dims),
            "actor_dims": list(self.actor_dims), "modes": self.modes,
            "sigma_floor": self.sigma_floor, "loss_kind": self.loss_kind,
            "direct_features": self.direct_features,
        }

    @classmethod
    def from_json(cls, d: dict) -> "PolicyConfig":
        return cls(obs_dim=d["obs_dim"], action_dim=d["action_dim"],
                   architecture=d["architecture"], window=d["window"],
                   periods=tuple(d["periods"]), hidden=tuple(d["hidden"]),
                   message_dim=d["message_dim"], encoder_dims=tuple(d["encoder_dims"]),
                   actor_dims=tuple(d["actor_dims"]), modes=d["modes"],
                   sigma_floor=d["sigma_floor"], loss_kind=d["loss_kind"],
                   direct_features=d.get("direct_features", 0))


@dataclass(frozen=True)
class GmmParams:
    """A diagonal-Gaussian mixture over one action."""

    weights: np.ndarray   # (K,), simplex
    means: np.ndarray     # (K, A)
    stds: np.ndarray      # (K, A), positive

    def __post_init__(self):
        if abs(float(self.weights.sum()) - 1.0) > 1e-9:
            raise PolicyError(f"mixture weights sum to {self.weights.sum()}, not 1")
        if self.means.shape != self.stds.shape or self.means.shape[0] != self.weights.shape[0]:
            raise PolicyError("inconsistent mixture shapes")


def gmm_log_prob(dist: GmmParams, action: np.ndarray, sigma_floor: float = 1e-4) -> float:
    """log sum_k w_k N(action; mu_k, diag sigma_k^2), via logsumexp."""
    a = np.asarray(action, dtype=np.float64)
    if a.shape != (dist.means.shape[1],):
        raise PolicyError(f"action dim {a.shape} does not match means {dist.means.shape}")
    if np.any(dist.stds < sigma_floor * (1.0 - 1e-12)):
        raise PolicyError(f"sigma below floor {sigma_floor}")
    z = (a[None, :] - dist.means) / dist.stds
    comp = -np.sum(np.log(dist.stds) + 0.5 * LOG_2PI + 0.5 * z * z, axis=1)
    with np.errstate(divide="ignore"):
        logw = np.log(dist.weights)
    x = logw + comp
    m = np.max(x)
    return float(m + np.log(np.sum(np.exp(x - m))))


def gmm_sample(dist: GmmParams, rng: np.random.Generator) -> np.ndarray:
    """Draw one action.

    Consumes exactly 1 uniform (mode choice) + action_dim standard normals
    from `rng`, independent of which mode is chosen, so per-step generators
    can be replayed.
    """
    u = rng.random()
    k = int(np.searchsorted(np.cumsum(dist.weights), u, side="right"))
    k = min(k, dist.weights.shape[0] - 1)
    eps = rng.standard_normal(dist.means.shape[1])
    return dist.means[k] + dist.stds[k] * eps


@dataclass
class PolicyState:
    """Per-rollout recurrent state: hidden/cell per tier, last message per tier."""

    h: list[np.ndarray]
    c: list[np.ndarray]
    z: list[np.ndarray]
    t: int = 0
    done: bool = False

    def mark_done(self):
        self.done = True


class PolicyModel:
    def __init__(self, config: PolicyConfig, store: ParamStore):
        self.config = config
        self.store = store
        self._graphs: dict = {}

    # -- construction --------------------------------------------------------

    @classmethod
    def create(cls, config: PolicyConfig, seed: int) -> "PolicyModel":
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x90CC])))
        store = ParamStore()
        cfg = config

        def linear(name, fan_in, fan_out, bias=0.0):
            store.add(f"{name}_w", glorot_uniform(rng, fan_in, fan_out))
            b = np.full((1, fan_out), bias)
            store.add(f"{name}_b", b)

        d = cfg.obs_dim - cfg.direct_features
        for i, width in enumerate(cfg.encoder_dims):
            linear(f"enc{i}", d, width)
            d = width
        enc_out = d + cfg.direct_features

        for j in range(cfg.n_tiers):
            in_dim = enc_out + (cfg.message_dim if j < cfg.n_tiers - 1 else 0)
            h = cfg.hidden[j]
            store.add(f"tier{j}_lstm_w", glorot_uniform(rng, in_dim + h, 4 * h))
            bias = np.zeros((1, 4 * h))
            bias[0, h:2 * h] = 1.0  # forget-gate bias keeps early memory alive
            store.add(f"tier{j}_lstm_b", bias)
            if cfg.tiered:
                linear(f"tier{j}_z", h, cfg.message_dim)

        d = (cfg.message_dim if cfg.tiered else cfg.hidden[0]) + cfg.direct_features
        for i, width in enumerate(cfg.actor_dims):
            linear(f"act{i}", d, width)
            d = width
        linear("head_w", d, cfg.modes)
        linear("head_mu", d, cfg.modes * cfg.action_dim)
        linear("head_sig", d, cfg.modes * cfg.action_dim, bias=-1.0)
        return cls(cfg, store)

    # -- graph building -------------------------------------------------------

    def _linear(self, g, x, name):
        return g.add(g.matmul(x, g.param(f"{name}_w")), g.param(f"{name}_b"))

    def _encode(self, g, x):
        cfg = self.config
        if cfg.direct_features:
            direct = g.slice(x, 1, cfg.obs_dim - cfg.direct_features, cfg.obs_dim)
            x = g.slice(x, 1, 0, cfg.obs_dim - cfg.direct_features)
        for i in range(len(cfg.encoder_dims)):
            x = g.relu(self._linear(g, x, f"enc{i}"))
        if cfg.direct_features:
            x = g.concat([x, direct], axis=1)
        return x

    def _lstm_cell(self, g, j, x, h_prev, c_prev):
        hdim = self.config.hidden[j]
        xh = g.concat([x, h_prev], axis=1)
        gates = g.add(g.matmul(xh, g.param(f"tier{j}_lstm_w")), g.param(f"tier{j}_lstm_b"))
        i_g = g.sigmoid(g.slice(gates, 1, 0, hdim))
        f_g = g.sigmoid(g.slice(gates, 1, hdim, 2 * hdim))
        g_g = g.tanh(g.slice(gates, 1, 2 * hdim, 3 * hdim))
        o_g = g.sigmoid(g.slice(gates, 1, 3 * hdim, 4 * hdim))
        c = g.add(g.mul(f_g, c_prev), g.mul(i_g, g_g))
        h = g.mul(o_g, g.tanh(c))
        return h, c

    def _tier_stack_step(self, g, x_t, h, c, z, updates):
        """One policy step over all tiers, top (slowest) tier first.

        h/c/z are per-tier Refs; `updates` is the boolean schedule for this
        step.  Non-updating tiers pass through untouched (no graph nodes).
        Returns the actor-input Ref (with the direct features skipped around
        the recurrent stack) plus updated state Refs.
        """
        cfg = self.config
        for j in reversed(range(cfg.n_tiers)):
            if not updates[j]:
                continue
            if j < cfg.n_tiers - 1:
                inp = g.concat([x_t, z[j + 1]], axis=1)
            else:
                inp = x_t
            h[j], c[j] = self._lstm_cell(g, j, inp, h[j], c[j])
            if cfg.tiered:
                z[j] = g.tanh(self._linear(g, h[j], f"tier{j}_z"))
        out = z[0] if cfg.tiered else h[0]
        if cfg.direct_features:
            d0 = x_t.shape[1] - cfg.direct_features
            out = g.concat([out, g.slice(x_t, 1, d0, x_t.shape[1])], axis=1)
        return out

    def _head(self, g, actor_in):
        cfg = self.config
        x = actor_in
        for i in range(len(cfg.actor_dims)):
            x = g.relu(self._linear(g, x, f"act{i}"))
        logits = self._linear(g, x, "head_w")
        logw = g.sub(logits, g.logsumexp(logits, axis=1))
        mu = self._linear(g, x, "head_mu")
        sig = g.add(g.softplus(self._linear(g, x, "head_sig")), g.const(cfg.sigma_floor))
        return logw, mu, sig

    def _gmm_logp(self, g, logw, mu, sig, actions, batch):
        """In-graph mixture log-likelihood of `actions` (batch, A) -> (batch, 1)."""
        cfg = self.config
        K, A = cfg.modes, cfg.action_dim
        mu3 = g.reshape(mu, (batch, K, A))
        sig3 = g.reshape(sig, (batch, K, A))
        a3 = g.reshape(actions, (batch, 1, A))
        zsc = g.div(g.sub(a3, mu3), sig3)
        comp = g.sum(g.sub(g.mul(g.const(-0.5), g.mul(zsc, zsc)),
                           g.add(g.log(sig3), g.const(0.5 * LOG_2PI))), axis=2)
        return g.logsumexp(g.add(logw, comp), axis=1)

    def _zero_state_refs(self, g, batch):
        cfg = self.config
        h = [g.const(np.zeros((batch, cfg.hidden[j]))) for j in range(cfg.n_tiers)]
        c = [g.const(np.zeros((batch, cfg.hidden[j]))) for j in range(cfg.n_tiers)]
        z = [g.const(np.zeros((batch, cfg.message_dim))) for j in range(cfg.n_tiers)] if cfg.tiered else []
        return h, c, z

    def window_graph(self, batch: int):
        """Training graph over a T-step window, schedule aligned to t=0.

        Inputs: obs (T*B, obs_dim) in step-major rows, actions (T*B, A),
        mask (T*B, 1).  Outputs: "loss" plus "logp" (T*B, 1).
        """
        key = ("window", batch)
        if key in self._graphs:
            return self._graphs[key]
        cfg = self.config
        T, B = cfg.window, batch
        g = GraphBuilder(self.store)
        obs = g.input("obs", (T * B, cfg.obs_dim))
        actions = g.input("actions", (T * B, cfg.action_dim))
        mask = g.input("mask", (T * B, 1))
        enc = self._encode(g, obs)
        h, c, z = self._zero_state_refs(g, B)
        logps = []
        for t in range(T):
            x_t = g.slice(enc, 0, t * B, (t + 1) * B)
            updates = tier_update_schedule(t, cfg.periods)
            actor_in = self._tier_stack_step(g, x_t, h, c, z, updates)
            logw, mu, sig = self._head(g, actor_in)
            a_t = g.slice(actions, 0, t * B, (t + 1) * B)
            if cfg.loss_kind == "l2":
                K, A = cfg.modes, cfg.action_dim
                w3 = g.reshape(g.exp(logw), (B, K, 1))
                mean_pred = g.sum(g.mul(w3, g.reshape(mu, (B, K, A))), axis=1)
                err = g.sub(mean_pred, a_t)
                logps.append(g.mul(g.const(-1.0), g.sum(g.mul(err, err), axis=1, keepdims=True)))
            else:
                logps.append(self._gmm_logp(g, logw, mu, sig, a_t, B))
        logp_all = g.concat(logps, axis=0)
        nll_sum = g.sum(g.mul(mask, g.mul(g.const(-1.0), logp_all)))
        count = g.sum(mask)
        loss = g.div(nll_sum, count)
        g.output("loss", loss)
        g.output("logp", logp_all)
        graph = g.finish()
        self._graphs[key] = graph
        return graph

    def step_graph(self, updates: tuple[bool, ...]):
        """Single-step (batch 1) graph for one schedule pattern."""
        key = ("step", updates)
        if key in self._graphs:
            return self._graphs[key]
        cfg = self.config
        g = GraphBuilder(self.store)
        obs = g.input("obs", (1, cfg.obs_dim))
        h = [g.input(f"h{j}", (1, cfg.hidden[j])) for j in range(cfg.n_tiers)]
        c = [g.input(f"c{j}", (1, cfg.hidden[j])) for j in range(cfg.n_tiers)]
        z = [g.input(f"z{j}", (1, cfg.message_dim)) for j in range(cfg.n_tiers)] if cfg.tiered else []
        enc = self._encode(g, obs)
        actor_in = self._tier_stack_step(g, enc, h, c, z, list(updates))
        logw, mu, sig = self._head(g, actor_in)
        g.output("logw", logw)
        g.output("mu", mu)
        g.output("sig", sig)
        for j in range(cfg.n_tiers):
            g.output(f"h{j}_out", h[j])
            g.output(f"c{j}_out", c[j])
            if cfg.tiered:
                g.output(f"z{j}_out", z[j])
        graph = g.finish()
        self._graphs[key] = graph
        return graph

    # -- runtime ---------------------------------------------------------------

    def initial_state(self) -> PolicyState:
        cfg = self.config
        return PolicyState(
            h=[np.zeros((1, cfg.hidden[j])) for j in range(cfg.n_tiers)],
            c=[np.zeros((1, cfg.hidden[j])) for j in range(cfg.n_tiers)],
            z=[np.zeros((1, cfg.message_dim)) for j in range(cfg.n_tiers)] if cfg.tiered else [],
        )

    def step(self, obs: np.ndarray, state: PolicyState) -> GmmParams:
        """Advance one step, mutating `state`, and return the action mixture."""
        if state.done:
            raise StateReuseError("recurrent state reused after episode end; reset it")
        if state.t >= self.config.window:
            raise PolicyError(
                f"recurrent state already ran {state.t} steps; the policy is "
                f"trained on windows of {self.config.window}, reset the state")
        cfg = self.config
        updates = tuple(tier_update_schedule(state.t, cfg.periods))
        graph = self.step_graph(updates)
        bindings = {"obs": np.asarray(obs, dtype=np.float64).reshape(1, cfg.obs_dim)}
        for j in range(cfg.n_tiers):
            bindings[f"h{j}"] = state.h[j]
            bindings[f"c{j}"] = state.c[j]
            if cfg.tiered:
                bindings[f"z{j}"] = state.z[j]
        out = evaluate(graph, bindings)
        for j in range(cfg.n_tiers):
            state.h[j] = out[f"h{j}_out"]
            state.c[j] = out[f"c{j}_out"]
            if cfg.tiered:
                state.z[j] = out[f"z{j}_out"]
        state.t += 1
        K, A = cfg.modes, cfg.action_dim
        return GmmParams(weights=np.exp(out["logw"][0]),
                         means=out["mu"].reshape(K, A),
                         stds=out["sig"].reshape(K, A))


def policy_forward(model: PolicyModel, obs_seq: np.ndarray,
                   state: PolicyState | None = None) -> tuple[list[GmmParams], PolicyState]:
    """Run a sequence through the policy step by step."""
    if state is None:
        state = model.initial_state()
    dists = [model.step(obs, state) for obs in np.atleast_2d(obs_seq)]
    return dists, state


def bc_loss(model: PolicyModel, obs: np.ndarray, actions: np.ndarray,
            mask: np.ndarray, batch: int) -> float:
    """Mean negative mixture log-likelihood over valid window steps.

    `obs`/`actions`/`mask` are step-major (T*B rows).
    """
    if batch <= 0:
        raise PolicyError("empty batch")
    graph = model.window_graph(batch)
    out = evaluate(graph, {"obs": obs, "actions": actions, "mask": mask})
    return float(out["loss"])


def bc_loss_and_grads(model: PolicyModel, obs, actions, mask, batch: int,
                      check_finite: bool = True):
    if batch <= 0:
        raise PolicyError("empty batch")
    graph = model.window_graph(batch)
    grads, out = gradient(graph, {"obs": obs, "actions": actions, "mask": mask}, "loss",
                          check_finite=check_finite)
    return float(out["loss"]), grads
