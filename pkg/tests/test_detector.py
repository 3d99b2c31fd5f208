import math

import numpy as np
import pytest

from momart.detector import (DEFAULT_METRIC_THRESHOLDS, DetectorConfig, DetectorError,
                             DetectorModel, MetricError, MonitorContext, MonitorError,
                             elbo_loss, elbo_loss_and_grads, error_metric, monitor_step,
                             policy_uncertainty_metric, recover_controller)
from momart.optim import Adam

from conftest import finite_diff_grads, max_rel_err


def tiny_config(obs_dim=4, **kw):
    base = dict(obs_dim=obs_dim, latent_dim=3, prior_modes=2, encoder_dims=(8,),
                decoder_dims=(8,), prior_dims=(6,), norm_std_floor=1e-6)
    base.update(kw)
    return DetectorConfig(**base)


def tiny_model(cfg=None, seed=0):
    cfg = cfg or tiny_config()
    return DetectorModel.create(cfg, seed, norm_mean=np.zeros(cfg.obs_dim),
                                norm_std=np.ones(cfg.obs_dim))


# -- forward -----------------------------------------------------------------------


def test_zero_weight_decoder_is_constant(rng):
    m = tiny_model()
    for n in m.store.names():
        if n not in ("norm_mean", "norm_std"):
            m.store.replace(n, np.zeros_like(m.store[n]))
    sg = rng.random(4)
    recon, eps, kl = m.forward(np.zeros(4), sg, rng=np.random.default_rng(3))
    assert np.array_equal(recon, np.zeros(4))       # constant (zero) reconstruction
    assert eps == pytest.approx(float(np.mean(sg ** 2)), abs=1e-12)
    _, eps2, kl2 = m.forward(np.zeros(4), sg, rng=np.random.default_rng(3))
    assert (eps2, kl2) == (eps, kl)                 # deterministic given the seed


def test_perfect_decoder_stub_zero_error():
    class PerfectDecoder(DetectorModel):
        def forward(self, s_raw, sg_raw, rng=None):
            sg = self.normalize(sg_raw)
            return sg, float(np.mean((sg - sg) ** 2)), 0.0

    m = PerfectDecoder(tiny_config(), tiny_model().store)
    _, eps, _ = m.forward(np.zeros(4), np.full(4, 0.7))
    assert eps == 0.0


def test_missing_norm_stats_error():
    cfg = tiny_config()
    m = DetectorModel.create(cfg, 0)
    with pytest.raises(DetectorError, match="stats"):
        m.error(np.zeros(4), np.zeros(4))


def test_error_is_pure_function_of_inputs(rng):
    m = tiny_model(seed=4)
    s, sg = rng.random(4), rng.random(4)
    values = {m.error(s, sg) for _ in range(5)}
    assert len(values) == 1


def test_trained_detector_separates_synthetic_ood(rng):
    # oracle by construction: train on circle transitions, test vs 3x radius
    cfg = tiny_config(obs_dim=2, latent_dim=2, prior_modes=4,
                      encoder_dims=(32, 32), decoder_dims=(32, 32), prior_dims=(16,))
    m = tiny_model(cfg, seed=1)

    def circle_pair(n, radius, gen):
        phi = gen.uniform(0, 2 * math.pi, n)
        delta = 0.3
        s = radius * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        sg = radius * np.stack([np.cos(phi + delta), np.sin(phi + delta)], axis=1)
        return s, sg

    adam = Adam(m.store, lr=1e-3)
    gen = np.random.default_rng(0)
    for _ in range(600):
        s, sg = circle_pair(32, 1.0, gen)
        noise = gen.standard_normal((32, cfg.latent_dim))
        _, grads = elbo_loss_and_grads(m, s, sg, noise)
        adam.step(grads)

    s_in, sg_in = circle_pair(200, 1.0, np.random.default_rng(7))
    s_out, sg_out = circle_pair(200, 3.0, np.random.default_rng(8))
    eps_in = np.array([m.error(a, b) for a, b in zip(s_in, sg_in)])
    eps_out = np.array([m.error(a, b) for a, b in zip(s_out, sg_out)])
    assert np.median(eps_in) < np.median(eps_out)
    # AUROC via rank statistic
    labels = np.concatenate([np.zeros(200), np.ones(200)])
    scores = np.concatenate([eps_in, eps_out])
    order = np.argsort(scores)
    ranks = np.empty(400)
    ranks[order] = np.arange(1, 401)
    auroc = (ranks[labels == 1].sum() - 200 * 201 / 2) / (200 * 200)
    assert auroc > 0.9


# -- loss --------------------------------------------------------------------------


def test_elbo_kl_weight_zero_is_pure_reconstruction(rng):
    cfg = tiny_config(kl_weight=0.0)
    m = tiny_model(cfg, seed=2)
    s, sg = rng.random((6, 4)), rng.random((6, 4))
    noise = rng.standard_normal((6, 3))
    loss = elbo_loss(m, s, sg, noise=noise)
    from momart.tensorcore import evaluate
    out = evaluate(m.graph(6, True), {"s": m.normalize(s), "sg": m.normalize(sg),
                                      "noise": noise})
    assert loss == float(np.mean(out["eps"]))
    # the prior network gets exactly zero gradient
    _, grads = elbo_loss_and_grads(m, s, sg, noise)
    for name, g in grads.items():
        if name.startswith("prior"):
            assert np.all(g == 0.0), name


def test_kl_zero_when_posterior_equals_prior_component(rng):
    cfg = tiny_config(obs_dim=2, latent_dim=2, prior_modes=1,
                      encoder_dims=(4,), decoder_dims=(4,), prior_dims=(4,))
    m = tiny_model(cfg, seed=3)
    for n in m.store.names():
        if n not in ("norm_mean", "norm_std"):
            m.store.replace(n, np.zeros_like(m.store[n]))
    # posterior and the single prior component now share mu=0 and the same
    # softplus(0)+floor sigma; the weight on that component is exactly 1
    for _ in range(5):
        _, _, kl = m.forward(rng.random(2), rng.random(2), rng=rng)
        assert abs(kl) < 1e-12


def test_elbo_empty_batch():
    m = tiny_model()
    with pytest.raises(DetectorError, match="empty"):
        elbo_loss(m, np.zeros((0, 4)), np.zeros((0, 4)), noise=np.zeros((0, 3)))


def test_elbo_gradient_matches_fd_frozen_noise(rng):
    cfg = tiny_config(kl_weight=0.5)
    m = tiny_model(cfg, seed=5)
    B = 3
    s, sg = rng.random((B, 4)), rng.random((B, 4))
    noise = rng.standard_normal((B, 3))
    _, grads = elbo_loss_and_grads(m, s, sg, noise)
    graph = m.graph(B, True)
    bindings = {"s": m.normalize(s), "sg": m.normalize(sg), "noise": noise}
    names = [n for n in m.store.names() if n not in ("norm_mean", "norm_std")]
    fd = finite_diff_grads(m.store, graph, bindings, names)
    for name in fd:
        assert max_rel_err(grads[name], fd[name]) <= 1e-3, name


def test_kl_mc_estimator_nonnegative_in_expectation(rng):
    m = tiny_model(seed=6)
    s, sg = rng.random(4), rng.random(4)
    total = 0.0
    for i in range(1000):
        _, _, kl = m.forward(s, sg, rng=np.random.default_rng(1000 + i))
        total += kl
    assert total / 1000 >= -0.01


# -- metrics -----------------------------------------------------------------------


def test_metric_threshold_defaults():
    assert DEFAULT_METRIC_THRESHOLDS["recon"] == 0.05
    assert DEFAULT_METRIC_THRESHOLDS["kl"] == 35.0
    assert DEFAULT_METRIC_THRESHOLDS["enc_var_mean"] == 0.0011
    assert DEFAULT_METRIC_THRESHOLDS["enc_var_max"] == 0.0017
    assert DEFAULT_METRIC_THRESHOLDS["policy_neg_log_logprob"] == 17.0


def test_encoder_variance_metrics_equal_for_isotropic(rng):
    m = tiny_model(seed=7)
    # zero encoder weights give equal posterior variances in every dimension
    for n in m.store.names():
        if n.startswith("enc"):
            m.store.replace(n, np.zeros_like(m.store[n]))
    s, sg = rng.random(4), rng.random(4)
    v_mean = error_metric("enc_var_mean", model=m, s=s, sg=sg)
    v_max = error_metric("enc_var_max", model=m, s=s, sg=sg)
    expected = (math.log(2.0) + m.config.sigma_floor) ** 2
    assert v_mean == pytest.approx(expected, abs=1e-12)
    assert v_max == pytest.approx(v_mean, abs=1e-12)


def test_policy_uncertainty_metric_example():
    # dim-1 Gaussian at its mean: log p = -0.5 ln(2 pi) = -0.918939
    logp = -0.5 * math.log(2 * math.pi)
    assert policy_uncertainty_metric(logp) == pytest.approx(-math.log(0.918939), abs=1e-5)
    assert policy_uncertainty_metric(logp) == pytest.approx(0.0845, abs=5e-4)


def test_policy_uncertainty_metric_rejects_positive_logp():
    with pytest.raises(MetricError):
        policy_uncertainty_metric(0.0)
    with pytest.raises(MetricError):
        policy_uncertainty_metric(2.5)


def test_kl_metric_uses_configured_sample_count(rng):
    m = tiny_model(tiny_config(kl_mc_samples=16), seed=8)
    s, sg = rng.random(4), rng.random(4)
    a = m.kl_metric(s, sg, np.random.default_rng(0))
    b = m.kl_metric(s, sg, np.random.default_rng(0))
    assert a == b


# -- monitor state machine ------------------------------------------------------------


def scripted_metric(values):
    it = iter(values)
    return lambda s, sg: next(it)


def run_monitor(eps_seq, threshold=0.05, budget=2, horizon=2):
    cfg = tiny_config(threshold=threshold, error_budget=budget, horizon=horizon)
    ctx = MonitorContext()
    fn = scripted_metric(eps_seq)
    decisions = []
    obs = np.zeros(4)
    for _ in range(len(eps_seq) + horizon + 1):
        d = monitor_step(ctx, cfg, None, obs, metric_fn=fn)
        decisions.append(d.kind)
        if d.kind == "terminate":
            break
        if d.kind == "recover":
            ctx.phase = "monitoring"   # recovery handled by the caller
    return decisions, ctx


def test_monitor_all_below_threshold():
    decisions, ctx = run_monitor([0.01] * 8)
    assert set(decisions) == {"none"}
    assert ctx.errors == 0


def test_monitor_recover_then_terminate_on_budget():
    # eps stream: ok, high (recover), ok, high (k == K -> terminate)
    decisions, ctx = run_monitor([0.01, 0.06, 0.01, 0.07])
    flagged = [d for d in decisions if d != "none"]
    assert flagged == ["recover", "terminate"]
    assert ctx.errors == 2
    assert ctx.phase == "terminated"


def test_monitor_no_eval_until_buffer_deep_enough():
    cfg = tiny_config(horizon=3)
    ctx = MonitorContext()
    calls = []

    def fn(s, sg):
        calls.append(ctx.t)
        return 0.0

    for _ in range(6):
        monitor_step(ctx, cfg, None, np.zeros(4), metric_fn=fn)
    assert calls == [4, 5]   # only once t > horizon


def test_monitor_terminate_absorbing():
    decisions, ctx = run_monitor([0.06, 0.06], budget=1)
    assert decisions[-1] == "terminate"
    with pytest.raises(MonitorError):
        monitor_step(ctx, tiny_config(), None, np.zeros(4), metric_fn=lambda s, g: 0.0)


def test_monitor_never_recovers_past_budget():
    for budget in (1, 2, 3):
        eps = [0.06] * 10
        decisions, ctx = run_monitor(eps, budget=budget)
        assert decisions.count("recover") == budget - 1
        assert decisions.count("terminate") == 1
        assert ctx.errors == budget


def test_monitor_suspended_during_recovery():
    cfg = tiny_config()
    ctx = MonitorContext()
    ctx.phase = "recovering"
    with pytest.raises(MonitorError, match="suspended"):
        monitor_step(ctx, cfg, None, np.zeros(4), metric_fn=lambda s, g: 0.0)


class FakeRecoveryEnv:
    """Env double for the recovery maneuver: N scripted observations."""

    def __init__(self, obs_seq):
        self.obs_seq = list(obs_seq)
        self.i = 0
        self.terminal = False
        self.actions = []

        class _S:
            gripper_closed = False
        self.state = _S()

    def step(self, action):
        self.actions.append(np.array(action))
        obs = self.obs_seq[min(self.i, len(self.obs_seq) - 1)]
        self.i += 1

        class _R:
            pass
        r = _R()
        r.obs = obs
        return r


def test_recover_controller_consumes_exact_steps_and_fills_buffer():
    cfg = tiny_config(recovery_steps=5, horizon=2)
    ctx = MonitorContext()
    for _ in range(4):
        ctx.append_suspended(np.zeros(4))
    ctx.phase = "recovering"
    env = FakeRecoveryEnv([np.full(4, i * 0.1) for i in range(1, 6)])
    stub = type("Stub", (), {"error": staticmethod(lambda s, sg: float(np.mean((sg - s) ** 2)))})
    eps = recover_controller(env, ctx, cfg, stub)
    assert env.i == 5                       # R steps consumed exactly
    assert ctx.t == 8                       # buffer advanced by R
    assert ctx.phase == "monitoring"
    assert eps == pytest.approx(float(np.mean((0.5 - 0.0) ** 2)))
    for a in env.actions:                   # zero twist, reset up
        assert a[0] == 0.0 and a[1] == 0.0 and a[5] == 1.0


def test_recover_controller_requires_recovering_phase():
    cfg = tiny_config()
    ctx = MonitorContext()
    with pytest.raises(MonitorError):
        recover_controller(FakeRecoveryEnv([np.zeros(4)]), ctx, cfg, None)
