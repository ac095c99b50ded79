"""Base drift, SDE/ODE steppers, and the closed-loop execution modes.

The streaming loop aligns flow time with execution: each env step advances the
live action point by one Euler(-Maruyama) step of size 1/H, and every
``exec_horizon`` steps the point and flow time are re-initialized from the
current observation (chunk handoff). The chunked mode integrates a full chunk
before executing it open-loop, which is the baseline the streaming variants
are measured against.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .interpolant import PolicyNets, score_from_eta
from .schedules import ScheduleSet
from .validation import check_random_state


@dataclass
class SamplerConfig:
    mode: str = "ode"
    horizon: int = 16
    exec_horizon: int = 8
    schedules: ScheduleSet | None = None

    def __post_init__(self):
        if self.mode not in ("ode", "sde"):
            raise ValueError("mode must be 'ode' or 'sde'")
        if not 1 <= self.exec_horizon <= self.horizon:
            raise ValueError("need 1 <= exec_horizon <= horizon")

    @property
    def dt(self) -> float:
        return 1.0 / self.horizon


@dataclass
class StreamState:
    a: np.ndarray
    t: float
    h: np.ndarray
    step_index: int = 0


def base_drift(a, t, h, nets: PolicyNets, schedules: ScheduleSet) -> np.ndarray:
    """v + (epsilon(t) - gamma(t) gamma_dot(t)) * score."""
    v = nets.velocity(a, t, h)
    s = score_from_eta(nets.eta(a, t, h), t, schedules)
    out = v + schedules.diffusivity_correction(t) * s
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite base drift")
    return out


def ode_step(state: StreamState, nets, schedules, dt, drift_extra=0.0) -> StreamState:
    """Deterministic drift-only step: the epsilon(t) terms are dropped."""
    v = nets.velocity(state.a, state.t, state.h)
    s = score_from_eta(nets.eta(state.a, state.t, state.h), state.t, schedules)
    drift = v - schedules.gamma_gamma_dot(state.t) * s + drift_extra
    return StreamState(a=state.a + drift * dt, t=state.t + dt, h=state.h,
                       step_index=state.step_index + 1)


def sde_step(state: StreamState, nets, schedules, dt, rng, drift_extra=0.0) -> StreamState:
    """Euler-Maruyama step of the base SDE plus an additive drift correction."""
    rng = check_random_state(rng)
    b = base_drift(state.a, state.t, state.h, nets, schedules)
    eps = schedules.epsilon(state.t)
    noise = math.sqrt(2.0 * eps * dt) * rng.standard_normal(state.a.shape[0])
    return StreamState(a=state.a + (b + drift_extra) * dt + noise, t=state.t + dt,
                       h=state.h, step_index=state.step_index + 1)


def _step(state, nets, schedules, cfg, rng, drift_extra):
    if cfg.mode == "sde":
        return sde_step(state, nets, schedules, cfg.dt, rng, drift_extra)
    return ode_step(state, nets, schedules, cfg.dt, drift_extra)


def _guidance_rng(seed: int):
    # separate stream so disabled guidance leaves the execution trace untouched
    return np.random.Generator(np.random.PCG64(seed + 0x5EED0FF5E7))


def streaming_execute(world, policy, guide, cfg: SamplerConfig, seed: int):
    """Algorithm skeleton: observe, drift, guide, integrate, act, handoff."""
    from .env import episode_result

    nets = policy.nets_
    schedules = cfg.schedules or policy.schedules_
    norm = policy.normalizer_
    rng = check_random_state(seed)
    g_rng = _guidance_rng(seed)
    latencies = []
    state = None
    while not world.done:
        obs = world.observe()
        i = world.step_index
        if i % cfg.exec_horizon == 0 or state is None:
            h = policy.context_for(obs["agent"], obs["goal"])
            state = StreamState(a=norm.norm(obs["agent"]), t=0.0, h=h, step_index=i)
        state.t = min(max((i % cfg.exec_horizon) * cfg.dt, 0.0), 1.0)
        t0 = time.perf_counter()
        extra = guide(state.a, state.t, state.h, obs, g_rng)
        state = _step(state, nets, schedules, cfg, rng, extra)
        latencies.append((time.perf_counter() - t0) * 1e3)
        world.execute(norm.denorm(state.a))
    return episode_result(world, latencies)


def chunked_generate(obs, policy, guide, cfg: SamplerConfig, rng=None) -> np.ndarray:
    """Integrate a full action chunk before execution (open-loop baseline).

    Per-step guidance sees only the observation frozen at generation time.
    Returns an (H, D) array of world-frame actions.
    """
    nets = policy.nets_
    schedules = cfg.schedules or policy.schedules_
    norm = policy.normalizer_
    rng = check_random_state(rng)
    h = policy.context_for(obs["agent"], obs["goal"])
    state = StreamState(a=norm.norm(obs["agent"]), t=0.0, h=h)
    actions = np.empty((cfg.horizon, state.a.shape[0]))
    for k in range(cfg.horizon):
        extra = guide(state.a, state.t, state.h, obs, rng)
        state = _step(state, nets, schedules, cfg, rng, extra)
        actions[k] = norm.denorm(state.a)
    return actions


def chunked_execute(world, policy, guide, cfg: SamplerConfig, seed: int):
    """Generate chunks and execute exec_horizon actions open-loop between them."""
    from .env import episode_result

    rng = check_random_state(seed)
    g_rng = _guidance_rng(seed)
    latencies = []
    while not world.done:
        obs = world.observe()
        t0 = time.perf_counter()
        actions = chunked_generate(obs, policy, guide, cfg, rng)
        gen_ms = (time.perf_counter() - t0) * 1e3
        for k in range(cfg.exec_horizon):
            if world.done:
                break
            latencies.append(gen_ms / cfg.exec_horizon)
            world.execute(actions[k])
        # guidance stream mirrors streaming mode bookkeeping
        _ = g_rng
    return episode_result(world, latencies)
