"""2D navigation world: obstacle behaviors, cost fields, demos, episodes.

Coordinates are pixel-like world units in a 512x512 box. The agent is a point
under positional control with a per-step velocity clamp; obstacles are circles
driven by scripted behavior controllers (static / intercept / oscillate /
chase). Success requires reaching near the goal without ever colliding.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicSpline

from .interpolant import Demonstration
from .validation import check_random_state

WORLD_SIZE = 512.0
DEFAULT_GOAL = np.array([430.0, 430.0])
SUCCESS_REWARD = 0.85


# ---------------------------------------------------------------------------
# Obstacle behaviors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Static:
    pass


@dataclass(frozen=True)
class Intercept:
    start: np.ndarray
    target: np.ndarray
    t_int: int = 50


@dataclass(frozen=True)
class Oscillate:
    anchor: np.ndarray
    perp: np.ndarray
    amplitude: float = 40.0
    freq: float = 0.03


@dataclass(frozen=True)
class Chase:
    alpha: float = 0.4
    v_max: float = 3.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0 or self.v_max <= 0:
            raise ValueError("Chase requires 0 < alpha <= 1 and v_max > 0")


@dataclass(frozen=True)
class Obstacle:
    position: np.ndarray
    radius: float
    velocity: np.ndarray = field(default_factory=lambda: np.zeros(2))
    behavior: object = field(default_factory=Static)

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")


def step_obstacle(obstacle: Obstacle, agent_pos: np.ndarray, step_index: int) -> Obstacle:
    """Advance one obstacle to its state at ``step_index``.

    Intercept and oscillate positions are closed-form in the step index; chase
    integrates its velocity from the previous state.
    """
    if step_index < 0:
        raise ValueError("step_index must be non-negative")
    b = obstacle.behavior
    if isinstance(b, Static):
        return obstacle
    if isinstance(b, Intercept):
        frac = min(step_index, b.t_int) / b.t_int
        pos = b.start + frac * (b.target - b.start)
        vel = (b.target - b.start) / b.t_int if step_index < b.t_int else np.zeros(2)
        return replace(obstacle, position=pos, velocity=vel)
    if isinstance(b, Oscillate):
        pos = b.anchor + b.amplitude * math.sin(2 * math.pi * b.freq * step_index) * b.perp
        return replace(obstacle, position=pos)
    if isinstance(b, Chase):
        delta = agent_pos - obstacle.position
        dist = np.linalg.norm(delta)
        if dist == 0.0:
            vel = obstacle.velocity  # direction undefined, keep previous velocity
        else:
            vel = (1 - b.alpha) * obstacle.velocity + b.alpha * b.v_max * delta / dist
        return replace(obstacle, position=obstacle.position + vel, velocity=vel)
    raise TypeError(f"unknown behavior {type(b).__name__}")


# ---------------------------------------------------------------------------
# Cost and collision
# ---------------------------------------------------------------------------

def running_cost(x, obstacles, sigma_cost: float) -> float:
    """Sum of Gaussian potentials exp(-d^2 / (2 sigma^2)) over obstacle centers."""
    if sigma_cost <= 0:
        raise ValueError("sigma_cost must be positive")
    x = np.asarray(x, dtype=np.float64)
    total = 0.0
    for obs in obstacles:
        d2 = float(np.sum((x - obs.position) ** 2))
        total += math.exp(-d2 / (2.0 * sigma_cost**2))
    return total


def running_cost_grad(x, obstacles, sigma_cost: float) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    for obs in obstacles:
        delta = x - obs.position
        d2 = float(np.sum(delta**2))
        g += math.exp(-d2 / (2.0 * sigma_cost**2)) * (-delta / sigma_cost**2)
    return g


def collision_check(agent_pos, obstacles, margin: float = 0.0) -> bool:
    return any(
        np.linalg.norm(np.asarray(agent_pos) - obs.position) < obs.radius + margin
        for obs in obstacles
    )


def surface_distance(agent_pos, obstacles) -> float:
    """Min distance from point to any obstacle surface; +inf with no obstacles."""
    if not obstacles:
        return math.inf
    return min(
        float(np.linalg.norm(np.asarray(agent_pos) - obs.position)) - obs.radius
        for obs in obstacles
    )


# ---------------------------------------------------------------------------
# World
# ---------------------------------------------------------------------------

@dataclass
class World2D:
    agent: np.ndarray
    goal: np.ndarray
    obstacles: list
    goal_tolerance: float = 15.0
    bounds: float = WORLD_SIZE
    t_env: int = 250
    collision_margin: float = 0.0
    max_step: float = 60.0
    step_index: int = 0
    collided: bool = False
    min_obstacle_distance: float = math.inf
    initial_goal_distance: float = field(init=False)

    def __post_init__(self):
        self.agent = np.asarray(self.agent, dtype=np.float64).copy()
        self.goal = np.asarray(self.goal, dtype=np.float64)
        self.initial_goal_distance = float(np.linalg.norm(self.agent - self.goal))
        self._update_safety()

    def _update_safety(self):
        d = surface_distance(self.agent, self.obstacles)
        self.min_obstacle_distance = min(self.min_obstacle_distance, d)
        if collision_check(self.agent, self.obstacles, self.collision_margin):
            self.collided = True

    def observe(self):
        return {
            "agent": self.agent.copy(),
            "goal": self.goal.copy(),
            "obstacles": list(self.obstacles),
            "step": self.step_index,
        }

    def execute(self, target):
        """Move toward the absolute target, clamped to max_step, then advance obstacles."""
        move = np.asarray(target, dtype=np.float64) - self.agent
        dist = np.linalg.norm(move)
        if dist > self.max_step:
            move = move * (self.max_step / dist)
        self.agent = np.clip(self.agent + move, 0.0, self.bounds)
        self.step_index += 1
        self.obstacles = [
            step_obstacle(o, self.agent, self.step_index) for o in self.obstacles
        ]
        self._update_safety()

    @property
    def reached(self):
        return float(np.linalg.norm(self.agent - self.goal)) <= self.goal_tolerance

    @property
    def done(self):
        # episodes end on goal arrival or on the step budget
        return self.step_index >= self.t_env or self.reached

    def reward(self) -> float:
        final = float(np.linalg.norm(self.agent - self.goal))
        if self.initial_goal_distance == 0:
            return 1.0
        return float(np.clip(1.0 - final / self.initial_goal_distance, 0.0, 1.0))


@dataclass
class EpisodeResult:
    success: bool
    collided: bool
    final_goal_distance: float
    min_obstacle_distance: float
    steps: int
    reward: float
    latency_ms: np.ndarray

    def __post_init__(self):
        if self.collided and self.success:
            raise ValueError("collided episodes cannot be successful")


def episode_result(world: World2D, latency_ms) -> EpisodeResult:
    r = world.reward()
    return EpisodeResult(
        success=bool(r > SUCCESS_REWARD and not world.collided),
        collided=world.collided,
        final_goal_distance=float(np.linalg.norm(world.agent - world.goal)),
        min_obstacle_distance=world.min_obstacle_distance,
        steps=world.step_index,
        reward=r,
        latency_ms=np.asarray(latency_ms, dtype=np.float64),
    )


# ---------------------------------------------------------------------------
# Scripted worlds
# ---------------------------------------------------------------------------

SCRIPTS = ("empty", "static", "intercept", "oscillate", "chase")


def build_world(script: str, seed: int, n_obstacles: int = 3,
                obstacle_radius: float = 25.0, goal=None, t_env: int = 250,
                goal_tolerance: float = 15.0, max_step: float = 60.0) -> World2D:
    """Construct a seeded episode world for one of the named obstacle scripts."""
    if script not in SCRIPTS:
        raise ValueError(f"unknown world script {script!r}")
    rng = check_random_state(1_000_003 * seed + 17)
    goal = DEFAULT_GOAL if goal is None else np.asarray(goal, dtype=np.float64)
    start = rng.uniform(40.0, 220.0, size=2)
    path = goal - start
    path_len = np.linalg.norm(path)
    direction = path / path_len
    perp = np.array([-direction[1], direction[0]])

    obstacles = []
    if script == "static":
        fracs = np.linspace(0.35, 0.7, n_obstacles)
        for f in fracs:
            lateral = rng.uniform(-10.0, 10.0)
            pos = start + f * path + lateral * perp
            # keep the goal reachable
            if np.linalg.norm(pos - goal) < obstacle_radius + goal_tolerance + 20.0:
                pos = goal - (obstacle_radius + goal_tolerance + 25.0) * direction
            obstacles.append(Obstacle(position=pos, radius=obstacle_radius))
    elif script == "intercept":
        mid = start + 0.5 * path
        offset = rng.choice([-1.0, 1.0]) * rng.uniform(100.0, 140.0)
        o_start = mid + offset * perp
        obstacles.append(Obstacle(position=o_start, radius=obstacle_radius,
                                  behavior=Intercept(start=o_start, target=mid)))
    elif script == "oscillate":
        mid = start + 0.5 * path
        obstacles.append(Obstacle(position=mid, radius=obstacle_radius,
                                  behavior=Oscillate(anchor=mid, perp=perp)))
    elif script == "chase":
        pos = start + 0.55 * path + rng.uniform(-30.0, 30.0) * perp
        obstacles.append(Obstacle(position=pos, radius=obstacle_radius,
                                  behavior=Chase()))

    return World2D(agent=start, goal=goal, obstacles=obstacles, t_env=t_env,
                   goal_tolerance=goal_tolerance, max_step=max_step)


# ---------------------------------------------------------------------------
# Synthetic demonstrations
# ---------------------------------------------------------------------------

def generate_demos(n: int, seed: int, goal=None, steps: int = 64,
                   goal_tolerance: float = 15.0) -> list:
    """Cubic-spline expert paths from random starts to the goal region.

    Obstacle-free by construction; the context vector is (start, goal).
    """
    if n < 1:
        raise ValueError("need at least one demonstration")
    rng = check_random_state(seed)
    goal = DEFAULT_GOAL if goal is None else np.asarray(goal, dtype=np.float64)
    demos = []
    for _ in range(n):
        start = rng.uniform(20.0, WORLD_SIZE - 20.0, size=2)
        end = goal + rng.uniform(-goal_tolerance / 3, goal_tolerance / 3, size=2)
        path = end - start
        perp = np.array([-path[1], path[0]])
        norm = np.linalg.norm(perp)
        perp = perp / norm if norm > 0 else np.array([0.0, 1.0])
        knots = np.stack([
            start,
            start + path / 3 + rng.uniform(-40, 40) * perp,
            start + 2 * path / 3 + rng.uniform(-40, 40) * perp,
            end,
        ])
        spline = CubicSpline(np.array([0.0, 1 / 3, 2 / 3, 1.0]), knots, axis=0)
        xi = np.clip(spline(np.linspace(0.0, 1.0, steps)), 0.0, WORLD_SIZE)
        demos.append(Demonstration.from_path(xi, np.concatenate([xi[0], goal])))
    return demos


# ---------------------------------------------------------------------------
# Closed-loop episodes
# ---------------------------------------------------------------------------

def run_episode(world: World2D, policy, sampler_cfg, guidance_cfg, seed: int) -> EpisodeResult:
    """Run one closed-loop episode of the policy in the given world."""
    from . import guidance as gd
    from . import sampler as sp

    guide = gd.make_guidance(guidance_cfg, policy, sampler_cfg)
    if guidance_cfg.mechanism == "lookahead":
        return sp.chunked_execute(world, policy, guide, sampler_cfg, seed)
    return sp.streaming_execute(world, policy, guide, sampler_cfg, seed)
