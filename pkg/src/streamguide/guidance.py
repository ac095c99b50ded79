"""Guidance drift corrections for the streaming sampler.

Four interchangeable mechanisms produce the additive drift for each step:

* ``steg``     — training-free ensemble rollouts; the LogSumExp of negative
                 rollout costs is differentiated back to the current action.
* ``ccg``      — a regression-trained critic; its logit gradient is applied,
                 soft-gated by the powered collision probability.
* ``repulsion``— analytic potential-field force with a quadratic ramp.
* ``lookahead``— linear extrapolation to the flow endpoint, gradient of the
                 running cost there (the chunked-baseline mechanism).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .base import BaseEstimator
from .interpolant import Adam, TrainingDiverged, time_features, time_features_batch
from .validation import check_array, check_random_state


MECHANISMS = {"none", "steg", "ccg", "repulsion", "lookahead"}


@dataclass(frozen=True)
class EnsembleConfig:
    n: int = 64
    k: int = 3
    dt_sim: float = 0.15
    sigma_rollout: float = math.sqrt(2 * 0.01)

    def __post_init__(self):
        if self.n < 1 or self.k < 1 or self.dt_sim <= 0:
            raise ValueError("need n >= 1, k >= 1, dt_sim > 0")


@dataclass
class GuidanceConfig:
    mechanism: str = "none"
    lam: float = 0.0
    d_act: float = 50.0
    k_power: float = 2.0
    grad_clip: float = 1.0
    sigma_cost: float = 40.0
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    critic: "CollisionRiskCritic | None" = None

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"mechanism must be one of {sorted(MECHANISMS)}")
        if self.lam < 0 or self.d_act <= 0 or self.k_power < 1 or self.grad_clip <= 0:
            raise ValueError("invalid guidance config")


def clip_norm(g: np.ndarray, max_norm: float) -> np.ndarray:
    n = float(np.linalg.norm(g))
    if n > max_norm:
        return g * (max_norm / n)
    return g


# ---------------------------------------------------------------------------
# Tape-level cost and drift builders
# ---------------------------------------------------------------------------

def gaussian_cost_node(graph, x_node, centers, sigma_cost):
    """Sum over obstacle centers of exp(-|x - c|^2 / (2 sigma^2)); (N,) node."""
    n = x_node.value.shape[0]
    total = graph.leaf(np.zeros(n))
    for c in centers:
        delta = tp.sub(x_node, graph.leaf(np.asarray(c, dtype=np.float64)))
        d2 = tp.asum(tp.mul(delta, delta), axis=1)
        total = tp.add(total, tp.exp(tp.scale(d2, -1.0 / (2.0 * sigma_cost**2))))
    return total


def policy_drift_fn(policy):
    """Batched base probability-flow drift of the trained nets, on the tape."""
    nets = policy.nets_
    schedules = policy.schedules_

    def drift(graph, a_node, t, h):
        n = a_node.value.shape[0]
        const = np.concatenate([time_features(t), h])
        feats = tp.concat([a_node, graph.leaf(np.broadcast_to(const, (n, const.size)).copy())],
                          axis=1)
        v = tp.mlp_forward(graph, nets.v_net, feats)
        eta = tp.mlp_forward(graph, nets.eta_net, feats)
        coeff = schedules.diffusivity_correction(t)
        # score = -eta / gamma_floored(t); fold the division into the scale
        return tp.add(v, tp.scale(eta, -coeff / schedules.gamma_floored(t)))

    return drift


def steg_value(graph, a_node, t, drift_fn, cost_fn, ensemble: EnsembleConfig,
               rng=None, noise=None, terminal_fn=None):
    """LogSumExp value estimate from N differentiable K-step rollouts.

    ``drift_fn(graph, states, t)`` and ``cost_fn(graph, states)`` operate on
    (N, D) nodes. Rollout noise is sigma_rollout * sqrt(dt_sim) per step; pass
    ``noise`` of shape (K, N, D) for common-random-number evaluations.
    Returns LSE({-J_i}) - log N recorded end-to-end on the tape.
    """
    n, k, dt = ensemble.n, ensemble.k, ensemble.dt_sim
    d = a_node.value.shape[0]
    if noise is None:
        rng = check_random_state(rng)
        noise = rng.standard_normal((k, n, d))
    states = tp.repeat_rows(a_node, n)
    costs = graph.leaf(np.zeros(n))
    for step in range(k):
        t_k = min(t + step * dt, 1.0)
        b = drift_fn(graph, states, t_k)
        kick = graph.leaf(ensemble.sigma_rollout * math.sqrt(dt) * noise[step])
        states = tp.add(tp.add(states, tp.scale(b, dt)), kick)
        costs = tp.add(costs, tp.scale(cost_fn(graph, states), dt))
    if terminal_fn is not None:
        costs = tp.add(costs, terminal_fn(graph, states))
    value = tp.logsumexp(tp.scale(costs, -1.0))
    return tp.add(value, graph.leaf(-math.log(n)))


def steg_gradient(a, t, drift_fn, cost_fn, ensemble, rng=None, noise=None,
                  terminal_fn=None):
    """Gradient of the steg value with respect to the current action."""
    graph = tp.Tape()
    a_node = graph.leaf(np.asarray(a, dtype=np.float64))
    value = steg_value(graph, a_node, t, drift_fn, cost_fn, ensemble,
                       rng=rng, noise=noise, terminal_fn=terminal_fn)
    tp.backward(graph, value)
    return a_node.grad.copy(), float(value.value)


def steg_drift(a, t, h, obs, policy, cfg: GuidanceConfig, rng) -> np.ndarray:
    """Proximity-gated ensemble guidance drift for the streaming loop."""
    from .env import surface_distance

    d = np.asarray(a, dtype=np.float64).shape[0]
    obstacles = obs["obstacles"]
    if cfg.lam == 0.0 or not obstacles:
        return np.zeros(d)
    x_world = policy.normalizer_.denorm(a)
    d_obs = surface_distance(x_world, obstacles)
    if d_obs >= cfg.d_act:
        return np.zeros(d)
    drift_fn = policy_drift_fn(policy)
    scale = policy.normalizer_.scale
    lo = policy.normalizer_.lo
    centers = [o.position for o in obstacles]

    def cost_fn(graph, states):
        world = tp.add(tp.mul(tp.add(states, graph.leaf(np.ones(d))),
                              graph.leaf(scale)), graph.leaf(lo))
        return gaussian_cost_node(graph, world, centers, cfg.sigma_cost)

    def drift_with_ctx(graph, states, t_k):
        return drift_fn(graph, states, t_k, h)

    grad, _ = steg_gradient(a, t, drift_with_ctx, cost_fn, cfg.ensemble, rng=rng)
    w_dyn = cfg.lam * (1.0 - d_obs / cfg.d_act)
    return w_dyn * clip_norm(grad, cfg.grad_clip)


# ---------------------------------------------------------------------------
# Conditional critic guidance
# ---------------------------------------------------------------------------

class CollisionRiskCritic(BaseEstimator):
    """MLP critic over (action, time, context, obstacle) features.

    ``target_kind='proxy'`` regresses a collision probability through a
    sigmoid on the output logit; ``'distance'`` regresses the log-expected
    utility directly.
    """

    def __init__(self, hidden_width=128, hidden_layers=3, epochs=200,
                 batch_size=256, learning_rate=1e-3, seed=0, target_kind="proxy"):
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.seed = seed
        self.target_kind = target_kind

    def fit(self, X, y):
        X = check_array(X, "X", ndim=2)
        y = check_array(y, "y", ndim=1)
        if len(X) != len(y):
            raise ValueError("X and y length mismatch")
        if self.target_kind not in ("proxy", "distance"):
            raise ValueError("target_kind must be 'proxy' or 'distance'")
        rng = check_random_state(self.seed)
        dims = [X.shape[1]] + [self.hidden_width] * self.hidden_layers + [1]
        self.net_ = tp.MlpParams.create(dims, rng)
        theta = self.net_.flat()
        opt = Adam(theta.size, self.learning_rate)
        n = len(X)
        for epoch in range(self.epochs):
            order = rng.permutation(n)
            for lo_i in range(0, n, self.batch_size):
                sel = order[lo_i:lo_i + self.batch_size]
                g = tp.Tape()
                leaves = tp.mlp_leaves(g, self.net_)
                logit = tp.mlp_forward(g, self.net_, g.leaf(X[sel]), leaves)
                pred = tp.sigmoid(logit) if self.target_kind == "proxy" else logit
                err = tp.sub(pred, g.leaf(y[sel][:, None]))
                loss = tp.scale(tp.squared_norm(err), 1.0 / len(sel))
                if not np.isfinite(loss.value):
                    raise TrainingDiverged(epoch)
                tp.backward(g, loss)
                grad = np.concatenate([arr.grad.ravel()
                                       for pair in leaves for arr in pair])
                theta = opt.step(theta, grad)
                self.net_.load_flat(theta)
        return self

    def logit(self, x_row: np.ndarray) -> float:
        return float(tp.mlp_eval(self.net_, x_row[None, :])[0, 0])

    def predict(self, X):
        X = check_array(X, "X", ndim=2)
        return tp.mlp_eval(self.net_, X)[:, 0]

    def predict_proba(self, X):
        z = self.predict(X)
        return 0.5 * (1.0 + np.tanh(0.5 * z))


def critic_features(a, t, h, phi) -> np.ndarray:
    return np.concatenate([np.atleast_1d(a), time_features(t), h,
                           np.atleast_1d(phi)])


def nearest_obstacle_phi(a, obs, normalizer) -> np.ndarray:
    """Nearest-obstacle descriptor in normalized units: (rel position, radius)."""
    x_world = normalizer.denorm(a)
    best = min(obs["obstacles"],
               key=lambda o: np.linalg.norm(o.position - x_world))
    rel = normalizer.norm(best.position) - np.asarray(a, dtype=np.float64)
    radius = best.radius / float(np.mean(normalizer.scale))
    return np.concatenate([rel, [radius]])


def ccg_targets(costs, min_surface_dists):
    """Regression targets from one rollout batch.

    ``costs`` are per-member accumulated running costs, ``min_surface_dists``
    the per-member minimum distances to the nearest obstacle surface.
    Returns (y_D, y_P): log-mean-exp of negative cost, and collision fraction.
    """
    costs = check_array(costs, "costs", ndim=1)
    dists = check_array(min_surface_dists, "min_surface_dists", ndim=1)
    if len(costs) == 0:
        raise ValueError("empty rollout batch")
    neg = -costs
    m = float(np.max(neg))
    y_d = m + math.log(float(np.mean(np.exp(neg - m))))
    y_p = float(np.mean(dists < 0.0))
    return y_d, y_p


def rollout_batch(a, t, h, policy, ensemble: EnsembleConfig, obstacles,
                  sigma_cost, rng):
    """Plain-numpy ensemble rollout; returns (costs, min surface distances)."""
    nets = policy.nets_
    schedules = policy.schedules_
    norm = policy.normalizer_
    rng = check_random_state(rng)
    d = np.asarray(a).shape[0]
    states = np.broadcast_to(np.asarray(a, dtype=np.float64),
                             (ensemble.n, d)).copy()
    costs = np.zeros(ensemble.n)
    min_dist = np.full(ensemble.n, np.inf)
    centers = np.stack([o.position for o in obstacles]) if obstacles else None
    radii = np.array([o.radius for o in obstacles]) if obstacles else None
    for step in range(ensemble.k):
        t_k = min(t + step * ensemble.dt_sim, 1.0)
        const = np.concatenate([time_features(t_k), h])
        feats = np.concatenate(
            [states, np.broadcast_to(const, (ensemble.n, const.size))], axis=1)
        v = tp.mlp_eval(nets.v_net, feats)
        eta = tp.mlp_eval(nets.eta_net, feats)
        coeff = schedules.diffusivity_correction(t_k)
        drift = v - coeff / schedules.gamma_floored(t_k) * eta
        states = (states + drift * ensemble.dt_sim
                  + ensemble.sigma_rollout * math.sqrt(ensemble.dt_sim)
                  * rng.standard_normal((ensemble.n, d)))
        world = norm.denorm(states)
        if centers is not None:
            delta = world[:, None, :] - centers[None, :, :]
            dist = np.sqrt(np.sum(delta**2, axis=2))
            costs += np.sum(np.exp(-dist**2 / (2 * sigma_cost**2)), axis=1) * ensemble.dt_sim
            min_dist = np.minimum(min_dist, np.min(dist - radii, axis=1))
    return costs, min_dist


def ccg_drift(a, t, h, phi, critic: CollisionRiskCritic, cfg: GuidanceConfig) -> np.ndarray:
    """-lambda * sigmoid(logit)^k * clip(grad_a logit): gate on the probability,
    gradient of the raw logit."""
    a = np.asarray(a, dtype=np.float64)
    if cfg.lam == 0.0:
        return np.zeros_like(a)
    rest = critic_features(a, t, h, phi)[a.size:]
    g = tp.Tape()
    a_node = g.leaf(a[None, :])
    feats = tp.concat([a_node, g.leaf(rest[None, :])], axis=1)
    logit = tp.mlp_forward(g, critic.net_, feats)
    tp.backward(g, logit)
    grad = a_node.grad[0].copy()
    p_risk = 0.5 * (1.0 + math.tanh(0.5 * float(logit.value[0, 0])))
    w_dyn = cfg.lam * p_risk**cfg.k_power
    return -w_dyn * clip_norm(grad, cfg.grad_clip)


# ---------------------------------------------------------------------------
# Non-learning mechanisms
# ---------------------------------------------------------------------------

def repulsion_drift(x_world, obstacles, cfg: GuidanceConfig):
    """Potential-field force lambda * max(0, 1 - d/d_act)^2 * unit(x - c).

    ``d`` is the center distance. Returns (force, degenerate_flag); an
    obstacle exactly at ``x`` contributes zero force and sets the flag.
    """
    x = np.asarray(x_world, dtype=np.float64)
    force = np.zeros_like(x)
    degenerate = False
    for obs in obstacles:
        delta = x - obs.position
        d = float(np.linalg.norm(delta))
        if d == 0.0:
            degenerate = True
            continue
        ramp = max(0.0, 1.0 - d / cfg.d_act)
        if ramp > 0.0:
            force += cfg.lam * ramp**2 * (delta / d)
    return force, degenerate


def lookahead_drift(a, t, velocity, obstacles, cfg: GuidanceConfig, normalizer) -> np.ndarray:
    """Gradient of the running cost at the linearly extrapolated endpoint.

    The velocity is treated as locally constant in the current point, so the
    chain rule through the extrapolation is the identity.
    """
    a = np.asarray(a, dtype=np.float64)
    if cfg.lam == 0.0 or not obstacles:
        return np.zeros_like(a)
    from .env import running_cost_grad

    ahead = a + velocity * (1.0 - t)
    world = normalizer.denorm(ahead)
    grad_world = running_cost_grad(world, obstacles, cfg.sigma_cost)
    grad_norm = grad_world * normalizer.scale  # chain through the affine denorm
    return -cfg.lam * clip_norm(grad_norm, cfg.grad_clip)


# ---------------------------------------------------------------------------
# Mechanism dispatch
# ---------------------------------------------------------------------------

def _none_guidance(a, t, h, obs, rng):
    return np.zeros(np.asarray(a).shape[0])


def make_guidance(cfg: GuidanceConfig, policy, sampler_cfg):
    """Bind a guidance config to a trained policy; returns the step callable."""
    if cfg.mechanism == "none":
        return _none_guidance

    if cfg.mechanism == "steg":
        def guide(a, t, h, obs, rng):
            return steg_drift(a, t, h, obs, policy, cfg, rng)
        return guide

    if cfg.mechanism == "ccg":
        if cfg.critic is None:
            raise ValueError("ccg mechanism requires a trained critic")

        def guide(a, t, h, obs, rng):
            if not obs["obstacles"]:
                return np.zeros(np.asarray(a).shape[0])
            phi = nearest_obstacle_phi(a, obs, policy.normalizer_)
            return ccg_drift(a, t, h, phi, cfg.critic, cfg)
        return guide

    if cfg.mechanism == "repulsion":
        def guide(a, t, h, obs, rng):
            x_world = policy.normalizer_.denorm(a)
            force, _ = repulsion_drift(x_world, obs["obstacles"], cfg)
            return force
        return guide

    if cfg.mechanism == "lookahead":
        def guide(a, t, h, obs, rng):
            v = policy.nets_.velocity(a, t, h)
            return lookahead_drift(a, t, v, obs["obstacles"], cfg,
                                   policy.normalizer_)
        return guide

    raise ValueError(f"unknown mechanism {cfg.mechanism!r}")
