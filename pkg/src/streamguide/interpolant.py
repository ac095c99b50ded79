"""Interpolant construction and policy-network training.

Training samples are built by perturbing demonstration points twice: a tube
perturbation ``sigma(t) * eps`` inherited from the stabilizing flow, plus the
interpolant noise ``gamma(t) * z``. The velocity net regresses the stabilizing
drift evaluated at the tube point (not the fully noised input), and the
denoiser net regresses ``z`` directly so the score is recovered as
``-eta / gamma(t)`` without training-time division by a vanishing schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tape as tp
from .base import BaseEstimator
from .schedules import ScheduleSet
from .validation import check_array, check_random_state

N_TIME_FEATURES = 5  # raw t plus sin/cos of 2*pi*t and 4*pi*t


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class Demonstration:
    """Expert action path plus its finite-difference velocity and start context."""

    xi: np.ndarray        # (T, D) action points over flow time [0, 1]
    xi_dot: np.ndarray    # (T, D), xi_dot[i] = (xi[i+1]-xi[i])/dt, last repeated
    context: np.ndarray   # observation snapshot at trajectory start

    @classmethod
    def from_path(cls, xi, context):
        xi = check_array(xi, "xi", ndim=2)
        if len(xi) < 2:
            raise ValueError("demonstration needs at least two points")
        dt = 1.0 / (len(xi) - 1)
        xi_dot = np.empty_like(xi)
        xi_dot[:-1] = np.diff(xi, axis=0) / dt
        xi_dot[-1] = xi_dot[-2]
        return cls(xi=xi, xi_dot=xi_dot, context=check_array(context, "context", ndim=1))

    def at(self, t: float):
        """Linearly interpolated (xi_t, xi_dot_t) at flow time t in [0, 1]."""
        T = len(self.xi)
        s = t * (T - 1)
        i = min(int(s), T - 2)
        frac = s - i
        xi_t = (1 - frac) * self.xi[i] + frac * self.xi[i + 1]
        xd_t = (1 - frac) * self.xi_dot[i] + frac * self.xi_dot[i + 1]
        return xi_t, xd_t


@dataclass(frozen=True)
class Normalizer:
    """Per-dimension affine map of world actions onto [-1, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def from_points(cls, points):
        points = check_array(points, "points", ndim=2)
        lo, hi = points.min(axis=0), points.max(axis=0)
        span = hi - lo
        if np.any(span <= 0):
            raise ValueError("degenerate normalization range")
        return cls(lo=lo, hi=hi)

    @property
    def scale(self):
        return (self.hi - self.lo) / 2.0

    def norm(self, x):
        return (np.asarray(x, dtype=np.float64) - self.lo) / self.scale - 1.0

    def denorm(self, a):
        return (np.asarray(a, dtype=np.float64) + 1.0) * self.scale + self.lo


def time_features(t: float) -> np.ndarray:
    w = 2.0 * math.pi * t
    return np.array([t, math.sin(w), math.cos(w), math.sin(2 * w), math.cos(2 * w)])


def time_features_batch(ts: np.ndarray) -> np.ndarray:
    w = 2.0 * np.pi * ts
    return np.stack([ts, np.sin(w), np.cos(w), np.sin(2 * w), np.cos(2 * w)], axis=1)


def policy_features(a: np.ndarray, t: float, h: np.ndarray) -> np.ndarray:
    return np.concatenate([np.atleast_1d(a), time_features(t), h])


@dataclass
class PolicyNets:
    """Velocity field and denoiser over (action, time features, context)."""

    v_net: tp.MlpParams
    eta_net: tp.MlpParams
    act_dim: int
    ctx_dim: int

    def __post_init__(self):
        want = self.act_dim + N_TIME_FEATURES + self.ctx_dim
        for net, name in ((self.v_net, "v_net"), (self.eta_net, "eta_net")):
            if net.in_dim != want or net.out_dim != self.act_dim:
                raise ValueError(f"{name} dims {net.in_dim}->{net.out_dim} incompatible "
                                 f"with act_dim={self.act_dim}, ctx_dim={self.ctx_dim}")

    @classmethod
    def create(cls, act_dim, ctx_dim, hidden_width=128, hidden_layers=3,
               rng=None, init_scale=1.0):
        rng = check_random_state(rng)
        dims = [act_dim + N_TIME_FEATURES + ctx_dim] + [hidden_width] * hidden_layers + [act_dim]
        return cls(
            v_net=tp.MlpParams.create(dims, rng, init_scale),
            eta_net=tp.MlpParams.create(dims, rng, init_scale),
            act_dim=act_dim,
            ctx_dim=ctx_dim,
        )

    def velocity(self, a, t, h):
        x = policy_features(a, t, h)[None, :]
        g = tp.Tape()
        return tp.mlp_forward(g, self.v_net, g.leaf(x)).value[0]

    def eta(self, a, t, h):
        x = policy_features(a, t, h)[None, :]
        g = tp.Tape()
        return tp.mlp_forward(g, self.eta_net, g.leaf(x)).value[0]

    def flat(self):
        return np.concatenate([self.v_net.flat(), self.eta_net.flat()])

    def load_flat(self, vec):
        n_v = self.v_net.flat().size
        self.v_net.load_flat(vec[:n_v])
        self.eta_net.load_flat(vec[n_v:])


def score_from_eta(eta_value, t, schedules: ScheduleSet):
    """Score estimate -eta / gamma(t), with gamma clamped away from zero."""
    return -np.asarray(eta_value, dtype=np.float64) / schedules.gamma_floored(t)


def sfp_velocity(a, t, demo: Demonstration, k_gain: float):
    """Stabilizing drift xi_dot_t - k (a - xi_t) toward the demonstration tube."""
    xi_t, xd_t = demo.at(t)
    return xd_t - k_gain * (np.asarray(a, dtype=np.float64) - xi_t)


def sample_training_point(demo: Demonstration, rng, schedules: ScheduleSet,
                          t=None, eps=None, z=None):
    """Draw one (a_t, t, h, z, v_target) tuple from a demonstration.

    The network input is the fully perturbed point; the velocity target is the
    stabilizing drift evaluated at the tube point xi_t + sigma(t) * eps.
    """
    rng = check_random_state(rng)
    d = demo.xi.shape[1]
    t = float(rng.uniform()) if t is None else float(t)
    eps = rng.standard_normal(d) if eps is None else np.asarray(eps, dtype=np.float64)
    z = rng.standard_normal(d) if z is None else np.asarray(z, dtype=np.float64)
    xi_t, _ = demo.at(t)
    a_sfp = xi_t + schedules.sigma(t) * eps
    a_t = a_sfp + schedules.gamma(t) * z
    v_target = sfp_velocity(a_sfp, t, demo, schedules.k_gain)
    return {"a_t": a_t, "t": t, "h": demo.context, "z": z, "v_target": v_target}


def sample_batch(demos, batch_size, rng, schedules: ScheduleSet):
    """Vectorized batch of training points across demonstrations."""
    rng = check_random_state(rng)
    d = demos[0].xi.shape[1]
    idx = rng.integers(len(demos), size=batch_size)
    ts = rng.uniform(size=batch_size)
    eps = rng.standard_normal((batch_size, d))
    zs = rng.standard_normal((batch_size, d))
    a = np.empty((batch_size, d))
    v_target = np.empty((batch_size, d))
    h = np.empty((batch_size, demos[0].context.shape[0]))
    for j in range(batch_size):
        demo = demos[idx[j]]
        xi_t, xd_t = demo.at(ts[j])
        a_sfp = xi_t + schedules.sigma(ts[j]) * eps[j]
        a[j] = a_sfp + schedules.gamma(ts[j]) * zs[j]
        v_target[j] = xd_t - schedules.k_gain * (a_sfp - xi_t)
        h[j] = demo.context
    x = np.concatenate([a, time_features_batch(ts), h], axis=1)
    return x, v_target, zs


def velocity_loss(graph, v_net, x_node, v_target):
    if x_node.value.shape[0] == 0:
        raise ValueError("empty batch")
    pred = tp.mlp_forward(graph, v_net, x_node)
    return tp.scale(tp.squared_norm(tp.sub(pred, graph.leaf(v_target))),
                    1.0 / x_node.value.shape[0])


def score_loss(graph, eta_net, x_node, z_target):
    if x_node.value.shape[0] == 0:
        raise ValueError("empty batch")
    pred = tp.mlp_forward(graph, eta_net, x_node)
    return tp.scale(tp.squared_norm(tp.sub(pred, graph.leaf(z_target))),
                    1.0 / x_node.value.shape[0])


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 64
    epochs: int = 500
    batches_per_epoch: int = 8
    beta1: float = 0.9
    beta2: float = 0.999
    init_scale: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 and self.learning_rate != 0.0:
            raise ValueError("learning rate must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")


class Adam:
    """Classic Adam moments on a flat parameter vector."""

    def __init__(self, n, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.step_count = 0

    def step(self, params, grad):
        self.step_count += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1**self.step_count)
        v_hat = self.v / (1 - self.beta2**self.step_count)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def _gather_param_grads(leaves_v, leaves_eta):
    parts = []
    for leaves in (leaves_v, leaves_eta):
        for w, b in leaves:
            parts.append(w.grad.ravel())
            parts.append(b.grad.ravel())
    return np.concatenate(parts)


def train(demos, config: TrainConfig, schedules: ScheduleSet,
          nets: PolicyNets | None = None, hidden_width=128, hidden_layers=3,
          callback=None):
    """Train velocity and denoiser nets on normalized demonstrations.

    Returns (nets, history) where history rows are (epoch, velocity_loss,
    score_loss) epoch averages. Deterministic given config.seed.
    """
    if not demos:
        raise ValueError("empty demonstration set")
    rng = check_random_state(config.seed)
    act_dim = demos[0].xi.shape[1]
    ctx_dim = demos[0].context.shape[0]
    if nets is None:
        nets = PolicyNets.create(act_dim, ctx_dim, hidden_width, hidden_layers,
                                 rng=rng, init_scale=config.init_scale)
    theta = nets.flat()
    opt = Adam(theta.size, config.learning_rate, config.beta1, config.beta2)
    history = []
    for epoch in range(config.epochs):
        vl_sum = sl_sum = 0.0
        for _ in range(config.batches_per_epoch):
            x, v_target, zs = sample_batch(demos, config.batch_size, rng, schedules)
            g = tp.Tape()
            x_node = g.leaf(x)
            leaves_v = tp.mlp_leaves(g, nets.v_net)
            leaves_e = tp.mlp_leaves(g, nets.eta_net)
            v_pred = tp.mlp_forward(g, nets.v_net, x_node, leaves_v)
            e_pred = tp.mlp_forward(g, nets.eta_net, x_node, leaves_e)
            inv_b = 1.0 / x.shape[0]
            vl = tp.scale(tp.squared_norm(tp.sub(v_pred, g.leaf(v_target))), inv_b)
            sl = tp.scale(tp.squared_norm(tp.sub(e_pred, g.leaf(zs))), inv_b)
            total = tp.add(vl, sl)
            if not np.isfinite(total.value):
                raise TrainingDiverged(epoch)
            tp.backward(g, total)
            grad = _gather_param_grads(leaves_v, leaves_e)
            theta = opt.step(theta, grad)
            nets.load_flat(theta)
            vl_sum += float(vl.value)
            sl_sum += float(sl.value)
        row = (epoch, vl_sum / config.batches_per_epoch, sl_sum / config.batches_per_epoch)
        history.append(row)
        if callback is not None:
            callback(*row)
    return nets, history


class StreamingPolicy(BaseEstimator):
    """Estimator facade: fit on world-frame demonstrations, then sample drifts.

    After ``fit``, the trained networks operate in normalized action
    coordinates; ``normalizer_`` maps between world and normalized frames.
    """

    def __init__(self, schedules: ScheduleSet | None = None,
                 train_config: TrainConfig | None = None,
                 hidden_width=128, hidden_layers=3):
        self.schedules = schedules
        self.train_config = train_config
        self.hidden_width = hidden_width
        self.hidden_layers = hidden_layers

    def fit(self, demos, goal=None):
        schedules = self.schedules or ScheduleSet()
        config = self.train_config or TrainConfig()
        if not demos:
            raise ValueError("empty demonstration set")
        points = np.concatenate([d.xi for d in demos], axis=0)
        self.normalizer_ = Normalizer.from_points(points)
        normed = [
            Demonstration.from_path(self.normalizer_.norm(d.xi),
                                    self._norm_context(d.context))
            for d in demos
        ]
        self.nets_, self.history_ = train(
            normed, config, schedules,
            hidden_width=self.hidden_width, hidden_layers=self.hidden_layers)
        self.schedules_ = schedules
        return self

    def _norm_context(self, context):
        # context is a stack of action-space points (start, goal, ...)
        d = self.normalizer_.lo.shape[0]
        ctx = np.asarray(context, dtype=np.float64).reshape(-1, d)
        return self.normalizer_.norm(ctx).ravel()

    def context_for(self, agent_pos, goal_pos):
        return self._norm_context(np.concatenate([agent_pos, goal_pos]))
