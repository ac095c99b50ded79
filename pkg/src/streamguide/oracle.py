"""Closed-form verification of the guidance theory on an OU base process.

The base dynamics dx = -a x dt + sqrt(2 eps) dW with quadratic terminal cost
phi(x) = kappa x^2 / 2 admit a closed-form desirability u(x, t), so the
backward PDE, the likelihood-ratio martingale, the tilted terminal law of the
drift-corrected SDE, and the ensemble gradient estimator can all be checked
against exact answers or tight Monte Carlo bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .validation import check_random_state

X_GRID = (-2.0, -1.0, 0.0, 1.0, 2.0)
T_FRACS = (0.1, 0.5, 0.9)


class DegeneratePosterior(RuntimeError):
    pass


@dataclass(frozen=True)
class OuSpec:
    a_rate: float = 1.0
    eps_const: float = 0.5
    horizon: float = 1.0
    kappa: float = 1.0
    c_quad: float = 0.0

    def __post_init__(self):
        if self.a_rate <= 0 or self.eps_const <= 0:
            raise ValueError("a_rate and eps_const must be positive")
        if self.kappa < 0 or self.c_quad < 0:
            raise ValueError("cost coefficients must be non-negative")

    def cond_mean(self, x, t):
        return x * math.exp(-self.a_rate * (self.horizon - t))

    def cond_var(self, t):
        a, e = self.a_rate, self.eps_const
        return (e / a) * (1.0 - math.exp(-2.0 * a * (self.horizon - t)))

    def transition(self, x, dt, rng, size=None):
        """Exact OU transition over an interval dt (no discretization error)."""
        a, e = self.a_rate, self.eps_const
        mean = x * math.exp(-a * dt)
        var = (e / a) * (1.0 - math.exp(-2.0 * a * dt))
        noise = rng.standard_normal(size if size is not None else np.shape(x))
        return mean + math.sqrt(var) * noise

    def terminal_cost(self, x):
        return 0.5 * self.kappa * np.asarray(x) ** 2

    def running_cost(self, x):
        return 0.5 * self.c_quad * np.asarray(x) ** 2


def _require_pure_terminal(spec: OuSpec):
    if spec.c_quad != 0.0:
        raise ValueError("closed form requires zero running cost")


def ou_desirability(x, t, spec: OuSpec) -> float:
    _require_pure_terminal(spec)
    m = spec.cond_mean(x, t)
    v = spec.cond_var(t)
    denom = 1.0 + spec.kappa * v
    return denom**-0.5 * math.exp(-spec.kappa * m * m / (2.0 * denom))


def ou_grad_log_u(x, t, spec: OuSpec) -> float:
    _require_pure_terminal(spec)
    v = spec.cond_var(t)
    return -spec.kappa * x * math.exp(-2.0 * spec.a_rate * (spec.horizon - t)) \
        / (1.0 + spec.kappa * v)


def ou_mc_desirability(x, t, spec: OuSpec, m_samples: int, rng):
    """Plain Monte Carlo of E[exp(-phi(x_T)) | x_t = x] via the exact transition."""
    _require_pure_terminal(spec)
    rng = check_random_state(rng)
    x_T = spec.transition(x, spec.horizon - t, rng, size=m_samples)
    vals = np.exp(-spec.terminal_cost(x_T))
    return float(np.mean(vals)), float(np.std(vals, ddof=1) / math.sqrt(m_samples))


def feynman_kac_residual(u_fn, x, t, spec: OuSpec, h_fd: float = 1e-4) -> float:
    """Central-FD residual of d_t u + b grad u + eps lap u - c u at (x, t)."""
    if h_fd <= 0:
        raise ValueError("h_fd must be positive")
    du_dt = (u_fn(x, t + h_fd) - u_fn(x, t - h_fd)) / (2 * h_fd)
    du_dx = (u_fn(x + h_fd, t) - u_fn(x - h_fd, t)) / (2 * h_fd)
    d2u = (u_fn(x + h_fd, t) - 2 * u_fn(x, t) + u_fn(x - h_fd, t)) / h_fd**2
    b = -spec.a_rate * x
    c = 0.5 * spec.c_quad * x * x
    return du_dt + b * du_dx + spec.eps_const * d2u - c * u_fn(x, t)


def martingale_check(spec: OuSpec, t_probe: float, m_paths: int, x0: float = 1.0,
                     seed=0):
    """Sample mean and stderr of the likelihood-ratio process at t_probe.

    Paths use the exact OU transition; the partition constant is estimated on
    an independent batch, and its uncertainty is folded into the reported
    stderr (delta method).
    """
    if m_paths < 100:
        raise ValueError("need at least 100 paths")
    _require_pure_terminal(spec)
    rng = check_random_state(seed)
    x_t = spec.transition(np.full(m_paths, x0), t_probe, rng)
    u_vals = np.array([ou_desirability(x, t_probe, spec) for x in x_t])
    # independent batch for the normalization constant
    x_T = spec.transition(np.full(m_paths, x0), spec.horizon, rng)
    z_vals = np.exp(-spec.terminal_cost(x_T))
    z_hat = float(np.mean(z_vals))
    se_z = float(np.std(z_vals, ddof=1) / math.sqrt(m_paths))
    d = u_vals / z_hat
    mean = float(np.mean(d))
    se_d = float(np.std(d, ddof=1) / math.sqrt(m_paths))
    stderr = math.sqrt(se_d**2 + (mean * se_z / z_hat) ** 2)
    return {"mean": mean, "stderr": stderr}


def guided_terminal_moments(spec: OuSpec, x0: float, n_steps: int, m_paths: int,
                            seed=0, grad_fn=None):
    """Euler-Maruyama moments of the drift-corrected SDE vs the tilted Gaussian.

    ``grad_fn(x, t)`` overrides the analytic log-gradient; useful for mutation
    sanity checks (a corrupted gradient must fail the moment comparison).
    """
    _require_pure_terminal(spec)
    if grad_fn is None:
        grad_fn = lambda x, t: _grad_log_u_vec(x, t, spec)
    rng = check_random_state(seed)
    dt = spec.horizon / n_steps
    x = np.full(m_paths, float(x0))
    root = math.sqrt(2.0 * spec.eps_const * dt)
    for k in range(n_steps):
        t_k = k * dt
        grad = grad_fn(x, t_k)
        drift = -spec.a_rate * x + 2.0 * spec.eps_const * grad
        x = x + drift * dt + root * rng.standard_normal(m_paths)
    m0 = spec.cond_mean(x0, 0.0)
    v0 = spec.cond_var(0.0)
    denom = 1.0 + spec.kappa * v0
    emp_var = float(np.var(x, ddof=1))
    return {
        "emp_mean": float(np.mean(x)),
        "emp_var": emp_var,
        "ana_mean": m0 / denom,
        "ana_var": v0 / denom,
        "se_mean": float(np.std(x, ddof=1) / math.sqrt(m_paths)),
        "se_var": emp_var * math.sqrt(2.0 / (m_paths - 1)),
    }


def _grad_log_u_vec(x: np.ndarray, t: float, spec: OuSpec) -> np.ndarray:
    v = spec.cond_var(t)
    return -spec.kappa * x * math.exp(-2.0 * spec.a_rate * (spec.horizon - t)) \
        / (1.0 + spec.kappa * v)


# ---------------------------------------------------------------------------
# Pathwise posterior-force oracle and error decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OuRollout:
    """Discretized OU rollout used as differentiable dynamics: K Euler steps."""

    a_rate: float
    eps_const: float
    dt: float
    k_steps: int
    kappa: float = 1.0
    c_quad: float = 0.0


def _rollout_cost(graph, a_node, cfg: OuRollout, noise):
    """Unroll the dynamics on the tape; returns per-path cost node (M,)."""
    m = noise.shape[1]
    x = tp.repeat_rows(a_node, m)  # (M, 1)
    costs = graph.leaf(np.zeros(m))
    root = math.sqrt(2.0 * cfg.eps_const * cfg.dt)
    for k in range(cfg.k_steps):
        drift = tp.scale(x, -cfg.a_rate)
        x = tp.add(tp.add(x, tp.scale(drift, cfg.dt)),
                   graph.leaf(root * noise[k][:, None]))
        if cfg.c_quad:
            sq = tp.asum(tp.mul(x, x), axis=1)
            costs = tp.add(costs, tp.scale(sq, 0.5 * cfg.c_quad * cfg.dt))
    term = tp.scale(tp.asum(tp.mul(x, x), axis=1), 0.5 * cfg.kappa)
    return tp.add(costs, term)


def weighted_pathwise_force(a, cfg: OuRollout, noise, weights=None):
    """Self-normalized pathwise force sum_i w_i * grad_a(-J_i).

    With ``weights=None`` the weights are softmax(-J) of this rollout; passing
    external weights evaluates the same forces under another posterior.
    Returns (force, J_values).
    """
    graph = tp.Tape()
    a_node = graph.leaf(np.atleast_1d(np.asarray(a, dtype=np.float64)))
    j_node = _rollout_cost(graph, a_node, cfg, noise)
    j = j_node.value
    if weights is None:
        weights = posterior_weights(j)
    scalar = tp.asum(tp.mul(tp.scale(j_node, -1.0), graph.leaf(weights)))
    tp.backward(graph, scalar)
    return a_node.grad.copy(), j


def posterior_weights(j: np.ndarray) -> np.ndarray:
    """Normalized exp(-J) weights; degenerate if every weight underflows."""
    raw = np.exp(-j)
    total = raw.sum()
    if total == 0.0:
        raise DegeneratePosterior("all posterior weights underflowed to zero")
    return raw / total


def brute_posterior_force(a, cfg: OuRollout, m_paths: int, seed=0, noise=None):
    """Monte Carlo estimate of the safe-posterior repulsive force at ``a``."""
    if m_paths < 1:
        raise ValueError("need at least one path")
    if noise is None:
        rng = check_random_state(seed)
        noise = rng.standard_normal((cfg.k_steps, m_paths))
    force, _ = weighted_pathwise_force(a, cfg, noise)
    return force


def error_decomposition(a, estimator_cfg: OuRollout, oracle_cfg: OuRollout,
                        m_paths: int, seed=0):
    """Split estimator-vs-oracle force error into shift and mismatch terms.

    The intermediate term evaluates the estimator force under the oracle
    posterior with common-random-number path pairing, so
    total = term_I + term_II holds exactly by construction.
    """
    rng = check_random_state(seed)
    noise_oracle = rng.standard_normal((oracle_cfg.k_steps, m_paths))
    if estimator_cfg.k_steps == oracle_cfg.k_steps:
        noise_est = noise_oracle
    else:
        noise_est = check_random_state(seed + 1).standard_normal(
            (estimator_cfg.k_steps, m_paths))
    s_star, j_phy = weighted_pathwise_force(a, oracle_cfg, noise_oracle)
    s_hat, _ = weighted_pathwise_force(a, estimator_cfg, noise_est)
    w_phy = posterior_weights(j_phy)
    s_mid, _ = weighted_pathwise_force(a, estimator_cfg, noise_est, weights=w_phy)
    return {
        "total": s_hat - s_star,
        "term_I": s_hat - s_mid,
        "term_II": s_mid - s_star,
    }
