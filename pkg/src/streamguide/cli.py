"""Command-line entry points: train, eval, sweep, verify, gen-demos.

The experiment configuration is a flat sectioned key-value file (INI syntax)
whose sections mirror the library modules; unknown sections or keys are hard
errors. Checkpoints are a versioned binary format: magic string, version, a
JSON architecture header, then little-endian float64 parameter arrays, with a
bit-exact save/load round trip.

Exit status: 0 success, 1 usage/config error, 2 verification failure,
3 training divergence.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import struct
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import oracle as oc
from . import tape as tp
from .env import SCRIPTS, build_world, generate_demos, run_episode
from .guidance import (CollisionRiskCritic, EnsembleConfig, GuidanceConfig,
                       MECHANISMS, ccg_targets, critic_features,
                       nearest_obstacle_phi, rollout_batch, steg_gradient)
from .interpolant import (Demonstration, Normalizer, StreamingPolicy,
                          TrainConfig, TrainingDiverged)
from .sampler import SamplerConfig, ode_step, sde_step, streaming_execute
from .schedules import ScheduleSet
from .validation import check_random_state

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VERIFY = 2
EXIT_DIVERGED = 3


class ConfigError(ValueError):
    pass


def _parse_methods(text: str):
    methods = tuple(m.strip() for m in text.split(",") if m.strip())
    if not methods:
        raise ConfigError("run.methods must name at least one mechanism")
    for m in methods:
        if m not in MECHANISMS:
            raise ConfigError(f"unknown method {m!r}; choose from {sorted(MECHANISMS)}")
    return methods


def _parse_script(text: str):
    if text not in SCRIPTS:
        raise ConfigError(f"unknown env script {text!r}; choose from {SCRIPTS}")
    return text


def _parse_epsilon_kind(text: str):
    if text not in ("zero", "constant", "gamma2"):
        raise ConfigError("schedules.epsilon_kind must be zero|constant|gamma2")
    return text


def _parse_mode(text: str):
    if text not in ("ode", "sde"):
        raise ConfigError("sampler.mode must be ode|sde")
    return text


def _parse_target(text: str):
    if text not in ("proxy", "distance"):
        raise ConfigError("guidance.critic_target must be proxy|distance")
    return text


# Section -> key -> (parser, default). Every default is annotated in the
# README as [PAPER] or [decision].
CONFIG_SCHEMA = {
    "schedules": {
        "gamma_scale": (float, 0.1),
        "sigma0": (float, 0.05),
        "k_gain": (float, 5.0),
        "epsilon_kind": (_parse_epsilon_kind, "constant"),
        "epsilon_value": (float, 0.01),
        "gamma_floor": (float, 1e-3),
    },
    "interpolant": {
        "hidden_width": (int, 128),
        "hidden_layers": (int, 3),
        "learning_rate": (float, 1e-4),
        "batch_size": (int, 64),
        "epochs": (int, 500),
        "batches_per_epoch": (int, 8),
        "init_scale": (float, 1.0),
        "seed": (int, 0),
    },
    "sampler": {
        "mode": (_parse_mode, "sde"),
        "horizon": (int, 16),
        "exec_horizon": (int, 8),
    },
    "guidance": {
        "mechanism": (str, "none"),
        "lambda": (float, 1.0),
        "d_act": (float, 50.0),
        "k_power": (float, 2.0),
        "grad_clip": (float, 1.0),
        "sigma_cost": (float, 40.0),
        "ensemble_n": (int, 64),
        "ensemble_k": (int, 3),
        "dt_sim": (float, 0.15),
        "sigma_rollout": (float, math.sqrt(2 * 0.01)),
        "critic_target": (_parse_target, "proxy"),
        "critic_epochs": (int, 200),
        "critic_episodes": (int, 24),
        "critic_max_rows": (int, 1500),
        "critic_seed": (int, 0),
    },
    "env": {
        "script": (_parse_script, "static"),
        "n_obstacles": (int, 3),
        "obstacle_radius": (float, 25.0),
        "goal_x": (float, 430.0),
        "goal_y": (float, 430.0),
        "t_env": (int, 250),
        "goal_tolerance": (float, 15.0),
        "max_step": (float, 60.0),
        "n_demos": (int, 64),
        "demo_steps": (int, 64),
        "demo_seed": (int, 0),
        "demo_path": (str, ""),
    },
    "run": {
        "methods": (_parse_methods, ("none",)),
        "seeds": (int, 50),
        "base_seed": (int, 0),
    },
}


@dataclass
class ExperimentConfig:
    """Typed view of the flat config file; every key has a documented default."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, section_key):
        section, key = section_key
        return self.values[section][key]

    # -- factory helpers -----------------------------------------------------

    def schedules(self) -> ScheduleSet:
        s = self.values["schedules"]
        return ScheduleSet(gamma_scale=s["gamma_scale"], sigma0=s["sigma0"],
                           k_gain=s["k_gain"], epsilon_kind=s["epsilon_kind"],
                           epsilon_value=s["epsilon_value"],
                           gamma_floor=s["gamma_floor"])

    def train_config(self) -> TrainConfig:
        t = self.values["interpolant"]
        return TrainConfig(learning_rate=t["learning_rate"],
                           batch_size=t["batch_size"], epochs=t["epochs"],
                           batches_per_epoch=t["batches_per_epoch"],
                           init_scale=t["init_scale"], seed=t["seed"])

    def sampler_config(self) -> SamplerConfig:
        s = self.values["sampler"]
        return SamplerConfig(mode=s["mode"], horizon=s["horizon"],
                             exec_horizon=s["exec_horizon"],
                             schedules=self.schedules())

    def ensemble_config(self) -> EnsembleConfig:
        g = self.values["guidance"]
        return EnsembleConfig(n=g["ensemble_n"], k=g["ensemble_k"],
                              dt_sim=g["dt_sim"],
                              sigma_rollout=g["sigma_rollout"])

    def guidance_config(self, mechanism=None, lam=None, critic=None) -> GuidanceConfig:
        g = self.values["guidance"]
        mechanism = g["mechanism"] if mechanism is None else mechanism
        if lam is None:
            lam = 0.0 if mechanism == "none" else g["lambda"]
        return GuidanceConfig(mechanism=mechanism, lam=lam, d_act=g["d_act"],
                              k_power=g["k_power"], grad_clip=g["grad_clip"],
                              sigma_cost=g["sigma_cost"],
                              ensemble=self.ensemble_config(), critic=critic)

    def goal(self):
        e = self.values["env"]
        return np.array([e["goal_x"], e["goal_y"]])

    def world(self, seed: int):
        e = self.values["env"]
        return build_world(e["script"], seed, n_obstacles=e["n_obstacles"],
                           obstacle_radius=e["obstacle_radius"], goal=self.goal(),
                           t_env=e["t_env"], goal_tolerance=e["goal_tolerance"],
                           max_step=e["max_step"])

    def demos(self):
        e = self.values["env"]
        if e["demo_path"]:
            return load_demos(e["demo_path"])
        return generate_demos(e["n_demos"], e["demo_seed"], goal=self.goal(),
                              steps=e["demo_steps"],
                              goal_tolerance=e["goal_tolerance"])


def load_config(path=None) -> ExperimentConfig:
    """Parse a config file against the schema; unknown keys are hard errors."""
    values = {sec: {k: d for k, (_, d) in keys.items()}
              for sec, keys in CONFIG_SCHEMA.items()}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path, "r", encoding="utf-8") as fh:
                parser.read_file(fh)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except configparser.Error as e:
            raise ConfigError(f"malformed config {path}: {e}") from e
        for section in parser.sections():
            if section not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in CONFIG_SCHEMA[section]:
                    raise ConfigError(f"unknown config key {section}.{key}")
                parse, _ = CONFIG_SCHEMA[section][key]
                try:
                    values[section][key] = parse(raw)
                except ConfigError:
                    raise
                except ValueError as e:
                    raise ConfigError(f"bad value for {section}.{key}: {e}") from e
    cfg = ExperimentConfig(values=values)
    demo_path = values["env"]["demo_path"]
    if demo_path and not Path(demo_path).is_file():
        raise ConfigError(f"env.demo_path does not exist: {demo_path}")
    return cfg


# ---------------------------------------------------------------------------
# Demonstration files
# ---------------------------------------------------------------------------

def save_demos(path, demos):
    arrays = {}
    for i, d in enumerate(demos):
        arrays[f"xi_{i}"] = d.xi
        arrays[f"context_{i}"] = d.context
    np.savez(path, n=np.array(len(demos)), **arrays)


def load_demos(path):
    with np.load(path) as data:
        n = int(data["n"])
        return [Demonstration.from_path(data[f"xi_{i}"], data[f"context_{i}"])
                for i in range(n)]


# ---------------------------------------------------------------------------
# Checkpoint format
# ---------------------------------------------------------------------------

MAGIC = b"SGPC"
CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def _array_bytes(vec: np.ndarray) -> bytes:
    return np.ascontiguousarray(vec, dtype="<f8").tobytes()


def save_checkpoint(path, policy: StreamingPolicy, critic=None, seed=0, epoch=0):
    """Write the versioned binary checkpoint; byte-deterministic."""
    nets = policy.nets_
    sched = policy.schedules_
    header = {
        "act_dim": nets.act_dim,
        "ctx_dim": nets.ctx_dim,
        "v_dims": nets.v_net.layer_dims,
        "eta_dims": nets.eta_net.layer_dims,
        "activation": nets.v_net.activation,
        "norm_lo": [float(x) for x in policy.normalizer_.lo],
        "norm_hi": [float(x) for x in policy.normalizer_.hi],
        "schedules": {
            "gamma_scale": sched.gamma_scale, "sigma0": sched.sigma0,
            "k_gain": sched.k_gain, "epsilon_kind": sched.epsilon_kind,
            "epsilon_value": sched.epsilon_value, "gamma_floor": sched.gamma_floor,
        },
        "seed": int(seed),
        "epoch": int(epoch),
        "critic_dims": critic.net_.layer_dims if critic is not None else None,
        "critic_target": critic.target_kind if critic is not None else None,
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", CKPT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(_array_bytes(nets.v_net.flat()))
        fh.write(_array_bytes(nets.eta_net.flat()))
        if critic is not None:
            fh.write(_array_bytes(critic.net_.flat()))


def _n_params(dims) -> int:
    return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))


def load_checkpoint(path):
    """Read a checkpoint; returns (policy, critic_or_None, header dict)."""
    from .interpolant import PolicyNets

    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, blob_len = struct.unpack_from("<II", raw, 4)
    if version != CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + blob_len].decode("utf-8"))
    offset = 12 + blob_len
    sizes = [_n_params(header["v_dims"]), _n_params(header["eta_dims"])]
    if header["critic_dims"] is not None:
        sizes.append(_n_params(header["critic_dims"]))
    expected = offset + 8 * sum(sizes)
    if len(raw) != expected:
        raise CheckpointError(
            f"parameter payload is {len(raw) - offset} bytes, expected "
            f"{expected - offset} from the architecture block")

    def take(n):
        nonlocal offset
        vec = np.frombuffer(raw, dtype="<f8", count=n, offset=offset).astype(np.float64)
        offset += 8 * n
        return vec

    sched = ScheduleSet(**header["schedules"])
    rng = check_random_state(0)
    hidden = header["v_dims"][1:-1]
    nets = PolicyNets.create(header["act_dim"], header["ctx_dim"],
                             hidden_width=hidden[0] if hidden else 1,
                             hidden_layers=len(hidden), rng=rng)
    nets.v_net.load_flat(take(sizes[0]))
    nets.eta_net.load_flat(take(sizes[1]))
    if nets.v_net.layer_dims != header["v_dims"]:
        raise CheckpointError("architecture block inconsistent with dims")

    policy = StreamingPolicy(schedules=sched)
    policy.nets_ = nets
    policy.schedules_ = sched
    policy.normalizer_ = Normalizer(lo=np.array(header["norm_lo"]),
                                    hi=np.array(header["norm_hi"]))
    critic = None
    if header["critic_dims"] is not None:
        dims = header["critic_dims"]
        critic = CollisionRiskCritic(hidden_width=dims[1], hidden_layers=len(dims) - 2,
                                     target_kind=header["critic_target"])
        critic.net_ = tp.MlpParams.create(dims, check_random_state(0))
        critic.net_.load_flat(take(sizes[2]))
    return policy, critic, header


def check_compatible(policy: StreamingPolicy, cfg: ExperimentConfig):
    t = cfg.values["interpolant"]
    hidden = policy.nets_.v_net.layer_dims[1:-1]
    if hidden != [t["hidden_width"]] * t["hidden_layers"]:
        raise CheckpointError(
            f"checkpoint hidden dims {hidden} incompatible with config "
            f"{[t['hidden_width']] * t['hidden_layers']}")


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(x):
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


EVAL_HEADER = ("method", "lambda", "seed", "success", "collided", "reward",
               "min_dist", "latency_ms_per_step")
AGG_HEADER = ("method", "lambda", "episodes", "success_rate_pct",
              "collision_rate", "mean_reward", "mean_latency_ms")
SWEEP_HEADER = ("method", "lambda", "episodes", "mean_reward", "safety_rate",
                "collision_rate", "success_rate_pct", "non_dominated")


def _run_cells(cfg: ExperimentConfig, policy, critic, cells):
    """Run (method, lam, seed) episode cells; returns rows in sorted order."""
    sampler_cfg = cfg.sampler_config()
    rows = []
    for method, lam, seed in sorted(cells):
        gcfg = cfg.guidance_config(mechanism=method, lam=lam,
                                   critic=critic if method == "ccg" else None)
        world = cfg.world(seed)
        result = run_episode(world, policy, sampler_cfg, gcfg, seed)
        lat = float(np.mean(result.latency_ms)) if result.latency_ms.size else 0.0
        rows.append((method, float(lam), seed, result.success, result.collided,
                     result.reward, result.min_obstacle_distance, lat))
    return rows


def aggregate_rows(rows):
    """Per-(method, lambda) aggregates, recomputable from the raw rows."""
    groups = {}
    for method, lam, _seed, success, collided, reward, _d, lat in rows:
        groups.setdefault((method, lam), []).append((success, collided, reward, lat))
    out = []
    for (method, lam), vals in sorted(groups.items()):
        n = len(vals)
        out.append((method, lam, n,
                    100.0 * sum(v[0] for v in vals) / n,
                    sum(v[1] for v in vals) / n,
                    sum(v[2] for v in vals) / n,
                    sum(v[3] for v in vals) / n))
    return out


# ---------------------------------------------------------------------------
# Critic dataset
# ---------------------------------------------------------------------------

def collect_critic_data(policy, cfg: ExperimentConfig, log=None):
    """On-policy (features, target) pairs for the collision-risk critic.

    Runs unguided streaming episodes on the configured script, records every
    step near an obstacle, then labels a subsample with ensemble rollouts.
    """
    g = cfg.values["guidance"]
    sampler_cfg = cfg.sampler_config()
    ensemble = cfg.ensemble_config()
    records = []

    def recorder(a, t, h, obs, rng):
        if obs["obstacles"]:
            records.append((a.copy(), t, h.copy(), obs["obstacles"]))
        return np.zeros(a.shape[0])

    for ep in range(g["critic_episodes"]):
        world = cfg.world(seed=90_000 + g["critic_seed"] * 1000 + ep)
        streaming_execute(world, policy, recorder, sampler_cfg, seed=ep)
    if not records:
        raise RuntimeError("critic data collection saw no obstacles")
    rng = check_random_state(g["critic_seed"])
    if len(records) > g["critic_max_rows"]:
        keep = rng.choice(len(records), size=g["critic_max_rows"], replace=False)
        records = [records[i] for i in sorted(keep)]
    X, y = [], []
    for a, t, h, obstacles in records:
        costs, dists = rollout_batch(a, t, h, policy, ensemble, obstacles,
                                     g["sigma_cost"], rng)
        y_d, y_p = ccg_targets(costs, dists)
        phi = nearest_obstacle_phi(a, {"obstacles": obstacles}, policy.normalizer_)
        X.append(critic_features(a, t, h, phi))
        y.append(y_p if g["critic_target"] == "proxy" else y_d)
    if log:
        log(f"critic dataset: {len(X)} rows from {g['critic_episodes']} episodes")
    return np.stack(X), np.array(y)


def train_critic(policy, cfg: ExperimentConfig, log=None) -> CollisionRiskCritic:
    g = cfg.values["guidance"]
    t = cfg.values["interpolant"]
    X, y = collect_critic_data(policy, cfg, log=log)
    critic = CollisionRiskCritic(hidden_width=t["hidden_width"],
                                 hidden_layers=t["hidden_layers"],
                                 epochs=g["critic_epochs"], seed=g["critic_seed"],
                                 target_kind=g["critic_target"])
    return critic.fit(X, y)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_train(cfg: ExperimentConfig, out_dir: Path, log=print) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    demos = cfg.demos()
    policy = StreamingPolicy(schedules=cfg.schedules(),
                             train_config=cfg.train_config(),
                             hidden_width=cfg[("interpolant", "hidden_width")],
                             hidden_layers=cfg[("interpolant", "hidden_layers")])
    policy.fit(demos)
    write_csv(out_dir / "training_curve.csv",
              ("epoch", "velocity_loss", "score_loss"), policy.history_)
    critic = None
    if "ccg" in cfg[("run", "methods")]:
        critic = train_critic(policy, cfg, log=log)
    path = out_dir / "checkpoint.bin"
    save_checkpoint(path, policy, critic=critic,
                    seed=cfg[("interpolant", "seed")],
                    epoch=cfg[("interpolant", "epochs")])
    log(f"wrote {path}")
    return path


def cmd_eval(cfg: ExperimentConfig, checkpoint: Path, out_dir: Path,
             seeds=None, log=print) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    policy, critic, _ = load_checkpoint(checkpoint)
    check_compatible(policy, cfg)
    n_seeds = cfg[("run", "seeds")] if seeds is None else seeds
    base = cfg[("run", "base_seed")]
    methods = cfg[("run", "methods")]
    if "ccg" in methods and critic is None:
        raise CheckpointError("config requests ccg but checkpoint has no critic")
    lam = cfg[("guidance", "lambda")]
    cells = [(m, 0.0 if m == "none" else lam, base + s)
             for m in methods for s in range(n_seeds)]
    rows = _run_cells(cfg, policy, critic, cells)
    path = out_dir / "metrics.csv"
    write_csv(path, EVAL_HEADER, rows)
    write_csv(out_dir / "metrics_aggregate.csv", AGG_HEADER, aggregate_rows(rows))
    for agg in aggregate_rows(rows):
        log(f"{agg[0]} lambda={agg[1]}: SR {agg[3]:.1f}% collisions {agg[4]:.2f} "
            f"reward {agg[5]:.3f}")
    return path


def pareto_flags(points):
    """Non-dominated flags for (reward, safety) points: dominated iff some
    other point is strictly better in both coordinates."""
    flags = []
    for i, (r_i, s_i) in enumerate(points):
        dominated = any(r_j > r_i and s_j > s_i
                        for j, (r_j, s_j) in enumerate(points) if j != i)
        flags.append(not dominated)
    return flags


def cmd_sweep(cfg: ExperimentConfig, checkpoint: Path, out_dir: Path,
              lambda_grid, seeds=None, log=print) -> Path:
    if not lambda_grid:
        raise ConfigError("lambda grid must be nonempty")
    out_dir.mkdir(parents=True, exist_ok=True)
    policy, critic, _ = load_checkpoint(checkpoint)
    check_compatible(policy, cfg)
    n_seeds = cfg[("run", "seeds")] if seeds is None else seeds
    base = cfg[("run", "base_seed")]
    methods = [m for m in cfg[("run", "methods")] if m != "none"]
    if not methods:
        raise ConfigError("sweep needs at least one guided method in run.methods")
    out_rows = []
    for method in methods:
        aggs = []
        for lam in lambda_grid:
            cells = [(method, lam, base + s) for s in range(n_seeds)]
            rows = _run_cells(cfg, policy, critic, cells)
            (m, l, n, sr, coll, reward, _lat), = aggregate_rows(rows)
            aggs.append((m, l, n, reward, 1.0 - coll, coll, sr))
        flags = pareto_flags([(a[3], a[4]) for a in aggs])
        out_rows.extend(a + (f,) for a, f in zip(aggs, flags))
        for a, f in zip(aggs, flags):
            log(f"{method} lambda={a[1]}: reward {a[3]:.3f} safety {a[4]:.2f}"
                f"{' *' if f else ''}")
    path = out_dir / "pareto.csv"
    write_csv(path, SWEEP_HEADER, out_rows)
    return path


def cmd_gen_demos(cfg: ExperimentConfig, out_dir: Path, log=print) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    demos = generate_demos(cfg[("env", "n_demos")], cfg[("env", "demo_seed")],
                           goal=cfg.goal(), steps=cfg[("env", "demo_steps")],
                           goal_tolerance=cfg[("env", "goal_tolerance")])
    path = out_dir / "demos.npz"
    save_demos(path, demos)
    log(f"wrote {len(demos)} demonstrations to {path}")
    return path


# ---------------------------------------------------------------------------
# Verification suite (analytic criteria; empirical ones live in the tests)
# ---------------------------------------------------------------------------

def _ou_steg_pieces(spec: oc.OuSpec):
    def drift_fn(graph, states, t):
        return tp.scale(states, -spec.a_rate)

    def cost_fn(graph, states):
        return graph.leaf(np.zeros(states.value.shape[0]))

    def terminal_fn(graph, states):
        return tp.scale(tp.asum(tp.mul(states, states), axis=1), 0.5 * spec.kappa)

    return drift_fn, cost_fn, terminal_fn


def ou_steg_gradient(spec: oc.OuSpec, x0: float, n: int, k_steps: int, seed=0,
                     noise=None):
    """Ensemble-gradient estimate of grad log u(x0, 0) on the OU instance."""
    drift_fn, cost_fn, terminal_fn = _ou_steg_pieces(spec)
    dt = spec.horizon / k_steps
    ens = EnsembleConfig(n=n, k=k_steps, dt_sim=dt,
                         sigma_rollout=math.sqrt(2 * spec.eps_const))
    if noise is None:
        noise = check_random_state(seed).standard_normal((k_steps, n, 1))
    grad, value = steg_gradient(np.array([x0]), 0.0, drift_fn, cost_fn, ens,
                                noise=noise, terminal_fn=terminal_fn)
    return float(grad[0]), value, noise


def ou_steg_value(spec: oc.OuSpec, x0: float, n: int, k_steps: int, noise):
    drift_fn, cost_fn, terminal_fn = _ou_steg_pieces(spec)
    dt = spec.horizon / k_steps
    ens = EnsembleConfig(n=n, k=k_steps, dt_sim=dt,
                         sigma_rollout=math.sqrt(2 * spec.eps_const))
    graph = tp.Tape()
    from .guidance import steg_value
    node = steg_value(graph, graph.leaf(np.array([x0])), 0.0, drift_fn, cost_fn,
                      ens, noise=noise, terminal_fn=terminal_fn)
    return float(node.value)


def verification_checks():
    """Analytic acceptance checks (criteria 1-8); yields result dicts."""
    spec = oc.OuSpec()
    results = []

    def add(criterion, name, passed, detail):
        results.append({"criterion": criterion, "name": name,
                        "passed": bool(passed), "detail": detail})

    # 1. autodiff vs central finite differences on an MLP scalar head
    rng = check_random_state(0)
    net = tp.MlpParams.create([3, 8, 1], rng)
    x0 = rng.standard_normal(3)
    g = tp.Tape()
    x_node = g.leaf(x0[None, :])
    out = tp.asum(tp.mlp_forward(g, net, x_node))
    tp.backward(g, out)
    grad = x_node.grad[0]
    h = 1e-6
    fd = np.array([
        (tp.mlp_eval(net, (x0 + h * e)[None, :]).sum()
         - tp.mlp_eval(net, (x0 - h * e)[None, :]).sum()) / (2 * h)
        for e in np.eye(3)])
    rel = np.max(np.abs(grad - fd) / np.maximum(np.abs(fd), 1e-8))
    add(1, "autodiff_vs_fd", rel < 1e-5, f"max rel err {rel:.2e}")

    # 2. Feynman-Kac residual of the closed-form desirability
    worst = 0.0
    for x in oc.X_GRID:
        for f in oc.T_FRACS:
            r = oc.feynman_kac_residual(lambda xx, tt: oc.ou_desirability(xx, tt, spec),
                                        x, f * spec.horizon, spec)
            worst = max(worst, abs(r))
    add(2, "feynman_kac_residual", worst < 1e-5, f"max |residual| {worst:.2e}")

    # 3. likelihood-ratio martingale at the probe times
    ok, details = True, []
    for f in oc.T_FRACS:
        out = oc.martingale_check(spec, f * spec.horizon, m_paths=10_000, seed=7)
        ok = ok and abs(out["mean"] - 1.0) <= 3 * out["stderr"]
        details.append(f"t={f}: {out['mean']:.4f}+-{out['stderr']:.4f}")
    add(3, "martingale", ok, "; ".join(details))

    # 4. guided terminal law vs the tilted Gaussian
    mom = oc.guided_terminal_moments(spec, x0=1.0, n_steps=200, m_paths=100_000,
                                     seed=11)
    ok = (abs(mom["emp_mean"] - mom["ana_mean"]) <= 3 * mom["se_mean"]
          and abs(mom["emp_var"] - mom["ana_var"]) <= 3 * mom["se_var"])
    add(4, "guided_terminal_moments", ok,
        f"mean {mom['emp_mean']:.4f} vs {mom['ana_mean']:.4f}, "
        f"var {mom['emp_var']:.4f} vs {mom['ana_var']:.4f}")

    # 5. ensemble gradient vs analytic grad log u, and vs its own CRN FD
    grad, _, noise = ou_steg_gradient(spec, x0=1.0, n=4096, k_steps=16, seed=3)
    truth = oc.ou_grad_log_u(1.0, 0.0, spec)
    rel = abs(grad - truth) / abs(truth)
    h = 1e-5
    fd = (ou_steg_value(spec, 1.0 + h, 4096, 16, noise)
          - ou_steg_value(spec, 1.0 - h, 4096, 16, noise)) / (2 * h)
    rel_fd = abs(grad - fd) / max(abs(fd), 1e-12)
    add(5, "ensemble_gradient_vs_theory", rel < 0.10 and rel_fd < 1e-4,
        f"vs analytic {rel:.3f}, vs CRN FD {rel_fd:.2e}")

    # 6. degenerate ensemble cases are exact
    g1, v1, noise1 = ou_steg_gradient(spec, 1.0, n=1, k_steps=4, seed=5)
    drift_fn, _, _ = _ou_steg_pieces(spec)

    def zero_cost(graph, states):
        return graph.leaf(np.zeros(states.value.shape[0]))

    ens = EnsembleConfig(n=32, k=4, dt_sim=spec.horizon / 4,
                         sigma_rollout=math.sqrt(2 * spec.eps_const))
    gz, _vz = steg_gradient(np.array([1.0]), 0.0, drift_fn, zero_cost, ens,
                            noise=check_random_state(9).standard_normal((4, 32, 1)))
    # replay the single rollout path with the tape's exact op ordering
    x = 1.0
    dt = spec.horizon / 4
    root = ens.sigma_rollout * math.sqrt(dt)
    for k in range(4):
        x = (x + (x * -spec.a_rate) * dt) + root * float(noise1[k, 0, 0])
    j_single = (x * x) * (0.5 * spec.kappa)
    add(6, "lse_degenerate_cases", v1 == -j_single and np.all(gz == 0.0),
        f"V+J = {v1 + j_single:.1e}, zero-cost grad max |{np.max(np.abs(gz)):.1e}|")

    # 7. error decomposition identity and matched-zero
    cfg_fine = oc.OuRollout(a_rate=1.0, eps_const=0.5, dt=0.05, k_steps=20)
    cfg_coarse = oc.OuRollout(a_rate=1.2, eps_const=0.5, dt=0.05, k_steps=20)
    dec = oc.error_decomposition(np.array([1.0]), cfg_coarse, cfg_fine, 512, seed=2)
    gap = np.max(np.abs(dec["total"] - dec["term_I"] - dec["term_II"]))
    dec0 = oc.error_decomposition(np.array([1.0]), cfg_fine, cfg_fine, 512, seed=2)
    matched = max(np.max(np.abs(dec0["term_I"])), np.max(np.abs(dec0["term_II"])))
    add(7, "error_decomposition", gap < 1e-10 and matched == 0.0,
        f"identity gap {gap:.1e}, matched terms {matched:.1e}")

    # 8. zero-diffusivity SDE step equals the ODE step
    from .interpolant import PolicyNets
    from .sampler import StreamState
    sched = ScheduleSet(epsilon_kind="zero")
    nets = PolicyNets.create(2, 4, hidden_width=8, hidden_layers=1,
                             rng=check_random_state(1))
    state = StreamState(a=np.array([0.1, -0.2]), t=0.25, h=np.zeros(4))
    s_ode = ode_step(state, nets, sched, 1 / 16)
    s_sde = sde_step(state, nets, sched, 1 / 16, check_random_state(0))
    diff = np.max(np.abs(s_ode.a - s_sde.a))
    add(8, "sde_ode_consistency", diff < 1e-12, f"max |diff| {diff:.1e}")

    return results


EMPIRICAL_CRITERIA = {
    9: "base_policy_success (run pytest tests/test_acceptance.py)",
    10: "static_guidance_efficacy (run pytest tests/test_acceptance.py)",
    11: "chase_regime_shift (run pytest tests/test_acceptance.py)",
    12: "pareto_lambda_sweep (run pytest tests/test_acceptance.py)",
    13: "eval_determinism (run pytest tests/test_acceptance.py)",
}


def cmd_verify(out_dir: Path, log=print) -> int:
    out_dir.mkdir(parents=True, exist_ok=True)
    results = verification_checks()
    rows = []
    failed = False
    for r in results:
        status = "PASS" if r["passed"] else "FAIL"
        failed = failed or not r["passed"]
        log(f"[{status}] criterion {r['criterion']}: {r['name']} ({r['detail']})")
        rows.append((r["criterion"], r["name"], status, r["detail"]))
    for num, name in sorted(EMPIRICAL_CRITERIA.items()):
        log(f"[SKIP] criterion {num}: {name}")
        rows.append((num, name, "SKIP", "empirical criterion; covered by the test suite"))
    write_csv(out_dir / "verify_report.csv",
              ("criterion", "name", "status", "detail"), rows)
    return EXIT_VERIFY if failed else EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing and dispatch
# ---------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _parse_lambda_grid(text: str):
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError(f"bad lambda grid {text!r}: {e}") from e
    if not grid or any(v < 0 for v in grid):
        raise ConfigError("lambda grid must be nonempty and non-negative")
    return grid


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="streamguide",
                     description="Streaming interpolant policy toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, desc in (("train", "train policy (and critic) from demos"),
                       ("eval", "run evaluation episodes"),
                       ("sweep", "lambda sweep with Pareto flags"),
                       ("verify", "run the analytic verification suite"),
                       ("gen-demos", "write the synthetic demo dataset")):
        p = sub.add_parser(name, help=desc)
        p.add_argument("--config", type=Path, default=None,
                       help="experiment config file (defaults used if omitted)")
        p.add_argument("--out", type=Path, default=Path("out"),
                       help="output directory")
        if name in ("eval", "sweep"):
            p.add_argument("--checkpoint", type=Path, required=True)
            p.add_argument("--seeds", type=int, default=None,
                           help="override run.seeds episode count")
        if name == "sweep":
            p.add_argument("--lambda-grid", type=str, default="0,0.5,1,2,4,8",
                           help="comma-separated lambda values")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        if args.command == "verify":
            return cmd_verify(args.out)
        cfg = load_config(args.config)
        if args.command == "train":
            cmd_train(cfg, args.out)
        elif args.command == "gen-demos":
            cmd_gen_demos(cfg, args.out)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint, args.out, seeds=args.seeds)
        elif args.command == "sweep":
            cmd_sweep(cfg, args.checkpoint, args.out,
                      _parse_lambda_grid(args.lambda_grid), seeds=args.seeds)
        return EXIT_OK
    except (ConfigError, CheckpointError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingDiverged as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    raise SystemExit(main())
