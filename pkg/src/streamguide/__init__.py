"""Streaming stochastic-interpolant policies with inference-time guidance."""

from .env import (EpisodeResult, Obstacle, World2D, build_world,
                  generate_demos, run_episode)
from .guidance import (CollisionRiskCritic, EnsembleConfig, GuidanceConfig,
                       make_guidance, repulsion_drift, steg_gradient)
from .interpolant import (Demonstration, Normalizer, PolicyNets,
                          StreamingPolicy, TrainConfig, TrainingDiverged, train)
from .oracle import (OuRollout, OuSpec, brute_posterior_force,
                     error_decomposition, feynman_kac_residual,
                     guided_terminal_moments, martingale_check,
                     ou_desirability, ou_grad_log_u)
from .sampler import SamplerConfig, chunked_execute, streaming_execute
from .schedules import ScheduleSet

__version__ = "0.1.0"

__all__ = [
    "CollisionRiskCritic", "Demonstration", "EnsembleConfig", "EpisodeResult",
    "GuidanceConfig", "Normalizer", "Obstacle", "OuRollout", "OuSpec",
    "PolicyNets", "SamplerConfig", "ScheduleSet", "StreamingPolicy",
    "TrainConfig", "TrainingDiverged", "World2D", "brute_posterior_force",
    "build_world", "chunked_execute", "error_decomposition",
    "feynman_kac_residual", "generate_demos", "guided_terminal_moments",
    "make_guidance", "martingale_check", "ou_desirability", "ou_grad_log_u",
    "repulsion_drift", "run_episode", "steg_gradient", "streaming_execute",
    "train", "__version__",
]
