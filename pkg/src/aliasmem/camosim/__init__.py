"""Synthetic two-view manipulation tasks whose decisive cues are hidden by the time the robot acts."""

from .dataset import (Dataset, Episode, denormalize_pose, normalize_pose, read_dataset, record_dataset,
                      record_episode, write_dataset)
from .expert import scripted_expert
from .world import (CHANCE, HOME, PHASES, TASKS, SimConfig, TrialOutcome, WorldState, finished,
                    latent_concealed, permute_latent, render, render_views, reset, step)

__all__ = [
    "Dataset", "Episode", "denormalize_pose", "normalize_pose", "read_dataset", "record_dataset",
    "record_episode", "write_dataset", "scripted_expert", "CHANCE", "HOME", "PHASES", "TASKS",
    "SimConfig", "TrialOutcome", "WorldState", "finished", "latent_concealed", "permute_latent", "render", "render_views",
    "reset", "step",
]
