"""Closed-loop rollouts of a trained model in fresh simulator instances.

All trials of a call advance in lock-step as one batch. Every trial draws its
sampling noise from its own generator, so a trial's result does not depend on
which other trials share the batch.
"""

from __future__ import annotations

import logging

import numpy as np

from ..camosim import (PHASES, SimConfig, TrialOutcome, denormalize_pose, finished, normalize_pose,
                       render_views, reset, step)
from ..numerics import T, no_grad
from ..policy import euler_integrate
from .config import RunConfig
from .metrics import MetricsReport
from .model import Model, frame_geometry

log = logging.getLogger(__name__)

EVAL_SEED_BASE = 10_000_000


def eval_seeds(seed: int, n_trials: int) -> list[int]:
    """Trial seeds, disjoint from the recording seeds (``seed * 100003 + i`` with small ``i``)."""
    return [EVAL_SEED_BASE + seed * 1000 + i for i in range(n_trials)]


def sim_config(cfg: RunConfig) -> SimConfig:
    return SimConfig(image_size=cfg.image_size, min_swaps=cfg.min_swaps, max_swaps=cfg.max_swaps)


def act_budget(cfg: RunConfig, task: str) -> int:
    cycles = 3 if task == "sequential" else 1
    return cfg.act_frame_budget * cycles


def _sample_plans(model: Model, h: np.ndarray, rngs: list, steps: int) -> np.ndarray:
    pc = model.policy.cfg
    x0 = np.stack([r.standard_normal((pc.horizon, pc.pose_dim)) for r in rngs]).astype(h.dtype)
    c = model.condition(T.as_tensor(h))
    return euler_integrate(lambda x, tau: model.policy(x, tau, c).data, x0, steps)


def rollout(model: Model, cfg: RunConfig, seeds: list[int], task: str | None = None) -> list[TrialOutcome]:
    """Run one closed-loop trial per seed and return their outcomes."""
    task = task or cfg.task
    sim = sim_config(cfg)
    cells = cfg.image_size // cfg.patch
    n = len(seeds)
    worlds = [reset(task, s, sim) for s in seeds]
    rngs = [np.random.default_rng([s, 7]) for s in seeds]
    state = model.init_state(n)
    plans = [None] * n
    used = [0] * n
    act_frames = [0] * n
    done = [False] * n
    budget = act_budget(cfg, task)
    with no_grad():
        while not all(done):
            live = [i for i in range(n) if not done[i]]
            views = [render_views(w, cfg.image_size) for w in worlds]
            front = np.stack([v[0] for v in views])[:, None]
            hand = np.stack([v[1] for v in views])[:, None]
            ee = np.stack([w.ee for w in worlds])
            g = frame_geometry(ee, cells, cfg.epipolar_epsilon, cfg.epipolar_temperature)
            geo = type(g)(*(a[:, None].astype(np.float32) for a in (g.desc_front, g.desc_hand, g.epi_fh, g.epi_hf)))
            proprio = normalize_pose(np.stack([w.pose for w in worlds]))[:, None].astype(np.float32)
            phase = np.array([[min(w.phase, PHASES[task] - 1)] for w in worlds])
            h, state = model.encode(front, hand, geo, proprio, phase, state)
            h = h.data[:, -1]

            replan = [i for i in live if worlds[i].psi == 1
                      and (plans[i] is None or used[i] >= min(cfg.replan_every, cfg.horizon))]
            if replan:
                x = _sample_plans(model, h[replan], [rngs[i] for i in replan], cfg.flow_steps)
                for i, traj in zip(replan, x):
                    plans[i] = denormalize_pose(traj)
                    used[i] = 0

            for i in live:
                w = worlds[i]
                if w.psi == 0:
                    plans[i] = None
                    targets = [w.pose.copy()] * sim.stride
                else:
                    act_frames[i] += 1
                    wp = plans[i][used[i]]
                    used[i] += 1
                    start = w.pose.copy()
                    targets = []
                    for k in range(1, sim.stride + 1):
                        sp = wp.copy()
                        sp[:3] = start[:3] + (wp[:3] - start[:3]) * (k / sim.stride)
                        targets.append(sp)
                for sp in targets:
                    step(w, sp, sim)
                    if finished(w):
                        break
                if finished(w) or act_frames[i] >= budget:
                    done[i] = True
    outcomes = [w.outcome for w in worlds]
    log.info("%d trials: %d manipulation successes, %d full successes", n,
             sum(bool(o.manipulation_success) for o in outcomes),
             sum(bool(o.manipulation_success and o.decision_success) for o in outcomes))
    return outcomes


def evaluate(model: Model, cfg: RunConfig, n_trials: int | None = None, seed: int | None = None,
             batch: int = 25) -> MetricsReport:
    n_trials = cfg.eval_trials if n_trials is None else n_trials
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    seeds = eval_seeds(cfg.seed if seed is None else seed, n_trials)
    outcomes = []
    for k in range(0, n_trials, batch):
        outcomes += rollout(model, cfg, seeds[k:k + batch])
    return MetricsReport.for_task(cfg.task, outcomes)
