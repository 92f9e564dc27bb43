"""Privileged scripted demonstrator: straight-line approach, grasp, transport and release."""

from __future__ import annotations

import math

import numpy as np

from .world import (BOWL_POS, CUBE_HALF, HOME, PLATE_HALF, QUAT_DOWN, SLOTS_X, SPOON_HALF, SPOON_ORDER,
                    SPOON_Y, TOOL_START, SimConfig, WorldState)

CUP_GRASP_Z = 0.075
SPOON_GRASP_Z = SPOON_HALF[2] * 2 - 0.002
TOOL_GRASP_Z = CUBE_HALF[2] * 2 - 0.004
CARRY_Z = 0.14
DIP_Z = 0.07


class _Plan:
    def __init__(self, start: np.ndarray, speed: float):
        self.pos = np.array(start, dtype=float)
        self.grip = 0.0
        self.speed = speed
        self.rows: list[np.ndarray] = []

    def _emit(self):
        self.rows.append(np.concatenate([self.pos, QUAT_DOWN, [self.grip]]))

    def move(self, target) -> None:
        target = np.asarray(target, dtype=float)
        start = self.pos.copy()
        n = max(1, math.ceil(np.linalg.norm(target - start) / self.speed))
        for k in range(1, n + 1):
            self.pos = target.copy() if k == n else start + (target - start) * (k / n)
            self._emit()

    def hold(self, frames: int, grip: float | None = None) -> None:
        if grip is not None:
            self.grip = grip
        for _ in range(frames):
            self._emit()

    def array(self) -> np.ndarray:
        return np.array(self.rows)


def scripted_expert(st: WorldState, cfg: SimConfig | None = None) -> np.ndarray:
    """Setpoints ``(n, 8)`` for every remaining raw frame of the episode, starting from ``st``."""
    cfg = cfg or SimConfig()
    plan = _Plan(st.ee, cfg.expert_speed)
    plan.hold(max(st.act_start - st.frame, 0), grip=0.0)
    if st.task == "spatial":
        x = SLOTS_X[st.latent]
        plan.move((x, 0.0, CARRY_Z + 0.02))
        plan.move((x, 0.0, CUP_GRASP_Z))
        plan.hold(3, grip=1.0)
        plan.move((x, 0.0, 0.22))
        plan.hold(10)
    elif st.task == "episodic":
        x = SLOTS_X[st.latent]
        tool = TOOL_START
        plan.move((tool[0], tool[1], CARRY_Z))
        plan.move((tool[0], tool[1], TOOL_GRASP_Z))
        plan.hold(3, grip=1.0)
        plan.move((tool[0], tool[1], CARRY_Z))
        plan.move((x, 0.0, CARRY_Z))
        offset = tool[2] - TOOL_GRASP_Z
        plan.move((x, 0.0, 2 * PLATE_HALF[2] + CUBE_HALF[2] - offset))
        plan.hold(3, grip=0.0)
        plan.move((x, 0.0, CARRY_Z))
        plan.move(HOME)
        plan.hold(4)
    else:
        colors = st.script["colors"]
        done = len(st.progress["completed"])
        for k, color in enumerate(SPOON_ORDER):
            if k < done:
                continue
            x = SLOTS_X[colors.index(color)]
            plan.hold(cfg.decision_frames)
            plan.move((x, SPOON_Y, 0.12))
            plan.move((x, SPOON_Y, SPOON_GRASP_Z))
            plan.hold(3, grip=1.0)
            plan.move((x, SPOON_Y, 0.12))
            plan.move((BOWL_POS[0], BOWL_POS[1], 0.12))
            plan.move((BOWL_POS[0], BOWL_POS[1], DIP_Z))
            plan.hold(3)
            plan.move((BOWL_POS[0], BOWL_POS[1], 0.12))
            plan.move((x, SPOON_Y, 0.12))
            plan.move((x, SPOON_Y, SPOON_GRASP_Z))
            plan.hold(3, grip=0.0)
            plan.move((x, SPOON_Y, 0.12))
            plan.move(HOME)
        plan.hold(4)
    return plan.array()
