"""World state, observe-phase scripts, pose-controlled stepping and success predicates.

World frame: table top at ``z = 0``, ``+x`` right, ``+y`` away from the front
camera, ``+z`` up; meters. The three candidate objects sit at fixed slots along
``x``. Each task hides one latent in the history:

* ``spatial``: which slot's cup covers the cube after the swaps,
* ``episodic``: which plate was placed during the observe phase,
* ``sequential``: how many seasoning cycles are already done.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from . import raster as R

log = logging.getLogger(__name__)

TASKS = ("episodic", "spatial", "sequential")
TASK_IDS = {name: i for i, name in enumerate(TASKS)}
SLOTS_X = (-0.15, 0.0, 0.15)
HOME = np.array([0.0, -0.15, 0.25])
QUAT_DOWN = np.array([0.0, 1.0, 0.0, 0.0])
WORKSPACE_LO = np.array([-0.3, -0.3, 0.0])
WORKSPACE_HI = np.array([0.3, 0.3, 0.35])
CHANCE = {"episodic": (1 / 3, 1 / 3), "spatial": (1 / 3, 1 / 3), "sequential": (1 / 27, 1 / 9)}  # (DSR, CSR)
PHASES = {"episodic": 2, "spatial": 2, "sequential": 9}

CUP_HALF = np.array([0.035, 0.035, 0.04])
CUBE_HALF = np.array([0.018, 0.018, 0.018])
PLATE_HALF = np.array([0.05, 0.05, 0.006])
SPOON_HALF = np.array([0.012, 0.05, 0.01])
BOWL_HALF = np.array([0.05, 0.05, 0.02])
TABLE = (np.array([0.0, 0.0, -0.01]), np.array([0.4, 0.32, 0.01]), np.array([0.62, 0.5, 0.38]))
GRIPPER_COLOR = np.array([0.2, 0.2, 0.22])
CUP_COLOR = np.array([0.25, 0.35, 0.75])
CUBE_COLOR = np.array([0.9, 0.15, 0.15])
PLATE_COLOR = np.array([0.92, 0.92, 0.88])
TOOL_COLOR = np.array([0.2, 0.7, 0.3])
SPOON_COLORS = (np.array([0.1, 0.75, 0.2]), np.array([0.85, 0.15, 0.1]), np.array([0.95, 0.85, 0.1]))
BOWL_COLOR = np.array([0.55, 0.4, 0.7])
SPOON_ORDER = (0, 1, 2)  # green, red, yellow
BOWL_POS = np.array([0.0, 0.16, BOWL_HALF[2]])
TOOL_START = np.array([0.0, -0.12, CUBE_HALF[2]])
SPOON_Y = -0.02
LIFT_REVEAL = 0.10
GRASP_RADIUS = 0.03
PREP_TOLERANCE = 0.02


@dataclass
class SimConfig:
    image_size: int = 32
    stride: int = 4
    max_step: float = 0.05
    swap_frames: int = 24
    min_swaps: int = 1
    max_swaps: int = 2
    expert_speed: float = 0.012
    decision_frames: int = 8
    settle_frames: int = 8

    def __post_init__(self):
        if not 1 <= self.min_swaps <= self.max_swaps:
            raise ConfigError("swap counts must satisfy 1 <= min_swaps <= max_swaps")
        if self.stride < 1 or self.image_size < 1 or self.max_step <= 0:
            raise ConfigError("stride, image size and step cap must be positive")


@dataclass
class Body:
    kind: str
    pos: np.ndarray
    half: np.ndarray
    color: np.ndarray
    hidden: bool = False


@dataclass
class TrialOutcome:
    manipulation_success: bool = False
    decision_success: bool | None = None  # None until manipulation succeeds
    stages: list = field(default_factory=list)


@dataclass
class WorldState:
    task: str
    seed: int
    bodies: list
    ee: np.ndarray
    quat: np.ndarray
    gripper: float = 0.0
    held: int = -1
    held_offset: np.ndarray = field(default_factory=lambda: np.zeros(3))
    frame: int = 0
    psi: int = 0
    phase: int = 0
    latent: int = 0
    act_start: int = 0
    script: dict = field(default_factory=dict)
    progress: dict = field(default_factory=dict)
    outcome: TrialOutcome = field(default_factory=TrialOutcome)
    violations: int = 0

    def copy(self) -> "WorldState":
        return copy.deepcopy(self)

    @property
    def pose(self) -> np.ndarray:
        return np.concatenate([self.ee, self.quat, [self.gripper]])

    def candidates(self) -> list[int]:
        kind = {"spatial": "cup", "episodic": "plate", "sequential": "spoon"}[self.task]
        return [i for i, b in enumerate(self.bodies) if b.kind == kind]


def slot_of(x: float) -> int:
    return int(np.argmin([abs(x - s) for s in SLOTS_X]))


def _smooth(p: float) -> float:
    return 0.5 - 0.5 * math.cos(math.pi * min(max(p, 0.0), 1.0))


# -- observe-phase scripts ------------------------------------------------

def _spatial_layout(script: dict, frame: int) -> tuple[list, int]:
    """Cup positions at ``frame`` and the slot currently holding the cube."""
    occupant = [0, 1, 2]  # occupant[slot] = cup index
    pos = {c: np.array([SLOTS_X[c], 0.0, CUP_HALF[2]]) for c in range(3)}
    cube_slot = script["cube_slot"]
    if frame < script["cover_start"]:
        pos[cube_slot][2] += LIFT_REVEAL
    elif frame < script["cover_end"]:
        p = (frame - script["cover_start"] + 1) / (script["cover_end"] - script["cover_start"])
        pos[cube_slot][2] += LIFT_REVEAL * (1.0 - _smooth(p))
    for start, (i, j) in zip(script["swap_starts"], script["swaps"]):
        if frame < start:
            break
        ci, cj = occupant[i], occupant[j]
        p = (frame - start + 1) / script["swap_frames"]
        if p >= 1.0:
            occupant[i], occupant[j] = cj, ci
            pos[ci][:2] = (SLOTS_X[j], 0.0)
            pos[cj][:2] = (SLOTS_X[i], 0.0)
            cube_slot = j if cube_slot == i else i if cube_slot == j else cube_slot
            continue
        s = _smooth(p)
        arc = 0.06 * math.sin(math.pi * min(p, 1.0))
        pos[ci][:2] = (SLOTS_X[i] + (SLOTS_X[j] - SLOTS_X[i]) * s, arc)
        pos[cj][:2] = (SLOTS_X[j] + (SLOTS_X[i] - SLOTS_X[j]) * s, -arc)
    return [pos[c] for c in range(3)], cube_slot


def spatial_latent(cube_slot: int, swaps) -> int:
    """Slot of the cube after applying the slot-pair swaps in order."""
    for i, j in swaps:
        cube_slot = j if cube_slot == i else i if cube_slot == j else cube_slot
    return cube_slot


def _episodic_plate(script: dict, frame: int) -> np.ndarray:
    """Position of the placed plate; it slides in from behind the table and lowers."""
    target = np.array([SLOTS_X[script["target"]], 0.0, PLATE_HALF[2]])
    start = target + np.array([0.0, 0.28, 0.14])
    p = (frame - script["place_start"] + 1) / (script["place_end"] - script["place_start"])
    if p >= 1.0:
        return target
    s = _smooth(p)
    return start + (target - start) * s


# -- reset ----------------------------------------------------------------

def reset(task: str, seed: int, cfg: SimConfig | None = None) -> WorldState:
    if task not in TASKS:
        raise ConfigError(f"unknown task {task!r}; expected one of {TASKS}")
    cfg = cfg or SimConfig()
    rng = np.random.default_rng([TASK_IDS[task], seed])
    st = WorldState(task=task, seed=seed, bodies=[], ee=HOME.copy(), quat=QUAT_DOWN.copy())
    if task == "spatial":
        cube_slot = int(rng.integers(3))
        k = int(rng.integers(cfg.min_swaps, cfg.max_swaps + 1))
        pairs = [(0, 1), (0, 2), (1, 2)]
        swaps = [pairs[int(rng.integers(3))] for _ in range(k)]
        cover_start, cover_end = 8, 20
        starts = [cover_end + 4 + n * (cfg.swap_frames + 4) for n in range(k)]
        st.script = dict(cube_slot=cube_slot, swaps=swaps, swap_starts=starts, swap_frames=cfg.swap_frames,
                         cover_start=cover_start, cover_end=cover_end)
        st.act_start = starts[-1] + cfg.swap_frames + cfg.settle_frames
        st.latent = spatial_latent(cube_slot, swaps)
        for _ in range(3):
            st.bodies.append(Body("cup", np.zeros(3), CUP_HALF.copy(), CUP_COLOR.copy()))
        st.bodies.append(Body("cube", np.zeros(3), CUBE_HALF.copy(), CUBE_COLOR.copy()))
        st.progress = dict(cube_cup=cube_slot, first_lift=None, tail=0)
    elif task == "episodic":
        target = int(rng.integers(3))
        start = 4 + int(rng.integers(4))
        st.script = dict(target=target, place_start=start, place_end=start + 24)
        st.act_start = start + 24 + cfg.settle_frames
        st.latent = target
        for s in range(3):
            st.bodies.append(Body("plate", np.array([SLOTS_X[s], 0.0, PLATE_HALF[2]]), PLATE_HALF.copy(),
                                  PLATE_COLOR.copy(), hidden=(s == target)))
        st.bodies.append(Body("tool", TOOL_START.copy(), CUBE_HALF.copy(), TOOL_COLOR.copy()))
        st.progress = dict(placed=None, returned=False)
    else:
        colors = rng.permutation(3)  # colors[slot] = color id
        st.script = dict(colors=[int(c) for c in colors])
        st.act_start = 0
        st.latent = 0
        for s in range(3):
            c = int(colors[s])
            st.bodies.append(Body("spoon", np.array([SLOTS_X[s], SPOON_Y, SPOON_HALF[2]]), SPOON_HALF.copy(),
                                  SPOON_COLORS[c].copy()))
        st.bodies.append(Body("bowl", BOWL_POS.copy(), BOWL_HALF.copy(), BOWL_COLOR.copy()))
        st.progress = dict(stage=0, sub=0, wait_left=cfg.decision_frames, picked=None, dipped=False,
                           completed=[])
    _apply_script(st)
    _update_phase(st, cfg)
    return st


def _apply_script(st: WorldState) -> None:
    if st.frame >= st.act_start:
        return
    if st.task == "spatial":
        cups, cube_slot = _spatial_layout(st.script, st.frame)
        for c, p in enumerate(cups):
            st.bodies[c].pos = p
        cube = st.bodies[3]
        cube.pos = np.array([SLOTS_X[cube_slot], 0.0, CUBE_HALF[2]])
        # the cube rides under its cup while the cups slide
        cup = st.bodies[st.progress["cube_cup"]]
        cube.pos[:2] = cup.pos[:2]
        _update_cube_visibility(st)
    elif st.task == "episodic":
        s = st.script
        plate = st.bodies[s["target"]]
        if st.frame >= s["place_start"]:
            plate.hidden = False
            plate.pos = _episodic_plate(s, min(st.frame, s["place_end"] - 1))


def _update_cube_visibility(st: WorldState) -> None:
    cube = st.bodies[3]
    cube.hidden = False
    for cup in st.bodies[:3]:
        inside = np.all(np.abs(cup.pos[:2] - cube.pos[:2]) <= cup.half[:2] - cube.half[:2] + 1e-9)
        if inside and cup.pos[2] - cup.half[2] <= 1e-6:
            cube.hidden = True


# -- phases ---------------------------------------------------------------

def _update_phase(st: WorldState, cfg: SimConfig) -> None:
    if st.task != "sequential":
        st.psi = int(st.frame >= st.act_start)
        st.phase = st.psi
        return
    pr = st.progress
    st.psi = 0 if pr["wait_left"] > 0 else 1
    st.latent = min(pr["stage"], 2)
    st.phase = 3 * st.latent + pr["sub"]


# -- stepping -------------------------------------------------------------

def _grasp_point(body: Body) -> np.ndarray:
    return body.pos + np.array([0.0, 0.0, body.half[2]])


def _support_height(st: WorldState, xy: np.ndarray, exclude: int) -> float:
    top = 0.0
    for i, b in enumerate(st.bodies):
        if i == exclude or b.kind not in ("plate", "bowl"):
            continue
        if np.all(np.abs(b.pos[:2] - xy) <= b.half[:2]):
            top = max(top, b.pos[2] + b.half[2])
    return top


def step(st: WorldState, setpoint, cfg: SimConfig | None = None) -> WorldState:
    """Advance one raw frame toward the pose setpoint ``[pos(3), quat(4), gripper]``; mutates ``st``."""
    cfg = cfg or SimConfig()
    setpoint = np.asarray(setpoint, dtype=float)
    target = setpoint[:3]
    clamped = np.clip(target, WORKSPACE_LO, WORKSPACE_HI)
    if np.any(clamped != target):
        st.violations += 1
        log.debug("setpoint %s outside workspace, clamped", target)
    st.frame += 1
    _apply_script(st)

    delta = clamped - st.ee
    dist = float(np.linalg.norm(delta))
    if dist <= cfg.max_step:
        st.ee = clamped.copy()
    else:
        st.ee = st.ee + delta * (cfg.max_step / dist)
    q = setpoint[3:7]
    n = float(np.linalg.norm(q))
    if n > 1e-6:
        st.quat = q / n

    closing = setpoint[7] > 0.5
    if closing and st.gripper <= 0.5:
        _try_grasp(st)
    elif not closing and st.gripper > 0.5:
        _release(st)
    st.gripper = 1.0 if closing else 0.0
    if st.held >= 0:
        st.bodies[st.held].pos = st.ee + st.held_offset
    _update_outcomes(st, cfg)
    _update_phase(st, cfg)
    return st


def _graspable(st: WorldState) -> list[int]:
    if st.frame < st.act_start:
        return []
    kinds = {"spatial": ("cup",), "episodic": ("tool",), "sequential": ("spoon",)}[st.task]
    return [i for i, b in enumerate(st.bodies) if b.kind in kinds]


def _try_grasp(st: WorldState) -> None:
    best, best_d = -1, GRASP_RADIUS
    for i in _graspable(st):
        g = _grasp_point(st.bodies[i])
        horiz = float(np.linalg.norm(g[:2] - st.ee[:2]))
        if horiz <= best_d and abs(g[2] - st.ee[2]) <= 0.03:
            best, best_d = i, horiz
    if best >= 0:
        st.held = best
        st.held_offset = st.bodies[best].pos - st.ee
        if st.task == "sequential":
            st.progress["picked"] = best
            st.progress["dipped"] = False


def _release(st: WorldState) -> None:
    if st.held < 0:
        return
    i = st.held
    body = st.bodies[i]
    st.held = -1
    body.pos = body.pos.copy()
    body.pos[2] = _support_height(st, body.pos[:2], i) + body.half[2]
    if st.task == "episodic":
        for p in st.candidates():
            plate = st.bodies[p]
            if np.all(np.abs(plate.pos[:2] - body.pos[:2]) <= plate.half[:2]):
                body.pos[:2] = plate.pos[:2]
                if st.progress["placed"] is None:
                    st.progress["placed"] = slot_of(plate.pos[0])
    elif st.task == "sequential":
        pr = st.progress
        home = np.array([SLOTS_X[i], SPOON_Y])
        if np.linalg.norm(body.pos[:2] - home) <= 0.03:
            body.pos = np.array([home[0], home[1], SPOON_HALF[2]])
        if pr["picked"] == i and pr["dipped"] and np.array_equal(body.pos[:2], home):
            pr["completed"].append(st.script["colors"][i])
            pr["stage_done"] = True
        pr["picked"] = None
    elif st.task == "spatial":
        _update_cube_visibility(st)


def _update_outcomes(st: WorldState, cfg: SimConfig) -> None:
    pr, out = st.progress, st.outcome
    if st.task == "spatial":
        if st.held >= 0:
            cup = st.bodies[st.held]
            if cup.pos[2] - cup.half[2] >= 0.06 and pr["first_lift"] is None:
                pr["first_lift"] = st.held
                out.manipulation_success = True
                out.decision_success = st.held == pr["cube_cup"]
            _update_cube_visibility(st)
        if pr["first_lift"] is not None:
            pr["tail"] += 1
    elif st.task == "episodic":
        if pr["placed"] is not None and st.held < 0 and np.linalg.norm(st.ee - HOME) <= 0.03:
            if not out.manipulation_success:
                out.manipulation_success = True
                out.decision_success = pr["placed"] == st.script["target"]
    else:
        if st.held >= 0 and st.held == pr["picked"]:
            spoon = st.bodies[st.held]
            over = np.all(np.abs(spoon.pos[:2] - BOWL_POS[:2]) <= BOWL_HALF[:2])
            if over and spoon.pos[2] - spoon.half[2] <= BOWL_POS[2] + BOWL_HALF[2] + 0.03:
                pr["dipped"] = True
        # sub-phase bookkeeping: decision -> manipulation on grasp, -> recovery on release
        if pr["sub"] == 0 and st.held >= 0:
            pr["sub"] = 1
        elif pr["sub"] == 1 and st.held < 0:
            pr["sub"] = 2
        elif pr["sub"] == 2 and st.held >= 0:
            pr["sub"] = 1
        elif pr["sub"] == 2 and pr.get("stage_done") and np.linalg.norm(st.ee - HOME) <= PREP_TOLERANCE:
            pr["stage_done"] = False
            if len(pr["completed"]) < 3:
                pr["stage"] += 1
                pr["sub"] = 0
                pr["wait_left"] = cfg.decision_frames + 1
        if pr["wait_left"] > 0:
            pr["wait_left"] -= 1
        done = pr["completed"]
        out.stages = [(c, c == SPOON_ORDER[k]) for k, c in enumerate(done)]
        if len(done) == 3 and not out.manipulation_success:
            out.manipulation_success = True
            out.decision_success = tuple(done) == SPOON_ORDER


def finished(st: WorldState, frames_after_success: int = 8) -> bool:
    """True once the trial's outcome is settled (plus a short tail for recording)."""
    if st.task == "spatial":
        first = st.progress["first_lift"]
        return first is not None and st.progress["tail"] >= frames_after_success
    return st.outcome.manipulation_success


# -- rendering ------------------------------------------------------------

def scene_boxes(st: WorldState) -> list:
    boxes = [(TABLE[0], TABLE[1], TABLE[2], 0)]
    for b in st.bodies:
        if not b.hidden:
            boxes.append((b.pos, b.half, b.color, 1))
    gap = 0.018 if st.gripper > 0.5 else 0.032
    boxes.append((st.ee + np.array([0.0, 0.0, 0.055]), np.array([0.014, 0.014, 0.03]), GRIPPER_COLOR, 1))
    for sign in (-1.0, 1.0):
        boxes.append((st.ee + np.array([sign * gap, 0.0, 0.012]), np.array([0.005, 0.01, 0.02]),
                      GRIPPER_COLOR, 1))
    return boxes


def render(st: WorldState, view: str, size: int = 32) -> np.ndarray:
    """Float RGB image in ``[0, 1]`` of shape ``(size, size, 3)``; ``view`` is ``front`` or ``hand``."""
    if view == "front":
        cam = R.front_camera()
    elif view == "hand":
        cam = R.hand_camera(st.ee)
    else:
        raise ConfigError(f"unknown view {view!r}")
    return R.render_boxes(cam, scene_boxes(st), size)


def render_views(st: WorldState, size: int = 32) -> tuple[np.ndarray, np.ndarray]:
    return R.to_u8(render(st, "front", size)), R.to_u8(render(st, "hand", size))


def latent_concealed(st: WorldState) -> bool:
    """True on act frames where nothing rendered depends on the hidden latent.

    Lifting a cup in the shell game uncovers (or fails to uncover) the cube, so
    the spatial window closes as soon as any cup leaves the table.
    """
    if st.psi != 1:
        return False
    if st.task == "spatial":
        return all(st.bodies[c].pos[2] - st.bodies[c].half[2] <= 1e-6 for c in st.candidates())
    return True


def permute_latent(st: WorldState, new_latent: int) -> WorldState:
    """Copy of ``st`` whose hidden latent is ``new_latent`` with everything observable kept."""
    out = st.copy()
    if st.task == "spatial":
        cups = st.candidates()
        by_slot = {slot_of(st.bodies[c].pos[0]): c for c in cups}
        new_cup = by_slot[new_latent]
        out.progress["cube_cup"] = new_cup
        out.latent = new_latent
        cube = out.bodies[3]
        cube.pos = np.array([out.bodies[new_cup].pos[0], out.bodies[new_cup].pos[1], CUBE_HALF[2]])
        _update_cube_visibility(out)
    elif st.task == "episodic":
        out.script["target"] = new_latent
        out.latent = new_latent
    else:
        out.progress["stage"] = new_latent
        out.progress["completed"] = list(SPOON_ORDER[:new_latent])
        out.latent = new_latent
        out.phase = 3 * new_latent + out.progress["sub"]
    return out
