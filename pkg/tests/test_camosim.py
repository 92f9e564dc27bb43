import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aliasmem.camosim import (CHANCE, HOME, SimConfig, denormalize_pose, latent_concealed, normalize_pose,
                              permute_latent, read_dataset, record_dataset, record_episode, render, render_views,
                              reset, scripted_expert, step, write_dataset)
from aliasmem.camosim import raster as R
from aliasmem.camosim import world as W
from aliasmem.errors import ConfigError


def run_expert(task, seed, cfg=None):
    cfg = cfg or SimConfig()
    s = reset(task, seed, cfg)
    states = []
    for setpoint in scripted_expert(s, cfg):
        step(s, setpoint, cfg)
        states.append(s.copy())
    return s, states


def hold_until_act(s, cfg=None):
    while s.psi == 0:
        step(s, s.pose, cfg)
    return s


def cube_pixel_count(image_u8):
    normals = np.concatenate([np.eye(3), -np.eye(3)])
    shades = 0.55 + 0.45 * np.maximum(0.0, normals @ R.LIGHT)
    colors = {tuple(R.to_u8(W.CUBE_COLOR * s)) for s in shades}
    flat = image_u8.reshape(-1, 3)
    return sum(int(np.all(flat == np.array(c, dtype=np.uint8), axis=1).sum()) for c in colors)


def test_swap_trace():
    assert W.spatial_latent(0, [(0, 1), (1, 2)]) == 2
    assert W.spatial_latent(2, [(0, 1)]) == 2


def test_chance_levels():
    assert CHANCE["episodic"][0] == pytest.approx(1 / 3)
    assert CHANCE["sequential"][0] == pytest.approx(1 / 27)
    assert CHANCE["sequential"][1] == pytest.approx(1 / 9)


def test_unknown_task():
    with pytest.raises(ConfigError):
        reset("stacking", 0)


@pytest.mark.parametrize("task", ["episodic", "spatial", "sequential"])
def test_deterministic_replay(task):
    a, sa = run_expert(task, 5)
    b, sb = run_expert(task, 5)
    assert len(sa) == len(sb)
    for x, y in zip(sa[::7], sb[::7]):
        np.testing.assert_array_equal(x.pose, y.pose)
        np.testing.assert_array_equal(render(x, "front"), render(y, "front"))


def test_setpoint_at_current_pose_is_fixed_point():
    s = reset("sequential", 0)
    before = s.copy()
    step(s, s.pose)
    assert s.frame == before.frame + 1
    np.testing.assert_array_equal(s.pose, before.pose)
    for b0, b1 in zip(before.bodies, s.bodies):
        np.testing.assert_array_equal(b0.pos, b1.pos)


def test_displacement_cap():
    s = reset("sequential", 0)
    target = s.pose.copy()
    target[0] += 0.2
    n = 0
    while not np.allclose(s.ee, target[:3]):
        step(s, target)
        n += 1
    assert n == 4


def test_out_of_box_setpoint_clamped():
    s = reset("sequential", 0)
    target = s.pose.copy()
    target[2] = 5.0
    for _ in range(20):
        step(s, target)
    assert s.ee[2] == pytest.approx(W.WORKSPACE_HI[2]) and s.violations == 20


def test_grasp_and_lift_reveals_cube():
    s = hold_until_act(reset("spatial", 3))
    cup = s.progress["cube_cup"]
    assert s.bodies[3].hidden
    grasp = s.bodies[cup].pos + np.array([0.0, 0.0, s.bodies[cup].half[2]])
    sp = np.concatenate([grasp, W.QUAT_DOWN, [0.0]])
    for _ in range(30):
        step(s, sp)
    sp[7] = 1.0
    step(s, sp)
    assert s.held == cup
    sp[2] += 0.15
    for _ in range(10):
        step(s, sp)
    assert s.bodies[cup].pos[2] - s.bodies[cup].half[2] > W.LIFT_REVEAL
    assert not s.bodies[3].hidden
    assert s.outcome.manipulation_success and s.outcome.decision_success


def test_empty_scene_is_background():
    img = R.render_boxes(R.front_camera(), [], 16)
    np.testing.assert_array_equal(img, np.broadcast_to(R.BACKGROUND, (16, 16, 3)))


def test_hidden_cube_has_no_pixels():
    s = reset("spatial", 1)
    front, _ = render_views(s)
    assert cube_pixel_count(front) > 0  # visible before the cover
    s = hold_until_act(s)
    assert s.bodies[3].hidden
    for img in render_views(s):
        assert cube_pixel_count(img) == 0


@settings(max_examples=6)
@given(st.sampled_from(["episodic", "spatial", "sequential"]), st.integers(0, 10_000))
def test_act_frames_alias_across_latents(task, seed):
    _, states = run_expert(task, seed)
    acts = [s for s in states if latent_concealed(s)]
    assert acts
    for s in acts[:: max(1, len(acts) // 5)]:
        base = render_views(s)
        for k in range(3):
            other = render_views(permute_latent(s, k))
            assert base[0].tobytes() == other[0].tobytes()
            assert base[1].tobytes() == other[1].tobytes()


@pytest.mark.parametrize("task", ["episodic", "spatial", "sequential"])
def test_expert_always_succeeds(task):
    for seed in range(100):
        s, _ = run_expert(task, seed)
        assert s.outcome.manipulation_success and s.outcome.decision_success, (task, seed)


def test_episodic_expert_returns_home():
    s, _ = run_expert("episodic", 2)
    assert np.linalg.norm(s.ee - HOME) <= 0.03


def test_sequential_order():
    s, _ = run_expert("sequential", 4)
    assert [c for c, _ in s.outcome.stages] == [0, 1, 2]  # green, red, yellow


def test_decision_only_judged_after_manipulation():
    s = hold_until_act(reset("spatial", 0))
    for _ in range(20):
        step(s, s.pose)
        assert s.outcome.decision_success is None and not s.outcome.manipulation_success


def test_stride_arithmetic():
    cfg = SimConfig(stride=4)
    plan = scripted_expert(reset("episodic", 9, cfg), cfg)
    ep = record_episode("episodic", 9, cfg)
    # states 0..len(plan) inclusive, every 4th kept
    assert len(ep) == len(range(0, len(plan) + 1, 4))
    assert len(range(0, 400, 4)) == 100


def test_default_episode_count():
    import inspect
    assert inspect.signature(record_dataset).parameters["n_episodes"].default == 120


def test_dataset_roundtrip(tmp_path):
    ds = record_dataset("spatial", 2, 7)
    path = tmp_path / "d.amsim"
    write_dataset(path, ds)
    back = read_dataset(path)
    assert (back.task, back.image_size, back.stride) == (ds.task, ds.image_size, ds.stride)
    np.testing.assert_array_equal(back.workspace, ds.workspace)
    for view in ("front", "hand"):
        for a, b in zip(back.calibration[view], ds.calibration[view]):
            np.testing.assert_array_equal(np.asarray(a), np.asarray(b))
    for a, b in zip(back.episodes, ds.episodes):
        assert (a.seed, a.episode_latent) == (b.seed, b.episode_latent)
        for name in ("front", "hand", "proprio", "pose", "psi", "phase", "latent"):
            x, y = getattr(a, name), getattr(b, name)
            assert x.dtype == y.dtype
            np.testing.assert_array_equal(x, y)
    (tmp_path / "bad").write_bytes(b"x" * 64)
    with pytest.raises(ValueError):
        read_dataset(tmp_path / "bad")


def test_pose_normalization_roundtrip():
    pose = np.array([0.1, -0.2, 0.3, 0.0, 1.0, 0.0, 0.0, 1.0])
    x = normalize_pose(pose)
    assert np.all(np.abs(x[:3]) <= 1) and x[7] == 1.0
    np.testing.assert_allclose(denormalize_pose(x), pose, atol=1e-12)


def test_lifting_a_cup_ends_concealment():
    s, states = run_expert("spatial", 3)
    flags = [latent_concealed(x) for x in states]
    first_act = flags.index(True)
    last = len(flags) - 1 - flags[::-1].index(True)
    assert all(flags[first_act:last + 1]) and not any(flags[last + 1:])
    assert not latent_concealed(reset("spatial", 3))


def test_phase_indicator_ignores_latent():
    for seed in range(5):
        a = reset("spatial", seed)
        assert a.psi == 0
        hold_until_act(a)
        for k in range(3):
            assert permute_latent(a, k).psi == a.psi
