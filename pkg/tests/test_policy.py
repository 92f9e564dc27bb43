import numpy as np
import pytest

from aliasmem.errors import DivergenceError
from aliasmem.numerics import Tensor, grad_check
from aliasmem.policy import PolicyConfig, VelocityNet, euler_integrate, flow_loss, make_flow_sample, sample


def small_net(seed=0, width=16, d_cond=6, **kw):
    cfg = PolicyConfig(width=width, depth=2, heads=2, **kw)
    return VelocityNet(cfg, d_cond, np.random.default_rng(seed))


class ZeroNoise:
    def standard_normal(self, shape):
        return np.zeros(shape)


def test_flow_sample_midpoint_from_zero_noise():
    v = np.random.default_rng(0).normal(size=(8, 8))
    s = make_flow_sample(v, ZeroNoise(), tau=0.5)
    np.testing.assert_array_equal(s.x_tau, v / 2)
    np.testing.assert_array_equal(s.u, v)


def test_flow_sample_endpoints():
    v = np.random.default_rng(0).normal(size=(8, 8))
    s0 = make_flow_sample(v, np.random.default_rng(1), tau=0.0)
    np.testing.assert_array_equal(s0.x_tau, s0.x0)
    s1 = make_flow_sample(v, np.random.default_rng(1), tau=1.0)
    np.testing.assert_array_equal(s1.x_tau, v)
    np.testing.assert_array_equal(s1.u, v - s1.x0)


def test_interpolant_mean_monte_carlo():
    rng = np.random.default_rng(2)
    x1 = np.array([[0.4, -1.2], [2.0, 0.1]])
    tau = 0.3
    s = make_flow_sample(np.broadcast_to(x1, (10_000, 2, 2)).copy(), rng, tau=np.full(10_000, tau))
    se = (1 - tau) / 100.0
    assert np.all(np.abs(s.x_tau.mean(0) - tau * x1) <= 3 * se)


def test_flow_sample_rejects_non_finite():
    with pytest.raises(ValueError):
        make_flow_sample(np.array([[np.nan]]), np.random.default_rng(0))


def test_flow_loss_examples(f64):
    rng = np.random.default_rng(3)
    u = rng.normal(size=(2, 8, 8))
    assert flow_loss(Tensor(u), u, np.ones((2, 8), bool)).item() == 0.0
    assert flow_loss(Tensor(u + 1.0), u, np.zeros((2, 8), bool)).item() == 0.0
    mask = np.zeros((2, 8), bool)
    mask[1, 3] = True
    pred = u.copy()
    pred[1, 3, 0] += 1.0
    assert flow_loss(Tensor(pred), u, mask).item() == pytest.approx(1 / 8)


def test_masked_steps_do_not_matter(f64):
    rng = np.random.default_rng(4)
    u, pred = rng.normal(size=(2, 8, 8)), rng.normal(size=(2, 8, 8))
    mask = np.ones((2, 8), bool)
    mask[:, 6:] = False
    base = flow_loss(Tensor(pred), u, mask).item()
    dup = pred.copy()
    dup[:, 6] = dup[:, 2]
    assert flow_loss(Tensor(dup), u, mask).item() == base


def test_zero_init_velocity_is_output_bias():
    net = small_net(horizon=8)
    rng = np.random.default_rng(5)
    c = net.condition(Tensor(rng.normal(size=(3, 6)).astype(np.float32)))
    out = net(rng.normal(size=(3, 8, 8)), rng.uniform(size=3), c)
    assert out.shape == (3, 8, 8)
    np.testing.assert_array_equal(out.data, np.broadcast_to(net.out.bias.data, out.shape))


def test_velocity_gradient(f64):
    rng = np.random.default_rng(6)
    net = small_net(horizon=4)
    net.astype(np.float64)
    for p in net.parameters():
        if not np.any(p.data):
            p.data = rng.normal(0.0, 0.2, size=p.shape)
    h = rng.normal(size=(2, 6))
    fs = make_flow_sample(rng.normal(size=(2, 4, 8)), rng)
    mask = np.ones((2, 4), bool)
    mask[1, 3] = False

    def loss():
        return flow_loss(net(fs.x_tau, fs.tau, net.condition(Tensor(h))), fs.u, mask)

    rep = grad_check(loss, net.parameters(), epsilon=1e-4, max_entries=6)
    assert rep.worst < 1e-4, rep.max_rel_error


def test_euler_constant_field():
    x0 = np.random.default_rng(7).normal(size=(2, 4, 3))
    c = np.random.default_rng(8).normal(size=(4, 3))
    for steps in (1, 7, 50):
        np.testing.assert_allclose(euler_integrate(lambda x, t: np.broadcast_to(c, x.shape), x0, steps),
                                   x0 + c, atol=1e-12)


def test_euler_linear_decay():
    x0 = np.random.default_rng(9).normal(size=(4, 3))
    got = euler_integrate(lambda x, t: -x, x0, 50)
    np.testing.assert_allclose(got, x0 * (49 / 50) ** 50, atol=1e-9)
    assert (49 / 50) ** 50 == pytest.approx(0.3642, abs=1e-4)


def test_euler_validation():
    with pytest.raises(ValueError):
        euler_integrate(lambda x, t: x, np.zeros((1, 1)), 0)
    with pytest.raises(DivergenceError):
        euler_integrate(lambda x, t: np.full_like(x, np.inf), np.zeros((1, 1)), 3)


def test_default_step_count():
    assert PolicyConfig().steps == 50


def test_sampler_depends_only_on_seed_condition_parameters():
    net = small_net(horizon=4)
    rng = np.random.default_rng(10)
    for p in net.parameters():
        if not np.any(p.data):
            p.data = rng.normal(0.0, 0.2, size=p.shape).astype(p.dtype)
    h = rng.normal(size=(1, 6)).astype(np.float32)
    draw = lambda seed, hh: sample(net, net.condition(Tensor(hh)), np.random.default_rng(seed), steps=5)
    base = draw(0, h)
    np.testing.assert_array_equal(draw(0, h), base)
    assert not np.array_equal(draw(1, h), base)
    assert not np.array_equal(draw(0, h + 0.5), base)
    net.out.bias.data += 0.1
    assert not np.array_equal(draw(0, h), base)
