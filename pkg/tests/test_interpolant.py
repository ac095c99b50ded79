import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from streamguide import tape as tp
from streamguide.interpolant import (Demonstration, Normalizer, PolicyNets,
                                     StreamingPolicy, TrainConfig,
                                     sample_training_point, sfp_velocity,
                                     time_features, train, velocity_loss)
from streamguide.schedules import ScheduleSet
from streamguide.validation import check_random_state


def line_demo(start=(0.0, 0.0), end=(1.0, 2.0), steps=16):
    xi = np.linspace(start, end, steps)
    return Demonstration.from_path(xi, np.concatenate([xi[0], xi[-1]]))


def test_demonstration_velocity_is_path_derivative():
    demo = line_demo()
    # constant-velocity line: xi_dot == end - start everywhere
    np.testing.assert_allclose(demo.xi_dot, np.tile([1.0, 2.0], (16, 1)), atol=1e-12)
    xi_t, xd_t = demo.at(0.37)
    np.testing.assert_allclose(xi_t, [0.37, 0.74], atol=1e-12)
    np.testing.assert_allclose(xd_t, [1.0, 2.0], atol=1e-12)


def test_demonstration_at_endpoints():
    demo = line_demo()
    np.testing.assert_array_equal(demo.at(0.0)[0], demo.xi[0])
    np.testing.assert_array_equal(demo.at(1.0)[0], demo.xi[-1])


def test_demonstration_requires_two_points():
    with pytest.raises(ValueError):
        Demonstration.from_path(np.zeros((1, 2)), np.zeros(2))


def test_normalizer_maps_extremes_to_unit_box():
    pts = np.array([[0.0, 10.0], [4.0, 30.0], [2.0, 20.0]])
    nm = Normalizer.from_points(pts)
    np.testing.assert_allclose(nm.norm([0.0, 10.0]), [-1.0, -1.0])
    np.testing.assert_allclose(nm.norm([4.0, 30.0]), [1.0, 1.0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=2))
def test_normalizer_roundtrip(pt):
    nm = Normalizer(lo=np.array([-120.0, -120.0]), hi=np.array([150.0, 150.0]))
    np.testing.assert_allclose(nm.denorm(nm.norm(pt)), pt, atol=1e-9)


def test_normalizer_rejects_degenerate_span():
    with pytest.raises(ValueError):
        Normalizer.from_points(np.array([[1.0, 2.0], [1.0, 3.0]]))


def test_sfp_velocity_hand_example():
    demo = line_demo()
    # a offset from the tube by delta: v = xi_dot - k * delta
    xi_t, _ = demo.at(0.5)
    v = sfp_velocity(xi_t + np.array([0.2, -0.1]), 0.5, demo, k_gain=5.0)
    np.testing.assert_allclose(v, [1.0 - 5.0 * 0.2, 2.0 + 5.0 * 0.1], atol=1e-12)


def test_sample_training_point_construction():
    demo = line_demo()
    sched = ScheduleSet()
    t, eps, z = 0.5, np.array([1.0, -1.0]), np.array([0.5, 0.5])
    out = sample_training_point(demo, 0, sched, t=t, eps=eps, z=z)
    xi_t, xd_t = demo.at(t)
    a_sfp = xi_t + sched.sigma(t) * eps
    np.testing.assert_allclose(out["a_t"], a_sfp + sched.gamma(t) * z, atol=1e-12)
    # velocity target is evaluated at the tube point, not the noised point
    np.testing.assert_allclose(out["v_target"],
                               xd_t - sched.k_gain * (a_sfp - xi_t), atol=1e-12)
    np.testing.assert_array_equal(out["z"], z)


def test_time_features_shape_and_endpoints():
    f0, f1 = time_features(0.0), time_features(1.0)
    assert f0.shape == (5,)
    np.testing.assert_allclose(f0[1:], [0.0, 1.0, 0.0, 1.0], atol=1e-12)
    np.testing.assert_allclose(f1[1:], [0.0, 1.0, 0.0, 1.0], atol=1e-9)


def test_policy_nets_dim_validation():
    with pytest.raises(ValueError):
        PolicyNets(v_net=tp.MlpParams.create([4, 8, 2], check_random_state(0)),
                   eta_net=tp.MlpParams.create([4, 8, 2], check_random_state(0)),
                   act_dim=2, ctx_dim=4)


def test_velocity_loss_param_grad_matches_fd():
    rng = check_random_state(3)
    net = tp.MlpParams.create([4, 5, 2], rng)
    x = rng.standard_normal((6, 4))
    target = rng.standard_normal((6, 2))

    g = tp.Tape()
    leaves = tp.mlp_leaves(g, net)
    x_node = g.leaf(x)
    pred = tp.mlp_forward(g, net, x_node, leaves)
    loss = tp.scale(tp.squared_norm(tp.sub(pred, g.leaf(target))), 1.0 / 6)
    tp.backward(g, loss)
    grad = np.concatenate([arr.grad.ravel() for pair in leaves for arr in pair])

    def loss_at(theta):
        probe = tp.MlpParams.create([4, 5, 2], check_random_state(3))
        probe.load_flat(theta)
        return np.sum((tp.mlp_eval(probe, x) - target) ** 2) / 6

    theta = net.flat()
    fd = np.zeros_like(theta)
    h = 1e-6
    for i in range(theta.size):
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        fd[i] = (loss_at(up) - loss_at(dn)) / (2 * h)
    np.testing.assert_allclose(grad, fd, rtol=1e-4, atol=1e-8)


def test_velocity_loss_rejects_empty_batch():
    g = tp.Tape()
    net = tp.MlpParams.create([2, 3, 1], check_random_state(0))
    with pytest.raises(ValueError):
        velocity_loss(g, net, g.leaf(np.zeros((0, 2))), np.zeros((0, 1)))


def test_train_is_seed_deterministic():
    demos = [line_demo(), line_demo(end=(2.0, 1.0))]
    cfg = TrainConfig(epochs=3, batch_size=8, batches_per_epoch=2, seed=42,
                      learning_rate=1e-3)
    nets_a, hist_a = train(demos, cfg, ScheduleSet(), hidden_width=8, hidden_layers=1)
    nets_b, hist_b = train(demos, cfg, ScheduleSet(), hidden_width=8, hidden_layers=1)
    np.testing.assert_array_equal(nets_a.flat(), nets_b.flat())
    assert hist_a == hist_b


def test_train_zero_lr_is_noop():
    demos = [line_demo()]
    cfg = TrainConfig(epochs=2, batch_size=4, batches_per_epoch=1, seed=0,
                      learning_rate=0.0)
    rng = check_random_state(0)
    init = PolicyNets.create(2, 4, hidden_width=8, hidden_layers=1, rng=rng)
    before = init.flat().copy()
    nets, _ = train(demos, cfg, ScheduleSet(), nets=init)
    np.testing.assert_array_equal(nets.flat(), before)


def test_train_loss_decreases_on_linear_demos():
    demos = [line_demo(start=(s, 0.0)) for s in (-1.0, -0.5, 0.0, 0.5)]
    cfg = TrainConfig(epochs=60, batch_size=32, batches_per_epoch=4, seed=0,
                      learning_rate=3e-3)
    _, hist = train(demos, cfg, ScheduleSet(), hidden_width=16, hidden_layers=1)
    first = hist[0][1] + hist[0][2]
    last = hist[-1][1] + hist[-1][2]
    assert last < 0.5 * first


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_streaming_policy_estimator_interface():
    policy = StreamingPolicy(hidden_width=16, hidden_layers=1)
    params = policy.get_params()
    assert params["hidden_width"] == 16
    policy.set_params(hidden_width=8)
    assert policy.hidden_width == 8
    with pytest.raises(ValueError):
        policy.set_params(not_a_param=1)


def test_streaming_policy_fit_sets_state():
    demos = [line_demo(end=(400.0, 300.0)), line_demo(start=(20.0, 80.0), end=(380.0, 290.0))]
    cfg = TrainConfig(epochs=2, batch_size=8, batches_per_epoch=1, seed=0)
    policy = StreamingPolicy(train_config=cfg, hidden_width=8, hidden_layers=1).fit(demos)
    assert hasattr(policy, "nets_") and hasattr(policy, "normalizer_")
    h = policy.context_for(np.array([20.0, 80.0]), np.array([380.0, 290.0]))
    assert h.shape == (4,)
    assert np.all(np.abs(h) <= 1.0 + 1e-9)
