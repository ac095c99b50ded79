import math

import numpy as np
import pytest

from streamguide.env import (DEFAULT_GOAL, WORLD_SIZE, Chase, EpisodeResult,
                             Intercept, Obstacle, Oscillate, Static, World2D,
                             build_world, collision_check, generate_demos,
                             running_cost, running_cost_grad, step_obstacle,
                             surface_distance)


def obstacle_at(x, y, radius=25.0, behavior=None):
    kw = {"behavior": behavior} if behavior is not None else {}
    return Obstacle(position=np.array([x, y], dtype=float), radius=radius, **kw)


# ---------------------------------------------------------------------------
# behaviors
# ---------------------------------------------------------------------------

def test_static_obstacle_does_not_move():
    o = obstacle_at(100.0, 100.0)
    assert step_obstacle(o, np.zeros(2), 5) is o


def test_intercept_moves_linearly_then_halts():
    start = np.array([0.0, 0.0])
    target = np.array([100.0, 0.0])
    o = obstacle_at(0.0, 0.0, behavior=Intercept(start=start, target=target, t_int=50))
    mid = step_obstacle(o, np.zeros(2), 25)
    np.testing.assert_allclose(mid.position, [50.0, 0.0])
    np.testing.assert_allclose(mid.velocity, [2.0, 0.0])
    done = step_obstacle(o, np.zeros(2), 80)
    np.testing.assert_allclose(done.position, target)
    np.testing.assert_allclose(done.velocity, [0.0, 0.0])


def test_oscillate_closed_form_and_bounds():
    anchor = np.array([50.0, 50.0])
    perp = np.array([0.0, 1.0])
    beh = Oscillate(anchor=anchor, perp=perp, amplitude=40.0, freq=0.03)
    o = obstacle_at(50.0, 50.0, behavior=beh)
    for k in range(0, 120, 7):
        pos = step_obstacle(o, np.zeros(2), k).position
        expect = anchor + 40.0 * math.sin(2 * math.pi * 0.03 * k) * perp
        np.testing.assert_allclose(pos, expect, atol=1e-12)
        assert abs(pos[1] - 50.0) <= 40.0 + 1e-12


def test_chase_velocity_update_from_rest():
    # agent 10 units away along +x; v' = 0.6*0 + 0.4*3*(1,0) = (1.2, 0)
    o = obstacle_at(0.0, 0.0, behavior=Chase(alpha=0.4, v_max=3.0))
    stepped = step_obstacle(o, np.array([10.0, 0.0]), 1)
    np.testing.assert_allclose(stepped.velocity, [1.2, 0.0], atol=1e-12)
    np.testing.assert_allclose(stepped.position, [1.2, 0.0], atol=1e-12)


def test_chase_speed_is_bounded_by_momentum_mix():
    o = obstacle_at(0.0, 0.0, behavior=Chase())
    agent = np.array([300.0, 200.0])
    for k in range(1, 60):
        o = step_obstacle(o, agent, k)
        assert np.linalg.norm(o.velocity) <= 3.0 + 1e-9


def test_chase_agent_at_center_keeps_velocity():
    o = Obstacle(position=np.zeros(2), radius=10.0, velocity=np.array([1.0, 0.0]),
                 behavior=Chase())
    stepped = step_obstacle(o, np.zeros(2), 1)
    np.testing.assert_allclose(stepped.velocity, [1.0, 0.0])


def test_step_obstacle_rejects_negative_index():
    with pytest.raises(ValueError):
        step_obstacle(obstacle_at(0, 0), np.zeros(2), -1)


# ---------------------------------------------------------------------------
# costs and distances
# ---------------------------------------------------------------------------

def test_running_cost_values():
    obs = [obstacle_at(0.0, 0.0)]
    sigma = 40.0
    assert running_cost(np.array([0.0, 0.0]), obs, sigma) == pytest.approx(1.0)
    assert running_cost(np.array([sigma, 0.0]), obs, sigma) == pytest.approx(math.exp(-0.5))
    two = [obstacle_at(0.0, 0.0), obstacle_at(sigma, 0.0)]
    assert running_cost(np.array([0.0, 0.0]), two, sigma) == pytest.approx(1.0 + math.exp(-0.5))


def test_running_cost_grad_matches_fd():
    obs = [obstacle_at(10.0, -5.0), obstacle_at(60.0, 40.0)]
    x = np.array([25.0, 8.0])
    g = running_cost_grad(x, obs, 40.0)
    h = 1e-6
    for i in range(2):
        up, dn = x.copy(), x.copy()
        up[i] += h
        dn[i] -= h
        fd = (running_cost(up, obs, 40.0) - running_cost(dn, obs, 40.0)) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-6)


def test_collision_and_surface_distance():
    obs = [obstacle_at(0.0, 0.0, radius=25.0)]
    assert collision_check(np.array([24.0, 0.0]), obs)
    assert not collision_check(np.array([26.0, 0.0]), obs)
    assert collision_check(np.array([26.0, 0.0]), obs, margin=2.0)
    assert surface_distance(np.array([30.0, 0.0]), obs) == pytest.approx(5.0)
    assert surface_distance(np.array([30.0, 0.0]), []) == math.inf


# ---------------------------------------------------------------------------
# world mechanics
# ---------------------------------------------------------------------------

def test_world_clamps_step_and_bounds():
    w = World2D(agent=np.array([10.0, 10.0]), goal=np.array([400.0, 400.0]),
                obstacles=[], max_step=60.0)
    w.execute(np.array([10.0 + 1000.0, 10.0]))
    assert w.agent[0] == pytest.approx(70.0)
    w2 = World2D(agent=np.array([5.0, 5.0]), goal=np.array([400.0, 400.0]),
                 obstacles=[], max_step=60.0)
    w2.execute(np.array([-100.0, -100.0]))
    assert np.all(w2.agent >= 0.0)


def test_world_collision_latches_and_min_distance_tracks():
    w = World2D(agent=np.array([100.0, 0.0]), goal=np.array([400.0, 0.0]),
                obstacles=[obstacle_at(160.0, 0.0)], max_step=60.0)
    w.execute(np.array([160.0, 0.0]))
    assert w.collided
    assert w.min_obstacle_distance < 0
    w.execute(np.array([400.0, 0.0]))
    assert w.collided  # latched even after leaving the obstacle


def test_world_done_on_goal_or_budget():
    w = World2D(agent=np.array([100.0, 100.0]), goal=np.array([110.0, 100.0]),
                obstacles=[], goal_tolerance=15.0)
    assert w.done  # already inside the goal tolerance
    w2 = World2D(agent=np.array([0.0, 0.0]), goal=np.array([500.0, 500.0]),
                 obstacles=[], t_env=2)
    w2.execute(np.array([1.0, 0.0]))
    w2.execute(np.array([2.0, 0.0]))
    assert w2.done


def test_world_reward_clip_and_definition():
    w = World2D(agent=np.array([0.0, 0.0]), goal=np.array([100.0, 0.0]), obstacles=[])
    w.execute(np.array([50.0, 0.0]))
    assert w.reward() == pytest.approx(0.5)


def test_episode_result_invariant():
    with pytest.raises(ValueError):
        EpisodeResult(success=True, collided=True, final_goal_distance=0.0,
                      min_obstacle_distance=0.0, steps=1, reward=1.0,
                      latency_ms=np.zeros(1))


# ---------------------------------------------------------------------------
# scripted worlds and demos
# ---------------------------------------------------------------------------

def test_build_world_deterministic_and_scripted():
    a = build_world("static", 7)
    b = build_world("static", 7)
    np.testing.assert_array_equal(a.agent, b.agent)
    for oa, ob in zip(a.obstacles, b.obstacles):
        np.testing.assert_array_equal(oa.position, ob.position)
    assert len(a.obstacles) == 3
    assert all(isinstance(o.behavior, Static) for o in a.obstacles)
    assert isinstance(build_world("chase", 0).obstacles[0].behavior, Chase)
    assert isinstance(build_world("intercept", 0).obstacles[0].behavior, Intercept)
    assert isinstance(build_world("oscillate", 0).obstacles[0].behavior, Oscillate)
    assert build_world("empty", 0).obstacles == []
    with pytest.raises(ValueError):
        build_world("bogus", 0)


def test_build_world_static_obstacles_block_the_path():
    # obstacles sit on the start->goal segment so the straight path collides
    for seed in range(5):
        w = build_world("static", seed)
        direction = (w.goal - w.agent) / np.linalg.norm(w.goal - w.agent)
        for o in w.obstacles:
            along = float(np.dot(o.position - w.agent, direction))
            lateral = float(np.linalg.norm(o.position - w.agent - along * direction))
            assert 0 < along < np.linalg.norm(w.goal - w.agent)
            assert lateral <= 10.0 + 1e-9


def test_generate_demos_shapes_and_goal_convergence():
    demos = generate_demos(8, 3, steps=32)
    assert len(demos) == 8
    for d in demos:
        assert d.xi.shape == (32, 2)
        assert np.all(d.xi >= 0.0) and np.all(d.xi <= WORLD_SIZE)
        assert np.linalg.norm(d.xi[-1] - DEFAULT_GOAL) <= 15.0
        np.testing.assert_array_equal(d.context, np.concatenate([d.xi[0], DEFAULT_GOAL]))
    again = generate_demos(8, 3, steps=32)
    np.testing.assert_array_equal(demos[0].xi, again[0].xi)


def test_generate_demos_validation():
    with pytest.raises(ValueError):
        generate_demos(0, 0)
