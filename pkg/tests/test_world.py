import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import box, disc, far_robot, robot, state_of
from tapush import _kernel
from tapush.scenes import clearance
from tapush.world import (Control, ControlSequence, Goal, InvalidStateError, NoiseModel,
                          ObjectState, PhysicsConfig, RobotGeometry, RobotState, TableSpec,
                          WorldState, grasped, in_goal, off_table)

G = 9.81


# -- value types -------------------------------------------------------------


def test_robot_rotation_wrapped_and_opening_clamped():
    r = RobotState([0.0, 0.0, 3 * math.pi, -0.2])
    assert -math.pi < r.theta <= math.pi
    assert r.theta == pytest.approx(math.pi)
    assert r.opening == 0.0


@pytest.mark.parametrize("kw", [{"mass": 0.0}, {"friction": -0.1}, {"dims": (0.0,)},
                                {"dims": (0.05, 0.05)}, {"shape": "cone"}])
def test_object_invariants_rejected(kw):
    args = {"shape": "disc", "dims": (0.05,), "mass": 0.5, "friction": 0.4,
            "pose": np.zeros(3), **kw}
    with pytest.raises(InvalidStateError):
        ObjectState(**args)


def test_state_arrays_are_read_only():
    s = state_of(robot(), disc(0, 0.3))
    with pytest.raises(ValueError):
        s.objects[0].pose[0] = 1.0
    with pytest.raises(ValueError):
        s.robot.q[0] = 1.0


def test_control_norm_and_sequence_access():
    U = ControlSequence([[0.3, 0.4, 0, 0], [0, 0, 0, 0], [1, 0, 0, 0]])
    assert U[0].norm == pytest.approx(0.5)
    assert len(U[1:]) == 2
    assert U[1:][1] == U[2]
    assert len(U.padded(5)) == 5 and not U.padded(5).velocities[3:].any()


def test_safe_zone_strictly_inside_table(table):
    assert table.in_safe_zone((0.0, 0.3))
    assert not table.in_safe_zone((0.27, 0.3))
    assert table.contains((0.27, 0.3))
    with pytest.raises(InvalidStateError):
        TableSpec.rectangle(0.08, 0.6, safe_margin=0.05)


# -- deterministic step ------------------------------------------------------


def test_zero_control_without_contact_is_fixed_point(world):
    s = state_of(robot(0, 0.05), disc(0.1, 0.4))
    out = world.step_deterministic(s, Control(np.zeros(4)))
    assert out.robot == s.robot and out.objects == s.objects
    assert out.time == pytest.approx(1.0)


def test_robot_pushes_disc_forward_without_deep_penetration(world):
    rob = robot(-0.2, 0.3, theta=0.0)
    s = state_of(rob, disc(-0.1, 0.3))
    nxt, info = world.advance(s, Control([0.1, 0, 0, 0], 0.5), 0.5)
    assert nxt.objects[0].pose[0] > -0.1 + 0.01
    assert info.max_penetration <= world.config.slop


def test_step_rejects_non_finite(world):
    s = state_of(robot(), disc(0, 0.3))
    with pytest.raises(InvalidStateError):
        world.step_deterministic(s, Control([math.nan, 0, 0, 0]))
    bad = state_of(robot(), disc(0, 0.3, vel=(math.inf, 0, 0)))
    with pytest.raises(InvalidStateError):
        world.step_deterministic(bad, Control(np.zeros(4)))


def test_speed_limits_clamp_commands(world):
    s = state_of(robot(0, 0.0, theta=0.0))
    out = world.step_deterministic(s, Control([5.0, -5.0, 0, 0]))
    assert out.robot.x == pytest.approx(1.0)
    assert out.robot.y == pytest.approx(-1.0)


@pytest.mark.parametrize("v,mu", [(0.3, 0.2), (0.5, 0.4), (0.8, 0.6), (0.4, 0.3)])
def test_friction_stopping_distance(big_world, v, mu):
    s = state_of(far_robot(), disc(0.0, 0.0, 0.05, friction=mu, vel=(v, 0, 0)))
    out = big_world.settle(s, 5.0)
    expected = v * v / (2 * mu * G)
    assert out.objects[0].speed()[0] == 0.0
    assert out.objects[0].pose[0] == pytest.approx(expected, rel=0.10)


def test_snapshot_isolation(world):
    s = state_of(robot(-0.2, 0.3, theta=0.0), disc(-0.1, 0.3))
    before = (s.robot.q.copy(), s.objects[0].pose.copy(), s.objects[0].velocity.copy())
    copy = WorldState(s.robot, s.objects, s.time)
    world.step_deterministic(copy, Control([0.2, 0, 0, 0]))
    assert np.array_equal(s.robot.q, before[0])
    assert np.array_equal(s.objects[0].pose, before[1])
    assert np.array_equal(s.objects[0].velocity, before[2])


def _random_scene(rng, n_obj):
    objs = []
    while len(objs) < n_obj:
        x, y = rng.uniform(-0.2, 0.2), rng.uniform(0.15, 0.5)
        if rng.random() < 0.5:
            o = disc(x, y, rng.uniform(0.03, 0.07), friction=rng.uniform(0.2, 0.6))
        else:
            o = box(x, y, rng.uniform(0.03, 0.07), rng.uniform(0.03, 0.07),
                    rng.uniform(-math.pi, math.pi), friction=rng.uniform(0.2, 0.6))
        if all(clearance(o, p) >= 0 for p in objs):
            objs.append(o)
    while True:
        theta = rng.uniform(-math.pi, math.pi)
        rob = robot(rng.uniform(-0.2, 0.2), rng.uniform(0.0, 0.1), theta, rng.uniform(0, 0.14))
        if all(clearance(o, p) >= 0 for o in objs for p in robot_boxes(rob)):
            return state_of(rob, *objs)


def robot_boxes(rob):
    """Palm and fingers as box objects, for overlap checks."""
    parts = np.empty((3, 5))
    _kernel.robot_parts(np.array(rob.q), RobotGeometry().as_array(), parts)
    return [box(p[0], p[1], p[2], p[3], p[4]) for p in parts]


def test_deterministic_step_is_pure(world):
    rng = np.random.default_rng(0)
    for _ in range(100):
        s = _random_scene(rng, int(rng.integers(1, 4)))
        u = Control(rng.uniform(-0.3, 0.3, 4), 0.2)
        first = world.step_deterministic(s, u)
        for _ in range(9):
            assert world.step_deterministic(s, u) == first


# -- stochastic step ---------------------------------------------------------


def test_b_zero_is_bit_identical(world):
    rng = np.random.default_rng(1)
    for _ in range(20):
        s = _random_scene(rng, 3)
        u = Control(rng.uniform(-0.3, 0.3, 4), 0.5)
        det = world.step_deterministic(s, u)
        sto = world.step_stochastic(s, u, NoiseModel(0.0), np.random.default_rng(7))
        assert sto == det


def test_stochastic_step_reproducible_with_seed(world):
    s = state_of(robot(-0.2, 0.3, theta=0.0), disc(-0.1, 0.3))
    u = Control([0.2, 0.0, 0, 0])
    a = world.step_stochastic(s, u, NoiseModel(0.1), np.random.default_rng(3))
    b = world.step_stochastic(s, u, NoiseModel(0.1), np.random.default_rng(3))
    c = world.step_stochastic(s, u, NoiseModel(0.1), np.random.default_rng(4))
    assert a == b and a != c


def test_stochastic_step_requires_rng(world):
    s = state_of(robot(), disc(0, 0.3))
    with pytest.raises(InvalidStateError):
        world.advance(s, Control([0.1, 0, 0, 0]), 1.0, noise=NoiseModel(0.1))


def injected_robot_noise(world, b, norm, samples=100_000):
    """Per-sub-step robot velocity noise read back from full-rate frames."""
    u = np.array([norm, 0.0, 0.0, 0.0])
    s = state_of(RobotState([0.0, -5.0, 0.0, 0.07]))
    duration = samples // 4 * world.config.substep
    _, info = world.advance(s, Control(u, duration), duration, noise=NoiseModel(b),
                            rng=np.random.default_rng(11), record_every=1)
    qd = info.frames[:, 5:9]
    return (qd - u).ravel()


@pytest.mark.parametrize("norm", [0.1, 0.2, 0.4])
def test_injected_noise_std_matches_b_times_norm(big_world, norm):
    b = 0.05
    eps = injected_robot_noise(big_world, b, norm)
    assert eps.size == 100_000
    assert abs(eps.mean()) < 4 * b * norm / math.sqrt(eps.size)
    assert eps.std() == pytest.approx(b * norm, rel=0.02)


def test_noise_scales_linearly(big_world):
    stds = [injected_robot_noise(big_world, 0.075, n).std() for n in (0.1, 0.2, 0.4)]
    assert stds[1] / stds[0] == pytest.approx(2.0, rel=0.05)
    assert stds[2] / stds[0] == pytest.approx(4.0, rel=0.05)


def test_object_channels_get_the_same_noise(big_world):
    b, norm = 0.05, 0.2
    s = state_of(RobotState([0.0, -9.0, 0.0, 0.07]), disc(0.0, 0.0, friction=0.0))
    dur = 10_000 * big_world.config.substep
    _, info = big_world.advance(s, Control([norm, 0, 0, 0], dur), dur, noise=NoiseModel(b),
                                rng=np.random.default_rng(5), record_every=1)
    vel = info.frames[:, 12:15]
    eps = np.diff(vel, axis=0).ravel()
    assert eps.std() == pytest.approx(b * norm, rel=0.05)


def test_no_noise_during_settle(world):
    s = state_of(robot(), disc(0, 0.3, vel=(0.2, 0, 0)))
    a = world.advance(s, None, 1.0, noise=NoiseModel(0.1), rng=np.random.default_rng(0),
                      settle=True)[0]
    assert a == world.settle(s, 1.0)


# -- settle ------------------------------------------------------------------


def test_settle_at_rest_returns_input(world):
    s = state_of(robot(), disc(0, 0.3))
    out, info = world.advance(s, None, 2.0, settle=True)
    assert out is s and info.substeps == 0


def test_settle_zero_time_is_identity(world):
    s = state_of(robot(), disc(0, 0.3, vel=(0.1, 0, 0)))
    assert world.settle(s, 0.0) == s


def test_settle_brings_objects_to_rest(world):
    s = state_of(robot(), disc(0, 0.3, vel=(0.3, 0.1, 2.0)), box(-0.1, 0.2, vel=(0, 0.2, -1)))
    out = world.settle(s, 3.0)
    cfg = world.config
    for o in out.objects:
        lin, ang = o.speed()
        assert lin < cfg.rest_linear and ang < cfg.rest_angular


# -- physics properties --------------------------------------------------------


@settings(max_examples=60)
@given(seed=st.integers(0, 2**32 - 1), n_obj=st.integers(1, 4))
def test_zero_control_energy_non_increasing(world, seed, n_obj):
    rng = np.random.default_rng(seed)
    s = _random_scene(rng, n_obj)
    objs = [ObjectState(o.shape, o.dims, o.mass, o.friction, o.pose,
                        velocity=np.append(rng.uniform(-0.5, 0.5, 2), rng.uniform(-3, 3)))
            for o in s.objects]
    s = WorldState(s.robot, tuple(objs))
    _, info = world.advance(s, None, 1.0, record_every=1)
    live_energy = []
    for row in info.frames:
        e = 0.0
        for i, o in enumerate(objs):
            v = row[12 + 7 * i: 15 + 7 * i]
            e += 0.5 * o.mass * (v[0] ** 2 + v[1] ** 2) + 0.5 * o.inertia * v[2] ** 2
        live_energy.append(e)
    e = np.array([s.kinetic_energy()] + live_energy)
    assert np.all(np.diff(e) <= 1e-9)
    assert info.energy_gain <= 1e-9


def _overlap(a, b):
    return max(0.0, -clearance(a, b))


def test_penetration_bound_random_contact_suite(world):
    rng = np.random.default_rng(2024)
    slop = world.config.slop
    worst = 0.0
    for case in range(1000):
        s = _random_scene(rng, int(rng.integers(1, 4)))
        # aim the robot at the first object so most cases involve contact
        target = s.objects[0].position
        d = target - np.array([s.robot.x, s.robot.y])
        theta = math.atan2(d[1], d[0])
        speed = rng.uniform(0.05, 1.0)
        rob = RobotState([s.robot.x, s.robot.y, theta, s.robot.opening])
        s = WorldState(rob, s.objects)
        u = Control([speed * math.cos(theta), speed * math.sin(theta),
                     rng.uniform(-1, 1), rng.uniform(-0.1, 0.1)], 0.3)
        out, info = world.advance(s, u, 0.3)
        worst = max(worst, info.max_penetration)
        live = [o for o in out.objects if not o.fallen]
        for i in range(len(live)):
            for j in range(i):
                assert _overlap(live[i], live[j]) <= slop + 1e-6, case
            for part in robot_boxes(out.robot):
                assert _overlap(live[i], part) <= slop + 1e-6, case
    assert worst <= slop + 1e-9


def test_object_falls_off_edge_and_stays_fallen(world):
    s = state_of(robot(), disc(0.25, 0.3, vel=(1.5, 0, 0)))
    out = world.settle(s, 2.0)
    o = out.objects[0]
    assert o.fallen and off_table(o, world.table)
    again = world.step_deterministic(out, Control([0, 0, 0, 0]))
    assert again.objects[0].fallen


def test_transition_records_fall_distance(world):
    s = state_of(robot(), disc(0.25, 0.3, vel=(1.5, 0, 0)))
    end, n_sub, _ = world.transition(s, Control(np.zeros(4), 0.2), 1.0)
    o = end.objects[0]
    assert o.fallen and o.fall_push == pytest.approx(np.hypot(*(o.position - (0.25, 0.3))))
    assert n_sub > 0


# -- predicates ----------------------------------------------------------------


def test_off_table(table):
    assert not off_table(disc(0.0, 0.3), table)
    assert off_table(disc(0.31, 0.3), table)
    assert not off_table(disc(0.3, 0.3), table)  # closed region


def test_in_goal():
    t = TableSpec.rectangle(0.6, 0.6, goal=Goal((0.0, 0.25), 0.125))
    assert in_goal(disc(0.0, 0.25), t)
    assert in_goal(disc(0.0, 0.375), t)  # exactly R_g away
    assert not in_goal(disc(0.0, 0.385), t)
    with pytest.raises(InvalidStateError):
        in_goal(disc(0, 0.3), TableSpec.rectangle(0.6, 0.6))


def test_grasped():
    geo = RobotGeometry()
    rob = robot(0.0, 0.0, math.pi / 2, 0.12)
    mid = geo.palm_half_depth + geo.finger_half_length
    assert grasped(state_of(rob, disc(0.0, mid, 0.04)), 0, geo)
    assert not grasped(state_of(rob, disc(0.0, -0.1, 0.04)), 0, geo)
    assert not grasped(state_of(robot(0, 0, math.pi / 2, 0.06), disc(0.0, mid, 0.04)), 0, geo)
    with pytest.raises(IndexError):
        grasped(state_of(rob, disc(0.0, mid)), 1, geo)


def test_gripper_closes_on_object(world):
    geo = world.config.geometry
    rob = robot(0.0, 0.2, math.pi / 2, 0.14)
    s = state_of(rob, disc(0.0, 0.2 + geo.palm_half_depth + geo.finger_half_length + 0.005,
                           0.04))
    out = world.step_deterministic(s, Control([0, 0, 0, -0.1]))
    assert world.grasped(out, 0)
    assert out.robot.opening >= 0.08 - 2 * world.config.slop


def test_substep_multiple_enforced():
    with pytest.raises(InvalidStateError):
        PhysicsConfig().substeps(0.0015)
