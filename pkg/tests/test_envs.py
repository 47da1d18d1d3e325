import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from popsan import envs
from popsan.envs import (DT, K_A, NoiseConfig, PointMassState, PointMassVecEnv, env_reset, env_step,
                         evaluate_tracking, inject_noise, observe, proportional_policy)


def state_with(velocity, command, position=(0.0, 0.0), steps=0):
    return PointMassState(np.array(position, float), np.array(velocity, float), np.array(command, float),
                          np.array(steps))


def test_reset_is_seeded():
    s1, o1 = env_reset(np.random.default_rng(4))
    s2, o2 = env_reset(np.random.default_rng(4))
    np.testing.assert_array_equal(o1, o2)
    assert o1.shape == (6,)
    assert not s1.position.any() and not s1.velocity.any()
    assert np.all(np.abs(s1.command) <= 1)


def test_reset_commands_are_centred():
    state, obs = env_reset(np.random.default_rng(0), 1000)
    assert obs.shape == (1000, 6)
    assert np.all(np.abs(state.command.mean(axis=0)) < 0.05)


def test_perfect_tracking_reward():
    _, _, r, _ = env_step(state_with([0.5, -0.2], [0.5, -0.2]), np.zeros(2))
    assert r == 1.0


def test_reward_one_scale_away():
    _, _, r, _ = env_step(state_with([0.5, 0.0], [0.0, 0.0]), np.zeros(2))
    assert r == pytest.approx(np.exp(-1.0), rel=1e-12)
    assert r == pytest.approx(0.3679, abs=1e-4)


def test_euler_step_fixture():
    s = state_with([0.2, -0.1], [1.0, 1.0], position=(1.0, 2.0), steps=3)
    a = np.array([0.5, -1.0])
    new, obs, r, done = env_step(s, a)
    v = np.array([0.2 + 0.5 * DT * K_A, -0.1 - 1.0 * DT * K_A])
    np.testing.assert_allclose(new.velocity, v)
    np.testing.assert_allclose(new.position, np.array([1.0, 2.0]) + v * DT)
    np.testing.assert_allclose(obs, np.concatenate([v, [1.0, 1.0], v - 1.0]))
    expect = np.exp(-np.sum((v - 1.0) ** 2) / 0.25) - 0.01 * np.sum(a * a)
    assert r == pytest.approx(expect)
    assert new.step_count == 4 and not done


def test_actions_and_speed_are_clamped():
    new, _, r, _ = env_step(state_with([1.99, 0.0], [0.0, 0.0]), np.array([5.0, 0.0]))
    assert np.linalg.norm(new.velocity) == pytest.approx(2.0)
    # action cost uses the clamped action
    assert r == pytest.approx(np.exp(-4.0 / 0.25) - 0.01)


def test_episode_ends_after_200_steps(rng):
    state, _ = env_reset(rng)
    for t in range(200):
        state, _, _, done = env_step(state, np.zeros(2))
        assert done == (t == 199)


def test_non_finite_action_rejected(rng):
    state, _ = env_reset(rng)
    with pytest.raises(ValueError):
        env_step(state, np.array([np.nan, 0.0]))


def test_step_is_deterministic(rng):
    state, _ = env_reset(rng, 4)
    a = rng.uniform(-1, 1, (4, 2))
    _, o1, r1, _ = env_step(state.copy(), a)
    _, o2, r2, _ = env_step(state.copy(), a)
    np.testing.assert_array_equal(o1, o2)
    np.testing.assert_array_equal(r1, r2)


def test_vector_env_resets_finished_episodes():
    env = PointMassVecEnv(3, np.random.default_rng(0))
    env.state.step_count[1] = 199
    old_command = env.state.command[1].copy()
    obs, _, done, final_obs = env.step(np.zeros((3, 2)))
    np.testing.assert_array_equal(done, [False, True, False])
    assert env.state.step_count[1] == 0
    assert not np.array_equal(env.state.command[1], old_command)
    np.testing.assert_array_equal(final_obs[1, 2:4], old_command)
    np.testing.assert_array_equal(obs[1, :2], [0.0, 0.0])


def test_zero_noise_leaves_observation_unchanged(rng):
    _, obs = env_reset(rng, 5)
    np.testing.assert_array_equal(inject_noise(obs, NoiseConfig(0.0), rng), obs)


def test_noise_statistics_and_channel_isolation(rng):
    _, obs = env_reset(rng, 100000)
    noisy = inject_noise(obs, NoiseConfig(0.3), rng)
    delta = noisy - obs
    assert np.all(np.abs(delta[:, 2:4].std(axis=0) - 0.3) < 0.01)
    assert noisy[:, :2].tobytes() == obs[:, :2].tobytes()
    np.testing.assert_allclose(noisy[:, 4:], noisy[:, :2] - noisy[:, 2:4], atol=1e-12)


def test_negative_sigma_rejected():
    with pytest.raises(ValueError):
        NoiseConfig(-0.1)


def test_perturbation_variance_grows_with_sigma():
    _, obs = env_reset(np.random.default_rng(0), 20000)
    variances = [float((inject_noise(obs, s, np.random.default_rng(1)) - obs)[:, 2:4].var())
                 for s in envs.DEFAULT_SIGMAS]
    assert variances == sorted(variances)
    assert variances[0] == 0.0


def test_proportional_controller_tracks():
    report = evaluate_tracking(proportional_policy(), [0.0], episodes=20, rng=np.random.default_rng(0))
    row = report.rows[0]
    assert row.mean_err_norm < 0.05
    assert row.diverged == 0


def test_zero_policy_error_equals_command_magnitude():
    report = evaluate_tracking(lambda obs: np.zeros((len(obs), 2)), [0.0], episodes=20,
                               rng=np.random.default_rng(1))
    row = report.rows[0]
    assert row.mean_err_norm == pytest.approx(row.mean_cmd_norm, rel=1e-12)
    assert row.relative_error == pytest.approx(1.0)


def test_report_has_one_row_per_sigma_and_csv(tmp_path):
    report = evaluate_tracking(proportional_policy(), [0.0, 0.1, 0.3], episodes=3, rng=np.random.default_rng(2))
    assert [r.sigma for r in report.rows] == [0.0, 0.1, 0.3]
    report.to_csv(tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["sigma", "mean_abs_err_x", "mean_abs_err_y", "std_err", "episodes", "diverged"]
    assert len(rows) == 4


def test_non_finite_actions_count_as_divergence():
    report = evaluate_tracking(lambda obs: np.full((len(obs), 2), np.nan), [0.0], episodes=4,
                               rng=np.random.default_rng(0))
    assert report.rows[0].diverged == 4


def test_observation_layout():
    s = state_with([0.1, 0.2], [0.5, -0.5])
    np.testing.assert_allclose(observe(s), [0.1, 0.2, 0.5, -0.5, -0.4, 0.7])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(-1, 1), min_size=2, max_size=2),
       st.lists(st.floats(-10, 10), min_size=2, max_size=2))
def test_reward_range(v, c, a):
    v = np.array(v)
    v = v * min(1.0, 2.0 / max(np.linalg.norm(v), 1e-12))
    _, _, r, _ = env_step(state_with(v, c), np.array(a))
    assert -0.02 < r <= 1.0
