"""Exact values of the hand-regard reward terms."""

import pytest

from crib_lab.regard_rewards import (RegardRewardConfig, hand_count_reward,
                                     motion_reward, step_reward)


def test_count_table_values():
    assert hand_count_reward(0) == -0.1
    assert hand_count_reward(1) == 0.25
    assert hand_count_reward(2) == 0.5
    assert hand_count_reward(3) == 1.0
    assert hand_count_reward(4) == 2.0


def test_count_clamps_out_of_range():
    assert hand_count_reward(7) == 2.0
    assert hand_count_reward(-1) == -0.1


def test_motion_bonus_scales_then_penalty():
    assert motion_reward(0.0) == 0.0
    assert motion_reward(0.04) == pytest.approx(0.002)
    assert motion_reward(0.08) == pytest.approx(0.004)   # boundary stays positive
    assert motion_reward(0.09) == pytest.approx(-0.001)
    assert motion_reward(0.5) == pytest.approx(-0.042)


def test_motion_penalty_caps():
    assert motion_reward(1.08) == pytest.approx(-0.1)
    assert motion_reward(50.0) == -0.1


def test_step_reward_composition():
    # two hands in view, both barely moving
    r = step_reward(2, [0.02, 0.03])
    assert r == pytest.approx(0.5 + 0.001 + 0.0015 - 0.05)
    # empty view costs the table penalty plus the living penalty
    assert step_reward(0, []) == pytest.approx(-0.15)


def test_step_reward_fast_motion_hurts():
    slow = step_reward(1, [0.01])
    fast = step_reward(1, [0.6])
    assert fast < slow


def test_config_override():
    cfg = RegardRewardConfig(living_penalty=0.0)
    assert step_reward(0, [], cfg) == pytest.approx(-0.1)
