"""Rewards for the hand-regard behavior.

Per step the agent earns a lookup bonus for how many hand blobs the two eyes
see (0..4), a small shaping term for slow in-view hand motion with a penalty
for fast motion, and pays a constant living penalty.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple


@dataclass(frozen=True)
class RegardRewardConfig:
    count_table: Tuple[float, ...] = (-0.1, 0.25, 0.5, 1.0, 2.0)
    motion_soft_limit: float = 0.08
    motion_gain: float = 0.05
    motion_cap: float = 0.05
    penalty_gain: float = 0.1
    penalty_cap: float = 0.1
    living_penalty: float = 0.05


def hand_count_reward(n_visible: int,
                      config: RegardRewardConfig = RegardRewardConfig()) -> float:
    """Table lookup on the total number of hand detections across both eyes."""
    n = min(max(int(n_visible), 0), len(config.count_table) - 1)
    return config.count_table[n]


def motion_reward(magnitude: float,
                  config: RegardRewardConfig = RegardRewardConfig()) -> float:
    """Slow motion earns a capped bonus; fast motion costs a capped penalty."""
    m = float(magnitude)
    if m <= config.motion_soft_limit:
        return min(config.motion_gain * m, config.motion_cap)
    return -min(config.penalty_gain * (m - config.motion_soft_limit),
                config.penalty_cap)


def step_reward(n_visible: int, motions: Sequence[float],
                config: RegardRewardConfig = RegardRewardConfig()) -> float:
    total = hand_count_reward(n_visible, config)
    for m in motions:
        total += motion_reward(m, config)
    return total - config.living_penalty
