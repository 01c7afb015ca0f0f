"""Stage schedules for the two curricula and the arm-masking rule.

Full-scale budgets: self-touch trains 8M steps split into a fixed-pose half
and a random-pose half; hand regard trains one arm at a time (175k steps
each) and then both arms out to 1.85M steps. A desk-scale run divides every
threshold by ``DESK_DIVISOR``, keeping the stage proportions intact.
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .body import BodySpec

DESK_DIVISOR = 40

SELFTOUCH_TOTAL = 8_000_000
SELFTOUCH_RANDOM_START = 4_000_000
HANDREGARD_ARM_STEPS = 175_000
HANDREGARD_TOTAL = 1_850_000


@dataclass(frozen=True)
class Stage:
    pose_mode: str = "fixed"        # self-touch resets: fixed | random
    active_arms: str = "both"       # hand regard masking: left | right | both


@dataclass(frozen=True)
class StageSchedule:
    """Piecewise-constant stage map over global steps; half-open intervals."""

    behavior: str
    boundaries: Tuple[Tuple[int, Stage], ...]   # (first step, stage), ascending
    total_steps: int

    def stage_for_step(self, step: int) -> Stage:
        if step < 0:
            raise ValueError("step must be nonnegative")
        current = self.boundaries[0][1]
        for threshold, stage in self.boundaries:
            if step >= threshold:
                current = stage
        return current

    def label(self, stage: Stage) -> str:
        if self.behavior == "selftouch":
            return stage.pose_mode
        return stage.active_arms


def selftouch_schedule(divisor: int = DESK_DIVISOR) -> StageSchedule:
    """Fixed-pose first half, random-pose second half."""
    return StageSchedule(
        behavior="selftouch",
        boundaries=(
            (0, Stage(pose_mode="fixed")),
            (SELFTOUCH_RANDOM_START // divisor, Stage(pose_mode="random")),
        ),
        total_steps=SELFTOUCH_TOTAL // divisor,
    )


def single_pose_schedule(pose_mode: str,
                         divisor: int = DESK_DIVISOR) -> StageSchedule:
    """Ablation variant: one pose mode for the whole run."""
    if pose_mode not in ("fixed", "random"):
        raise ValueError(f"unknown pose mode {pose_mode!r}")
    return StageSchedule(
        behavior="selftouch",
        boundaries=((0, Stage(pose_mode=pose_mode)),),
        total_steps=SELFTOUCH_TOTAL // divisor,
    )


def handregard_schedule(divisor: int = DESK_DIVISOR) -> StageSchedule:
    """Left arm, then right arm, then both arms free."""
    arm = HANDREGARD_ARM_STEPS // divisor
    return StageSchedule(
        behavior="handregard",
        boundaries=(
            (0, Stage(active_arms="left")),
            (arm, Stage(active_arms="right")),
            (2 * arm, Stage(active_arms="both")),
        ),
        total_steps=HANDREGARD_TOTAL // divisor,
    )


def mask_action(action: np.ndarray, stage: Stage,
                spec: BodySpec) -> np.ndarray:
    """Zero the joints of the arm the stage keeps still; identity for both."""
    if stage.active_arms == "both":
        return action
    if stage.active_arms not in ("left", "right"):
        raise ValueError(f"unknown arm stage {stage.active_arms!r}")
    inactive = "right" if stage.active_arms == "left" else "left"
    out = np.array(action, dtype=float)
    out[spec.arm_joint_indices(inactive)] = 0.0
    return out
