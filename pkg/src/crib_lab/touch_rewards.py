"""Novelty-driven touch rewards.

A ledger tracks how often each body part has been touched, over the whole run
and within the current episode, plus which (hand, part) combinations have
occurred. Per-step reward prefers parts never touched before, then parts new
to the episode, then decays smoothly toward a small penalty for parts held
continuously. Episode-level bonuses pay for unique-part milestones and for
touching both body sides evenly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Set, Tuple

import numpy as np

from .body import BodySpec, TactileFrame
from .bodymap import TOUCH_THRESHOLD, GroupingTable

Pair = Tuple[str, int]   # (hand side, part index)


@dataclass(frozen=True)
class TouchRewardConfig:
    first_lifetime: float = 5.0
    first_episode: float = 1.0
    repeat_scale: float = 0.5
    pair_first_lifetime: float = 10.0
    pair_first_episode: float = 2.0
    milestone_bonus: float = 5.0
    milestones: Tuple[int, ...] = (5, 10, 15, 20, 25, 30)
    balance_bonus: float = 10.0
    balance_margin: int = 3


def novelty_decay(count: float) -> float:
    """Smooth decay from ~+1 (fresh) through 0 at 10 touches to ~-1 (stale).

    Written via tanh rather than the equivalent logistic form so huge counts
    cannot overflow and the crossover at 10 is exact.
    """
    return -math.tanh(0.25 * (count - 10.0))


@dataclass
class RewardBreakdown:
    touch: float = 0.0
    pair: float = 0.0
    milestone: float = 0.0
    new_lifetime_parts: int = 0
    new_episode_parts: int = 0

    @property
    def total(self) -> float:
        return self.touch + self.pair + self.milestone


def hand_part_pairs(spec: BodySpec, frame: TactileFrame,
                    touched: np.ndarray) -> Set[Pair]:
    """Which (hand, part) contacts are active: a touched part with at least
    one of its sensors closest to a hand segment of that side."""
    pairs: Set[Pair] = set()
    active = frame.activations > 0.0
    for i in np.where(active)[0]:
        j = int(spec.sensor_segment[i])
        if not touched[j]:
            continue
        other = int(frame.nearest_segment[i])
        if spec.is_hand_segment[other]:
            pairs.add((spec.segments[other].side, j))
    return pairs


class NoveltyLedger:
    """Touch novelty state across a run; episode state resets on demand."""

    def __init__(self, group_sides: Sequence[str],
                 config: TouchRewardConfig = TouchRewardConfig()):
        self.config = config
        self.group_sides = list(group_sides)
        self.n_parts = len(self.group_sides)
        self.lifetime_counts = np.zeros(self.n_parts, dtype=np.int64)
        self.lifetime_pairs: Set[Pair] = set()
        self.begin_episode()

    def begin_episode(self) -> None:
        self.episode_counts = np.zeros(self.n_parts, dtype=np.int64)
        self.episode_pairs: Set[Pair] = set()
        self.episode_touched: Set[int] = set()

    # -- per-step -----------------------------------------------------------

    def step_rewards(self, touched: np.ndarray,
                     pairs: Iterable[Pair] = ()) -> RewardBreakdown:
        cfg = self.config
        out = RewardBreakdown()
        before = len(self.episode_touched)
        for j in np.where(touched)[0]:
            j = int(j)
            if self.lifetime_counts[j] == 0:
                out.touch += cfg.first_lifetime
                out.new_lifetime_parts += 1
            elif self.episode_counts[j] == 0:
                out.touch += cfg.first_episode
            else:
                # the count includes the current touch before the decay lookup
                out.touch += cfg.repeat_scale * novelty_decay(
                    float(self.episode_counts[j] + 1))
            self.lifetime_counts[j] += 1
            self.episode_counts[j] += 1
            self.episode_touched.add(j)
        for pair in sorted(set(pairs)):
            if pair not in self.lifetime_pairs:
                out.pair += cfg.pair_first_lifetime
                self.lifetime_pairs.add(pair)
                self.episode_pairs.add(pair)
            elif pair not in self.episode_pairs:
                out.pair += cfg.pair_first_episode
                self.episode_pairs.add(pair)
        after = len(self.episode_touched)
        crossed = [m for m in cfg.milestones if before < m <= after]
        out.milestone = cfg.milestone_bonus * len(crossed)
        return out

    # -- episode end ----------------------------------------------------------

    def hand_counts(self) -> Tuple[int, int]:
        """Distinct groups contacted by the left and by the right hand this
        episode (derived from the pair set, so a group reached by both hands
        counts once per hand)."""
        left = len({j for side, j in self.episode_pairs if side == "left"})
        right = len({j for side, j in self.episode_pairs if side == "right"})
        return left, right

    def balance_bonus(self) -> float:
        left, right = self.hand_counts()
        if abs(left - right) <= self.config.balance_margin:
            return self.config.balance_bonus
        return 0.0

    # -- persistence ------------------------------------------------------------

    def snapshot(self) -> Dict:
        return {
            "episode_counts": self.episode_counts.tolist(),
            "episode_pairs": sorted([list(p) for p in self.episode_pairs]),
            "episode_touched": sorted(self.episode_touched),
            "lifetime_counts": self.lifetime_counts.tolist(),
            "lifetime_pairs": sorted([list(p) for p in self.lifetime_pairs]),
        }

    def restore(self, snap: Dict) -> None:
        self.lifetime_counts = np.asarray(snap["lifetime_counts"], dtype=np.int64)
        self.episode_counts = np.asarray(snap["episode_counts"], dtype=np.int64)
        self.lifetime_pairs = {(s, int(j)) for s, j in snap["lifetime_pairs"]}
        self.episode_pairs = {(s, int(j)) for s, j in snap["episode_pairs"]}
        self.episode_touched = set(int(j) for j in snap["episode_touched"])

    def to_json(self) -> str:
        return json.dumps(self.snapshot(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str, group_sides: Sequence[str],
                  config: TouchRewardConfig = TouchRewardConfig()) -> "NoveltyLedger":
        ledger = cls(group_sides, config)
        ledger.restore(json.loads(text))
        return ledger
