"""Gym-style environments over the body simulator.

Both environments follow the same protocol: ``reset()`` returns an
observation tuple, ``step(action)`` returns ``(obs, reward, done, info)``,
and ``get_state()/set_state()`` serialize everything needed to resume a run
bit-exactly (body state, reward ledgers, trackers, RNG).
"""

from typing import Dict, List, Optional, Tuple

import numpy as np

from . import body as bd
from .body import BodySpec, BodyState
from .bodymap import GroupingTable, aggregate, build_grouping, touched_mask
from .curriculum import Stage, mask_action
from .regard_rewards import RegardRewardConfig, step_reward
from .render import render_frame
from .touch_rewards import NoveltyLedger, TouchRewardConfig, hand_part_pairs
from .vision import (BlobTracker, HandAppearanceModel, Track, count_hands,
                     extract_blobs, seed_hand_model)


class SelfTouchEnv:
    """Tactile novelty environment: observation is (body map, proprio)."""

    def __init__(self, spec: BodySpec, table: Optional[GroupingTable] = None,
                 reward_config: TouchRewardConfig = TouchRewardConfig(),
                 episode_length: int = 500, seed: int = 0):
        self.spec = spec
        self.table = table if table is not None else build_grouping(spec)
        self.ledger = NoveltyLedger(self.table.group_sides, reward_config)
        self.episode_length = episode_length
        self.rng = np.random.default_rng(seed)
        self.stage = Stage(pose_mode="fixed")
        self.state: Optional[BodyState] = None
        self.step_in_episode = 0
        self._tactile = None

    @property
    def obs_shapes(self) -> Tuple[Tuple[int, ...], ...]:
        return ((self.table.n_groups,), (2 * self.spec.n_joints,))

    @property
    def action_dim(self) -> int:
        return self.spec.n_joints

    def set_stage(self, stage: Stage) -> None:
        # takes effect at the next reset; never changes a running episode
        self.stage = stage

    def reset(self):
        q = bd.randomize_pose(self.spec, self.rng, self.stage.pose_mode)
        self.state = bd.initial_state(self.spec, q)
        self._tactile = bd.compute_contacts(self.spec, self.state.segment_poses)
        self.ledger.begin_episode()
        self.step_in_episode = 0
        return self.observe()

    def observe(self):
        g = aggregate(self.table, self._tactile.activations)
        proprio = np.concatenate([self.state.q, self.state.qdot])
        return (g.astype(np.float32), proprio.astype(np.float32))

    def step(self, action):
        self.state, tactile, proprio = bd.step(self.spec, self.state, action)
        self._tactile = tactile
        g = aggregate(self.table, tactile.activations)
        touched = touched_mask(g)
        pairs = hand_part_pairs(self.spec, tactile, touched)
        breakdown = self.ledger.step_rewards(touched, pairs)
        self.step_in_episode += 1
        done = self.step_in_episode >= self.episode_length
        reward = breakdown.total
        if done:
            reward += self.ledger.balance_bonus()
        obs = (g.astype(np.float32), proprio.values.astype(np.float32))
        info = {
            "touched": np.where(touched)[0],
            "unique_parts": len(self.ledger.episode_touched),
            "hand_counts": self.ledger.hand_counts(),
            "breakdown": breakdown,
        }
        return obs, reward, done, info

    # -- persistence ----------------------------------------------------------

    def get_state(self) -> Dict:
        return {
            "q": self.state.q.tolist(),
            "qdot": self.state.qdot.tolist(),
            "t": self.state.t,
            "step_in_episode": self.step_in_episode,
            "stage": {"pose_mode": self.stage.pose_mode,
                      "active_arms": self.stage.active_arms},
            "ledger": self.ledger.snapshot(),
            "rng": self.rng.bit_generator.state,
        }

    def set_state(self, data: Dict) -> None:
        q = np.asarray(data["q"], dtype=float)
        qdot = np.asarray(data["qdot"], dtype=float)
        poses = bd.forward_kinematics(self.spec, q)
        self.state = BodyState(q=q, qdot=qdot, t=int(data["t"]),
                               segment_poses=poses)
        self._tactile = bd.compute_contacts(self.spec, poses)
        self.step_in_episode = int(data["step_in_episode"])
        self.stage = Stage(**data["stage"])
        self.ledger.restore(data["ledger"])
        self.rng.bit_generator.state = data["rng"]


# -- hand regard ----------------------------------------------------------------


def _track_to_dict(track: Track) -> Dict:
    return {"id": track.track_id, "frames": list(track.frames),
            "points": [list(p) for p in track.points],
            "areas": list(track.areas), "misses": track.misses}


def _track_from_dict(data: Dict) -> Track:
    return Track(track_id=int(data["id"]), frames=[int(f) for f in data["frames"]],
                 points=[(float(x), float(y)) for x, y in data["points"]],
                 misses=int(data["misses"]),
                 areas=[int(a) for a in data["areas"]])


class HandRegardEnv:
    """Visual novelty environment: observation is (left, right, proprio).

    Every episode starts from the rest pose. Rewards come from hand
    detections in the two rendered eye views: a count table over 0..4
    detections, a slow-motion bonus per tracked blob, and a constant living
    penalty. The stage's inactive arm is zeroed inside ``step``.
    """

    def __init__(self, spec: BodySpec,
                 model: Optional[HandAppearanceModel] = None,
                 reward_config: RegardRewardConfig = RegardRewardConfig(),
                 episode_length: int = 1000):
        self.spec = spec
        self.model = model if model is not None else seed_hand_model()
        self.reward_config = reward_config
        self.episode_length = episode_length
        self.stage = Stage(active_arms="both")
        self.keep_blob_pixels = False
        self.state: Optional[BodyState] = None
        self.step_in_episode = 0
        self.trackers: Tuple[BlobTracker, BlobTracker] = self._new_trackers()
        self._frame: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def _new_trackers(self) -> Tuple[BlobTracker, BlobTracker]:
        res = self.spec.eyes[0].resolution
        return (BlobTracker(resolution=res), BlobTracker(resolution=res))

    @property
    def obs_shapes(self) -> Tuple[Tuple[int, ...], ...]:
        res = self.spec.eyes[0].resolution
        return ((3, res, res), (3, res, res), (2 * self.spec.n_joints,))

    @property
    def action_dim(self) -> int:
        return self.spec.n_joints

    def set_stage(self, stage: Stage) -> None:
        self.stage = stage

    def reset(self):
        self.state = bd.initial_state(self.spec)
        self.step_in_episode = 0
        self.trackers = self._new_trackers()
        self._frame = render_frame(self.spec, self.state.segment_poses)
        for eye in (0, 1):
            blobs = extract_blobs(self._frame[eye], self.model)
            self.trackers[eye].update(0, blobs)
        return self.observe()

    def observe(self):
        left, right = self._frame
        proprio = np.concatenate([self.state.q, self.state.qdot])
        return (np.transpose(left, (2, 0, 1)).astype(np.float32) / 255.0,
                np.transpose(right, (2, 0, 1)).astype(np.float32) / 255.0,
                proprio.astype(np.float32))

    def step(self, action):
        action = mask_action(np.asarray(action, dtype=float), self.stage,
                             self.spec)
        self.state, _, proprio = bd.step(self.spec, self.state, action,
                                         with_tactile=False)
        self.step_in_episode += 1
        self._frame = render_frame(self.spec, self.state.segment_poses)
        per_eye = []
        motions: List[float] = []
        res = self.spec.eyes[0].resolution
        for eye in (0, 1):
            blobs = extract_blobs(self._frame[eye], self.model,
                                  keep_pixels=self.keep_blob_pixels)
            matched = self.trackers[eye].update(self.step_in_episode, blobs)
            motions.extend(t.last_step_motion(res) for t in matched)
            per_eye.append(blobs)
        n = count_hands(per_eye[0], per_eye[1])
        reward = step_reward(n, motions, self.reward_config)
        done = self.step_in_episode >= self.episode_length
        info = {
            "n_visible": n,
            "blobs_left": per_eye[0],
            "blobs_right": per_eye[1],
            "motions": motions,
        }
        return self.observe(), reward, done, info

    # -- persistence ----------------------------------------------------------

    def get_state(self) -> Dict:
        trackers = []
        for tracker in self.trackers:
            trackers.append({
                "active": [_track_to_dict(t) for t in tracker.active],
                "next_id": tracker._next_id,
            })
        return {
            "q": self.state.q.tolist(),
            "qdot": self.state.qdot.tolist(),
            "t": self.state.t,
            "step_in_episode": self.step_in_episode,
            "stage": {"pose_mode": self.stage.pose_mode,
                      "active_arms": self.stage.active_arms},
            "model": self.model.to_kv(),
            "trackers": trackers,
        }

    def set_state(self, data: Dict) -> None:
        q = np.asarray(data["q"], dtype=float)
        qdot = np.asarray(data["qdot"], dtype=float)
        poses = bd.forward_kinematics(self.spec, q)
        self.state = BodyState(q=q, qdot=qdot, t=int(data["t"]),
                               segment_poses=poses)
        self.step_in_episode = int(data["step_in_episode"])
        self.stage = Stage(**data["stage"])
        self.model = HandAppearanceModel.from_kv(data["model"])
        self.trackers = self._new_trackers()
        for tracker, tdata in zip(self.trackers, data["trackers"]):
            tracker.active = [_track_from_dict(t) for t in tdata["active"]]
            tracker._next_id = int(tdata["next_id"])
        self._frame = render_frame(self.spec, poses)
