"""End-to-end training: rollouts, PPO updates, curricula, and checkpoints.

A run is driven by a ``RunConfig``. Self-touch trains a touch/proprio policy
under the two-stage pose curriculum; hand regard first babbles to calibrate
the hand appearance model, then trains a vision policy under the staged arm
curriculum. Checkpoints capture the complete training state (parameters,
optimizer, observation normalizer, RNG streams, environment, reward ledger),
so a resumed run reproduces the uninterrupted one bit for bit.
"""

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .body import default_body
from .checkpoint import read_checkpoint, write_checkpoint
from .config import ConfigError, load_kv_file, section
from .curriculum import (DESK_DIVISOR, StageSchedule, handregard_schedule,
                         selftouch_schedule, single_pose_schedule)
from .envs import HandRegardEnv, SelfTouchEnv
from .nets import TouchPolicyNet, VisionPolicyNet
from .ppo import PpoConfig, PpoTrainer, RolloutBuffer, compute_gae, \
    gaussian_logp, sample_action
from .vision import Blob, HandAppearanceModel, calibrate_hand_model

METRICS_HEADER = {
    "selftouch": "step,stage,mean_reward,unique_parts,clip_fraction,kl",
    "handregard": "step,stage,mean_reward,visibility,clip_fraction,kl",
}


@dataclass
class RunConfig:
    behavior: str = "selftouch"
    seed: int = 0
    out_dir: str = "runs/selftouch"
    total_steps: Optional[int] = None      # None: the schedule's budget
    episode_length: Optional[int] = None   # None: 500 self-touch, 1000 regard
    divisor: int = DESK_DIVISOR
    sensor_count: int = 1024
    pose_schedule: str = "curriculum"      # curriculum | fixed | random
    babble_steps: int = 10_000
    checkpoint_every: int = 10             # updates between checkpoints
    ppo: PpoConfig = field(default_factory=PpoConfig)

    def resolved_episode_length(self) -> int:
        if self.episode_length is not None:
            return self.episode_length
        return 500 if self.behavior == "selftouch" else 1000


def default_ppo(behavior: str) -> PpoConfig:
    # rollout 2000 keeps update boundaries on episode boundaries (500/1000);
    # novelty bonuses spike to +10, so rewards are scaled down and a KL guard
    # stops any update that would jump too far
    if behavior == "selftouch":
        return PpoConfig(rollout_steps=2000, reward_scale=0.05,
                         target_kl=0.03)
    return PpoConfig(rollout_steps=2000, reward_scale=0.05, target_kl=0.03)


def load_run_config(path: Optional[str] = None, **overrides) -> RunConfig:
    """Build a RunConfig from a key-value file plus keyword overrides."""
    flat = load_kv_file(path) if path else {}
    ppo_kv = section(flat, "ppo")
    base = {k: v for k, v in flat.items() if not k.startswith("ppo.")}
    base.update({k: v for k, v in overrides.items() if v is not None})
    behavior = base.get("behavior", "selftouch")
    if behavior not in ("selftouch", "handregard"):
        raise ConfigError(f"unknown behavior {behavior!r}")
    ppo_fields = {f.name for f in dataclasses.fields(PpoConfig)}
    bad = set(ppo_kv) - ppo_fields
    if bad:
        raise ConfigError(f"unknown ppo option(s): {sorted(bad)}")
    ppo = dataclasses.replace(default_ppo(behavior), **ppo_kv)
    run_fields = {f.name for f in dataclasses.fields(RunConfig)} - {"ppo"}
    bad = set(base) - run_fields
    if bad:
        raise ConfigError(f"unknown option(s): {sorted(bad)}")
    return RunConfig(ppo=ppo, **base)


class RunningNorm:
    """Welford running mean/variance used to standardize proprio channels."""

    def __init__(self, dim: int):
        self.count = 0.0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, x: np.ndarray) -> None:
        self.count += 1.0
        delta = x - self.mean
        self.mean += delta / self.count
        self.m2 += delta * (x - self.mean)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        if self.count == 0.0:
            return np.asarray(x, dtype=float)
        var = self.m2 / self.count
        return (x - self.mean) / np.sqrt(var + 1e-8)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {"count": np.array([self.count]), "mean": self.mean,
                "m2": self.m2}

    def load(self, arrays: Dict[str, np.ndarray]) -> None:
        self.count = float(arrays["count"][0])
        self.mean = arrays["mean"].astype(float).copy()
        self.m2 = arrays["m2"].astype(float).copy()


# -- babbling ---------------------------------------------------------------------


@dataclass
class BabbleDataset:
    proprio: np.ndarray                 # (steps, 2*n_joints)
    actions: np.ndarray                 # (steps, n_joints)
    blobs: Tuple[List[List[Blob]], List[List[Blob]]]   # [eye][frame]

    @property
    def steps(self) -> int:
        return len(self.proprio)

    def hand_visible_fraction(self) -> float:
        frames = self.steps
        seen = sum(1 for k in range(frames)
                   if self.blobs[0][k] or self.blobs[1][k])
        return seen / frames if frames else 0.0


def run_babble(env: HandRegardEnv, steps: int,
               rng: np.random.Generator) -> BabbleDataset:
    """Uniform random actions; records proprio, actions, and seed-model blobs.

    Blob pixels are kept so the calibration stage can refit the appearance
    model. Frames are indexed globally across episode resets, matching the
    proprio rows handed to the correlator.
    """
    keep_before = env.keep_blob_pixels
    env.keep_blob_pixels = True
    env.reset()
    n_joints = env.spec.n_joints
    proprio = np.zeros((steps, 2 * n_joints))
    actions = np.zeros((steps, n_joints))
    blobs: Tuple[List[List[Blob]], List[List[Blob]]] = ([], [])
    for k in range(steps):
        action = rng.uniform(-1.0, 1.0, n_joints)
        _, _, done, info = env.step(action)
        actions[k] = action
        proprio[k] = np.concatenate([env.state.q, env.state.qdot])
        blobs[0].append(info["blobs_left"])
        blobs[1].append(info["blobs_right"])
        if done:
            env.reset()
    env.keep_blob_pixels = keep_before
    return BabbleDataset(proprio=proprio, actions=actions, blobs=blobs)


# -- trainer ------------------------------------------------------------------------


def _json_to_u1(value) -> np.ndarray:
    return np.frombuffer(json.dumps(value, sort_keys=True).encode(),
                         dtype=np.uint8).copy()


def _u1_to_json(arr: np.ndarray):
    return json.loads(arr.tobytes().decode())


class Trainer:
    """Owns the policy, optimizer, environment, and run bookkeeping."""

    def __init__(self, config: RunConfig,
                 resume_path: Optional[str] = None):
        self.config = config
        self.spec = default_body(sensor_count=config.sensor_count)
        self.schedule = self._build_schedule()
        self.total_steps = (config.total_steps if config.total_steps is not None
                            else self.schedule.total_steps)
        episode_length = config.resolved_episode_length()
        if config.behavior == "selftouch":
            self.env = SelfTouchEnv(self.spec, episode_length=episode_length,
                                    seed=config.seed)
            self.net = TouchPolicyNet(seed=config.seed)
        else:
            self.env = HandRegardEnv(self.spec, episode_length=episode_length)
            self.net = VisionPolicyNet(seed=config.seed)
        self.policy_rng = np.random.default_rng([config.seed, 1])
        self.babble_rng = np.random.default_rng([config.seed, 2])
        self.trainer = PpoTrainer(self.net, config.ppo, self.policy_rng)
        self.norm = RunningNorm(2 * self.spec.n_joints)
        self.global_step = 0
        self.update_idx = 0
        self.calibrated = False
        self._buffer: Optional[RolloutBuffer] = None
        if resume_path is not None:
            self._load(resume_path)

    def _build_schedule(self) -> StageSchedule:
        cfg = self.config
        if cfg.behavior == "handregard":
            return handregard_schedule(cfg.divisor)
        if cfg.pose_schedule == "curriculum":
            return selftouch_schedule(cfg.divisor)
        return single_pose_schedule(cfg.pose_schedule, cfg.divisor)

    # -- observation plumbing ---------------------------------------------------

    def _prepare(self, obs, update_norm: bool):
        parts = list(obs)
        raw = parts[-1].astype(float)
        if update_norm:
            self.norm.update(raw)
        parts[-1] = self.norm.normalize(raw).astype(np.float32)
        return tuple(parts)

    def _policy(self, obs):
        mu, sigma, value = self.net.forward(*[p[None] for p in obs])
        return mu[0].astype(float), sigma[0].astype(float), float(value[0])

    # -- checkpointing ------------------------------------------------------------

    def save(self, path) -> None:
        arrays = {f"param/{k}": v for k, v in self.net.param_values().items()}
        for k, v in self.trainer.adam.state_arrays().items():
            arrays[f"adam/{k}"] = v
        for k, v in self.norm.arrays().items():
            arrays[f"norm/{k}"] = v
        arrays["rng/policy"] = _json_to_u1(self.policy_rng.bit_generator.state)
        arrays["rng/babble"] = _json_to_u1(self.babble_rng.bit_generator.state)
        arrays["env/state"] = _json_to_u1(self.env.get_state())
        meta = {
            "kind": "training-state",
            "behavior": self.config.behavior,
            "seed": self.config.seed,
            "global_step": self.global_step,
            "update_idx": self.update_idx,
            "calibrated": self.calibrated,
            "divisor": self.config.divisor,
            "episode_length": self.config.resolved_episode_length(),
            "pose_schedule": self.config.pose_schedule,
            "sensor_count": self.config.sensor_count,
        }
        write_checkpoint(path, arrays, meta)

    def _load(self, path) -> None:
        arrays, meta = read_checkpoint(path)
        if meta.get("behavior") != self.config.behavior:
            raise ConfigError(
                f"checkpoint is for behavior {meta.get('behavior')!r}, "
                f"run configured for {self.config.behavior!r}")
        self.net.load_param_values(
            {k[len("param/"):]: v for k, v in arrays.items()
             if k.startswith("param/")})
        self.trainer.adam.load_state(
            {k[len("adam/"):]: v for k, v in arrays.items()
             if k.startswith("adam/")})
        self.norm.load({k[len("norm/"):]: v for k, v in arrays.items()
                        if k.startswith("norm/")})
        self.policy_rng.bit_generator.state = _u1_to_json(arrays["rng/policy"])
        self.babble_rng.bit_generator.state = _u1_to_json(arrays["rng/babble"])
        self.env.set_state(_u1_to_json(arrays["env/state"]))
        self.global_step = int(meta["global_step"])
        self.update_idx = int(meta["update_idx"])
        self.calibrated = bool(meta["calibrated"])

    # -- training loop --------------------------------------------------------------

    def _calibrate(self, out: Path) -> None:
        dataset = run_babble(self.env, self.config.babble_steps,
                             self.babble_rng)
        result = calibrate_hand_model(dataset.blobs, dataset.proprio,
                                      self.env.model)
        result.write_audit_csv(out / "calibration_audit.csv")
        (out / "hand_model.kv").write_text(result.model.to_kv())
        self.env.model = result.model
        self.calibrated = True

    def train(self) -> Path:
        cfg = self.config
        out = Path(cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = out / "metrics.csv"
        fresh = self.global_step == 0 and self.update_idx == 0
        write_header = fresh or not metrics_path.exists()
        final_path = out / "checkpoint_final.ckpt"
        if fresh and cfg.behavior == "handregard" and not self.calibrated:
            self._calibrate(out)
        with open(metrics_path, "w" if fresh else "a", encoding="utf-8",
                  newline="\n") as log:
            if write_header:
                log.write(METRICS_HEADER[cfg.behavior] + "\n")
            if fresh:
                self.env.set_stage(self.schedule.stage_for_step(0))
                obs = self._prepare(self.env.reset(), update_norm=True)
            else:
                # the restored environment continues mid-run; its pending
                # observation was already counted by the normalizer
                obs = self._prepare(self.env.observe(), update_norm=False)
            while self.global_step < self.total_steps:
                steps = min(cfg.ppo.rollout_steps,
                            self.total_steps - self.global_step)
                obs, row = self._rollout_and_update(obs, steps)
                log.write(row + "\n")
                log.flush()
                self.update_idx += 1
                if cfg.checkpoint_every and \
                        self.update_idx % cfg.checkpoint_every == 0:
                    self.save(out / f"checkpoint_{self.global_step:08d}.ckpt")
        self.save(final_path)
        return final_path

    def _rollout_and_update(self, obs, steps: int):
        if self._buffer is None or self._buffer.steps != steps:
            self._buffer = RolloutBuffer(steps, [p.shape for p in obs],
                                         self.env.action_dim)
        buffer = self._buffer
        buffer.reset()
        episode_metrics: List[float] = []
        visible_steps = 0
        for _ in range(steps):
            mu, sigma, value = self._policy(obs)
            action = sample_action(mu, sigma, self.policy_rng)
            logp = float(gaussian_logp(action, mu, sigma))
            next_obs, reward, done, info = self.env.step(action)
            buffer.add(obs, action, logp, reward, done, value)
            self.global_step += 1
            if self.config.behavior == "selftouch":
                if done:
                    episode_metrics.append(float(info["unique_parts"]))
            else:
                visible_steps += int(info["n_visible"] > 0)
            if done:
                self.env.set_stage(
                    self.schedule.stage_for_step(self.global_step))
                next_obs = self.env.reset()
            obs = self._prepare(next_obs, update_norm=True)
        _, _, last_value = self._policy(obs)
        adv, ret = compute_gae(
            buffer.rewards * self.config.ppo.reward_scale, buffer.values,
            buffer.dones, last_value, self.config.ppo.gamma,
            self.config.ppo.lam)
        stats = self.trainer.update(buffer.obs, buffer.actions, buffer.logps,
                                    adv, ret)
        if self.config.behavior == "selftouch":
            metric = (sum(episode_metrics) / len(episode_metrics)
                      if episode_metrics else 0.0)
        else:
            metric = visible_steps / steps
        stage = self.schedule.label(self.env.stage)
        row = (f"{self.global_step},{stage},{buffer.rewards.mean():.6f},"
               f"{metric:.6f},{stats.clip_fraction:.6f},{stats.approx_kl:.6f}")
        return obs, row
