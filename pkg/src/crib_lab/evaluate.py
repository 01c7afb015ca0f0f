"""Evaluation protocols and the pose-curriculum ablation.

Self-touch: deterministic policy, episodes from random initial poses; reports
per-episode unique groups (total and per hand), the hand balance, and
coverage unions over the 68 groups and the 34 side-merged part names.

Hand regard: deterministic policy from the rest pose; per-step detections are
attributed to a hand when a blob centroid falls within ``ATTRIBUTION_PX`` of
the projected true hand center (the palm capsule midpoint), giving a
visibility percentage per eye and hand pair.
"""

import dataclasses
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from .body import BodySpec, default_body
from .bodymap import GroupingTable, build_grouping
from .checkpoint import read_checkpoint
from .curriculum import Stage
from .envs import HandRegardEnv, SelfTouchEnv
from .nets import TouchPolicyNet, VisionPolicyNet
from .ppo import sample_action
from .render import project_point, write_frame
from .training import RunConfig, RunningNorm, Trainer
from .vision import HandAppearanceModel

ATTRIBUTION_PX = 8.0

EYE_NAMES = ("left_eye", "right_eye")
HAND_NAMES = ("left_hand", "right_hand")


# -- policy wrapper ----------------------------------------------------------------


class Policy:
    """A network plus its frozen observation normalizer."""

    def __init__(self, net, norm: RunningNorm):
        self.net = net
        self.norm = norm

    def act(self, obs, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        parts = list(obs)
        raw = parts[-1].astype(float)
        parts[-1] = self.norm.normalize(raw).astype(np.float32)
        mu, sigma, _ = self.net.forward(*[p[None] for p in parts])
        mu = mu[0].astype(float)
        if rng is None:
            return mu
        return sample_action(mu, sigma[0].astype(float), rng)


def untrained_policy(behavior: str, seed: int = 0) -> Policy:
    net = (TouchPolicyNet(seed=seed) if behavior == "selftouch"
           else VisionPolicyNet(seed=seed))
    return Policy(net, RunningNorm(44))


def load_policy(checkpoint_path) -> Tuple[Policy, dict,
                                          Optional[HandAppearanceModel]]:
    """Policy, checkpoint metadata, and the hand model when present."""
    arrays, meta = read_checkpoint(checkpoint_path)
    behavior = meta["behavior"]
    net = (TouchPolicyNet() if behavior == "selftouch" else VisionPolicyNet())
    net.load_param_values({k[len("param/"):]: v for k, v in arrays.items()
                           if k.startswith("param/")})
    norm = RunningNorm(2 * 22)
    norm.load({k[len("norm/"):]: v for k, v in arrays.items()
               if k.startswith("norm/")})
    model = None
    if behavior == "handregard":
        import json
        env_state = json.loads(arrays["env/state"].tobytes().decode())
        model = HandAppearanceModel.from_kv(env_state["model"])
    return Policy(net, norm), meta, model


# -- self-touch -------------------------------------------------------------------


@dataclass
class SelfTouchReport:
    episodes: int
    unique_parts: List[int]              # per episode, over the 68 groups
    left_hand_parts: List[int]
    right_hand_parts: List[int]
    balance: List[int]                   # | |N_L| - |N_R| | per episode
    union_groups: Set[int]
    union_parts: Set[str]                # side-merged part names, of 34
    n_groups: int = 68
    n_parts: int = 34

    @property
    def mean_unique(self) -> float:
        return float(np.mean(self.unique_parts))

    @property
    def coverage_68(self) -> float:
        return len(self.union_groups) / self.n_groups

    @property
    def coverage_34(self) -> float:
        return len(self.union_parts) / self.n_parts

    @property
    def coverage_score(self) -> float:
        return self.mean_unique / self.n_groups

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("episode,unique_parts,left_hand,right_hand,balance\n")
            for i in range(self.episodes):
                fh.write(f"{i},{self.unique_parts[i]},"
                         f"{self.left_hand_parts[i]},"
                         f"{self.right_hand_parts[i]},{self.balance[i]}\n")
            fh.write(f"mean,{self.mean_unique:.6f},,,\n")
            fh.write(f"union_groups,{len(self.union_groups)},,,\n")
            fh.write(f"union_parts,{len(self.union_parts)},,,\n")


def evaluate_selftouch(policy: Policy, spec: BodySpec,
                       table: Optional[GroupingTable] = None,
                       episodes: int = 100, episode_length: int = 500,
                       seed: int = 0, stochastic: bool = False,
                       dump_dir=None) -> SelfTouchReport:
    table = table if table is not None else build_grouping(spec)
    env = SelfTouchEnv(spec, table, episode_length=episode_length, seed=seed)
    env.set_stage(Stage(pose_mode="random"))
    act_rng = np.random.default_rng([seed, 3]) if stochastic else None
    report = SelfTouchReport(episodes=episodes, unique_parts=[],
                             left_hand_parts=[], right_hand_parts=[],
                             balance=[], union_groups=set(), union_parts=set(),
                             n_groups=table.n_groups,
                             n_parts=len(set(s.part for s in spec.segments)))
    frame_idx = 0
    for _ in range(episodes):
        obs = env.reset()
        done = False
        while not done:
            obs, _, done, info = env.step(policy.act(obs, act_rng))
            if dump_dir is not None:
                from .render import render_frame
                left, right = render_frame(spec, env.state.segment_poses)
                write_frame(dump_dir, frame_idx, left, right)
                frame_idx += 1
        left_n, right_n = env.ledger.hand_counts()
        touched = set(env.ledger.episode_touched)
        report.unique_parts.append(len(touched))
        report.left_hand_parts.append(left_n)
        report.right_hand_parts.append(right_n)
        report.balance.append(abs(left_n - right_n))
        report.union_groups |= touched
        report.union_parts |= {spec.segments[j].part for j in touched}
    return report


# -- hand regard -------------------------------------------------------------------


@dataclass
class RegardReport:
    episodes: int
    steps_per_episode: int
    visibility: Dict[Tuple[str, str], float]    # (eye, hand) -> percent

    @property
    def average(self) -> float:
        return float(np.mean(list(self.visibility.values())))

    @property
    def best_pair(self) -> float:
        return max(self.visibility.values())

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("eye,hand,visibility_pct\n")
            for eye in EYE_NAMES:
                for hand in HAND_NAMES:
                    fh.write(f"{eye},{hand},"
                             f"{self.visibility[(eye, hand)]:.6f}\n")
            fh.write(f"average,,{self.average:.6f}\n")


def _hand_centers(spec: BodySpec,
                  poses: Tuple[np.ndarray, np.ndarray]) -> Dict[str, np.ndarray]:
    from .body import segment_endpoints_world
    a, b = segment_endpoints_world(spec, poses)
    centers = {}
    for side in ("left", "right"):
        j = spec.group_names.index(f"palm_{side}")
        centers[side] = 0.5 * (a[j] + b[j])
    return centers


def evaluate_handregard(policy: Policy, model: HandAppearanceModel,
                        spec: BodySpec, episodes: int = 10,
                        steps: int = 1000, seed: int = 0,
                        stochastic: bool = False,
                        dump_dir=None) -> RegardReport:
    env = HandRegardEnv(spec, model=model, episode_length=steps)
    env.set_stage(Stage(active_arms="both"))
    act_rng = np.random.default_rng([seed, 3]) if stochastic else None
    hits = {(eye, hand): 0 for eye in EYE_NAMES for hand in HAND_NAMES}
    total = 0
    frame_idx = 0
    for _ in range(episodes):
        obs = env.reset()
        for _ in range(steps):
            obs, _, done, info = env.step(policy.act(obs, act_rng))
            total += 1
            centers = _hand_centers(spec, env.state.segment_poses)
            for ei, eye in enumerate(EYE_NAMES):
                blobs = info["blobs_left"] if ei == 0 else info["blobs_right"]
                if not blobs:
                    continue
                for hi, hand in enumerate(HAND_NAMES):
                    proj = project_point(spec, env.state.segment_poses, ei,
                                         centers[("left", "right")[hi]])
                    if proj is None:
                        continue
                    px, py, _ = proj
                    near = any(
                        (b.centroid[0] - px) ** 2 + (b.centroid[1] - py) ** 2
                        <= ATTRIBUTION_PX ** 2 for b in blobs)
                    if near:
                        hits[(eye, hand)] += 1
            if dump_dir is not None:
                write_frame(dump_dir, frame_idx, env._frame[0], env._frame[1])
                frame_idx += 1
    visibility = {k: 100.0 * v / total for k, v in hits.items()}
    return RegardReport(episodes=episodes, steps_per_episode=steps,
                        visibility=visibility)


# -- ablation ----------------------------------------------------------------------


@dataclass
class AblationRow:
    variant: str
    seed: int
    mean_unique: float
    coverage_34: float
    coverage_68: float


def run_ablation(base_config: RunConfig, seeds: Sequence[int],
                 eval_episodes: int = 100,
                 out_dir=None) -> Tuple[List[AblationRow], Dict[str, float]]:
    """Train curriculum / fixed-only / random-only per seed and evaluate.

    Returns the per-run rows and the per-variant aggregate (mean over seeds
    of the 34-part coverage). Runs whose output directory already holds a
    final checkpoint are reused rather than retrained.
    """
    if len(seeds) < 3:
        raise ValueError("ablation needs at least 3 seeds")
    out = Path(out_dir if out_dir is not None else base_config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = default_body(sensor_count=base_config.sensor_count)
    table = build_grouping(spec)
    rows: List[AblationRow] = []
    for variant in ("curriculum", "fixed", "random"):
        for seed in seeds:
            run_dir = out / f"{variant}_seed{seed}"
            ckpt = run_dir / "checkpoint_final.ckpt"
            cfg = dataclasses.replace(base_config, pose_schedule=variant,
                                      seed=seed, out_dir=str(run_dir))
            if not ckpt.exists():
                Trainer(cfg).train()
            policy, _, _ = load_policy(ckpt)
            report = evaluate_selftouch(
                policy, spec, table, episodes=eval_episodes,
                episode_length=cfg.resolved_episode_length(), seed=seed)
            rows.append(AblationRow(variant, seed, report.mean_unique,
                                    report.coverage_34, report.coverage_68))
    aggregates = {}
    for variant in ("curriculum", "fixed", "random"):
        cov = [r.coverage_34 for r in rows if r.variant == variant]
        aggregates[variant] = float(np.mean(cov))
    return rows, aggregates


def write_ablation_csv(path, rows: Sequence[AblationRow],
                       aggregates: Dict[str, float]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("variant,seed,mean_unique,coverage_34,coverage_68\n")
        for r in rows:
            fh.write(f"{r.variant},{r.seed},{r.mean_unique:.6f},"
                     f"{r.coverage_34:.6f},{r.coverage_68:.6f}\n")
        for variant in ("curriculum", "fixed", "random"):
            per_seed = [r.coverage_34 for r in rows if r.variant == variant]
            fh.write(f"{variant},aggregate,{aggregates[variant]:.6f},"
                     f"{float(np.std(per_seed)):.6f},\n")
