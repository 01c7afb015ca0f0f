"""Evaluation reports, policy loading, and the ablation harness."""

import numpy as np
import pytest

from crib_lab.body import default_body
from crib_lab.evaluate import (evaluate_handregard, evaluate_selftouch,
                               load_policy, run_ablation, untrained_policy,
                               write_ablation_csv)
from crib_lab.ppo import PpoConfig
from crib_lab.training import RunConfig, Trainer


@pytest.fixture(scope="module")
def spec():
    return default_body(sensor_count=256)


@pytest.fixture(scope="module")
def full_spec():
    return default_body()


def test_untrained_policy_is_deterministic(spec):
    policy = untrained_policy("selftouch", seed=3)
    obs = (np.zeros(68, dtype=np.float32),
           np.linspace(-1, 1, 44).astype(np.float32))
    a = policy.act(obs)
    b = policy.act(obs)
    np.testing.assert_array_equal(a, b)
    assert a.shape == (22,)


def test_stochastic_actions_differ_from_mean(spec):
    policy = untrained_policy("selftouch", seed=3)
    obs = (np.zeros(68, dtype=np.float32),
           np.zeros(44, dtype=np.float32))
    rng = np.random.default_rng(0)
    assert not np.array_equal(policy.act(obs, rng), policy.act(obs))


def test_selftouch_report_consistency(spec):
    policy = untrained_policy("selftouch", seed=1)
    report = evaluate_selftouch(policy, spec, episodes=3, episode_length=20,
                                seed=5, stochastic=True)
    assert len(report.unique_parts) == 3
    assert report.mean_unique == pytest.approx(np.mean(report.unique_parts))
    for left, right, bal in zip(report.left_hand_parts,
                                report.right_hand_parts, report.balance):
        assert bal == abs(left - right)
    assert len(report.union_groups) <= 68
    assert report.coverage_68 == len(report.union_groups) / 68
    assert report.coverage_34 == len(report.union_parts) / 34
    assert {spec.segments[j].part for j in report.union_groups} == \
        report.union_parts


def test_selftouch_eval_deterministic(spec):
    policy = untrained_policy("selftouch", seed=2)
    a = evaluate_selftouch(policy, spec, episodes=2, episode_length=15, seed=7)
    b = evaluate_selftouch(policy, spec, episodes=2, episode_length=15, seed=7)
    assert a.unique_parts == b.unique_parts
    assert a.union_groups == b.union_groups


def test_selftouch_csv_round_trip(spec, tmp_path):
    policy = untrained_policy("selftouch", seed=1)
    report = evaluate_selftouch(policy, spec, episodes=2, episode_length=10,
                                seed=3)
    path = tmp_path / "report.csv"
    report.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "episode,unique_parts,left_hand,right_hand,balance"
    assert len(lines) == 1 + 2 + 3          # header, episodes, summary rows
    assert lines[-3].startswith("mean,")


def test_handregard_report_pairs(full_spec):
    policy = untrained_policy("handregard", seed=1)
    from crib_lab.vision import seed_hand_model
    report = evaluate_handregard(policy, seed_hand_model(), full_spec,
                                 episodes=1, steps=5, seed=0)
    assert set(report.visibility) == {
        (eye, hand) for eye in ("left_eye", "right_eye")
        for hand in ("left_hand", "right_hand")}
    assert all(0.0 <= v <= 100.0 for v in report.visibility.values())
    assert report.average == pytest.approx(
        np.mean(list(report.visibility.values())))
    assert report.best_pair == max(report.visibility.values())


def test_load_policy_round_trip(tmp_path):
    cfg = RunConfig(behavior="selftouch", seed=4, total_steps=0,
                    sensor_count=256, out_dir=str(tmp_path / "run"),
                    ppo=PpoConfig(rollout_steps=20))
    trainer = Trainer(cfg)
    path = trainer.train()
    policy, meta, model = load_policy(path)
    assert meta["behavior"] == "selftouch"
    assert model is None
    obs = (np.zeros(68, dtype=np.float32), np.ones(44, dtype=np.float32))
    parts = list(obs)
    raw = parts[-1].astype(float)
    parts[-1] = trainer.norm.normalize(raw).astype(np.float32)
    mu, _, _ = trainer.net.forward(*[p[None] for p in parts])
    np.testing.assert_array_equal(policy.act(obs), mu[0].astype(float))


def test_load_policy_handregard_carries_model(tmp_path):
    cfg = RunConfig(behavior="handregard", seed=4, total_steps=0,
                    babble_steps=40, out_dir=str(tmp_path / "run"),
                    ppo=PpoConfig(rollout_steps=20))
    path = Trainer(cfg).train()
    policy, meta, model = load_policy(path)
    assert meta["behavior"] == "handregard"
    assert model is not None
    assert model.hue_lo < model.hue_hi


@pytest.mark.slow
def test_ablation_harness(tmp_path):
    base = RunConfig(behavior="selftouch", sensor_count=256, total_steps=40,
                     episode_length=10, checkpoint_every=0,
                     out_dir=str(tmp_path),
                     ppo=PpoConfig(rollout_steps=20, minibatch_size=10,
                                   epochs=1))
    rows, aggregates = run_ablation(base, seeds=(1, 2, 3), eval_episodes=2)
    assert len(rows) == 9
    assert set(aggregates) == {"curriculum", "fixed", "random"}
    for variant in aggregates:
        per_seed = [r.coverage_34 for r in rows if r.variant == variant]
        assert aggregates[variant] == pytest.approx(np.mean(per_seed))
    out = tmp_path / "ablation.csv"
    write_ablation_csv(out, rows, aggregates)
    lines = out.read_text().splitlines()
    assert len(lines) == 1 + 9 + 3
    with pytest.raises(ValueError):
        run_ablation(base, seeds=(1, 2))
