"""Harness: oracle values, baselines, config files, CLI, emitted artifacts."""

import json
import math
import os
import subprocess
import sys

import pytest

from uavcov import experiment
from uavcov.channel import (EnvConstants, effective_power, link_geometry,
                            los_probability, received_power)
from uavcov.cli import main
from uavcov.config import (ConfigError, build_config, config_hash, dump_config,
                           parse_config_text)
from uavcov.experiment import (CsvWriter, OracleBlocks, oracle_min_blocks,
                               read_csv, run_single)

CONSTS = EnvConstants()

TINY = dict(n_ues=6, frames=2, episodes=2, steps_per_episode=15, batch_size=8,
            buffer_capacity=64, warmup_transitions=8, update_interval=2,
            hidden=(8, 8), seeds=[1], eval_steps=10)


def tiny_config(**kw):
    overrides = dict(TINY)
    overrides.update(kw)
    return build_config(overrides)


def test_oracle_single_block():
    # per-block rate at this SINR (~6.8e5 bits/s) exceeds a 1e5 threshold
    got = oracle_min_blocks(1e-3, 0.0, 4e-15, 1e5, 1.8e4, 200)
    assert got.blocks == 1.0 and got.within_budget


def test_oracle_zero_power_infeasible():
    got = oracle_min_blocks(0.0, 0.0, 4e-15, 5e6, 1.8e4, 200)
    assert math.isinf(got.blocks) and not got.feasible


def test_oracle_budget_marker():
    # SINR of 1: one block carries 18 kbit/s, needing 278 of the 200 blocks
    got = oracle_min_blocks(4e-15, 0.0, 4e-15, 5e6, 1.8e4, 200)
    assert got.blocks == 278.0 and not got.within_budget
    assert not got.feasible


def test_oracle_vertical_link_fifteen_blocks():
    # 300 m overhead link, 0.1 W, unit fading, recomputed end to end
    geom = link_geometry((0.0, 0.0), (0.0, 0.0, 300.0))
    p_los = los_probability(geom.theta, CONSTS)
    p_eff = effective_power(
        p_los,
        received_power(0.1, geom.r, 1.0, CONSTS.alpha_los),
        received_power(0.1, geom.r, 1.0, CONSTS.alpha_nlos),
    )
    got = oracle_min_blocks(p_eff, 0.0, CONSTS.noise_power, 5e6, 1.8e4, 200)
    assert got == OracleBlocks(blocks=15.0, within_budget=True)


def test_config_defaults_match_tables():
    cfg = build_config({"profile": "full"})
    assert cfg.env.n_ues == 30 and cfg.env.k_max == 5
    assert cfg.env.p_max == 1.0 and cfg.env.b_max == 3.6e6
    assert cfg.env.block_size == 1.8e4 and cfg.env.block_limit == 200
    assert cfg.env.h_min == 300.0 and cfg.env.h_max == 1000.0
    assert cfg.constants.b == 0.136 and cfg.constants.c == 11.95
    assert cfg.constants.alpha_los == 3.0 and cfg.constants.alpha_nlos == 4.0
    assert cfg.constants.noise_power == 4e-15
    assert cfg.cell_size_m == 300.0 and cfg.attraction_prob == 0.4
    assert cfg.n_attraction_points == 3
    assert cfg.schedule.episodes == 100 and cfg.schedule.steps_per_episode == 500
    assert cfg.schedule.batch_size == 512 and cfg.schedule.buffer_capacity == 100_000
    assert cfg.schedule.lr == 1e-4 and cfg.schedule.gamma == 0.99
    assert cfg.schedule.tau == 0.01 and cfg.schedule.hidden == (64, 64)
    assert cfg.schedule.warmup_transitions == 2500


def test_config_roundtrip_and_hash():
    cfg = tiny_config(r_th=7.5e6)
    text = dump_config(cfg)
    reparsed = build_config(parse_config_text(text))
    assert dump_config(reparsed) == text
    assert config_hash(reparsed) == config_hash(cfg)
    moved = build_config({**parse_config_text(text), "out_dir": "elsewhere"})
    assert config_hash(moved) == config_hash(cfg)


def test_config_unknown_key_named():
    with pytest.raises(ConfigError, match="bogus_key"):
        parse_config_text("bogus_key = 3\n")
    with pytest.raises(ConfigError, match="block_limit"):
        parse_config_text("block_limit = many\n")


def test_csv_round_trip(tmp_path):
    path = str(tmp_path / "t.csv")
    w = CsvWriter(path, ["a", "b"])
    rows = [(1, 0.5), (2, 1.0 / 3.0), (3, 2.9e-15)]
    for r in rows:
        w.row(*r)
    w.close()
    header, got = read_csv(path)
    assert header == ["a", "b"]
    for (a, b), (ga, gb) in zip(rows, got):
        assert ga == a and gb == b


def test_static_single_ue_clusters_get_everything(tmp_path):
    cfg = tiny_config(n_ues=2, k_max=2, frames=1)
    summary = run_single(cfg, "static", 4, quiet=True)
    assert summary.frames[0]["k_star"] in (1, 2)
    # rebuild the final world state through the API for the structural claim
    from conftest import build_world
    world = build_world([[0.0, 0.0], [20000.0, 20000.0]], [0, 1], k_max=2)
    world.reset_episode(equal_blocks=True)
    for j in world.active_idx:
        agent = world.agents[j]
        assert agent.power_alloc[0] == pytest.approx(1.0)
        assert agent.blocks[0] == 200


def test_static_threshold_monotonicity():
    low = run_single(tiny_config(method="static", r_th=5e6), "static", 7, quiet=True)
    high = run_single(tiny_config(method="static", r_th=1e7), "static", 7, quiet=True)
    for a, b in zip(high.served_by_frame, low.served_by_frame):
        assert a <= b


def test_run_single_writes_all_files(tmp_path):
    cfg = tiny_config(out_dir=str(tmp_path))
    out = str(tmp_path / "flare_seed1")
    summary = run_single(cfg, "flare", 1, out, quiet=True)
    for name in ("trajectories.csv", "clusters.csv", "metrics.csv", "rewards.csv",
                 "search_steps.csv", "summary.json", "config.txt"):
        assert os.path.exists(os.path.join(out, name)), name
    with open(os.path.join(out, "summary.json")) as fh:
        doc = json.load(fh)
    assert doc["method"] == "flare" and doc["seed"] == 1
    assert doc["config_hash"] == summary.config_hash
    assert len(doc["frames"]) == cfg.frames
    for f in doc["frames"]:
        assert 0 <= f["served_total"] <= cfg.env.n_ues
        assert 1 <= f["k_star"] <= cfg.env.k_max
    assert set(doc["audit"]) == {"C1", "C4", "C5", "C6", "C7"}
    header, rows = read_csv(os.path.join(out, "trajectories.csv"))
    assert header == ["frame", "ue_id", "grid_x", "grid_y", "x_m", "y_m"]
    assert len(rows) == cfg.frames * cfg.env.n_ues


def test_methods_share_world_streams(tmp_path):
    cfg = tiny_config(out_dir=str(tmp_path))
    for method in ("flare", "maddpg_only", "static"):
        run_single(cfg, method, 5, str(tmp_path / f"{method}_seed5"), quiet=True)
    ref_traj = open(tmp_path / "flare_seed5" / "trajectories.csv", "rb").read()
    ref_clus = open(tmp_path / "flare_seed5" / "clusters.csv", "rb").read()
    for method in ("maddpg_only", "static"):
        assert open(tmp_path / f"{method}_seed5" / "trajectories.csv", "rb").read() == ref_traj
        assert open(tmp_path / f"{method}_seed5" / "clusters.csv", "rb").read() == ref_clus


def test_maddpg_only_allocates_no_dqn(monkeypatch, tmp_path):
    def boom(*a, **kw):
        raise AssertionError("DQN pool allocated for maddpg_only")

    monkeypatch.setattr(experiment, "DqnPool", boom)
    cfg = tiny_config()
    summary = run_single(cfg, "maddpg_only", 2, str(tmp_path / "m2"), quiet=True)
    assert summary.episode_search_steps == []
    assert not os.path.exists(tmp_path / "m2" / "search_steps.csv")


def test_maddpg_only_learned_bw_head(tmp_path):
    cfg = tiny_config(maddpg_bw_mode="learned")
    summary = run_single(cfg, "maddpg_only", 3, quiet=True)
    assert all(0 <= f["served_total"] <= cfg.env.n_ues for f in summary.frames)
    assert all(v == 0 for v in summary.audit.values())


def test_run_determinism_api(tmp_path):
    cfg = tiny_config(out_dir=str(tmp_path))
    a = run_single(cfg, "flare", 9, str(tmp_path / "a"), quiet=True)
    b = run_single(cfg, "flare", 9, str(tmp_path / "b"), quiet=True)
    assert a.served_by_frame == b.served_by_frame
    assert a.episode_rewards == b.episode_rewards
    for name in ("trajectories.csv", "clusters.csv", "metrics.csv", "rewards.csv",
                 "search_steps.csv", "summary.json"):
        assert open(tmp_path / "a" / name, "rb").read() == open(tmp_path / "b" / name, "rb").read()


def test_local_critic_mode_runs():
    cfg = tiny_config(critic_mode="local")
    summary = run_single(cfg, "flare", 1, quiet=True)
    assert len(summary.episode_rewards) == cfg.frames * cfg.schedule.episodes


def test_cli_simulate_and_oracle(tmp_path):
    out = str(tmp_path / "sim")
    code = main(["simulate", "--frames", "3", "--seed", "7", "--out", out])
    assert code == 0
    run_dir = os.path.join(out, "simulate_seed7")
    assert os.path.exists(os.path.join(run_dir, "trajectories.csv"))
    assert os.path.exists(os.path.join(run_dir, "clusters.csv"))
    assert not os.path.exists(os.path.join(run_dir, "metrics.csv"))
    assert main(["oracle", "--config", "default"]) == 0


def test_cli_train_tiny(tmp_path):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text("".join(f"{k} = {v if not isinstance(v, (list, tuple)) else ','.join(map(str, v))}\n"
                                for k, v in TINY.items()))
    code = main(["train", "--config", str(cfg_path), "--method", "flare",
                 "--rate-threshold", "5000000", "--out", str(tmp_path / "runs")])
    assert code == 0
    assert os.path.exists(tmp_path / "runs" / "flare_seed1" / "summary.json")


def test_cli_invalid_config_names_key(tmp_path, capsys):
    cfg_path = tmp_path / "bad.cfg"
    cfg_path.write_text("not_a_real_key = 1\n")
    code = main(["train", "--config", str(cfg_path)])
    assert code != 0
    assert "not_a_real_key" in capsys.readouterr().err


def test_cli_unknown_flag_nonzero():
    proc = subprocess.run([sys.executable, "-m", "uavcov.cli", "train", "--bogus"],
                          capture_output=True, text=True)
    assert proc.returncode != 0


def test_cli_help_documents_flags():
    proc = subprocess.run([sys.executable, "-m", "uavcov.cli", "train", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    for flag in ("--config", "--seed", "--method", "--rate-threshold", "--frames",
                 "--episodes", "--out"):
        assert flag in proc.stdout


def test_run_experiment_comparison(tmp_path):
    cfg = tiny_config(out_dir=str(tmp_path), seeds=[1, 2])
    comparison = experiment.run_experiment(cfg, methods=["flare", "maddpg_only", "static"],
                                           quiet=True)
    assert os.path.exists(tmp_path / "comparison.json")
    with open(tmp_path / "comparison.json") as fh:
        doc = json.load(fh)
    assert doc == comparison
    assert set(doc["methods"]) == {"flare", "maddpg_only", "static"}
    assert doc["seeds"] == [1, 2]
    for stats in doc["methods"].values():
        assert len(stats["served_by_frame_mean"]) == cfg.frames
        assert len(stats["per_seed_mean_served"]) == 2
    assert "flare_over_maddpg_ratio" in doc


def test_cli_evaluate_tiny(tmp_path):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text("".join(
        f"{k} = {v if not isinstance(v, (list, tuple)) else ','.join(map(str, v))}\n"
        for k, v in TINY.items()))
    code = main(["evaluate", "--config", str(cfg_path), "--out", str(tmp_path / "cmp")])
    assert code == 0
    assert os.path.exists(tmp_path / "cmp" / "comparison.json")
    for method in ("flare", "maddpg_only", "static"):
        assert os.path.exists(tmp_path / "cmp" / f"{method}_seed1" / "summary.json")


def test_cli_train_checkpoint_flag(tmp_path):
    cfg_path = tmp_path / "tiny.cfg"
    cfg_path.write_text("".join(
        f"{k} = {v if not isinstance(v, (list, tuple)) else ','.join(map(str, v))}\n"
        for k, v in TINY.items()))
    code = main(["train", "--config", str(cfg_path), "--method", "maddpg_only",
                 "--out", str(tmp_path / "runs"), "--checkpoint"])
    assert code == 0
    ck = tmp_path / "runs" / "maddpg_only_seed1" / "checkpoint.bin"
    assert ck.exists()
    from uavcov.learn import CHECKPOINT_MAGIC
    assert ck.read_bytes().startswith(CHECKPOINT_MAGIC)


def test_run_single_cleans_partial_output(tmp_path, monkeypatch):
    cfg = tiny_config()
    out = tmp_path / "doomed"
    calls = {"n": 0}
    original = experiment.CsvWriter.row

    def flaky(self, *values):
        calls["n"] += 1
        if calls["n"] > 10:
            raise OSError("disk full")
        return original(self, *values)

    monkeypatch.setattr(experiment.CsvWriter, "row", flaky)
    with pytest.raises(OSError):
        experiment.run_single(cfg, "static", 1, str(out), quiet=True)
    assert not out.exists()
