"""Experiment harness: frame loop, baselines, oracle, file emission.

A run is (config, method, seed). Mobility, clustering and fading randomness
are derived from the seed through named streams, so the three methods see
identical worlds and differ only in their decisions; paired comparisons are
therefore meaningful seed by seed.

Outputs per run directory: trajectories.csv, clusters.csv, metrics.csv,
rewards.csv, search_steps.csv (flare), summary.json, config.txt. All files
are deterministic functions of (config, seed); wall-clock timing is reported
on stdout only, never written into result files.
"""

import json
import math
import os
import shutil
import time
from dataclasses import dataclass

import numpy as np

from . import clustering, mobility, seeding
from .channel import (EnvConstants, FadingField, effective_power, link_geometry,
                      los_probability, received_power, rician_power_gain,
                      rayleigh_power_gain)
from .config import ExperimentConfig, config_hash, dump_config
from .env import EnvConfig, FrameWorld
from .learn import (DqnPool, MaddpgLearner, ReplayBuffer, TrainSchedule,
                    dqn_select_action, dqn_update, evaluate_frame_static,
                    frame_snapshot, make_qnet, save_checkpoint, train_frame)
from .mobility import GridWorld
from .nn import Adam


# ----- bandwidth oracle -----

@dataclass(frozen=True)
class OracleBlocks:
    blocks: float          # smallest sufficient block count; math.inf if rate is 0
    within_budget: bool    # False when the count exceeds the per-UAV block limit

    @property
    def feasible(self) -> bool:
        return math.isfinite(self.blocks) and self.within_budget


def oracle_min_blocks(power_eff: float, interference: float, noise: float,
                      r_th: float, block_size: float, block_limit: int) -> OracleBlocks:
    """Closed-form minimum block count meeting the rate threshold.

    Smallest integer n with n * block_size * log2(1 + SINR) >= r_th.
    """
    if r_th <= 0:
        raise ValueError("r_th must be positive")
    sinr = power_eff / (interference + noise)
    per_block = block_size * np.log2(1.0 + sinr)
    if per_block <= 0.0:
        return OracleBlocks(blocks=math.inf, within_budget=False)
    n = int(math.ceil(r_th / per_block))
    return OracleBlocks(blocks=float(n), within_budget=n <= block_limit)


# ----- deterministic file writers -----

def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(float(value))


class CsvWriter:
    def __init__(self, path: str, columns: list[str]):
        self.path = path
        self.columns = columns
        self._fh = open(path, "w", encoding="utf-8", newline="\n")
        self._fh.write(",".join(columns) + "\n")

    def row(self, *values):
        if len(values) != len(self.columns):
            raise ValueError(f"{self.path}: expected {len(self.columns)} columns")
        self._fh.write(",".join(fmt(v) for v in values) + "\n")

    def close(self):
        self._fh.close()


def read_csv(path: str) -> tuple[list[str], list[list[float]]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [[float(v) for v in line.strip().split(",")] for line in fh if line.strip()]
    return header, rows


# ----- single run -----

@dataclass
class RunSummary:
    method: str
    seed: int
    r_th: float
    config_hash: str
    frames: list[dict]
    audit: dict[str, int]
    episode_rewards: list[float]       # flattened over frames, episode order
    episode_search_steps: list[float]  # flare only, else empty
    wall_seconds: float                # reported, never written to files

    @property
    def served_by_frame(self) -> list[int]:
        return [f["served_total"] for f in self.frames]

    @property
    def mean_served(self) -> float:
        return float(np.mean(self.served_by_frame))


def _grid_for(cfg: ExperimentConfig, seed: int) -> GridWorld:
    points = cfg.attraction_points
    grid = GridWorld(width=cfg.grid_width, height=cfg.grid_height,
                     cell_size_m=cfg.cell_size_m, attraction_points=[],
                     attraction_prob=cfg.attraction_prob, frames=cfg.frames)
    if points is None:
        points = mobility.draw_attraction_points(seed, grid, cfg.n_attraction_points)
    grid.attraction_points = [tuple(p) for p in points]
    grid.__post_init__()
    return grid


def run_single(cfg: ExperimentConfig, method: str, seed: int,
               out_dir: str | None = None, quiet: bool = False,
               checkpoint: bool = False) -> RunSummary:
    """Run one method on one seed over all frames; write the run directory.

    A failure while writing removes the partially written run directory
    before the error propagates, so output directories never hold torsos.
    """
    try:
        return _run_single(cfg, method, seed, out_dir, quiet, checkpoint)
    except Exception:
        if out_dir is not None and os.path.isdir(out_dir):
            shutil.rmtree(out_dir, ignore_errors=True)
        raise


def _run_single(cfg: ExperimentConfig, method: str, seed: int,
                out_dir: str | None, quiet: bool, checkpoint: bool) -> RunSummary:
    t0 = time.perf_counter()
    env_cfg = cfg.env
    schedule = cfg.schedule
    grid = _grid_for(cfg, seed)
    field_size = ((grid.width - 1) * grid.cell_size_m, (grid.height - 1) * grid.cell_size_m)
    fading = FadingField(seed, cfg.constants, env_cfg.n_ues, env_cfg.k_max)
    init_rng = seeding.sequential_stream(seed, seeding.INIT)
    expl_rng = seeding.sequential_stream(seed, seeding.EXPLORATION)

    use_dqn = method == "flare"
    maddpg = None
    dqns = None
    if method != "static":
        bw_head = method == "maddpg_only" and cfg.maddpg_bw_mode == "learned"
        maddpg = MaddpgLearner(env_cfg, schedule, init_rng, bw_head=bw_head)
    if use_dqn:
        dqns = DqnPool(env_cfg, schedule, init_rng)

    writers = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        writers = {
            "traj": CsvWriter(os.path.join(out_dir, "trajectories.csv"),
                              ["frame", "ue_id", "grid_x", "grid_y", "x_m", "y_m"]),
            "clusters": CsvWriter(os.path.join(out_dir, "clusters.csv"),
                                  ["frame", "ue_id", "cluster", "centroid_x",
                                   "centroid_y", "k_star", "mean_silhouette"]),
            "metrics": CsvWriter(os.path.join(out_dir, "metrics.csv"),
                                 ["frame", "episode", "timestep", "uav_id",
                                  "served_count", "reward", "sum_power_w", "sum_blocks"]),
            "rewards": CsvWriter(os.path.join(out_dir, "rewards.csv"),
                                 ["frame", "episode", "mean_reward"]),
        }
        if use_dqn:
            writers["search"] = CsvWriter(os.path.join(out_dir, "search_steps.csv"),
                                          ["frame", "episode", "mean_search_steps"])
        extra = {"seed": seed, "method": method}
        with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
            fh.write(dump_config(cfg, extra))
    run_hash = config_hash(cfg, {"seed": seed, "method": method})

    state = mobility.init_positions(env_cfg.n_ues, grid, seed)
    prev_centroids: dict[int, np.ndarray] = {}
    frames_out = []
    audit_total = {c: 0 for c in ("C1", "C4", "C5", "C6", "C7")}
    episode_rewards: list[float] = []
    episode_search: list[float] = []
    total_steps = cfg.frames * schedule.episodes * schedule.steps_per_episode
    altitude_init = (env_cfg.h_min + env_cfg.h_max) / 2.0

    def metrics_sink_factory(writer):
        # served_count is the episode's committed coverage; reward is the
        # instantaneous served count at the logged step.
        def sink(world, episode, timestep):
            interval = cfg.metrics_interval
            if interval > 0 and episode % interval != 0:
                return
            for j in world.active_idx:
                agent = world.agents[j]
                committed = int(agent.frozen[: agent.n_slots].sum())
                reward = int(agent.served[: agent.n_slots].sum())
                writer.row(world.frame, episode, timestep, j, committed, reward,
                           float(agent.power_alloc.sum()), int(agent.blocks.sum()))
        return sink

    for frame in range(cfg.frames):
        state = mobility.step_frame(state, grid, seed, frame)
        pts = mobility.to_physical(state.positions, grid.cell_size_m)
        clu_rng = seeding.counter_stream(seed, seeding.CLUSTERING, (frame,))
        plan = clustering.select_k(pts, env_cfg.k_max, clu_rng)
        plan = clustering.match_to_previous(plan, prev_centroids, env_cfg.k_max)
        uav_xyz, active = clustering.place_uavs(plan, altitude_init, env_cfg.k_max)
        prev_centroids = {plan.active_uavs[c]: plan.centroids[c].copy()
                          for c in range(plan.k_star)}

        world = FrameWorld(env_cfg, cfg.constants, pts, plan, uav_xyz, active,
                           fading, frame, field_size)

        if writers is not None:
            for i in range(env_cfg.n_ues):
                gx, gy = int(state.positions[i, 0]), int(state.positions[i, 1])
                writers["traj"].row(frame, i, gx, gy, pts[i, 0], pts[i, 1])
            for i in range(env_cfg.n_ues):
                c = int(plan.assignment[i])
                writers["clusters"].row(frame, i, c, plan.centroids[c, 0],
                                        plan.centroids[c, 1], plan.k_star,
                                        plan.silhouette_mean)

        if method != "static":
            maddpg.buffer.clear()
            if dqns is not None:
                dqns.clear_buffers()
            sink = metrics_sink_factory(writers["metrics"]) if writers else None
            records = train_frame(world, maddpg, dqns, schedule, expl_rng,
                                  step_offset=frame * schedule.episodes * schedule.steps_per_episode,
                                  total_steps=total_steps, metrics_sink=sink)
            for rec in records:
                episode_rewards.append(rec.mean_reward)
                if writers is not None:
                    writers["rewards"].row(frame, rec.episode, rec.mean_reward)
                if use_dqn:
                    episode_search.append(rec.mean_search_steps)
                    if writers is not None:
                        writers["search"].row(frame, rec.episode, rec.mean_search_steps)
            # the frame's coverage: committed count averaged over the closing
            # episodes of the search (one episode is a noisy sample of it)
            result = frame_snapshot(world)
            tail = records[-min(5, len(records)):]
            result.served_total = float(np.mean([r.committed for r in tail]))
        else:
            eval_steps = cfg.eval_steps if cfg.eval_steps > 0 else schedule.steps_per_episode
            result = evaluate_frame_static(world, schedule, eval_steps)
            if writers is not None:
                for j in world.active_idx:
                    agent = world.agents[j]
                    committed = int(agent.frozen[: agent.n_slots].sum())
                    reward = int(agent.served[: agent.n_slots].sum())
                    writers["metrics"].row(frame, 0, schedule.steps_per_episode - 1, j,
                                           committed, reward,
                                           float(agent.power_alloc.sum()),
                                           int(agent.blocks.sum()))

        for c in audit_total:
            audit_total[c] += world.audit[c]
        frames_out.append({
            "frame": frame,
            "k_star": int(plan.k_star),
            "mean_silhouette": float(plan.silhouette_mean),
            "served_total": float(result.served_total),
            "served_per_uav": [int(v) for v in result.served_per_agent],
            "sum_power_w": float(result.sum_power),
            "sum_blocks": int(result.sum_blocks),
            "method": method,
        })

    wall = time.perf_counter() - t0
    summary = RunSummary(
        method=method, seed=seed, r_th=float(env_cfg.r_th), config_hash=run_hash,
        frames=frames_out, audit=audit_total, episode_rewards=episode_rewards,
        episode_search_steps=episode_search, wall_seconds=wall,
    )
    if writers is not None and checkpoint and maddpg is not None:
        save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), maddpg, dqns,
                        {"frames_completed": cfg.frames})
    if writers is not None:
        for w in writers.values():
            w.close()
        doc = {
            "method": method,
            "seed": seed,
            "r_th": float(env_cfg.r_th),
            "config_hash": run_hash,
            "frames": frames_out,
            "served_by_frame": summary.served_by_frame,
            "mean_served": summary.mean_served,
            "audit": audit_total,
        }
        with open(os.path.join(out_dir, "summary.json"), "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
    if not quiet:
        print(f"[{method} seed={seed}] mean served {summary.mean_served:.2f} "
              f"over {cfg.frames} frames ({wall:.1f}s)")
    return summary


def run_experiment(cfg: ExperimentConfig, methods: list[str] | None = None,
                   quiet: bool = False, checkpoint: bool = False) -> dict:
    """Run the configured seeds (and methods) and write a comparison summary."""
    methods = methods or [cfg.method]
    results: dict[str, list[RunSummary]] = {m: [] for m in methods}
    for method in methods:
        for seed in cfg.seeds:
            out = os.path.join(cfg.out_dir, f"{method}_seed{seed}")
            results[method].append(run_single(cfg, method, seed, out, quiet=quiet,
                                              checkpoint=checkpoint))
    comparison = {
        "r_th": float(cfg.env.r_th),
        "seeds": list(cfg.seeds),
        "methods": {},
    }
    for method, summaries in results.items():
        per_frame = np.mean([s.served_by_frame for s in summaries], axis=0)
        comparison["methods"][method] = {
            "mean_served": float(np.mean([s.mean_served for s in summaries])),
            "served_by_frame_mean": [float(v) for v in per_frame],
            "per_seed_mean_served": [float(s.mean_served) for s in summaries],
        }
    if "flare" in results and "maddpg_only" in results:
        base = comparison["methods"]["maddpg_only"]["mean_served"]
        ours = comparison["methods"]["flare"]["mean_served"]
        comparison["flare_over_maddpg_ratio"] = float(ours / base) if base > 0 else math.inf
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "comparison.json"), "w", encoding="utf-8") as fh:
        json.dump(comparison, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return comparison


# ----- mobility/clustering-only runs -----

def run_simulation(cfg: ExperimentConfig, seed: int, out_dir: str):
    """Mobility and clustering streams only (no radio, no learning)."""
    env_cfg = cfg.env
    grid = _grid_for(cfg, seed)
    os.makedirs(out_dir, exist_ok=True)
    traj = CsvWriter(os.path.join(out_dir, "trajectories.csv"),
                     ["frame", "ue_id", "grid_x", "grid_y", "x_m", "y_m"])
    clus = CsvWriter(os.path.join(out_dir, "clusters.csv"),
                     ["frame", "ue_id", "cluster", "centroid_x", "centroid_y",
                      "k_star", "mean_silhouette"])
    state = mobility.init_positions(env_cfg.n_ues, grid, seed)
    prev: dict[int, np.ndarray] = {}
    for frame in range(cfg.frames):
        state = mobility.step_frame(state, grid, seed, frame)
        pts = mobility.to_physical(state.positions, grid.cell_size_m)
        clu_rng = seeding.counter_stream(seed, seeding.CLUSTERING, (frame,))
        plan = clustering.select_k(pts, env_cfg.k_max, clu_rng)
        plan = clustering.match_to_previous(plan, prev, env_cfg.k_max)
        prev = {plan.active_uavs[c]: plan.centroids[c].copy() for c in range(plan.k_star)}
        for i in range(env_cfg.n_ues):
            gx, gy = int(state.positions[i, 0]), int(state.positions[i, 1])
            traj.row(frame, i, gx, gy, pts[i, 0], pts[i, 1])
            c = int(plan.assignment[i])
            clus.row(frame, i, c, plan.centroids[c, 0], plan.centroids[c, 1],
                     plan.k_star, plan.silhouette_mean)
    traj.close()
    clus.close()
    with open(os.path.join(out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(dump_config(cfg, {"seed": seed, "method": "simulate"}))


# ----- oracle table -----

def oracle_table(cfg: ExperimentConfig, out_path: str | None = None) -> list[dict]:
    """Minimum blocks over a horizontal-distance grid at nominal conditions.

    Unit fading, no interference, equal-share power at mid altitude: the
    reference curve for judging learned block allocations.
    """
    env_cfg = cfg.env
    consts = cfg.constants
    h = (env_cfg.h_min + env_cfg.h_max) / 2.0
    p_tx = env_cfg.p_max / max(1, env_cfg.n_ues // env_cfg.k_max)
    rows = []
    for d in range(0, 3001, 250):
        geom = link_geometry((0.0, 0.0), (float(d), 0.0, h))
        p_los = los_probability(geom.theta, consts)
        p_eff = effective_power(
            p_los,
            received_power(p_tx, geom.r, 1.0, consts.alpha_los),
            received_power(p_tx, geom.r, 1.0, consts.alpha_nlos),
        )
        oracle = oracle_min_blocks(p_eff, 0.0, consts.noise_power, env_cfg.r_th,
                                   env_cfg.block_size, env_cfg.block_limit)
        rows.append({
            "distance_m": float(d),
            "altitude_m": float(h),
            "p_tx_w": float(p_tx),
            "blocks": oracle.blocks,
            "within_budget": oracle.within_budget,
        })
    if out_path:
        writer = CsvWriter(out_path, ["distance_m", "altitude_m", "p_tx_w",
                                      "blocks", "within_budget"])
        for r in rows:
            blocks = r["blocks"] if math.isfinite(r["blocks"]) else -1
            writer.row(r["distance_m"], r["altitude_m"], r["p_tx_w"], blocks,
                       int(r["within_budget"]))
        writer.close()
    return rows


# ----- single-link block-search benchmark -----

@dataclass
class LinkOutcome:
    oracle_blocks: int
    frozen_blocks: int | None          # greedy-policy result; None if never served
    search_steps: list[float]          # per training episode


def sample_static_link(rng: np.random.Generator, env_cfg: EnvConfig,
                       consts: EnvConstants) -> float:
    """Random static link with frozen fading; returns its per-block rate (bits/s).

    Geometry, power and fading are drawn until the oracle block count lands in
    a range a +-1 search can explore within a few hundred steps.
    """
    while True:
        d = rng.uniform(0.0, 1500.0)
        h = rng.uniform(env_cfg.h_min, env_cfg.h_max)
        p_tx = rng.uniform(0.1, env_cfg.p_max)
        g = rician_power_gain(rng, consts.rician_k_db)
        k = rayleigh_power_gain(rng)
        geom = link_geometry((0.0, 0.0), (d, 0.0, h))
        p_los = los_probability(geom.theta, consts)
        p_eff = effective_power(
            p_los,
            received_power(p_tx, geom.r, g, consts.alpha_los),
            received_power(p_tx, geom.r, k, consts.alpha_nlos),
        )
        per_block = env_cfg.block_size * np.log2(1.0 + p_eff / consts.noise_power)
        if per_block <= 0.0:
            continue
        n = math.ceil(env_cfg.r_th / per_block)
        if 3 <= n <= 120:
            return float(per_block)


def block_search_benchmark(n_links: int, env_cfg: EnvConfig, consts: EnvConstants,
                           schedule: TrainSchedule, master_seed: int,
                           quiet: bool = True) -> list[LinkOutcome]:
    """Train one DQN per randomized static link and compare to the oracle.

    State is [blocks/limit, served]; reward 1 on meeting the threshold, at
    which point the search episode ends. After training, a greedy rollout
    from zero blocks gives the frozen count compared against the closed form.
    """
    link_rng = seeding.sequential_stream(master_seed, "benchmark-links")
    expl_rng = seeding.sequential_stream(master_seed, "benchmark-expl")
    init_rng = seeding.sequential_stream(master_seed, "benchmark-init")
    outcomes = []
    total = schedule.episodes * schedule.steps_per_episode
    for li in range(n_links):
        per_block = sample_static_link(link_rng, env_cfg, consts)
        oracle_n = math.ceil(env_cfg.r_th / per_block)
        net = make_qnet(2, schedule, init_rng)
        target = net.clone()
        opt = Adam(net.params, schedule.dqn_lr)
        buf_cap = min(schedule.buffer_capacity, total)
        buffer = ReplayBuffer(buf_cap, {"state": 2, "action": 1, "reward": 1,
                                        "next_state": 2, "done": 1})
        search_steps = []
        gstep = 0
        for _ in range(schedule.episodes):
            blocks = 0
            served = False
            steps_used = schedule.steps_per_episode
            for t in range(schedule.steps_per_episode):
                eps = schedule.eps_at(gstep, total)
                state = np.array([blocks / env_cfg.block_limit, 0.0])
                a_idx = dqn_select_action(net, state, eps, expl_rng)
                blocks = min(max(blocks + (1 if a_idx == 0 else -1), 0), env_cfg.block_limit)
                rate = blocks * per_block
                served = rate >= env_cfg.r_th
                done = served or t == schedule.steps_per_episode - 1
                buffer.add(state=state, action=a_idx, reward=float(served),
                           next_state=np.array([blocks / env_cfg.block_limit, float(served)]),
                           done=float(done))
                gstep += 1
                if (t + 1) % schedule.update_interval == 0 and \
                        len(buffer) >= max(schedule.batch_size, schedule.warmup_transitions):
                    dqn_update(net, target, opt, buffer.sample(schedule.batch_size, expl_rng),
                               schedule)
                if served:
                    steps_used = t + 1
                    break
            search_steps.append(float(steps_used))
        # Greedy rollout: the frozen count is where the policy first serves.
        blocks = 0
        frozen = None
        for _ in range(schedule.steps_per_episode):
            state = np.array([blocks / env_cfg.block_limit, 0.0])
            a_idx = int(np.argmax(net.forward(state)))
            blocks = min(max(blocks + (1 if a_idx == 0 else -1), 0), env_cfg.block_limit)
            if blocks * per_block >= env_cfg.r_th:
                frozen = blocks
                break
        outcomes.append(LinkOutcome(oracle_blocks=oracle_n, frozen_blocks=frozen,
                                    search_steps=search_steps))
        if not quiet:
            print(f"link {li}: oracle={oracle_n} frozen={frozen} "
                  f"first10={np.mean(search_steps[:10]):.1f} "
                  f"last10={np.mean(search_steps[-10:]):.1f}")
    return outcomes
