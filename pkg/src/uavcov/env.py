"""Multi-agent decision environment for one mobility frame.

A FrameWorld snapshots the users, clusters and UAV placements of a single
frame and exposes the per-timestep machinery: observation vectors, mapping of
raw network outputs onto feasible actions (power simplex, altitude interval,
block budget), rate/reward evaluation, and the serve-and-freeze bookkeeping.

Feasibility is enforced by construction: powers come from a masked softmax
scaled to the budget, altitude from a squashed affine map, block edits are
clamped to the remaining budget, and UAV horizontal positions are cluster
centroids of in-field points. Every evaluation additionally audits the
budget/coverage constraints and counts violations (expected zero).
"""

from dataclasses import dataclass

import numpy as np

from . import channel
from .channel import EnvConstants
from .clustering import ClusterPlan


@dataclass
class EnvConfig:
    n_ues: int = 30
    k_max: int = 5
    p_max: float = 1.0            # W per UAV
    b_max: float = 3.6e6          # Hz per UAV
    block_size: float = 1.8e4     # Hz per resource block
    block_limit: int = 200        # blocks per UAV
    h_min: float = 300.0          # m
    h_max: float = 1000.0         # m
    r_th: float = 5e6             # bits/s service threshold
    max_cluster_size: int = 0     # 0 means n_ues (worst case)
    p_avg_mode: str = "budget"    # interference power: "budget" or "allocated"

    def __post_init__(self):
        if self.max_cluster_size <= 0:
            self.max_cluster_size = self.n_ues
        if abs(self.block_limit * self.block_size - self.b_max) > 1e-6:
            raise ValueError("block_limit * block_size must equal b_max")
        if not self.h_min < self.h_max:
            raise ValueError("h_min must be below h_max")
        if self.p_max <= 0:
            raise ValueError("p_max must be positive")
        if self.r_th <= 0:
            raise ValueError("r_th must be positive")
        if self.p_avg_mode not in ("budget", "allocated"):
            raise ValueError(f"unknown p_avg_mode: {self.p_avg_mode}")

    @property
    def slots(self) -> int:
        return self.max_cluster_size

    @property
    def obs_dim(self) -> int:
        # altitude + per-slot power + per-slot blocks + served ratio + size ratio
        return 2 * self.slots + 3

    @property
    def dqn_obs_dim(self) -> int:
        return self.obs_dim + 4

    def act_dim(self, bw_head: bool = False) -> int:
        return 1 + self.slots + (self.slots if bw_head else 0)


def map_altitude(raw: float, h_min: float, h_max: float) -> float:
    """Squash an unbounded actor output into [h_min, h_max]."""
    if not np.isfinite(raw):
        raise ValueError("raw altitude output must be finite")
    return h_min + (np.tanh(raw) + 1.0) / 2.0 * (h_max - h_min)


def map_power(logits, mask, p_max: float) -> np.ndarray:
    """Masked softmax over active slots scaled to the full power budget.

    Inactive slots get exactly zero; active slots sum to p_max.
    """
    z = np.asarray(logits, dtype=float)
    m = np.asarray(mask, dtype=bool)
    if not np.any(m):
        raise ValueError("at least one slot must be active")
    out = np.zeros_like(z)
    active = z[m]
    active = np.exp(active - active.max())
    out[m] = active / active.sum() * p_max
    return out


def masked_softmax(logits, mask) -> np.ndarray:
    """Softmax over active slots only; inactive slots get 0."""
    return map_power(logits, mask, 1.0)


@dataclass
class UavAgent:
    index: int
    active: bool
    xy: np.ndarray            # (2,) m
    h: float                  # m
    slot_ues: np.ndarray      # (slots,) UE index or -1 padding
    n_slots: int
    power_alloc: np.ndarray   # (slots,) W
    blocks: np.ndarray        # (slots,) int
    served: np.ndarray        # (slots,) bool
    frozen: np.ndarray        # (slots,) bool

    @property
    def mask(self) -> np.ndarray:
        return self.slot_ues >= 0


class FrameWorld:
    """Mutable per-frame state of all agents plus the evaluation machinery."""

    def __init__(self, cfg: EnvConfig, constants: EnvConstants, ue_xy_m: np.ndarray,
                 plan: ClusterPlan, uav_xyz: np.ndarray, active: np.ndarray,
                 fading: channel.FadingField, frame: int, field_size_m: tuple[float, float]):
        self.cfg = cfg
        self.constants = constants
        self.ue_xy = np.asarray(ue_xy_m, dtype=float)
        self.plan = plan
        self.frame = int(frame)
        self.fading = fading
        self.field_size_m = field_size_m
        self.audit = {c: 0 for c in ("C1", "C4", "C5", "C6", "C7")}

        S = cfg.slots
        self.agents: list[UavAgent] = []
        uav_of_cluster = {c: u for c, u in enumerate(plan.active_uavs)}
        cluster_of_uav = {u: c for c, u in uav_of_cluster.items()}
        for j in range(cfg.k_max):
            if bool(active[j]):
                members = np.flatnonzero(plan.assignment == cluster_of_uav[j])
                if members.size > S:
                    raise ValueError("cluster exceeds the configured slot count")
                slot_ues = np.full(S, -1, dtype=np.int64)
                slot_ues[: members.size] = np.sort(members)
                agent = UavAgent(
                    index=j, active=True, xy=uav_xyz[j, :2].copy(), h=float(uav_xyz[j, 2]),
                    slot_ues=slot_ues, n_slots=int(members.size),
                    power_alloc=np.zeros(S), blocks=np.zeros(S, dtype=np.int64),
                    served=np.zeros(S, dtype=bool), frozen=np.zeros(S, dtype=bool),
                )
            else:
                agent = UavAgent(
                    index=j, active=False, xy=np.zeros(2), h=0.0,
                    slot_ues=np.full(S, -1, dtype=np.int64), n_slots=0,
                    power_alloc=np.zeros(S), blocks=np.zeros(S, dtype=np.int64),
                    served=np.zeros(S, dtype=bool), frozen=np.zeros(S, dtype=bool),
                )
            self.agents.append(agent)
        self.active_idx = [a.index for a in self.agents if a.active]
        # UE -> (agent index, slot)
        self.uav_of_ue = np.full(cfg.n_ues, -1, dtype=np.int64)
        self.slot_of_ue = np.full(cfg.n_ues, -1, dtype=np.int64)
        for a in self.agents:
            for s in range(a.n_slots):
                ue = a.slot_ues[s]
                self.uav_of_ue[ue] = a.index
                self.slot_of_ue[ue] = s

    # ----- per-episode reset -----

    def reset_episode(self, equal_blocks: bool):
        """Fresh allocation state: mid altitude, uniform power, blocks 0 or equal split."""
        cfg = self.cfg
        for a in self.agents:
            if not a.active:
                continue
            a.h = (cfg.h_min + cfg.h_max) / 2.0
            a.power_alloc[:] = 0.0
            a.power_alloc[: a.n_slots] = cfg.p_max / a.n_slots
            a.blocks[:] = 0
            if equal_blocks:
                a.blocks[: a.n_slots] = cfg.block_limit // a.n_slots
            a.served[:] = False
            a.frozen[:] = False

    # ----- observations -----

    def maddpg_obs(self) -> np.ndarray:
        """(k_max, obs_dim) observation matrix; inactive agents are all-zero rows."""
        cfg = self.cfg
        out = np.zeros((cfg.k_max, cfg.obs_dim))
        for a in self.agents:
            if not a.active:
                continue
            h_norm = (a.h - cfg.h_min) / (cfg.h_max - cfg.h_min)
            out[a.index, 0] = h_norm
            out[a.index, 1: 1 + cfg.slots] = a.power_alloc / cfg.p_max
            out[a.index, 1 + cfg.slots: 1 + 2 * cfg.slots] = a.blocks / cfg.block_limit
            out[a.index, -2] = a.served[: a.n_slots].sum() / a.n_slots
            out[a.index, -1] = a.n_slots / cfg.n_ues
        return out

    def dqn_obs(self, agent_obs: np.ndarray, j: int, s: int) -> np.ndarray:
        """Per-user state: the agent observation plus this slot's own fields."""
        cfg = self.cfg
        a = self.agents[j]
        h_norm = (a.h - cfg.h_min) / (cfg.h_max - cfg.h_min)
        tail = np.array([
            h_norm,
            a.power_alloc[s] / cfg.p_max,
            a.blocks[s] / cfg.block_limit,
            1.0 if a.served[s] else 0.0,
        ])
        return np.concatenate([agent_obs, tail])

    # ----- action application -----

    def apply_maddpg_action(self, j: int, alt_raw: float, power_logits: np.ndarray,
                            bw_logits: np.ndarray | None = None) -> np.ndarray:
        """Map raw actor outputs into feasible altitude/power (and optional blocks).

        Returns the normalized action vector stored for the critics:
        [altitude01, power fractions (, bandwidth fractions)]. The optional
        bandwidth head shares the masked-softmax mapping; its fractions are
        quantized down to whole blocks, so the budget holds by construction.
        """
        cfg = self.cfg
        a = self.agents[j]
        a.h = map_altitude(float(alt_raw), cfg.h_min, cfg.h_max)
        fracs = masked_softmax(power_logits, a.mask)
        a.power_alloc = fracs * cfg.p_max
        alt01 = (a.h - cfg.h_min) / (cfg.h_max - cfg.h_min)
        if bw_logits is None:
            return np.concatenate([[alt01], fracs])
        bw_fracs = masked_softmax(bw_logits, a.mask)
        a.blocks = np.floor(bw_fracs * cfg.block_limit).astype(np.int64)
        return np.concatenate([[alt01], fracs, bw_fracs])

    def apply_block_action(self, j: int, s: int, action: int):
        """Increment/decrement one slot's blocks within the shared budget.

        Frozen slots ignore actions; the result is clamped to
        [0, block_limit - sum(other slots)] so the budget always holds.
        """
        a = self.agents[j]
        if a.frozen[s]:
            return
        remaining = self.cfg.block_limit - (int(a.blocks.sum()) - int(a.blocks[s]))
        a.blocks[s] = min(max(int(a.blocks[s]) + int(action), 0), remaining)

    # ----- evaluation -----

    def interferer_power(self) -> np.ndarray:
        """Per-active-UAV average transmit power used in the interference sum."""
        cfg = self.cfg
        out = np.zeros(len(self.active_idx))
        for c, j in enumerate(self.active_idx):
            a = self.agents[j]
            if cfg.p_avg_mode == "budget":
                out[c] = cfg.p_max / max(1, a.n_slots)
            else:
                out[c] = a.power_alloc[: a.n_slots].sum() / max(1, a.n_slots)
        return out

    def evaluate(self, episode: int, step: int):
        """Rates, serve flags and rewards for the current allocations.

        Draws this (frame, episode, step)'s fading, computes every assigned
        link's rate including inter-UAV NLoS interference, latches newly
        served slots as frozen, and returns (rates, served flags, per-agent
        rewards, per-UE rewards).
        """
        cfg = self.cfg
        env = self.constants
        act = self.active_idx
        n = cfg.n_ues
        g_all, k_all = self.fading.draw(self.frame, episode, step)

        uav_xyz = np.array([[*self.agents[j].xy, self.agents[j].h] for j in act])
        _, r, theta = channel.geometry_arrays(self.ue_xy, uav_xyz)  # (n, |act|)
        col_of_uav = {j: c for c, j in enumerate(act)}
        serving_col = np.array([col_of_uav[j] for j in self.uav_of_ue])
        rows = np.arange(n)

        g_serv = g_all[rows, self.uav_of_ue]
        k_serv = k_all[rows, self.uav_of_ue]
        r_serv = r[rows, serving_col]
        theta_serv = theta[rows, serving_col]

        p_tx = np.array([self.agents[self.uav_of_ue[i]].power_alloc[self.slot_of_ue[i]]
                         for i in range(n)])
        blocks = np.array([self.agents[self.uav_of_ue[i]].blocks[self.slot_of_ue[i]]
                           for i in range(n)])

        p_los = channel.los_probability(theta_serv, env)
        pw_los = channel.received_power(p_tx, r_serv, g_serv, env.alpha_los)
        pw_nlos = channel.received_power(p_tx, r_serv, k_serv, env.alpha_nlos)
        p_eff = channel.effective_power(p_los, pw_los, pw_nlos)

        p_avg = self.interferer_power()
        k_act = k_all[:, act]
        inter_full = p_avg[None, :] * k_act * r ** (-env.alpha_nlos)
        interference = inter_full.sum(axis=1) - inter_full[rows, serving_col]

        rates = channel.achievable_rate(blocks * cfg.block_size, p_eff, interference, env.noise_power)
        served_flags = rates >= cfg.r_th

        rewards = np.zeros(cfg.k_max)
        ue_rewards = served_flags.astype(float)
        for j in act:
            a = self.agents[j]
            members = a.slot_ues[: a.n_slots]
            flags = served_flags[members]
            a.served[: a.n_slots] = flags
            a.frozen[: a.n_slots] |= flags
            rewards[j] = float(flags.sum())
        self._audit_step(rates, served_flags)
        return rates, served_flags, rewards, ue_rewards

    def _audit_step(self, rates: np.ndarray, served_flags: np.ndarray):
        cfg = self.cfg
        if np.any(served_flags & (rates < cfg.r_th)):
            self.audit["C1"] += 1
        w, hgt = self.field_size_m
        for j in self.active_idx:
            a = self.agents[j]
            if a.power_alloc.sum() > cfg.p_max + 1e-9:
                self.audit["C4"] += 1
            if int(a.blocks.sum()) > cfg.block_limit:
                self.audit["C5"] += 1
            if not (0.0 <= a.xy[0] <= w and 0.0 <= a.xy[1] <= hgt):
                self.audit["C6"] += 1
            if not (cfg.h_min - 1e-9 <= a.h <= cfg.h_max + 1e-9):
                self.audit["C7"] += 1

    # ----- summaries -----

    def served_total(self) -> int:
        """Users whose rate meets the threshold at the latest evaluation."""
        return int(sum(self.agents[j].served[: self.agents[j].n_slots].sum()
                       for j in self.active_idx))

    def committed_total(self) -> int:
        """Users served at some evaluation this episode, allocation locked."""
        return int(sum(self.agents[j].frozen[: self.agents[j].n_slots].sum()
                       for j in self.active_idx))

    def committed_per_agent(self) -> list[int]:
        return [int(self.agents[j].frozen[: self.agents[j].n_slots].sum())
                for j in self.active_idx]
