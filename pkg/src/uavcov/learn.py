"""Hybrid multi-agent training machinery with checkpointing.

Actor-critic agents (one per UAV slot) emit altitude and a power split every
timestep; one small Q-network per (UAV, user slot) walks that user's resource
blocks up or down. Critics are centralized by default: they see the
concatenated observations and normalized actions of every UAV slot, inactive
slots zero-masked. All gradients are computed manually through the nn core,
including the tanh/softmax squashing between actor outputs and the actions
the critics see.

Within one frame the world is quasi-static: buffers hold only current-frame
transitions, while network weights persist across frames (warm start).
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .env import EnvConfig, FrameWorld
from .nn import Adam, Mlp, soft_update

CHECKPOINT_MAGIC = b"UAVCOV-CKPT-1\n"

# Q-value column order for the block actions: index 0 is +1, index 1 is -1.
BLOCK_ACTIONS = (1, -1)


@dataclass
class TrainSchedule:
    """Training hyperparameters. Defaults are the full-scale profile."""

    episodes: int = 100
    steps_per_episode: int = 500
    lr: float = 1e-4
    dqn_lr: float = 0.0  # 0: use lr (the actor/critic rate)
    gamma: float = 0.99
    tau: float = 0.01
    batch_size: int = 512
    buffer_capacity: int = 100_000
    warmup_transitions: int = 2500
    update_interval: int = 1
    dqn_update_interval: int = 0  # 0: use update_interval
    hidden: tuple[int, ...] = (64, 64)
    sigma_start: float = 0.2
    sigma_end: float = 0.02
    sigma_frac: float = 0.5
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_frac: float = 0.3
    critic_mode: str = "central"  # "central" or "local"

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if self.warmup_transitions > self.buffer_capacity:
            raise ValueError("warmup cannot exceed buffer capacity")
        if self.critic_mode not in ("central", "local"):
            raise ValueError(f"unknown critic_mode: {self.critic_mode}")
        if self.dqn_lr <= 0.0:
            self.dqn_lr = self.lr
        if self.dqn_update_interval <= 0:
            self.dqn_update_interval = self.update_interval

    def sigma_at(self, step: int, total_steps: int) -> float:
        return _anneal(step, total_steps, self.sigma_start, self.sigma_end, self.sigma_frac)

    def eps_at(self, step: int, total_steps: int) -> float:
        return _anneal(step, total_steps, self.eps_start, self.eps_end, self.eps_frac)


def _anneal(step: int, total: int, start: float, end: float, frac: float) -> float:
    horizon = max(1.0, total * frac)
    pos = min(1.0, step / horizon)
    return start + (end - start) * pos


class ReplayBuffer:
    """Fixed-capacity ring of transitions with uniform no-replacement sampling."""

    def __init__(self, capacity: int, fields: dict[str, int]):
        self.capacity = int(capacity)
        self.fields = dict(fields)
        self._data = {name: np.zeros((self.capacity, dim), dtype=np.float32)
                      for name, dim in self.fields.items()}
        self._size = 0
        self._head = 0

    def __len__(self) -> int:
        return self._size

    def add(self, **values):
        for name in self.fields:
            self._data[name][self._head] = values[name]
        self._head = (self._head + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch: int, rng: np.random.Generator,
               dtype=float) -> dict[str, np.ndarray]:
        if self._size < batch:
            raise ValueError("not enough transitions to sample")
        idx = rng.choice(self._size, size=batch, replace=False)
        return {name: arr[idx].astype(dtype, copy=False) for name, arr in self._data.items()}

    def clear(self):
        self._size = 0
        self._head = 0


# ----- action squashing (shared by action selection and the actor update) -----

def batch_masked_softmax(z: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z)
    za = z[:, mask]
    za = np.exp(za - za.max(axis=1, keepdims=True))
    out[:, mask] = za / za.sum(axis=1, keepdims=True)
    return out


def squash_raw_actions(raw: np.ndarray, mask: np.ndarray, slots: int, bw_head: bool) -> np.ndarray:
    """Raw actor outputs -> normalized bounded actions [alt01, power fracs(, bw fracs)]."""
    alt01 = (np.tanh(raw[:, 0]) + 1.0) / 2.0
    parts = [alt01[:, None], batch_masked_softmax(raw[:, 1:1 + slots], mask)]
    if bw_head:
        parts.append(batch_masked_softmax(raw[:, 1 + slots:1 + 2 * slots], mask))
    return np.concatenate(parts, axis=1)


def squash_gradient(raw: np.ndarray, squashed: np.ndarray, grad_sq: np.ndarray,
                    mask: np.ndarray, slots: int, bw_head: bool) -> np.ndarray:
    """Chain d(loss)/d(squashed action) back to the raw actor outputs."""
    grad_raw = np.zeros_like(raw)
    th = np.tanh(raw[:, 0])
    grad_raw[:, 0] = grad_sq[:, 0] * (1.0 - th * th) / 2.0
    for seg in range(2 if bw_head else 1):
        lo = 1 + seg * slots
        f = squashed[:, lo:lo + slots]
        g = grad_sq[:, lo:lo + slots]
        inner = (g * f).sum(axis=1, keepdims=True)
        gz = f * (g - inner)
        gz[:, ~mask] = 0.0
        grad_raw[:, lo:lo + slots] = gz
    return grad_raw


# ----- action selection -----

def maddpg_select_action(actor: Mlp, obs: np.ndarray, noise_sigma: float,
                         rng: np.random.Generator | None) -> np.ndarray:
    """Actor output with Gaussian exploration noise on the raw outputs."""
    raw = actor.forward(obs)
    if noise_sigma > 0.0:
        raw = raw + rng.normal(0.0, noise_sigma, size=raw.shape)
    return raw

def dqn_select_action(qnet: Mlp, state: np.ndarray, epsilon: float,
                      rng: np.random.Generator | None) -> int:
    """Epsilon-greedy over the two block actions; returns the action index.

    Ties resolve to index 0 (+1), so an untrained all-zero net walks upward.
    """
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(2))
    q = qnet.forward(state)
    return int(np.argmax(q))


# ----- MADDPG -----

class MaddpgLearner:
    """Per-UAV actors with (by default) centralized critics and target copies."""

    def __init__(self, cfg: EnvConfig, schedule: TrainSchedule,
                 init_rng: np.random.Generator, bw_head: bool = False):
        self.cfg = cfg
        self.schedule = schedule
        self.bw_head = bw_head
        self.act_dim = cfg.act_dim(bw_head)
        if schedule.critic_mode == "central":
            critic_in = cfg.k_max * (cfg.obs_dim + self.act_dim)
        else:
            critic_in = cfg.obs_dim + self.act_dim
        hidden = list(schedule.hidden)
        self.actors, self.actor_targets, self.actor_opts = [], [], []
        self.critics, self.critic_targets, self.critic_opts = [], [], []
        for _ in range(cfg.k_max):
            actor = Mlp([cfg.obs_dim] + hidden + [self.act_dim], init_rng)
            critic = Mlp([critic_in] + hidden + [1], init_rng)
            # Zeroed heads: the initial policy is exactly the uninformed
            # allocation (mid altitude, uniform power) and the critic starts
            # flat, so the actor only moves once the critic carries signal.
            for net in (actor, critic):
                net.weights[-1][...] = 0.0
                net.biases[-1][...] = 0.0
            self.actors.append(actor)
            self.actor_targets.append(actor.clone())
            self.critics.append(critic)
            self.critic_targets.append(critic.clone())
            self.actor_opts.append(Adam(actor.params, schedule.lr))
            self.critic_opts.append(Adam(critic.params, schedule.lr))
        # Buffers are cleared at frame boundaries, so one frame bounds the size.
        cap = min(schedule.buffer_capacity, schedule.episodes * schedule.steps_per_episode)
        self.buffer = ReplayBuffer(cap, {
            "obs": cfg.k_max * cfg.obs_dim,
            "act": cfg.k_max * self.act_dim,
            "rew": cfg.k_max,
            "next_obs": cfg.k_max * cfg.obs_dim,
            "done": 1,
        })

    def store(self, obs: np.ndarray, acts: np.ndarray, rewards: np.ndarray,
              next_obs: np.ndarray, done: bool):
        self.buffer.add(obs=obs.ravel(), act=acts.ravel(), rew=rewards,
                        next_obs=next_obs.ravel(), done=float(done))

    def ready(self) -> bool:
        return len(self.buffer) >= max(self.schedule.batch_size,
                                       self.schedule.warmup_transitions)

    def _critic_input(self, obs_flat: np.ndarray, acts_flat: np.ndarray, j: int) -> np.ndarray:
        if self.schedule.critic_mode == "central":
            return np.concatenate([obs_flat, acts_flat], axis=1)
        cfg = self.cfg
        obs_j = obs_flat[:, j * cfg.obs_dim:(j + 1) * cfg.obs_dim]
        act_j = acts_flat[:, j * self.act_dim:(j + 1) * self.act_dim]
        return np.concatenate([obs_j, act_j], axis=1)

    def _target_joint_actions(self, next_obs: np.ndarray, world: FrameWorld) -> np.ndarray:
        """Joint next action matrix (B, k_max*act_dim) from the target actors."""
        cfg = self.cfg
        B = next_obs.shape[0]
        acts = np.zeros((B, cfg.k_max * self.act_dim))
        for m in world.active_idx:
            obs_m = next_obs[:, m * cfg.obs_dim:(m + 1) * cfg.obs_dim]
            raw = self.actor_targets[m].forward(obs_m)
            acts[:, m * self.act_dim:(m + 1) * self.act_dim] = squash_raw_actions(
                raw, world.agents[m].mask, cfg.slots, self.bw_head)
        return acts

    def update(self, world: FrameWorld, rng: np.random.Generator) -> dict[int, tuple[float, float]]:
        """One gradient step per active agent. Returns {agent: (critic, actor) loss}."""
        if not self.ready():
            return {}
        cfg = self.cfg
        sch = self.schedule
        losses = {}
        for j in world.active_idx:
            batch = self.buffer.sample(sch.batch_size, rng)
            obs, acts = batch["obs"], batch["act"]
            next_obs, done = batch["next_obs"], batch["done"][:, 0]
            r_j = batch["rew"][:, j]
            B = obs.shape[0]

            # Critic: squared TD error against the frozen targets.
            next_acts = self._target_joint_actions(next_obs, world)
            q_next = self.critic_targets[j].forward(
                self._critic_input(next_obs, next_acts, j))[:, 0]
            y = r_j + sch.gamma * (1.0 - done) * q_next
            q, cache = self.critics[j].forward_cached(self._critic_input(obs, acts, j))
            td = q[:, 0] - y
            grads, _ = self.critics[j].backward(cache, (2.0 * td / B)[:, None])
            self.critic_opts[j].step(self.critics[j].params, grads)
            critic_loss = float(np.mean(td ** 2))

            # Actor: ascend the critic with own action replaced, others sampled.
            obs_j = obs[:, j * cfg.obs_dim:(j + 1) * cfg.obs_dim]
            raw, actor_cache = self.actors[j].forward_cached(obs_j)
            mask = world.agents[j].mask
            squashed = squash_raw_actions(raw, mask, cfg.slots, self.bw_head)
            acts_new = acts.copy()
            acts_new[:, j * self.act_dim:(j + 1) * self.act_dim] = squashed
            q_in = self._critic_input(obs, acts_new, j)
            q2, critic_cache = self.critics[j].forward_cached(q_in)
            _, grad_in = self.critics[j].backward(critic_cache, np.full((B, 1), -1.0 / B))
            if sch.critic_mode == "central":
                lo = cfg.k_max * cfg.obs_dim + j * self.act_dim
            else:
                lo = cfg.obs_dim
            grad_sq = grad_in[:, lo:lo + self.act_dim]
            grad_raw = squash_gradient(raw, squashed, grad_sq, mask, cfg.slots, self.bw_head)
            a_grads, _ = self.actors[j].backward(actor_cache, grad_raw)
            self.actor_opts[j].step(self.actors[j].params, a_grads)
            actor_loss = float(-np.mean(q2))

            soft_update(self.actor_targets[j], self.actors[j], sch.tau)
            soft_update(self.critic_targets[j], self.critics[j], sch.tau)
            losses[j] = (critic_loss, actor_loss)
        return losses


# ----- per-user DQNs -----

def make_qnet(state_dim: int, schedule: TrainSchedule, rng: np.random.Generator) -> Mlp:
    """Q-net with a zeroed output layer: all-equal initial values make the
    +1 tie rule an upward walk, so the serve reward is discovered without
    relying on random-walk exploration."""
    net = Mlp([state_dim] + list(schedule.hidden) + [2], rng)
    net.weights[-1][...] = 0.0
    net.biases[-1][...] = 0.0
    return net


class StackedQnets:
    """A family of same-architecture Q-nets stored as stacked tensors.

    Row r holds one net's parameters; forward/backward/update run as batched
    matrix products over all requested rows at once. The math per row is
    identical to an individual Mlp (the tests assert this), it is just not
    paid for thirty times per timestep.
    """

    def __init__(self, rows: int, dims: list[int], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 dtype=np.float64):
        self.rows = rows
        self.dims = list(dims)
        self.dtype = dtype
        self.lr = float(lr)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weights = [np.zeros((rows, i, o), dtype) for i, o in zip(dims[:-1], dims[1:])]
        self.biases = [np.zeros((rows, o), dtype) for o in dims[1:]]
        self.t_weights = [np.zeros_like(w) for w in self.weights]
        self.t_biases = [np.zeros_like(b) for b in self.biases]
        self.m = [np.zeros_like(p) for p in self.weights + self.biases]
        self.v = [np.zeros_like(p) for p in self.weights + self.biases]
        self.t = np.zeros(rows, dtype=np.int64)
        self.initialized = np.zeros(rows, dtype=bool)

    def init_row(self, row: int, rng: np.random.Generator):
        """Uniform fan-in init with a zeroed output layer (see make_qnet)."""
        if self.initialized[row]:
            return
        last = len(self.weights) - 1
        for li, (fan_in, fan_out) in enumerate(zip(self.dims[:-1], self.dims[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            if li == last:
                self.weights[li][row] = 0.0
                self.biases[li][row] = 0.0
                rng.uniform(-bound, bound, size=(fan_in, fan_out))  # keep stream aligned
                rng.uniform(-bound, bound, size=fan_out)
            else:
                self.weights[li][row] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
                self.biases[li][row] = rng.uniform(-bound, bound, size=fan_out)
            self.t_weights[li][row] = self.weights[li][row]
            self.t_biases[li][row] = self.biases[li][row]
        self.initialized[row] = True

    def _forward(self, idx: np.ndarray, x: np.ndarray, weights, biases, cache=None):
        """x is (m, B, din) against rows idx; returns (m, B, out)."""
        a = x
        last = len(weights) - 1
        if cache is not None:
            cache.append(a)
        for li in range(len(weights)):
            a = a @ weights[li][idx] + biases[li][idx][:, None, :]
            if li < last:
                a = np.maximum(a, 0.0)
            if cache is not None:
                cache.append(a)
        return a

    def q_values(self, idx: np.ndarray, states: np.ndarray) -> np.ndarray:
        """Online Q-values for one state per row: states (m, din) -> (m, 2)."""
        x = states[:, None, :].astype(self.dtype, copy=False)
        return self._forward(idx, x, self.weights, self.biases)[:, 0, :]

    def update(self, idx: np.ndarray, batch: dict[str, np.ndarray],
               gamma: float, tau: float) -> float:
        """One TD step on rows idx from stacked minibatches (m, B, ...)."""
        m, B = batch["state"].shape[0], batch["state"].shape[1]
        q_next = self._forward(idx, batch["next_state"], self.t_weights, self.t_biases)
        y = batch["reward"][..., 0] + gamma * (1.0 - batch["done"][..., 0]) * q_next.max(axis=2)
        cache: list[np.ndarray] = []
        q = self._forward(idx, batch["state"], self.weights, self.biases, cache)
        actions = batch["action"][..., 0].astype(np.int64)
        rows_b = np.arange(m)[:, None], np.arange(B)[None, :]
        td = q[rows_b[0], rows_b[1], actions] - y
        grad_out = np.zeros_like(q)
        grad_out[rows_b[0], rows_b[1], actions] = 2.0 * td / B
        # reverse pass, mirroring Mlp.backward row-wise
        grads_w, grads_b = [None] * len(self.weights), [None] * len(self.biases)
        delta = grad_out
        for li in range(len(self.weights) - 1, -1, -1):
            if li < len(self.weights) - 1:
                delta = delta * (cache[li + 1] > 0.0)
            grads_w[li] = cache[li].transpose(0, 2, 1) @ delta
            grads_b[li] = delta.sum(axis=1)
            delta = delta @ self.weights[li][idx].transpose(0, 2, 1)
        self._adam_step(idx, grads_w + grads_b)
        for li in range(len(self.weights)):
            self.t_weights[li][idx] = tau * self.weights[li][idx] + (1 - tau) * self.t_weights[li][idx]
            self.t_biases[li][idx] = tau * self.biases[li][idx] + (1 - tau) * self.t_biases[li][idx]
        return float(np.mean(td ** 2))

    def _adam_step(self, idx: np.ndarray, grads: list[np.ndarray]):
        self.t[idx] += 1
        t = self.t[idx]
        params = self.weights + self.biases
        for pi, (p, g) in enumerate(zip(params, grads)):
            extra = (1,) * (p.ndim - 1)
            b1t = (1.0 - self.beta1 ** t).astype(self.dtype).reshape(-1, *extra)
            b2t = (1.0 - self.beta2 ** t).astype(self.dtype).reshape(-1, *extra)
            m = self.m[pi][idx]
            v = self.v[pi][idx]
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * g * g
            self.m[pi][idx] = m
            self.v[pi][idx] = v
            p[idx] -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


class DqnPool:
    """One Q-net (plus target/optimizer/buffer) per (UAV, user slot).

    Nets live as rows of a StackedQnets and persist across frames; replay
    buffers are per slot and cleared at frame boundaries.
    """

    def __init__(self, cfg: EnvConfig, schedule: TrainSchedule, init_rng: np.random.Generator):
        self.cfg = cfg
        self.schedule = schedule
        self.init_rng = init_rng
        dims = [cfg.dqn_obs_dim] + list(schedule.hidden) + [2]
        # float32: the replay already quantizes there, and the Q-nets are
        # bandwidth-bound; the MADDPG lane stays float64.
        self.stack = StackedQnets(cfg.k_max * cfg.slots, dims, schedule.dqn_lr,
                                  dtype=np.float32)
        self.buffers: dict[tuple[int, int], ReplayBuffer] = {}

    def row_of(self, j: int, s: int) -> int:
        return j * self.cfg.slots + s

    def ensure(self, j: int, s: int) -> ReplayBuffer:
        key = (j, s)
        if key not in self.buffers:
            self.stack.init_row(self.row_of(j, s), self.init_rng)
            cap = min(self.schedule.buffer_capacity,
                      self.schedule.episodes * self.schedule.steps_per_episode)
            self.buffers[key] = ReplayBuffer(cap, {
                "state": self.cfg.dqn_obs_dim, "action": 1, "reward": 1,
                "next_state": self.cfg.dqn_obs_dim, "done": 1,
            })
        return self.buffers[key]

    def clear_buffers(self):
        for buf in self.buffers.values():
            buf.clear()

    def select_many(self, keys: list[tuple[int, int]], states: np.ndarray,
                    epsilon: float, rng: np.random.Generator | None) -> np.ndarray:
        """Epsilon-greedy action indices for the given slots, one state each."""
        for j, s in keys:
            self.ensure(j, s)
        idx = np.array([self.row_of(j, s) for j, s in keys])
        q = self.stack.q_values(idx, states)
        actions = np.argmax(q, axis=1)  # ties resolve to index 0, i.e. +1
        if epsilon > 0.0:
            explore = rng.random(len(keys)) < epsilon
            random_actions = rng.integers(2, size=len(keys))
            actions = np.where(explore, random_actions, actions)
        return actions

    def update_many(self, keys: list[tuple[int, int]], rng: np.random.Generator):
        """One batched TD step over every slot with enough replay."""
        ready = [k for k in keys if len(self.buffers.get(k, ())) >= self.schedule.batch_size]
        if not ready:
            return None
        samples = [self.buffers[k].sample(self.schedule.batch_size, rng, dtype=np.float32)
                   for k in ready]
        batch = {name: np.stack([s[name] for s in samples]) for name in samples[0]}
        idx = np.array([self.row_of(j, s) for j, s in ready])
        return self.stack.update(idx, batch, self.schedule.gamma, self.schedule.tau)


def dqn_update(net: Mlp, target: Mlp, opt: Adam, batch: dict[str, np.ndarray],
               schedule: TrainSchedule) -> float:
    """One TD step: y = r + gamma * max_a Q'(s',a), squared error, soft update."""
    states = batch["state"]
    actions = batch["action"][:, 0].astype(np.int64)
    rewards = batch["reward"][:, 0]
    done = batch["done"][:, 0]
    B = states.shape[0]
    q_next = target.forward(batch["next_state"]).max(axis=1)
    y = rewards + schedule.gamma * (1.0 - done) * q_next
    q, cache = net.forward_cached(states)
    taken = q[np.arange(B), actions]
    td = taken - y
    grad_out = np.zeros_like(q)
    grad_out[np.arange(B), actions] = 2.0 * td / B
    grads, _ = net.backward(cache, grad_out)
    opt.step(net.params, grads)
    soft_update(target, net, schedule.tau)
    return float(np.mean(td ** 2))


# ----- per-frame training and evaluation loops -----

@dataclass
class EpisodeRecord:
    frame: int
    episode: int
    mean_reward: float          # served UEs per step, summed over agents
    mean_search_steps: float    # steps until served, averaged over users (flare)
    committed: int              # users served and locked by episode end


@dataclass
class FrameResult:
    episodes: list[EpisodeRecord] = field(default_factory=list)
    served_total: float = 0.0
    served_per_agent: list[int] = field(default_factory=list)
    final_blocks: dict[tuple[int, int], int] = field(default_factory=dict)
    sum_power: float = 0.0
    sum_blocks: int = 0


def train_frame(world: FrameWorld, maddpg: MaddpgLearner, dqns: DqnPool | None,
                schedule: TrainSchedule, expl_rng: np.random.Generator,
                step_offset: int, total_steps: int,
                metrics_sink=None) -> list[EpisodeRecord]:
    """Run the episode/timestep loops of one frame on its static snapshot."""
    cfg = world.cfg
    use_dqn = dqns is not None
    records = []
    for e in range(schedule.episodes):
        world.reset_episode(equal_blocks=not use_dqn)
        obs = world.maddpg_obs()
        search_steps: dict[tuple[int, int], int | None] = {}
        for j in world.active_idx:
            for s in range(world.agents[j].n_slots):
                search_steps[(j, s)] = None
        reward_sum = 0.0
        for t in range(schedule.steps_per_episode):
            gstep = step_offset + e * schedule.steps_per_episode + t
            sigma = schedule.sigma_at(gstep, total_steps)
            eps = schedule.eps_at(gstep, total_steps)

            joint_act = np.zeros((cfg.k_max, maddpg.act_dim))
            for j in world.active_idx:
                raw = maddpg_select_action(maddpg.actors[j], obs[j], sigma, expl_rng)
                S = cfg.slots
                bw = raw[1 + S:1 + 2 * S] if maddpg.bw_head else None
                joint_act[j] = world.apply_maddpg_action(j, raw[0], raw[1:1 + S], bw)

            pending = []
            if use_dqn:
                fresh = world.maddpg_obs()
                keys, states = [], []
                for j in world.active_idx:
                    agent = world.agents[j]
                    for s in range(agent.n_slots):
                        if agent.frozen[s]:
                            continue
                        keys.append((j, s))
                        states.append(world.dqn_obs(fresh[j], j, s))
                if keys:
                    actions = dqns.select_many(keys, np.asarray(states), eps, expl_rng)
                    for (j, s), state, a_idx in zip(keys, states, actions):
                        world.apply_block_action(j, s, BLOCK_ACTIONS[a_idx])
                        pending.append((j, s, state, int(a_idx)))

            _, _, rewards, ue_rewards = world.evaluate(e, t)
            next_obs = world.maddpg_obs()
            last_step = t == schedule.steps_per_episode - 1

            for j, s, state, a_idx in pending:
                agent = world.agents[j]
                served_now = bool(agent.served[s])
                if served_now and search_steps[(j, s)] is None:
                    search_steps[(j, s)] = t + 1
                dqns.ensure(j, s).add(
                    state=state, action=a_idx, reward=ue_rewards[agent.slot_ues[s]],
                    next_state=world.dqn_obs(next_obs[j], j, s),
                    done=float(served_now or last_step))
            maddpg.store(obs, joint_act, rewards, next_obs, last_step)

            if (t + 1) % schedule.update_interval == 0:
                maddpg.update(world, expl_rng)
            if use_dqn and (t + 1) % schedule.dqn_update_interval == 0 and maddpg.ready():
                all_keys = [(j, s) for j in world.active_idx
                            for s in range(world.agents[j].n_slots)]
                dqns.update_many(all_keys, expl_rng)

            obs = next_obs
            reward_sum += float(rewards.sum())

        steps = [v if v is not None else schedule.steps_per_episode
                 for v in search_steps.values()]
        rec = EpisodeRecord(
            frame=world.frame, episode=e,
            mean_reward=reward_sum / schedule.steps_per_episode,
            mean_search_steps=float(np.mean(steps)) if steps else 0.0,
            committed=world.committed_total(),
        )
        records.append(rec)
        if metrics_sink is not None:
            metrics_sink(world, e, schedule.steps_per_episode - 1)
    return records


def frame_snapshot(world: FrameWorld) -> FrameResult:
    """Committed coverage and allocation totals of the world's current state."""
    result = FrameResult()
    result.served_total = world.committed_total()
    result.served_per_agent = world.committed_per_agent()
    for j in world.active_idx:
        agent = world.agents[j]
        result.sum_power += float(agent.power_alloc.sum())
        result.sum_blocks += int(agent.blocks.sum())
        for s in range(agent.n_slots):
            result.final_blocks[(j, s)] = int(agent.blocks[s])
    return result


def evaluate_frame_static(world: FrameWorld, schedule: TrainSchedule,
                          eval_steps: int | None = None) -> FrameResult:
    """Committed coverage of the fixed equal allocation at mid altitude.

    The allocation never changes; users latch as served when a step's fading
    lets their equal share meet the threshold. The horizon and fading lane
    mirror a learned method's last training episode, keeping the comparison
    paired draw for draw.
    """
    T = eval_steps if eval_steps is not None else schedule.steps_per_episode
    world.reset_episode(equal_blocks=True)
    tag = schedule.episodes - 1
    for t in range(T):
        world.evaluate(tag, t)
    return frame_snapshot(world)


# ----- checkpointing -----

def _collect_arrays(maddpg: MaddpgLearner, dqns: DqnPool | None) -> dict[str, np.ndarray]:
    """Every parameter and optimizer-moment array under a stable name."""
    arrays: dict[str, np.ndarray] = {}
    for i in range(len(maddpg.actors)):
        for tag, net in (("actor", maddpg.actors[i]), ("actor_t", maddpg.actor_targets[i]),
                         ("critic", maddpg.critics[i]), ("critic_t", maddpg.critic_targets[i])):
            for li, p in enumerate(net.params):
                arrays[f"maddpg/{i}/{tag}/p{li}"] = p
        for tag, opt in (("actor_opt", maddpg.actor_opts[i]), ("critic_opt", maddpg.critic_opts[i])):
            for li, (m, v) in enumerate(zip(opt.m, opt.v)):
                arrays[f"maddpg/{i}/{tag}/m{li}"] = m
                arrays[f"maddpg/{i}/{tag}/v{li}"] = v
    if dqns is not None:
        stack = dqns.stack
        for li, (w, b, tw, tb) in enumerate(zip(stack.weights, stack.biases,
                                                stack.t_weights, stack.t_biases)):
            arrays[f"dqn/w{li}"] = w
            arrays[f"dqn/b{li}"] = b
            arrays[f"dqn/tw{li}"] = tw
            arrays[f"dqn/tb{li}"] = tb
        for pi, (m, v) in enumerate(zip(stack.m, stack.v)):
            arrays[f"dqn/m{pi}"] = m
            arrays[f"dqn/v{pi}"] = v
        arrays["dqn/t"] = stack.t
        arrays["dqn/initialized"] = stack.initialized
    return arrays


def save_checkpoint(path: str, maddpg: MaddpgLearner, dqns: DqnPool | None,
                    counters: dict[str, int] | None = None):
    """Versioned, byte-deterministic dump of parameters, moments and counters."""
    arrays = _collect_arrays(maddpg, dqns)
    counters = dict(counters or {})
    for i, opt in enumerate(maddpg.actor_opts):
        counters[f"maddpg/{i}/actor_opt/t"] = opt.t
    for i, opt in enumerate(maddpg.critic_opts):
        counters[f"maddpg/{i}/critic_opt/t"] = opt.t
    manifest = {"counters": counters, "arrays": []}
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        raw = arr.tobytes()
        manifest["arrays"].append({
            "name": name, "dtype": str(arr.dtype), "shape": list(arr.shape),
            "offset": offset, "nbytes": len(raw),
        })
        blobs.append(raw)
        offset += len(raw)
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path: str, maddpg: MaddpgLearner, dqns: DqnPool | None) -> dict[str, int]:
    """Restore a checkpoint in place; returns the stored counters."""
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError("not a recognized checkpoint file")
        head_len = int.from_bytes(fh.read(8), "little")
        manifest = json.loads(fh.read(head_len).decode("utf-8"))
        payload = fh.read()
    arrays = _collect_arrays(maddpg, dqns)
    stored = {e["name"]: e for e in manifest["arrays"]}
    if set(stored) != set(arrays):
        raise ValueError("checkpoint does not match the learner architecture")
    for name, entry in stored.items():
        target = arrays[name]
        if list(target.shape) != entry["shape"] or str(target.dtype) != entry["dtype"]:
            raise ValueError(f"shape/dtype mismatch for {name}")
        raw = payload[entry["offset"]: entry["offset"] + entry["nbytes"]]
        target[...] = np.frombuffer(raw, dtype=target.dtype).reshape(target.shape)
    counters = manifest["counters"]
    for i, opt in enumerate(maddpg.actor_opts):
        opt.t = int(counters[f"maddpg/{i}/actor_opt/t"])
    for i, opt in enumerate(maddpg.critic_opts):
        opt.t = int(counters[f"maddpg/{i}/critic_opt/t"])
    return {k: v for k, v in counters.items() if not k.startswith("maddpg/")}
