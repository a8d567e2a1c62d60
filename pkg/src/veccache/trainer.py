"""Q-learning over the caching environment, plus the three baselines.

The main scheme trains one weight-shared graph-attention Q network on a
replay buffer of per-agent transitions; a lagged copy provides the TD
targets and a KL penalty keeps each agent's last-layer attention
distribution consistent between consecutive slots. Baselines: the same
pipeline with uniform neighbor pooling instead of attention, independent
per-agent double-DQN learners without any graph input, and uniform random
placement.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from . import nn
from .env import VecCacheEnv, EnvView

SCHEMES = ("mgarl", "no_attention", "iddqn", "random")


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.9
    batch_size: int = 128
    lr: float = 1e-3
    buffer_capacity: int = 2000
    lambda_kl: float = 0.03
    target_sync_period: int = 200      # gradient steps between hard target copies
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_frac: float = 0.6        # fraction of episodes over which eps anneals
    episodes: int = 500
    feature_dim: int = 128
    heads: int = 8
    encoder_hidden: int = 128
    q_hidden: int = 128
    conv_layers: int = 2
    shared_weights: bool = True
    grad_steps_per_ts: int = 1
    learning_enabled: bool = True
    grad_clip_norm: float = 10.0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size cannot exceed buffer_capacity")

    def epsilon(self, episode: int) -> float:
        """Linear anneal from eps_start to eps_end over the first decay fraction."""
        horizon = max(1.0, self.eps_decay_frac * self.episodes)
        frac = min(1.0, episode / horizon)
        return self.eps_start + frac * (self.eps_end - self.eps_start)

    def desk_scale(self) -> "TrainConfig":
        """Small-network profile for CPU-budget runs; formulas unchanged."""
        return replace(self, feature_dim=32, heads=4, encoder_hidden=64,
                       q_hidden=64, batch_size=32)


@dataclass
class EpisodeMetrics:
    episode: int
    cumulative_reward: float
    hit_ratio: float
    total_latency_s: float
    epsilon: float
    loss_mean: float


METRICS_COLUMNS = ("episode", "cumulative_reward", "hit_ratio",
                   "total_latency_s", "epsilon", "loss_mean")


def write_metrics_csv(path, metrics: list[EpisodeMetrics]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for m in metrics:
            writer.writerow([m.episode, repr(m.cumulative_reward), repr(m.hit_ratio),
                             repr(m.total_latency_s), repr(m.epsilon), repr(m.loss_mean)])


@dataclass
class Experience:
    """One agent's transition, carrying both slots' full graph context."""

    obs_t: np.ndarray
    obs_t1: np.ndarray
    idx_t: np.ndarray
    mask_t: np.ndarray
    idx_t1: np.ndarray
    mask_t1: np.ndarray
    agent: int
    action: int
    reward: float
    terminal: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring with uniform no-replacement sampling."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self._items: list[Experience] = []
        self._cursor = 0

    def add(self, exp: Experience):
        if len(self._items) < self.capacity:
            self._items.append(exp)
        else:
            self._items[self._cursor] = exp
        self._cursor = (self._cursor + 1) % self.capacity

    def sample(self, size: int, rng: np.random.Generator) -> list[Experience]:
        picks = rng.choice(len(self._items), size=size, replace=False)
        return [self._items[i] for i in picks]

    def __len__(self):
        return len(self._items)


class RandomPolicy:
    """Uniform placement over {no-cache} plus every SN."""

    learns = False

    def __init__(self, n_actions: int):
        self.n_actions = n_actions

    def act(self, view: EnvView, eps: float, rng: np.random.Generator) -> np.ndarray:
        return rng.integers(0, self.n_actions, size=len(view.hit_mask))


def _greedy_actions(q: np.ndarray) -> np.ndarray:
    # np.argmax resolves ties toward the lowest action index
    return np.argmax(q, axis=1)


class MgarlTrainer:
    """Shared-weight graph-attention Q learner (uniform pooling optional).

    The Q head works in an agent-relative action order ("do not cache",
    own cache, then the remaining SNs by ascending distance). Under weight
    sharing the raw SN indices mean something different to every agent, so
    a policy over them is not representable by one network; the relative
    order is, and it is mapped back to SN indices whenever an action leaves
    the trainer. The TD bootstrap is a max over all actions and therefore
    indifferent to the reordering.
    """

    learns = True

    def __init__(self, obs_dim: int, n_actions: int, n_agents: int,
                 cfg: TrainConfig, rng: np.random.Generator,
                 uniform_attention: bool = False, lambda_kl: float | None = None,
                 rsu_positions_norm: np.ndarray | None = None):
        self.cfg = cfg
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.uniform_attention = uniform_attention
        self.lambda_kl = cfg.lambda_kl if lambda_kl is None else lambda_kl
        self.rng = rng
        self.rsu_positions_norm = rsu_positions_norm
        self.canonical_actions = rsu_positions_norm is not None
        net_cfg = nn.QNetConfig(
            obs_dim=obs_dim, n_actions=n_actions, feature_dim=cfg.feature_dim,
            heads=cfg.heads, encoder_hidden=cfg.encoder_hidden,
            q_hidden=cfg.q_hidden, conv_layers=cfg.conv_layers)
        self.net_cfg = net_cfg
        n_sets = 1 if cfg.shared_weights else n_agents
        self.nets = [nn.QNetwork(net_cfg, rng, requires_grad=True) for _ in range(n_sets)]
        self.targets = [nn.QNetwork(net_cfg, rng, requires_grad=False) for _ in range(n_sets)]
        for net, target in zip(self.nets, self.targets):
            target.copy_from(net)
        self.optimizers = [nn.Adam(net.named_params(), lr=cfg.lr) for net in self.nets]
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.update_count = 0

    def _net_for(self, agent: int) -> nn.QNetwork:
        return self.nets[0] if self.cfg.shared_weights else self.nets[agent]

    # --- action relabeling ------------------------------------------------

    def sn_order(self, obs_norm: np.ndarray, agent: int) -> np.ndarray:
        """SN indices sorted by (distance to the agent, self first, index)."""
        pos = obs_norm[:, :2]
        me = pos[agent]
        sn_pos = np.vstack([self.rsu_positions_norm, pos])
        d = np.hypot(sn_pos[:, 0] - me[0], sn_pos[:, 1] - me[1])
        n_rsus = len(self.rsu_positions_norm)
        not_self = np.ones(len(d))
        not_self[n_rsus + agent] = 0.0
        return np.lexsort((np.arange(len(d)), not_self, d))

    def slot_to_action(self, obs_norm: np.ndarray, agent: int) -> np.ndarray:
        """Global action for every canonical Q-head slot."""
        if not self.canonical_actions:
            return np.arange(self.n_actions)
        return np.concatenate(([0], self.sn_order(obs_norm, agent) + 1))

    def action_to_slot(self, obs_norm: np.ndarray, agent: int, action: int) -> int:
        if not self.canonical_actions or action == 0:
            return int(action)
        order = self.sn_order(obs_norm, agent)
        return int(np.flatnonzero(order == action - 1)[0]) + 1

    def _action_slots(self, batch: list[Experience], agents: np.ndarray,
                      actions: np.ndarray) -> np.ndarray:
        """Vectorized action_to_slot over a batch.

        The canonical slot of SN j is one plus the number of SNs ranking
        strictly before it under the (distance, self-first, index) order.
        """
        s = len(batch)
        n_rsus = len(self.rsu_positions_norm)
        n_sns = self.n_actions - 1
        pos = np.stack([e.obs_t[:, :2] for e in batch])                  # (S, M, 2)
        me = pos[np.arange(s), agents]                                   # (S, 2)
        sn_pos = np.concatenate(
            [np.broadcast_to(self.rsu_positions_norm, (s, n_rsus, 2)), pos], axis=1)
        d = np.hypot(sn_pos[..., 0] - me[:, None, 0], sn_pos[..., 1] - me[:, None, 1])
        not_self = np.ones((s, n_sns))
        not_self[np.arange(s), n_rsus + agents] = 0.0

        target = np.maximum(actions - 1, 0)
        rows = np.arange(s)
        dt = d[rows, target][:, None]
        nst = not_self[rows, target][:, None]
        ids = np.arange(n_sns)[None, :]
        before = ((d < dt)
                  | ((d == dt) & (not_self < nst))
                  | ((d == dt) & (not_self == nst) & (ids < target[:, None])))
        slots = 1 + before.sum(axis=1)
        slots[actions == 0] = 0
        return slots

    # --- acting ---------------------------------------------------------

    def q_values(self, view: EnvView) -> np.ndarray:
        """Q per agent over the canonical (agent-relative) action slots."""
        if self.cfg.shared_weights:
            q, _ = self.nets[0].forward(view.obs_norm, view.idx, view.mask,
                                        uniform_attention=self.uniform_attention)
            return q.data
        rows = []
        for m in range(self.n_agents):
            q, _ = self.nets[m].forward(view.obs_norm, view.idx, view.mask,
                                        rows=np.array([m]),
                                        uniform_attention=self.uniform_attention)
            rows.append(q.data[0])
        return np.stack(rows)

    def act(self, view: EnvView, eps: float, rng: np.random.Generator) -> np.ndarray:
        explore = rng.random(self.n_agents) < eps
        actions = rng.integers(0, self.n_actions, size=self.n_agents)
        greedy = np.flatnonzero(~explore)
        if greedy.size:
            if self.cfg.shared_weights:
                q, _ = self.nets[0].forward(view.obs_norm, view.idx, view.mask,
                                            rows=greedy,
                                            uniform_attention=self.uniform_attention)
                slots = _greedy_actions(q.data)
            else:
                slots = np.array([
                    int(np.argmax(self.nets[m].forward(
                        view.obs_norm, view.idx, view.mask, rows=np.array([m]),
                        uniform_attention=self.uniform_attention)[0].data[0]))
                    for m in greedy])
            for pos, m in enumerate(greedy):
                actions[m] = self.slot_to_action(view.obs_norm, int(m))[slots[pos]]
        return actions

    # --- learning ---------------------------------------------------------

    def observe_transition(self, view: EnvView, next_view: EnvView,
                           actions: np.ndarray, rewards: np.ndarray, terminal: bool):
        for m in range(self.n_agents):
            self.buffer.add(Experience(
                obs_t=view.obs_norm, obs_t1=next_view.obs_norm,
                idx_t=view.idx, mask_t=view.mask,
                idx_t1=next_view.idx, mask_t1=next_view.mask,
                agent=m, action=int(actions[m]), reward=float(rewards[m]),
                terminal=terminal))

    def _stack(self, batch: list[Experience]):
        m = self.n_agents
        s = len(batch)
        obs_t = np.concatenate([e.obs_t for e in batch], axis=0)
        obs_t1 = np.concatenate([e.obs_t1 for e in batch], axis=0)
        offsets = (np.arange(s) * m)[:, None, None]
        idx_t = np.concatenate([e.idx_t[None] for e in batch]) + offsets
        idx_t1 = np.concatenate([e.idx_t1[None] for e in batch]) + offsets
        idx_t = idx_t.reshape(s * m, -1)
        idx_t1 = idx_t1.reshape(s * m, -1)
        mask_t = np.concatenate([e.mask_t for e in batch], axis=0)
        mask_t1 = np.concatenate([e.mask_t1 for e in batch], axis=0)
        agents = np.array([e.agent for e in batch])
        rows = np.arange(s) * m + agents
        actions = np.array([e.action for e in batch])
        rewards = np.array([e.reward for e in batch])
        terminals = np.array([e.terminal for e in batch])
        return (obs_t, obs_t1, idx_t, idx_t1, mask_t, mask_t1, rows, agents,
                actions, rewards, terminals)

    def td_target(self, batch: list[Experience], net_index: int = 0,
                  stacked=None) -> np.ndarray:
        """Bootstrapped regression targets from the lagged network."""
        if stacked is None:
            stacked = self._stack(batch)
        (_, obs_t1, _, idx_t1, _, mask_t1, rows, _, _, rewards, terminals) = stacked
        q_next, _ = self.targets[net_index].forward(
            obs_t1, idx_t1, mask_t1, rows=rows,
            uniform_attention=self.uniform_attention)
        bootstrap = q_next.data.max(axis=1)
        return rewards + self.cfg.gamma * bootstrap * (~terminals)

    @staticmethod
    def _kl_alignment(idx_t, mask_t, idx_t1, mask_t1):
        """Align the t and t+1 attention supports by neighbor identity.

        Inputs are the (S, slots) local regions of the sampled agents. The
        comparison support is t's slot axis: ``common[s, j]`` marks slot j
        of the t distribution whose node also appears at t+1, and
        ``pos_t1[s, j]`` is where. Samples sharing only the node itself end
        up with a single-point support, whose renormalized KL is zero.
        """
        match = ((idx_t[:, :, None] == idx_t1[:, None, :])
                 & mask_t[:, :, None] & mask_t1[:, None, :])
        common = match.any(axis=2)
        pos_t1 = match.argmax(axis=2)
        return common, pos_t1

    def loss(self, batch: list[Experience], lambda_kl: float | None = None,
             net_index: int = 0):
        """Mean squared TD error plus the attention-consistency penalty.

        Returns ``(loss_var, td_mse, kl_mean)``. The t+1 attention
        distribution is treated as a constant: gradients flow only through
        the current-slot branch.
        """
        lam = self.lambda_kl if lambda_kl is None else lambda_kl
        stacked = self._stack(batch)
        (obs_t, obs_t1, idx_t, idx_t1, mask_t, mask_t1, rows, _, actions,
         _, _) = stacked
        s = len(batch)
        net = self.nets[net_index]

        y = self.td_target(batch, net_index, stacked=stacked)
        want_alpha = lam != 0.0 and not self.uniform_attention
        q, alpha_t = net.forward(obs_t, idx_t, mask_t, rows=rows,
                                 uniform_attention=self.uniform_attention,
                                 want_alpha=want_alpha)
        if self.canonical_actions:
            slots_a = self._action_slots(batch, stacked[7], actions)
        else:
            slots_a = actions
        q_flat = nn.reshape(q, (s * self.n_actions, 1))
        q_sa = nn.gather_rows(q_flat, np.arange(s) * self.n_actions + slots_a)
        diff = nn.sub(q_sa, y[:, None])
        td_mse = nn.mul(nn.reduce_sum(nn.mul(diff, diff)), 1.0 / s)

        if not want_alpha:
            zero_kl = 0.0
            return td_mse, float(td_mse.data), zero_kl

        _, alpha_t1 = net.forward(obs_t1, idx_t1, mask_t1, rows=rows, alpha_only=True)
        heads = self.cfg.heads
        slots = mask_t.shape[1]
        common, pos_t1 = self._kl_alignment(
            idx_t[rows], mask_t[rows], idx_t1[rows], mask_t1[rows])

        # alpha rows are sample-major (s*heads + u); the t support is the
        # slot axis itself, the t+1 values are fetched via pos_t1. Slots
        # outside the common support are redirected to slot 0 (the always
        # valid self slot) so the log stays finite; they are masked out of
        # every sum anyway.
        pos_p = np.where(common, np.arange(slots)[None, :], 0)
        row_base = np.arange(s * heads)[:, None] * slots
        flat_p = row_base + np.repeat(pos_p, heads, axis=0)
        flat_q = row_base + np.repeat(pos_t1, heads, axis=0)
        sel2d = np.repeat(common, heads, axis=0).astype(float)

        p_raw = nn.reshape(
            nn.gather_rows(nn.reshape(alpha_t, (-1, 1)), flat_p.ravel()),
            (s * heads, slots))
        p_masked = nn.mul(p_raw, sel2d)
        # the common mass can underflow once logits saturate; flooring keeps
        # the renormalization exact in the healthy regime and bounded otherwise
        p_sum = nn.clamp_min(nn.reduce_sum(p_masked, axis=1, keepdims=True), 1e-30)
        p_norm = nn.div(p_masked, p_sum)

        q_raw = alpha_t1.data.reshape(-1)[flat_q.ravel()].reshape(s * heads, slots)
        q_masked = q_raw * sel2d
        q_norm = q_masked / np.maximum(q_masked.sum(axis=1, keepdims=True), 1e-30)
        log_q = np.log(np.maximum(q_norm, 1e-8))

        # a saturated softmax can emit exact zeros even on valid slots; those
        # entries contribute p*log(p) -> 0, the floor only keeps log finite
        log_p = nn.log(nn.clamp_min(p_raw, 1e-300))
        contrib = nn.mul(p_norm, nn.sub(nn.sub(log_p, nn.log(p_sum)), log_q))
        kl_mean = nn.mul(nn.reduce_sum(contrib), 1.0 / (s * heads))
        total = nn.add(td_mse, nn.mul(kl_mean, lam))
        return total, float(td_mse.data), float(kl_mean.data)

    def sync_target(self):
        for net, target in zip(self.nets, self.targets):
            target.copy_from(net)

    def update(self) -> float | None:
        """One gradient step per parameter set; returns the mean loss."""
        if len(self.buffer) < self.cfg.batch_size:
            return None
        losses = []
        for i, net in enumerate(self.nets):
            batch = self.buffer.sample(self.cfg.batch_size, self.rng)
            loss_var, _, _ = self.loss(batch, net_index=i)
            net.zero_grad()
            loss_var.backward()
            nn.clip_grad_norm(net.named_params(), self.cfg.grad_clip_norm)
            self.optimizers[i].step()
            losses.append(float(loss_var.data))
        self.update_count += 1
        if self.update_count % self.cfg.target_sync_period == 0:
            self.sync_target()
        return float(np.mean(losses))

    # --- persistence ------------------------------------------------------

    def save_checkpoint(self, path):
        nn.save_params(path, self.nets[0].named_params(), self.net_cfg.as_dict())

    def load_checkpoint(self, path):
        nn.load_params(path, self.nets[0].named_params(), self.net_cfg.as_dict())
        self.sync_target()


@dataclass
class _MlpExperience:
    obs: np.ndarray
    action: int
    reward: float
    obs_next: np.ndarray
    terminal: bool


class IddqnTrainer:
    """Independent per-agent double-DQN on the private observation only."""

    learns = True

    def __init__(self, obs_dim: int, n_actions: int, n_agents: int,
                 cfg: TrainConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.rng = rng
        h = cfg.q_hidden
        self.layers = []
        self.target_layers = []
        self.optimizers = []
        for _ in range(n_agents):
            stack = [nn.DenseParams.init(rng, obs_dim, h),
                     nn.DenseParams.init(rng, h, h),
                     nn.DenseParams.init(rng, h, n_actions)]
            target = [nn.DenseParams.init(rng, obs_dim, h, requires_grad=False),
                      nn.DenseParams.init(rng, h, h, requires_grad=False),
                      nn.DenseParams.init(rng, h, n_actions, requires_grad=False)]
            self._copy_stack(target, stack)
            params = {}
            for li, d in enumerate(stack):
                params[f"l{li}.w"] = d.w
                params[f"l{li}.b"] = d.b
            self.layers.append(stack)
            self.target_layers.append(target)
            self.optimizers.append(nn.Adam(params, lr=cfg.lr))
        self.buffers = [ReplayBuffer(cfg.buffer_capacity) for _ in range(n_agents)]
        self.update_count = 0

    @staticmethod
    def _copy_stack(dst, src):
        for d, s in zip(dst, src):
            d.w.data = s.w.data.copy()
            d.b.data = s.b.data.copy()

    @staticmethod
    def _forward(stack, obs) -> nn.Var:
        h = nn.dense_forward(obs, stack[0], "relu")
        h = nn.dense_forward(h, stack[1], "relu")
        return nn.dense_forward(h, stack[2], "identity")

    def act(self, view: EnvView, eps: float, rng: np.random.Generator) -> np.ndarray:
        actions = np.zeros(self.n_agents, dtype=int)
        for m in range(self.n_agents):
            q = self._forward(self.layers[m], view.obs_norm[m][None, :]).data
            actions[m] = int(np.argmax(q[0]))
            if rng.random() < eps:
                actions[m] = rng.integers(0, self.n_actions)
        return actions

    def observe_transition(self, view: EnvView, next_view: EnvView,
                           actions: np.ndarray, rewards: np.ndarray, terminal: bool):
        for m in range(self.n_agents):
            self.buffers[m].add(_MlpExperience(
                obs=view.obs_norm[m], action=int(actions[m]),
                reward=float(rewards[m]), obs_next=next_view.obs_norm[m],
                terminal=terminal))

    def update(self) -> float | None:
        if any(len(b) < self.cfg.batch_size for b in self.buffers):
            return None
        losses = []
        for m in range(self.n_agents):
            batch = self.buffers[m].sample(self.cfg.batch_size, self.rng)
            obs = np.stack([e.obs for e in batch])
            obs_next = np.stack([e.obs_next for e in batch])
            rewards = np.array([e.reward for e in batch])
            terminals = np.array([e.terminal for e in batch])
            actions = np.array([e.action for e in batch])

            # online net picks the action, the lagged net scores it
            q_online_next = self._forward(self.layers[m], obs_next).data
            pick = np.argmax(q_online_next, axis=1)
            q_target_next = self._forward(self.target_layers[m], obs_next).data
            bootstrap = q_target_next[np.arange(len(batch)), pick]
            y = rewards + self.cfg.gamma * bootstrap * (~terminals)

            q = self._forward(self.layers[m], obs)
            q_flat = nn.reshape(q, (-1, 1))
            q_sa = nn.gather_rows(q_flat, np.arange(len(batch)) * self.n_actions + actions)
            diff = nn.sub(q_sa, y[:, None])
            loss = nn.mul(nn.reduce_sum(nn.mul(diff, diff)), 1.0 / len(batch))
            self.optimizers[m].zero_grad()
            loss.backward()
            nn.clip_grad_norm(self.optimizers[m].params, self.cfg.grad_clip_norm)
            self.optimizers[m].step()
            losses.append(float(loss.data))
        self.update_count += 1
        if self.update_count % self.cfg.target_sync_period == 0:
            for m in range(self.n_agents):
                self._copy_stack(self.target_layers[m], self.layers[m])
        return float(np.mean(losses))


def make_policy(scheme: str, env: VecCacheEnv, cfg: TrainConfig,
                rng: np.random.Generator):
    if scheme == "random":
        return RandomPolicy(env.n_actions)
    if scheme == "iddqn":
        return IddqnTrainer(env.obs_dim, env.n_actions, env.n_agents, cfg, rng)
    rsu_norm = env.world.rsu_positions / env.grid_cfg.road_length_m
    if scheme == "mgarl":
        return MgarlTrainer(env.obs_dim, env.n_actions, env.n_agents, cfg, rng,
                            uniform_attention=False, rsu_positions_norm=rsu_norm)
    if scheme == "no_attention":
        return MgarlTrainer(env.obs_dim, env.n_actions, env.n_agents, cfg, rng,
                            uniform_attention=True, lambda_kl=0.0,
                            rsu_positions_norm=rsu_norm)
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def train(env: VecCacheEnv, cfg: TrainConfig, scheme: str = "mgarl",
          seed: int = 0) -> tuple[list[EpisodeMetrics], object]:
    """Run the full training loop; returns per-episode metrics and the policy."""
    # keyed off [seed, 1] so the policy stream never collides with the
    # environment streams derived from [seed, 0]
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    policy = make_policy(scheme, env, cfg, rng)
    episode_ts = env.env_cfg.episode_ts
    metrics: list[EpisodeMetrics] = []
    for episode in range(cfg.episodes):
        eps = cfg.epsilon(episode) if policy.learns else 1.0
        view = env.reset()
        cum_reward = 0.0
        hits = 0
        total_latency = 0.0
        losses = []
        for t in range(episode_ts):
            actions = policy.act(view, eps, rng)
            outcome, next_view = env.step(actions)
            cum_reward += outcome.system_reward
            hits += int(outcome.hits.sum())
            total_latency += float(outcome.latencies.sum())
            if policy.learns and cfg.learning_enabled:
                policy.observe_transition(view, next_view, outcome.actions,
                                          outcome.rewards, terminal=(t == episode_ts - 1))
                for _ in range(cfg.grad_steps_per_ts):
                    loss = policy.update()
                    if loss is not None:
                        losses.append(loss)
            view = next_view
        metrics.append(EpisodeMetrics(
            episode=episode,
            cumulative_reward=cum_reward,
            hit_ratio=hits / (episode_ts * env.n_agents),
            total_latency_s=total_latency,
            epsilon=eps,
            loss_mean=float(np.mean(losses)) if losses else 0.0,
        ))
    return metrics, policy


# --- toy-MDP harness ---------------------------------------------------


@dataclass(frozen=True)
class DiscreteMdp:
    """Tiny deterministic MDP used to cross-check the TD machinery."""

    transitions: np.ndarray   # (S, A) -> next state
    rewards: np.ndarray       # (S, A) -> reward

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]


def value_iteration(mdp: DiscreteMdp, gamma: float, tol: float = 1e-12) -> np.ndarray:
    """Brute-force fixed point of the Bellman optimality operator."""
    q = np.zeros((mdp.n_states, mdp.n_actions))
    while True:
        v = q.max(axis=1)
        q_new = mdp.rewards + gamma * v[mdp.transitions]
        if np.abs(q_new - q).max() < tol:
            return q_new
        q = q_new


def train_q_on_mdp(mdp: DiscreteMdp, cfg: TrainConfig, steps: int = 6000,
                   eps: float = 0.3, seed: int = 0) -> np.ndarray:
    """Run the shared trainer on a one-agent MDP; returns the learned Q table.

    State observations are one-hot, the graph is a single self-only node,
    and the loss reduces to the plain TD term.
    """
    rng = np.random.default_rng(seed)
    trainer = MgarlTrainer(obs_dim=mdp.n_states, n_actions=mdp.n_actions,
                           n_agents=1, cfg=cfg, rng=rng, lambda_kl=0.0)
    idx = np.zeros((1, 1), dtype=int)
    mask = np.ones((1, 1), dtype=bool)

    def one_hot(s):
        v = np.zeros((1, mdp.n_states))
        v[0, s] = 1.0
        return v

    state = 0
    for _ in range(steps):
        obs = one_hot(state)
        if rng.random() < eps:
            action = int(rng.integers(mdp.n_actions))
        else:
            q, _ = trainer.nets[0].forward(obs, idx, mask)
            action = int(np.argmax(q.data[0]))
        nxt = int(mdp.transitions[state, action])
        trainer.buffer.add(Experience(
            obs_t=obs, obs_t1=one_hot(nxt), idx_t=idx, mask_t=mask,
            idx_t1=idx, mask_t1=mask, agent=0, action=action,
            reward=float(mdp.rewards[state, action]), terminal=False))
        trainer.update()
        state = nxt

    table = np.zeros((mdp.n_states, mdp.n_actions))
    for s in range(mdp.n_states):
        q, _ = trainer.nets[0].forward(one_hot(s), idx, mask)
        table[s] = q.data[0]
    return table
