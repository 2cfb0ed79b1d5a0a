"""Continuous-action actor-critic agent with replay and soft-updated targets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import binio, numerics
from .numerics import MlpSpec, ShapeError


@dataclass(frozen=True)
class DdpgConfig:
    state_dim: int
    action_dim: int
    action_head: str = "bounded_tanh"  # bounded_tanh (box) | simplex_softmax
    action_low: float = -1.0
    action_high: float = 1.0
    hidden_sizes: tuple[int, ...] = (64, 64)
    l_actor: float = 1e-4
    l_critic: float = 1e-3
    beta: float = 0.01
    gamma: float = 0.99
    buffer_capacity: int = 10_000
    batch_size: int = 64
    noise_std0: float = 0.2
    noise_decay: float = 0.99
    warmup_steps: int = 0
    reward_clip: float = 100.0
    actor_final_scale: float | None = 3e-3
    critic_final_scale: float | None = 3e-3
    optimizer: str = "adam"  # adam | sgd
    # "lagged": targets track the pre-update main networks; "updated": post-update
    soft_update: str = "lagged"

    def __post_init__(self):
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if self.state_dim < 1 or self.action_dim < 1:
            raise ValueError("state_dim and action_dim must be >= 1")
        if self.action_head not in ("bounded_tanh", "simplex_softmax"):
            raise ValueError(f"unsupported action head {self.action_head!r}")
        if not self.action_low < self.action_high:
            raise ValueError("action_low must be below action_high")
        if self.l_actor <= 0 or self.l_critic <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must lie in [0, 1)")
        if not 1 <= self.batch_size <= self.buffer_capacity:
            raise ValueError("need 1 <= batch_size <= buffer_capacity")
        if self.noise_std0 < 0 or not 0.0 < self.noise_decay <= 1.0:
            raise ValueError("invalid exploration schedule")
        if self.warmup_steps < 0 or self.reward_clip <= 0:
            raise ValueError("invalid warmup_steps or reward_clip")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError("optimizer must be 'adam' or 'sgd'")
        if self.soft_update not in ("lagged", "updated"):
            raise ValueError("soft_update must be 'lagged' or 'updated'")

    @property
    def actor_spec(self) -> MlpSpec:
        return MlpSpec((self.state_dim, *self.hidden_sizes, self.action_dim), "tanh", self.action_head)

    @property
    def critic_spec(self) -> MlpSpec:
        return MlpSpec((self.state_dim + self.action_dim, *self.hidden_sizes, 1), "tanh", "identity")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_sizes"] = list(self.hidden_sizes)
        return d


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray


@dataclass
class ReplayBuffer:
    capacity: int
    state_dim: int
    action_dim: int
    cursor: int = 0
    size: int = 0
    states: np.ndarray = field(init=False)
    actions: np.ndarray = field(init=False)
    rewards: np.ndarray = field(init=False)
    next_states: np.ndarray = field(init=False)

    def __post_init__(self):
        self.states = np.zeros((self.capacity, self.state_dim))
        self.actions = np.zeros((self.capacity, self.action_dim))
        self.rewards = np.zeros(self.capacity)
        self.next_states = np.zeros((self.capacity, self.state_dim))

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition) -> None:
        s = np.asarray(t.s, dtype=np.float64)
        a = np.asarray(t.a, dtype=np.float64)
        s2 = np.asarray(t.s_next, dtype=np.float64)
        if s.shape != (self.state_dim,) or s2.shape != (self.state_dim,) or a.shape != (self.action_dim,):
            raise ShapeError("transition dimensions do not match the buffer")
        if not np.isfinite(t.r):
            raise ValueError("reward must be finite")
        k = self.cursor
        self.states[k] = s
        self.actions[k] = a
        self.rewards[k] = t.r
        self.next_states[k] = s2
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest_first(self) -> list[Transition]:
        start = self.cursor if self.size == self.capacity else 0
        order = [(start + j) % self.capacity for j in range(self.size)]
        return [Transition(self.states[k].copy(), self.actions[k].copy(), float(self.rewards[k]),
                           self.next_states[k].copy()) for k in order]


def clip_reward(r: float, r_max: float) -> float:
    return float(min(max(r, -r_max), r_max))


class DdpgAgent:
    def __init__(self, cfg: DdpgConfig, seed):
        self.cfg = cfg
        ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
        init_ss, noise_ss, sample_ss = ss.spawn(3)
        init_rng = np.random.default_rng(init_ss)
        self.noise_rng = np.random.default_rng(noise_ss)
        self.sample_rng = np.random.default_rng(sample_ss)
        self.actor_spec = cfg.actor_spec
        self.critic_spec = cfg.critic_spec
        self._raw_spec = dataclasses.replace(self.actor_spec, output_head="identity")
        self.theta_mu = numerics.init_params(self.actor_spec, init_rng, cfg.actor_final_scale)
        self.theta_q = numerics.init_params(self.critic_spec, init_rng, cfg.critic_final_scale)
        self.theta_mu_target = self.theta_mu.copy()
        self.theta_q_target = self.theta_q.copy()
        self._opt_mu = numerics.Adam(self.theta_mu.size, cfg.l_actor)
        self._opt_q = numerics.Adam(self.theta_q.size, cfg.l_critic)
        self.buffer = ReplayBuffer(cfg.buffer_capacity, cfg.state_dim, cfg.action_dim)
        self.steps = 0
        self.noise_std = cfg.noise_std0

    # -- policy ---------------------------------------------------------
    def _scale(self, u: np.ndarray) -> np.ndarray:
        if self.cfg.action_head == "simplex_softmax":
            return u
        lo, hi = self.cfg.action_low, self.cfg.action_high
        return lo + (u + 1.0) * (0.5 * (hi - lo))

    def _check_state(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=np.float64)
        if s.shape[-1] != self.cfg.state_dim:
            raise ShapeError(f"state has {s.shape[-1]} entries, expected {self.cfg.state_dim}")
        return s

    def random_action(self) -> np.ndarray:
        if self.cfg.action_head == "simplex_softmax":
            return self.noise_rng.dirichlet(np.ones(self.cfg.action_dim))
        return self.noise_rng.uniform(self.cfg.action_low, self.cfg.action_high, size=self.cfg.action_dim)

    def act(self, s, explore: bool = False) -> np.ndarray:
        s = self._check_state(s)
        if not explore:
            return self.policy(s)
        self.steps += 1
        if self.steps <= self.cfg.warmup_steps:
            return self.random_action()
        noise = self.noise_rng.normal(0.0, self.noise_std, size=self.cfg.action_dim)
        return self.policy(s, pre_head_noise=noise)

    def policy(self, s, pre_head_noise=None, params=None) -> np.ndarray:
        params = self.theta_mu if params is None else params
        u = numerics.mlp_forward(self.actor_spec, params, self._check_state(s), pre_head_noise)
        return self._scale(u)

    def pre_head(self, s) -> np.ndarray:
        """Raw actor output before the squashing head."""
        return numerics.mlp_forward(self._raw_spec, self.theta_mu, self._check_state(s))

    def from_pre_head(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.cfg.action_head == "simplex_softmax":
            return numerics.softmax(z)
        return self._scale(np.tanh(z))

    def decay_noise(self) -> None:
        self.noise_std = max(self.noise_std * self.cfg.noise_decay, 0.01 * self.cfg.noise_std0)

    # -- learning -------------------------------------------------------
    def store(self, t: Transition) -> None:
        self.buffer.push(Transition(t.s, t.a, clip_reward(t.r, self.cfg.reward_clip), t.s_next))

    def sample_indices(self) -> np.ndarray:
        return self.sample_rng.integers(0, len(self.buffer), size=self.cfg.batch_size)

    def critic_targets(self, r, s_next) -> np.ndarray:
        a_next = self.policy(s_next, params=self.theta_mu_target)
        sa = np.concatenate([s_next, a_next], axis=1)
        q_next = numerics.mlp_forward(self.critic_spec, self.theta_q_target, sa)[:, 0]
        return r + self.cfg.gamma * q_next

    def critic_loss_and_grad(self, theta_q, s, a, y):
        return numerics.mse_loss_and_grad(self.critic_spec, theta_q, np.concatenate([s, a], axis=1), y[:, None])

    def actor_objective_and_grad(self, theta_mu, s, theta_q=None):
        """Mean ``Q(s, mu(s))`` and its gradient w.r.t. the actor parameters."""
        theta_q = self.theta_q if theta_q is None else theta_q
        u, a_cache = numerics.forward_cached(self.actor_spec, theta_mu, s)
        a = self._scale(u)
        n = a.shape[0]
        q, c_cache = numerics.forward_cached(self.critic_spec, theta_q, np.concatenate([s, a], axis=1))
        _, g_in = numerics.backward(self.critic_spec, theta_q, c_cache, np.full((n, 1), 1.0 / n))
        dq_da = g_in[:, self.cfg.state_dim:]
        if self.cfg.action_head == "bounded_tanh":
            dq_da = dq_da * (0.5 * (self.cfg.action_high - self.cfg.action_low))
        g_mu, _ = numerics.backward(self.actor_spec, theta_mu, a_cache, dq_da)
        return float(q.mean()), g_mu

    def learn_step(self):
        """One critic descent and actor ascent step on a uniform replay batch.

        Returns ``(critic_loss, actor_objective)`` or ``None`` while the buffer
        holds fewer than ``batch_size`` transitions.
        """
        cfg = self.cfg
        if len(self.buffer) < cfg.batch_size:
            return None
        idx = self.sample_indices()
        buf = self.buffer
        s, a, r, s2 = buf.states[idx], buf.actions[idx], buf.rewards[idx], buf.next_states[idx]
        y = self.critic_targets(r, s2)
        critic_loss, g_q = self.critic_loss_and_grad(self.theta_q, s, a, y)
        objective, g_mu = self.actor_objective_and_grad(self.theta_mu, s)
        old_mu, old_q = self.theta_mu, self.theta_q
        if cfg.optimizer == "adam":
            self.theta_q = self._opt_q.step(self.theta_q, g_q)
            self.theta_mu = self._opt_mu.step(self.theta_mu, -g_mu)
        else:
            self.theta_q = numerics.sgd_step(self.theta_q, g_q, cfg.l_critic)
            self.theta_mu = numerics.sgd_step(self.theta_mu, -g_mu, cfg.l_actor)
        src_mu, src_q = (old_mu, old_q) if cfg.soft_update == "lagged" else (self.theta_mu, self.theta_q)
        self.theta_mu_target = cfg.beta * src_mu + (1.0 - cfg.beta) * self.theta_mu_target
        self.theta_q_target = cfg.beta * src_q + (1.0 - cfg.beta) * self.theta_q_target
        return critic_loss, objective

    # -- persistence ----------------------------------------------------
    def save(self, path) -> None:
        meta = {"config": self.cfg.to_dict(), "steps": self.steps, "noise_std": self.noise_std}
        binio.write_vectors(path, [self.theta_mu, self.theta_q, self.theta_mu_target, self.theta_q_target], meta)

    @classmethod
    def load(cls, path, seed=0) -> "DdpgAgent":
        vectors, meta = binio.read_vectors(path)
        cfg = DdpgConfig(**meta["config"])
        agent = cls(cfg, seed)
        agent.theta_mu, agent.theta_q, agent.theta_mu_target, agent.theta_q_target = vectors
        agent.steps = int(meta["steps"])
        agent.noise_std = float(meta["noise_std"])
        return agent
