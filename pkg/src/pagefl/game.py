"""Rewards, action decoding, discounted payoffs and an empirical equilibrium probe.

Clients lead with local-training strategies ``(alpha, eta)``; the server
follows with aggregation weights. Utilities are reciprocal losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from . import numerics
from .flcore import validate_weights

LOSS_FLOOR = 1e-8
DEFAULT_R_MAX = 100.0


@dataclass(frozen=True)
class ActionBounds:
    alpha_min: int = 1
    alpha_max: int = 10
    eta_min: float = 1e-4
    eta_max: float = 0.5

    def __post_init__(self):
        if int(self.alpha_min) < 1 or self.alpha_min > self.alpha_max:
            raise ValueError("need 1 <= alpha_min <= alpha_max")
        if not 0.0 < self.eta_min <= self.eta_max:
            raise ValueError("need 0 < eta_min <= eta_max")


def clamp_loss(loss: float) -> float:
    return max(float(loss), LOSS_FLOOR)


def server_utility(losses, weights) -> float:
    """``1 / sum_i p_i f_i`` with losses floored, unclipped."""
    p = validate_weights(weights)
    f = np.array([clamp_loss(x) for x in np.asarray(losses, dtype=np.float64)])
    if f.shape != p.shape:
        raise ValueError("losses and weights differ in length")
    return 1.0 / float(np.dot(p, f))


def client_utility(loss: float) -> float:
    return 1.0 / clamp_loss(loss)


def server_reward(losses, weights, kappa_g: float = 1.0, r_max: float = DEFAULT_R_MAX) -> float:
    return kappa_g * min(server_utility(losses, weights), r_max)


def client_reward(loss: float, kappa_l: float = 1.0, r_max: float = DEFAULT_R_MAX) -> float:
    return kappa_l * min(client_utility(loss), r_max)


def server_action_to_weights(raw) -> np.ndarray:
    """Softmax of raw actor outputs; every weight lands strictly inside (0, 1)."""
    p = numerics.softmax(np.asarray(raw, dtype=np.float64))
    return validate_weights(p)


def decode_unit_action(u, bounds: ActionBounds) -> tuple[int, float]:
    """Map ``u`` in ``[-1, 1]^2`` to ``(alpha, eta)``.

    ``alpha`` is affine then rounded (ties go to the smaller value); ``eta``
    is affine on a log scale.
    """
    u = np.clip(np.asarray(u, dtype=np.float64), -1.0, 1.0)
    if u.shape != (2,):
        raise ValueError("client action must have two components")
    frac = 0.5 * (u + 1.0)
    a_cont = bounds.alpha_min + frac[0] * (bounds.alpha_max - bounds.alpha_min)
    alpha = int(math.ceil(a_cont - 0.5))
    alpha = min(max(alpha, bounds.alpha_min), bounds.alpha_max)
    if frac[1] <= 0.0:
        eta = bounds.eta_min
    elif frac[1] >= 1.0:
        eta = bounds.eta_max
    else:
        lo, hi = math.log(bounds.eta_min), math.log(bounds.eta_max)
        eta = min(max(math.exp(lo + frac[1] * (hi - lo)), bounds.eta_min), bounds.eta_max)
    return alpha, eta


def client_action_decode(raw, bounds: ActionBounds) -> tuple[int, float]:
    return decode_unit_action(np.tanh(np.asarray(raw, dtype=np.float64)), bounds)


# -- payoffs -------------------------------------------------------------

@dataclass
class PayoffLedger:
    """Per-stage utilities, stage 1 first."""

    gamma: float = 0.99
    kappa_g: float = 1.0
    kappa_l: float = 1.0
    u_cs: list[float] = field(default_factory=list)
    u_clients: list[list[float]] = field(default_factory=list)

    def record(self, u_cs: float, u_clients) -> None:
        self.u_cs.append(float(u_cs))
        self.u_clients.append([float(x) for x in u_clients])

    @property
    def stages(self) -> int:
        return len(self.u_cs)


def discounted_tail(utilities, gamma: float, tau: int, exponent_offset: int = 0) -> float:
    """``sum_{t=tau}^{T} gamma^(t - offset) u(t)`` over 1-indexed stages.

    Accumulated from the last stage backwards so that
    ``U(tau) = gamma^(tau-offset) u(tau) + U(tau+1)`` holds exactly.
    """
    u = list(utilities)
    T = len(u)
    if not 1 <= tau <= T:
        raise ValueError(f"stage {tau} outside recorded range 1..{T}")
    total = 0.0
    for t in range(T, tau - 1, -1):
        total = gamma ** (t - exponent_offset) * u[t - 1] + total
    return total


def accumulate_payoff(ledger: PayoffLedger, tau: int, convention: str = "payoff"):
    """Discounted utility sums from stage ``tau`` for the server and each client.

    ``convention="payoff"`` discounts stage ``t`` by ``gamma^t``; ``"rl"`` by
    ``gamma^(t-1)`` as in the agents' return.
    """
    if convention not in ("payoff", "rl"):
        raise ValueError("convention must be 'payoff' or 'rl'")
    off = 0 if convention == "payoff" else 1
    U_cs = discounted_tail(ledger.u_cs, ledger.gamma, tau, off)
    n = len(ledger.u_clients[0]) if ledger.u_clients else 0
    U_i = [discounted_tail([row[i] for row in ledger.u_clients], ledger.gamma, tau, off) for i in range(n)]
    return U_cs, U_i


# -- empirical equilibrium probe ----------------------------------------

@dataclass(frozen=True)
class Deviation:
    player: int
    stage: int  # 0-based offset into the replayed horizon
    delta: np.ndarray


class StageGame(Protocol):
    """A frozen multi-stage game that can be replayed from a fixed condition."""

    gamma: float
    start_stage: int
    player_names: list[str]

    def action_dim(self, player: int) -> int: ...

    def rollout(self, horizon: int, deviation: Deviation | None = None) -> np.ndarray:
        """Utilities of shape ``(horizon, n_players)``."""
        ...


def _discounted(game: StageGame, utilities: np.ndarray) -> np.ndarray:
    stages = game.start_stage + np.arange(utilities.shape[0])
    disc = np.array([game.gamma ** int(t) for t in stages])
    return disc @ utilities


def fse_diagnostic(game: StageGame, probes: int, horizon: int, scale: float = 0.2, seed=0) -> dict:
    """Probe unilateral single-stage deviations against the frozen policies.

    Each probe perturbs one player's action at one stage by a random
    direction of magnitude in ``[scale, 2*scale)`` and replays ``horizon``
    stages. The deviating player's payoff change is recorded.
    """
    if horizon < 1 or probes < 0:
        raise ValueError("need horizon >= 1 and probes >= 0")
    names = list(game.player_names)
    base = _discounted(game, game.rollout(horizon))
    ident = _discounted(game, game.rollout(horizon, Deviation(0, 0, np.zeros(game.action_dim(0)))))
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(probes):
        player = int(rng.integers(0, len(names)))
        stage = int(rng.integers(0, horizon))
        direction = rng.normal(size=game.action_dim(player))
        direction /= np.linalg.norm(direction)
        magnitude = scale * (1.0 + rng.random())
        payoff = _discounted(game, game.rollout(horizon, Deviation(player, stage, magnitude * direction)))
        delta = float(payoff[player] - base[player])
        ref = abs(float(base[player]))
        rows.append({
            "player": names[player],
            "stage": game.start_stage + stage,
            "magnitude": float(magnitude),
            "delta": delta,
            "relative_delta": delta / ref if ref > 0 else delta,
        })
    if rows:
        positive = sum(1 for r in rows if r["delta"] > 0)
        fraction = positive / len(rows)
        max_delta = max(r["delta"] for r in rows)
        max_rel = max(r["relative_delta"] for r in rows)
        certified = fraction <= 0.05 and max_rel <= 0.01
    else:
        fraction = max_delta = max_rel = None
        certified = None
    return {
        "horizon": horizon,
        "scale": scale,
        "probes": rows,
        "positive_fraction": fraction,
        "max_delta": max_delta,
        "max_relative_delta": max_rel,
        "identity_delta": float(ident[0] - base[0]),
        "baseline_payoffs": {name: float(v) for name, v in zip(names, base)},
        "certified": certified,
    }


class QuadraticBanditGame:
    """Single agent, constant state, utility ``-(a - target)^2`` on a box action."""

    def __init__(self, agent, target: float = 0.7, gamma: float = 0.99, start_stage: int = 1):
        self.agent = agent
        self.target = target
        self.gamma = gamma
        self.start_stage = start_stage
        self.player_names = ["agent"]
        self.state = np.zeros(agent.cfg.state_dim)

    def action_dim(self, player: int) -> int:
        return self.agent.cfg.action_dim

    def rollout(self, horizon: int, deviation: Deviation | None = None) -> np.ndarray:
        lo, hi = self.agent.cfg.action_low, self.agent.cfg.action_high
        out = np.zeros((horizon, 1))
        for k in range(horizon):
            a = self.agent.policy(self.state)
            if deviation is not None and deviation.stage == k:
                a = np.clip(a + deviation.delta, lo, hi)
            out[k, 0] = -float(np.sum((a - self.target) ** 2))
        return out


def bandit_agent_config(**overrides):
    """Agent settings used for the quadratic bandit sanity check."""
    from .ddpg import DdpgConfig

    base = dict(state_dim=1, action_dim=1, action_low=0.0, action_high=1.0, gamma=0.0,
                noise_std0=0.3, noise_decay=0.9995)
    base.update(overrides)
    return DdpgConfig(**base)


def train_quadratic_bandit(seed, steps: int = 5000, target: float = 0.7, cfg=None):
    """Train a fresh agent on reward ``-(a - target)^2`` with a constant state."""
    from .ddpg import DdpgAgent, Transition

    agent = DdpgAgent(cfg if cfg is not None else bandit_agent_config(), seed)
    s = np.zeros(agent.cfg.state_dim)
    for _ in range(steps):
        a = agent.act(s, explore=True)
        agent.decay_noise()
        agent.store(Transition(s, a, -float(np.sum((a - target) ** 2)), s))
        agent.learn_step()
    return agent
