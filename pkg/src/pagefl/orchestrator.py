"""Round loops for PAGE and the FedAvg / FedProx baselines."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import binio, game, numerics
from .config import AgentConfig, ExperimentConfig, config_from_dict
from .data import Dataset, PartitionConfig, SyntheticConfig, generate_synthetic, partition, split_train_test
from .ddpg import DdpgAgent, DdpgConfig, Transition
from .flcore import LocalTrainSpec, aggregate, evaluate, local_train, steps_per_epoch, validate_weights
from .numerics import MlpSpec

# stream tags for SeedSequence([seed, tag, ...])
_INIT, _SERVER_AGENT, _CLIENT_AGENT, _LOCAL, _EVAL = 1, 2, 3, 4, 5


@dataclass
class Federation:
    clients: list[tuple[Dataset, Dataset]]  # (train, test) per client
    server_test: Dataset
    model_spec: MlpSpec

    @property
    def num_clients(self) -> int:
        return len(self.clients)


@dataclass
class RoundRecord:
    t: int
    global_acc: float
    global_loss: float
    mean_local_acc: float
    var_local_acc: float
    mean_local_acc_pre: float
    r_cs: float
    mean_r_i: float
    weights: list[float]
    alphas: list[int]
    etas: list[float]
    wall_ms: float = 0.0


@dataclass
class RunResult:
    seed: int
    history: list[RoundRecord]
    global_model: np.ndarray
    local_models: list[np.ndarray]
    equilibrium_round: int | None
    total_grad_steps: int
    controller: object = field(repr=False, default=None)

    @property
    def final(self) -> RoundRecord:
        return self.history[-1]


def build_federation(cfg: ExperimentConfig, seed: int) -> Federation:
    d = cfg.data
    syn = SyntheticConfig(
        num_clients=cfg.num_clients, dims=d.dims, classes=d.classes, a=d.a, b=d.b,
        mean_train_per_client=d.mean_train, mean_test_per_client=d.mean_test,
        server_test_size=d.server_test_size, seed=seed,
    )
    clients, server = generate_synthetic(syn)
    if d.partition is not None:
        p = d.partition
        pooled = Dataset.concat([part for pair in clients for part in pair])
        pcfg = PartitionConfig(p.scheme, p.delta, p.sigma, p.train_fraction, seed=seed)
        shards = partition(pooled, cfg.num_clients, pcfg)
        clients = [split_train_test(shard, p.train_fraction, seed=[seed, i]) for i, shard in enumerate(shards)]
    spec = MlpSpec((d.dims, *cfg.model.hidden, d.classes), cfg.model.activation, "softmax_logits")
    return Federation(clients, server, spec)


def detect_equilibrium(global_acc, mean_local_acc, window: int, tol: float) -> int | None:
    """First 1-based round ``t >= window`` whose trailing window has both ranges within ``tol``."""
    if window < 2:
        raise ValueError("window must be >= 2")
    g = np.asarray(global_acc, dtype=np.float64)
    m = np.asarray(mean_local_acc, dtype=np.float64)
    for end in range(window, g.shape[0] + 1):
        gw, mw = g[end - window:end], m[end - window:end]
        if gw.max() - gw.min() <= tol and mw.max() - mw.min() <= tol:
            return end
    return None


def _equilibrium_fires(history: list[RoundRecord], window: int, tol: float) -> bool:
    if len(history) < window:
        return False
    tail = history[-window:]
    g = [r.global_acc for r in tail]
    m = [r.mean_local_acc for r in tail]
    return max(g) - min(g) <= tol and max(m) - min(m) <= tol


# -- strategy controllers -------------------------------------------------

class FixedController:
    """Constant ``(alpha, eta)`` for every client and constant weights."""

    def __init__(self, alpha: int, eta: float, weights: np.ndarray):
        self.alpha, self.eta = int(alpha), float(eta)
        self.weights = validate_weights(weights)

    def client_actions(self, t: int, states: list[float]) -> list[tuple[int, float]]:
        return [(self.alpha, self.eta)] * len(states)

    def client_feedback(self, rewards: list[float]) -> None:
        pass

    def server_weights(self, t: int, state: np.ndarray) -> np.ndarray:
        return self.weights

    def server_feedback(self, reward: float) -> None:
        pass


def agent_config(ac: AgentConfig, state_dim: int, action_dim: int, head: str) -> DdpgConfig:
    return DdpgConfig(
        state_dim=state_dim, action_dim=action_dim, action_head=head,
        hidden_sizes=tuple(ac.hidden), l_actor=ac.l_actor, l_critic=ac.l_critic, beta=ac.beta,
        gamma=ac.gamma, buffer_capacity=ac.buffer_capacity, batch_size=ac.batch_size,
        noise_std0=ac.noise_std0, noise_decay=ac.noise_decay, warmup_steps=ac.warmup_steps,
        reward_clip=ac.reward_clip, optimizer=ac.optimizer, soft_update=ac.soft_update,
    )


class PageController:
    """One DDPG agent per client over ``(alpha, eta)`` and one server agent over weights.

    A transition for round ``t`` is completed with the state observed at the
    start of round ``t + 1`` and learned from right after it is stored.
    """

    def __init__(self, cfg: ExperimentConfig, seed: int):
        n = cfg.num_clients
        self.bounds = game.ActionBounds(cfg.bounds.alpha[0], cfg.bounds.alpha[1], cfg.bounds.eta[0], cfg.bounds.eta[1])
        self.client_updates = cfg.client_agent.updates_per_round
        self.server_updates = cfg.server_agent.updates_per_round
        ccfg = agent_config(cfg.client_agent, 1, 2, "bounded_tanh")
        scfg = agent_config(cfg.server_agent, n, n, "simplex_softmax")
        self.clients = [DdpgAgent(ccfg, np.random.SeedSequence([seed, _CLIENT_AGENT, i])) for i in range(n)]
        self.server = DdpgAgent(scfg, np.random.SeedSequence([seed, _SERVER_AGENT]))
        self._c_prev: list[tuple[np.ndarray, np.ndarray, float] | None] = [None] * n
        self._c_pending: list[tuple[np.ndarray, np.ndarray]] = []
        self._s_prev: tuple[np.ndarray, np.ndarray, float] | None = None
        self._s_pending: tuple[np.ndarray, np.ndarray] | None = None

    @staticmethod
    def _learn(agent: DdpgAgent, updates: int) -> None:
        for _ in range(updates):
            if agent.learn_step() is None:
                break

    def client_actions(self, t: int, states: list[float]) -> list[tuple[int, float]]:
        out = []
        self._c_pending = []
        for i, (agent, acc) in enumerate(zip(self.clients, states)):
            s = np.array([acc])
            if self._c_prev[i] is not None:
                s0, a0, r0 = self._c_prev[i]
                agent.store(Transition(s0, a0, r0, s))
                self._learn(agent, self.client_updates)
            a = agent.act(s, explore=True)
            agent.decay_noise()
            self._c_pending.append((s, a))
            out.append(game.decode_unit_action(a, self.bounds))
        return out

    def client_feedback(self, rewards: list[float]) -> None:
        self._c_prev = [(s, a, float(r)) for (s, a), r in zip(self._c_pending, rewards)]

    def server_weights(self, t: int, state: np.ndarray) -> np.ndarray:
        s = np.asarray(state, dtype=np.float64)
        if self._s_prev is not None:
            s0, a0, r0 = self._s_prev
            self.server.store(Transition(s0, a0, r0, s))
            self._learn(self.server, self.server_updates)
        p = self.server.act(s, explore=True)
        self.server.decay_noise()
        # a Dirichlet warm-up draw can underflow to exactly 0
        p = np.maximum(p, 1e-12)
        p = p / p.sum()
        self._s_pending = (s, p)
        return validate_weights(p)

    def server_feedback(self, reward: float) -> None:
        s, p = self._s_pending
        self._s_prev = (s, p, float(reward))


def make_controller(cfg: ExperimentConfig, fed: Federation, seed: int):
    n = fed.num_clients
    if cfg.algorithm == "page":
        if cfg.freeze is not None:
            return FixedController(cfg.freeze.alpha, cfg.freeze.eta, np.full(n, 1.0 / n))
        return PageController(cfg, seed)
    if cfg.fedavg_weighting == "uniform":
        w = np.full(n, 1.0 / n)
    else:
        sizes = np.array([len(train) for train, _ in fed.clients], dtype=np.float64)
        w = sizes / sizes.sum()
    return FixedController(cfg.local.epochs, cfg.local.learning_rate, w)


def initial_model(cfg: ExperimentConfig, spec: MlpSpec, seed: int) -> np.ndarray:
    return numerics.init_params(spec, np.random.default_rng(np.random.SeedSequence([seed, _INIT])))


def local_seed(seed: int, t: int, i: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([seed, _LOCAL, t, i])


def _server_eval_set(cfg: ExperimentConfig, fed: Federation, seed: int, t: int) -> Dataset:
    k = cfg.server_eval_subsample
    if k is None or k >= len(fed.server_test):
        return fed.server_test
    rng = np.random.default_rng(np.random.SeedSequence([seed, _EVAL, t]))
    return fed.server_test.subset(np.sort(rng.choice(len(fed.server_test), size=k, replace=False)))


def _run(cfg: ExperimentConfig, seed: int | None = None, fed: Federation | None = None) -> RunResult:
    cfg.validate()
    seed = cfg.seed if seed is None else int(seed)
    fed = build_federation(cfg, seed) if fed is None else fed
    n = fed.num_clients
    if n != cfg.num_clients:
        raise ValueError("federation size differs from num_clients")
    spec = fed.model_spec
    ctrl = make_controller(cfg, fed, seed)
    prox_mu = cfg.prox_mu
    bs = cfg.local.batch_size
    W = initial_model(cfg, spec, seed)
    history: list[RoundRecord] = []
    local_models: list[np.ndarray] = []
    grad_steps = 0
    for t in range(1, cfg.rounds + 1):
        start = time.perf_counter() if cfg.timing else 0.0
        # 1-2: distribute W(t), clients observe and pick (alpha, eta)
        pre = [evaluate(spec, W, test)[0] for _, test in fed.clients]
        actions = ctrl.client_actions(t, pre)
        # 3-4: local training and upload
        local_models = []
        loc_acc, loc_loss = np.zeros(n), np.zeros(n)
        for i, ((train, test), (alpha, eta)) in enumerate(zip(fed.clients, actions)):
            ts = LocalTrainSpec(alpha, eta, bs, prox_mu)
            w_i = local_train(spec, W, train, ts, anchor=W, seed=local_seed(seed, t, i))
            grad_steps += alpha * steps_per_epoch(len(train), bs)
            local_models.append(w_i)
            loc_acc[i], loc_loss[i] = evaluate(spec, w_i, test)
        # 5: server observes per-client accuracy on its test set and picks weights
        d_cs = _server_eval_set(cfg, fed, seed, t)
        cs_eval = [evaluate(spec, w_i, d_cs) for w_i in local_models]
        cs_acc = np.array([a for a, _ in cs_eval])
        cs_loss = np.array([f for _, f in cs_eval])
        p = ctrl.server_weights(t, cs_acc)
        # 6: aggregate and reward
        W = aggregate(local_models, p)
        g_acc, g_loss = evaluate(spec, W, fed.server_test)
        f = loc_loss if cfg.server_reward_losses == "local" else cs_loss
        r_cs = game.server_reward(f, p, cfg.kappa_g, cfg.server_agent.reward_clip)
        r_i = [game.client_reward(f, cfg.kappa_l, cfg.client_agent.reward_clip) for f in loc_loss]
        ctrl.server_feedback(r_cs)
        ctrl.client_feedback(r_i)
        history.append(RoundRecord(
            t=t, global_acc=g_acc, global_loss=g_loss,
            mean_local_acc=float(loc_acc.mean()), var_local_acc=float(loc_acc.var()),
            mean_local_acc_pre=float(np.mean(pre)), r_cs=r_cs, mean_r_i=float(np.mean(r_i)),
            weights=[float(x) for x in p], alphas=[int(a) for a, _ in actions],
            etas=[float(e) for _, e in actions],
            wall_ms=(time.perf_counter() - start) * 1e3 if cfg.timing else 0.0,
        ))
        if cfg.stop.enabled and _equilibrium_fires(history, cfg.stop.window, cfg.stop.tol):
            break
    eq = detect_equilibrium([r.global_acc for r in history], [r.mean_local_acc for r in history],
                            cfg.stop.window, cfg.stop.tol)
    return RunResult(seed, history, W, local_models, eq, grad_steps, ctrl)


def run_page(cfg: ExperimentConfig, seed: int | None = None, fed: Federation | None = None) -> RunResult:
    if cfg.algorithm != "page":
        raise ValueError("run_page needs algorithm='page'")
    return _run(cfg, seed, fed)


def run_fedavg(cfg: ExperimentConfig, seed: int | None = None, fed: Federation | None = None) -> RunResult:
    if cfg.algorithm != "fedavg":
        raise ValueError("run_fedavg needs algorithm='fedavg'")
    return _run(cfg, seed, fed)


def run_fedprox(cfg: ExperimentConfig, seed: int | None = None, fed: Federation | None = None) -> RunResult:
    if cfg.algorithm != "fedprox":
        raise ValueError("run_fedprox needs algorithm='fedprox'")
    return _run(cfg, seed, fed)


def run(cfg: ExperimentConfig, seed: int | None = None, fed: Federation | None = None) -> RunResult:
    return _run(cfg, seed, fed)


def summarize(results: list[RunResult]) -> dict:
    """Mean and population variance of the final metrics over runs."""
    def stats(values):
        v = np.asarray(values, dtype=np.float64)
        return {"mean": float(v.mean()), "var": float(v.var()), "values": [float(x) for x in v]}

    eq = [r.equilibrium_round for r in results]
    eq_known = [e for e in eq if e is not None]
    return {
        "runs": len(results),
        "seeds": [r.seed for r in results],
        "final_global_acc": stats([r.final.global_acc for r in results]),
        "final_local_acc": stats([r.final.mean_local_acc for r in results]),
        "rounds_run": [len(r.history) for r in results],
        "equilibrium_round": {
            "values": eq,
            "mean": float(np.mean(eq_known)) if eq_known else None,
            "var": float(np.var(eq_known)) if eq_known else None,
        },
    }


def run_replicated(cfg: ExperimentConfig) -> tuple[dict, list[RunResult]]:
    results = [_run(cfg, cfg.seed + k) for k in range(cfg.runs)]
    return summarize(results), results


# -- checkpoints and the equilibrium probe --------------------------------

def save_checkpoint(path, cfg: ExperimentConfig, result: RunResult) -> None:
    """Directory with the config, final models and (for PAGE) the agents."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    stage = len(result.history)
    meta = {"config": cfg.to_dict(), "seed": result.seed, "stage": stage}
    binio.write_vectors(path / "models.bin", [result.global_model, *result.local_models], meta)
    ctrl = result.controller
    if isinstance(ctrl, PageController):
        ctrl.server.save(path / "server_agent.bin")
        for i, agent in enumerate(ctrl.clients):
            agent.save(path / f"client_agent_{i}.bin")
    (path / "checkpoint.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


class CheckpointError(ValueError):
    pass


class PageGame:
    """Replays PAGE with frozen greedy policies from a saved condition ``(W, t)``.

    Player 0 is the server; players ``1..N`` are the clients. A server
    deviation shifts the actor's pre-softmax output; a client deviation
    shifts its unit-box action before decoding.
    """

    def __init__(self, cfg: ExperimentConfig, seed: int, W: np.ndarray, stage: int,
                 server: DdpgAgent, clients: list[DdpgAgent], fed: Federation | None = None):
        self.cfg = cfg
        self.seed = seed
        self.W0 = np.array(W, dtype=np.float64)
        self.start_stage = stage + 1
        self.gamma = cfg.server_agent.gamma
        self.server = server
        self.clients = clients
        self.fed = build_federation(cfg, seed) if fed is None else fed
        self.bounds = game.ActionBounds(cfg.bounds.alpha[0], cfg.bounds.alpha[1], cfg.bounds.eta[0], cfg.bounds.eta[1])
        self.player_names = ["server"] + [f"client_{i}" for i in range(len(clients))]

    @classmethod
    def from_checkpoint(cls, path) -> "PageGame":
        path = Path(path)
        meta_file = path / "checkpoint.json"
        if not meta_file.is_file():
            raise CheckpointError(f"no checkpoint.json in {path}")
        meta = json.loads(meta_file.read_text(encoding="utf-8"))
        cfg = config_from_dict(meta["config"])
        if cfg.algorithm != "page" or cfg.freeze is not None:
            raise CheckpointError("equilibrium probing needs a checkpoint of a learning PAGE run")
        vectors, _ = binio.read_vectors(path / "models.bin")
        agent_files = [path / "server_agent.bin"] + [path / f"client_agent_{i}.bin" for i in range(cfg.num_clients)]
        missing = [f.name for f in agent_files if not f.is_file()]
        if missing:
            raise CheckpointError(f"checkpoint lacks {', '.join(missing)}")
        server = DdpgAgent.load(agent_files[0])
        clients = [DdpgAgent.load(f) for f in agent_files[1:]]
        return cls(cfg, int(meta["seed"]), vectors[0], int(meta["stage"]), server, clients)

    def action_dim(self, player: int) -> int:
        return self.fed.num_clients if player == 0 else 2

    def rollout(self, horizon: int, deviation: game.Deviation | None = None) -> np.ndarray:
        fed, spec, cfg = self.fed, self.fed.model_spec, self.cfg
        n = fed.num_clients
        W = self.W0.copy()
        out = np.zeros((horizon, n + 1))
        for k in range(horizon):
            t = self.start_stage + k
            dev = deviation if deviation is not None and deviation.stage == k else None
            local_losses = np.zeros(n)
            models = []
            for i, ((train, test), agent) in enumerate(zip(fed.clients, self.clients)):
                s = np.array([evaluate(spec, W, test)[0]])
                u = agent.policy(s)
                if dev is not None and dev.player == i + 1:
                    u = np.clip(u + dev.delta, -1.0, 1.0)
                alpha, eta = game.decode_unit_action(u, self.bounds)
                ts = LocalTrainSpec(alpha, eta, cfg.local.batch_size, cfg.prox_mu)
                w_i = local_train(spec, W, train, ts, anchor=W, seed=local_seed(self.seed, t, i))
                models.append(w_i)
                local_losses[i] = evaluate(spec, w_i, test)[1]
            cs = [evaluate(spec, w_i, fed.server_test) for w_i in models]
            z = self.server.pre_head(np.array([a for a, _ in cs]))
            if dev is not None and dev.player == 0:
                z = z + dev.delta
            p = game.server_action_to_weights(z)
            W = aggregate(models, p)
            f = local_losses if cfg.server_reward_losses == "local" else [f for _, f in cs]
            out[k, 0] = game.server_utility(f, p)
            out[k, 1:] = [game.client_utility(f) for f in local_losses]
        return out


def record_to_dict(r: RoundRecord) -> dict:
    return asdict(r)
