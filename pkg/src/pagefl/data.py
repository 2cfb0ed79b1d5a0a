"""Synthetic federated datasets and Non-IID partitioners."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import binio

SIZE_JITTER_SIGMA = 0.25


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.features.shape[0] != self.labels.shape[0]:
            raise ValueError("features must be n x d and match the label count")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError("label outside [0, num_classes)")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx], self.num_classes)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        if not parts:
            raise ValueError("nothing to concatenate")
        return Dataset(
            np.concatenate([p.features for p in parts], axis=0),
            np.concatenate([p.labels for p in parts]),
            parts[0].num_classes,
        )

    def save(self, path) -> None:
        n, d = self.features.shape
        with open(path, "wb") as fh:
            binio.write_i64(fh, n)
            binio.write_i64(fh, d)
            binio.write_i64(fh, self.num_classes)
            binio.write_f64_array(fh, self.features)
            binio.write_i64_array(fh, self.labels)

    @classmethod
    def load(cls, path) -> "Dataset":
        with open(path, "rb") as fh:
            n = binio.read_i64(fh)
            d = binio.read_i64(fh)
            k = binio.read_i64(fh)
            feats = binio.read_f64_array(fh, n * d).reshape(n, d)
            labels = binio.read_i64_array(fh, n)
        return cls(feats, labels, k)


@dataclass(frozen=True)
class SyntheticConfig:
    num_clients: int = 100
    dims: int = 30
    classes: int = 30
    a: float = 1.0
    b: float = 1.0
    mean_train_per_client: int = 210
    mean_test_per_client: int = 90
    server_test_size: int = 7500
    seed: int = 0

    def validate(self) -> None:
        if self.num_clients < 1 or self.dims < 1 or self.classes < 2:
            raise ValueError("need num_clients >= 1, dims >= 1, classes >= 2")
        if min(self.mean_train_per_client, self.mean_test_per_client, self.server_test_size) < 1:
            raise ValueError("sample sizes must be >= 1")
        if self.a < 0 or self.b < 0:
            raise ValueError("heterogeneity knobs a, b must be non-negative")


@dataclass(frozen=True)
class PartitionConfig:
    scheme: str = "dirichlet"  # dirichlet | lognormal | uniform
    delta: float = 0.3
    sigma: float = 0.3
    train_fraction: float = 0.7
    seed: int = 0

    def validate(self) -> None:
        if self.scheme not in ("dirichlet", "lognormal", "uniform"):
            raise ValueError(f"unknown partition scheme {self.scheme!r}")
        if self.delta <= 0 or self.sigma <= 0:
            raise ValueError("delta and sigma must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")


def _client_sampler(cfg: SyntheticConfig, rng: np.random.Generator):
    d, K = cfg.dims, cfg.classes
    W0 = rng.normal(0.0, 1.0, size=(d, K))
    b0 = rng.normal(0.0, 1.0, size=K)
    cov_diag = np.arange(1, d + 1, dtype=np.float64) ** -1.2
    clients = []
    for _ in range(cfg.num_clients):
        u = rng.normal(0.0, math.sqrt(cfg.a))
        W = W0 + u + math.sqrt(cfg.a) * rng.normal(size=(d, K))
        bias = b0 + u + math.sqrt(cfg.a) * rng.normal(size=K)
        B = rng.normal(0.0, math.sqrt(cfg.b))
        mean = B + math.sqrt(cfg.b) * rng.normal(size=d)
        clients.append((W, bias, mean))
    return clients, np.sqrt(cov_diag)


def _draw(client, std, n, rng, K) -> Dataset:
    W, bias, mean = client
    X = mean + std * rng.normal(size=(n, std.shape[0]))
    y = np.argmax(X @ W + bias, axis=1)
    return Dataset(X, y, K)


def generate_synthetic(cfg: SyntheticConfig):
    """Returns ``([(train, test), ...], server_test)``.

    Each client owns a perturbed copy of a shared linear softmax model
    (perturbation variance ``a``) and a shifted feature mean (variance
    ``b``); ``a = b = 0`` makes all clients identically distributed. The
    server test set samples the client mixture and is topped up so every
    class appears.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    clients, std = _client_sampler(cfg, rng)
    K = cfg.classes
    out = []
    for client in clients:
        m = math.exp(rng.normal(-SIZE_JITTER_SIGMA ** 2 / 2, SIZE_JITTER_SIGMA))
        n_train = max(1, int(round(cfg.mean_train_per_client * m)))
        n_test = max(1, int(round(cfg.mean_test_per_client * m)))
        out.append((_draw(client, std, n_train, rng, K), _draw(client, std, n_test, rng, K)))

    owner = rng.integers(0, cfg.num_clients, size=cfg.server_test_size)
    parts = [_draw(clients[k], std, int((owner == k).sum()), rng, K) for k in range(cfg.num_clients)]
    server = Dataset.concat(parts)
    server = server.subset(rng.permutation(len(server)))
    server = _cover_all_classes(server, clients, std, rng)
    return out, server


def _cover_all_classes(server: Dataset, clients, std, rng, max_draws: int = 200_000) -> Dataset:
    counts = server.class_counts()
    missing = [c for c in range(server.num_classes) if counts[c] == 0]
    if not missing:
        return server
    feats, labels = server.features.copy(), server.labels.copy()
    drawn = 0
    while missing and drawn < max_draws:
        k = int(rng.integers(0, len(clients)))
        extra = _draw(clients[k], std, 256, rng, server.num_classes)
        drawn += 256
        for c in list(missing):
            hit = np.flatnonzero(extra.labels == c)
            if hit.size == 0:
                continue
            donor = int(np.argmax(np.bincount(labels, minlength=server.num_classes)))
            slot = int(np.flatnonzero(labels == donor)[0])
            feats[slot] = extra.features[hit[0]]
            labels[slot] = c
            missing.remove(c)
    return Dataset(feats, labels, server.num_classes)


def largest_remainder(weights, total: int) -> np.ndarray:
    """Integer allocation of ``total`` proportional to ``weights``, summing exactly."""
    w = np.asarray(weights, dtype=np.float64)
    quotas = w / w.sum() * total
    base = np.floor(quotas).astype(np.int64)
    rest = total - int(base.sum())
    if rest > 0:
        order = np.argsort(-(quotas - base), kind="stable")
        base[order[:rest]] += 1
    return base


def _check_source(source: Dataset, num_clients: int) -> None:
    if num_clients < 1:
        raise ValueError("need at least one client")
    if num_clients > len(source):
        raise ValueError(f"cannot split {len(source)} samples across {num_clients} clients")


def dirichlet_proportions(num_clients: int, num_classes: int, delta: float, rng) -> np.ndarray:
    q = rng.dirichlet(np.full(num_classes, delta), size=num_clients)
    return q / q.sum(axis=1, keepdims=True)


def partition_dirichlet(source: Dataset, num_clients: int, delta: float, seed: int) -> list[Dataset]:
    """Equal-size clients whose class mix follows ``Dir(delta)``.

    Slots are filled round-robin; each draw picks a class from the client's
    proportions restricted to classes that still have samples left.
    """
    _check_source(source, num_clients)
    if delta <= 0:
        raise ValueError("delta must be positive")
    rng = np.random.default_rng(seed)
    K = source.num_classes
    props = dirichlet_proportions(num_clients, K, delta, rng)
    pools = [list(rng.permutation(np.flatnonzero(source.labels == c))) for c in range(K)]
    remaining = np.array([len(p) for p in pools], dtype=np.int64)
    sizes = largest_remainder(np.ones(num_clients), len(source))
    assigned: list[list[int]] = [[] for _ in range(num_clients)]
    for slot in range(int(sizes.max())):
        for i in range(num_clients):
            if slot >= sizes[i]:
                continue
            avail = remaining > 0
            p = np.where(avail, props[i], 0.0)
            total = p.sum()
            p = p / total if total > 0 else avail / avail.sum()
            c = int(np.searchsorted(np.cumsum(p), rng.random() * p.sum(), side="right"))
            c = min(c, K - 1)
            while not avail[c]:  # guards cumsum round-off at the top end
                c -= 1
            assigned[i].append(int(pools[c].pop()))
            remaining[c] -= 1
    return [source.subset(np.sort(np.array(idx, dtype=np.int64))) for idx in assigned]


def partition_quantity_lognormal(source: Dataset, num_clients: int, sigma: float, seed: int) -> list[Dataset]:
    _check_source(source, num_clients)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    rng = np.random.default_rng(seed)
    sizes = largest_remainder(np.exp(rng.normal(0.0, sigma, size=num_clients)), len(source))
    # keep every client non-empty
    while sizes.min() == 0:
        sizes[np.argmax(sizes)] -= 1
        sizes[np.argmin(sizes)] += 1
    return _cut(source, sizes, rng)


def partition_uniform(source: Dataset, num_clients: int, seed: int) -> list[Dataset]:
    _check_source(source, num_clients)
    rng = np.random.default_rng(seed)
    return _cut(source, largest_remainder(np.ones(num_clients), len(source)), rng)


def _cut(source: Dataset, sizes, rng) -> list[Dataset]:
    perm = rng.permutation(len(source))
    bounds = np.concatenate([[0], np.cumsum(sizes)])
    return [source.subset(np.sort(perm[bounds[i]:bounds[i + 1]])) for i in range(len(sizes))]


def partition(source: Dataset, num_clients: int, cfg: PartitionConfig) -> list[Dataset]:
    cfg.validate()
    if cfg.scheme == "dirichlet":
        return partition_dirichlet(source, num_clients, cfg.delta, cfg.seed)
    if cfg.scheme == "lognormal":
        return partition_quantity_lognormal(source, num_clients, cfg.sigma, cfg.seed)
    return partition_uniform(source, num_clients, cfg.seed)


def split_train_test(d: Dataset, fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    n = len(d)
    if n == 0:
        raise ValueError("cannot split an empty dataset")
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    n_train = max(1, int(math.floor(fraction * n + 0.5)))
    perm = np.random.default_rng(seed).permutation(n)
    return d.subset(perm[:n_train]), d.subset(perm[n_train:])
