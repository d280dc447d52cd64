"""Round-based federation: broadcast, local training, aggregation and
leave-one-domain-out evaluation."""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .aggregation import (
    DEFAULT_MU,
    ClientUpdate,
    aggregate,
    fedavg_weights,
    gamma,
    gap_value,
    gga_weights,
    prox_penalty,
)
from .data import DomainDataset, dirichlet_partition, leave_one_out_split
from .debias import DEFAULT_TAU, FewShotSet, debias_state, few_shot_set
from .errors import ConfigError, NumericalError
from .numerics import LOG_CLAMP, ModelParams, ModelSpec, forward, loss_and_grads, mlp_init, sgd_step
from .numerics import frobenius_distance

STRATEGIES = ("fedavg", "fedprox", "fedrd", "fedrd_no_dc", "fedrd_no_gga")
_MASK64 = (1 << 64) - 1


def uses_debias(strategy: str) -> bool:
    return strategy in ("fedrd", "fedrd_no_gga")


def uses_gga(strategy: str) -> bool:
    return strategy in ("fedrd", "fedrd_no_dc")


@dataclass(frozen=True)
class FederationConfig:
    num_clients: int
    rounds: int
    local_epochs: int
    batch_size: int
    learning_rate: float
    model: ModelSpec
    seed: int
    held_out_domain: int
    strategy: str = "fedrd"
    tau: float = DEFAULT_TAU
    mu: float = DEFAULT_MU

    def __post_init__(self) -> None:
        checks = [
            (self.num_clients >= 1, "num_clients must be >= 1"),
            (self.rounds >= 1, "rounds must be >= 1"),
            (self.local_epochs >= 1, "local_epochs must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (math.isfinite(self.learning_rate) and self.learning_rate >= 0,
             "learning_rate must be finite and >= 0"),
            (self.strategy in STRATEGIES, f"strategy must be one of {', '.join(STRATEGIES)}"),
            (0 < self.tau <= 1, "tau must be in the range (0, 1]"),
            (math.isfinite(self.mu) and self.mu >= 0, "mu must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)


@dataclass
class ClientState:
    client_id: int
    shard: DomainDataset
    few_shot: FewShotSet
    model: ModelParams | None = None
    stream_key: int = 0

    @classmethod
    def build(cls, client_id: int, shard: DomainDataset, tau: float = DEFAULT_TAU) -> "ClientState":
        if len(shard) == 0:
            raise ValueError(f"client {client_id} has an empty shard")
        return cls(client_id, shard, few_shot_set(shard.label_counts(), tau), None, shard_digest(shard))

    def rng(self, seed: int, round_index: int) -> np.random.Generator:
        return np.random.default_rng([seed & _MASK64, round_index, self.stream_key])


def shard_digest(shard: DomainDataset) -> int:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(shard.features).tobytes())
    h.update(np.ascontiguousarray(shard.labels).tobytes())
    return int.from_bytes(h.digest()[:8], "little")


@dataclass
class RoundMetrics:
    round: int
    client_ids: list[int]
    d: list[float]
    gap: list[float]
    gamma: list[float]
    beta: list[float]
    weight: list[float]
    lambda_last: list[float]
    local_loss: list[float]
    mean_participant_acc: float
    unseen_acc: float = float("nan")
    unseen_loss: float = float("nan")


@dataclass
class FederationReport:
    config: FederationConfig
    rounds: list[RoundMetrics] = field(default_factory=list)
    final_unseen_acc: float = float("nan")
    best_unseen_acc: float = float("nan")
    best_round: int = 0
    final_model: ModelParams | None = None

    def to_dict(self) -> dict:
        cfg = asdict(self.config)
        cfg["model"]["hidden_dims"] = list(cfg["model"]["hidden_dims"])
        return {
            "config": cfg,
            "rounds": [asdict(r) for r in self.rounds],
            "final_unseen_acc": self.final_unseen_acc,
            "best_unseen_acc": self.best_unseen_acc,
            "best_round": self.best_round,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def mean_cross_entropy(model: ModelParams, features: np.ndarray, labels: np.ndarray) -> float:
    probs = forward(model, features)
    p = probs[np.arange(labels.size), labels]
    return float(np.sum(-np.log(np.maximum(p, LOG_CLAMP)))) / labels.size


def evaluate(model: ModelParams, dataset: DomainDataset) -> tuple[float, float]:
    """Top-1 accuracy (ties go to the lowest class index) and mean cross-entropy."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    probs = forward(model, dataset.features)
    pred = np.argmax(probs, axis=1)
    acc = float(np.count_nonzero(pred == dataset.labels)) / len(dataset)
    p = probs[np.arange(len(dataset)), dataset.labels]
    loss = float(np.sum(-np.log(np.maximum(p, LOG_CLAMP)))) / len(dataset)
    return acc, loss


def local_update(
    client: ClientState,
    global_model: ModelParams,
    cfg: FederationConfig,
    round_index: int = 1,
    alpha_log: list | None = None,
) -> ClientUpdate:
    """Train one client from the broadcast global model.

    ``alpha_log``, when given, receives the class-weight vector used in each
    epoch.
    """
    if global_model.spec.layer_dims != cfg.model.layer_dims:
        raise ValueError("global model does not match the configured model spec")
    shard = client.shard
    x, y = shard.features, shard.labels
    n = len(shard)
    if n == 0:
        raise ValueError(f"client {client.client_id} has an empty shard")

    global_loss = mean_cross_entropy(global_model, x, y)
    local = global_model.copy()
    rng = client.rng(cfg.seed, round_index)
    debias = uses_debias(cfg.strategy)
    prox = cfg.strategy == "fedprox"
    ones = np.ones(cfg.model.num_classes)
    lam = 0.0

    for epoch in range(cfg.local_epochs):
        if debias:
            state = debias_state(global_model.classifier_weight, local.classifier_weight, client.few_shot)
            lam, alpha = state.lam, state.alpha
        else:
            alpha = ones
        if alpha_log is not None:
            alpha_log.append(alpha.copy())
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            try:
                loss, grads = loss_and_grads(local, x[idx], y[idx], alpha)
                scale = 1.0 / idx.size
                grads = grads.map(lambda g: g * scale)
                if prox:
                    extra, prox_grads = prox_penalty(local, global_model, cfg.mu)
                    loss = loss * scale + extra
                    grads = grads.zip_map(prox_grads, np.add)
                local = sgd_step(local, grads, cfg.learning_rate)
            except NumericalError as exc:
                raise NumericalError(
                    f"client {client.client_id}, round {round_index}, epoch {epoch + 1}: {exc}"
                ) from None

    local_loss = mean_cross_entropy(local, x, y)
    d = frobenius_distance(local.domain_weight, global_model.domain_weight)
    return ClientUpdate(
        client_id=client.client_id,
        model=local,
        num_samples=n,
        d=d,
        gap=gap_value(global_loss, local_loss),
        lambda_last=lam,
        local_loss=local_loss,
    )


def run_round(
    global_model: ModelParams,
    clients: Sequence[ClientState],
    cfg: FederationConfig,
    t: int,
    workers: int = 1,
) -> tuple[ModelParams, RoundMetrics]:
    if t < 1:
        raise ValueError("round index starts at 1")
    if not clients:
        raise ValueError("no clients")

    def job(c: ClientState) -> ClientUpdate:
        return local_update(c, global_model, cfg, t)

    if workers > 1 and len(clients) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            updates = list(pool.map(job, clients))
    else:
        updates = [job(c) for c in clients]
    updates.sort(key=lambda u: u.client_id)

    gammas = [gamma(u.gap) for u in updates]
    plan = gga_weights([u.d for u in updates], gammas)
    if uses_gga(cfg.strategy):
        weights = plan.weights
    else:
        weights = fedavg_weights([u.num_samples for u in updates])
    new_global = aggregate([u.model for u in updates], weights)

    by_id = {c.client_id: c for c in clients}
    for u in updates:
        by_id[u.client_id].model = u.model
    accs = [evaluate(new_global, by_id[u.client_id].shard)[0] for u in updates]

    metrics = RoundMetrics(
        round=t,
        client_ids=[u.client_id for u in updates],
        d=[u.d for u in updates],
        gap=[u.gap for u in updates],
        gamma=gammas,
        beta=[float(b) for b in plan.betas],
        weight=[float(w) for w in weights],
        lambda_last=[u.lambda_last for u in updates],
        local_loss=[u.local_loss for u in updates],
        mean_participant_acc=float(np.mean(accs)),
    )
    return new_global, metrics


def build_clients(
    train_domains: Sequence[DomainDataset],
    num_clients: int,
    dirichlet_alpha: float,
    seed: int,
    tau: float = DEFAULT_TAU,
) -> list[ClientState]:
    """Split each training domain into an equal number of Dirichlet label-skewed shards."""
    if num_clients % len(train_domains):
        raise ConfigError(
            f"num_clients={num_clients} is not a multiple of the "
            f"{len(train_domains)} training domains"
        )
    per_domain = num_clients // len(train_domains)
    clients = []
    for dom in train_domains:
        parts = dirichlet_partition(
            dom.labels, per_domain, dirichlet_alpha, [seed & _MASK64, 1, dom.domain_id]
        )
        for part in parts:
            clients.append(ClientState.build(len(clients), dom.subset(part), tau))
    return clients


def run_federation(
    cfg: FederationConfig,
    domains: Sequence[DomainDataset],
    dirichlet_alpha: float = 0.5,
    workers: int = 1,
    on_round: Callable[[RoundMetrics], None] | None = None,
) -> FederationReport:
    train, test = leave_one_out_split(domains, cfg.held_out_domain)
    for dom in domains:
        if dom.feature_dim != cfg.model.input_dim or dom.num_classes != cfg.model.num_classes:
            raise ConfigError(
                f"domain {dom.domain_id} has {dom.feature_dim} features / "
                f"{dom.num_classes} classes; model expects "
                f"{cfg.model.input_dim} / {cfg.model.num_classes}"
            )
    clients = build_clients(train, cfg.num_clients, dirichlet_alpha, cfg.seed, cfg.tau)
    global_model = mlp_init(cfg.model, cfg.seed)

    report = FederationReport(cfg)
    for t in range(1, cfg.rounds + 1):
        global_model, metrics = run_round(global_model, clients, cfg, t, workers)
        acc, loss = evaluate(global_model, test)
        metrics = replace(metrics, unseen_acc=acc, unseen_loss=loss)
        report.rounds.append(metrics)
        if on_round is not None:
            on_round(metrics)

    accs = [m.unseen_acc for m in report.rounds]
    best = int(np.argmax(accs))
    report.final_unseen_acc = accs[-1]
    report.best_unseen_acc = accs[best]
    report.best_round = report.rounds[best].round
    report.final_model = global_model
    return report
