"""Synchronous centralized federated simulation engine.

One round: select clients, broadcast (or partition) the global model, train
locally, aggregate, charge the cost ledger, evaluate on the full test set.
Determinism contract: every random draw comes from a substream named by
(master seed, purpose, round, client), so client training may run in any
order or in parallel without changing results.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import cost as costmodel
from .cost import ArchSpec, CostLedger, AVERAGING_KINDS, IST_KINDS, ALL_KINDS
from .data import ClientShard, FeatureDataset
from .nn import (Batch, MlpModel, OptimizerState, TRAINABLE_FIELDS, add_proximal,
                 backward, evaluate_accuracy, forward, init_model, moon_contrastive,
                 parameter_count, sgd_step)
from .rng import substream
from . import vertical

PROXIMAL_KINDS = ("fedprox", "istprox", "fednova")


@dataclass
class AlgorithmConfig:
    """Hyperparameters for one method; `mu` is the proximal weight for the
    prox family and the contrastive weight for moon."""

    kind: str
    local_rounds: int = 1
    mu: float = 0.0
    moon_tau: float = 0.5
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32
    server_lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    adaptability: float = 0.01

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown algorithm {self.kind!r}")
        if self.local_rounds < 1:
            raise ValueError("local_rounds must be >= 1")
        if self.mu < 0:
            raise ValueError("mu must be >= 0")
        if self.moon_tau <= 0:
            raise ValueError("moon_tau must be > 0")
        if self.adaptability <= 0:
            raise ValueError("adaptability must be > 0")


def preset(kind: str, regime: str = "flops") -> AlgorithmConfig:
    """Tuned per-method defaults for the accuracy / flops / communication regimes."""
    if regime not in ("accuracy", "flops", "communication"):
        raise ValueError(f"unknown regime {regime!r}")
    base = {
        "fedavg": AlgorithmConfig("fedavg", local_rounds=25),
        "fedprox": AlgorithmConfig("fedprox", local_rounds=1, mu=0.2),
        "moon": AlgorithmConfig("moon", local_rounds=1, mu=1.0, moon_tau=0.5),
        "fednova": AlgorithmConfig("fednova", local_rounds=5, mu=0.2),
        "fedadam": AlgorithmConfig("fedadam", local_rounds=5, learning_rate=0.03,
                                   server_lr=0.01),
        "ist": AlgorithmConfig("ist", local_rounds=1),
        "istprox": AlgorithmConfig("istprox", local_rounds=1, mu=0.2),
    }[kind]
    if regime == "communication":
        if kind == "moon":
            base = replace(base, local_rounds=5, mu=10.0, moon_tau=0.1)
        elif kind == "fedadam":
            base = replace(base, local_rounds=25)
    return base


@dataclass
class FedAdamState:
    """Server-side adaptive optimizer state over the trainable parameters."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    beta1: float
    beta2: float
    tau: float
    server_lr: float
    step: int = 0

    @classmethod
    def fresh(cls, model: MlpModel, cfg: AlgorithmConfig) -> "FedAdamState":
        zeros = {f: np.zeros_like(getattr(model, f), dtype=np.float64)
                 for f in TRAINABLE_FIELDS}
        zeros_v = {f: np.zeros_like(getattr(model, f), dtype=np.float64)
                   for f in TRAINABLE_FIELDS}
        return cls(zeros, zeros_v, cfg.beta1, cfg.beta2, cfg.adaptability, cfg.server_lr)


@dataclass
class RoundRecord:
    """One communication round's snapshot for the evaluator."""

    round: int
    client_ids: list[int]
    test_accuracy: float
    cum_gflops: float
    cum_gb: float


@dataclass
class FederationState:
    global_model: MlpModel
    round: int = 0
    server_opt: FedAdamState | None = None
    moon_prev: dict[int, MlpModel] = field(default_factory=dict)
    cost: CostLedger = field(default_factory=CostLedger)
    history: list[RoundRecord] = field(default_factory=list)


def select_clients(n_total: int, fraction: float, rng: np.random.Generator) -> list[int]:
    """Uniform without-replacement sample of round(n_total*fraction) ids, sorted."""
    if not 0 < fraction <= 1:
        raise ValueError("fraction must be in (0, 1]")
    size = int(round(n_total * fraction))
    if size < 1:
        raise ValueError("participation too small: no client would be selected")
    ids = rng.choice(n_total, size=size, replace=False)
    return sorted(int(i) for i in ids)


def representation(model: MlpModel, features: np.ndarray) -> np.ndarray:
    """Post-ReLU hidden representation in eval mode."""
    _, cache = forward(model, Batch(features, np.zeros(len(features), dtype=np.int64)),
                       mode="eval")
    return cache.z


def draw_batch(train: FeatureDataset, shard: ClientShard, batch_size: int,
               rng: np.random.Generator) -> Batch:
    """Uniform with-replacement minibatch from the client's shard."""
    ix = shard.indices[rng.integers(len(shard.indices), size=batch_size)]
    return Batch(train.features[ix], train.labels[ix])


def local_train(model: MlpModel, train: FeatureDataset, shard: ClientShard,
                cfg: AlgorithmConfig, rng: np.random.Generator,
                anchor: MlpModel | None = None,
                moon_glob: MlpModel | None = None,
                moon_prev: MlpModel | None = None) -> MlpModel:
    """Train a copy of `model` for cfg.local_rounds batches with a fresh optimizer."""
    if len(shard.indices) < 1:
        raise ValueError("shard is empty")
    m = model.copy()
    state = OptimizerState.fresh(m, cfg.learning_rate, cfg.momentum)
    use_prox = cfg.mu > 0 and cfg.kind in PROXIMAL_KINDS
    use_moon = cfg.kind == "moon" and cfg.mu > 0
    for _ in range(cfg.local_rounds):
        batch = draw_batch(train, shard, cfg.batch_size, rng)
        _, cache = forward(m, batch, mode="train")
        extra_dz = None
        if use_moon:
            z_glob = representation(moon_glob, batch.features)
            z_prev = representation(moon_prev, batch.features)
            _, extra_dz = moon_contrastive(cache.z, z_glob, z_prev, cfg.mu, cfg.moon_tau)
        grads = backward(m, cache, batch.labels, extra_dz=extra_dz)
        if use_prox:
            grads = add_proximal(grads, m, anchor, cfg.mu)
        sgd_step(m, grads, state)
    return m


AGGREGATED_FIELDS = TRAINABLE_FIELDS + ("bn_mean", "bn_var")


def aggregate_average(models: list[MlpModel], weights: np.ndarray) -> MlpModel:
    """Weighted average of trainable parameters and batch-norm running stats."""
    weights = np.asarray(weights, dtype=np.float64)
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    dims = models[0].dims
    if any(m.dims != dims for m in models):
        raise ValueError("model dims differ")
    out = models[0].copy()
    for f in AGGREGATED_FIELDS:
        stacked = np.stack([getattr(m, f) for m in models]).astype(np.float64)
        avg = np.tensordot(weights, stacked, axes=(0, 0))
        getattr(out, f)[...] = avg.astype(out.dtype)
    return out


def fedadam_step(state: FedAdamState, w_prev: MlpModel, w_avg: MlpModel) -> MlpModel:
    """Server update from the pseudo-gradient delta = w_avg - w_prev.

    m <- b1*m + (1-b1)*delta; v <- b2*v + (1-b2)*delta^2;
    w <- w_prev + lr * m / (sqrt(v) + tau). No bias correction.
    Running stats are taken from w_avg.
    """
    out = w_avg.copy()
    for f in TRAINABLE_FIELDS:
        delta = getattr(w_avg, f).astype(np.float64) - getattr(w_prev, f).astype(np.float64)
        state.m[f] = state.beta1 * state.m[f] + (1 - state.beta1) * delta
        state.v[f] = state.beta2 * state.v[f] + (1 - state.beta2) * delta ** 2
        upd = (getattr(w_prev, f).astype(np.float64)
               + state.server_lr * state.m[f] / (np.sqrt(state.v[f]) + state.tau))
        getattr(out, f)[...] = upd.astype(out.dtype)
    state.step += 1
    return out


def fednova_aggregate(w_prev: MlpModel, trained: list[MlpModel],
                      local_steps: list[int], weights: np.ndarray,
                      tau_eff: float) -> MlpModel:
    """Normalized averaging: w <- w_prev + tau_eff * sum_i p_i (w_i - w_prev)/tau_i.

    Running stats come from the plain weighted average of the trained models.
    """
    if any(t < 1 for t in local_steps):
        raise ValueError("local step counts must be >= 1")
    weights = np.asarray(weights, dtype=np.float64)
    out = aggregate_average(trained, weights)  # supplies the running stats
    for f in TRAINABLE_FIELDS:
        base = getattr(w_prev, f).astype(np.float64)
        acc = np.zeros_like(base)
        for m, tau_i, p in zip(trained, local_steps, weights):
            acc += p * (getattr(m, f).astype(np.float64) - base) / tau_i
        getattr(out, f)[...] = (base + tau_eff * acc).astype(out.dtype)
    return out


def _max_workers() -> int:
    env = os.environ.get("FEDSIM_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _map_indexed(fn, items):
    """Run fn over items, possibly in threads; result order follows input order."""
    workers = min(_max_workers(), len(items))
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def run_round(state: FederationState, cfg: AlgorithmConfig,
              train: FeatureDataset, test: FeatureDataset,
              shards: list[ClientShard], n_clients: int, fraction: float,
              master_seed: int) -> FederationState:
    """Advance the federation by one communication round (mutates state)."""
    rnd = state.round
    sel = select_clients(n_clients, fraction, substream(master_seed, "select", rnd))
    s = len(sel)
    g = state.global_model
    n1, n2, n3 = g.dims
    arch = ArchSpec(n1, n2, n3, cfg.batch_size, s)

    if cfg.kind in AVERAGING_KINDS:
        def train_one(cid: int) -> MlpModel:
            rng = substream(master_seed, "batch", rnd, cid)
            prev = state.moon_prev.get(cid, g) if cfg.kind == "moon" else None
            return local_train(g, train, shards[cid], cfg, rng, anchor=g,
                               moon_glob=g if cfg.kind == "moon" else None,
                               moon_prev=prev)

        trained = _map_indexed(train_one, sel)
        weights = np.full(s, 1.0 / s)  # equal-size shards -> p_i = n_i/n = 1/s
        if cfg.kind == "fedadam":
            if state.server_opt is None:
                state.server_opt = FedAdamState.fresh(g, cfg)
            w_avg = aggregate_average(trained, weights)
            new_global = fedadam_step(state.server_opt, g, w_avg)
        elif cfg.kind == "fednova":
            tau_eff = cfg.local_rounds / s
            new_global = fednova_aggregate(g, trained, [cfg.local_rounds] * s,
                                           weights, tau_eff)
        else:
            new_global = aggregate_average(trained, weights)
        if cfg.kind == "moon":
            for cid, m in zip(sel, trained):
                state.moon_prev[cid] = m
        costmodel.charge_round(state.cost, arch, cfg.kind, cfg.local_rounds, g)
    else:  # subnet family
        asn = vertical.partition(n2, s, substream(master_seed, "ist", rnd), round_id=rnd)

        def train_site(args) -> vertical.Subnet:
            site, cid = args
            sub = vertical.extract(g, asn, site)
            rng = substream(master_seed, "batch", rnd, cid)
            trained_m = local_train(sub.model, train, shards[cid], cfg, rng,
                                    anchor=sub.model)
            return vertical.Subnet(trained_m, sub.neuron_indices)

        subnets = _map_indexed(train_site, list(enumerate(sel)))
        new_global = vertical.reassemble(subnets, asn)
        counts = [len(sn.neuron_indices) for sn in subnets]
        costmodel.charge_round(state.cost, arch, cfg.kind, cfg.local_rounds, g,
                               site_neuron_counts=counts)

    state.global_model = new_global
    acc = evaluate_accuracy(new_global, test.features, test.labels)
    state.round = rnd + 1
    state.history.append(RoundRecord(
        round=rnd, client_ids=sel, test_accuracy=acc,
        cum_gflops=state.cost.cumulative_flops / 1e9,
        cum_gb=state.cost.cumulative_bytes / 1e9,
    ))
    return state


def centralized_train_epoch(model: MlpModel, features: np.ndarray, labels: np.ndarray,
                            lr: float, momentum: float, batch_size: int = 32,
                            rng: np.random.Generator | None = None) -> MlpModel:
    """One pass over the data in minibatches; shuffled when an rng is given."""
    m = model.copy()
    state = OptimizerState.fresh(m, lr, momentum)
    order = np.arange(len(labels))
    if rng is not None:
        rng.shuffle(order)
    for i in range(0, len(order), batch_size):
        ix = order[i:i + batch_size]
        batch = Batch(features[ix], labels[ix])
        _, cache = forward(m, batch, mode="train")
        grads = backward(m, cache, batch.labels)
        sgd_step(m, grads, state)
    return m


@dataclass
class ExperimentConfig:
    """Everything one `run` needs; validated at construction."""

    algorithm: AlgorithmConfig
    seed: int = 1
    n_clients: int = 100
    participation: float = 0.1
    alpha: float = 0.01
    samples_per_client: int = 500
    hidden: int = 256
    classes: int = 20
    dim: int = 64
    train_per_class: int = 100
    test_per_class: int = 50
    separation: float = 3.0
    train_path: str | None = None
    test_path: str | None = None
    flop_budget: float = 5e11
    byte_budget: float = 5e9  # 5 GB desk-scale default; the full protocol uses 5e12
    max_rounds: int = 2000
    eval_every: int = 1
    out_dir: str = "out"

    def __post_init__(self):
        if round(self.n_clients * self.participation) < 1:
            raise ValueError("participation: no client would be selected")
        if self.flop_budget <= 0 or self.byte_budget <= 0:
            raise ValueError("budgets must be > 0")
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.alpha <= 0:
            raise ValueError("alpha must be > 0")
        if self.samples_per_client < 1:
            raise ValueError("samples_per_client must be >= 1")


def build_data(exp: ExperimentConfig) -> tuple[FeatureDataset, FeatureDataset]:
    """Load the configured dataset files or generate the synthetic default."""
    from .data import generate_synthetic, load_dataset

    if exp.train_path:
        if not exp.test_path:
            raise ValueError("train_path given without test_path")
        return (load_dataset(exp.train_path, "train"),
                load_dataset(exp.test_path, "test"))
    return generate_synthetic(exp.classes, exp.dim, exp.train_per_class,
                              exp.test_per_class, exp.separation,
                              substream(exp.seed, "data"))


def lr_decay_factor(round_index: int, max_rounds: int) -> float:
    """10x decay after 50% and 75% of the configured total rounds."""
    if max_rounds <= 0:
        return 1.0
    if round_index >= 0.75 * max_rounds:
        return 0.01
    if round_index >= 0.5 * max_rounds:
        return 0.1
    return 1.0


def run_experiment(exp: ExperimentConfig,
                   data: tuple[FeatureDataset, FeatureDataset] | None = None,
                   ) -> tuple[list[RoundRecord], dict]:
    """Run one method to its FLOP/byte budget or max_rounds; return history + summary."""
    from .data import build_client_shards
    from . import evalkit

    train, test = data if data is not None else build_data(exp)
    shards = build_client_shards(train, exp.n_clients, exp.alpha, exp.seed,
                                 exp.samples_per_client)
    model = init_model(exp.dim if not exp.train_path else train.dim,
                       exp.hidden, train.n_classes, substream(exp.seed, "init"))
    state = FederationState(global_model=model)
    base_lr = exp.algorithm.learning_rate
    while state.round < exp.max_rounds:
        cfg = replace(exp.algorithm,
                      learning_rate=base_lr * lr_decay_factor(state.round, exp.max_rounds))
        run_round(state, cfg, train, test, shards, exp.n_clients,
                  exp.participation, exp.seed)
        if (state.cost.cumulative_flops >= exp.flop_budget
                or state.cost.cumulative_bytes >= exp.byte_budget):
            break
    summary = evalkit.summarize_run(exp.algorithm.kind, state.history,
                                    flop_budget_gflops=exp.flop_budget / 1e9,
                                    byte_budget_gb=exp.byte_budget / 1e9)
    return state.history, summary
