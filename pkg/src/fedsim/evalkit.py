"""Evaluation protocol: windowed accuracy, 90%-of-best targets, cost-to-target
with FAIL semantics, and the descent-direction similarity diagnostic."""

from __future__ import annotations

import numpy as np

from .engine import RoundRecord
from .nn import MlpModel, TRAINABLE_FIELDS

FAIL = None  # rendered as the literal string "FAIL" in tables and JSON

WINDOW = 10
CONSECUTIVE = 5


def windowed_accuracy(accuracies: list[float], w: int = WINDOW) -> list[float]:
    """Trailing mean over up to `w` rounds; prefix windows average what exists."""
    out = []
    acc = np.asarray(accuracies, dtype=np.float64)
    for t in range(len(acc)):
        lo = max(0, t - w + 1)
        out.append(float(acc[lo:t + 1].mean()))
    return out


def final_accuracy(accuracies: list[float], w: int = WINDOW) -> float:
    """Best windowed accuracy seen over the run."""
    if not accuracies:
        raise ValueError("empty series")
    return max(windowed_accuracy(accuracies, w))


def cost_to_target(records: list[RoundRecord], target: float, which: str,
                   consecutive: int = CONSECUTIVE,
                   budget: tuple[float, float] | None = None) -> float | None:
    """Cumulative cost at the first round where windowed accuracy has held the
    target for `consecutive` rounds; FAIL (None) if that never happens within
    budget. `which` is "flops" (GFLOPs) or "bytes" (GB); `budget` is the
    (gflops, gb) pair both of which must still hold at the crossing round.
    """
    if target <= 0:
        raise ValueError("target must be > 0")
    if which not in ("flops", "bytes"):
        raise ValueError("which must be 'flops' or 'bytes'")
    win = windowed_accuracy([r.test_accuracy for r in records])
    streak = 0
    for i, r in enumerate(records):
        streak = streak + 1 if win[i] >= target else 0
        if streak >= consecutive:
            if budget is not None:
                gflop_budget, gb_budget = budget
                if r.cum_gflops > gflop_budget or r.cum_gb > gb_budget:
                    return FAIL
            return r.cum_gflops if which == "flops" else r.cum_gb
    return FAIL


def summarize_run(method: str, records: list[RoundRecord],
                  flop_budget_gflops: float, byte_budget_gb: float,
                  target: float | None = None) -> dict:
    """Per-run summary; without an external target, 0.9 of the run's own final."""
    if not records:
        return {"method": method, "final_accuracy": 0.0, "target_accuracy": 0.0,
                "gflops_to_target": "FAIL", "gb_to_target": "FAIL"}
    final = final_accuracy([r.test_accuracy for r in records])
    tgt = target if target is not None else 0.9 * final
    budget = (flop_budget_gflops, byte_budget_gb)
    gf = cost_to_target(records, tgt, "flops", budget=budget) if tgt > 0 else FAIL
    gb = cost_to_target(records, tgt, "bytes", budget=budget) if tgt > 0 else FAIL
    return {
        "method": method,
        "final_accuracy": final,
        "target_accuracy": tgt,
        "gflops_to_target": gf if gf is not None else "FAIL",
        "gb_to_target": gb if gb is not None else "FAIL",
    }


def build_report(runs: dict[str, list[RoundRecord]],
                 flop_budget_gflops: float, byte_budget_gb: float) -> dict:
    """Cross-method report: target is 90% of the best final accuracy observed."""
    if not runs:
        raise ValueError("no runs to report on")
    finals = {m: final_accuracy([r.test_accuracy for r in recs]) if recs else 0.0
              for m, recs in runs.items()}
    target = 0.9 * max(finals.values())
    methods = {}
    for m, recs in runs.items():
        methods[m] = summarize_run(m, recs, flop_budget_gflops, byte_budget_gb,
                                   target=target)
        methods[m]["final_accuracy"] = finals[m]
    return {"target_accuracy": target, "methods": methods}


DEGENERATE_NORM = 1e-12


def _flatten_trainable(model: MlpModel) -> np.ndarray:
    return np.concatenate([getattr(model, f).astype(np.float64).ravel()
                           for f in TRAINABLE_FIELDS])


def direction_similarity(m_start: MlpModel, m_fed: MlpModel,
                         m_central: MlpModel) -> float:
    """Cosine of the federated vs centralized displacement from a shared start.

    Running stats are excluded: they are not descent directions. Returns 0
    when either displacement is degenerate.
    """
    start = _flatten_trainable(m_start)
    d_fed = _flatten_trainable(m_fed) - start
    d_cen = _flatten_trainable(m_central) - start
    n_fed = np.linalg.norm(d_fed)
    n_cen = np.linalg.norm(d_cen)
    if n_fed < DEGENERATE_NORM or n_cen < DEGENERATE_NORM:
        return 0.0
    return float(np.clip(d_fed @ d_cen / (n_fed * n_cen), -1.0, 1.0))


def running_average(values: list[float], w: int = 5) -> list[float]:
    """Trailing mean used to smooth the similarity curves."""
    return windowed_accuracy(values, w)


def run_similarity_study(exp, methods: list[str], n_checkpoints: int = 20,
                         fed_rounds: int = 1, smooth: int = 5) -> dict[str, dict]:
    """Compare each method's descent direction against centralized training.

    A model is trained centrally for `n_checkpoints` epochs, checkpointing
    after each. From every checkpoint, each method runs `fed_rounds`
    federated rounds; the centralized reference replays exactly the same
    minibatches (same substreams, same client order) with plain SGD. The
    cosine of the two displacements is reported per checkpoint, raw and
    smoothed.
    """
    from dataclasses import replace

    from .data import build_client_shards
    from .engine import (FederationState, build_data, centralized_train_epoch,
                         draw_batch, init_model, run_round, select_clients)
    from .nn import Batch, OptimizerState, backward, forward, sgd_step
    from .rng import substream

    train, test = build_data(exp)
    shards = build_client_shards(train, exp.n_clients, exp.alpha, exp.seed,
                                 exp.samples_per_client)
    base_cfg = exp.algorithm

    # centralized run producing the checkpoints
    model = init_model(train.dim, exp.hidden, train.n_classes,
                       substream(exp.seed, "init"))
    checkpoints = [model.copy()]
    for epoch in range(n_checkpoints - 1):
        model = centralized_train_epoch(model, train.features, train.labels,
                                        base_cfg.learning_rate, base_cfg.momentum,
                                        base_cfg.batch_size,
                                        rng=substream(exp.seed, "central", epoch))
        checkpoints.append(model.copy())

    results: dict[str, dict] = {}
    for kind in methods:
        cfg = replace(base_cfg, kind=kind,
                      mu=base_cfg.mu if kind in ("fedprox", "istprox", "fednova", "moon")
                      else 0.0)
        sims = []
        for i, ckpt in enumerate(checkpoints):
            sim_seed = substream(exp.seed, "simstudy", i).integers(2 ** 62)
            # federated trajectory from the checkpoint
            state = FederationState(global_model=ckpt.copy())
            for _ in range(fed_rounds):
                run_round(state, cfg, train, test, shards, exp.n_clients,
                          exp.participation, sim_seed)
            # centralized replay of the very same batches, plain SGD
            central = ckpt.copy()
            for rnd in range(fed_rounds):
                sel = select_clients(exp.n_clients, exp.participation,
                                     substream(sim_seed, "select", rnd))
                opt = OptimizerState.fresh(central, cfg.learning_rate, cfg.momentum)
                for cid in sel:
                    rng = substream(sim_seed, "batch", rnd, cid)
                    for _ in range(cfg.local_rounds):
                        batch = draw_batch(train, shards[cid], cfg.batch_size, rng)
                        _, cache = forward(central, batch, mode="train")
                        sgd_step(central, backward(central, cache, batch.labels), opt)
            sims.append(direction_similarity(ckpt, state.global_model, central))
        results[kind] = {"similarity": sims,
                         "smoothed": running_average(sims, smooth)}
    return results
