"""Training pipeline: PPR rows for training nodes only, deduplicated
minibatches, epoch loop with Adam.

A batch stores one indirection: each (row, slot) pair points into a
deduplicated ``unique_nodes`` array whose feature rows are gathered once,
so a batch of b rows loads at most b*k feature rows and usually far fewer.
"""

from __future__ import annotations

from dataclasses import dataclass
import time

import numpy as np

from . import model as model_mod
from .errors import ConfigError, DataError
from .graph import AttributedGraph, DataSplit
from .infer import evaluate, power_iteration_predict
from .model import AdamState, ModelParams, TrainConfig
from .ppr import PprConfig, TopKMatrix, batch_topk_ppr

VALIDATION_POWER_STEPS = 2


@dataclass
class Batch:
    row_indptr: np.ndarray    # (b+1,) slot offsets per batch row
    slot_unique: np.ndarray   # (S,) index into unique_nodes per slot
    slot_weights: np.ndarray  # (S,) aggregation weight per slot
    unique_nodes: np.ndarray  # deduplicated node ids to gather features for
    labels: np.ndarray        # (b,)

    @property
    def size(self) -> int:
        return len(self.labels)


def build_batches(
    topk: TopKMatrix,
    train_nodes,
    labels,
    batch_size: int,
    seed: int,
) -> list[Batch]:
    """Shuffle train nodes by seed, chunk into batches, deduplicate the
    neighbor ids of each chunk. The last partial batch is kept."""
    train_nodes = np.asarray(train_nodes, dtype=np.int64)
    if train_nodes.size == 0:
        raise ConfigError("empty training set")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    if not np.array_equal(np.sort(topk.sources), np.sort(train_nodes)):
        raise DataError("top-k rows do not cover exactly the training nodes")
    labels = np.asarray(labels)

    row_of = {int(s): i for i, s in enumerate(topk.sources)}
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(train_nodes))
    shuffled = train_nodes[order]

    batches = []
    for lo in range(0, len(shuffled), batch_size):
        chunk = shuffled[lo : lo + batch_size]
        rows = [row_of[int(node)] for node in chunk]
        lengths = np.array(
            [topk.indptr[r + 1] - topk.indptr[r] for r in rows], dtype=np.int64
        )
        row_indptr = np.zeros(len(chunk) + 1, dtype=np.int64)
        np.cumsum(lengths, out=row_indptr[1:])
        slot_ids = np.concatenate(
            [topk.ids[topk.indptr[r] : topk.indptr[r + 1]] for r in rows]
        ) if len(rows) else np.empty(0, dtype=np.int32)
        slot_w = np.concatenate(
            [topk.weights[topk.indptr[r] : topk.indptr[r + 1]] for r in rows]
        ) if len(rows) else np.empty(0, dtype=np.float64)
        unique_nodes, slot_unique = np.unique(slot_ids, return_inverse=True)
        batches.append(
            Batch(
                row_indptr=row_indptr,
                slot_unique=slot_unique.astype(np.int32),
                slot_weights=slot_w,
                unique_nodes=unique_nodes.astype(np.int64),
                labels=labels[chunk].astype(np.int64),
            )
        )
    return batches


def _ensure_nonempty_rows(topk: TopKMatrix, alpha: float) -> TopKMatrix:
    """Give empty PPR rows the one entry a single source push would
    deposit: the teleport mass on the source itself.

    A coarse epsilon (>= 1/degree of a training node) legitimately yields
    an all-zero push result, but a training row needs at least one
    aggregation target; the self-entry keeps such nodes trainable as
    feature-only examples.
    """
    lengths = np.diff(topk.indptr)
    empty = np.flatnonzero(lengths == 0)
    if len(empty) == 0:
        return topk
    new_lengths = lengths.copy()
    new_lengths[empty] = 1
    indptr = np.zeros(len(topk.indptr), dtype=np.int64)
    np.cumsum(new_lengths, out=indptr[1:])
    ids = np.empty(int(indptr[-1]), dtype=topk.ids.dtype)
    weights = np.empty(int(indptr[-1]), dtype=np.float64)
    for i in range(topk.num_rows):
        lo, hi = indptr[i], indptr[i + 1]
        if lengths[i] == 0:
            ids[lo] = topk.sources[i]
            weights[lo] = alpha
        else:
            src_lo, src_hi = topk.indptr[i], topk.indptr[i + 1]
            ids[lo:hi] = topk.ids[src_lo:src_hi]
            weights[lo:hi] = topk.weights[src_lo:src_hi]
    return TopKMatrix(
        indptr=indptr,
        ids=ids,
        weights=weights,
        sources=topk.sources,
        alpha=topk.alpha,
        epsilon=topk.epsilon,
        k=topk.k,
        renormalized=topk.renormalized,
        num_pushes=topk.num_pushes,
    )


def _epoch_seed(base_seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence((base_seed, epoch)).generate_state(1)[0])


def _batch_rng(base_seed: int, step: int):
    # counter-based stream: one Philox key per optimizer step
    return np.random.Generator(
        np.random.Philox(key=np.array([base_seed, step], dtype=np.uint64))
    )


def train_model(
    graph: AttributedGraph,
    split: DataSplit,
    ppr_config: PprConfig,
    train_config: TrainConfig,
    workers: int = 1,
    precomputed_topk: TopKMatrix | None = None,
) -> tuple[ModelParams, dict]:
    """Run the full training pipeline on a standardized graph.

    PPR rows are computed for the training nodes only (or accepted
    precomputed via ``precomputed_topk``). Returns the final parameters
    and a log with per-epoch mean loss, a wall-clock breakdown
    {preprocessing_s, training_s}, and post-training validation accuracy.
    """
    ppr_config.validate()
    train_config.validate()

    t0 = time.perf_counter()
    if precomputed_topk is None:
        topk = batch_topk_ppr(graph, ppr_config, split.train_nodes, workers=workers)
    else:
        topk = precomputed_topk
    assert topk.num_rows == len(split.train_nodes)
    topk = _ensure_nonempty_rows(topk, ppr_config.alpha)
    features = graph.features()
    preprocessing_s = time.perf_counter() - t0

    params = model_mod.init_params(
        graph.d, train_config.hidden, graph.c, train_config.seed
    )
    state = AdamState.init(params)

    per_epoch_loss: list[float] = []
    step = 0
    t1 = time.perf_counter()
    for epoch in range(train_config.epochs):
        batches = build_batches(
            topk,
            split.train_nodes,
            graph.labels,
            train_config.batch_size,
            seed=_epoch_seed(train_config.seed, epoch),
        )
        losses = []
        for batch in batches:
            gathered = features[batch.unique_nodes]
            masks = None
            if train_config.dropout_rate > 0.0:
                rng = _batch_rng(train_config.seed, step)
                masks = model_mod.make_dropout_masks(
                    gathered.nnz,
                    (len(batch.unique_nodes), train_config.hidden),
                    train_config.dropout_rate,
                    rng,
                )
            loss, grads = model_mod.loss_and_grad(
                params, batch, gathered, train_config, masks=masks
            )
            params, state = model_mod.adam_step(
                params, grads, state, train_config.learning_rate
            )
            losses.append(loss)
            step += 1
        per_epoch_loss.append(float(np.mean(losses)))
    training_s = time.perf_counter() - t1

    H = model_mod.forward_local(params, features)
    val_pred = power_iteration_predict(
        graph, H, ppr_config.alpha, VALIDATION_POWER_STEPS
    )
    val_metrics = evaluate(val_pred, graph.labels, split.val_nodes)

    log = {
        "per_epoch_loss": per_epoch_loss,
        "preprocessing_s": preprocessing_s,
        "training_s": training_s,
        "val_accuracy": val_metrics["accuracy"],
        "num_pushes": topk.num_pushes,
    }
    return params, log
