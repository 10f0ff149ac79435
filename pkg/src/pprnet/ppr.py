"""Sparse approximate personalized PageRank via residual push.

The push loop keeps a FIFO worklist of nodes whose residual exceeds
``alpha * epsilon * degree``; clearing a node moves its whole residual into
the estimate and spreads ``(1 - alpha) * residual / degree`` to each
neighbor. At termination every residual is below the threshold, which
bounds the per-node underestimate by ``epsilon * degree`` on undirected
graphs.

All push arithmetic is 64-bit. Results are independent of the worker
count: each source is processed in isolation and rows are written to
disjoint slots.
"""

from __future__ import annotations

from dataclasses import dataclass
import json
import os

import numpy as np
import numba
from numba import njit, prange

from .errors import ConfigError, DataError
from .graph import AttributedGraph

_UNBOUNDED = -1
_NO_CAP = np.int64(2**62)
_SAMPLE_SEED_BASE = np.uint64(0x51A3F9E1D2C4B687)


@dataclass
class PprConfig:
    alpha: float = 0.25
    epsilon: float = 1e-4
    k: int = 32
    renormalize_sym: bool = False
    bounded: "BoundedConfig | None" = None

    def validate(self) -> None:
        if not (0.0 < self.alpha < 1.0):
            raise ConfigError(f"alpha must be in (0, 1), got {self.alpha}")
        if not (self.epsilon > 0.0):
            raise ConfigError(f"epsilon must be > 0, got {self.epsilon}")
        if self.k < 1:
            raise ConfigError(f"k must be >= 1, got {self.k}")
        if self.bounded is not None:
            self.bounded.validate()


@dataclass
class BoundedConfig:
    max_iterations: int
    drop_threshold: float = 0.0
    degree_cap: int = int(_NO_CAP)

    def validate(self) -> None:
        if self.max_iterations < 1:
            raise ConfigError(
                f"max_iterations must be >= 1, got {self.max_iterations}"
            )
        if self.drop_threshold < 0.0:
            raise ConfigError(
                f"drop_threshold must be >= 0, got {self.drop_threshold}"
            )
        if self.degree_cap < 1:
            raise ConfigError(f"degree_cap must be >= 1, got {self.degree_cap}")


@dataclass
class SparsePprVector:
    """One approximate PPR row: ids ascending, positive 64-bit weights."""

    ids: np.ndarray
    values: np.ndarray
    num_pushes: int = 0

    @property
    def nnz(self) -> int:
        return len(self.ids)

    def sum(self) -> float:
        return float(self.values.sum())

    def to_dense(self, n: int) -> np.ndarray:
        out = np.zeros(n, dtype=np.float64)
        out[self.ids] = self.values
        return out


@dataclass
class PushState:
    """Terminal push state, for inspecting the residual guarantee."""

    estimate: SparsePprVector
    residual_ids: np.ndarray
    residual_values: np.ndarray


@dataclass
class TopKMatrix:
    """Row-sparse propagation matrix: top-k PPR entries per source node."""

    indptr: np.ndarray
    ids: np.ndarray
    weights: np.ndarray
    sources: np.ndarray
    alpha: float
    epsilon: float
    k: int
    renormalized: bool = False
    num_pushes: int = 0

    @property
    def num_rows(self) -> int:
        return len(self.sources)

    def row(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return self.ids[lo:hi], self.weights[lo:hi]

    def save(self, out_dir: str) -> None:
        os.makedirs(out_dir, exist_ok=True)
        meta = {
            "alpha": float(self.alpha),
            "epsilon": float(self.epsilon),
            "k": int(self.k),
            "renormalized": bool(self.renormalized),
            "source_count": int(self.num_rows),
        }
        with open(os.path.join(out_dir, "ppr_meta.json"), "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")
        self.indptr.astype("<u8").tofile(os.path.join(out_dir, "ppr_indptr.u64"))
        self.ids.astype("<u4").tofile(os.path.join(out_dir, "ppr_indices.u32"))
        self.weights.astype("<f4").tofile(os.path.join(out_dir, "ppr_weights.f32"))
        self.sources.astype("<u4").tofile(os.path.join(out_dir, "ppr_sources.u32"))

    @classmethod
    def load(cls, in_dir: str) -> "TopKMatrix":
        meta_path = os.path.join(in_dir, "ppr_meta.json")
        if not os.path.isfile(meta_path):
            raise DataError(f"{meta_path}: missing file")
        with open(meta_path) as fh:
            meta = json.load(fh)
        for fname in ("ppr_indptr.u64", "ppr_indices.u32", "ppr_weights.f32",
                      "ppr_sources.u32"):
            if not os.path.isfile(os.path.join(in_dir, fname)):
                raise DataError(f"{os.path.join(in_dir, fname)}: missing file")
        indptr = np.fromfile(os.path.join(in_dir, "ppr_indptr.u64"), dtype="<u8")
        ids = np.fromfile(os.path.join(in_dir, "ppr_indices.u32"), dtype="<u4")
        weights = np.fromfile(os.path.join(in_dir, "ppr_weights.f32"), dtype="<f4")
        sources = np.fromfile(os.path.join(in_dir, "ppr_sources.u32"), dtype="<u4")
        if len(sources) != meta["source_count"]:
            raise DataError(
                f"{in_dir}: ppr_sources has {len(sources)} entries, "
                f"meta says {meta['source_count']}"
            )
        if len(indptr) != len(sources) + 1 or indptr[-1] != len(ids):
            raise DataError(f"{in_dir}: ppr_indptr inconsistent with row data")
        return cls(
            indptr=indptr.astype(np.int64),
            ids=ids.astype(np.int32),
            weights=weights.astype(np.float64),
            sources=sources.astype(np.int64),
            alpha=float(meta["alpha"]),
            epsilon=float(meta["epsilon"]),
            k=int(meta["k"]),
            renormalized=bool(meta["renormalized"]),
        )


# -- numba kernels ------------------------------------------------------


@njit(inline="always")
def _rng_next(state):
    # splitmix64: one 64-bit draw per call
    state = state + np.uint64(0x9E3779B97F4A7C15)
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return state, z


@njit(cache=True)
def _push_core(
    indptr,
    indices,
    degrees,
    thresholds,
    source,
    alpha,
    max_sweeps,
    drop_threshold,
    degree_cap,
    seed_base,
):
    """Single-source push. Returns (estimate, residual, pushes, edge_ops).

    ``max_sweeps < 0`` runs until no residual exceeds its threshold.
    Bounded mode (``max_sweeps >= 1``) sweeps the active set at most that
    many times, drops residuals below ``drop_threshold`` after each sweep,
    and pushes from high-degree nodes to ``degree_cap`` sampled neighbors
    with mass scaled to preserve the total.
    """
    n = degrees.shape[0]
    est = np.zeros(n, dtype=np.float64)
    res = np.zeros(n, dtype=np.float64)
    res[source] = alpha
    npush = np.int64(0)
    nedge = np.int64(0)
    if res[source] <= thresholds[source]:
        return est, res, npush, nedge

    bounded = max_sweeps > 0
    marker = n
    cap_q = n + 2
    queue = np.empty(cap_q, dtype=np.int64)
    in_q = np.zeros(n, dtype=np.bool_)
    head = 0
    size = 0
    queue[0] = source
    size = 1
    in_q[source] = True
    sweep = 0
    rng_state = np.uint64(0)
    if bounded:
        queue[(head + size) % cap_q] = marker
        size += 1
        rng_state = seed_base ^ (np.uint64(source) * np.uint64(0x9E3779B97F4A7C15))

    while size > 0:
        v = queue[head]
        head = (head + 1) % cap_q
        size -= 1
        if v == marker:
            sweep += 1
            if drop_threshold > 0.0:
                for u in range(n):
                    if res[u] != 0.0 and res[u] < drop_threshold:
                        res[u] = 0.0
            if sweep >= max_sweeps or size == 0:
                break
            queue[(head + size) % cap_q] = marker
            size += 1
            # one sampling stream per (source, sweep)
            rng_state = (
                seed_base
                ^ (np.uint64(source) * np.uint64(0x9E3779B97F4A7C15))
                ^ (np.uint64(sweep) * np.uint64(0xC2B2AE3D27D4EB4F))
            )
            continue

        in_q[v] = False
        rv = res[v]
        if rv <= thresholds[v]:
            continue  # dropped or stale entry
        est[v] += rv
        res[v] = 0.0
        npush += 1
        dv = degrees[v]
        start = indptr[v]
        if bounded and dv > degree_cap:
            m = (1.0 - alpha) * rv / degree_cap
            tmp = indices[start : start + dv].copy()
            for i in range(degree_cap):
                rng_state, z = _rng_next(rng_state)
                j = i + np.int64(z % np.uint64(dv - i))
                t = tmp[i]
                tmp[i] = tmp[j]
                tmp[j] = t
                u = tmp[i]
                res[u] += m
                nedge += 1
                if (not in_q[u]) and res[u] > thresholds[u]:
                    queue[(head + size) % cap_q] = u
                    size += 1
                    in_q[u] = True
        else:
            m = (1.0 - alpha) * rv / dv
            for idx in range(start, start + dv):
                u = indices[idx]
                res[u] += m
                nedge += 1
                if (not in_q[u]) and res[u] > thresholds[u]:
                    queue[(head + size) % cap_q] = u
                    size += 1
                    in_q[u] = True

    return est, res, npush, nedge


@njit(cache=True)
def _select_topk(cand_ids, cand_vals, k, out_ids, out_vals):
    """Keep the k largest values; ties broken toward smaller node ids.

    Candidates arrive in ascending id order, so a single ascending scan
    that admits values above the k-th-largest threshold (and then equal
    values while slots remain) realizes the tie-break.
    """
    nnz = cand_ids.shape[0]
    if nnz <= k:
        for i in range(nnz):
            out_ids[i] = cand_ids[i]
            out_vals[i] = cand_vals[i]
        return nnz
    thr = np.partition(cand_vals, nnz - k)[nnz - k]
    n_gt = 0
    for i in range(nnz):
        if cand_vals[i] > thr:
            n_gt += 1
    need_eq = k - n_gt
    pos = 0
    for i in range(nnz):
        v = cand_vals[i]
        if v > thr:
            out_ids[pos] = cand_ids[i]
            out_vals[pos] = v
            pos += 1
        elif v == thr and need_eq > 0:
            out_ids[pos] = cand_ids[i]
            out_vals[pos] = v
            pos += 1
            need_eq -= 1
    return pos


@njit(parallel=True, cache=True)
def _batch_push_topk(
    indptr,
    indices,
    degrees,
    thresholds,
    sources,
    alpha,
    k,
    max_sweeps,
    drop_threshold,
    degree_cap,
    seed_base,
):
    nrows = sources.shape[0]
    n = degrees.shape[0]
    out_ids = np.zeros((nrows, k), dtype=np.int32)
    out_vals = np.zeros((nrows, k), dtype=np.float64)
    out_len = np.zeros(nrows, dtype=np.int64)
    out_pushes = np.zeros(nrows, dtype=np.int64)
    for i in prange(nrows):
        est, _res, npush, _nedge = _push_core(
            indptr,
            indices,
            degrees,
            thresholds,
            sources[i],
            alpha,
            max_sweeps,
            drop_threshold,
            degree_cap,
            seed_base,
        )
        nnz = 0
        for u in range(n):
            if est[u] > 0.0:
                nnz += 1
        cand_ids = np.empty(nnz, dtype=np.int32)
        cand_vals = np.empty(nnz, dtype=np.float64)
        pos = 0
        for u in range(n):
            if est[u] > 0.0:
                cand_ids[pos] = u
                cand_vals[pos] = est[u]
                pos += 1
        out_len[i] = _select_topk(cand_ids, cand_vals, k, out_ids[i], out_vals[i])
        out_pushes[i] = npush
    return out_ids, out_vals, out_len, out_pushes


@njit(parallel=True, cache=True)
def _batch_mass_profile(
    indptr,
    indices,
    degrees,
    thresholds,
    sources,
    alpha,
    max_sweeps,
    drop_threshold,
    degree_cap,
    seed_base,
    ks,
):
    nrows = sources.shape[0]
    nks = ks.shape[0]
    partial = np.zeros((nrows, nks), dtype=np.float64)
    totals = np.zeros(nrows, dtype=np.float64)
    for i in prange(nrows):
        est, _res, _np_, _ne = _push_core(
            indptr,
            indices,
            degrees,
            thresholds,
            sources[i],
            alpha,
            max_sweeps,
            drop_threshold,
            degree_cap,
            seed_base,
        )
        vals = est[est > 0.0]
        svals = np.sort(vals)[::-1]
        nnz = svals.shape[0]
        cum = 0.0
        ki = 0
        for t in range(nnz):
            cum += svals[t]
            while ki < nks and ks[ki] == t + 1:
                partial[i, ki] = cum
                ki += 1
        while ki < nks:
            partial[i, ki] = cum
            ki += 1
        totals[i] = cum
    return partial, totals


# -- public operations --------------------------------------------------


def _push_args(graph: AttributedGraph, alpha: float, epsilon: float):
    degrees = graph.degrees
    if (degrees < 1).any():
        node = int(np.argmax(degrees < 1))
        raise DataError(f"node {node} has degree 0; standardize the graph first")
    thresholds = alpha * epsilon * degrees.astype(np.float64)
    return graph.adj_indptr, graph.adj_indices, degrees, thresholds


def _check_push_inputs(graph, alpha, source, epsilon):
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    if not (epsilon > 0.0):
        raise ConfigError(f"epsilon must be > 0, got {epsilon}")
    if not (0 <= source < graph.n):
        raise ConfigError(f"source {source} out of range [0, {graph.n})")


def _sparse_from_dense(est: np.ndarray, num_pushes: int) -> SparsePprVector:
    ids = np.flatnonzero(est > 0.0).astype(np.int32)
    values = est[ids]
    if not np.isfinite(values).all():
        raise DataError("non-finite PPR estimate")
    return SparsePprVector(ids=ids, values=values, num_pushes=int(num_pushes))


def push_ppr(
    graph: AttributedGraph, alpha: float, source: int, epsilon: float
) -> SparsePprVector:
    """Approximate PPR vector of ``source`` with residual threshold
    ``alpha * epsilon * degree`` per node."""
    _check_push_inputs(graph, alpha, source, epsilon)
    indptr, indices, degrees, thresholds = _push_args(graph, alpha, epsilon)
    est, _res, npush, _ne = _push_core(
        indptr, indices, degrees, thresholds, np.int64(source), float(alpha),
        np.int64(_UNBOUNDED), 0.0, _NO_CAP, _SAMPLE_SEED_BASE,
    )
    return _sparse_from_dense(est, npush)


def push_ppr_state(
    graph: AttributedGraph, alpha: float, source: int, epsilon: float
) -> PushState:
    """Like ``push_ppr`` but also returns the terminal residual."""
    _check_push_inputs(graph, alpha, source, epsilon)
    indptr, indices, degrees, thresholds = _push_args(graph, alpha, epsilon)
    est, res, npush, _ne = _push_core(
        indptr, indices, degrees, thresholds, np.int64(source), float(alpha),
        np.int64(_UNBOUNDED), 0.0, _NO_CAP, _SAMPLE_SEED_BASE,
    )
    res_ids = np.flatnonzero(res > 0.0).astype(np.int32)
    return PushState(
        estimate=_sparse_from_dense(est, npush),
        residual_ids=res_ids,
        residual_values=res[res_ids],
    )


def push_ppr_bounded(
    graph: AttributedGraph,
    alpha: float,
    source: int,
    epsilon: float,
    max_iterations: int,
    drop_threshold: float = 0.0,
    degree_cap: int | None = None,
) -> SparsePprVector:
    """Sweep-limited push variant with residual dropping and capped
    high-degree pushes (neighbors sampled per (source, sweep))."""
    _check_push_inputs(graph, alpha, source, epsilon)
    BoundedConfig(
        max_iterations=max_iterations,
        drop_threshold=drop_threshold,
        degree_cap=int(degree_cap) if degree_cap is not None else int(_NO_CAP),
    ).validate()
    cap = np.int64(degree_cap) if degree_cap is not None else _NO_CAP
    indptr, indices, degrees, thresholds = _push_args(graph, alpha, epsilon)
    est, _res, npush, _ne = _push_core(
        indptr, indices, degrees, thresholds, np.int64(source), float(alpha),
        np.int64(max_iterations), float(drop_threshold), cap, _SAMPLE_SEED_BASE,
    )
    return _sparse_from_dense(est, npush)


def topk_truncate(vec: SparsePprVector, k: int) -> SparsePprVector:
    """Keep the k largest entries; ties go to smaller node ids. Dropped
    mass is not redistributed."""
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    nnz = vec.nnz
    if nnz <= k:
        return SparsePprVector(vec.ids.copy(), vec.values.copy(), vec.num_pushes)
    thr = np.partition(vec.values, nnz - k)[nnz - k]
    gt = vec.values > thr
    need_eq = k - int(gt.sum())
    eq_idx = np.flatnonzero(vec.values == thr)[:need_eq]
    keep = np.sort(np.concatenate([np.flatnonzero(gt), eq_idx]))
    return SparsePprVector(vec.ids[keep], vec.values[keep], vec.num_pushes)


def _bounded_kernel_params(config: PprConfig):
    if config.bounded is None:
        return np.int64(_UNBOUNDED), 0.0, _NO_CAP
    b = config.bounded
    return np.int64(b.max_iterations), float(b.drop_threshold), np.int64(b.degree_cap)


class _NumThreads:
    """Temporarily set the numba worker count, clamped to what the
    runtime allows."""

    def __init__(self, workers: int):
        self.workers = max(1, int(workers))

    def __enter__(self):
        self.prev = numba.get_num_threads()
        numba.set_num_threads(min(self.workers, numba.config.NUMBA_NUM_THREADS))

    def __exit__(self, *exc):
        numba.set_num_threads(self.prev)


def batch_topk_ppr(
    graph: AttributedGraph,
    config: PprConfig,
    sources,
    workers: int = 1,
) -> TopKMatrix:
    """Top-k truncated PPR rows for ``sources``. Output is identical for
    any worker count (rows are independent)."""
    config.validate()
    sources = np.asarray(sources, dtype=np.int64)
    if sources.size == 0:
        raise ConfigError("sources must be non-empty")
    if sources.min() < 0 or sources.max() >= graph.n:
        raise ConfigError("source id out of range")
    indptr, indices, degrees, thresholds = _push_args(
        graph, config.alpha, config.epsilon
    )
    max_sweeps, drop, cap = _bounded_kernel_params(config)
    with _NumThreads(workers):
        out_ids, out_vals, out_len, out_pushes = _batch_push_topk(
            indptr, indices, degrees, thresholds, sources, float(config.alpha),
            np.int64(config.k), max_sweeps, drop, cap, _SAMPLE_SEED_BASE,
        )
    row_indptr = np.zeros(len(sources) + 1, dtype=np.int64)
    np.cumsum(out_len, out=row_indptr[1:])
    ids = np.empty(int(row_indptr[-1]), dtype=np.int32)
    weights = np.empty(int(row_indptr[-1]), dtype=np.float64)
    for i in range(len(sources)):
        lo, hi = row_indptr[i], row_indptr[i + 1]
        ids[lo:hi] = out_ids[i, : out_len[i]]
        weights[lo:hi] = out_vals[i, : out_len[i]]
    if not np.isfinite(weights).all():
        raise DataError("non-finite PPR weight in batch result")
    topk = TopKMatrix(
        indptr=row_indptr,
        ids=ids,
        weights=weights,
        sources=sources,
        alpha=float(config.alpha),
        epsilon=float(config.epsilon),
        k=int(config.k),
        renormalized=False,
        num_pushes=int(out_pushes.sum()),
    )
    if config.renormalize_sym:
        topk = renormalize_sym(topk, graph)
    return topk


def renormalize_sym(topk: TopKMatrix, graph: AttributedGraph) -> TopKMatrix:
    """Scale weight(i, j) by sqrt(deg_i) / sqrt(deg_j), turning the
    random-walk PPR rows into their symmetric counterpart. Sparsity is
    unchanged; apply once only."""
    if topk.renormalized:
        raise ConfigError("TopKMatrix is already renormalized")
    sqrt_deg = np.sqrt(graph.degrees.astype(np.float64))
    row_scale = np.repeat(
        sqrt_deg[topk.sources], np.diff(topk.indptr).astype(np.int64)
    )
    weights = topk.weights * row_scale / sqrt_deg[topk.ids]
    return TopKMatrix(
        indptr=topk.indptr,
        ids=topk.ids,
        weights=weights,
        sources=topk.sources,
        alpha=topk.alpha,
        epsilon=topk.epsilon,
        k=topk.k,
        renormalized=True,
        num_pushes=topk.num_pushes,
    )


def exact_ppr_dense(graph: AttributedGraph, alpha: float) -> np.ndarray:
    """Dense 64-bit PPR matrix alpha * (I - (1-alpha) D^-1 A)^-1.

    Test oracle; refuses graphs beyond 2000 nodes.
    """
    n = graph.n
    if n > 2000:
        raise ConfigError(f"dense oracle limited to n <= 2000, got {n}")
    if not (0.0 < alpha < 1.0):
        raise ConfigError(f"alpha must be in (0, 1), got {alpha}")
    degrees = graph.degrees
    if (degrees < 1).any():
        raise DataError("graph has a degree-0 node; standardize first")
    A = graph.adjacency().toarray().astype(np.float64)
    P = A / degrees.astype(np.float64)[:, None]
    M = np.eye(n) - (1.0 - alpha) * P
    return alpha * np.linalg.inv(M)


@dataclass
class MassProfile:
    ks: np.ndarray
    mean_topk_sum: np.ndarray
    mean_total: float


def topk_mass_profile(
    graph: AttributedGraph,
    config: PprConfig,
    sources,
    schedule=None,
) -> MassProfile:
    """Mean over sources of the sum of the k largest PPR entries, for each
    k in the schedule (default: powers of two up to n, plus n)."""
    config.validate()
    sources = np.asarray(sources, dtype=np.int64)
    if sources.size == 0:
        raise ConfigError("sources must be non-empty")
    n = graph.n
    if schedule is None:
        ks = []
        k = 1
        while k < n:
            ks.append(k)
            k *= 2
        ks.append(n)
        schedule = ks
    ks = np.asarray(schedule, dtype=np.int64)
    if (np.diff(ks) <= 0).any() or ks[0] < 1:
        raise ConfigError("schedule must be strictly increasing and >= 1")
    indptr, indices, degrees, thresholds = _push_args(
        graph, config.alpha, config.epsilon
    )
    max_sweeps, drop, cap = _bounded_kernel_params(config)
    partial, totals = _batch_mass_profile(
        indptr, indices, degrees, thresholds, sources, float(config.alpha),
        max_sweeps, drop, cap, _SAMPLE_SEED_BASE, ks,
    )
    return MassProfile(
        ks=ks,
        mean_topk_sum=partial.mean(axis=0),
        mean_total=float(totals.mean()),
    )
