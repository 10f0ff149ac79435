"""Attributed graphs in CSR form: container I/O, validation, standardization.

A dataset lives in a directory holding ``meta.json`` plus little-endian
binary arrays::

    adj_indptr.u64   adj_indices.u32
    feat_indptr.u64  feat_indices.u32  feat_values.f32
    labels.u32

In memory, index arrays are widened to int64/int32 for arithmetic; the
on-disk dtypes are restored on save, so save/load round-trips are
bit-identical.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import DataError

FORMAT_VERSION = 1

_ARRAY_SPECS = {
    "adj_indptr": ("adj_indptr.u64", "<u8"),
    "adj_indices": ("adj_indices.u32", "<u4"),
    "feat_indptr": ("feat_indptr.u64", "<u8"),
    "feat_indices": ("feat_indices.u32", "<u4"),
    "feat_values": ("feat_values.f32", "<f4"),
    "labels": ("labels.u32", "<u4"),
}

_MEM_DTYPES = {
    "adj_indptr": np.int64,
    "adj_indices": np.int32,
    "feat_indptr": np.int64,
    "feat_indices": np.int32,
    "feat_values": np.float32,
    "labels": np.int32,
}


@dataclass
class AttributedGraph:
    """Immutable CSR adjacency + sparse node features + labels."""

    adj_indptr: np.ndarray
    adj_indices: np.ndarray
    feat_indptr: np.ndarray
    feat_indices: np.ndarray
    feat_values: np.ndarray
    labels: np.ndarray
    d: int
    c: int
    _degrees: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def n(self) -> int:
        return len(self.adj_indptr) - 1

    @property
    def m(self) -> int:
        return len(self.adj_indices)

    @property
    def degrees(self) -> np.ndarray:
        if self._degrees is None:
            self._degrees = np.diff(self.adj_indptr).astype(np.int64)
        return self._degrees

    def adjacency(self) -> sp.csr_matrix:
        """Unweighted adjacency as a scipy CSR matrix."""
        data = np.ones(self.m, dtype=np.float64)
        return sp.csr_matrix(
            (data, self.adj_indices, self.adj_indptr), shape=(self.n, self.n)
        )

    def features(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.feat_values, self.feat_indices, self.feat_indptr),
            shape=(self.n, self.d),
        )


@dataclass
class DataSplit:
    """Disjoint train/val/test node-id sets, reproducible from ``seed``."""

    train_nodes: np.ndarray
    val_nodes: np.ndarray
    test_nodes: np.ndarray
    seed: int

    def to_dict(self) -> dict:
        return {
            "seed": int(self.seed),
            "train": self.train_nodes.tolist(),
            "val": self.val_nodes.tolist(),
            "test": self.test_nodes.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "DataSplit":
        return cls(
            train_nodes=np.asarray(obj["train"], dtype=np.int64),
            val_nodes=np.asarray(obj["val"], dtype=np.int64),
            test_nodes=np.asarray(obj["test"], dtype=np.int64),
            seed=int(obj["seed"]),
        )


def _check_csr(indptr, indices, n_rows, n_cols, name, path=""):
    """Structural CSR validation with file/offset context in messages."""
    where = f"{path}: " if path else ""
    if len(indptr) != n_rows + 1:
        raise DataError(
            f"{where}{name}_indptr has length {len(indptr)}, expected {n_rows + 1}"
        )
    if indptr[0] != 0:
        raise DataError(f"{where}{name}_indptr[0] = {indptr[0]}, expected 0")
    if indptr[-1] != len(indices):
        raise DataError(
            f"{where}{name}_indptr[-1] = {indptr[-1]} does not match "
            f"{name}_indices length {len(indices)}"
        )
    diffs = np.diff(indptr)
    if (diffs < 0).any():
        row = int(np.argmax(diffs < 0))
        raise DataError(f"{where}{name}_indptr decreases at row {row}")
    if len(indices) > 0:
        bad = (indices < 0) | (indices >= n_cols)
        if bad.any():
            off = int(np.argmax(bad))
            raise DataError(
                f"{where}{name}_indices[{off}] = {indices[off]} out of range [0, {n_cols})"
            )
        # strictly increasing within each row = sorted and duplicate-free
        nondecr = indices[1:] <= indices[:-1]
        row_starts = np.zeros(len(indices), dtype=bool)
        boundaries = indptr[1:-1]
        row_starts[boundaries[boundaries < len(indices)]] = True
        bad_pos = nondecr & ~row_starts[1:]
        if bad_pos.any():
            off = int(np.argmax(bad_pos)) + 1
            raise DataError(
                f"{where}{name}_indices not strictly increasing within row at offset {off}"
            )


def validate_structure(graph: AttributedGraph, path: str = "") -> None:
    """Check CSR well-formedness of adjacency and features, and label range."""
    n = graph.n
    _check_csr(graph.adj_indptr, graph.adj_indices, n, n, "adj", path)
    _check_csr(graph.feat_indptr, graph.feat_indices, n, graph.d, "feat", path)
    if len(graph.labels) != n:
        raise DataError(f"labels length {len(graph.labels)} != n = {n}")
    if n > 0:
        bad = (graph.labels < 0) | (graph.labels >= graph.c)
        if bad.any():
            off = int(np.argmax(bad))
            raise DataError(
                f"labels[{off}] = {graph.labels[off]} out of range [0, {graph.c})"
            )
    if not np.isfinite(graph.feat_values).all():
        off = int(np.argmax(~np.isfinite(graph.feat_values)))
        raise DataError(f"feat_values[{off}] is not finite")


def validate_standard(graph: AttributedGraph, path: str = "") -> None:
    """Full invariant check: structure plus symmetry and min-degree 1."""
    validate_structure(graph, path)
    if graph.n == 0:
        raise DataError("empty graph")
    if (graph.degrees < 1).any():
        node = int(np.argmax(graph.degrees < 1))
        raise DataError(f"node {node} has degree 0 (graph not standardized)")
    adj = graph.adjacency()
    if (adj != adj.T).nnz != 0:
        raise DataError("adjacency is not symmetric (graph not standardized)")


def _read_array(dataset_dir, fname, dtype, expected_len):
    path = os.path.join(dataset_dir, fname)
    if not os.path.isfile(path):
        raise DataError(f"{path}: missing file")
    arr = np.fromfile(path, dtype=dtype)
    if expected_len is not None and len(arr) != expected_len:
        raise DataError(
            f"{path}: has {len(arr)} entries, header says {expected_len}"
        )
    return arr


def load_dataset(dataset_dir: str, standardized: bool = True) -> AttributedGraph:
    """Load and validate a dataset directory.

    With ``standardized=False`` only structural invariants are enforced,
    allowing directed / disconnected graphs destined for ``standardize``.
    """
    meta_path = os.path.join(dataset_dir, "meta.json")
    if not os.path.isfile(meta_path):
        raise DataError(f"{meta_path}: missing file")
    try:
        with open(meta_path) as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{meta_path}: invalid JSON ({exc})") from exc
    for key in ("n", "m", "d", "c", "format_version"):
        if key not in meta:
            raise DataError(f"{meta_path}: missing field '{key}'")
    if meta["format_version"] != FORMAT_VERSION:
        raise DataError(
            f"{meta_path}: format_version {meta['format_version']} unsupported "
            f"(expected {FORMAT_VERSION})"
        )
    n, m, d, c = (int(meta[k]) for k in ("n", "m", "d", "c"))
    if n < 0 or m < 0 or d < 0 or c < 1:
        raise DataError(f"{meta_path}: invalid sizes n={n} m={m} d={d} c={c}")

    raw = {}
    lengths = {
        "adj_indptr": n + 1,
        "adj_indices": m,
        "feat_indptr": n + 1,
        "feat_indices": None,
        "feat_values": None,
        "labels": n,
    }
    for key, (fname, dtype) in _ARRAY_SPECS.items():
        raw[key] = _read_array(dataset_dir, fname, dtype, lengths[key])
    if len(raw["feat_indices"]) != len(raw["feat_values"]):
        raise DataError(
            f"{dataset_dir}: feat_indices ({len(raw['feat_indices'])}) and "
            f"feat_values ({len(raw['feat_values'])}) lengths differ"
        )

    if n >= np.iinfo(np.int32).max:
        raise DataError(f"{meta_path}: n = {n} exceeds int32 node-id range")
    graph = AttributedGraph(
        adj_indptr=raw["adj_indptr"].astype(np.int64),
        adj_indices=raw["adj_indices"].astype(np.int32),
        feat_indptr=raw["feat_indptr"].astype(np.int64),
        feat_indices=raw["feat_indices"].astype(np.int32),
        feat_values=raw["feat_values"],
        labels=raw["labels"].astype(np.int32),
        d=d,
        c=c,
    )
    if standardized:
        validate_standard(graph, dataset_dir)
    else:
        validate_structure(graph, dataset_dir)
    return graph


def save_dataset(graph: AttributedGraph, dataset_dir: str) -> None:
    os.makedirs(dataset_dir, exist_ok=True)
    meta = {
        "n": int(graph.n),
        "m": int(graph.m),
        "d": int(graph.d),
        "c": int(graph.c),
        "format_version": FORMAT_VERSION,
    }
    with open(os.path.join(dataset_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
        fh.write("\n")
    for key, (fname, dtype) in _ARRAY_SPECS.items():
        getattr(graph, key).astype(dtype).tofile(os.path.join(dataset_dir, fname))


def standardize(graph: AttributedGraph) -> tuple[AttributedGraph, np.ndarray]:
    """Symmetrize, merge duplicate edges, keep the largest connected
    component, and compact node ids.

    Returns the standardized graph and a remap table ``new_id -> old_id``.
    Idempotent: running it on an already-standard graph returns an equal
    graph with the identity remap.
    """
    n = graph.n
    if n == 0:
        raise DataError("empty graph")

    data = np.ones(graph.m, dtype=np.int8)
    adj = sp.csr_matrix((data, graph.adj_indices, graph.adj_indptr), shape=(n, n))
    sym = adj.maximum(adj.T).tocsr()  # undirected, unweighted, duplicates merged
    sym.sort_indices()

    n_comp, comp = sp.csgraph.connected_components(sym, directed=False)
    sizes = np.bincount(comp, minlength=n_comp)
    # smallest component id wins ties, for determinism
    largest = int(np.argmax(sizes))
    keep = np.where(comp == largest)[0].astype(np.int64)  # sorted: preserves id order

    sub = sym[keep][:, keep].tocsr()
    sub.sort_indices()

    feats = graph.features()[keep].tocsr()
    feats.sort_indices()

    out = AttributedGraph(
        adj_indptr=sub.indptr.astype(np.int64),
        adj_indices=sub.indices.astype(np.int32),
        feat_indptr=feats.indptr.astype(np.int64),
        feat_indices=feats.indices.astype(np.int32),
        feat_values=feats.data.astype(np.float32),
        labels=graph.labels[keep].astype(np.int32),
        d=graph.d,
        c=graph.c,
    )
    if out.n == 1 and out.m == 0:
        # a single node survives only if it carries a self-loop
        raise DataError("largest component is a single node without a self-loop")
    validate_standard(out)
    return out, keep


def sample_split(graph: AttributedGraph, seed: int) -> DataSplit:
    """Uniform non-stratified split: 20*c train, 10x that val, rest test."""
    n, c = graph.n, graph.c
    n_train = 20 * c
    n_val = 10 * n_train
    if n_train + n_val >= n:
        raise DataError(
            f"graph too small for requested split: n = {n} but need more than "
            f"{n_train + n_val} nodes (train {n_train} + val {n_val} + test)"
        )
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return DataSplit(
        train_nodes=np.sort(perm[:n_train]).astype(np.int64),
        val_nodes=np.sort(perm[n_train : n_train + n_val]).astype(np.int64),
        test_nodes=np.sort(perm[n_train + n_val :]).astype(np.int64),
        seed=seed,
    )


def convert_edge_list(
    edges_path: str,
    feat_indptr_path: str,
    feat_indices_path: str,
    feat_values_path: str,
    labels_path: str,
    num_features: int | None = None,
    num_classes: int | None = None,
) -> AttributedGraph:
    """Build an (unstandardized) graph from a plain-text edge list plus
    binary feature CSR and label files in the container layout.

    Each edge-list line is ``u v``; both directions are inserted, duplicates
    merged. Node count comes from the feature matrix.
    """
    for p in (edges_path, feat_indptr_path, feat_indices_path,
              feat_values_path, labels_path):
        if not os.path.isfile(p):
            raise DataError(f"{p}: missing file")
    labels = np.fromfile(labels_path, dtype="<u4")
    feat_indptr = np.fromfile(feat_indptr_path, dtype="<u8").astype(np.int64)
    feat_indices = np.fromfile(feat_indices_path, dtype="<u4").astype(np.int32)
    feat_values = np.fromfile(feat_values_path, dtype="<f4")
    n = len(feat_indptr) - 1
    if n < 1:
        raise DataError(f"{feat_indptr_path}: feature matrix has no rows")
    if len(labels) != n:
        raise DataError(
            f"{labels_path}: {len(labels)} labels for {n} feature rows"
        )

    srcs, dsts = [], []
    with open(edges_path) as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            parts = stripped.split()
            if len(parts) != 2:
                raise DataError(
                    f"{edges_path}:{lineno}: expected 'u v', got {stripped!r}"
                )
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise DataError(
                    f"{edges_path}:{lineno}: non-integer node id in {stripped!r}"
                ) from None
            if not (0 <= u < n and 0 <= v < n):
                raise DataError(
                    f"{edges_path}:{lineno}: node id out of range [0, {n})"
                )
            srcs.append(u)
            dsts.append(v)

    src = np.asarray(srcs + dsts, dtype=np.int64)
    dst = np.asarray(dsts + srcs, dtype=np.int64)
    adj = sp.csr_matrix(
        (np.ones(len(src), dtype=np.int8), (src, dst)), shape=(n, n)
    )
    adj.sum_duplicates()
    adj.sort_indices()

    d = int(num_features) if num_features is not None else (
        int(feat_indices.max()) + 1 if len(feat_indices) else 0
    )
    c = int(num_classes) if num_classes is not None else int(labels.max()) + 1

    graph = AttributedGraph(
        adj_indptr=adj.indptr.astype(np.int64),
        adj_indices=adj.indices.astype(np.int32),
        feat_indptr=feat_indptr,
        feat_indices=feat_indices,
        feat_values=feat_values,
        labels=labels.astype(np.int32),
        d=d,
        c=c,
    )
    validate_structure(graph)
    return graph
