#!/usr/bin/env python3
"""Convert a CSR-style .npz graph archive into a pprnet dataset directory.

Expected archive keys (the layout used by several public citation-graph
distributions):

    adj_data, adj_indices, adj_indptr, adj_shape        sparse adjacency
    attr_data, attr_indices, attr_indptr, attr_shape    sparse features
        (or a dense `attr_matrix`)
    labels                                              int class per node

The graph is symmetrized, reduced to its largest connected component and
compacted; edge weights are discarded (unweighted). Writes the container
format plus remap.u32 (new id -> original id).

Usage: python scripts/convert_npz_dataset.py input.npz output_dir
"""

import sys
import os

import numpy as np
import scipy.sparse as sp

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pprnet.graph import AttributedGraph, save_dataset, standardize  # noqa: E402


def load_npz_graph(path):
    with np.load(path, allow_pickle=True) as loader:
        data = dict(loader)
    adj = sp.csr_matrix(
        (data["adj_data"], data["adj_indices"], data["adj_indptr"]),
        shape=tuple(data["adj_shape"]),
    )
    if "attr_data" in data:
        attr = sp.csr_matrix(
            (data["attr_data"], data["attr_indices"], data["attr_indptr"]),
            shape=tuple(data["attr_shape"]),
        )
    elif "attr_matrix" in data:
        attr = sp.csr_matrix(np.asarray(data["attr_matrix"]))
    else:
        raise KeyError("archive has neither attr_data nor attr_matrix")
    labels = np.asarray(data["labels"]).astype(np.int64)
    return adj, attr, labels


def main(argv):
    if len(argv) != 3:
        print(__doc__.strip(), file=sys.stderr)
        return 2
    npz_path, out_dir = argv[1], argv[2]
    adj, attr, labels = load_npz_graph(npz_path)
    n = adj.shape[0]
    if attr.shape[0] != n or len(labels) != n:
        print(
            f"error: inconsistent sizes (adj {adj.shape}, attr {attr.shape}, "
            f"labels {len(labels)})",
            file=sys.stderr,
        )
        return 3

    adj = adj.tocsr()
    adj.data = np.ones_like(adj.data)  # unweighted
    adj.sum_duplicates()
    adj.sort_indices()
    attr = attr.tocsr().astype(np.float32)
    attr.sort_indices()

    # compact label ids in case some classes are unused
    unique = np.unique(labels)
    remapped = np.searchsorted(unique, labels)

    graph = AttributedGraph(
        adj_indptr=adj.indptr.astype(np.int64),
        adj_indices=adj.indices.astype(np.int32),
        feat_indptr=attr.indptr.astype(np.int64),
        feat_indices=attr.indices.astype(np.int32),
        feat_values=attr.data,
        labels=remapped.astype(np.int32),
        d=attr.shape[1],
        c=int(len(unique)),
    )
    std, remap = standardize(graph)
    save_dataset(std, out_dir)
    remap.astype("<u4").tofile(os.path.join(out_dir, "remap.u32"))
    print(
        f"wrote {out_dir}: n={std.n} m={std.m} d={std.d} c={std.c} "
        f"(kept {std.n}/{n} nodes)"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
