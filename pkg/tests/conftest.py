import os
import sys

import numpy as np
import pytest
import scipy.sparse as sp

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pprnet.graph import AttributedGraph, standardize  # noqa: E402

SRC_PATH = os.path.abspath(os.path.join(os.path.dirname(__file__), "..", "src"))


def build_graph(edges, n, features=None, labels=None, c=None, symmetrize=True):
    """AttributedGraph from an edge list. Identity-like features and
    zero labels unless given. Does not standardize."""
    if symmetrize:
        src = [u for u, v in edges] + [v for u, v in edges]
        dst = [v for u, v in edges] + [u for u, v in edges]
    else:
        src = [u for u, v in edges]
        dst = [v for u, v in edges]
    if len(src):
        adj = sp.csr_matrix(
            (np.ones(len(src), dtype=np.int8), (src, dst)), shape=(n, n)
        )
        adj.sum_duplicates()
        adj.data[:] = 1
        adj.sort_indices()
    else:
        adj = sp.csr_matrix((n, n), dtype=np.int8)
    if features is None:
        features = sp.identity(n, format="csr", dtype=np.float32)
    else:
        features = sp.csr_matrix(features, dtype=np.float32)
        features.sort_indices()
    if labels is None:
        labels = np.zeros(n, dtype=np.int32)
    labels = np.asarray(labels, dtype=np.int32)
    if c is None:
        c = max(2, int(labels.max()) + 1) if len(labels) else 2
    return AttributedGraph(
        adj_indptr=adj.indptr.astype(np.int64),
        adj_indices=adj.indices.astype(np.int32),
        feat_indptr=features.indptr.astype(np.int64),
        feat_indices=features.indices.astype(np.int32),
        feat_values=features.data.astype(np.float32),
        labels=labels,
        d=features.shape[1],
        c=c,
    )


def two_cycle():
    return build_graph([(0, 1)], 2)


def star(leaves=3):
    return build_graph([(0, i) for i in range(1, leaves + 1)], leaves + 1)


def random_connected_graph(rng, n, extra_edges=None):
    """Random spanning tree plus extra random edges: connected, undirected."""
    edges = set()
    for v in range(1, n):
        u = int(rng.integers(0, v))
        edges.add((u, v))
    if extra_edges is None:
        extra_edges = int(rng.integers(0, 3 * n))
    for _ in range(extra_edges):
        u = int(rng.integers(0, n))
        v = int(rng.integers(0, n))
        if u != v:
            edges.add((min(u, v), max(u, v)))
    return build_graph(sorted(edges), n)


def sbm_dataset(n=1500, c=4, d=40, seed=0, p_intra=8, p_cross=2, feat_active=4,
                feat_noise=2):
    """Homophilous planted-partition graph with class-correlated sparse
    binary features; standardized."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, c, size=n)
    order = rng.permutation(n)
    edges = set()
    for i in range(1, n):
        u, v = int(order[i]), int(order[int(rng.integers(0, i))])
        edges.add((min(u, v), max(u, v)))
    members = {cls: np.where(labels == cls)[0] for cls in range(c)}
    for u in range(n):
        n_in = min(int(rng.poisson(p_intra)), len(members[labels[u]]))
        for v in rng.choice(members[labels[u]], size=n_in, replace=False):
            if u != int(v):
                edges.add((min(u, int(v)), max(u, int(v))))
        for v in rng.choice(n, size=int(rng.poisson(p_cross)), replace=False):
            if u != int(v):
                edges.add((min(u, int(v)), max(u, int(v))))

    chunk = d // c
    per = rng.permutation(d)
    proto = [per[i * chunk : (i + 1) * chunk][: feat_active + 3] for i in range(c)]
    rows, cols = [], []
    for u in range(n):
        pool = proto[labels[u]]
        active = rng.choice(pool, size=min(feat_active, len(pool)), replace=False)
        noise = rng.choice(d, size=feat_noise, replace=False)
        for col in sorted(set(active.tolist()) | set(noise.tolist())):
            rows.append(u)
            cols.append(col)
    feat = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.float32), (rows, cols)), shape=(n, d)
    )
    feat.sort_indices()
    g = build_graph(sorted(edges), n, features=feat, labels=labels, c=c)
    g, _ = standardize(g)
    return g


@pytest.fixture(scope="session")
def small_sbm():
    return sbm_dataset(n=1500, c=4, d=40, seed=0)


@pytest.fixture(scope="session")
def warm_kernels():
    """Compile the push kernels once so timed tests measure pushes only."""
    from pprnet.ppr import PprConfig, batch_topk_ppr, push_ppr, topk_mass_profile

    g = two_cycle()
    push_ppr(g, 0.25, 0, 1e-6)
    batch_topk_ppr(g, PprConfig(alpha=0.25, epsilon=1e-6, k=2), [0, 1])
    topk_mass_profile(g, PprConfig(alpha=0.25, epsilon=1e-6, k=2), [0])
    return True


def real_dataset_dir(name: str):
    """Locate a converted benchmark dataset, or None.

    Looks in $PPRNET_DATA, then <repo>/data. Each dataset is a container
    directory produced by scripts/convert_npz_dataset.py (see README).
    """
    roots = []
    env = os.environ.get("PPRNET_DATA")
    if env:
        roots.append(env)
    roots.append(os.path.join(os.path.dirname(__file__), "..", "data"))
    for root in roots:
        candidate = os.path.join(root, name)
        if os.path.isfile(os.path.join(candidate, "meta.json")):
            return candidate
    return None


def require_real_dataset(name: str) -> str:
    path = real_dataset_dir(name)
    if path is None:
        pytest.skip(
            f"benchmark dataset {name!r} not available: no network access in "
            f"this environment and no converted copy under $PPRNET_DATA or "
            f"./data/{name}. Convert the public CSR .npz with "
            f"scripts/convert_npz_dataset.py to run this criterion."
        )
    return path
