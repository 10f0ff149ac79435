"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line (run with `pytest tests/test_acceptance.py -v -s`).

Criteria 3, 4 and the benchmark-dataset halves of 7 and 8 need the
converted PubMed / Cora-Full datasets (see README: datasets); they skip
with an explanation when the data is not present.
"""

import json
import os
import subprocess
import sys
import time

import numpy as np
import pytest
import scipy.sparse as sp

from conftest import (
    SRC_PATH,
    random_connected_graph,
    require_real_dataset,
    sbm_dataset,
    star,
    two_cycle,
)

from pprnet.graph import load_dataset, sample_split, save_dataset, standardize
from pprnet.infer import evaluate, power_iteration_predict, sparse_logit_predict
from pprnet.model import ModelParams, TrainConfig, forward_local, init_params, loss_and_grad
from pprnet.ppr import PprConfig, exact_ppr_dense, push_ppr, topk_mass_profile
from pprnet.train import Batch, train_model


def report(num: int, ok: bool, detail: str) -> None:
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE CRITERION {num}: {status} - {detail}")
    assert ok, f"criterion {num}: {detail}"


# -- criterion 1: push vs dense oracle ------------------------------------


def test_criterion_1_push_error_bounds(warm_kernels):
    rng = np.random.default_rng(20240501)
    t0 = time.perf_counter()
    worst_violation = -np.inf
    checked = 0
    for gi in range(50):
        n = int(rng.integers(20, 201))
        g = random_connected_graph(rng, n, extra_edges=int(rng.integers(0, 4 * n)))
        for alpha in (0.1, 0.25, 0.5):
            pi = exact_ppr_dense(g, alpha)
            for eps in (1e-2, 1e-4):
                for source in rng.integers(0, n, size=2):
                    approx = push_ppr(g, alpha, int(source), eps).to_dense(n)
                    diff = pi[int(source)] - approx
                    bound = eps * g.degrees + 1e-9
                    assert diff.min() >= -1e-9
                    assert (diff <= bound).all()
                    worst_violation = max(worst_violation, (diff - bound).max())
                    checked += 1
    elapsed = time.perf_counter() - t0
    report(
        1,
        elapsed < 30.0,
        f"{checked} push/oracle comparisons within [0, eps*deg] in {elapsed:.1f}s (< 30s)",
    )


# -- criterion 2: closed forms ---------------------------------------------


def test_criterion_2_closed_forms(warm_kernels):
    eps = 1e-8
    g2 = two_cycle()
    vec = push_ppr(g2, 0.25, 0, eps).to_dense(2)
    ok = (
        abs(vec[0] - 4 / 7) <= eps * 1
        and abs(vec[1] - 3 / 7) <= eps * 1
    )
    g4 = star(3)
    vec4 = push_ppr(g4, 0.25, 0, eps).to_dense(4)
    ok = ok and abs(vec4[0] - 4 / 7) <= eps * 3
    ok = ok and all(abs(vec4[leaf] - 1 / 7) <= eps * 1 for leaf in (1, 2, 3))
    report(2, ok, "2-cycle (4/7, 3/7) and star (4/7, 1/7...) match within eps*deg")


# -- criteria 3/4/7/8 helpers: benchmark runs ------------------------------

_BENCH_CACHE: dict = {}


def _paper_protocol_runs(dataset_path: str, epsilon: float, seeds):
    """Train/evaluate with the reference configuration (alpha=0.25, k=32,
    hidden=32, dropout 0.1, weight decay 1e-4, lr 0.005, batch 512,
    200 epochs, 2 power-iteration steps) for each seed."""
    key = (dataset_path, epsilon, tuple(seeds))
    if key in _BENCH_CACHE:
        return _BENCH_CACHE[key]
    g = load_dataset(dataset_path, standardized=False)
    g, _ = standardize(g)
    runs = []
    for seed in seeds:
        t0 = time.perf_counter()
        split = sample_split(g, seed)
        params, log = train_model(
            g,
            split,
            PprConfig(alpha=0.25, epsilon=epsilon, k=32),
            TrainConfig(seed=seed),
            workers=4,
        )
        H = forward_local(params, g.features())
        pred = power_iteration_predict(g, H, 0.25, 2)
        acc = evaluate(pred, g.labels, split.test_nodes)["accuracy"]
        runs.append(
            {
                "seed": seed,
                "accuracy": acc,
                "params": params,
                "split": split,
                "total_s": time.perf_counter() - t0,
            }
        )
    result = {"graph": g, "runs": runs}
    _BENCH_CACHE[key] = result
    return result


def test_criterion_3_pubmed_accuracy(warm_kernels):
    path = require_real_dataset("pubmed")
    seeds = [0, 1, 2, 3, 4]
    t0 = time.perf_counter()
    result = _paper_protocol_runs(path, 1e-4, seeds)
    elapsed = time.perf_counter() - t0
    accs = [r["accuracy"] * 100 for r in result["runs"]]
    mean = float(np.mean(accs))
    report(
        3,
        abs(mean - 75.2) <= 5.0,
        f"pubmed mean accuracy {mean:.1f}% over {len(seeds)} seeds "
        f"(target 75.2 +- 5.0), wall time {elapsed:.0f}s",
    )


def test_criterion_4_cora_full_accuracy(warm_kernels):
    path = require_real_dataset("cora_full")
    seeds = [0, 1, 2, 3, 4]
    fine = _paper_protocol_runs(path, 1e-4, seeds)
    coarse = _paper_protocol_runs(path, 1e-2, seeds)
    mean_fine = float(np.mean([r["accuracy"] * 100 for r in fine["runs"]]))
    mean_coarse = float(np.mean([r["accuracy"] * 100 for r in coarse["runs"]]))
    ok = (
        abs(mean_fine - 61.0) <= 5.0
        and abs(mean_coarse - 58.1) <= 5.0
        and mean_fine >= mean_coarse
    )
    report(
        4,
        ok,
        f"cora_full mean accuracy eps=1e-4: {mean_fine:.1f}% (target 61.0 +- 5), "
        f"eps=1e-2: {mean_coarse:.1f}% (target 58.1 +- 5), fine >= coarse",
    )


# -- criterion 5: gradients -------------------------------------------------


def _random_instance(rng, d=5, h=4, c=3, b=6, k=3):
    params = ModelParams(
        W1=rng.normal(size=(d, h)),
        b1=rng.normal(size=h),
        W2=rng.normal(size=(h, c)),
        b2=rng.normal(size=c),
    )
    n_unique = b + 2
    X = sp.csr_matrix(
        rng.normal(size=(n_unique, d)) * (rng.random((n_unique, d)) < 0.7)
    )
    slots, weights, indptr = [], [], [0]
    for _ in range(b):
        kk = int(rng.integers(1, k + 1))
        slots.extend(rng.choice(n_unique, size=kk, replace=False).tolist())
        w = rng.random(kk)
        weights.extend((w / w.sum()).tolist())
        indptr.append(len(slots))
    batch = Batch(
        row_indptr=np.array(indptr, dtype=np.int64),
        slot_unique=np.array(slots, dtype=np.int32),
        slot_weights=np.array(weights),
        unique_nodes=np.arange(n_unique, dtype=np.int64),
        labels=rng.integers(0, c, size=b).astype(np.int64),
    )
    return params, batch, X


def test_criterion_5_gradient_check():
    t0 = time.perf_counter()
    cfg = TrainConfig(weight_decay=1e-3, dropout_rate=0.0)
    worst = 0.0
    h = 1e-6
    for seed in range(10):
        rng = np.random.default_rng(seed)
        params, batch, X = _random_instance(rng)
        _, analytic = loss_and_grad(params, batch, X, cfg)
        for name, theta in params.tensors().items():
            flat = theta.ravel()
            gflat = analytic[name].ravel()
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                lp, _ = loss_and_grad(params, batch, X, cfg)
                flat[i] = orig - h
                lm, _ = loss_and_grad(params, batch, X, cfg)
                flat[i] = orig
                numeric = (lp - lm) / (2 * h)
                denom = max(abs(numeric) + abs(gflat[i]), 1e-8)
                worst = max(worst, abs(numeric - gflat[i]) / denom)
    elapsed = time.perf_counter() - t0
    report(
        5,
        worst <= 1e-4 and elapsed < 5.0,
        f"max relative gradient error {worst:.2e} (<= 1e-4) over 10 instances "
        f"in {elapsed:.1f}s (< 5s)",
    )


# -- criterion 6: inference-path equivalence --------------------------------


def test_criterion_6_power_iteration_matches_dense(warm_kernels):
    rng = np.random.default_rng(606)
    max_err = 0.0
    worst_ratio = 0.0
    for trial in range(3):
        n = int(rng.integers(50, 201))
        g = random_connected_graph(rng, n)
        H = rng.normal(size=(n, 5))
        alpha = 0.25
        pi = exact_ppr_dense(g, alpha)
        expected = pi @ H
        inv_deg = 1.0 / g.degrees.astype(np.float64)
        P = sp.csr_matrix(
            (np.repeat(inv_deg, g.degrees), g.adj_indices, g.adj_indptr),
            shape=(n, n),
        )
        Q = H.copy()
        prev_delta = None
        for step in range(200):
            Q_next = (1 - alpha) * (P @ Q) + alpha * H
            delta = np.abs(Q_next - Q).max()
            if prev_delta is not None and prev_delta > 1e-14:
                worst_ratio = max(worst_ratio, delta / prev_delta)
            prev_delta = delta
            Q = Q_next
        max_err = max(max_err, np.abs(Q - expected).max())
        from pprnet.model import softmax

        pred = power_iteration_predict(g, H, alpha, 200, float64=True)
        max_err = max(max_err, np.abs(pred.Z - softmax(expected)).max())
    ok = max_err < 1e-6 and worst_ratio <= (1 - 0.25) + 1e-9
    report(
        6,
        ok,
        f"max-norm gap vs dense propagation {max_err:.2e} (< 1e-6), "
        f"contraction ratio {worst_ratio:.4f} (<= 0.75)",
    )


# -- criterion 7: sparse inference -------------------------------------------


def test_criterion_7_sparse_inference_consistency(warm_kernels):
    g = sbm_dataset(n=1200, c=3, d=30, seed=5)
    params = init_params(g.d, 32, g.c, seed=1)
    H = forward_local(params, g.features())
    full = power_iteration_predict(g, H, 0.25, 2)
    frac1 = sparse_logit_predict(g, params, 1.0, 0.25, 2, seed=3)
    bit_equal = np.array_equal(full.Z, frac1.Z)

    detail = "fraction=1.0 path bit-equal to full path"
    pubmed = None
    try:
        pubmed = require_real_dataset("pubmed")
    except pytest.skip.Exception:
        report(7, bit_equal, detail + " (pubmed half skipped: dataset unavailable)")
        return

    result = _paper_protocol_runs(pubmed, 1e-4, [0])
    gp = result["graph"]
    run = result["runs"][0]
    acc_full = run["accuracy"]
    sparse = sparse_logit_predict(gp, run["params"], 0.1, 0.25, 4, seed=0)
    acc_sparse = evaluate(sparse, gp.labels, run["split"].test_nodes)["accuracy"]
    ok = bit_equal and abs(acc_sparse - acc_full) <= 0.03
    report(
        7,
        ok,
        detail
        + f"; pubmed accuracy fraction=0.1,p=4: {acc_sparse:.3f} vs "
        f"fraction=1.0,p=2: {acc_full:.3f} (within 3 points)",
    )


# -- criterion 8: top-k mass profile ------------------------------------------


def test_criterion_8_topk_mass_profile(warm_kernels):
    path = require_real_dataset("pubmed")
    g = load_dataset(path, standardized=False)
    g, _ = standardize(g)
    rng = np.random.default_rng(8)
    sources = np.sort(rng.choice(g.n, size=min(1024, g.n), replace=False))
    cfg = PprConfig(alpha=0.25, epsilon=1e-6, k=32)
    prof = topk_mass_profile(g, cfg, sources)
    monotone = bool((np.diff(prof.mean_topk_sum) >= -1e-12).all())
    final_ratio = prof.mean_topk_sum[-1] / prof.mean_total
    ok = monotone and prof.ks[-1] == g.n and final_ratio >= 0.95
    report(
        8,
        ok,
        f"pubmed eps=1e-6 profile over {len(sources)} sources: monotone={monotone}, "
        f"top-n mass ratio {final_ratio:.4f} (>= 0.95)",
    )


# -- criterion 9: determinism ---------------------------------------------------


def _run_cli(args):
    env = dict(os.environ)
    env["PYTHONPATH"] = SRC_PATH + os.pathsep + env.get("PYTHONPATH", "")
    return subprocess.run(
        [sys.executable, "-m", "pprnet", *args],
        capture_output=True,
        text=True,
        env=env,
    )


def test_criterion_9_run_all_determinism(tmp_path, warm_kernels):
    g = sbm_dataset(n=900, c=3, d=24, seed=2)
    ds = tmp_path / "ds"
    save_dataset(g, str(ds))
    cfg = {
        "dataset": str(ds),
        "seeds": [0, 1],
        "ppr": {"alpha": 0.25, "epsilon": 1e-4, "k": 16},
        "train": {"epochs": 8, "batch_size": 64, "hidden": 16},
        "inference": {"power_iteration_steps": 2, "fraction": 1.0},
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(cfg))

    outs = []
    for name, workers in (("a", 1), ("b", 4), ("c", 1)):
        out = tmp_path / name
        res = _run_cli(
            ["run-all", "--config", str(cfg_path), "--out", str(out),
             "--workers", str(workers)]
        )
        assert res.returncode == 0, res.stderr
        outs.append(out)

    results = [
        json.loads((out / "results.json").read_text())["runs"] for out in outs
    ]
    acc_equal = all(
        results[0][i]["accuracy"] == other[i]["accuracy"]
        for other in results[1:]
        for i in range(2)
    )
    files_equal = True
    for seed in (0, 1):
        for fname in ("ppr_indptr.u64", "ppr_indices.u32", "ppr_weights.f32",
                      "ppr_sources.u32"):
            blobs = [
                (out / f"seed_{seed}" / fname).read_bytes() for out in outs
            ]
            files_equal = files_equal and all(b == blobs[0] for b in blobs[1:])
    report(
        9,
        acc_equal and files_equal,
        "repeated run-all with workers 1/4/1: identical accuracies and "
        "identical top-k PPR files",
    )
