"""Acceptance gate: one test per criterion, each printing a PASS line.

Run as `pytest tests/test_acceptance.py -v -s` to see one line per criterion.
"""

import csv
import itertools
import time

import numpy as np
import pytest

from splitlab import cli
from splitlab.accounting import FlopCounter, TrafficLedger, closed_form_epoch_bytes
from splitlab.config import CSV_COLUMNS, load_config
from splitlab.metrics import ScoredPredictions, auprc, auroc, confusion, f1_and_kappa
from splitlab.methods import METHODS, family, topology
from splitlab.nn import backward, bce_loss, forward
from splitlab.optim import Optimizer, OptimizerConfig
from splitlab.protocols import (
    make_fl_clients,
    make_split_clients,
    schedule_am,
    train_centralized,
    train_federated,
    train_sflv2,
    train_sflv3,
    train_split,
)
from splitlab.splitting import (
    LS,
    NLS,
    SegmentOptimizers,
    SplitSpec,
    ls_train_batch,
    nls_train_batch,
    split_model,
)

from conftest import build_model, identical_partitions, pooled_split, tiny_partitions

SMOKE_CONFIG = "configs/smoke.toml"


def ok(n, message):
    print(f"\nACCEPTANCE {n} PASS: {message}")


@pytest.fixture(scope="module")
def smoke_results():
    """One full run of the bundled smoke suite, shared by several criteria."""
    cfg = load_config(SMOKE_CONFIG)
    start = time.perf_counter()
    outcomes = {method: cli.run_experiment(cfg, method) for method in cfg.methods}
    elapsed = time.perf_counter() - start
    return cfg, outcomes, elapsed


# -- 1 -------------------------------------------------------------------


def test_c01_split_transparency():
    start = time.perf_counter()
    cfg = OptimizerConfig(learning_rate=1e-2)
    x = np.random.default_rng(0).standard_normal((6, 5))
    y = np.random.default_rng(1).integers(0, 2, (6, 1)).astype(float)
    specs = [SplitSpec(LS, c) for c in (1, 2, 3)]
    specs += [SplitSpec(NLS, c, t) for c, t in ((1, 1), (1, 2), (2, 1))]
    for spec in specs:
        reference = build_model((5, 4, 1), seed=11)  # 4-layer mlp
        opt = Optimizer(reference, cfg)
        out, cache = forward(reference, x)
        _, dpred = bce_loss(out, y)
        grads, _ = backward(reference, cache, dpred)
        opt.step(grads)

        candidate = build_model((5, 4, 1), seed=11)
        split = split_model(candidate, spec)
        opts = SegmentOptimizers(
            head=Optimizer(split.client_head, cfg),
            body=Optimizer(split.server_body, cfg),
            tail=Optimizer(split.client_tail, cfg) if split.client_tail is not None else None,
        )
        if spec.topology == LS:
            ls_train_batch(split, x, y, opts, TrafficLedger())
        else:
            nls_train_batch(split, x, y, opts, TrafficLedger())
        np.testing.assert_allclose(
            candidate.param_vector(), reference.param_vector(), rtol=1e-10, atol=1e-14
        )
    elapsed = time.perf_counter() - start
    assert elapsed < 2.0
    ok(1, f"split == unsplit within 1e-10 for {len(specs)} cut specs in {elapsed:.2f}s")


# -- 2 -------------------------------------------------------------------


def test_c02_degeneracy_ladder():
    start = time.perf_counter()
    adam = OptimizerConfig(learning_rate=1e-2)
    parts = tiny_partitions(1, train_size=24)
    spec = SplitSpec(LS, 2)

    reference = build_model((6, 4, 1), seed=0)
    train_centralized(reference, parts[0], epochs=3, batch_size=8, opt_cfg=adam, seed=0)
    ref_vec = reference.param_vector()

    def split_vec(outcome_clients, server):
        rebuilt = np.concatenate(
            [outcome_clients[0].head.param_vector(), server.body.param_vector()]
        )
        return rebuilt

    for label, runner in (
        ("sl_ac", lambda c, s, kw: train_split(c, s, schedule="ac", **kw)),
        ("sl_am", lambda c, s, kw: train_split(c, s, schedule="am", **kw)),
        ("sflv2", lambda c, s, kw: train_sflv2(c, s, **kw)),
    ):
        model = build_model((6, 4, 1), seed=0)
        clients, server = make_split_clients(model, spec, parts, adam)
        kw = dict(epochs=3, batch_size=8, seed=0, ledger=TrafficLedger(), flops=FlopCounter())
        runner(clients, server, kw)
        np.testing.assert_allclose(
            split_vec(clients, server), ref_vec, rtol=1e-10, atol=1e-13, err_msg=label
        )

    # SplitFedv3 degenerates with one batch per epoch, E=1, plain sgd
    sgd = OptimizerConfig(learning_rate=1e-2, algo="sgd")
    sgd_reference = build_model((6, 4, 1), seed=0)
    train_centralized(sgd_reference, parts[0], epochs=3, batch_size=64, opt_cfg=sgd, seed=0)
    model = build_model((6, 4, 1), seed=0)
    clients, server = make_split_clients(model, spec, parts, sgd)
    train_sflv3(clients, server, rounds=3, local_epochs=1, batch_size=64, seed=0,
                ledger=TrafficLedger(), flops=FlopCounter())
    np.testing.assert_allclose(
        split_vec(clients, server), sgd_reference.param_vector(), rtol=1e-10, atol=1e-13
    )
    elapsed = time.perf_counter() - start
    assert elapsed < 5.0
    ok(2, f"single-client sl_ac/sl_am/sflv2/sflv3 all match centralized ({elapsed:.2f}s)")


# -- 3 -------------------------------------------------------------------


def test_c03_fedavg_symmetry():
    sgd = OptimizerConfig(learning_rate=1e-2, algo="sgd")

    base_single = build_model((6, 4, 1), seed=4)
    clients = make_fl_clients(base_single, identical_partitions(1))
    train_federated(clients, base_single, epochs=2, batch_size=8, opt_cfg=sgd, seed=1,
                    ledger=TrafficLedger(), flops=FlopCounter())

    base_five = build_model((6, 4, 1), seed=4)
    clients = make_fl_clients(base_five, identical_partitions(5))
    train_federated(clients, base_five, epochs=2, batch_size=8, opt_cfg=sgd, seed=1,
                    ledger=TrafficLedger(), flops=FlopCounter())

    assert base_five.checksum() == base_single.checksum()
    ok(3, "5 identical clients x 2 rounds reproduce the single-client run bit-for-bit")


# -- 4 -------------------------------------------------------------------


def test_c04_flop_additivity():
    rng = np.random.default_rng(77)
    checked = 0
    for case in range(10):
        hidden = int(rng.integers(2, 8))
        depth_dims = (6, hidden, 1)
        model_seed = int(rng.integers(0, 999))
        model = build_model(depth_dims, seed=model_seed)
        num_layers = model.num_layers
        if rng.random() < 0.5:
            spec = SplitSpec(LS, int(rng.integers(1, num_layers)))
        else:
            cut = int(rng.integers(1, num_layers - 1))
            spec = SplitSpec(NLS, cut, int(rng.integers(1, num_layers - cut)))
        parts = tiny_partitions(2, train_size=int(rng.integers(8, 24)), seed=case)
        cfg = OptimizerConfig(learning_rate=1e-2)
        clients, server = make_split_clients(model, spec, parts, cfg)
        flops = FlopCounter()
        train_split(clients, server, schedule="ac", epochs=1, batch_size=5, seed=0,
                    ledger=TrafficLedger(), flops=flops)
        split_total = flops.server_flops + flops.total_client_flops()

        central_model = build_model(depth_dims, seed=model_seed)
        central_flops = FlopCounter()
        train_centralized(central_model, pooled_split(parts), epochs=1, batch_size=5,
                          opt_cfg=cfg, seed=0, flops=central_flops)
        central_total = central_flops.server_flops
        assert abs(split_total - central_total) <= 0.001 * central_total
        checked += 1
    ok(4, f"server + client flops match centralized within 0.1% on {checked} random cuts")


# -- 5 -------------------------------------------------------------------


def test_c05_ledger_exactness(smoke_results):
    cfg, outcomes, _ = smoke_results
    totals = {}
    headline = {}
    for method, outcome in outcomes.items():
        r = outcome.report
        measured = r.bytes_train + r.bytes_eval + r.bytes_model_sync
        totals[method] = measured
        headline[method] = r.bytes_train + r.bytes_eval
        if family(method) == "centralized":
            expected_epoch = 0
            train_sizes = [len(outcome.pooled_data.train)]
            val_sizes = [len(outcome.pooled_data.val)]
        else:
            train_sizes = [len(c.data.train) for c in outcome.clients]
            val_sizes = [len(c.data.val) for c in outcome.clients]
        kwargs = dict(train_sizes=train_sizes, val_sizes=val_sizes)
        if family(method) == "fl":
            kwargs["param_count"] = outcome.model.param_count
        elif topology(method) is not None:
            split = outcome.clients[0].split
            kwargs.update(
                up_width=split.up_width,
                down_width=split.down_width,
                client_segment_params=split.client_param_count,
                local_epochs=cfg.local_epochs,
            )
        expected_epoch = closed_form_epoch_bytes(method, **kwargs)
        assert measured == cfg.epochs * expected_epoch, method

    for ls, nls in (("sl_ls_ac", "sl_nls_ac"), ("sl_ls_am", "sl_nls_am"),
                    ("sflv2_ls", "sflv2_nls"), ("sflv3_ls", "sflv3_nls")):
        assert headline[nls] > headline[ls]
    assert headline["sl_ls_ac"] == headline["sl_ls_am"] == headline["sflv2_ls"] == headline["sflv3_ls"]
    assert headline["sl_nls_ac"] == headline["sl_nls_am"] == headline["sflv2_nls"] == headline["sflv3_nls"]
    ok(5, "measured bytes == closed form for all 10 methods; nls > ls; headline rows equal")


# -- 6 -------------------------------------------------------------------


def test_c06_metric_oracles():
    rng = np.random.default_rng(2024)
    for _ in range(200):
        n = int(rng.integers(2, 501))
        scores = np.round(rng.random(n), 2) if rng.random() < 0.5 else rng.random(n)
        labels = rng.integers(0, 2, n).astype(float)
        if labels.min() == labels.max():
            labels[0] = 1.0 - labels[0]
        preds = ScoredPredictions(scores, labels)
        pos = scores[labels == 1.0]
        neg = scores[labels == 0.0]
        brute = ((pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()) / (
            pos.size * neg.size
        )
        assert abs(auroc(preds) - brute) <= 1e-9

    def hand(tp, fp, fn, tn):
        n = tp + fp + fn + tn
        f1 = 0.0 if 2 * tp + fp + fn == 0 else 2 * tp / (2 * tp + fp + fn)
        p_o = (tp + tn) / n
        p_e = ((tp + fp) * (tp + fn) + (fn + tn) * (fp + tn)) / (n * n)
        return f1, 0.0 if p_e == 1.0 else (p_o - p_e) / (1 - p_e)

    matrices = [
        (4, 0, 0, 4), (1, 1, 1, 1), (3, 1, 1, 3), (6, 2, 2, 6), (0, 0, 3, 5),
        (5, 3, 0, 0), (2, 1, 3, 10), (7, 0, 1, 8), (1, 4, 1, 10), (8, 8, 0, 0),
    ]
    for tp, fp, fn, tn in matrices:
        scores = np.array([0.9] * (tp + fp) + [0.1] * (fn + tn))
        labels = np.array([1.0] * tp + [0.0] * fp + [1.0] * fn + [0.0] * tn)
        preds = ScoredPredictions(scores, labels)
        assert confusion(preds) == (tp, fp, fn, tn)
        assert f1_and_kappa(preds) == hand(tp, fp, fn, tn)

    # module examples: ranked pairs, coin confusion, random-score auprc
    assert auroc(
        ScoredPredictions(np.array([0.1, 0.4, 0.35, 0.8]), np.array([0.0, 0.0, 1.0, 1.0]))
    ) == pytest.approx(0.75)
    coin = ScoredPredictions(np.array([0.9, 0.9, 0.1, 0.1]), np.array([1.0, 0.0, 1.0, 0.0]))
    assert f1_and_kappa(coin) == (0.5, 0.0)
    big = np.random.default_rng(9)
    labels = (big.random(2000) < 0.1).astype(float)
    assert auprc(ScoredPredictions(big.random(2000), labels)) == pytest.approx(labels.mean(), abs=0.05)
    ok(6, "auroc == pairwise oracle on 200 vectors; 10 hand confusion matrices exact")


# -- 7 -------------------------------------------------------------------


def test_c07_smoke_experiment(smoke_results):
    cfg, outcomes, elapsed = smoke_results
    assert cfg.seed == 42
    assert cfg.epochs == 10
    assert cfg.hidden_dims == (8,)
    assert cfg.synthetic.n_features == 16
    assert list(cfg.partition.source_weights) == [3772, 1150, 1816, 880, 1090]
    sizes = sorted(len(c.data.train) for c in outcomes["fl"].clients)
    assert sum(sizes) == 2000
    aurocs = {}
    for method in METHODS:
        r = outcomes[method].report
        assert r.auroc >= 0.90, f"{method}: auroc {r.auroc:.4f}"
        assert r.epochs == 10
        aurocs[method] = r.auroc
    assert elapsed < 120.0
    worst = min(aurocs, key=aurocs.get)
    ok(7, f"all 10 methods reach auroc >= 0.90 (worst {worst}={aurocs[worst]:.4f}) in {elapsed:.1f}s")


# -- 8 -------------------------------------------------------------------


def test_c08_schedule_exactness():
    assert schedule_am({1: 3, 2: 1, 3: 2}) == [
        (1, 0), (2, 0), (3, 0), (1, 1), (3, 1), (1, 2),
    ]

    def oracle(counts):
        out = []
        for k in range(max(counts.values(), default=0)):
            for cid in sorted(counts):
                if k < counts[cid]:
                    out.append((cid, k))
        return out

    checked = 0
    for length in range(0, 7):
        for counts in itertools.product(range(6), repeat=length):
            mapping = dict(enumerate(counts))
            assert schedule_am(mapping) == oracle(mapping)
            checked += 1
    ok(8, f"am schedule matches its closed form on all {checked} count vectors (len<=6, counts<=5)")


# -- 9 -------------------------------------------------------------------


def test_c09_sflv3_order_invariance():
    parts = tiny_partitions(3)
    final_vectors = []
    for order in itertools.permutations([0, 1, 2]):
        model = build_model((6, 4, 1), seed=5)
        clients, server = make_split_clients(
            model, SplitSpec(LS, 2), parts, OptimizerConfig(learning_rate=1e-2)
        )
        train_sflv3(clients, server, rounds=2, local_epochs=1, batch_size=8, seed=0,
                    ledger=TrafficLedger(), flops=FlopCounter(), client_order=order)
        final_vectors.append(server.body.param_vector())
    for vec in final_vectors[1:]:
        np.testing.assert_allclose(vec, final_vectors[0], rtol=1e-12, atol=1e-15)
    ok(9, "final server weights identical across all 6 client-processing permutations")


# -- 10 ------------------------------------------------------------------


def test_c10_determinism(tmp_path):
    out_a = tmp_path / "a.csv"
    out_b = tmp_path / "b.csv"
    assert cli.main(["run", "--config", SMOKE_CONFIG, "--out", str(out_a)]) == 0
    assert cli.main(["run", "--config", SMOKE_CONFIG, "--out", str(out_b)]) == 0

    def rows_without_wall(path):
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        wall = CSV_COLUMNS.index("wall_s_per_epoch")
        return [r[:wall] + r[wall + 1 :] for r in rows]

    assert rows_without_wall(out_a) == rows_without_wall(out_b)
    ok(10, "rerunning the smoke config reproduces every CSV row except wall time")
