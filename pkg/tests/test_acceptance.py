"""Acceptance suite: one test per release criterion, at its stated tolerance.

Run with `pytest tests/test_acceptance.py -v -s` to get one explicit
[ACCEPT] line per criterion alongside the pytest verdicts.
"""

import json
import random
import time
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from fedkgrec import kg
from fedkgrec.adapters import from_arrays, make_lora_adapter, serialize
from fedkgrec.alignment import OutcomeEngine, build_training_corpus, corpus_label_counts
from fedkgrec.cli import main as cli_main
from fedkgrec.dataset import TxType, generate_synthetic
from fedkgrec.evaluation import (
    baseline_random,
    build_test_set,
    evaluate,
    expected_random_hit_rate,
    oracle_recommender,
    proportion_stderr,
    score_instance,
)
from fedkgrec.federation import (
    RoundConfig,
    adapter_size,
    aggregate,
    comm_cost,
    participation_counts,
    run_rounds,
)
from fedkgrec.prompts import Ablation
from fedkgrec.timeline import TEST_SCHEDULE, TRAIN_SCHEDULE
from fedkgrec.trainer import MockTrainer

from conftest import FIG2_CUSTOMER, FIG3_ISIN, FULL_RANGE, make_fig_dataset
from test_kg import _mkg_of, _pkg_of


def report(name):
    print(f"\n[ACCEPT] {name}: PASS")


def test_c01_table1_adapter_sizes():
    """All four published size rows, zero tolerance, under a second."""
    start = time.perf_counter()
    rows = [
        (10_092_544, 4.8125),
        (17_432_576, 8.3125),
        (33_030_144, 15.75),
        (43_646_976, 20.8125),
    ]
    for params, mb in rows:
        assert adapter_size(params, bits_per_param=4).size_mb == mb
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    report(f"Table-1 adapter sizes exact in {elapsed * 1e3:.1f} ms")


def test_c02_per_round_cost():
    """(3 uploads + 20 broadcasts) x 20.8125 MB == 478.6875 MB == 23x."""
    size = adapter_size(43_646_976, bits_per_param=4)
    report_obj = comm_cost(size.size_bytes, rounds=200, uploads_per_round=3, broadcast_targets=20)
    assert report_obj.per_round_mb == 478.6875
    assert abs(report_obj.per_round_mb - 478.69) < 0.005
    assert report_obj.per_round_bytes / report_obj.adapter_bytes == 23.0
    report("per-round cost 478.6875 MB, exactly 23x the adapter size")


def test_c03_participation_statistic(toy_corpus_dir, tmp_path):
    """50 seeded 200-round simulations: per-client mean in [28, 32], <10 s."""
    paths = toy_corpus_dir(n_clients=20, examples_per_client=12)
    adapter = make_lora_adapter(n_layers=1, hidden_dim=16, seed=0)
    trainer = MockTrainer()
    totals = np.zeros(20)
    start = time.perf_counter()
    for sim in range(50):
        logs, _ = run_rounds(
            RoundConfig(seed=sim, rounds=200), paths, trainer, adapter, tmp_path / f"w{sim}"
        )
        counts = participation_counts(logs)
        for c, n in counts.items():
            totals[c] += n
    elapsed = time.perf_counter() - start
    means = totals / 50
    assert elapsed < 10.0, f"took {elapsed:.1f}s"
    assert means.min() >= 28.0 and means.max() <= 32.0
    assert means.mean() == 30.0  # 3-of-20 over 200 rounds, exactly
    report(
        f"participation means in [{means.min():.2f}, {means.max():.2f}] "
        f"over 50x200 rounds in {elapsed:.1f} s"
    )


def test_c04_labeling_oracle_equivalence():
    """compute_outcomes vs a raw-row brute-force oracle on every (customer,
    tick) of a 50-user / 30-asset / 4-year synthetic dataset."""
    ds = generate_synthetic(23, 50, 30, FULL_RANGE)
    assert len(ds.profiles) >= 50 and len(ds.assets) >= 30
    ticks = TRAIN_SCHEDULE.ticks()
    engine = OutcomeEngine(ds)

    checked = 0
    for tick in ticks:
        end = tick + timedelta(days=180)
        # oracle pass 1: per-asset first/last close inside the window
        first: dict[str, tuple] = {}
        last: dict[str, tuple] = {}
        for bar in ds.prices:
            if tick <= bar.date <= end:
                if bar.isin not in first or bar.date < first[bar.isin][0]:
                    first[bar.isin] = (bar.date, bar.close)
                if bar.isin not in last or bar.date > last[bar.isin][0]:
                    last[bar.isin] = (bar.date, bar.close)
        profitable = {
            isin for isin in first if (last[isin][1] - first[isin][1]) / first[isin][1] > 0
        }
        # oracle pass 2: per-customer buys inside (tick, tick+180]
        purchased: dict[str, set] = {p.customer_id: set() for p in ds.profiles}
        for tx in ds.transactions:
            if tx.tx_type is TxType.BUY and tick < tx.timestamp <= end:
                purchased[tx.customer_id].add(tx.isin)

        for profile in ds.profiles:
            out = engine.outcomes(profile.customer_id, tick)
            assert out.purchased == purchased[profile.customer_id]
            assert out.profitable == profitable
            assert out.desirable == out.purchased & out.profitable
            assert out.desirable == purchased[profile.customer_id] & profitable
            checked += 1
    assert checked == 50 * len(ticks)
    report(f"labeling oracle equal on all {checked} (customer, tick) instances")


def test_c05_kg_golden_fixtures():
    ds = make_fig_dataset()
    pkg = kg.build_pkg(ds, FIG2_CUSTOMER, date(2021, 1, 1))
    assert len(pkg) == 5
    assert kg.Triple("Transaction_1", "transactionValue", "11000") in pkg.triples
    assert kg.Triple("Transaction_1", "type", "SellTransaction") in pkg.triples

    mkg = kg.build_mkg(ds, date(2018, 6, 1), asset_filter={FIG3_ISIN})
    assert len(mkg) == 10
    assert kg.Triple("TenWeekPriceSummary_1", "periodAveragePrice", "9.1679792") in mkg.triples

    for graph in (pkg, mkg):
        parsed = kg.parse_jsonld(kg.to_jsonld(graph), graph.kind)
        assert sorted(parsed.triples) == sorted(graph.triples)

    rng = random.Random(2718)
    worst = 0
    for _ in range(1000):
        fuzz_pkg = _pkg_of(rng.randrange(0, 900))
        fuzz_mkg = _mkg_of(rng.randrange(0, 30), rng.randrange(0, 10))
        cp, cm = kg.cap_triples(fuzz_pkg, fuzz_mkg, 5000)
        total = len(cp) + len(cm)
        worst = max(worst, total)
        assert total <= 5000
        assert set(cp.triples) <= set(fuzz_pkg.triples)
        assert set(cm.triples) <= set(fuzz_mkg.triples)
    report(f"KG goldens + lossless JSON-LD + cap fuzz (worst joint size {worst})")


def test_c06_schedules():
    train = TRAIN_SCHEDULE.ticks()
    test = TEST_SCHEDULE.ticks()
    # enumeration oracle
    assert train == [date(2019, 8, 1) + timedelta(days=28 * i) for i in range(24)]
    assert test == [date(2021, 12, 1) + timedelta(days=14 * i) for i in range(14)]
    assert train[-1] <= date(2021, 6, 1) < train[-1] + timedelta(days=28)
    assert test[-1] <= date(2022, 6, 2) < test[-1] + timedelta(days=14)
    report("24 training ticks and 14 test ticks by enumeration")


def test_c07_corpus_even_split():
    from test_alignment import test_even_split_when_all_pairs_complete

    test_even_split_when_all_pairs_complete()

    # on arbitrary synthetic data, true count == number of complete pairs
    ds = generate_synthetic(5, 10, 8, FULL_RANGE)
    assignment = {p.customer_id: i % 4 for i, p in enumerate(ds.profiles)}
    corpus = build_training_corpus(ds, assignment, seed=2)
    engine = OutcomeEngine(ds)
    expected_true = sum(
        1
        for p in ds.profiles
        for tick in TRAIN_SCHEDULE.ticks()
        if engine.outcomes(p.customer_id, tick).desirable
    )
    true_n = sum(corpus_label_counts(v)[0] for v in corpus.values())
    false_n = sum(corpus_label_counts(v)[1] for v in corpus.values())
    assert true_n == expected_true
    assert false_n >= true_n
    report("even split exact when every pair is complete; counts reconcile otherwise")


def test_c08_aggregation_exactness():
    rng = np.random.default_rng(8)
    adapters = [
        from_arrays({"a": rng.normal(size=(6, 5)).astype(np.float32),
                     "b": rng.normal(size=17).astype(np.float32)})
        for _ in range(3)
    ]
    out = aggregate(adapters)
    for name in ("a", "b"):
        columns = [a.array(name).astype(np.float64).reshape(-1) for a in adapters]
        oracle = np.array(
            [np.float32(sum(col[j] for col in columns) / 3) for j in range(columns[0].size)],
            dtype=np.float32,
        )
        diff = out.array(name).reshape(-1).astype(np.float64) - oracle.astype(np.float64)
        assert np.max(np.abs(diff)) <= 1e-12

    neg = from_arrays({"a": -adapters[0].array("a"), "b": -adapters[0].array("b")})
    zeros = aggregate([adapters[0], neg])
    assert all(np.all(zeros.array(n) == 0.0) for n in ("a", "b"))

    base = serialize(aggregate(adapters))
    for perm in ([2, 0, 1], [1, 2, 0], [2, 1, 0]):
        assert serialize(aggregate([adapters[i] for i in perm])) == base
    report("aggregation exact vs oracle, zero on [A, -A], permutation-invariant")


def test_c09_metric_sanity(synth_small):
    instances = build_test_set(synth_small, ablation=Ablation.NOTHING)

    oracle_results = {r.name: r for r in evaluate(oracle_recommender(), instances)}
    assert oracle_results["Comb@3"].mean == 1.0

    recommender = baseline_random(synth_small.asset_isins, seed=17)
    results = {r.name: r for r in evaluate(recommender, instances)}
    universe_size = len(synth_small.asset_isins)
    scored = [i for i in instances if i.outcomes.purchased]
    expected = sum(
        expected_random_hit_rate(universe_size, len(i.outcomes.purchased)) for i in scored
    ) / len(scored)
    observed = results["Pref@3"]
    assert abs(observed.mean - expected) <= 3 * max(observed.stderr, 1e-9)

    for instance in instances:
        scores = score_instance(recommender(instance), instance.outcomes)
        if scores["Comb@3"] == 1:
            assert scores["Pref@3"] == 1 and scores["Prof@3"] == 1

    import math

    for r in results.values():
        if r.n:
            assert abs(r.stderr - math.sqrt(r.mean * (1 - r.mean) / r.n)) <= 1e-12
    report(
        f"oracle Comb@3 = 1.0; random Pref@3 {observed.mean:.3f} vs "
        f"hypergeometric {expected:.3f} (3 sigma); comb=>pref&prof; stderr exact"
    )


ACCEPT_CONFIG = """\
[run]
seed = 1234

[data]
source = "synthetic"
n_users = 8
n_assets = 6
start = "2018-01-02"
end = "2022-11-29"

[federation]
n_clients = 5
clients_per_round = 2
rounds = 12
mode = "non-iid"

[adapter]
n_layers = 1
hidden_dim = 16
"""


def test_c10_end_to_end_determinism(tmp_path):
    """Two identical synth -> corpus -> federate(mock) -> evaluate pipelines
    must produce identical bytes for every comparable artifact."""
    runner = CliRunner()
    config = tmp_path / "run.toml"
    config.write_text(ACCEPT_CONFIG)

    def pipeline(root: Path):
        root.mkdir()
        steps = [
            ["synth", "--config", str(config), "--out", str(root / "data")],
            ["build-corpus", "--config", str(config), "--data", str(root / "data"),
             "--out", str(root / "corpus")],
            ["federate", "--config", str(config), "--corpus", str(root / "corpus"),
             "--out", str(root / "fed")],
            ["evaluate", "--config", str(config), "--data", str(root / "data"),
             "--recommender", "random", "--out", str(root / "eval")],
        ]
        for step in steps:
            result = runner.invoke(cli_main, step, catch_exceptions=False)
            assert result.exit_code == 0, result.output

    pipeline(tmp_path / "run1")
    pipeline(tmp_path / "run2")

    compared = []
    for rel in [
        "data/manifest.json",
        "corpus/manifest.json",
        "corpus/assignment.json",
        "fed/adapter_final.flat",
        "fed/round_logs.jsonl",
        "fed/manifest.json",
        "fed/comm_report.json",
        "eval/metrics.json",
        "eval/metrics.csv",
        "eval/instances.jsonl",
    ]:
        a = (tmp_path / "run1" / rel).read_bytes()
        b = (tmp_path / "run2" / rel).read_bytes()
        assert a == b, f"{rel} differs between identical runs"
        compared.append(rel)
    report(f"end-to-end determinism across {len(compared)} artifacts")


def test_c11_llm_scores_out_of_scope():
    """Published LLM score tables and the model points of the comparison
    figure need GPU fine-tuning; the baseline/oracle evaluations and the
    property suites above stand in for them here."""
    report("LLM score tables acknowledged as not reproducible at desk scale")
