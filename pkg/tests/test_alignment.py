from datetime import date, timedelta
from decimal import Decimal

import pytest

from fedkgrec.alignment import (
    KtoExample,
    OutcomeEngine,
    OutcomeSets,
    asset_return,
    build_kto_pair,
    build_prompt_instance,
    build_training_corpus,
    completion_isins,
    compute_outcomes,
    corpus_label_counts,
    example_from_dict,
    example_to_dict,
    read_corpus_file,
    write_corpus_file,
)
from fedkgrec.dataset import (
    Asset,
    CustomerProfile,
    CustomerType,
    Dataset,
    PriceBar,
    RiskLevel,
    Transaction,
    TxType,
)
from fedkgrec.errors import EmptyUniverse, NoPriceData, WindowUncovered
from fedkgrec.prompts import Ablation, ChatMessage, PromptInstance, Role, parse_response
from fedkgrec.timeline import TRAIN_SCHEDULE, Schedule

from conftest import FULL_RANGE


def bars(isin, start, closes, step=1):
    return [
        PriceBar(isin, start + timedelta(days=i * step), Decimal(str(c)))
        for i, c in enumerate(closes)
    ]


# -- asset_return ----------------------------------------------------------------


def test_return_flat_series():
    series = bars("X", date(2020, 1, 2), [4.2] * 30, step=7)
    assert asset_return(series, "X", date(2020, 1, 10)) == 0.0


def test_return_simple_arithmetic():
    series = [
        PriceBar("X", date(2020, 1, 2), Decimal("10.0")),
        PriceBar("X", date(2020, 6, 29), Decimal("12.5")),
    ]
    assert asset_return(series, "X", date(2020, 1, 1)) == pytest.approx(0.25)


def test_return_nearest_day_endpoints():
    series = bars("X", date(2020, 1, 6), [10, 11, 12, 13, 14], step=30)
    # first bar on/after Jan 8 is Feb 5 (11); last within 180d is Jun 4 (14)
    assert asset_return(series, "X", date(2020, 1, 8)) == pytest.approx((14 - 11) / 11)


def test_return_no_data():
    series = bars("X", date(2020, 1, 2), [10] * 5)
    with pytest.raises(NoPriceData):
        asset_return(series, "X", date(2021, 1, 1))


def test_return_matches_brute_force(synth_small):
    day = date(2019, 8, 1)
    end = day + timedelta(days=180)
    for asset in synth_small.assets:
        window = sorted(
            (b.date, b.close) for b in synth_small.prices if b.isin == asset.isin and day <= b.date <= end
        )
        expected = float((window[-1][1] - window[0][1]) / window[0][1])
        assert asset_return(synth_small.prices, asset.isin, day) == expected


# -- compute_outcomes ---------------------------------------------------------------


def outcome_fixture():
    assets = tuple(Asset(i, "Stock", "S", "I") for i in ("A" * 12, "B" * 12, "C" * 12))
    a, b, c = (x.isin for x in assets)
    start = date(2020, 1, 1)
    prices = (
        bars(a, start, [10.0] * 100 + [10.5] * 160)  # +5%
        + bars(b, start, [10.0] * 100 + [9.8] * 160)  # -2%
        + bars(c, start, [10.0] * 100 + [10.9] * 160)  # +9%
    )
    profiles = (
        CustomerProfile("U1", CustomerType.MASS, RiskLevel.MODERATE, Decimal(1)),
        CustomerProfile("U2", CustomerType.MASS, RiskLevel.MODERATE, Decimal(1)),
    )
    transactions = (
        Transaction("U1", a, TxType.BUY, Decimal(5), date(2020, 2, 1)),
        Transaction("U1", b, TxType.BUY, Decimal(5), date(2020, 3, 1)),
        Transaction("U1", c, TxType.SELL, Decimal(5), date(2020, 2, 15)),  # sells don't count
    )
    prices = tuple(sorted(prices, key=lambda x: (x.isin, x.date)))
    return Dataset(transactions, prices, assets, profiles), (a, b, c)


def test_outcomes_set_algebra():
    ds, (a, b, c) = outcome_fixture()
    out = compute_outcomes(ds, "U1", date(2020, 1, 15))
    assert out.purchased == {a, b}
    assert out.profitable == {a, c}
    assert out.desirable == {a}


def test_outcomes_empty_for_inactive_customer():
    ds, _ = outcome_fixture()
    out = compute_outcomes(ds, "U2", date(2020, 1, 15))
    assert out.purchased == frozenset()
    assert out.desirable == frozenset()


def test_outcomes_purchase_window_is_half_open():
    ds, (a, b, c) = outcome_fixture()
    # U1 bought `a` exactly on 2020-02-01: excluded when date == purchase day
    out = compute_outcomes(ds, "U1", date(2020, 2, 1))
    assert a not in out.purchased
    assert b in out.purchased


def test_outcomes_invariant_enforced():
    with pytest.raises(ValueError):
        OutcomeSets(frozenset({"A"}), frozenset({"A"}), frozenset())


def test_outcomes_window_past_coverage():
    ds, _ = outcome_fixture()
    with pytest.raises(NoPriceData):
        compute_outcomes(ds, "U1", date(2020, 6, 1))  # +180d leaves price history


def test_outcomes_match_exhaustive_oracle(synth_medium):
    """Brute-force scan of raw rows for every (customer, tick)."""
    ticks = [date(2019, 8, 1) + timedelta(days=28 * i) for i in range(0, 24, 6)]
    engine = OutcomeEngine(synth_medium)
    for profile in synth_medium.profiles:
        for tick in ticks:
            end = tick + timedelta(days=180)
            purchased = set()
            for tx in synth_medium.transactions:
                if (
                    tx.customer_id == profile.customer_id
                    and tx.tx_type is TxType.BUY
                    and tick < tx.timestamp <= end
                ):
                    purchased.add(tx.isin)
            profitable = set()
            for asset in synth_medium.assets:
                window = [
                    (b.date, b.close)
                    for b in synth_medium.prices
                    if b.isin == asset.isin and tick <= b.date <= end
                ]
                window.sort()
                if window and (window[-1][1] - window[0][1]) / window[0][1] > 0:
                    profitable.add(asset.isin)
            out = engine.outcomes(profile.customer_id, tick)
            assert out.purchased == purchased
            assert out.profitable == profitable
            assert out.desirable == purchased & profitable


# -- build_kto_pair -------------------------------------------------------------------


def minimal_instance(day=date(2020, 1, 15)):
    return PromptInstance(
        "U1",
        day,
        Ablation.NOTHING,
        (ChatMessage(Role.SYSTEM, "s"), ChatMessage(Role.USER, "u")),
    )


def test_pair_forced_small_universe():
    outcomes = OutcomeSets(
        frozenset({"A"}), frozenset({"A"}), frozenset({"A"}), {"A": 0.1, "B": -0.2, "C": 0.3}
    )
    pair = build_kto_pair(minimal_instance(), outcomes, {"A", "B", "C"}, seed=5)
    assert len(pair) == 2
    true_ex, false_ex = pair
    assert true_ex.label and not false_ex.label
    assert completion_isins(true_ex) == ("A",)
    assert set(completion_isins(false_ex)) <= {"B", "C"}


def test_pair_caps_at_twenty():
    desirable = frozenset(f"D{i:011d}" for i in range(25))
    returns = {i: 1.0 for i in desirable}
    outcomes = OutcomeSets(desirable, desirable, desirable, returns)
    pair = build_kto_pair(minimal_instance(), outcomes, desirable | {"X" * 12}, seed=1)
    assert len(completion_isins(pair[0])) == 20


def test_pair_desirable_ordered_by_return():
    outcomes = OutcomeSets(
        frozenset({"A", "B", "C"}),
        frozenset({"A", "B", "C"}),
        frozenset({"A", "B", "C"}),
        {"A": 0.05, "B": 0.30, "C": 0.10, "D": -0.5},
    )
    pair = build_kto_pair(minimal_instance(), outcomes, {"A", "B", "C", "D"}, seed=2)
    assert completion_isins(pair[0]) == ("B", "C", "A")


def test_pair_deterministic():
    outcomes = OutcomeSets(
        frozenset({"A"}), frozenset({"A"}), frozenset({"A"}), {x: 0.0 for x in "ABCDEFG"}
    )
    universe = set("ABCDEFG")
    a = build_kto_pair(minimal_instance(), outcomes, universe, seed=42)
    b = build_kto_pair(minimal_instance(), outcomes, universe, seed=42)
    assert a == b
    c = build_kto_pair(minimal_instance(), outcomes, universe, seed=43)
    assert a != c  # different sample with overwhelming probability


def test_pair_no_desirable_yields_single_false_example():
    outcomes = OutcomeSets(frozenset(), frozenset({"B"}), frozenset(), {"B": 0.2})
    pair = build_kto_pair(minimal_instance(), outcomes, {"A", "B"}, seed=0)
    assert [ex.label for ex in pair] == [False]


def test_pair_empty_universe():
    outcomes = OutcomeSets(frozenset(), frozenset(), frozenset(), {})
    with pytest.raises(EmptyUniverse):
        build_kto_pair(minimal_instance(), outcomes, set(), seed=0)


def test_pair_label_semantics(synth_small):
    engine = OutcomeEngine(synth_small)
    tick = date(2020, 6, 1)
    universe = synth_small.asset_isins
    for profile in synth_small.profiles[:6]:
        outcomes = engine.outcomes(profile.customer_id, tick)
        for example in build_kto_pair(minimal_instance(), outcomes, universe, seed=9):
            isins = set(completion_isins(example))
            assert 1 <= len(isins) <= 20
            if example.label:
                assert isins <= outcomes.desirable
            else:
                assert isins.isdisjoint(outcomes.desirable)


# -- corpus ---------------------------------------------------------------------------


def test_corpus_requires_coverage(synth_small):
    bad = Schedule(date(2022, 1, 1), date(2023, 6, 1), 28)
    with pytest.raises(WindowUncovered):
        build_training_corpus(synth_small, {"CUST000000": 0}, seed=1, schedule=bad)


def test_corpus_deterministic_and_structured(synth_small):
    assignment = {p.customer_id: i % 3 for i, p in enumerate(synth_small.profiles)}
    corpus_a = build_training_corpus(synth_small, assignment, seed=5)
    corpus_b = build_training_corpus(synth_small, assignment, seed=5)
    assert corpus_a == corpus_b
    assert set(corpus_a) == {0, 1, 2}

    ticks = TRAIN_SCHEDULE.ticks()
    engine = OutcomeEngine(synth_small)
    # every customer with >= 1 desirable asset at >= 1 tick contributes >= 1 true example
    for customer_id, client_id in assignment.items():
        has_desirable = any(engine.outcomes(customer_id, t).desirable for t in ticks)
        true_count = sum(
            1
            for ex in corpus_a[client_id]
            if ex.label and any(m.content.count(customer_id) for m in ex.messages)
        )
        if has_desirable:
            assert true_count >= 1


def test_corpus_no_leakage_structural(synth_small):
    """Every dated literal in a prompt's KG blocks strictly precedes the
    substituted recommendation date."""
    import json

    assignment = {p.customer_id: 0 for p in synth_small.profiles[:3]}
    corpus = build_training_corpus(synth_small, assignment, seed=5)
    assert corpus[0]
    checked = 0
    for example in corpus[0]:
        request = example.messages[-1].content
        day = request.split("current date is ")[1][:10]
        for message in example.messages[1:-1]:
            blob = message.content.split("```jsonld\n")[1].rsplit("\n```", 1)[0]
            for node in json.loads(blob)["@graph"]:
                for predicate in ("transactionTimestamp", "periodEndDate"):
                    if predicate in node:
                        checked += 1
                        assert node[predicate] < day
    assert checked > 0


def test_corpus_file_round_trip(tmp_path, synth_small):
    assignment = {p.customer_id: 0 for p in synth_small.profiles[:2]}
    corpus = build_training_corpus(synth_small, assignment, seed=5)
    path = tmp_path / "client_00.jsonl"
    n = write_corpus_file(corpus[0], path)
    assert n == len(corpus[0])
    assert read_corpus_file(path) == corpus[0]
    ex = corpus[0][0]
    assert example_from_dict(example_to_dict(ex)) == ex


def test_even_split_when_all_pairs_complete():
    """Rising market + a buyer active after every tick: every instance emits
    a complete pair, so the corpus splits exactly evenly."""
    isins = ("GOODASSET001", "ALSOFINE0002", "NEVERBUY0003")
    assets = tuple(Asset(i, "Stock", "S", "I") for i in isins)
    start, end = date(2018, 1, 2), date(2022, 11, 29)
    n_days = (end - start).days + 1
    prices = []
    for k, isin in enumerate(isins):
        closes = [10 + 0.01 * d + k for d in range(n_days)]  # strictly rising
        prices.extend(
            PriceBar(isin, start + timedelta(days=d), Decimal(f"{closes[d]:.4f}"))
            for d in range(n_days)
        )
    profiles = tuple(
        CustomerProfile(f"U{u}", CustomerType.MASS, RiskLevel.MODERATE, Decimal(1))
        for u in range(2)
    )
    transactions = []
    for u in range(2):
        for tick in TRAIN_SCHEDULE.ticks():
            transactions.append(
                Transaction(f"U{u}", isins[u], TxType.BUY, Decimal(5), tick + timedelta(days=3))
            )
    ds = Dataset(
        tuple(transactions),
        tuple(sorted(prices, key=lambda b: (b.isin, b.date))),
        assets,
        profiles,
    )
    corpus = build_training_corpus(ds, {"U0": 0, "U1": 1}, seed=3)
    for client_id, examples in corpus.items():
        true_n, false_n = corpus_label_counts(examples)
        assert true_n == false_n
        assert true_n == len(TRAIN_SCHEDULE.ticks())
