"""Outcome labeling and binary-feedback training data construction.

An asset is desirable for a (customer, date) instance when the customer
bought it within the following 180 days and it returned more than zero over
that window.  Each prompt yields up to two examples: one completion listing
desirable assets (label true) and one listing sampled non-desirable assets
(label false).
"""

from __future__ import annotations

import json
import logging
import random
from bisect import bisect_left, bisect_right
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable, Mapping

from . import kg
from .dataset import Dataset, PriceBar, TxType
from .errors import EmptyUniverse, NoPriceData, WindowUncovered
from .prompts import (
    Ablation,
    ChatMessage,
    PromptInstance,
    Role,
    build_messages,
    parse_response,
    render_completion,
)
from .seeding import derive_seed
from .timeline import OUTCOME_HORIZON_DAYS, TRAIN_SCHEDULE, Schedule, require_price_coverage

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OutcomeSets:
    """Purchased/profitable/desirable asset sets for one (customer, date).

    `returns` keeps the per-asset horizon return for every asset that had
    price data; it is auxiliary (used for ordering), not part of the label
    definition.
    """

    purchased: frozenset[str]
    profitable: frozenset[str]
    desirable: frozenset[str]
    returns: Mapping[str, float] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.desirable != self.purchased & self.profitable:
            raise ValueError("desirable must equal purchased ∩ profitable")


@dataclass(frozen=True)
class KtoExample:
    messages: tuple[ChatMessage, ...]
    completion: str
    label: bool


def asset_return(
    prices: Iterable[PriceBar],
    isin: str,
    day: date,
    horizon_days: int = OUTCOME_HORIZON_DAYS,
) -> float:
    """Fractional return from the first close on/after `day` to the last
    close on/before `day + horizon_days`."""
    bars = sorted((b for b in prices if b.isin == isin), key=lambda b: b.date)
    return _return_from_sorted(bars, day, horizon_days, isin)


def _return_from_sorted(bars, day: date, horizon_days: int, isin: str) -> float:
    end_day = day + timedelta(days=horizon_days)
    dates = [b.date for b in bars]
    lo = bisect_left(dates, day)
    hi = bisect_right(dates, end_day)
    if lo >= hi:
        raise NoPriceData(f"{isin}: no bars in {day.isoformat()}..{end_day.isoformat()}")
    p_start = bars[lo].close
    p_end = bars[hi - 1].close
    return float((p_end - p_start) / p_start)


class OutcomeEngine:
    """Memoizes per-date asset returns so many customers share one scan."""

    def __init__(self, dataset: Dataset, horizon_days: int = OUTCOME_HORIZON_DAYS):
        self.dataset = dataset
        self.horizon_days = horizon_days
        self._returns_memo: dict[date, dict[str, float]] = {}

    def returns_at(self, day: date) -> dict[str, float]:
        memo = self._returns_memo.get(day)
        if memo is not None:
            return memo
        span = self.dataset.price_date_range
        end_day = day + timedelta(days=self.horizon_days)
        if span is None or span[0] > day or span[1] < end_day:
            raise NoPriceData(
                f"price history does not cover {day.isoformat()}..{end_day.isoformat()}"
            )
        returns: dict[str, float] = {}
        missing = 0
        for isin in sorted(self.dataset.asset_isins):
            bars = self.dataset.prices_by_isin.get(isin, ())
            try:
                returns[isin] = _return_from_sorted(bars, day, self.horizon_days, isin)
            except NoPriceData:
                missing += 1
        if missing:
            logger.warning(
                "%d assets lack price data in the %d-day window from %s; excluded from profitable",
                missing,
                self.horizon_days,
                day.isoformat(),
            )
        self._returns_memo[day] = returns
        return returns

    def outcomes(self, customer_id: str, day: date) -> OutcomeSets:
        returns = self.returns_at(day)
        end_day = day + timedelta(days=self.horizon_days)
        purchased = frozenset(
            tx.isin
            for tx in self.dataset.transactions_by_customer.get(customer_id, ())
            if tx.tx_type is TxType.BUY and day < tx.timestamp <= end_day
        )
        profitable = frozenset(isin for isin, r in returns.items() if r > 0)
        return OutcomeSets(
            purchased=purchased,
            profitable=profitable,
            desirable=purchased & profitable,
            returns=returns,
        )


def compute_outcomes(
    dataset: Dataset,
    customer_id: str,
    day: date,
    horizon_days: int = OUTCOME_HORIZON_DAYS,
) -> OutcomeSets:
    return OutcomeEngine(dataset, horizon_days).outcomes(customer_id, day)


def build_kto_pair(
    instance: PromptInstance,
    outcomes: OutcomeSets,
    universe: frozenset[str] | set[str],
    max_assets: int = 20,
    seed: int = 0,
) -> list[KtoExample]:
    """Up to two labeled examples for one prompt instance.

    The label-true completion lists the desirable assets by descending
    horizon return; the label-false completion samples from the rest of the
    universe (assets with known returns first, so labels stay well defined).
    """
    if not universe:
        raise EmptyUniverse("cannot sample undesirable assets from an empty universe")
    if not outcomes.desirable <= set(universe):
        raise ValueError("universe must contain every desirable asset")

    examples: list[KtoExample] = []
    if outcomes.desirable:
        ranked = sorted(outcomes.desirable, key=lambda i: (-outcomes.returns.get(i, 0.0), i))
        examples.append(
            KtoExample(
                messages=instance.messages,
                completion=render_completion(ranked[:max_assets]),
                label=True,
            )
        )

    pool = set(universe) - outcomes.desirable
    k = min(max_assets, len(pool))
    if k:
        rng = random.Random(seed)
        covered = sorted(i for i in pool if i in outcomes.returns)
        uncovered = sorted(pool.difference(covered))
        if len(covered) >= k:
            picks = rng.sample(covered, k)
        else:
            picks = covered + rng.sample(uncovered, k - len(covered))
        examples.append(
            KtoExample(
                messages=instance.messages,
                completion=render_completion(picks),
                label=False,
            )
        )
    return examples


def build_prompt_instance(
    dataset: Dataset,
    customer_id: str,
    cutoff: date,
    ablation: Ablation = Ablation.COMBINED,
    cap: int = kg.TRIPLE_CAP,
    summary_cache: dict | None = None,
    market_value: dict | None = None,
) -> PromptInstance:
    """Build the capped PKG/MKG pair for one customer/date and wrap it in
    the chat message scaffold."""
    pkg = kg.build_pkg(dataset, customer_id, cutoff)
    asset_set = kg.select_assets_for_prompt(
        dataset, customer_id, cutoff, cap, summary_cache=summary_cache, market_value=market_value
    )
    mkg = kg.build_mkg(dataset, cutoff, asset_set, summary_cache=summary_cache)
    pkg, mkg = kg.cap_triples(pkg, mkg, cap)
    pkg_doc = kg.to_jsonld(pkg) if ablation.wants_pkg else None
    mkg_doc = kg.to_jsonld(mkg) if ablation.wants_mkg else None
    return PromptInstance(
        customer_id=customer_id,
        recommendation_date=cutoff,
        ablation=ablation,
        messages=build_messages(pkg_doc, mkg_doc, cutoff, ablation),
    )


def build_training_corpus(
    dataset: Dataset,
    assignment: Mapping[str, int],
    seed: int,
    schedule: Schedule = TRAIN_SCHEDULE,
    horizon_days: int = OUTCOME_HORIZON_DAYS,
    ablation: Ablation = Ablation.COMBINED,
    cap: int = kg.TRIPLE_CAP,
) -> dict[int, list[KtoExample]]:
    """One prompt per (assigned customer, schedule tick), paired per
    build_kto_pair, grouped by client.

    Deterministic: clients, customers and ticks are iterated in sorted
    order and all sampling seeds derive from (seed, customer, tick).
    """
    ticks = schedule.ticks()
    if not ticks:
        raise WindowUncovered("empty training schedule")
    require_price_coverage(
        dataset, ticks[0], ticks[-1] + timedelta(days=horizon_days), "training corpus"
    )

    by_client: dict[int, list[str]] = {}
    for customer_id, client_id in assignment.items():
        by_client.setdefault(client_id, []).append(customer_id)

    engine = OutcomeEngine(dataset, horizon_days)
    summary_cache = kg.full_summaries(dataset)
    market_value_by_tick = {t: kg.traded_value_before(dataset, t) for t in ticks}
    universe = dataset.asset_isins

    corpus: dict[int, list[KtoExample]] = {}
    for client_id in sorted(by_client):
        examples: list[KtoExample] = []
        for customer_id in sorted(by_client[client_id]):
            for tick in ticks:
                instance = build_prompt_instance(
                    dataset,
                    customer_id,
                    tick,
                    ablation,
                    cap,
                    summary_cache=summary_cache,
                    market_value=market_value_by_tick[tick],
                )
                outcomes = engine.outcomes(customer_id, tick)
                examples.extend(
                    build_kto_pair(
                        instance,
                        outcomes,
                        universe,
                        seed=derive_seed(seed, customer_id, tick.toordinal()),
                    )
                )
        corpus[client_id] = examples
    return corpus


# -- corpus files (trainer wire format) -------------------------------------------


def example_to_dict(example: KtoExample) -> dict:
    return {
        "messages": [{"role": m.role.value, "content": m.content} for m in example.messages],
        "completion": example.completion,
        "label": example.label,
    }


def example_from_dict(data: dict) -> KtoExample:
    return KtoExample(
        messages=tuple(ChatMessage(Role(m["role"]), m["content"]) for m in data["messages"]),
        completion=data["completion"],
        label=bool(data["label"]),
    )


def write_corpus_file(examples: Iterable[KtoExample], path: str | Path) -> int:
    """Write one JSON record per line; returns the number of records."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for example in examples:
            fh.write(json.dumps(example_to_dict(example), ensure_ascii=False) + "\n")
            n += 1
    return n


def read_corpus_file(path: str | Path) -> list[KtoExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(example_from_dict(json.loads(line)))
    return out


def corpus_label_counts(examples: Iterable[KtoExample]) -> tuple[int, int]:
    true_n = false_n = 0
    for example in examples:
        if example.label:
            true_n += 1
        else:
            false_n += 1
    return true_n, false_n


def completion_isins(example: KtoExample) -> tuple[str, ...]:
    return parse_response(example.completion).isins
