"""Personal and market knowledge graphs as subject-predicate-object triples.

A PKG holds one 5-triple entity per pre-cutoff transaction of a customer; an
MKG holds per-asset metadata plus 6-triple ten-week price summaries.  Both
serialize to byte-deterministic JSON-LD and are jointly capped at 5,000
triples by whole-entity pruning.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from datetime import date, timedelta
from decimal import Context, Decimal, localcontext
from typing import Iterable, Literal

from .dataset import Dataset, PriceBar, TxType
from .errors import UnknownCustomer

VOCAB = [
    "type",
    "transactionValue",
    "transactionTimestamp",
    "involvesSecurity",
    "hasParticipant",
    "priceOf",
    "periodEndPrice",
    "periodAveragePrice",
    "periodHighPrice",
    "periodLowPrice",
    "periodEndDate",
    "identifier",
    "category",
    "sector",
    "industry",
]
_VOCAB_ORDER = {term: i for i, term in enumerate(VOCAB)}

VOCAB_BASE_IRI = "https://example.org/fin-kg/vocab#"
JSONLD_CONTEXT = {term: VOCAB_BASE_IRI + term for term in VOCAB}

WINDOW_DAYS = 70
TRIPLE_CAP = 5000
TRIPLES_PER_TRANSACTION = 5
TRIPLES_PER_ASSET = 4
TRIPLES_PER_SUMMARY = 6

# division precision for period averages; printed without further rounding
_DECIMAL_CTX = Context(prec=28)

GraphKind = Literal["PKG", "MKG"]


@dataclass(frozen=True, order=True)
class Triple:
    subject: str
    predicate: str
    obj: str

    def __post_init__(self):
        if self.predicate not in _VOCAB_ORDER:
            raise ValueError(f"predicate {self.predicate!r} not in vocabulary")


@dataclass(frozen=True)
class KnowledgeGraph:
    kind: GraphKind
    triples: tuple[Triple, ...]

    def __len__(self) -> int:
        return len(self.triples)


@dataclass(frozen=True)
class TenWeekSummary:
    isin: str
    period_end_date: date
    high: Decimal
    low: Decimal
    avg: Decimal
    end: Decimal

    def __post_init__(self):
        if not (self.low <= self.avg <= self.high and self.low <= self.end <= self.high):
            raise ValueError(f"inconsistent summary for {self.isin}: {self}")


# -- builders -----------------------------------------------------------------


def build_pkg(dataset: Dataset, customer_id: str, cutoff: date) -> KnowledgeGraph:
    """Five triples per transaction of the customer strictly before cutoff.

    Transactions are ordered chronologically (ties keep dataset order) and
    numbered Transaction_1.. in that order.
    """
    if customer_id not in dataset.customer_ids:
        raise UnknownCustomer(customer_id)
    rows = dataset.transactions_by_customer.get(customer_id, ())
    qualifying = sorted(
        (tx for tx in rows if tx.timestamp < cutoff),
        key=lambda tx: tx.timestamp,
    )
    triples: list[Triple] = []
    for n, tx in enumerate(qualifying, start=1):
        node = f"Transaction_{n}"
        kind = "BuyTransaction" if tx.tx_type is TxType.BUY else "SellTransaction"
        triples += [
            Triple(node, "type", kind),
            Triple(node, "transactionValue", str(tx.value)),
            Triple(node, "transactionTimestamp", tx.timestamp.isoformat()),
            Triple(node, "involvesSecurity", tx.isin),
            Triple(node, "hasParticipant", tx.customer_id),
        ]
    return KnowledgeGraph("PKG", tuple(triples))


def summarize_prices(bars: Iterable[PriceBar], cutoff: date) -> list[TenWeekSummary]:
    """Aggregate closes into consecutive 70-day windows before the cutoff.

    Windows are anchored at the first bar's date; a window is emitted only if
    it contains at least one bar, the data reaches its calendar end (trailing
    partial windows are dropped), and its end date precedes the cutoff.
    """
    bars = list(bars)
    if not bars:
        return []
    isins = {b.isin for b in bars}
    if len(isins) != 1:
        raise ValueError(f"summarize_prices expects a single isin, got {sorted(isins)}")
    if any(b2.date < b1.date for b1, b2 in zip(bars, bars[1:])):
        raise ValueError("bars must be sorted by date")

    isin = bars[0].isin
    anchor = bars[0].date
    last_date = bars[-1].date
    summaries: list[TenWeekSummary] = []
    k = 0
    i = 0
    n = len(bars)
    while True:
        start = anchor + timedelta(days=WINDOW_DAYS * k)
        end = start + timedelta(days=WINDOW_DAYS - 1)
        if end > last_date or end >= cutoff:
            break
        closes: list[Decimal] = []
        while i < n and bars[i].date <= end:
            closes.append(bars[i].close)
            i += 1
        if closes:
            with localcontext(_DECIMAL_CTX):
                avg = sum(closes, Decimal(0)) / len(closes)
            summaries.append(
                TenWeekSummary(
                    isin=isin,
                    period_end_date=end,
                    high=max(closes),
                    low=min(closes),
                    avg=avg,
                    end=closes[-1],
                )
            )
        k += 1
    return summaries


def full_summaries(dataset: Dataset) -> dict[str, list[TenWeekSummary]]:
    """Per-asset summaries with no cutoff, for reuse across many cutoffs.

    Windows are consecutive and their end dates increase, so filtering this
    list by period_end_date < cutoff equals recomputing at that cutoff.
    """
    return {
        isin: summarize_prices(bars, date.max)
        for isin, bars in dataset.prices_by_isin.items()
    }


def _summaries_at(
    dataset: Dataset,
    isin: str,
    cutoff: date,
    cache: dict[str, list[TenWeekSummary]] | None,
) -> list[TenWeekSummary]:
    if cache is None:
        return summarize_prices(dataset.prices_by_isin.get(isin, ()), cutoff)
    return [s for s in cache.get(isin, ()) if s.period_end_date < cutoff]


def build_mkg(
    dataset: Dataset,
    cutoff: date,
    asset_filter: set[str] | frozenset[str] | None = None,
    summary_cache: dict[str, list[TenWeekSummary]] | None = None,
) -> KnowledgeGraph:
    """Asset metadata plus completed ten-week summaries ending before cutoff.

    Assets keep their dataset order; summaries are numbered globally in
    (asset, window) order.
    """
    triples: list[Triple] = []
    asset_n = 0
    summary_n = 0
    for asset in dataset.assets:
        if asset_filter is not None and asset.isin not in asset_filter:
            continue
        asset_n += 1
        node = f"Asset_{asset_n}"
        triples += [
            Triple(node, "identifier", asset.isin),
            Triple(node, "category", asset.category),
            Triple(node, "sector", asset.sector),
            Triple(node, "industry", asset.industry),
        ]
        for summary in _summaries_at(dataset, asset.isin, cutoff, summary_cache):
            summary_n += 1
            snode = f"TenWeekPriceSummary_{summary_n}"
            triples += [
                Triple(snode, "priceOf", node),
                Triple(snode, "periodEndPrice", str(summary.end)),
                Triple(snode, "periodAveragePrice", str(summary.avg)),
                Triple(snode, "periodHighPrice", str(summary.high)),
                Triple(snode, "periodLowPrice", str(summary.low)),
                Triple(snode, "periodEndDate", summary.period_end_date.isoformat()),
            ]
    return KnowledgeGraph("MKG", tuple(triples))


def select_assets_for_prompt(
    dataset: Dataset,
    customer_id: str,
    cutoff: date,
    cap: int = TRIPLE_CAP,
    summary_cache: dict[str, list[TenWeekSummary]] | None = None,
    market_value: dict[str, Decimal] | None = None,
) -> frozenset[str]:
    """Pick the MKG asset set for one prompt under the joint triple budget.

    The customer's transacted assets come first (by their traded value), then
    the market-wide top assets by total traded value, greedily while each
    asset's projected triple cost still fits the budget left after the PKG.
    """
    pre = [tx for tx in dataset.transactions_by_customer.get(customer_id, ()) if tx.timestamp < cutoff]
    budget = cap - TRIPLES_PER_TRANSACTION * len(pre)

    own_value: dict[str, Decimal] = {}
    for tx in pre:
        own_value[tx.isin] = own_value.get(tx.isin, Decimal(0)) + tx.value
    if market_value is None:
        market_value = traded_value_before(dataset, cutoff)

    ranked = sorted(own_value, key=lambda i: (-own_value[i], i))
    ranked += sorted(
        (i for i in market_value if i not in own_value),
        key=lambda i: (-market_value[i], i),
    )
    ranked += sorted(i for i in dataset.asset_isins if i not in market_value and i not in own_value)

    chosen: list[str] = []
    for isin in ranked:
        n_summaries = len(_summaries_at(dataset, isin, cutoff, summary_cache))
        cost = TRIPLES_PER_ASSET + TRIPLES_PER_SUMMARY * n_summaries
        if cost > budget:
            break
        budget -= cost
        chosen.append(isin)
    return frozenset(chosen)


def traded_value_before(dataset: Dataset, cutoff: date) -> dict[str, Decimal]:
    """Total transaction value per asset, all customers, strictly before cutoff."""
    out: dict[str, Decimal] = {}
    for tx in dataset.transactions:
        if tx.timestamp < cutoff:
            out[tx.isin] = out.get(tx.isin, Decimal(0)) + tx.value
    return out


# -- joint triple cap -----------------------------------------------------------


def _group_by_subject(kg: KnowledgeGraph) -> list[tuple[str, list[Triple]]]:
    order: list[str] = []
    groups: dict[str, list[Triple]] = {}
    for t in kg.triples:
        if t.subject not in groups:
            groups[t.subject] = []
            order.append(t.subject)
        groups[t.subject].append(t)
    return [(s, groups[s]) for s in order]


def _object_of(triples: list[Triple], predicate: str) -> str | None:
    for t in triples:
        if t.predicate == predicate:
            return t.obj
    return None


def cap_triples(
    pkg: KnowledgeGraph,
    mkg: KnowledgeGraph,
    cap: int = TRIPLE_CAP,
) -> tuple[KnowledgeGraph, KnowledgeGraph]:
    """Prune whole entities until the pair holds at most `cap` triples.

    Removal order: PKG transactions oldest-first, then MKG summaries
    oldest-first, then MKG assets that have lost all summaries and are not
    referenced by a surviving PKG transaction (most recently added first).
    Surviving triples keep their ids and order, so the output is always a
    sub-multiset of the input.
    """
    total = len(pkg) + len(mkg)
    if total <= cap:
        return pkg, mkg

    pkg_groups = _group_by_subject(pkg)
    mkg_groups = _group_by_subject(mkg)

    removed_pkg: set[str] = set()
    tx_queue = sorted(
        range(len(pkg_groups)),
        key=lambda gi: (_object_of(pkg_groups[gi][1], "transactionTimestamp") or "9999-12-31", gi),
    )
    for gi in tx_queue:
        if total <= cap:
            break
        subject, triples = pkg_groups[gi]
        removed_pkg.add(subject)
        total -= len(triples)

    removed_mkg: set[str] = set()
    summary_idx = [gi for gi, (s, g) in enumerate(mkg_groups) if _object_of(g, "periodEndDate") is not None]
    summary_queue = sorted(
        summary_idx,
        key=lambda gi: (_object_of(mkg_groups[gi][1], "periodEndDate"), gi),
    )
    for gi in summary_queue:
        if total <= cap:
            break
        subject, triples = mkg_groups[gi]
        removed_mkg.add(subject)
        total -= len(triples)

    if total > cap:
        surviving_isins = {
            t.obj
            for s, g in pkg_groups
            if s not in removed_pkg
            for t in g
            if t.predicate == "involvesSecurity"
        }
        referenced_assets = {
            _object_of(g, "priceOf")
            for s, g in mkg_groups
            if s not in removed_mkg and _object_of(g, "periodEndDate") is not None
        }
        asset_idx = [gi for gi, (s, g) in enumerate(mkg_groups) if _object_of(g, "identifier") is not None]
        for gi in reversed(asset_idx):
            if total <= cap:
                break
            subject, triples = mkg_groups[gi]
            if subject in referenced_assets:
                continue
            if _object_of(triples, "identifier") in surviving_isins:
                continue
            removed_mkg.add(subject)
            total -= len(triples)

    pkg_out = tuple(t for t in pkg.triples if t.subject not in removed_pkg)
    mkg_out = tuple(t for t in mkg.triples if t.subject not in removed_mkg)
    return KnowledgeGraph(pkg.kind, pkg_out), KnowledgeGraph(mkg.kind, mkg_out)


# -- JSON-LD serialization --------------------------------------------------------


def to_jsonld(kg: KnowledgeGraph) -> str:
    """Serialize to a byte-deterministic JSON-LD document.

    Nodes appear in first-mention order; keys follow the fixed vocabulary
    order; repeated (subject, predicate) values become arrays in triple order.
    """
    nodes: list[dict] = []
    by_subject: dict[str, dict[str, list[str]]] = {}
    for t in kg.triples:
        if t.subject not in by_subject:
            by_subject[t.subject] = {}
            nodes.append({"@id": t.subject, "_props": by_subject[t.subject]})
        by_subject[t.subject].setdefault(t.predicate, []).append(t.obj)

    graph = []
    for node in nodes:
        obj: dict[str, object] = {"@id": node["@id"]}
        props: dict[str, list[str]] = node["_props"]
        for predicate in sorted(props, key=_VOCAB_ORDER.__getitem__):
            values = props[predicate]
            obj[predicate] = values[0] if len(values) == 1 else list(values)
        graph.append(obj)

    doc = {"@context": JSONLD_CONTEXT, "@graph": graph}
    return json.dumps(doc, indent=2, ensure_ascii=False) + "\n"


def parse_jsonld(text: str, kind: GraphKind = "PKG") -> KnowledgeGraph:
    """Inverse of to_jsonld; recovers the triple multiset."""
    doc = json.loads(text)
    triples: list[Triple] = []
    for node in doc.get("@graph", []):
        subject = node["@id"]
        for key, value in node.items():
            if key == "@id":
                continue
            values = value if isinstance(value, list) else [value]
            triples += [Triple(subject, key, v) for v in values]
    return KnowledgeGraph(kind, tuple(triples))
