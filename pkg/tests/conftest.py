from datetime import date, timedelta
from decimal import Decimal

import pytest

from fedkgrec import alignment
from fedkgrec.dataset import (
    Asset,
    CustomerProfile,
    CustomerType,
    Dataset,
    PriceBar,
    RiskLevel,
    Transaction,
    TxType,
    generate_synthetic,
)
from fedkgrec.prompts import ChatMessage, Role

FULL_RANGE = (date(2018, 1, 2), date(2022, 11, 29))

FIG2_CUSTOMER = "00017496858921195E5A"
FIG2_ISIN = "GRS434003000"
FIG3_ISIN = "GRS495003006"


@pytest.fixture(scope="session")
def synth_small():
    """12 users / 8 assets over the full experiment calendar."""
    return generate_synthetic(7, 12, 8, FULL_RANGE)


@pytest.fixture(scope="session")
def synth_medium():
    return generate_synthetic(11, 20, 12, FULL_RANGE)


def make_fig_dataset() -> Dataset:
    """Tiny dataset reproducing the published example transaction and the
    example ten-week price summary."""
    assets = (
        Asset(FIG2_ISIN, "Stock", "Financials", "Banks"),
        Asset(FIG3_ISIN, "Stock", "Industrials", "Airlines"),
    )
    profiles = (
        CustomerProfile(FIG2_CUSTOMER, CustomerType.MASS, RiskLevel.MODERATE, Decimal("30000")),
    )
    transactions = (
        Transaction(FIG2_CUSTOMER, FIG2_ISIN, TxType.SELL, Decimal("11000"), date(2020, 3, 27)),
    )
    # ten closes whose mean is exactly 9.1679792, max 9.5, min/last 8.54,
    # spread across one 70-day window ending 2018-05-27
    closes = ["9.5", "9.2", "9.3", "9.1", "9.25", "9.35", "9.15", "9.4", "8.889792", "8.54"]
    start = date(2018, 3, 19)
    offsets = [0, 7, 14, 21, 28, 35, 42, 49, 56, 69]
    prices = tuple(
        PriceBar(FIG3_ISIN, start + timedelta(days=off), Decimal(c))
        for off, c in zip(offsets, closes)
    )
    return Dataset(transactions, prices, assets, profiles)


@pytest.fixture(scope="session")
def fig_dataset():
    return make_fig_dataset()


def toy_corpus_examples(n: int, flip: int = 0) -> list[alignment.KtoExample]:
    """Short alternating-label examples for trainer/federation tests."""
    messages = (ChatMessage(Role.SYSTEM, "s"), ChatMessage(Role.USER, "u"))
    return [
        alignment.KtoExample(messages, f"- SYN{i:09d}", bool((i + flip) % 2))
        for i in range(n)
    ]


@pytest.fixture()
def toy_corpus_dir(tmp_path):
    """Factory: write per-client toy corpora and return {client: path}."""

    def build(n_clients: int = 20, examples_per_client: int = 12):
        paths = {}
        for c in range(n_clients):
            path = tmp_path / f"client_{c:02d}.jsonl"
            alignment.write_corpus_file(toy_corpus_examples(examples_per_client, flip=c), path)
            paths[c] = path
        return paths

    return build
