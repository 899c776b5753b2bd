"""Ingestion, validation and synthesis of transaction/price/asset/profile data.

File shape mirrors the FAR-Trans CSV exports: four files with fixed headers,
ISO-8601 dates, and plain base-10 decimal strings.  Loading is strict: the
first row that violates an invariant aborts with a row-numbered diagnostic.
"""

from __future__ import annotations

import csv
import enum
import logging
from dataclasses import dataclass
from datetime import date, timedelta
from decimal import Decimal, InvalidOperation
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import DanglingReference, InvalidRange, MalformedRow, MissingFile

logger = logging.getLogger(__name__)

TRANSACTIONS_HEADER = ["customerID", "ISIN", "transactionType", "totalValue", "timestamp"]
PRICES_HEADER = ["ISIN", "timestamp", "closePrice"]
ASSETS_HEADER = ["ISIN", "assetCategory", "sector", "industry"]
PROFILES_HEADER = ["customerID", "customerType", "riskLevel", "investmentCapacity"]

# canonical file names used by the directory-level helpers and the CLI
FILE_NAMES = {
    "transactions": "transactions.csv",
    "prices": "prices.csv",
    "assets": "assets.csv",
    "profiles": "customers.csv",
}


class TxType(enum.Enum):
    BUY = "Buy"
    SELL = "Sell"


class CustomerType(enum.Enum):
    MASS = "Mass"
    PREMIUM = "Premium"
    LEGAL_ENTITY = "Legal Entity"
    PROFESSIONAL = "Professional"


class RiskLevel(enum.Enum):
    CONSERVATIVE = "Conservative"
    MODERATE = "Moderate"
    AGGRESSIVE = "Aggressive"


@dataclass(frozen=True)
class Transaction:
    customer_id: str
    isin: str
    tx_type: TxType
    value: Decimal
    timestamp: date


@dataclass(frozen=True)
class PriceBar:
    isin: str
    date: date
    close: Decimal


@dataclass(frozen=True)
class Asset:
    isin: str
    category: str
    sector: str
    industry: str


@dataclass(frozen=True)
class CustomerProfile:
    customer_id: str
    customer_type: CustomerType
    risk_level: RiskLevel
    investment_capacity: Decimal


@dataclass(frozen=True)
class Dataset:
    """Immutable, validated snapshot of the four input tables.

    Prices are sorted by (isin, date); transactions keep file order.
    """

    transactions: tuple[Transaction, ...]
    prices: tuple[PriceBar, ...]
    assets: tuple[Asset, ...]
    profiles: tuple[CustomerProfile, ...]

    @cached_property
    def asset_isins(self) -> frozenset[str]:
        return frozenset(a.isin for a in self.assets)

    @cached_property
    def customer_ids(self) -> frozenset[str]:
        return frozenset(p.customer_id for p in self.profiles)

    @cached_property
    def prices_by_isin(self) -> dict[str, tuple[PriceBar, ...]]:
        out: dict[str, list[PriceBar]] = {}
        for bar in self.prices:
            out.setdefault(bar.isin, []).append(bar)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def transactions_by_customer(self) -> dict[str, tuple[Transaction, ...]]:
        out: dict[str, list[Transaction]] = {}
        for tx in self.transactions:
            out.setdefault(tx.customer_id, []).append(tx)
        return {k: tuple(v) for k, v in out.items()}

    @cached_property
    def price_date_range(self) -> tuple[date, date] | None:
        if not self.prices:
            return None
        dates = [b.date for b in self.prices]
        return min(dates), max(dates)


# -- parsing helpers -----------------------------------------------------------


def parse_iso_date(text: str) -> date:
    """Parse YYYY-MM-DD, tolerating unpadded month/day (e.g. 2020-3-27)."""
    parts = text.strip().split("-")
    if len(parts) != 3:
        raise ValueError(f"not an ISO date: {text!r}")
    y, m, d = (int(p) for p in parts)
    return date(y, m, d)


def _parse_decimal(text: str) -> Decimal:
    try:
        value = Decimal(text.strip())
    except InvalidOperation as exc:
        raise ValueError(f"not a decimal: {text!r}") from exc
    if not value.is_finite():
        raise ValueError(f"not a finite decimal: {text!r}")
    return value


_CUSTOMER_TYPE_ALIASES = {"LegalEntity": CustomerType.LEGAL_ENTITY}


def _parse_enum(cls, text: str, aliases: dict | None = None):
    text = text.strip()
    if aliases and text in aliases:
        return aliases[text]
    for member in cls:
        if member.value == text:
            return member
    allowed = ", ".join(m.value for m in cls)
    raise ValueError(f"{text!r} not one of: {allowed}")


class _CsvTable:
    """Header-checked CSV reader yielding (line_number, row_dict)."""

    def __init__(self, path: str | Path, required: list[str]):
        self.path = Path(path)
        self.required = required
        if not self.path.exists():
            raise MissingFile(str(self.path))

    def rows(self):
        with open(self.path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise MalformedRow(1, f"{self.path.name}: empty file, expected header")
            missing = [c for c in self.required if c not in header]
            if missing:
                raise MalformedRow(1, f"{self.path.name}: missing columns {missing}")
            extra = [c for c in header if c not in self.required]
            if extra:
                logger.warning("%s: ignoring unknown columns %s", self.path.name, extra)
            idx = {c: header.index(c) for c in self.required}
            for lineno, raw in enumerate(reader, start=2):
                if not raw or all(not cell.strip() for cell in raw):
                    continue
                if len(raw) < len(header):
                    raise MalformedRow(lineno, f"{self.path.name}: expected {len(header)} fields, got {len(raw)}")
                yield lineno, {c: raw[i] for c, i in idx.items()}


def load_dataset(
    transactions_path: str | Path,
    prices_path: str | Path,
    assets_path: str | Path,
    profiles_path: str | Path,
) -> Dataset:
    """Load and validate the four CSV tables into a Dataset.

    Raises MissingFile, MalformedRow (first offending row) or
    DanglingReference (transaction pointing at an unknown asset/customer).
    """
    assets: list[Asset] = []
    seen_isins: set[str] = set()
    for lineno, row in _CsvTable(assets_path, ASSETS_HEADER).rows():
        isin = row["ISIN"].strip()
        if not isin:
            raise MalformedRow(lineno, "assets: empty ISIN")
        if isin in seen_isins:
            raise MalformedRow(lineno, f"assets: duplicate ISIN {isin!r}")
        seen_isins.add(isin)
        assets.append(Asset(isin, row["assetCategory"].strip(), row["sector"].strip(), row["industry"].strip()))

    profiles: list[CustomerProfile] = []
    seen_customers: set[str] = set()
    for lineno, row in _CsvTable(profiles_path, PROFILES_HEADER).rows():
        cid = row["customerID"].strip()
        if not cid:
            raise MalformedRow(lineno, "customers: empty customerID")
        if cid in seen_customers:
            raise MalformedRow(lineno, f"customers: duplicate customerID {cid!r}")
        seen_customers.add(cid)
        try:
            ctype = _parse_enum(CustomerType, row["customerType"], _CUSTOMER_TYPE_ALIASES)
            risk = _parse_enum(RiskLevel, row["riskLevel"])
            capacity = _parse_decimal(row["investmentCapacity"])
        except ValueError as exc:
            raise MalformedRow(lineno, f"customers: {exc}")
        if capacity < 0:
            raise MalformedRow(lineno, f"customers: negative investmentCapacity {capacity}")
        profiles.append(CustomerProfile(cid, ctype, risk, capacity))

    prices: list[PriceBar] = []
    seen_bars: set[tuple[str, date]] = set()
    for lineno, row in _CsvTable(prices_path, PRICES_HEADER).rows():
        isin = row["ISIN"].strip()
        if not isin:
            raise MalformedRow(lineno, "prices: empty ISIN")
        try:
            day = parse_iso_date(row["timestamp"])
            close = _parse_decimal(row["closePrice"])
        except ValueError as exc:
            raise MalformedRow(lineno, f"prices: {exc}")
        if close <= 0:
            raise MalformedRow(lineno, f"prices: non-positive closePrice {close}")
        key = (isin, day)
        if key in seen_bars:
            raise MalformedRow(lineno, f"prices: duplicate bar for {isin} on {day.isoformat()}")
        seen_bars.add(key)
        prices.append(PriceBar(isin, day, close))
    prices.sort(key=lambda b: (b.isin, b.date))

    transactions: list[Transaction] = []
    for lineno, row in _CsvTable(transactions_path, TRANSACTIONS_HEADER).rows():
        cid = row["customerID"].strip()
        isin = row["ISIN"].strip()
        if not isin:
            raise MalformedRow(lineno, "transactions: empty ISIN")
        try:
            tx_type = _parse_enum(TxType, row["transactionType"])
            value = _parse_decimal(row["totalValue"])
            day = parse_iso_date(row["timestamp"])
        except ValueError as exc:
            raise MalformedRow(lineno, f"transactions: {exc}")
        if value <= 0:
            raise MalformedRow(lineno, f"transactions: non-positive totalValue {value}")
        if isin not in seen_isins:
            raise DanglingReference("asset", isin)
        if cid not in seen_customers:
            raise DanglingReference("customer", cid)
        transactions.append(Transaction(cid, isin, tx_type, value, day))

    return Dataset(tuple(transactions), tuple(prices), tuple(assets), tuple(profiles))


def save_dataset(
    dataset: Dataset,
    transactions_path: str | Path,
    prices_path: str | Path,
    assets_path: str | Path,
    profiles_path: str | Path,
) -> None:
    """Emit the four CSVs in the exact format load_dataset consumes."""

    def _write(path, header, rows):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)

    _write(
        transactions_path,
        TRANSACTIONS_HEADER,
        (
            [t.customer_id, t.isin, t.tx_type.value, str(t.value), t.timestamp.isoformat()]
            for t in dataset.transactions
        ),
    )
    _write(
        prices_path,
        PRICES_HEADER,
        ([b.isin, b.date.isoformat(), str(b.close)] for b in dataset.prices),
    )
    _write(
        assets_path,
        ASSETS_HEADER,
        ([a.isin, a.category, a.sector, a.industry] for a in dataset.assets),
    )
    _write(
        profiles_path,
        PROFILES_HEADER,
        (
            [p.customer_id, p.customer_type.value, p.risk_level.value, str(p.investment_capacity)]
            for p in dataset.profiles
        ),
    )


def dataset_paths(directory: str | Path) -> tuple[Path, Path, Path, Path]:
    d = Path(directory)
    return (
        d / FILE_NAMES["transactions"],
        d / FILE_NAMES["prices"],
        d / FILE_NAMES["assets"],
        d / FILE_NAMES["profiles"],
    )


def load_dataset_dir(directory: str | Path) -> Dataset:
    return load_dataset(*dataset_paths(directory))


def save_dataset_dir(dataset: Dataset, directory: str | Path) -> None:
    save_dataset(dataset, *dataset_paths(directory))


# -- synthetic generation --------------------------------------------------------

_SECTORS = [
    ("Industrials", ["Airlines", "Machinery", "Logistics"]),
    ("Financials", ["Banks", "Insurance", "Asset Management"]),
    ("Technology", ["Software", "Semiconductors", "IT Services"]),
    ("Consumer", ["Retail", "Beverages", "Household Goods"]),
    ("Energy", ["Oil & Gas", "Renewables", "Utilities"]),
]
_CATEGORIES = ["Stock", "Bond", "ETF", "Mutual Fund"]
_CATEGORY_WEIGHTS = [0.65, 0.15, 0.12, 0.08]
_CUSTOMER_TYPE_WEIGHTS = [
    (CustomerType.MASS, 0.70),
    (CustomerType.PREMIUM, 0.15),
    (CustomerType.LEGAL_ENTITY, 0.10),
    (CustomerType.PROFESSIONAL, 0.05),
]
_RISK_WEIGHTS = [
    (RiskLevel.CONSERVATIVE, 0.40),
    (RiskLevel.MODERATE, 0.40),
    (RiskLevel.AGGRESSIVE, 0.20),
]


def _business_days(start: date, end: date) -> list[date]:
    days = []
    d = start
    one = timedelta(days=1)
    while d <= end:
        if d.weekday() < 5:
            days.append(d)
        d += one
    return days


def generate_synthetic(
    seed: int,
    n_users: int,
    n_assets: int,
    date_range: tuple[date, date],
    tx_per_user_year: float = 14.0,
) -> Dataset:
    """Produce a deterministic synthetic dataset.

    Daily closes follow a seeded geometric random walk on business days;
    transactions are sampled per user with a popularity-skewed asset choice so
    popularity baselines have signal.  Identical arguments yield identical
    datasets byte-for-byte after save_dataset.
    """
    start, end = date_range
    if start >= end:
        raise InvalidRange(f"empty date range: {start} .. {end}")
    if n_users < 1 or n_assets < 1:
        raise InvalidRange("n_users and n_assets must be >= 1")

    rng = np.random.default_rng(seed)
    days = _business_days(start, end)
    years = (end - start).days / 365.25

    assets = []
    for i in range(n_assets):
        isin = f"SYN{i:09d}"
        category = _CATEGORIES[rng.choice(len(_CATEGORIES), p=_CATEGORY_WEIGHTS)]
        sector, industries = _SECTORS[int(rng.integers(len(_SECTORS)))]
        industry = industries[int(rng.integers(len(industries)))]
        assets.append(Asset(isin, category, sector, industry))

    prices: list[PriceBar] = []
    cent = Decimal("0.0001")
    for asset in assets:
        p0 = 5.0 + 195.0 * rng.random()
        drift = rng.normal(0.0002, 0.0006)
        vol = rng.uniform(0.008, 0.03)
        steps = rng.normal(drift, vol, size=len(days))
        log_prices = np.log(p0) + np.cumsum(steps)
        for day, lp in zip(days, log_prices):
            close = Decimal(f"{np.exp(lp):.4f}")
            if close <= 0:
                close = cent
            prices.append(PriceBar(asset.isin, day, close))
    prices.sort(key=lambda b: (b.isin, b.date))

    profiles = []
    type_values, type_p = zip(*_CUSTOMER_TYPE_WEIGHTS)
    risk_values, risk_p = zip(*_RISK_WEIGHTS)
    for i in range(n_users):
        cid = f"CUST{i:06d}"
        ctype = type_values[rng.choice(len(type_values), p=type_p)]
        risk = risk_values[rng.choice(len(risk_values), p=risk_p)]
        capacity = Decimal(f"{float(rng.lognormal(np.log(50_000.0), 1.0)):.2f}")
        profiles.append(CustomerProfile(cid, ctype, risk, capacity))

    # global popularity skew: low asset index = popular
    pop_weights = 1.0 / (np.arange(n_assets) + 1.0)
    pop_weights /= pop_weights.sum()

    transactions: list[Transaction] = []
    for profile in profiles:
        lo, hi = min(3, n_assets), min(9, n_assets + 1)
        favored_n = int(rng.integers(lo, hi)) if hi > lo else lo
        favored = rng.choice(n_assets, size=favored_n, replace=False, p=pop_weights)
        n_tx = int(rng.poisson(tx_per_user_year * years))
        tx_days = sorted(int(rng.integers(len(days))) for _ in range(n_tx))
        for di in tx_days:
            if rng.random() < 0.7:
                asset_idx = int(favored[int(rng.integers(len(favored)))])
            else:
                asset_idx = int(rng.choice(n_assets, p=pop_weights))
            tx_type = TxType.BUY if rng.random() < 0.75 else TxType.SELL
            value = Decimal(f"{float(rng.lognormal(np.log(2_000.0), 0.8)):.2f}")
            if value <= 0:
                value = Decimal("0.01")
            transactions.append(
                Transaction(profile.customer_id, assets[asset_idx].isin, tx_type, value, days[di])
            )

    return Dataset(tuple(transactions), tuple(prices), tuple(assets), tuple(profiles))
