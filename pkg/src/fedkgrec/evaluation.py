"""Test-set construction, Hits@3 metrics, and the Random/Popularity baselines.

Pref@3, Prof@3 and Comb@3 are the per-instance "any of the top 3 in target"
indicators averaged over instances whose target set is non-empty, reported
with the standard error of a proportion.
"""

from __future__ import annotations

import logging
import math
import random
from bisect import bisect_left
from dataclasses import dataclass
from datetime import timedelta
from typing import Callable, Iterable, Mapping, Sequence

from . import kg
from .alignment import OutcomeEngine, OutcomeSets, build_prompt_instance
from .dataset import CustomerProfile, Dataset, TxType
from .errors import UniverseTooSmall, WindowUncovered
from .prompts import Ablation, PromptInstance, parse_response, render_completion
from .seeding import derive_seed
from .timeline import OUTCOME_HORIZON_DAYS, TEST_SCHEDULE, Schedule, require_price_coverage

logger = logging.getLogger(__name__)

METRIC_NAMES = ("Pref@3", "Prof@3", "Comb@3")
TOP_K = 3

# a recommender maps a test instance to raw response text
Recommender = Callable[["TestInstance"], str]


@dataclass(frozen=True)
class TestInstance:
    __test__ = False  # not a pytest class, despite the name

    prompt: PromptInstance
    outcomes: OutcomeSets

    @property
    def instance_id(self) -> str:
        return self.prompt.instance_id


@dataclass(frozen=True)
class MetricResult:
    name: str
    mean: float
    stderr: float
    n: int
    n_excluded: int = 0

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "mean": self.mean,
            "stderr": self.stderr,
            "n": self.n,
            "n_excluded": self.n_excluded,
        }


def build_test_set(
    dataset: Dataset,
    customer_filter: Callable[[CustomerProfile], bool] | None = None,
    schedule: Schedule = TEST_SCHEDULE,
    horizon_days: int = OUTCOME_HORIZON_DAYS,
    ablation: Ablation = Ablation.COMBINED,
    cap: int = kg.TRIPLE_CAP,
) -> list[TestInstance]:
    """One instance per (eligible customer, tick): a prompt built strictly
    from pre-tick data and outcome sets from the following horizon."""
    ticks = schedule.ticks()
    if not ticks:
        raise WindowUncovered("empty test schedule")
    require_price_coverage(
        dataset, ticks[0], ticks[-1] + timedelta(days=horizon_days), "test set"
    )

    engine = OutcomeEngine(dataset, horizon_days)
    summary_cache = kg.full_summaries(dataset)
    market_value_by_tick = {t: kg.traded_value_before(dataset, t) for t in ticks}

    customers = [p for p in dataset.profiles if customer_filter is None or customer_filter(p)]
    instances: list[TestInstance] = []
    skipped = 0
    for profile in sorted(customers, key=lambda p: p.customer_id):
        for tick in ticks:
            outcomes = engine.outcomes(profile.customer_id, tick)
            if not outcomes.returns:
                skipped += 1
                continue
            prompt = build_prompt_instance(
                dataset,
                profile.customer_id,
                tick,
                ablation,
                cap,
                summary_cache=summary_cache,
                market_value=market_value_by_tick[tick],
            )
            instances.append(TestInstance(prompt=prompt, outcomes=outcomes))
    if skipped:
        logger.warning("excluded %d instances with no post-tick price coverage", skipped)
    return instances


def hits_at_k(recommended: Sequence[str], target: Iterable[str], k: int = TOP_K) -> int:
    target = set(target)
    return 1 if any(isin in target for isin in list(recommended)[:k]) else 0


def proportion_stderr(mean: float, n: int) -> float:
    return math.sqrt(mean * (1.0 - mean) / n) if n else 0.0


def score_instance(response_text: str, outcomes: OutcomeSets, k: int = TOP_K) -> dict[str, int | None]:
    """Per-metric hit indicator; None marks an instance excluded because its
    target set is empty."""
    recommended = parse_response(response_text).isins
    targets = {
        "Pref@3": outcomes.purchased,
        "Prof@3": outcomes.profitable,
        "Comb@3": outcomes.desirable,
    }
    return {
        name: (hits_at_k(recommended, target, k) if target else None)
        for name, target in targets.items()
    }


def evaluate(recommender: Recommender, instances: Sequence[TestInstance]) -> list[MetricResult]:
    if not instances:
        raise ValueError("need at least one test instance")
    hits: dict[str, list[int]] = {name: [] for name in METRIC_NAMES}
    for instance in instances:
        scores = score_instance(recommender(instance), instance.outcomes)
        for name in METRIC_NAMES:
            if scores[name] is not None:
                hits[name].append(scores[name])
    results = []
    for name in METRIC_NAMES:
        n = len(hits[name])
        mean = sum(hits[name]) / n if n else 0.0
        results.append(
            MetricResult(
                name=name,
                mean=mean,
                stderr=proportion_stderr(mean, n),
                n=n,
                n_excluded=len(instances) - n,
            )
        )
    return results


# -- baselines ------------------------------------------------------------------


def baseline_random(universe: Iterable[str], seed: int = 0, k: int = TOP_K) -> Recommender:
    """Uniform sampling without replacement; the draw depends only on
    (seed, instance id), so evaluation order cannot change the output."""
    pool = sorted(universe)
    if len(pool) < k:
        raise UniverseTooSmall(f"universe has {len(pool)} assets, need {k}")

    def recommend(instance: TestInstance) -> str:
        rng = random.Random(derive_seed(seed, instance.instance_id))
        return render_completion(rng.sample(pool, k))

    return recommend


def baseline_popularity(dataset: Dataset, cutoff_per_instance: bool = True, k: int = TOP_K) -> Recommender:
    """Most-bought assets (strictly before the instance date when
    cutoff_per_instance), ties broken by ISIN."""
    buys = sorted(
        (tx.timestamp, tx.isin) for tx in dataset.transactions if tx.tx_type is TxType.BUY
    )
    buy_dates = [d for d, _ in buys]
    all_isins = sorted(dataset.asset_isins)

    def top_k(cutoff) -> list[str]:
        counts: dict[str, int] = {}
        upto = bisect_left(buy_dates, cutoff) if cutoff is not None else len(buys)
        for _, isin in buys[:upto]:
            counts[isin] = counts.get(isin, 0) + 1
        ranked = sorted(all_isins, key=lambda i: (-counts.get(i, 0), i))
        return ranked[:k]

    static = None if cutoff_per_instance else top_k(None)

    def recommend(instance: TestInstance) -> str:
        picks = static if static is not None else top_k(instance.prompt.recommendation_date)
        return render_completion(picks)

    return recommend


def oracle_recommender(k: int = TOP_K) -> Recommender:
    """Recommends the instance's own desirable assets (testing aid)."""

    def recommend(instance: TestInstance) -> str:
        desirable = instance.outcomes.desirable
        if not desirable:
            return "No recommendation available."
        ranked = sorted(desirable, key=lambda i: (-instance.outcomes.returns.get(i, 0.0), i))
        return render_completion(ranked[:k])

    return recommend


def recommender_from_responses(responses: Mapping[str, str]) -> Recommender:
    """Look responses up by instance id; missing ids score zero."""

    def recommend(instance: TestInstance) -> str:
        return responses.get(instance.instance_id, "")

    return recommend


def expected_random_hit_rate(universe_size: int, target_size: int, k: int = TOP_K) -> float:
    """Closed-form hit probability for uniform sampling without replacement."""
    if target_size <= 0:
        return 0.0
    if universe_size - target_size < k:
        return 1.0
    return 1.0 - math.comb(universe_size - target_size, k) / math.comb(universe_size, k)
