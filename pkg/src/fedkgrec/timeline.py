"""Recommendation-date schedules and coverage checks.

Training prompts tick every 28 days from 2019-08-01 through 2021-06-01 (24
ticks); test prompts tick every 14 days from 2021-12-01 through 2022-06-02
(14 ticks).  Both leave a 180-day outcome buffer inside their data window.
"""

from __future__ import annotations

from dataclasses import dataclass
from datetime import date, timedelta

from .dataset import Dataset
from .errors import WindowUncovered

TRAIN_WINDOW = (date(2018, 1, 2), date(2021, 11, 30))
TRAIN_TICK_START = date(2019, 8, 1)
TRAIN_TICK_END = date(2021, 6, 1)
TRAIN_TICK_STEP_DAYS = 28

TEST_WINDOW = (date(2021, 12, 1), date(2022, 11, 29))
TEST_TICK_START = date(2021, 12, 1)
TEST_TICK_END = date(2022, 6, 2)
TEST_TICK_STEP_DAYS = 14

OUTCOME_HORIZON_DAYS = 180


@dataclass(frozen=True)
class Schedule:
    start: date
    end: date
    step_days: int

    def ticks(self) -> list[date]:
        """All dates start, start+step, ... that do not pass end."""
        if self.step_days < 1:
            raise ValueError("step_days must be >= 1")
        out = []
        t = self.start
        step = timedelta(days=self.step_days)
        while t <= self.end:
            out.append(t)
            t += step
        return out


TRAIN_SCHEDULE = Schedule(TRAIN_TICK_START, TRAIN_TICK_END, TRAIN_TICK_STEP_DAYS)
TEST_SCHEDULE = Schedule(TEST_TICK_START, TEST_TICK_END, TEST_TICK_STEP_DAYS)


def require_price_coverage(dataset: Dataset, start: date, end: date, label: str) -> None:
    """Raise WindowUncovered unless price history spans [start, end]."""
    span = dataset.price_date_range
    if span is None:
        raise WindowUncovered(f"{label}: dataset has no price history")
    lo, hi = span
    if lo > start or hi < end:
        raise WindowUncovered(
            f"{label}: need prices covering {start.isoformat()}..{end.isoformat()}, "
            f"have {lo.isoformat()}..{hi.isoformat()}"
        )
