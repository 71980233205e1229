"""Shared deterministic fixture builders."""

from __future__ import annotations

import random
from datetime import date, timedelta
from decimal import Decimal

import pytest

from tradeloop.bars import Bar, BarSeries, Resolution


def q2(x: float) -> Decimal:
    return Decimal(f"{x:.2f}")


def next_weekday(d: date) -> date:
    while d.weekday() >= 5:
        d += timedelta(days=1)
    return d


def make_bar(
    session: date,
    o: float | str,
    h: float | str,
    l: float | str,
    c: float | str,
    v: int = 1000,
    vwap: float | str | None = None,
    tx: int | None = None,
) -> Bar:
    return Bar(
        session_date=session,
        open=Decimal(str(o)),
        high=Decimal(str(h)),
        low=Decimal(str(l)),
        close=Decimal(str(c)),
        volume=v,
        vwap=None if vwap is None else Decimal(str(vwap)),
        transactions=tx,
    )


def series_from_closes(
    closes: list[float], start: date = date(2024, 1, 2), symbol: str = "SYNTH"
) -> BarSeries:
    """Flat-range bars whose OHLC all equal the given closes."""
    bars = []
    d = next_weekday(start)
    for c in closes:
        bars.append(make_bar(d, c, c, c, c, v=1000))
        d = next_weekday(d + timedelta(days=1))
    return BarSeries(symbol=symbol, resolution=Resolution.DAILY, bars=tuple(bars))


def synthetic_daily(
    n: int,
    seed: int = 7,
    start: date = date(2024, 1, 2),
    start_price: float = 100.0,
    symbol: str = "SYNTH",
    max_move: float = 0.04,
) -> BarSeries:
    """Deterministic random-walk daily bars on weekdays, valid by construction."""
    rng = random.Random(seed)
    bars = []
    d = next_weekday(start)
    price = start_price
    for _ in range(n):
        o = q2(price * (1 + rng.uniform(-0.01, 0.01)))
        c = q2(float(o) * (1 + rng.uniform(-max_move, max_move)))
        hi = max(o, c) + q2(float(max(o, c)) * rng.uniform(0, 0.01))
        lo = min(o, c) - q2(float(min(o, c)) * rng.uniform(0, 0.008))
        if lo <= 0:
            lo = Decimal("0.01")
        vwap = (hi + lo) / 2
        bars.append(
            Bar(
                session_date=d,
                open=o,
                high=hi,
                low=lo,
                close=c,
                volume=rng.randint(1_000, 100_000),
                vwap=vwap,
                transactions=rng.randint(10, 500),
            )
        )
        price = float(c)
        d = next_weekday(d + timedelta(days=1))
    return BarSeries(symbol=symbol, resolution=Resolution.DAILY, bars=tuple(bars))


@pytest.fixture
def random_series() -> BarSeries:
    return synthetic_daily(120, seed=11)


@pytest.fixture
def long_series() -> BarSeries:
    return synthetic_daily(1000, seed=3)
