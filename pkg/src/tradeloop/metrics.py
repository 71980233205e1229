"""Performance analytics over equity curves and trade logs.

Undefined metrics stay None (serialized as null, rendered "n/a"); they are
never coerced to 0 except win_rate, which reports 0 on an empty trip list.
Sample (n-1) standard deviation throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from datetime import date
from typing import Iterable, Sequence

from .engine import Action

TRADING_DAYS_PER_YEAR = 252


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class TradeFill:
    """One executed order, as metrics sees it.

    A window-end forced cover participates in round-trip matching but is not
    an executed order for trade counting.
    """

    executed_at: date
    action: Action
    quantity: int
    price: object  # Decimal or float; arithmetic stays in the caller's type
    forced: bool = False


@dataclass(frozen=True)
class RoundTrip:
    direction: str  # "long" | "short"
    opened_at: date
    closed_at: date
    quantity: int
    entry_cost: object
    exit_proceeds: object

    @property
    def realized_pnl(self):
        if self.direction == "long":
            return self.exit_proceeds - self.entry_cost
        return self.entry_cost - self.exit_proceeds


@dataclass(frozen=True)
class OpenLot:
    direction: str
    opened_at: date
    quantity: int
    price: object


@dataclass
class MetricReport:
    roi_pct: float | None = None
    sharpe_daily: float | None = None
    sharpe_annualized: float | None = None
    sortino: float | None = None
    max_drawdown_pct: float | None = None
    win_rate_pct: float | None = None
    num_trades: int | None = None
    roic_pct: float | None = None
    profit_per_trade: float | None = None

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "MetricReport":
        return cls(**{f.name: obj.get(f.name) for f in fields(cls)})


METRIC_FIELDS = tuple(f.name for f in fields(MetricReport))
# Tables-first column order: ROI, SR, DD, win rate, trades, then extended.
REPORT_COLUMNS = (
    "roi_pct",
    "sharpe_daily",
    "max_drawdown_pct",
    "win_rate_pct",
    "num_trades",
    "sharpe_annualized",
    "sortino",
    "roic_pct",
    "profit_per_trade",
)


def _mean(xs: Sequence[float]) -> float:
    return sum(xs) / len(xs)


def _sample_std(xs: Sequence[float]) -> float | None:
    n = len(xs)
    if n < 2:
        return None
    mu = _mean(xs)
    return math.sqrt(sum((x - mu) ** 2 for x in xs) / (n - 1))


def daily_returns(values: Sequence[float]) -> list[float]:
    return [values[i] / values[i - 1] - 1.0 for i in range(1, len(values))]


def roi(values: Sequence[float], initial: float | None = None) -> float:
    """(V_T - V_0) / V_0 * 100. `initial` overrides V_0 for runs whose first
    marked session already includes a fill (buy-and-hold at the first open)."""
    if len(values) < 2 and initial is None:
        raise MetricsError("need at least 2 points")
    v0 = float(values[0]) if initial is None else float(initial)
    if v0 <= 0:
        raise MetricsError("initial value must be positive")
    return (float(values[-1]) - v0) / v0 * 100.0


def sharpe(values: Sequence[float], risk_free: float = 0.0) -> tuple[float | None, float | None]:
    """(daily, annualized) Sharpe: mean excess daily return over its sample
    stdev; annualized = daily * sqrt(252). Zero variance -> (None, None)."""
    if len(values) < 3:
        return None, None
    rets = daily_returns([float(v) for v in values])
    sd = _sample_std(rets)
    if sd is None or sd == 0.0:
        return None, None
    daily = (_mean(rets) - risk_free) / sd
    return daily, daily * math.sqrt(TRADING_DAYS_PER_YEAR)


def sortino(values: Sequence[float], risk_free: float = 0.0) -> float | None:
    """Mean daily return over the sample stdev of negative returns only.

    Undefined when there are no negative returns or their dispersion is zero
    (e.g. a single negative return, or identical ones).
    """
    if len(values) < 3:
        return None
    rets = daily_returns([float(v) for v in values])
    downside = [r for r in rets if r < 0.0]
    if not downside:
        return None
    sd = _sample_std(downside)
    if sd is None or sd == 0.0:
        return None
    return (_mean(rets) - risk_free) / sd


def max_drawdown(values: Sequence[float]) -> float:
    """Worst peak-to-trough decline: max over t of (peak_t - V_t)/peak_t * 100."""
    if not values:
        raise MetricsError("need at least 1 point")
    peak = float(values[0])
    worst = 0.0
    for v in values:
        v = float(v)
        if v > peak:
            peak = v
        dd = (peak - v) / peak
        if dd > worst:
            worst = dd
    return worst * 100.0


def match_round_trips(trades: Iterable[TradeFill]) -> list[RoundTrip]:
    """FIFO lot matching per direction; each closing fill yields one trip.

    Residual open lots are excluded (query them with `residual_lots`).
    """
    trips, _ = _match(trades)
    return trips


def residual_lots(trades: Iterable[TradeFill]) -> list[OpenLot]:
    _, lots = _match(trades)
    return lots


def _match(trades: Iterable[TradeFill]) -> tuple[list[RoundTrip], list[OpenLot]]:
    long_lots: list[list] = []  # [opened_at, qty, price]
    short_lots: list[list] = []
    trips: list[RoundTrip] = []
    for t in trades:
        if t.action == Action.BUY:
            long_lots.append([t.executed_at, t.quantity, t.price])
        elif t.action == Action.SHORT:
            short_lots.append([t.executed_at, t.quantity, t.price])
        elif t.action == Action.SELL:
            trips.extend(_close(long_lots, t, "long"))
        else:  # SHORT_COVER
            trips.extend(_close(short_lots, t, "short"))
    lots = [OpenLot("long", d, q, p) for d, q, p in long_lots] + [
        OpenLot("short", d, q, p) for d, q, p in short_lots
    ]
    return trips, lots


def _close(lots: list[list], t: TradeFill, direction: str) -> list[RoundTrip]:
    remaining = t.quantity
    entry_cost = None
    opened_at = None
    matched = 0
    while remaining > 0 and lots:
        lot = lots[0]
        take = min(remaining, lot[1])
        cost = lot[2] * take
        entry_cost = cost if entry_cost is None else entry_cost + cost
        opened_at = lot[0] if opened_at is None else opened_at
        lot[1] -= take
        remaining -= take
        matched += take
        if lot[1] == 0:
            lots.pop(0)
    if matched == 0:
        raise MetricsError(f"closing fill with no open {direction} lots at {t.executed_at}")
    if remaining > 0:
        raise MetricsError(f"closing fill exceeds open {direction} position at {t.executed_at}")
    return [
        RoundTrip(
            direction=direction,
            opened_at=opened_at,
            closed_at=t.executed_at,
            quantity=matched,
            entry_cost=entry_cost,
            exit_proceeds=t.price * matched,
        )
    ]


def unrealized_pnl(lots: Iterable[OpenLot], close):
    """Mark residual lots to `close`; type follows the lot prices."""
    total = None
    for lot in lots:
        pnl = (close - lot.price) * lot.quantity
        if lot.direction == "short":
            pnl = -pnl
        total = pnl if total is None else total + pnl
    return 0 if total is None else total


def win_rate(trips: Sequence[RoundTrip]) -> float:
    """Winners / total * 100; an empty trip list reports 0."""
    if not trips:
        return 0.0
    winners = sum(1 for t in trips if t.realized_pnl > 0)
    return winners / len(trips) * 100.0


def profit_per_trade(trips: Sequence[RoundTrip]) -> float | None:
    if not trips:
        return None
    return float(sum(float(t.realized_pnl) for t in trips)) / len(trips)


def num_trades(trades: Iterable[TradeFill]) -> int:
    """Executed orders (orders with at least one fill); forced covers excluded."""
    return sum(1 for t in trades if not t.forced)


def roic(values: Sequence[float], exposures: Sequence[float]) -> float | None:
    """End-of-window P&L over mean gross exposure, deployed sessions only.

    exposures[t] = (long_t + short_t) * close_t per session; sessions with
    zero exposure are excluded from the denominator. Never deployed -> None.
    """
    if len(values) < 2:
        return None
    deployed = [e for e in exposures if e > 0]
    if not deployed:
        return None
    profit = float(values[-1]) - float(values[0])
    return profit / _mean([float(e) for e in deployed]) * 100.0


def compute_report(
    values: Sequence[float],
    trades: Sequence[TradeFill],
    exposures: Sequence[float] | None = None,
    initial: float | None = None,
) -> MetricReport:
    trips = match_round_trips(trades)
    sr_daily, sr_ann = sharpe(values)
    curve = [float(v) for v in values]
    v0 = float(initial) if initial is not None else None
    return MetricReport(
        roi_pct=roi(curve, initial=v0),
        sharpe_daily=sr_daily,
        sharpe_annualized=sr_ann,
        sortino=sortino(curve),
        max_drawdown_pct=max_drawdown(([v0] if v0 is not None else []) + curve),
        win_rate_pct=win_rate(trips),
        num_trades=num_trades(trades),
        roic_pct=roic(([v0] if v0 is not None else []) + curve, exposures or []),
        profit_per_trade=profit_per_trade(trips),
    )


@dataclass(frozen=True)
class AggregateField:
    mean: float
    std: float | None
    n: int


def aggregate_runs(reports: Sequence[MetricReport]) -> dict[str, AggregateField | None]:
    """Per-field mean and sample stdev across runs; None fields are excluded
    pairwise; a field undefined in every run aggregates to None."""
    if not reports:
        raise MetricsError("need at least 1 report")
    out: dict[str, AggregateField | None] = {}
    for name in METRIC_FIELDS:
        xs = [float(getattr(r, name)) for r in reports if getattr(r, name) is not None]
        if not xs:
            out[name] = None
            continue
        out[name] = AggregateField(mean=_mean(xs), std=_sample_std(xs), n=len(xs))
    return out


def format_cell(agg: AggregateField | None, decimals: int = 2) -> str:
    if agg is None:
        return "n/a"
    if agg.std is None:
        return f"{agg.mean:.{decimals}f}"
    return f"{agg.mean:.{decimals}f} ± {agg.std:.{decimals}f}"


def render_table(rows: dict[str, dict[str, AggregateField | None]]) -> str:
    """Aligned-text table, one row per configuration label."""
    headers = ["config"] + list(REPORT_COLUMNS)
    table = [headers]
    for label, aggs in rows.items():
        table.append([label] + [format_cell(aggs.get(c)) for c in REPORT_COLUMNS])
    widths = [max(len(r[i]) for r in table) for i in range(len(headers))]
    lines = []
    for r in table:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(r)))
    return "\n".join(lines) + "\n"


def render_csv(rows: dict[str, dict[str, AggregateField | None]]) -> str:
    lines = ["config," + ",".join(REPORT_COLUMNS)]
    for label, aggs in rows.items():
        cells = []
        for c in REPORT_COLUMNS:
            agg = aggs.get(c)
            if agg is None:
                cells.append("")
            elif agg.std is None:
                cells.append(f"{agg.mean:.6g}")
            else:
                cells.append(f"{agg.mean:.6g}±{agg.std:.6g}")
        lines.append(label + "," + ",".join(cells))
    return "\n".join(lines) + "\n"
