"""Non-LLM baseline strategies: buy & hold plus four crossover systems.

All baselines are long-only and either flat or fully invested. Crossovers are
evaluated on closes: a cross requires strict inequality on the current bar
and the opposite (or equal) relation on the prior bar, so equality runs never
double-trigger. Orders route through the execution engine; entries invest all
available cash at the execution bar's open (integer shares, remainder stays
in cash).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import date, timedelta
from decimal import Decimal
from enum import Enum

from .bars import BarSeries
from .engine import Action, AuditLog, ExecutionEngine, Order, OrderType, Rejection
from .indicators import bollinger_series, macd_series, sma_series
from .metrics import MetricReport, TradeFill, compute_report


class StrategyError(ValueError):
    pass


class Stance(str, Enum):
    ENTER_LONG = "enter_long"
    EXIT_LONG = "exit_long"
    HOLD = "hold"


class StrategyKind(str, Enum):
    BUY_HOLD = "buy_hold"
    SMA = "sma"
    SLMA = "slma"
    MACD = "macd"
    BOLLINGER = "bollinger"


@dataclass(frozen=True)
class Signal:
    date: date
    stance: Stance


@dataclass(frozen=True)
class StrategyConfig:
    kind: StrategyKind
    sma_n: int = 10
    slma_short: int = 10
    slma_long: int = 30
    macd_fast: int = 12
    macd_slow: int = 26
    macd_signal: int = 9
    bollinger_n: int = 20
    bollinger_k: float = 2.0

    def longest_window(self) -> int:
        if self.kind == StrategyKind.BUY_HOLD:
            return 1
        if self.kind == StrategyKind.SMA:
            return self.sma_n
        if self.kind == StrategyKind.SLMA:
            return max(self.slma_short, self.slma_long)
        if self.kind == StrategyKind.MACD:
            return self.macd_slow + self.macd_signal
        return self.bollinger_n


def _cross_signals(
    dates: list[date],
    fast: list[float | None],
    slow: list[float | None],
    invert_exit: bool = False,
) -> list[Signal]:
    """Enter when fast crosses above slow, exit when it crosses below.

    `invert_exit` swaps the roles for the exit leg (used by Bollinger where
    entry and exit compare against different bands).
    """
    signals: list[Signal] = []
    in_position = False
    for i in range(1, len(dates)):
        if None in (fast[i], slow[i], fast[i - 1], slow[i - 1]):
            continue
        crossed_up = fast[i - 1] <= slow[i - 1] and fast[i] > slow[i]
        crossed_down = fast[i - 1] >= slow[i - 1] and fast[i] < slow[i]
        if not in_position and crossed_up:
            signals.append(Signal(dates[i], Stance.ENTER_LONG))
            in_position = True
        elif in_position and crossed_down:
            signals.append(Signal(dates[i], Stance.EXIT_LONG))
            in_position = False
    return signals


def generate_signals(config: StrategyConfig, series: BarSeries) -> list[Signal]:
    """Causal stance changes for `config` over `series` (dated at detection)."""
    if len(series) < config.longest_window():
        raise StrategyError(
            f"{config.kind.value} needs at least {config.longest_window()} bars, got {len(series)}"
        )
    dates = series.dates()
    closes = series.closes()

    if config.kind == StrategyKind.BUY_HOLD:
        return [Signal(dates[0], Stance.ENTER_LONG)]

    if config.kind == StrategyKind.SMA:
        ind = [v.value if v.available else None for v in sma_series(series, config.sma_n)]
        return _cross_signals(dates, list(closes), ind)

    if config.kind == StrategyKind.SLMA:
        short = [v.value if v.available else None for v in sma_series(series, config.slma_short)]
        long_ = [v.value if v.available else None for v in sma_series(series, config.slma_long)]
        return _cross_signals(dates, short, long_)

    if config.kind == StrategyKind.MACD:
        vals = macd_series(series, config.macd_fast, config.macd_slow, config.macd_signal)
        macd_line = [v.value["macd"] if v.available else None for v in vals]
        signal_line = [v.value["signal"] if v.available else None for v in vals]
        return _cross_signals(dates, macd_line, signal_line)

    # Bollinger: enter on a close crossing below the lower band (oversold),
    # exit on a close crossing above the upper band (overbought).
    vals = bollinger_series(series, config.bollinger_n, config.bollinger_k)
    lower = [v.value["lower"] if v.available else None for v in vals]
    upper = [v.value["upper"] if v.available else None for v in vals]
    signals: list[Signal] = []
    in_position = False
    for i in range(1, len(dates)):
        if lower[i] is None or lower[i - 1] is None:
            continue
        below = closes[i - 1] >= lower[i - 1] and closes[i] < lower[i]
        above = closes[i - 1] <= upper[i - 1] and closes[i] > upper[i]
        if not in_position and below:
            signals.append(Signal(dates[i], Stance.ENTER_LONG))
            in_position = True
        elif in_position and above:
            signals.append(Signal(dates[i], Stance.EXIT_LONG))
            in_position = False
    return signals


@dataclass
class StrategyRunResult:
    config: StrategyConfig
    report: MetricReport
    curve_dates: list[date] = field(default_factory=list)
    curve_values: list[Decimal] = field(default_factory=list)
    trades: list[TradeFill] = field(default_factory=list)
    signals: list[Signal] = field(default_factory=list)
    audit: AuditLog | None = None


def run_strategy(
    config: StrategyConfig,
    series: BarSeries,
    initial_cash: Decimal | int = Decimal(100_000),
    audit: AuditLog | None = None,
) -> StrategyRunResult:
    """Drive `config`'s signals through the execution engine over `series`.

    Entries size as floor(cash / execution-bar open); buy & hold enters at the
    first bar's open (its decision needs no market data), every other signal
    detected at a close executes at the next session's open.
    """
    signals = generate_signals(config, series)
    sig_by_date = {s.date: s.stance for s in signals}
    audit = audit if audit is not None else AuditLog()
    engine = ExecutionEngine(initial_cash=Decimal(initial_cash), audit=audit)

    order_seq = 0

    def submit(action: Action, qty: int, submitted: date, ref_close: Decimal) -> None:
        nonlocal order_seq
        order_seq += 1
        order = Order(
            id=f"{config.kind.value}-{order_seq}",
            action=action,
            order_type=OrderType.MARKET,
            price=None,
            quantity=qty,
            explanation=f"{config.kind.value} {action.value.lower()} signal",
            submitted_at=submitted,
        )
        outcome = engine.validate_and_queue(order, last_close=ref_close)
        if isinstance(outcome, Rejection):
            raise StrategyError(f"order rejected: {outcome.reason.value} ({outcome.detail})")

    if config.kind == StrategyKind.BUY_HOLD:
        first = series.bars[0]
        qty = int(Decimal(initial_cash) / first.open)
        if qty >= 1:
            # Sized and validated against the first open it will fill at.
            submit(Action.BUY, qty, first.session_date - timedelta(days=1), first.open)

    curve_dates: list[date] = []
    curve_values: list[Decimal] = []
    trades: list[TradeFill] = []
    exposures: list[Decimal] = []

    for i, bar in enumerate(series.bars):
        result = engine.step_session(bar)
        curve_dates.append(bar.session_date)
        curve_values.append(result.portfolio_value)
        state = result.portfolio
        exposures.append((state.shares_long + state.shares_short) * bar.close)

        stance = sig_by_date.get(bar.session_date)
        if stance is None or config.kind == StrategyKind.BUY_HOLD:
            continue
        nxt = series.bars[i + 1] if i + 1 < len(series.bars) else None
        if nxt is None:
            continue
        state = engine.portfolio()
        if stance == Stance.ENTER_LONG and state.shares_long == 0:
            qty = int(state.cash / nxt.open)
            if qty >= 1:
                submit(Action.BUY, qty, bar.session_date, nxt.open)
        elif stance == Stance.EXIT_LONG and state.shares_long > 0:
            submit(Action.SELL, state.shares_long, bar.session_date, bar.close)

    trades = trades_from_audit(audit)
    report = compute_report(
        [float(v) for v in curve_values],
        trades,
        exposures=[float(e) for e in exposures],
        initial=float(initial_cash),
    )
    return StrategyRunResult(
        config=config,
        report=report,
        curve_dates=curve_dates,
        curve_values=curve_values,
        trades=trades,
        signals=signals,
        audit=audit,
    )


def trades_from_audit(audit: AuditLog) -> list[TradeFill]:
    """Reconstruct the metrics trade log from engine FILL/FORCED_COVER events."""
    import json as _json

    out: list[TradeFill] = []
    for line in audit.lines:
        obj = _json.loads(line)
        if obj["type"] == "FILL":
            out.append(
                TradeFill(
                    executed_at=date.fromisoformat(obj["date"]),
                    action=Action(obj["action"]),
                    quantity=obj["quantity"],
                    price=Decimal(obj["price"]),
                )
            )
        elif obj["type"] == "FORCED_COVER":
            out.append(
                TradeFill(
                    executed_at=date.fromisoformat(obj["date"]),
                    action=Action.SHORT_COVER,
                    quantity=obj["quantity"],
                    price=Decimal(obj["price"]),
                    forced=True,
                )
            )
    return out
