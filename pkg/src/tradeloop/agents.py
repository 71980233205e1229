"""Analyst agents, decision context assembly, and strict order parsing.

The market/news/fundamental analysts are conversational: the first call
renders the initial asset, later calls the follow-up asset, and responses
accumulate as assistant turns. The central agent consumes their texts plus
portfolio state and must answer with a bare JSON array of orders — anything
off-schema is rejected field-by-field, re-asked a bounded number of times,
and finally treated as "no action".
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import date
from decimal import Decimal, ROUND_HALF_EVEN
from typing import Iterable, Sequence

from .engine import Action, Order, OrderType
from .gateway import ChatMessage, ChatRequest, Gateway
from .templates import PromptTemplate

ORDER_FIELDS = ("action", "orderType", "price", "quantity", "explanation")
ACTIONS = tuple(a.value for a in Action)
ORDER_TYPES = tuple(t.value for t in OrderType)
NEWS_SECTIONS = ("Sentiment Assessment", "Key Developments", "Market Relevance", "Source Analysis")

FORMAT_REMINDER = (
    "Your previous reply could not be parsed as an order list. "
    "Return ONLY a JSON array (possibly empty) of objects with exactly the fields "
    'action, orderType, price, quantity, explanation. action must be one of '
    "BUY|SELL|SHORT|SHORT_COVER and orderType one of MARKET|LIMIT|STOP; price must be "
    "null for MARKET orders and a positive number otherwise; quantity must be a "
    "positive integer. No extra text."
)

WEB_SEARCH_NOT_AVAILABLE = "web_search tool: NOT_AVAILABLE in this environment"


def web_search(query: str) -> str:
    """Stub for the news analyst's article-retrieval tool.

    The prompt advertises the tool to keep the shipped assets faithful; the
    endpoint itself is out of scope and always reports unavailability.
    """
    return WEB_SEARCH_NOT_AVAILABLE


class OrderParseError(ValueError):
    """Raised on any deviation from the strict order grammar."""

    def __init__(self, code: str, path: str, message: str):
        self.code = code
        self.path = path
        super().__init__(f"{code} at {path}: {message}")


@dataclass(frozen=True)
class OrderSpec:
    action: Action
    order_type: OrderType
    price: Decimal | None
    quantity: int
    explanation: str


@dataclass(frozen=True)
class AnalystReport:
    author: str  # market | news | fundamental | reflection
    as_of: date
    text: str
    sections: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class NewsItem:
    ts: str  # ISO-8601 timestamp
    title: str
    url: str
    summary: str
    keywords: tuple[str, ...] = ()


@dataclass(frozen=True)
class FundamentalSnapshot:
    filing_date: date
    period_label: str = ""
    revenue: float | None = None
    cogs: float | None = None
    operating_income: float | None = None
    net_income: float | None = None
    weighted_shares: float | None = None
    ocf: float | None = None
    icf: float | None = None
    fcf_fin: float | None = None
    total_debt: float | None = None
    total_equity: float | None = None
    annual_dividends_per_share: float | None = None
    price: float | None = None
    splits: tuple[tuple[str, str], ...] = ()  # (date, ratio text)
    dividends: tuple[tuple[str, str], ...] = ()  # (date, cash amount)


# -- formatting ------------------------------------------------------------


def fmt_price(value) -> str:
    return f"{float(value):.2f}"


def fmt_shares(value: int) -> str:
    return str(int(value))


def recent_activity_text(fills: Sequence, limit: int = 5) -> str:
    """Last `limit` fills as "DATE ACTION QTY @ PRICE" lines; "None" if empty."""
    tail = list(fills)[-limit:]
    if not tail:
        return "None"
    lines = [
        f"{f.executed_at.isoformat()} {f.action.value} {f.quantity} @ {fmt_price(f.price)}"
        for f in tail
    ]
    return "\n".join(lines)


@dataclass
class DecisionContext:
    instrument: str
    window_start: date
    window_end: date
    now: date
    action_interval: str
    has_bar: bool
    open: Decimal | None = None
    high: Decimal | None = None
    low: Decimal | None = None
    close: Decimal | None = None
    volume: int | None = None
    market_analysis: str | None = None
    news_analysis: str | None = None
    fund_analysis: str | None = None
    reflection_analysis: str | None = None
    shares_long: int = 0
    shares_short: int = 0
    portfolio_cash: Decimal = Decimal(0)
    executed_orders: str = "None"

    def to_render_context(self) -> dict:
        """Formatted values: prices/cash 2 decimals, shares integers."""
        return {
            "instrument": self.instrument,
            "window_start": self.window_start.isoformat(),
            "window_end": self.window_end.isoformat(),
            "now": self.now.isoformat(),
            "action_interval": self.action_interval,
            "has_bar": self.has_bar,
            "open": fmt_price(self.open) if self.open is not None else "n/a",
            "high": fmt_price(self.high) if self.high is not None else "n/a",
            "low": fmt_price(self.low) if self.low is not None else "n/a",
            "close": fmt_price(self.close) if self.close is not None else "n/a",
            "volume": str(self.volume) if self.volume is not None else "n/a",
            "market_analysis": self.market_analysis,
            "news_analysis": self.news_analysis,
            "fund_analysis": self.fund_analysis,
            "reflection_analysis": self.reflection_analysis,
            "shares_long": fmt_shares(self.shares_long),
            "shares_short": fmt_shares(self.shares_short),
            "shares_net": fmt_shares(self.shares_long - self.shares_short),
            "portfolio_cash": fmt_price(self.portfolio_cash),
            "executed_orders": self.executed_orders,
        }


# -- news ------------------------------------------------------------------


def load_news_jsonl(text: str) -> list[NewsItem]:
    items: list[NewsItem] = []
    for line in text.splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        items.append(
            NewsItem(
                ts=obj["ts"],
                title=obj["title"],
                url=obj.get("url", ""),
                summary=obj.get("summary", ""),
                keywords=tuple(obj.get("keywords", ())),
            )
        )
    return items


def dedupe_news(items: Iterable[NewsItem]) -> list[NewsItem]:
    seen: set[tuple[str, str]] = set()
    out: list[NewsItem] = []
    for item in items:
        key = (item.title, item.ts)
        if key in seen:
            continue
        seen.add(key)
        out.append(item)
    return out


def render_news_batch(items: Sequence[NewsItem]) -> str:
    """Newest-first batch text; duplicates by (title, timestamp) collapse."""
    items = sorted(dedupe_news(items), key=lambda it: it.ts, reverse=True)
    blocks = []
    for it in items:
        lines = [f"[{it.ts}] {it.title}"]
        if it.url:
            lines.append(f"URL: {it.url}")
        if it.summary:
            lines.append(f"Summary: {it.summary}")
        if it.keywords:
            lines.append("Keywords: " + ", ".join(it.keywords))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def parse_news_sections(text: str) -> tuple[tuple[str, str], ...]:
    """Pull the four structured sections out of a news report when present."""
    found: list[tuple[str, int, int]] = []
    for name in NEWS_SECTIONS:
        m = re.search(rf"\*{{0,2}}{re.escape(name)}\*{{0,2}}\s*:?", text)
        if m:
            found.append((name, m.start(), m.end()))
    found.sort(key=lambda t: t[1])
    out: list[tuple[str, str]] = []
    for i, (name, _, body_start) in enumerate(found):
        body_end = found[i + 1][1] if i + 1 < len(found) else len(text)
        out.append((name, text[body_start:body_end].strip()))
    return tuple(out)


# -- fundamentals ------------------------------------------------------------


def compute_ratios(snapshot: FundamentalSnapshot) -> dict[str, float | None]:
    """Margin, per-share, cash-flow, leverage, and yield ratios.

    Each ratio is independently undefined (None) when its denominator is zero
    or an input is missing; a zero numerator is a plain 0.
    """

    def div(num, den):
        if num is None or den is None or den == 0:
            return None
        return num / den

    revenue = snapshot.revenue
    gpm = None
    if revenue and snapshot.cogs is not None:
        gpm = (revenue - snapshot.cogs) / revenue * 100.0
    ncf = None
    if None not in (snapshot.ocf, snapshot.icf, snapshot.fcf_fin):
        ncf = snapshot.ocf + snapshot.icf + snapshot.fcf_fin
    dividend_yield = None
    if snapshot.annual_dividends_per_share is not None and snapshot.price:
        dividend_yield = snapshot.annual_dividends_per_share / snapshot.price * 100.0
    debt_to_equity = div(snapshot.total_debt, snapshot.total_equity)
    return {
        "gross_margin_pct": gpm,
        "operating_margin_pct": None
        if (om := div(snapshot.operating_income, revenue)) is None
        else om * 100.0,
        "net_margin_pct": None if (nm := div(snapshot.net_income, revenue)) is None else nm * 100.0,
        "eps": div(snapshot.net_income, snapshot.weighted_shares),
        "net_cash_flow": ncf,
        "debt_to_equity": debt_to_equity,
        "dividend_yield_pct": dividend_yield,
    }


def render_fundamental_data(snapshots: Sequence[FundamentalSnapshot]) -> str:
    blocks: list[str] = []
    splits = [s for snap in snapshots for s in snap.splits]
    dividends = [d for snap in snapshots for d in snap.dividends]
    if splits:
        blocks.append("Stock Splits:\n" + "  ".join(f"{d}: {r}" for d, r in splits))
    if dividends:
        blocks.append("Dividends:\n" + "  ".join(f"{d}: ${c}" for d, c in dividends))
    for snap in snapshots:
        ratios = compute_ratios(snap)

        def r(key, suffix=""):
            v = ratios[key]
            return "n/a" if v is None else f"{v:.1f}{suffix}"

        lines = [f"{snap.period_label or 'Period'} (Filed: {snap.filing_date.isoformat()}):"]
        facts = []
        if snap.revenue is not None:
            facts.append(f"Revenue {snap.revenue:,.0f}")
        facts.append(f"GPM {r('gross_margin_pct', '%')}")
        facts.append(f"OpM {r('operating_margin_pct', '%')}")
        if snap.net_income is not None:
            facts.append(f"Net income {snap.net_income:,.0f}")
        facts.append(f"Net margin {r('net_margin_pct', '%')}")
        eps = ratios["eps"]
        facts.append("EPS n/a" if eps is None else f"EPS {eps:.2f}")
        ncf = ratios["net_cash_flow"]
        if ncf is not None:
            facts.append(f"NCF {ncf:,.0f}")
        de = ratios["debt_to_equity"]
        facts.append("D/E n/a" if de is None else f"D/E {de:.2f}")
        dy = ratios["dividend_yield_pct"]
        if dy is not None:
            facts.append(f"Yield {dy:.2f}%")
        lines.append("; ".join(facts))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) if blocks else "No fundamentals on file"


# -- conversational agents ---------------------------------------------------


class ConversationalAgent:
    """Initial-then-follow-up prompting with a growing message history."""

    def __init__(
        self,
        role: str,
        gateway: Gateway,
        initial: PromptTemplate,
        followup: PromptTemplate,
        model_id: str = "",
        params: tuple[tuple[str, object], ...] = (),
    ):
        self.role = role
        self.gateway = gateway
        self.initial = initial
        self.followup = followup
        self.model_id = model_id
        self.params = params
        self.system_text = ""
        self.messages: list[ChatMessage] = []
        self.calls = 0

    @property
    def first_call(self) -> bool:
        return self.calls == 0

    def ask(self, context: dict, tags: tuple[tuple[str, str], ...]) -> str:
        template = self.initial if self.first_call else self.followup
        rendered = template.render(context)
        if self.first_call and rendered.system_text:
            self.system_text = rendered.system_text
        self.messages.append(ChatMessage(role="user", text=rendered.user_text))
        request = ChatRequest(
            system_text=self.system_text,
            messages=tuple(self.messages),
            model_id=self.model_id,
            params=self.params,
            tags=tags + (("role", self.role),),
        )
        response = self.gateway.complete(request)
        self.messages.append(ChatMessage(role="assistant", text=response.text))
        self.calls += 1
        return response.text

    def reset(self) -> None:
        self.system_text = ""
        self.messages.clear()
        self.calls = 0


class MarketAnalyst(ConversationalAgent):
    def __init__(self, gateway, initial, followup, **kw):
        super().__init__("market", gateway, initial, followup, **kw)

    def report(self, context: dict, as_of: date, tags=()) -> AnalystReport:
        text = self.ask(context, tuple(tags))
        return AnalystReport(author="market", as_of=as_of, text=text)


class NewsAnalyst(ConversationalAgent):
    def __init__(self, gateway, initial, followup, **kw):
        super().__init__("news", gateway, initial, followup, **kw)

    def report(self, context: dict, as_of: date, tags=()) -> AnalystReport:
        text = self.ask(context, tuple(tags))
        return AnalystReport(
            author="news", as_of=as_of, text=text, sections=parse_news_sections(text)
        )


class FundamentalAnalyst(ConversationalAgent):
    def __init__(self, gateway, initial, followup, **kw):
        super().__init__("fundamental", gateway, initial, followup, **kw)

    def report(self, context: dict, as_of: date, tags=()) -> AnalystReport:
        text = self.ask(context, tuple(tags))
        return AnalystReport(author="fundamental", as_of=as_of, text=text)


# -- order parsing -----------------------------------------------------------

_FENCE = re.compile(r"```(?:json)?\s*\n(.*?)\n?\s*```", re.DOTALL)


def strip_fences(text: str) -> str:
    m = _FENCE.search(text)
    return m.group(1) if m else text


def parse_orders(text: str) -> list[OrderSpec]:
    """Strictly validate an order array (possibly inside a ```json fence).

    Exact enum casing; MARKET orders carry price null; LIMIT/STOP need a
    positive numeric price; quantity is a positive JSON integer; exactly the
    five schema fields, nothing else.
    """
    payload = strip_fences(text).strip()
    try:
        data = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise OrderParseError("NOT_JSON_ARRAY", "$", f"not parseable JSON: {exc.msg}") from None
    if not isinstance(data, list):
        raise OrderParseError("NOT_JSON_ARRAY", "$", f"expected array, got {type(data).__name__}")

    specs: list[OrderSpec] = []
    for i, obj in enumerate(data):
        path = f"[{i}]"
        if not isinstance(obj, dict):
            raise OrderParseError("SCHEMA_VIOLATION", path, "expected object")
        for key in ORDER_FIELDS:
            if key not in obj:
                raise OrderParseError("SCHEMA_VIOLATION", f"{path}.{key}", "missing field")
        for key in obj:
            if key not in ORDER_FIELDS:
                raise OrderParseError("SCHEMA_VIOLATION", f"{path}.{key}", "unknown field")

        action = obj["action"]
        if not isinstance(action, str) or action not in ACTIONS:
            raise OrderParseError("SCHEMA_VIOLATION", f"{path}.action", f"bad action {action!r}")
        order_type = obj["orderType"]
        if not isinstance(order_type, str) or order_type not in ORDER_TYPES:
            raise OrderParseError(
                "SCHEMA_VIOLATION", f"{path}.orderType", f"bad orderType {order_type!r}"
            )
        price = obj["price"]
        if order_type == "MARKET":
            if price is not None:
                raise OrderParseError(
                    "SCHEMA_VIOLATION", f"{path}.price", "MARKET order must carry null price"
                )
            price_dec = None
        else:
            if isinstance(price, bool) or not isinstance(price, (int, float)):
                raise OrderParseError(
                    "SCHEMA_VIOLATION", f"{path}.price", f"{order_type} needs a numeric price"
                )
            if price <= 0:
                raise OrderParseError("SCHEMA_VIOLATION", f"{path}.price", "price must be > 0")
            price_dec = Decimal(repr(price)).quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN)
        quantity = obj["quantity"]
        if isinstance(quantity, bool) or not isinstance(quantity, int):
            raise OrderParseError(
                "SCHEMA_VIOLATION", f"{path}.quantity", "quantity must be an integer"
            )
        if quantity < 1:
            raise OrderParseError("SCHEMA_VIOLATION", f"{path}.quantity", "quantity must be >= 1")
        explanation = obj["explanation"]
        if not isinstance(explanation, str):
            raise OrderParseError(
                "SCHEMA_VIOLATION", f"{path}.explanation", "explanation must be a string"
            )
        specs.append(
            OrderSpec(
                action=Action(action),
                order_type=OrderType(order_type),
                price=price_dec,
                quantity=quantity,
                explanation=explanation,
            )
        )
    return specs


def orders_from_specs(specs: Sequence[OrderSpec], submitted_at: date, id_prefix: str) -> list[Order]:
    return [
        Order(
            id=f"{id_prefix}-{i + 1}",
            action=s.action,
            order_type=s.order_type,
            price=s.price,
            quantity=s.quantity,
            explanation=s.explanation,
            submitted_at=submitted_at,
        )
        for i, s in enumerate(specs)
    ]


@dataclass
class DecisionOutcome:
    specs: list[OrderSpec]
    raw_text: str
    attempts: int
    gave_up: bool  # parse failures exhausted the retry budget -> treated as []


class CentralAgent:
    """The decision maker: renders the template the harness hands it (live
    initial on the first call of a conversation, follow-up after), parses
    orders strictly, re-asks on malformed output, then falls back to []."""

    def __init__(
        self,
        gateway: Gateway,
        model_id: str = "",
        params: tuple[tuple[str, object], ...] = (),
        max_retries: int = 2,
    ):
        self.role = "cta"
        self.gateway = gateway
        self.model_id = model_id
        self.params = params
        self.max_retries = max_retries
        self.system_text = ""
        self.messages: list[ChatMessage] = []
        self.calls = 0

    @property
    def first_call(self) -> bool:
        return self.calls == 0

    def reset(self) -> None:
        """Drop the conversation so the next decision re-renders the live
        initial template (used after prompt-optimizer updates)."""
        self.system_text = ""
        self.messages.clear()
        self.calls = 0

    def decide(self, template: PromptTemplate, ctx: DecisionContext, tags=()) -> DecisionOutcome:
        rendered = template.render(ctx.to_render_context())
        if self.first_call and rendered.system_text:
            self.system_text = rendered.system_text
        user_text = rendered.user_text
        attempts = 0
        while True:
            attempts += 1
            self.messages.append(ChatMessage(role="user", text=user_text))
            request = ChatRequest(
                system_text=self.system_text,
                messages=tuple(self.messages),
                model_id=self.model_id,
                params=self.params,
                tags=tuple(tags) + (("role", self.role), ("attempt", str(attempts))),
            )
            response = self.gateway.complete(request)
            self.messages.append(ChatMessage(role="assistant", text=response.text))
            self.calls += 1
            try:
                specs = parse_orders(response.text)
                return DecisionOutcome(
                    specs=specs, raw_text=response.text, attempts=attempts, gave_up=False
                )
            except OrderParseError as exc:
                if attempts > self.max_retries:
                    return DecisionOutcome(
                        specs=[], raw_text=response.text, attempts=attempts, gave_up=True
                    )
                user_text = f"{FORMAT_REMINDER}\n(parse error: {exc})"
