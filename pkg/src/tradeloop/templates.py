"""Prompt templates: `{{ name }}` placeholders and `{% if %}` conditionals.

The syntax is deliberately frozen to the constructs the shipped prompt assets
use: placeholders (with an optional `| default("literal")` filter) and
non-nested-beyond-depth-2 conditionals with an optional `{% else %}`. Anything
else is a template error — strictness is what makes candidate validation
meaningful. Bare braces are literal text (the order-schema JSON examples in
the assets depend on that).

Text inside a `<system_role>` block renders into the LLM system message; the
remainder becomes the user message.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

_PLACEHOLDER = re.compile(
    r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:\|\s*default\(\"([^\"]*)\"\)\s*)?\}\}"
)
_TAG = re.compile(r"\{%\s*(if\s+([A-Za-z_][A-Za-z0-9_]*)|else|endif)\s*%\}")
_SYSTEM_BLOCK = re.compile(r"<system_role>(.*?)</system_role>", re.DOTALL)

MAX_CONDITIONAL_DEPTH = 2


class TemplateError(ValueError):
    def __init__(self, code: str, message: str):
        self.code = code
        super().__init__(f"{code}: {message}")


@dataclass(frozen=True)
class _Text:
    text: str


@dataclass(frozen=True)
class _Placeholder:
    name: str
    default: str | None


@dataclass(frozen=True)
class _Conditional:
    name: str
    then: tuple
    otherwise: tuple


@dataclass(frozen=True)
class RenderedPrompt:
    system_text: str
    user_text: str
    full_text: str


def _parse(body: str) -> tuple:
    """Tokenize and build the node tree; raises TemplateError on anything
    outside the frozen grammar."""
    tokens: list = []
    pos = 0
    while True:
        next_ph = body.find("{{", pos)
        next_tag = body.find("{%", pos)
        candidates = [c for c in (next_ph, next_tag) if c != -1]
        if not candidates:
            tokens.append(_Text(body[pos:]))
            break
        cut = min(candidates)
        if cut > pos:
            tokens.append(_Text(body[pos:cut]))
        if cut == next_ph:
            m = _PLACEHOLDER.match(body, cut)
            if m is None:
                snippet = body[cut : cut + 30].splitlines()[0]
                raise TemplateError("MALFORMED_PLACEHOLDER", f"at {snippet!r}")
            tokens.append(_Placeholder(name=m.group(1), default=m.group(2)))
            pos = m.end()
        else:
            m = _TAG.match(body, cut)
            if m is None:
                snippet = body[cut : cut + 30].splitlines()[0]
                raise TemplateError("UNKNOWN_CONSTRUCT", f"at {snippet!r}")
            kind = m.group(1)
            if kind.startswith("if"):
                tokens.append(("if", m.group(2)))
            elif kind == "else":
                tokens.append(("else", None))
            else:
                tokens.append(("endif", None))
            pos = m.end()

    def build(idx: int, depth: int) -> tuple[tuple, int, bool]:
        """Returns (nodes, next index, saw_else). Stops at else/endif."""
        nodes: list = []
        while idx < len(tokens):
            tok = tokens[idx]
            if isinstance(tok, (_Text, _Placeholder)):
                nodes.append(tok)
                idx += 1
                continue
            kind, name = tok
            if kind == "if":
                if depth + 1 > MAX_CONDITIONAL_DEPTH:
                    raise TemplateError(
                        "UNBALANCED_CONDITIONAL", f"conditionals nested beyond depth {MAX_CONDITIONAL_DEPTH}"
                    )
                then, idx, saw_else = build(idx + 1, depth + 1)
                otherwise: tuple = ()
                if saw_else:
                    otherwise, idx, saw_else2 = build(idx, depth + 1)
                    if saw_else2:
                        raise TemplateError("UNBALANCED_CONDITIONAL", "duplicate {% else %}")
                nodes.append(_Conditional(name=name, then=then, otherwise=otherwise))
                continue
            if kind == "else":
                if depth == 0:
                    raise TemplateError("UNBALANCED_CONDITIONAL", "{% else %} outside conditional")
                return tuple(nodes), idx + 1, True
            if kind == "endif":
                if depth == 0:
                    raise TemplateError("UNBALANCED_CONDITIONAL", "{% endif %} without {% if %}")
                return tuple(nodes), idx + 1, False
        if depth != 0:
            raise TemplateError("UNBALANCED_CONDITIONAL", "unclosed {% if %}")
        return tuple(nodes), idx, False

    nodes, _, _ = build(0, 0)
    return nodes


def _collect_names(nodes: tuple, out: set[str]) -> None:
    for node in nodes:
        if isinstance(node, _Placeholder):
            out.add(node.name)
        elif isinstance(node, _Conditional):
            out.add(node.name)
            _collect_names(node.then, out)
            _collect_names(node.otherwise, out)


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    nodes: tuple

    @classmethod
    def parse(cls, name: str, body: str) -> "PromptTemplate":
        return cls(name=name, body=body, nodes=_parse(body))

    def placeholders(self) -> frozenset[str]:
        names: set[str] = set()
        _collect_names(self.nodes, names)
        return frozenset(names)

    def render(self, context: Mapping[str, object]) -> RenderedPrompt:
        """Substitute and split into (system, user) texts.

        Every placeholder reached needs a context key (MISSING_KEY otherwise);
        the default filter fires on missing, None, or empty-string values.
        Conditionals test truthiness of their (required) key. Any leftover
        '{{' in the output is a hard failure.
        """
        out: list[str] = []
        self._render_nodes(self.nodes, context, out)
        text = "".join(out)
        if "{{" in text:
            raise TemplateError("UNRENDERED_PLACEHOLDER", "output still contains '{{'")
        m = _SYSTEM_BLOCK.search(text)
        if m:
            system_text = m.group(1).strip()
            user_text = (text[: m.start()] + text[m.end() :]).strip("\n")
        else:
            system_text = ""
            user_text = text
        return RenderedPrompt(system_text=system_text, user_text=user_text, full_text=text)

    def _render_nodes(self, nodes: tuple, context: Mapping[str, object], out: list[str]) -> None:
        for node in nodes:
            if isinstance(node, _Text):
                out.append(node.text)
            elif isinstance(node, _Placeholder):
                present = node.name in context
                value = context.get(node.name)
                if node.default is not None and (not present or value is None or value == ""):
                    out.append(node.default)
                    continue
                if not present:
                    raise TemplateError("MISSING_KEY", node.name)
                out.append(value if isinstance(value, str) else str(value))
            else:
                if node.name not in context:
                    raise TemplateError("MISSING_KEY", node.name)
                branch = node.then if context[node.name] else node.otherwise
                self._render_nodes(branch, context, out)


def extract_placeholders(template: PromptTemplate | str) -> frozenset[str]:
    """All `{{ }}` names plus all `{% if %}` condition names."""
    if isinstance(template, str):
        template = PromptTemplate.parse("<anonymous>", template)
    return template.placeholders()


_PROMPT_DIR = Path(__file__).parent / "prompts"


def load_template(name: str, override_dir: Path | str | None = None) -> PromptTemplate:
    """Load a shipped prompt asset (or an override) by stem name."""
    base = Path(override_dir) if override_dir else _PROMPT_DIR
    path = base / f"{name}.txt"
    if not path.exists() and override_dir:
        path = _PROMPT_DIR / f"{name}.txt"
    return PromptTemplate.parse(name, path.read_text(encoding="utf-8"))


def load_asset_text(name: str, override_dir: Path | str | None = None) -> str:
    base = Path(override_dir) if override_dir else _PROMPT_DIR
    path = base / f"{name}.txt"
    if not path.exists() and override_dir:
        path = _PROMPT_DIR / f"{name}.txt"
    return path.read_text(encoding="utf-8")
