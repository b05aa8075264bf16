"""Planner-output parsing: tool calls plus a boolean combine expression."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Union

from .errors import PlanParseError, PlanValidationError


class Tool(str, Enum):
    """Visual scoring tools a plan may call."""

    SCENE_MATCHER = "scene_matcher"    # whole-frame image/text matching
    REGION_MATCHER = "region_matcher"  # region-level entity matching


# Wire names used in plan JSON and score files.
WIRE_TOOL_NAMES = {"siglip": Tool.SCENE_MATCHER, "tren": Tool.REGION_MATCHER}
TOOL_WIRE_NAMES = {tool: wire for wire, tool in WIRE_TOOL_NAMES.items()}

MAX_CALLS = 8
SOFT_MAX_CALLS = 5

_CALL_ID_RE = re.compile(r"Q[1-9][0-9]*")


class Op(str, Enum):
    AND = "AND"
    OR = "OR"


@dataclass(frozen=True)
class ToolCall:
    """One (tool, query) scoring request, addressed by its id."""

    id: str
    tool: Tool
    query: str


@dataclass(frozen=True)
class Leaf:
    call_id: str


@dataclass(frozen=True)
class Node:
    op: Op
    left: "CombineExpr"
    right: "CombineExpr"


CombineExpr = Union[Leaf, Node]


def leaf_ids(expr: CombineExpr) -> set[str]:
    """All tool-call ids referenced by an expression."""
    if isinstance(expr, Leaf):
        return {expr.call_id}
    return leaf_ids(expr.left) | leaf_ids(expr.right)


@dataclass(frozen=True)
class Plan:
    """Validated planner output: tool calls, combine expression, audit text."""

    calls: tuple[ToolCall, ...]
    combine: CombineExpr | None
    reasoning: str = ""
    warnings: tuple[str, ...] = ()

    @property
    def ocr_only(self) -> bool:
        return not self.calls

    def call_by_id(self, call_id: str) -> ToolCall:
        for call in self.calls:
            if call.id == call_id:
                return call
        raise KeyError(call_id)


# ---------------------------------------------------------------------------
# Combine-expression parsing
# ---------------------------------------------------------------------------

_WORD = "word"
_LPAREN = "("
_RPAREN = ")"
_END = "end"


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    """Whitespace-separated words plus single-char parens, with 0-based offsets."""
    tokens: list[tuple[str, str, int]] = []
    i = 0
    while i < len(text):
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in "()":
            tokens.append((c, c, i))
            i += 1
            continue
        j = i
        while j < len(text) and not text[j].isspace() and text[j] not in "()":
            j += 1
        tokens.append((_WORD, text[i:j], i))
        i = j
    tokens.append((_END, "", len(text)))
    return tokens


class _CombineParser:
    """Recursive-descent parser: expr := atom (("AND"|"OR") atom)*.

    AND and OR share one precedence level and associate left; parentheses
    override. Error columns are 1-based.
    """

    def __init__(self, text: str, declared_ids: Iterable[str]):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.declared = frozenset(declared_ids)

    def parse(self) -> CombineExpr:
        expr = self._expr()
        kind, value, offset = self.tokens[self.pos]
        if kind != _END:
            raise PlanParseError(f"unexpected {value!r}", column=offset + 1)
        return expr

    def _expr(self) -> CombineExpr:
        node = self._atom()
        while True:
            kind, value, _ = self.tokens[self.pos]
            if kind == _WORD and value in (Op.AND.value, Op.OR.value):
                self.pos += 1
                node = Node(Op(value), node, self._atom())
            else:
                return node

    def _atom(self) -> CombineExpr:
        kind, value, offset = self.tokens[self.pos]
        if kind == _LPAREN:
            self.pos += 1
            kind2, _, offset2 = self.tokens[self.pos]
            if kind2 == _RPAREN:
                raise PlanParseError("empty parentheses", column=offset2 + 1)
            inner = self._expr()
            kind2, _, offset2 = self.tokens[self.pos]
            if kind2 != _RPAREN:
                raise PlanParseError("unbalanced parentheses", column=offset2 + 1)
            self.pos += 1
            return inner
        if kind == _WORD:
            if value in (Op.AND.value, Op.OR.value):
                raise PlanParseError(
                    f"operator {value!r} where a tool-call id was expected",
                    column=offset + 1,
                )
            if value in self.declared:
                self.pos += 1
                return Leaf(value)
            if _CALL_ID_RE.fullmatch(value):
                raise PlanValidationError(f"combine references undeclared id {value!r}")
            raise PlanParseError(f"unknown token {value!r}", column=offset + 1)
        # end of input or stray ')'
        raise PlanParseError("expected a tool-call id or '('", column=offset + 1)


def parse_combine(expr_text: str, declared_ids: Iterable[str]) -> CombineExpr:
    """Parse a combine expression against the declared tool-call ids."""
    if not expr_text or not expr_text.strip():
        raise PlanParseError("empty combine expression", column=1)
    return _CombineParser(expr_text, declared_ids).parse()


def format_combine(expr: CombineExpr) -> str:
    """Render an expression so that re-parsing reproduces the same AST.

    Left children print bare (the grammar folds left anyway); right children
    print parenthesized when they are operator nodes.
    """
    if isinstance(expr, Leaf):
        return expr.call_id
    left = format_combine(expr.left)
    right = format_combine(expr.right)
    if isinstance(expr.right, Node):
        right = f"({right})"
    return f"{left} {expr.op.value} {right}"


# ---------------------------------------------------------------------------
# Plan parsing and serialization
# ---------------------------------------------------------------------------

_FENCE_RE = re.compile(r"```[ \t]*(?:json)?[ \t]*\r?\n(.*?)```", re.DOTALL | re.IGNORECASE)


def _bare_json(raw_text: str) -> str:
    stripped = raw_text.strip()
    if stripped.startswith("{"):
        return stripped
    start = raw_text.find("{")
    end = raw_text.rfind("}")
    if start < 0 or end <= start:
        raise PlanParseError("no JSON block found in planner output")
    return raw_text[start : end + 1]


def parse_plan(raw_text: str) -> Plan:
    """Parse raw planner output (reasoning preamble + JSON block) into a Plan.

    The last fenced block wins when several appear; bare JSON without a fence
    is accepted. Text before the block is retained as the reasoning field.
    """
    if not raw_text or not raw_text.strip():
        raise PlanParseError("empty planner output")
    blocks = list(_FENCE_RE.finditer(raw_text))
    if blocks:
        block = blocks[-1]
        payload_text = block.group(1)
        reasoning = raw_text[: block.start()].strip()
    else:
        payload_text = _bare_json(raw_text)
        reasoning = raw_text[: raw_text.find(payload_text)].strip()
    try:
        payload = json.loads(payload_text)
    except json.JSONDecodeError as exc:
        raise PlanParseError(f"malformed JSON in plan block: {exc.msg}", column=exc.pos + 1)
    return plan_from_payload(payload, reasoning=reasoning)


def plan_from_payload(payload: object, reasoning: str = "") -> Plan:
    """Build a validated Plan from the decoded wire object."""
    if not isinstance(payload, dict) or "queries" not in payload:
        raise PlanValidationError("plan object must contain a 'queries' array")
    raw_queries = payload["queries"]
    if not isinstance(raw_queries, list):
        raise PlanValidationError("'queries' must be an array")
    if len(raw_queries) > MAX_CALLS:
        raise PlanValidationError(f"too many tool calls: {len(raw_queries)} > {MAX_CALLS}")

    warnings: list[str] = []
    calls: list[ToolCall] = []
    seen_ids: set[str] = set()
    for entry in raw_queries:
        if not isinstance(entry, dict):
            raise PlanValidationError("each query must be an object")
        wire_tool = entry.get("tool")
        if wire_tool not in WIRE_TOOL_NAMES:
            raise PlanValidationError(f"unknown tool name {wire_tool!r}")
        call_id = entry.get("id")
        if not isinstance(call_id, str) or not _CALL_ID_RE.fullmatch(call_id):
            raise PlanValidationError(f"bad tool-call id {call_id!r}")
        if call_id in seen_ids:
            raise PlanValidationError(f"duplicate tool-call id {call_id!r}")
        seen_ids.add(call_id)
        query = entry.get("query")
        if not isinstance(query, str) or not query.strip():
            raise PlanValidationError(f"empty query for call {call_id!r}")
        calls.append(ToolCall(id=call_id, tool=WIRE_TOOL_NAMES[wire_tool], query=query.strip()))

    if len(calls) > SOFT_MAX_CALLS:
        warnings.append(f"{len(calls)} tool calls exceeds the usual maximum of {SOFT_MAX_CALLS}")

    if not calls:
        # OCR-only plan: legal (OCR runs on every question), combine absent.
        return Plan(calls=(), combine=None, reasoning=reasoning, warnings=tuple(warnings))

    combine_text = payload.get("combine")
    if not isinstance(combine_text, str) or not combine_text.strip():
        raise PlanValidationError("combine expression required when tool calls are declared")
    combine = parse_combine(combine_text, seen_ids)

    unreferenced = seen_ids - leaf_ids(combine)
    for call_id in sorted(unreferenced):
        warnings.append(f"tool call {call_id} is declared but never referenced by the combine expression")

    return Plan(calls=tuple(calls), combine=combine, reasoning=reasoning, warnings=tuple(warnings))


def plan_payload(plan: Plan) -> dict:
    """Canonical wire object for a plan (the shape parse_plan accepts)."""
    payload: dict = {
        "queries": [
            {"tool": TOOL_WIRE_NAMES[call.tool], "query": call.query, "id": call.id}
            for call in plan.calls
        ]
    }
    if plan.combine is not None:
        payload["combine"] = format_combine(plan.combine)
    return payload


def format_plan(plan: Plan) -> str:
    """Serialize a plan to JSON text; parse_plan round-trips it structurally."""
    return json.dumps(plan_payload(plan), ensure_ascii=False)


def single_query_plan(query: str, tool: Tool = Tool.SCENE_MATCHER, reasoning: str = "") -> Plan:
    """One-leaf plan used as the fallback when planner output is unusable."""
    call = ToolCall(id="Q1", tool=tool, query=query)
    return Plan(calls=(call,), combine=Leaf("Q1"), reasoning=reasoning)


def filter_plan(plan: Plan, drop_tools: Iterable[Tool]) -> Plan | None:
    """Remove calls for the given tools and re-simplify the expression.

    A node with one pruned child collapses to the other child. Returns None
    when nothing scoreable remains (caller decides the fallback).
    """
    dropped = set(drop_tools)
    kept_calls = tuple(call for call in plan.calls if call.tool not in dropped)
    if not kept_calls:
        return None
    kept_ids = {call.id for call in kept_calls}

    def prune(expr: CombineExpr) -> CombineExpr | None:
        if isinstance(expr, Leaf):
            return expr if expr.call_id in kept_ids else None
        left = prune(expr.left)
        right = prune(expr.right)
        if left is not None and right is not None:
            return Node(expr.op, left, right)
        return left if left is not None else right

    combine = prune(plan.combine) if plan.combine is not None else None
    if combine is None:
        return None
    referenced = leaf_ids(combine)
    return Plan(
        calls=tuple(call for call in kept_calls if call.id in referenced),
        combine=combine,
        reasoning=plan.reasoning,
        warnings=plan.warnings,
    )
