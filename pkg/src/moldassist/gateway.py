"""Provider-agnostic chat-completion access.

Supports a live HTTP backend (generic chat-completion wire format) and a
deterministic scripted backend driven by fixture files, plus lenient
structured-output parsing and token/cost metering.
"""

from __future__ import annotations

import json
import os
import re
import threading
import time
from dataclasses import dataclass, field
from decimal import Decimal
from enum import Enum
from typing import Optional

import requests


class GatewayError(Exception):
    pass


class TransportError(GatewayError):
    """Live-backend failure after exhausting retries."""

    def __init__(self, message: str, attempts: int):
        super().__init__(f"{message} (after {attempts} attempts)")
        self.attempts = attempts


class FixtureMissError(GatewayError):
    """Scripted backend had no rule matching the request."""

    def __init__(self, stage: Optional[str]):
        super().__init__(f"no fixture rule matches request (stage={stage!r})")
        self.stage = stage


class ParseError(GatewayError):
    """Structured output could not be parsed; carries the offending text."""

    def __init__(self, schema_id: str, text: str):
        super().__init__(f"cannot parse {schema_id!r} from: {text[:200]!r}")
        self.schema_id = schema_id
        self.text = text


class ConfigError(GatewayError):
    pass


@dataclass(frozen=True)
class ChatMessage:
    role: str  # system | user | assistant
    content: str

    def __post_init__(self):
        if self.role not in ("system", "user", "assistant"):
            raise ValueError(f"bad role: {self.role}")
        if self.role in ("user", "assistant") and not self.content:
            raise ValueError(f"empty content for role {self.role}")


@dataclass(frozen=True)
class CompletionRequest:
    model_id: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.0
    schema_id: Optional[str] = None
    stage: Optional[str] = None  # fixture routing tag, also recorded in traces

    def __post_init__(self):
        if not self.messages:
            raise ValueError("request must carry at least one message")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def prompt_text(self) -> str:
        return "\n".join(m.content for m in self.messages)


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be >= 0")

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        return TokenUsage(
            self.input_tokens + other.input_tokens,
            self.output_tokens + other.output_tokens,
        )


class PriceTable:
    """Per-model (price per input token, price per output token)."""

    def __init__(self, prices: dict[str, tuple[float, float]]):
        self._prices: dict[str, tuple[Decimal, Decimal]] = {}
        for model_id, (p_in, p_out) in prices.items():
            d_in, d_out = Decimal(str(p_in)), Decimal(str(p_out))
            if d_in < 0 or d_out < 0:
                raise ConfigError(f"negative price for {model_id}")
            self._prices[model_id] = (d_in, d_out)

    @classmethod
    def load(cls, path: str) -> "PriceTable":
        with open(path) as fh:
            raw = json.load(fh)
        return cls({m: (v["in"], v["out"]) for m, v in raw.items()})

    def prices_for(self, model_id: str) -> tuple[Decimal, Decimal]:
        try:
            return self._prices[model_id]
        except KeyError:
            raise ConfigError(f"model {model_id!r} not in price table") from None


def cost_of(usage: TokenUsage, model_id: str, table: PriceTable) -> Decimal:
    """Exact input_tokens * p_in + output_tokens * p_out."""
    p_in, p_out = table.prices_for(model_id)
    return usage.input_tokens * p_in + usage.output_tokens * p_out


# ---------------------------------------------------------------------------
# Backends


@dataclass(frozen=True)
class FixtureRule:
    pattern: str
    response: str
    stage: Optional[str] = None
    input_tokens: int = 0
    output_tokens: int = 0


class ScriptedBackend:
    """Deterministic fixture-driven backend.

    Rules are tried in file order; a rule matches when its stage tag equals
    the request's (a rule without a stage matches any stage) and its regex
    pattern is found in the concatenated prompt text.
    """

    def __init__(self, rules: list[FixtureRule]):
        self._rules = tuple(rules)
        self._compiled = [re.compile(r.pattern, re.DOTALL) for r in rules]

    @classmethod
    def load(cls, path: str) -> "ScriptedBackend":
        with open(path) as fh:
            raw = json.load(fh)
        rules = [
            FixtureRule(
                pattern=r["pattern"],
                response=r["response"],
                stage=r.get("stage"),
                input_tokens=r.get("input_tokens", 0),
                output_tokens=r.get("output_tokens", 0),
            )
            for r in raw
        ]
        return cls(rules)

    def send(self, request: CompletionRequest) -> tuple[str, TokenUsage]:
        text = request.prompt_text
        for rule, rx in zip(self._rules, self._compiled):
            if rule.stage is not None and rule.stage != request.stage:
                continue
            if rx.search(text):
                return rule.response, TokenUsage(rule.input_tokens, rule.output_tokens)
        raise FixtureMissError(request.stage)


class HttpBackend:
    """Generic chat-completion wire format over HTTP.

    POSTs to {base_url}/chat/completions with an OpenAI-style payload; the
    provider is configured entirely through base URL, key and model id.
    """

    def __init__(self, base_url: str, api_key: str = "", timeout: float = 120.0,
                 max_attempts: int = 3):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key
        self.timeout = timeout
        self.max_attempts = max_attempts

    @classmethod
    def from_env(cls) -> "HttpBackend":
        base_url = os.environ.get("MOLDASSIST_API_BASE")
        if not base_url:
            raise ConfigError("MOLDASSIST_API_BASE is not set")
        return cls(base_url, api_key=os.environ.get("MOLDASSIST_API_KEY", ""))

    def send(self, request: CompletionRequest) -> tuple[str, TokenUsage]:
        payload = {
            "model": request.model_id,
            "messages": [{"role": m.role, "content": m.content} for m in request.messages],
            "temperature": request.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        last_err: Optional[Exception] = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = requests.post(
                    f"{self.base_url}/chat/completions",
                    json=payload, headers=headers, timeout=self.timeout,
                )
                resp.raise_for_status()
                body = resp.json()
                text = body["choices"][0]["message"]["content"]
                usage = body.get("usage", {})
                return text, TokenUsage(
                    usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)
                )
            except (requests.RequestException, KeyError, ValueError) as err:
                last_err = err
                time.sleep(min(2 ** attempt * 0.1, 2.0))
        raise TransportError(str(last_err), self.max_attempts)


# ---------------------------------------------------------------------------
# Metering


@dataclass
class CallRecord:
    stage: Optional[str]
    model_id: str
    usage: TokenUsage
    cost: Decimal
    elapsed: float


class UsageMeter:
    """Thread-safe per-call accounting; totals are sums of the records."""

    def __init__(self, price_table: Optional[PriceTable] = None):
        self._lock = threading.Lock()
        self._records: list[CallRecord] = []
        self.price_table = price_table

    def record(self, stage: Optional[str], model_id: str, usage: TokenUsage,
               elapsed: float) -> CallRecord:
        cost = Decimal(0)
        if self.price_table is not None:
            cost = cost_of(usage, model_id, self.price_table)
        rec = CallRecord(stage, model_id, usage, cost, elapsed)
        with self._lock:
            self._records.append(rec)
        return rec

    @property
    def records(self) -> list[CallRecord]:
        with self._lock:
            return list(self._records)

    def totals(self) -> tuple[TokenUsage, Decimal, float]:
        usage, cost, elapsed = TokenUsage(), Decimal(0), 0.0
        for rec in self.records:
            usage = usage + rec.usage
            cost += rec.cost
            elapsed += rec.elapsed
        return usage, cost, elapsed


# ---------------------------------------------------------------------------
# Structured-output parsing


class Category(Enum):
    INJECTION = "injection"
    NO_INJECTION = "no_injection"


class Decision(Enum):
    RESPOND = "respond"
    REPLAN = "replan"


TOOL_NAMES = ("table_retriever", "manual_retriever", "internet_search",
              "llm_infer", "diffusion_model")

SCHEMA_IDS = ("translation", "category", "plan", "decision",
              "diffusion_inputs", "judge_score")

FORMAT_INSTRUCTIONS = {
    "translation": (
        'Return a JSON object: {"translated_query": "<the query in English>", '
        '"language": "<original language of the input>"}'
    ),
    "category": 'Answer with exactly one word: "injection" or "no_injection".',
    "plan": (
        'Return a JSON object: {"steps": [["<tool>", "<task description>"], ...]}. '
        "Steps must be ordered sequentially. Tools: " + ", ".join(TOOL_NAMES) + "."
    ),
    "decision": 'Answer with exactly one word: "replan" or "respond".',
    "diffusion_inputs": (
        "Return a JSON object with exactly 5 keys: machine_temperature, "
        "machine_humidity, factory_temperature, factory_humidity, class. "
        "Each value is a number or null; class is 0 (good), 1 (defective) or null."
    ),
    "judge_score": "Format:\nRelevance: ...\nAccuracy: ...\nRating:0~10",
}


def _first_json_value(text: str):
    """Extract the first well-formed JSON object or array embedded in text."""
    decoder = json.JSONDecoder()
    for i, ch in enumerate(text):
        if ch in "{[":
            try:
                value, _ = decoder.raw_decode(text[i:])
                return value
            except ValueError:
                continue
    raise ValueError("no JSON value found")


def parse_structured(text: str, schema_id: str):
    """Lenient parse of model output into the typed value for schema_id."""
    if schema_id not in SCHEMA_IDS:
        raise ConfigError(f"unknown schema {schema_id!r}")

    if schema_id == "category":
        # no_injection first: "injection" is a substring of it
        if re.search(r"no_injection", text):
            return Category.NO_INJECTION
        if re.search(r"\binjection\b", text):
            return Category.INJECTION
        raise ParseError(schema_id, text)

    if schema_id == "decision":
        m = re.search(r"\b(respond|replan)\b", text)
        if not m:
            raise ParseError(schema_id, text)
        return Decision(m.group(1))

    if schema_id == "translation":
        try:
            obj = _first_json_value(text)
            if not isinstance(obj, dict):
                raise ValueError("not an object")
            query = str(obj["translated_query"]).strip()
            language = str(obj["language"]).strip()
            if not query or not language:
                raise ValueError("empty field")
            return {"translated_query": query, "language": language}
        except (ValueError, KeyError, TypeError):
            raise ParseError(schema_id, text) from None

    if schema_id == "plan":
        try:
            obj = _first_json_value(text)
            steps = obj["steps"] if isinstance(obj, dict) else obj
            parsed = []
            for step in steps:
                tool, task = step[0], step[1]
                if tool not in TOOL_NAMES:
                    raise ValueError(f"unknown tool {tool!r}")
                parsed.append((tool, str(task)))
            if not parsed:
                raise ValueError("empty plan")
            return parsed
        except (ValueError, KeyError, TypeError, IndexError):
            raise ParseError(schema_id, text) from None

    if schema_id == "diffusion_inputs":
        keys = ("machine_temperature", "machine_humidity",
                "factory_temperature", "factory_humidity", "class")
        try:
            obj = _first_json_value(text)
            if not isinstance(obj, dict):
                raise ValueError("not an object")
            out = {}
            for key in keys:
                value = obj[key]
                if value is None or (isinstance(value, str) and value.lower() == "none"):
                    out[key] = None
                else:
                    out[key] = float(value)
            if out["class"] is not None and out["class"] not in (0.0, 1.0):
                raise ValueError("class must be 0, 1 or null")
            return out
        except (ValueError, KeyError, TypeError):
            raise ParseError(schema_id, text) from None

    if schema_id == "judge_score":
        relevance = _section_after(text, "Relevance")
        accuracy = _section_after(text, "Accuracy")
        m = re.search(r"Rating\s*\**\s*[:\-]?\s*\**\s*(\d+)", text, re.IGNORECASE)
        if not m:
            raise ParseError(schema_id, text)
        rating = int(m.group(1))
        if not 0 <= rating <= 10:
            raise ParseError(schema_id, text)
        return {"relevance_comment": relevance, "accuracy_comment": accuracy,
                "rating": rating}

    raise ConfigError(f"unhandled schema {schema_id!r}")  # pragma: no cover


def _section_after(text: str, label: str) -> str:
    m = re.search(rf"{label}\s*[:\-]\s*(.*)", text)
    return m.group(1).strip() if m else ""


# ---------------------------------------------------------------------------
# Gateway


class Gateway:
    """A backend plus metering and retry-once structured completion."""

    def __init__(self, backend, model_id: str = "default",
                 price_table: Optional[PriceTable] = None):
        self.backend = backend
        self.model_id = model_id
        self.meter = UsageMeter(price_table)

    def complete(self, request: CompletionRequest) -> tuple[str, TokenUsage, float]:
        start = time.monotonic()
        text, usage = self.backend.send(request)
        elapsed = time.monotonic() - start
        self.meter.record(request.stage, request.model_id, usage, elapsed)
        return text, usage, elapsed

    def complete_structured(self, request: CompletionRequest):
        """Complete and parse; on parse failure, retry once with a reformat
        follow-up message before surfacing the error."""
        if request.schema_id is None:
            raise ConfigError("complete_structured requires a schema_id")
        text, usage, elapsed = self.complete(request)
        try:
            return parse_structured(text, request.schema_id), text
        except ParseError:
            retry = CompletionRequest(
                model_id=request.model_id,
                messages=request.messages + (
                    ChatMessage("assistant", text),
                    ChatMessage("user", "Your reply did not match the required "
                                "format. "
                                + FORMAT_INSTRUCTIONS[request.schema_id]),
                ),
                temperature=request.temperature,
                schema_id=request.schema_id,
                stage=request.stage,
            )
            text2, _, _ = self.complete(retry)
            return parse_structured(text2, request.schema_id), text2
