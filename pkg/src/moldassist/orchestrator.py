"""The chat state machine: input formatting, routing, the ReAct branch,
the plan-execute-supervise-replan loop, and bilingual reporting.

Every turn takes exactly one of two branches after classification: general
queries go to a ReAct loop, injection-molding queries to the planner loop.
All per-stage activity is captured in an append-only turn trace; the global
history gains exactly one (input, report) pair per turn.
"""

from __future__ import annotations

import hashlib
import logging
import re
import time
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Optional

from .gateway import (
    Category,
    ChatMessage,
    CompletionRequest,
    Decision,
    FORMAT_INSTRUCTIONS,
    Gateway,
    GatewayError,
    ParseError,
    TokenUsage,
)
from .templates import render_template
from .toolbox import OUT_OF_SCOPE, DispatchError, ToolContext, ToolResult, invoke

log = logging.getLogger(__name__)

CLARIFICATION_REPORT = ("Could you describe what you would like help with? "
                        "I did not receive a question.")
ERROR_REPORT = ("I am sorry, something went wrong while processing your "
                "request. Please try again.")


@dataclass
class StageRecord:
    stage: str
    prompt_digest: str = ""
    raw_output: str = ""
    duration: float = 0.0
    tool: Optional[str] = None
    flags: tuple[str, ...] = ()
    prompt_full: Optional[str] = None  # only populated in debug mode

    def as_dict(self) -> dict:
        d = {"stage": self.stage, "prompt_digest": self.prompt_digest,
             "raw_output": self.raw_output, "duration": self.duration}
        if self.tool:
            d["tool"] = self.tool
        if self.flags:
            d["flags"] = list(self.flags)
        if self.prompt_full is not None:
            d["prompt_full"] = self.prompt_full
        return d


class TurnTrace:
    """Append-only record of every stage in one turn."""

    def __init__(self):
        self.records: list[StageRecord] = []

    def add(self, record: StageRecord) -> StageRecord:
        self.records.append(record)
        return record

    @property
    def stages(self) -> list[str]:
        return [r.stage for r in self.records]

    @property
    def tools_used(self) -> set[str]:
        return {r.tool for r in self.records if r.tool}

    def as_dicts(self) -> list[dict]:
        return [r.as_dict() for r in self.records]


@dataclass
class FormattedTask:
    current_request: str
    relevant_history: list[str] = field(default_factory=list)

    @property
    def text(self) -> str:
        if not self.relevant_history:
            return self.current_request
        ctx = "\n".join(f"- {item}" for item in self.relevant_history)
        return f"{self.current_request}\nRelevant context from history:\n{ctx}"


@dataclass
class Translation:
    translated_query: str
    language: str


@dataclass
class PastStep:
    tool: str
    task: str
    result: str

    def render(self) -> str:
        return f"({self.tool}, {self.task}) -> {self.result}"


@dataclass
class ChatTurn:
    user_input: str
    language: str
    final_report: str
    trace: TurnTrace
    usage: TokenUsage
    latency: float
    cost: Decimal


ChatHistory = list  # of (user_input, final_report) pairs


def _digest(text: str) -> str:
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def render_history(history: ChatHistory) -> str:
    if not history:
        return "(no previous conversation)"
    lines = []
    for user, reply in history:
        lines.append(f"User: {user}")
        lines.append(f"Assistant: {reply}")
    return "\n".join(lines)


@dataclass
class EngineConfig:
    model_id: str = "default"
    replan_cap: int = 5
    react_cap: int = 6
    # 0 for routing stages so decisions are stable, 0.7 elsewhere
    routing_temperature: float = 0.0
    creative_temperature: float = 0.7
    debug_prompts: bool = False


class ChatEngine:
    def __init__(self, gateway: Gateway, tool_context: ToolContext,
                 config: EngineConfig = None):
        self.gateway = gateway
        self.tools = tool_context
        self.config = config or EngineConfig()

    # -- gateway helpers -----------------------------------------------------

    def _call(self, stage: str, prompt: str, trace: TurnTrace,
              temperature: float = None) -> str:
        request = CompletionRequest(
            model_id=self.config.model_id, stage=stage,
            temperature=self.config.creative_temperature
            if temperature is None else temperature,
            messages=(ChatMessage("user", prompt),),
        )
        start = time.monotonic()
        text, _, _ = self.gateway.complete(request)
        trace.add(StageRecord(
            stage=stage, prompt_digest=_digest(prompt), raw_output=text,
            duration=time.monotonic() - start,
            prompt_full=prompt if self.config.debug_prompts else None,
        ))
        return text

    def _call_structured(self, stage: str, prompt: str, schema_id: str,
                         trace: TurnTrace, temperature: float = 0.0):
        request = CompletionRequest(
            model_id=self.config.model_id, stage=stage, schema_id=schema_id,
            temperature=temperature,
            messages=(ChatMessage("user", prompt),),
        )
        start = time.monotonic()
        value, raw = self.gateway.complete_structured(request)
        trace.add(StageRecord(
            stage=stage, prompt_digest=_digest(prompt), raw_output=raw,
            duration=time.monotonic() - start,
            prompt_full=prompt if self.config.debug_prompts else None,
        ))
        return value

    # -- pipeline stages -----------------------------------------------------

    def format_task(self, user_input: str, history: ChatHistory,
                    trace: TurnTrace) -> FormattedTask:
        prompt = render_template("task_formatter", input=user_input,
                                 conversation_history=render_history(history))
        text = self._call("format", prompt, trace)
        return parse_formatted_task(text, fallback=user_input)

    def translate(self, task: FormattedTask, trace: TurnTrace) -> Translation:
        prompt = render_template(
            "translator", input=task.text,
            format_instructions=FORMAT_INSTRUCTIONS["translation"])
        try:
            value = self._call_structured("translate", prompt, "translation",
                                          trace)
            return Translation(value["translated_query"], value["language"])
        except (ParseError, GatewayError):
            trace.add(StageRecord(stage="translate",
                                  flags=("parse-fallback-english",)))
            return Translation(task.text, "English")

    def classify(self, translation: Translation, history: ChatHistory,
                 trace: TurnTrace) -> Category:
        prompt = render_template(
            "classifier", input=translation.translated_query,
            conversation_history=render_history(history),
            format_instructions=FORMAT_INSTRUCTIONS["category"])
        try:
            return self._call_structured("classify", prompt, "category", trace)
        except (ParseError, GatewayError):
            # the classifier prompt's own stated default
            trace.add(StageRecord(stage="classify",
                                  flags=("parse-default-no_injection",)))
            return Category.NO_INJECTION

    def run_react(self, task: Translation, trace: TurnTrace) -> str:
        observations: list[str] = []
        for _ in range(self.config.react_cap):
            obs_text = ""
            if observations:
                obs_text = "Observations so far:\n" + "\n".join(observations)
            prompt = render_template("react", input=task.translated_query,
                                     observations=obs_text)
            text = self._call("react", prompt, trace)
            action = re.match(r'\s*ACTION:\s*internet_search\["(.*)"\]', text,
                              re.DOTALL)
            if action:
                result = invoke("internet_search", action.group(1), self.tools)
                trace.add(StageRecord(stage="react", tool="internet_search",
                                      raw_output=result.text))
                observations.append(result.text)
                continue
            final = re.match(r"\s*FINAL:\s*(.*)", text, re.DOTALL)
            return final.group(1).strip() if final else text.strip()
        trace.add(StageRecord(stage="react", flags=("iteration-cap",)))
        if observations:
            return ("Based on what I could find:\n" + "\n".join(observations))
        return "I could not settle on an answer within the allotted steps."

    def plan(self, task: Translation, trace: TurnTrace,
             stage: str = "plan") -> list[tuple[str, str]]:
        prompt = render_template(
            "planner", input=task.translated_query,
            format_instructions=FORMAT_INSTRUCTIONS["plan"])
        try:
            return self._call_structured(stage, prompt, "plan", trace)
        except (ParseError, GatewayError):
            trace.add(StageRecord(stage=stage, flags=("fallback-plan",)))
            return [("llm_infer", task.translated_query)]

    def replan(self, task: Translation, original_plan: list,
               past: list[PastStep], trace: TurnTrace) -> list[tuple[str, str]]:
        prompt = render_template(
            "replanner", input=task.translated_query,
            plan=render_plan(original_plan),
            past_steps=render_past(past),
            format_instructions=FORMAT_INSTRUCTIONS["plan"])
        try:
            return self._call_structured("replan", prompt, "plan", trace)
        except (ParseError, GatewayError):
            trace.add(StageRecord(stage="replan", flags=("fallback-plan",)))
            return [("llm_infer", task.translated_query)]

    def execute_step(self, remaining: list[tuple[str, str]],
                     trace: TurnTrace) -> PastStep:
        """Execute exactly the first remaining step; never combine steps."""
        tool, subtask = remaining[0]
        start = time.monotonic()
        try:
            result: ToolResult = invoke(tool, subtask, self.tools)
            text = result.text
        except DispatchError:
            text = OUT_OF_SCOPE
        except Exception as err:
            text = f"Tool {tool} failed: {err}"
        trace.add(StageRecord(stage="execute", tool=tool, raw_output=text,
                              duration=time.monotonic() - start))
        return PastStep(tool, subtask, text)

    def supervise(self, task: Translation, plan: list, past: list[PastStep],
                  trace: TurnTrace) -> Decision:
        prompt = render_template(
            "supervisor", input=task.translated_query,
            plan=render_plan(plan), past_steps=render_past(past),
            format_instructions=FORMAT_INSTRUCTIONS["decision"])
        try:
            return self._call_structured("supervise", prompt, "decision", trace)
        except (ParseError, GatewayError):
            trace.add(StageRecord(stage="supervise",
                                  flags=("parse-default-replan",)))
            return Decision.REPLAN

    def report(self, input_eng: str, payload, language: str, mode: str,
               trace: TurnTrace) -> str:
        if mode == "general":
            if language == "English":
                # no translation round-trip for English input
                trace.add(StageRecord(stage="report",
                                      flags=("english-passthrough",)))
                return payload
            prompt = render_template("reporter_general", input_eng=input_eng,
                                     response=payload, language=language)
        else:
            prompt = render_template("reporter_injection", input_eng=input_eng,
                                     past_steps=render_past(payload),
                                     language=language)
        try:
            return self._call("report", prompt, trace).strip()
        except GatewayError:
            trace.add(StageRecord(stage="report", flags=("gateway-failure",)))
            if mode == "general":
                return payload
            return "\n".join(step.result for step in payload)

    # -- the full turn -------------------------------------------------------

    def run_turn(self, user_input: str, history: ChatHistory) -> ChatTurn:
        """Run one turn and append (input, report) to the history."""
        trace = TurnTrace()
        start = time.monotonic()
        meter_before = len(self.gateway.meter.records)

        if not user_input.strip():
            report = CLARIFICATION_REPORT
            language = "English"
        else:
            try:
                report, language = self._pipeline(user_input, history, trace)
            except Exception as err:  # terminal stage error
                log.exception("turn failed")
                trace.add(StageRecord(stage="error", raw_output=str(err)))
                report, language = ERROR_REPORT, "English"

        latency = time.monotonic() - start
        usage, cost = TokenUsage(), Decimal(0)
        for rec in self.gateway.meter.records[meter_before:]:
            usage = usage + rec.usage
            cost += rec.cost
        history.append((user_input, report))
        return ChatTurn(user_input=user_input, language=language,
                        final_report=report, trace=trace, usage=usage,
                        latency=latency, cost=cost)

    def _pipeline(self, user_input: str, history: ChatHistory,
                  trace: TurnTrace) -> tuple[str, str]:
        task = self.format_task(user_input, history, trace)
        translation = self.translate(task, trace)
        category = self.classify(translation, history, trace)

        if category is Category.NO_INJECTION:
            answer = self.run_react(translation, trace)
            report = self.report(translation.translated_query, answer,
                                 translation.language, "general", trace)
            return report, translation.language

        original_plan = self.plan(translation, trace)
        remaining = list(original_plan)
        past: list[PastStep] = []
        replans = 0
        while True:
            if not remaining:
                remaining = self.replan(translation, original_plan, past, trace)
                replans += 1
            past.append(self.execute_step(remaining, trace))
            remaining = remaining[1:]
            decision = self.supervise(translation, original_plan, past, trace)
            if decision is Decision.RESPOND:
                break
            if replans >= self.config.replan_cap:
                trace.add(StageRecord(stage="supervise",
                                      flags=("forced-respond-replan-cap",)))
                break
            remaining = self.replan(translation, original_plan, past, trace)
            replans += 1
        report = self.report(translation.translated_query, past,
                             translation.language, "injection", trace)
        return report, translation.language


# ---------------------------------------------------------------------------
# rendering / parsing helpers


def render_plan(plan: list[tuple[str, str]]) -> str:
    return "\n".join(f"{i + 1}. ({tool}, {task})"
                     for i, (tool, task) in enumerate(plan))


def render_past(past: list[PastStep]) -> str:
    if not past:
        return "(none)"
    return "\n".join(f"{i + 1}. {step.render()}" for i, step in enumerate(past))


def parse_formatted_task(text: str, fallback: str) -> FormattedTask:
    current = fallback
    m = re.search(r"User's Current Request:\s*\n?(.*?)(?:\n\s*-\s*Relevant "
                  r"Information|\Z)", text, re.DOTALL)
    if m and m.group(1).strip():
        current = m.group(1).strip().lstrip("- ").strip()
    relevant: list[str] = []
    m = re.search(r"Relevant Information from Conversation History:\s*(.*)",
                  text, re.DOTALL)
    if m:
        for line in m.group(1).splitlines():
            item = line.strip().lstrip("-").strip()
            if item and not item.lower().startswith("(none"):
                relevant.append(item)
    return FormattedTask(current, relevant)
