"""The five-tool registry used by the executor.

Tools never abort a turn: failures surface as result text for the
supervisor to judge. The diffusion tool is fronted by an LLM input
formatter that extracts the four environment readings and the product
class from the subtask text, never guessing missing values.
"""

from __future__ import annotations

import json
import re
import time
from dataclasses import dataclass
from typing import Optional

import requests

from .gateway import (
    ChatMessage,
    CompletionRequest,
    FORMAT_INSTRUCTIONS,
    Gateway,
    GatewayError,
    TOOL_NAMES,
)
from .templates import render_template
from . import retrieval
from . import surrogate as surrogate_mod
from .diffusion import EnvCondition, generate_candidates
from .diffusion.types import TEMP_BOUNDS

OUT_OF_SCOPE = "This is out of my scope. Please specify the task."

ENV_FIELD_LABELS = {
    "machine_temperature": "machine temperature",
    "machine_humidity": "machine humidity",
    "factory_temperature": "factory temperature",
    "factory_humidity": "factory humidity",
}


class DispatchError(Exception):
    pass


class ToolUnavailableError(Exception):
    pass


@dataclass(frozen=True)
class DiffusionInputs:
    machine_temperature: Optional[float] = None
    machine_humidity: Optional[float] = None
    factory_temperature: Optional[float] = None
    factory_humidity: Optional[float] = None
    cls: Optional[int] = None

    def missing_env_fields(self) -> list[str]:
        return [name for name in ENV_FIELD_LABELS
                if getattr(self, name) is None]


@dataclass
class ToolResult:
    tool: str
    text: str
    artifacts: Optional[dict] = None
    elapsed: float = 0.0

    def __post_init__(self):
        if not self.text:
            raise ValueError("tool result text must be non-empty")


def format_diffusion_input(subtask: str, gateway: Gateway,
                           model_id: str = "default") -> DiffusionInputs:
    """Extract the five diffusion inputs from the subtask text.

    Values absent from the text stay None; class defaults to good (0)
    unless the text reports a defect incident. A parse failure after the
    reformat retry yields all-null inputs, which forces a clarification
    downstream.
    """
    prompt = render_template(
        "diffusion_formatter", input=subtask,
        format_instructions=FORMAT_INSTRUCTIONS["diffusion_inputs"])
    request = CompletionRequest(
        model_id=model_id, stage="diffusion_formatter",
        schema_id="diffusion_inputs",
        messages=(ChatMessage("user", prompt),),
    )
    try:
        parsed, _ = gateway.complete_structured(request)
    except GatewayError:
        return DiffusionInputs()
    cls = parsed["class"]
    return DiffusionInputs(
        machine_temperature=parsed["machine_temperature"],
        machine_humidity=parsed["machine_humidity"],
        factory_temperature=parsed["factory_temperature"],
        factory_humidity=parsed["factory_humidity"],
        cls=0 if cls is None else int(cls),
    )


def run_diffusion_tool(inputs: DiffusionInputs, model, surrogate_model,
                       n_candidates: int = 64, guidance: float = 3.0,
                       seed: int = 0) -> ToolResult:
    """Generate candidates, rank with the surrogate, report the best.

    Incomplete environment inputs produce a missing-field report naming
    exactly the null fields rather than an error.
    """
    start = time.monotonic()
    missing = inputs.missing_env_fields()
    if missing:
        labels = ", ".join(ENV_FIELD_LABELS[m] for m in missing)
        text = (f"Cannot generate process parameters yet: missing required "
                f"environment inputs: {labels}. The diffusion model strictly "
                f"needs machine temperature, machine humidity, factory "
                f"temperature, and factory humidity.")
        return ToolResult("diffusion_model", text,
                          artifacts={"missing": missing},
                          elapsed=time.monotonic() - start)
    if model is None or surrogate_model is None:
        raise ToolUnavailableError(
            "diffusion checkpoint or surrogate model is not loaded")

    warnings = []
    for name in ("machine_temperature", "factory_temperature"):
        v = getattr(inputs, name)
        if not TEMP_BOUNDS[0] <= v <= TEMP_BOUNDS[1]:
            warnings.append(f"{ENV_FIELD_LABELS[name]} {v} outside plausible "
                            f"bounds {TEMP_BOUNDS}")
    for name in ("machine_humidity", "factory_humidity"):
        v = getattr(inputs, name)
        if not 0.0 <= v <= 100.0:
            warnings.append(f"{ENV_FIELD_LABELS[name]} {v} outside [0, 100]")

    env = EnvCondition(
        cls=inputs.cls or 0,
        factory_temperature=_squeeze(inputs.factory_temperature, TEMP_BOUNDS),
        factory_humidity=_squeeze(inputs.factory_humidity, (0.0, 100.0)),
        machine_temperature=_squeeze(inputs.machine_temperature, TEMP_BOUNDS),
        machine_humidity=_squeeze(inputs.machine_humidity, (0.0, 100.0)),
    )
    candidates = generate_candidates(model, env, w=guidance, n=n_candidates,
                                     seed=seed)
    best, scores = surrogate_mod.rank_candidates(surrogate_model, env, candidates)
    lines = []
    if warnings:
        lines.append("Warning: " + "; ".join(warnings) + ". Generation "
                     "proceeded with the values as given.")
    lines.append("Recommended process parameters generated for the given "
                 "environmental conditions:")
    lines.append(best.render())
    return ToolResult(
        "diffusion_model", "\n".join(lines),
        artifacts={"parameters": best.as_dict(), "scores": scores,
                   "n_candidates": len(candidates)},
        elapsed=time.monotonic() - start,
    )


def _squeeze(value: float, bounds: tuple[float, float]) -> float:
    # EnvCondition validates ranges; out-of-bounds inputs were already
    # warned about, so clip just enough to run the model
    return min(max(value, bounds[0]), bounds[1])


# ---------------------------------------------------------------------------
# Web search


class FixtureSearchProvider:
    """Canned results keyed by regex pattern over the query."""

    def __init__(self, entries: list[dict]):
        self._entries = entries

    @classmethod
    def load(cls, path: str) -> "FixtureSearchProvider":
        with open(path) as fh:
            return cls(json.load(fh))

    def search(self, query: str) -> list[dict]:
        for entry in self._entries:
            if re.search(entry["pattern"], query):
                return entry["results"]
        return []


class HttpSearchProvider:
    """Minimal JSON search API client (query in, result list out)."""

    def __init__(self, endpoint: str, api_key: str = "", timeout: float = 30.0):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout

    def search(self, query: str) -> list[dict]:
        payload = {"query": query, "max_results": 5}
        if self.api_key:
            payload["api_key"] = self.api_key
        resp = requests.post(self.endpoint, json=payload, timeout=self.timeout)
        resp.raise_for_status()
        return [
            {"title": r.get("title", ""), "url": r.get("url", ""),
             "snippet": r.get("content", r.get("snippet", ""))}
            for r in resp.json().get("results", [])
        ]


def internet_search(query: str, provider, gateway: Gateway = None,
                    model_id: str = "default") -> ToolResult:
    """Run the provider and summarize the top results.

    Transport failures degrade to a result noting search unavailability so
    the pipeline can continue.
    """
    if not query:
        raise ValueError("empty search query")
    start = time.monotonic()
    try:
        results = provider.search(query)[:5]
    except Exception as err:
        return ToolResult(
            "internet_search",
            f"Web search is currently unavailable ({err}); answering from "
            "internal knowledge only.",
            artifacts={"degraded": True},
            elapsed=time.monotonic() - start,
        )
    if not results:
        return ToolResult("internet_search",
                          f"No web results found for: {query}",
                          artifacts={"results": []},
                          elapsed=time.monotonic() - start)
    listing = "\n".join(
        f"- {r['title']} ({r['url']}): {r['snippet']}" for r in results
    )
    text = listing
    if gateway is not None:
        prompt = (f"Summarize the following search results to answer the "
                  f"query.\n\nQuery: {query}\n\nResults:\n{listing}")
        request = CompletionRequest(
            model_id=model_id, stage="search_summary",
            messages=(ChatMessage("user", prompt),),
        )
        text, _, _ = gateway.complete(request)
    return ToolResult("internet_search", text,
                      artifacts={"results": results},
                      elapsed=time.monotonic() - start)


# ---------------------------------------------------------------------------
# Registry


@dataclass
class ToolContext:
    gateway: Gateway
    store: retrieval.VectorStore = None
    search_provider: object = None
    diffusion_model: object = None
    surrogate_model: object = None
    model_id: str = "default"
    mmr_config: retrieval.MMRConfig = None
    diffusion_seed: int = 0


def invoke(tool: str, subtask: str, ctx: ToolContext) -> ToolResult:
    """Dispatch the subtask to the named tool exactly once."""
    if tool not in TOOL_NAMES:
        raise DispatchError(f"unknown tool: {tool!r}")
    start = time.monotonic()

    if tool == "table_retriever":
        if ctx.store is None:
            raise ToolUnavailableError("no knowledge store configured")
        res = retrieval.retrieve_table(subtask, ctx.store, ctx.gateway,
                                       ctx.model_id)
        return ToolResult(tool, res.text,
                          artifacts={"candidate_count": res.candidate_count,
                                     "selected_count": res.selected_count,
                                     "refused": res.refused},
                          elapsed=time.monotonic() - start)

    if tool == "manual_retriever":
        if ctx.store is None:
            raise ToolUnavailableError("no knowledge store configured")
        kwargs = {}
        if ctx.mmr_config is not None:
            kwargs["config"] = ctx.mmr_config
        res = retrieval.retrieve_manual(subtask, ctx.store, ctx.gateway,
                                        ctx.model_id, **kwargs)
        return ToolResult(tool, res.text,
                          artifacts={"candidate_count": res.candidate_count,
                                     "selected_count": res.selected_count,
                                     "pages": [c.meta.get("page") for c in res.chunks],
                                     "refused": res.refused},
                          elapsed=time.monotonic() - start)

    if tool == "internet_search":
        if ctx.search_provider is None:
            raise ToolUnavailableError("no search provider configured")
        return internet_search(subtask, ctx.search_provider, ctx.gateway,
                               ctx.model_id)

    if tool == "llm_infer":
        request = CompletionRequest(
            model_id=ctx.model_id, stage="llm_infer",
            messages=(ChatMessage("user", subtask),),
        )
        text, _, _ = ctx.gateway.complete(request)
        return ToolResult(tool, text, elapsed=time.monotonic() - start)

    # diffusion_model: formatter first, then the generation pipeline
    inputs = format_diffusion_input(subtask, ctx.gateway, ctx.model_id)
    result = run_diffusion_tool(inputs, ctx.diffusion_model,
                                ctx.surrogate_model, seed=ctx.diffusion_seed)
    result.elapsed = time.monotonic() - start
    if result.artifacts is None:
        result.artifacts = {}
    result.artifacts["inputs"] = {
        "machine_temperature": inputs.machine_temperature,
        "machine_humidity": inputs.machine_humidity,
        "factory_temperature": inputs.factory_temperature,
        "factory_humidity": inputs.factory_humidity,
        "class": inputs.cls,
    }
    return result
