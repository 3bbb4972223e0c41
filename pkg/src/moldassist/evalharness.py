"""Offline evaluation: task suites, LLM-as-judge scoring, Pearson agreement,
and latency/cost aggregation into machine- and human-readable reports."""

from __future__ import annotations

import json
import logging
import statistics
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Optional

from .gateway import ChatMessage, CompletionRequest, Gateway, ParseError
from .orchestrator import ChatTurn
from .templates import render_template

log = logging.getLogger(__name__)

CATEGORIES = ("table", "manual", "diffusion", "general",
              "diffusion+table", "diffusion+manual", "diffusion+search")
HYBRID_CATEGORIES = tuple(c for c in CATEGORIES if "+" in c)


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class EvalTask:
    id: str
    query: str
    category: str
    expected_tools: frozenset = frozenset()

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category: {self.category}")
        if self.category in HYBRID_CATEGORIES and len(self.expected_tools) < 2:
            raise ValueError("hybrid categories expect at least 2 tools")


@dataclass
class JudgeScore:
    relevance_comment: str
    accuracy_comment: str
    rating: int

    def __post_init__(self):
        if not 0 <= self.rating <= 10:
            raise ValueError("rating must be in [0, 10]")


@dataclass
class EvalRecord:
    task_id: str
    category: str
    answer: str = ""
    tools_used: set = field(default_factory=set)
    expected_tools: frozenset = frozenset()
    latency: float = 0.0
    input_tokens: int = 0
    output_tokens: int = 0
    cost: Decimal = Decimal(0)
    judge: Optional[JudgeScore] = None
    human: Optional[float] = None
    failed: bool = False
    error: str = ""

    @property
    def tool_miss(self) -> bool:
        """Flagged iff expected_tools is not a subset of tools_used."""
        return not self.expected_tools <= self.tools_used


def load_suite(path: str) -> list[EvalTask]:
    with open(path) as fh:
        raw = json.load(fh)
    return [EvalTask(t["id"], t["query"], t["category"],
                     frozenset(t.get("expected_tools", []))) for t in raw]


def load_human_scores(path: str) -> dict[str, float]:
    with open(path) as fh:
        return {k: float(v) for k, v in json.load(fh).items()}


def run_suite(tasks: list[EvalTask],
              run_query: Callable[[str], ChatTurn],
              judge_gateway: Gateway = None,
              human_scores: dict[str, float] = None) -> list[EvalRecord]:
    """One record per task, in task-id order; per-task failures are recorded
    and never abort the suite."""
    records = []
    for task in sorted(tasks, key=lambda t: t.id):
        record = EvalRecord(task_id=task.id, category=task.category,
                            expected_tools=task.expected_tools)
        try:
            turn = run_query(task.query)
            record.answer = turn.final_report
            record.tools_used = turn.trace.tools_used
            record.latency = turn.latency
            record.input_tokens = turn.usage.input_tokens
            record.output_tokens = turn.usage.output_tokens
            record.cost = turn.cost
        except Exception as err:
            log.exception("task %s failed", task.id)
            record.failed = True
            record.error = str(err)
            records.append(record)
            continue
        if judge_gateway is not None:
            try:
                record.judge = judge(task.query, record.answer, judge_gateway)
            except (ParseError, ValueError) as err:
                record.error = f"judge parse failure: {err}"
        if human_scores and task.id in human_scores:
            record.human = human_scores[task.id]
        records.append(record)
    return records


def judge(question: str, answer: str, gateway: Gateway,
          model_id: str = "default") -> JudgeScore:
    prompt = render_template("judge", question=question, answer=answer)
    request = CompletionRequest(
        model_id=model_id, stage="judge", schema_id="judge_score",
        messages=(ChatMessage("user", prompt),),
    )
    value, _ = gateway.complete_structured(request)
    return JudgeScore(value["relevance_comment"], value["accuracy_comment"],
                      value["rating"])


def pearson(xs: list[float], ys: list[float]) -> float:
    """Sample Pearson correlation coefficient."""
    if len(xs) != len(ys) or len(xs) < 2:
        raise EvalError("need two equal-length series of length >= 2")
    try:
        return statistics.correlation(xs, ys)
    except statistics.StatisticsError as err:
        raise EvalError(f"undefined correlation: {err}") from None


@dataclass
class CategoryRow:
    category: str
    n: int
    mean_rating: Optional[float]
    stddev_rating: Optional[float]
    mean_latency: float
    mean_cost: Decimal
    tool_miss_rate: float


@dataclass
class SuiteReport:
    rows: list[CategoryRow]
    total_cost: Decimal
    n_records: int
    n_failed: int

    def as_dict(self) -> dict:
        return {
            "total_cost": str(self.total_cost),
            "n_records": self.n_records,
            "n_failed": self.n_failed,
            "categories": [
                {"category": r.category, "n": r.n,
                 "mean_rating": r.mean_rating,
                 "stddev_rating": r.stddev_rating,
                 "mean_latency": r.mean_latency,
                 "mean_cost": str(r.mean_cost),
                 "tool_miss_rate": r.tool_miss_rate}
                for r in self.rows
            ],
        }

    def render_table(self) -> str:
        header = (f"{'category':<18}{'n':>4}{'rating':>9}{'stddev':>9}"
                  f"{'latency':>10}{'cost':>12}{'miss':>7}")
        lines = [header, "-" * len(header)]
        for r in self.rows:
            rating = f"{r.mean_rating:.2f}" if r.mean_rating is not None else "-"
            sd = f"{r.stddev_rating:.2f}" if r.stddev_rating is not None else "-"
            lines.append(f"{r.category:<18}{r.n:>4}{rating:>9}{sd:>9}"
                         f"{r.mean_latency:>10.3f}{str(r.mean_cost):>12}"
                         f"{r.tool_miss_rate:>7.2f}")
        lines.append(f"records: {self.n_records}  failed: {self.n_failed}  "
                     f"total cost: {self.total_cost}")
        return "\n".join(lines)


def aggregate(records: list[EvalRecord]) -> SuiteReport:
    """Per-category means ordered by category name."""
    by_cat: dict[str, list[EvalRecord]] = {}
    for rec in records:
        by_cat.setdefault(rec.category, []).append(rec)
    rows = []
    for category in sorted(by_cat):
        group = by_cat[category]
        ratings = [r.judge.rating for r in group if r.judge is not None]
        rows.append(CategoryRow(
            category=category,
            n=len(group),
            mean_rating=statistics.mean(ratings) if ratings else None,
            stddev_rating=(statistics.stdev(ratings) if len(ratings) > 1
                           else (0.0 if ratings else None)),
            mean_latency=statistics.mean([r.latency for r in group]),
            mean_cost=sum((r.cost for r in group), Decimal(0)) / len(group),
            tool_miss_rate=sum(r.tool_miss for r in group) / len(group),
        ))
    total_cost = sum((r.cost for r in records), Decimal(0))
    return SuiteReport(rows=rows, total_cost=total_cost,
                       n_records=len(records),
                       n_failed=sum(r.failed for r in records))


def write_reports(report: SuiteReport, records: list[EvalRecord],
                  json_path: str, text_path: str) -> None:
    payload = report.as_dict()
    payload["records"] = [
        {"task_id": r.task_id, "category": r.category, "answer": r.answer,
         "tools_used": sorted(r.tools_used),
         "expected_tools": sorted(r.expected_tools),
         "tool_miss": r.tool_miss, "latency": r.latency,
         "input_tokens": r.input_tokens, "output_tokens": r.output_tokens,
         "cost": str(r.cost),
         "rating": r.judge.rating if r.judge else None,
         "human": r.human, "failed": r.failed, "error": r.error}
        for r in records
    ]
    with open(json_path, "w") as fh:
        json.dump(payload, fh, indent=2)
    with open(text_path, "w") as fh:
        fh.write(report.render_table() + "\n")
