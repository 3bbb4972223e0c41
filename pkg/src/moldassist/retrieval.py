"""Knowledge ingestion, embedding, exact cosine search and MMR re-selection.

Two knowledge sources: a troubleshooting table (defect rows rendered as
direction and priority chunks) and a machine manual (one chunk per page).
Retrieval is exact over the whole store; MMR greedily re-selects a diverse
subset from the top candidates.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from .gateway import ChatMessage, CompletionRequest, Gateway
from .templates import render_template

log = logging.getLogger(__name__)

TABLE_REFUSAL = "I cannot answer that query because the defect type is not specific."
MANUAL_REFUSAL = "The manual does not contain the information you mentioned about."


class RetrievalError(Exception):
    pass


class IngestError(RetrievalError):
    pass


@dataclass(frozen=True)
class Chunk:
    id: int
    text: str
    source: str  # table_direction | table_priority | manual_page | web
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.text:
            raise ValueError("chunk text must be non-empty")
        if self.source == "manual_page" and self.meta.get("page", 0) < 1:
            raise ValueError("manual_page chunk needs a page number >= 1")


@dataclass(frozen=True)
class MMRConfig:
    lam: float = 0.5
    candidate_k: int = 20
    select_n: int = 7

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must be in [0, 1]")
        if self.select_n > self.candidate_k:
            raise ValueError("select_n must be <= candidate_k")


class HashedEmbedder:
    """Deterministic test embedder: hashed token-frequency projection.

    Tokens are hashed (stable across processes) to one of d buckets with a
    +/-1 sign; counts are accumulated and L2-normalized. Remote embedders
    plug in behind the same embed()/fingerprint interface.
    """

    def __init__(self, dim: int = 256):
        self.dim = dim

    @property
    def fingerprint(self) -> str:
        return f"hashed-tf-v1-d{self.dim}"

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dim)
        for token in re.findall(r"[a-z0-9]+", text.lower()):
            digest = hashlib.sha256(token.encode()).digest()
            bucket = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0:
            # all-punctuation text still needs a valid unit vector
            vec[0] = 1.0
            norm = 1.0
        return vec / norm


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise RetrievalError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


class VectorStore:
    """Parallel chunk/vector arrays with exact cosine search."""

    def __init__(self, embedder: HashedEmbedder):
        self.embedder = embedder
        self.chunks: list[Chunk] = []
        self._vectors: list[np.ndarray] = []

    def add(self, chunk: Chunk) -> None:
        self.chunks.append(chunk)
        self._vectors.append(self.embedder.embed(chunk.text))

    def add_all(self, chunks: list[Chunk]) -> None:
        for chunk in chunks:
            self.add(chunk)

    def __len__(self) -> int:
        return len(self.chunks)

    @property
    def matrix(self) -> np.ndarray:
        return np.stack(self._vectors) if self._vectors else np.zeros((0, self.embedder.dim))

    def vector_of(self, idx: int) -> np.ndarray:
        return self._vectors[idx]

    def top_k(self, query_vec: np.ndarray, k: int,
              source: str | None = None) -> list[tuple[Chunk, float]]:
        """k highest-cosine chunks, descending; ties broken by lower id."""
        if k < 1:
            raise RetrievalError("k must be >= 1")
        if not self.chunks:
            raise RetrievalError("store is empty")
        scored = [
            (chunk, cosine(vec, query_vec))
            for chunk, vec in zip(self.chunks, self._vectors)
            if source is None or chunk.source == source
            or (source == "table" and chunk.source.startswith("table_"))
        ]
        scored.sort(key=lambda cs: (-cs[1], cs[0].id))
        return scored[:k]

    def save(self, path: str) -> None:
        payload = {
            "version": 1,
            "fingerprint": self.embedder.fingerprint,
            "dim": self.embedder.dim,
            "chunks": [
                {"id": c.id, "text": c.text, "source": c.source, "meta": c.meta}
                for c in self.chunks
            ],
            "vectors": [vec.tolist() for vec in self._vectors],
        }
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path: str, embedder: HashedEmbedder) -> "VectorStore":
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("version") != 1:
            raise RetrievalError(f"unsupported store version: {payload.get('version')}")
        if payload["fingerprint"] != embedder.fingerprint:
            raise RetrievalError(
                f"embedder fingerprint mismatch: store has {payload['fingerprint']!r}, "
                f"query embedder is {embedder.fingerprint!r}"
            )
        store = cls(embedder)
        for rec, vec in zip(payload["chunks"], payload["vectors"]):
            store.chunks.append(Chunk(rec["id"], rec["text"], rec["source"], rec["meta"]))
            store._vectors.append(np.asarray(vec))
        return store


# ---------------------------------------------------------------------------
# Ingestion


def _read_csv_grid(path: str) -> tuple[list[str], dict[str, list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or len(rows[0]) < 2:
        raise IngestError(f"{path}: expected header of defect column + parameters")
    params = [h.strip() for h in rows[0][1:]]
    grid: dict[str, list[str]] = {}
    for row in rows[1:]:
        if not row or not row[0].strip():
            continue
        grid[row[0].strip()] = [c.strip() for c in row[1:]]
    return params, grid


def ingest_table(direction_csv: str, priority_csv: str) -> list[Chunk]:
    """One direction chunk and one priority chunk per defect row."""
    d_params, d_grid = _read_csv_grid(direction_csv)
    p_params, p_grid = _read_csv_grid(priority_csv)
    if d_params != p_params:
        raise IngestError(
            f"parameter columns differ: {sorted(set(d_params) ^ set(p_params))}"
        )
    if set(d_grid) != set(p_grid):
        raise IngestError(f"defect rows differ: {sorted(set(d_grid) ^ set(p_grid))}")

    chunks: list[Chunk] = []
    next_id = 0
    for defect in d_grid:
        directions, priorities = d_grid[defect], p_grid[defect]
        parts = []
        for param, cell in zip(d_params, directions):
            if cell not in ("+", "-", ""):
                raise IngestError(f"{defect}/{param}: direction cell {cell!r} "
                                  "must be '+', '-' or blank")
            if cell:
                word = "increase" if cell == "+" else "decrease"
                parts.append(f"{param}: {cell} ({word})")
        text = (f"Defect: {defect}. Process parameter adjustment directions: "
                + ("; ".join(parts) if parts else "none documented") + ".")
        chunks.append(Chunk(next_id, text, "table_direction", {"defect": defect}))
        next_id += 1

        parts = []
        for param, cell in zip(p_params, priorities):
            if not cell:
                continue
            try:
                pr = int(cell)
            except ValueError:
                raise IngestError(f"{defect}/{param}: priority {cell!r} is not an integer") from None
            if pr <= 0:
                raise IngestError(f"{defect}/{param}: priority must be positive")
            parts.append(f"{param}: priority {pr}")
        text = (f"Defect: {defect}. Adjustment priorities (1 = highest importance): "
                + ("; ".join(parts) if parts else "none documented") + ".")
        chunks.append(Chunk(next_id, text, "table_priority", {"defect": defect}))
        next_id += 1
    return chunks


def ingest_manual(pages_file: str, id_offset: int = 0) -> list[Chunk]:
    """One chunk per page from a newline-delimited {page, content} file."""
    records = []
    with open(pages_file) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    pages_seen: set[int] = set()
    chunks: list[Chunk] = []
    for rec in sorted(records, key=lambda r: r["page"]):
        page = int(rec["page"])
        if page < 1:
            raise IngestError(f"non-positive page number: {page}")
        if page in pages_seen:
            raise IngestError(f"duplicate page number: {page}")
        pages_seen.add(page)
        content = (rec.get("content") or "").strip()
        if not content:
            log.warning("skipping empty manual page %d", page)
            continue
        chunks.append(Chunk(id_offset + len(chunks), content, "manual_page",
                            {"page": page}))
    return chunks


# ---------------------------------------------------------------------------
# MMR


def mmr_select(candidates: list[tuple[Chunk, np.ndarray]], query_vec: np.ndarray,
               config: MMRConfig) -> list[Chunk]:
    """Greedy maximal-marginal-relevance selection.

    At each step picks the remaining candidate maximizing
    lam * sim(D_i, Q) - (1 - lam) * max_{D_j in S} sim(D_i, D_j),
    with the diversity term 0 while the selected set is empty. Ties are
    broken by higher query similarity, then lower chunk id.
    """
    if not candidates:
        raise RetrievalError("no candidates")
    remaining = list(candidates)
    query_sims = {c.id: cosine(v, query_vec) for c, v in candidates}
    selected: list[tuple[Chunk, np.ndarray]] = []
    n = min(config.select_n, len(candidates))
    while len(selected) < n:
        best = None
        best_key = None
        for chunk, vec in remaining:
            rel = query_sims[chunk.id]
            div = max((cosine(vec, sv) for _, sv in selected), default=0.0)
            score = config.lam * rel - (1.0 - config.lam) * div
            key = (score, rel, -chunk.id)
            if best_key is None or key > best_key:
                best, best_key = (chunk, vec), key
        selected.append(best)
        remaining.remove(best)
    return [chunk for chunk, _ in selected]


# ---------------------------------------------------------------------------
# Retrieval tools


@dataclass
class RetrievalResult:
    text: str
    candidate_count: int
    selected_count: int
    chunks: list[Chunk]
    refused: bool = False


def retrieve_table(subtask: str, store: VectorStore, gateway: Gateway,
                   model_id: str = "default") -> RetrievalResult:
    """Top-2 table chunks summarized into a priority-ordered adjustment list."""
    query_vec = store.embedder.embed(subtask)
    hits = store.top_k(query_vec, 2, source="table")
    context = "\n\n".join(chunk.text for chunk, _ in hits)
    prompt = render_template("table_summary", context=context, subtask=subtask)
    request = CompletionRequest(
        model_id=model_id, stage="table_summary",
        messages=(ChatMessage("user", prompt),),
    )
    summary, _, _ = gateway.complete(request)
    refused = TABLE_REFUSAL in summary
    text = summary if refused else f"Subtask: {subtask}\n{summary}"
    return RetrievalResult(text, candidate_count=len(hits), selected_count=len(hits),
                           chunks=[c for c, _ in hits], refused=refused)


def retrieve_manual(subtask: str, store: VectorStore, gateway: Gateway,
                    model_id: str = "default",
                    config: MMRConfig = MMRConfig(),
                    min_cosine: float = 0.15) -> RetrievalResult:
    """Top-20 by cosine, MMR-select 7, summarize with page references."""
    query_vec = store.embedder.embed(subtask)
    hits = store.top_k(query_vec, config.candidate_k, source="manual_page")
    if not hits or hits[0][1] < min_cosine:
        return RetrievalResult(MANUAL_REFUSAL, candidate_count=len(hits),
                               selected_count=0, chunks=[], refused=True)
    pos = {chunk.id: i for i, chunk in enumerate(store.chunks)}
    candidates = [(chunk, store.vector_of(pos[chunk.id])) for chunk, _ in hits]
    selected = mmr_select(candidates, query_vec, config)
    context = "\n\n".join(
        f"[page {c.meta['page']}]\n{c.text}" for c in selected
    )
    prompt = render_template("manual_summary", context=context, subtask=subtask)
    request = CompletionRequest(
        model_id=model_id, stage="manual_summary",
        messages=(ChatMessage("user", prompt),),
    )
    summary, _, _ = gateway.complete(request)
    refused = MANUAL_REFUSAL in summary
    text = summary if refused else f"Subtask: {subtask}\n{summary}"
    return RetrievalResult(text, candidate_count=len(hits),
                           selected_count=len(selected), chunks=selected,
                           refused=refused)
