"""Retrieval: hashed embedder, exact search, ingestion contracts, and MMR
checked against an independent brute-force greedy oracle."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from moldassist import retrieval
from moldassist.gateway import Gateway
from moldassist.retrieval import (
    Chunk,
    HashedEmbedder,
    IngestError,
    MANUAL_REFUSAL,
    MMRConfig,
    RetrievalError,
    TABLE_REFUSAL,
    VectorStore,
    cosine,
    ingest_manual,
    ingest_table,
    mmr_select,
    retrieve_manual,
    retrieve_table,
)

from conftest import DATA, make_gateway


# ---------------------------------------------------------------------------
# embedder


def test_embedder_deterministic_unit_norm():
    emb = HashedEmbedder(64)
    a = emb.embed("injection speed priority")
    b = emb.embed("injection speed priority")
    assert np.array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0)


def test_embedder_punctuation_only_still_valid():
    emb = HashedEmbedder(16)
    v = emb.embed("!!! ???")
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_embedder_rejects_empty():
    with pytest.raises(ValueError):
        HashedEmbedder().embed("")


@given(st.text(alphabet=st.characters(min_codepoint=32, max_codepoint=1000),
               min_size=1, max_size=80))
def test_embedder_total_on_nonempty_text(text):
    v = HashedEmbedder(32).embed(text)
    assert v.shape == (32,)
    assert np.isfinite(v).all()
    assert np.linalg.norm(v) == pytest.approx(1.0)


def test_cosine_dimension_mismatch():
    with pytest.raises(RetrievalError):
        cosine(np.zeros(3), np.zeros(4))


# ---------------------------------------------------------------------------
# MMR against an independent brute-force oracle


def brute_force_mmr(vectors, query, lam, n):
    """Independent greedy evaluation: at each step scan every remaining
    index, computing lam*sim(i,Q) - (1-lam)*max_{j in S} sim(i,j) from
    scratch, keeping the best by (score, relevance, -index)."""
    remaining = list(range(len(vectors)))
    selected = []
    while remaining and len(selected) < n:
        best_idx, best_key = None, None
        for i in remaining:
            rel = float(np.dot(vectors[i], query))
            if selected:
                div = max(float(np.dot(vectors[i], vectors[j]))
                          for j in selected)
            else:
                div = 0.0
            key = (lam * rel - (1 - lam) * div, rel, -i)
            if best_key is None or key > best_key:
                best_idx, best_key = i, key
        selected.append(best_idx)
        remaining.remove(best_idx)
    return selected


def random_unit_vectors(rng, n, d):
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


@pytest.mark.parametrize("lam", [0.0, 0.3, 0.5, 0.7, 1.0])
def test_mmr_matches_brute_force_oracle(lam):
    rng = np.random.default_rng(42)
    for trial in range(200):
        n = int(rng.integers(1, 13))
        d = 8
        vecs = random_unit_vectors(rng, n, d)
        query = random_unit_vectors(rng, 1, d)[0]
        k = int(rng.integers(1, n + 1))
        candidates = [(Chunk(i, f"c{i}", "manual_page", {"page": i + 1}), vecs[i])
                      for i in range(n)]
        got = mmr_select(candidates, query, MMRConfig(lam=lam, candidate_k=n,
                                                      select_n=k))
        expected = brute_force_mmr(vecs, query, lam, k)
        assert [c.id for c in got] == expected, f"trial {trial}"


def test_mmr_lambda_one_degenerates_to_top_k():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(2, 13))
        vecs = random_unit_vectors(rng, n, 8)
        query = random_unit_vectors(rng, 1, 8)[0]
        candidates = [(Chunk(i, f"c{i}", "manual_page", {"page": i + 1}), vecs[i])
                      for i in range(n)]
        got = mmr_select(candidates, query,
                         MMRConfig(lam=1.0, candidate_k=n, select_n=n))
        rels = [float(np.dot(v, query)) for v in vecs]
        expected = sorted(range(n), key=lambda i: (-rels[i], i))
        assert [c.id for c in got] == expected


def test_mmr_duplicate_vectors_tie_break_prefers_lower_id():
    v = np.zeros(4)
    v[0] = 1.0
    candidates = [(Chunk(3, "a", "manual_page", {"page": 1}), v.copy()),
                  (Chunk(1, "b", "manual_page", {"page": 2}), v.copy()),
                  (Chunk(2, "c", "manual_page", {"page": 3}), v.copy())]
    got = mmr_select(candidates, v, MMRConfig(lam=0.5, candidate_k=3, select_n=3))
    assert [c.id for c in got] == [1, 2, 3]


def test_mmr_empty_candidates_error():
    with pytest.raises(RetrievalError):
        mmr_select([], np.zeros(4), MMRConfig())


def test_mmr_config_validation():
    with pytest.raises(ValueError):
        MMRConfig(lam=1.5)
    with pytest.raises(ValueError):
        MMRConfig(select_n=21, candidate_k=20)


# ---------------------------------------------------------------------------
# ingestion


def test_ingest_table_two_chunks_per_defect():
    chunks = ingest_table(str(DATA / "directions.csv"),
                          str(DATA / "priorities.csv"))
    assert len(chunks) == 10  # 5 defects x (direction + priority)
    assert {c.source for c in chunks} == {"table_direction", "table_priority"}
    burr_dir = next(c for c in chunks
                    if c.meta["defect"] == "Burr" and c.source == "table_direction")
    assert "Injection Speed 3: - (decrease)" in burr_dir.text
    burr_pri = next(c for c in chunks
                    if c.meta["defect"] == "Burr" and c.source == "table_priority")
    assert "Injection Speed 3: priority 5" in burr_pri.text
    assert "Injection Speed 1: priority 7" in burr_pri.text


def test_ingest_table_rejects_bad_cells(tmp_path):
    d = tmp_path / "d.csv"
    p = tmp_path / "p.csv"
    d.write_text("Defect,A,B\nBurr,+,x\n")
    p.write_text("Defect,A,B\nBurr,1,2\n")
    with pytest.raises(IngestError):
        ingest_table(str(d), str(p))
    d.write_text("Defect,A,B\nBurr,+,-\n")
    p.write_text("Defect,A,B\nBurr,1,zero\n")
    with pytest.raises(IngestError):
        ingest_table(str(d), str(p))
    p.write_text("Defect,A,B\nBurr,0,2\n")
    with pytest.raises(IngestError):
        ingest_table(str(d), str(p))


def test_ingest_table_rejects_mismatched_grids(tmp_path):
    d = tmp_path / "d.csv"
    p = tmp_path / "p.csv"
    d.write_text("Defect,A,B\nBurr,+,-\n")
    p.write_text("Defect,A,C\nBurr,1,2\n")
    with pytest.raises(IngestError):
        ingest_table(str(d), str(p))
    p.write_text("Defect,A,B\nWarping,1,2\n")
    with pytest.raises(IngestError):
        ingest_table(str(d), str(p))


def test_ingest_manual_pages_sorted_and_validated(tmp_path):
    f = tmp_path / "pages.jsonl"
    f.write_text('{"page": 3, "content": "three"}\n'
                 '{"page": 1, "content": "one"}\n'
                 '{"page": 2, "content": ""}\n')
    chunks = ingest_manual(str(f))
    assert [c.meta["page"] for c in chunks] == [1, 3]  # empty page skipped
    assert [c.id for c in chunks] == [0, 1]

    f.write_text('{"page": 1, "content": "a"}\n{"page": 1, "content": "b"}\n')
    with pytest.raises(IngestError):
        ingest_manual(str(f))
    f.write_text('{"page": 0, "content": "a"}\n')
    with pytest.raises(IngestError):
        ingest_manual(str(f))


# ---------------------------------------------------------------------------
# vector store


def test_top_k_orders_and_tie_breaks(embedder):
    store = VectorStore(embedder)
    store.add(Chunk(0, "alpha beta", "manual_page", {"page": 1}))
    store.add(Chunk(1, "alpha beta", "manual_page", {"page": 2}))  # duplicate text
    store.add(Chunk(2, "gamma delta", "manual_page", {"page": 3}))
    hits = store.top_k(embedder.embed("alpha beta"), 3)
    assert [c.id for c, _ in hits] == [0, 1, 2]
    assert hits[0][1] == pytest.approx(1.0)


def test_top_k_source_filter(knowledge_store, embedder):
    hits = knowledge_store.top_k(embedder.embed("burr defect"), 50, source="table")
    assert all(c.source.startswith("table_") for c, _ in hits)
    hits = knowledge_store.top_k(embedder.embed("mold"), 50, source="manual_page")
    assert all(c.source == "manual_page" for c, _ in hits)


def test_top_k_contract_errors(embedder):
    store = VectorStore(embedder)
    with pytest.raises(RetrievalError):
        store.top_k(np.zeros(embedder.dim), 1)
    store.add(Chunk(0, "x", "web"))
    with pytest.raises(RetrievalError):
        store.top_k(np.zeros(embedder.dim), 0)


def test_store_save_load_bit_exact(knowledge_store, embedder, tmp_path):
    path = tmp_path / "store.json"
    knowledge_store.save(str(path))
    loaded = VectorStore.load(str(path), embedder)
    assert len(loaded) == len(knowledge_store)
    assert loaded.chunks == knowledge_store.chunks
    assert np.array_equal(loaded.matrix, knowledge_store.matrix)


def test_store_load_rejects_wrong_fingerprint(knowledge_store, tmp_path):
    path = tmp_path / "store.json"
    knowledge_store.save(str(path))
    with pytest.raises(RetrievalError, match="fingerprint"):
        VectorStore.load(str(path), HashedEmbedder(128))


# ---------------------------------------------------------------------------
# retrieval tools (scripted summarizer)


def test_retrieve_table_uses_exactly_two_chunks(knowledge_store):
    res = retrieve_table("burr defect adjustment directions and priorities",
                         knowledge_store, make_gateway())
    assert res.candidate_count == 2
    assert res.selected_count == 2
    assert len(res.chunks) == 2
    assert not res.refused
    assert "Injection Speed 3" in res.text


def test_retrieve_table_refusal_sentinel(knowledge_store):
    res = retrieve_table("something vague happened", knowledge_store,
                         make_gateway())
    assert res.refused
    assert res.text == TABLE_REFUSAL


def test_retrieve_manual_candidate_and_selection_counts(knowledge_store):
    res = retrieve_manual("recommended mold temperature range for ABS",
                          knowledge_store, make_gateway())
    assert res.candidate_count <= 20
    assert res.selected_count <= 7
    assert res.candidate_count == 20  # 22-page corpus fills the candidate pool
    assert res.selected_count == 7
    assert not res.refused
    assert "40~60" in res.text
    assert all(c.source == "manual_page" for c in res.chunks)


def test_retrieve_manual_refuses_disjoint_vocabulary(knowledge_store):
    res = retrieve_manual("qwxy zzyzx", knowledge_store,
                          make_gateway())
    assert res.refused
    assert res.text == MANUAL_REFUSAL
    assert res.selected_count == 0


def test_retrieve_manual_summary_refusal_detected(knowledge_store):
    # high keyword overlap but the scripted summarizer finds nothing: the
    # fallback summary rule answers with the refusal sentinel
    res = retrieve_manual("the machine the mold the oil", knowledge_store,
                          make_gateway())
    assert res.refused
    assert MANUAL_REFUSAL in res.text
