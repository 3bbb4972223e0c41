"""Shared fixtures: the desk knowledge store, the scripted gateway, and a
session-scoped trained generator + surrogate reused by the expensive tests."""

from pathlib import Path

import pytest

from moldassist import retrieval, surrogate
from moldassist.diffusion import (
    TrainConfig,
    make_schedule,
    make_synthetic_dataset,
    train,
)
from moldassist.gateway import Gateway, PriceTable, ScriptedBackend
from moldassist.orchestrator import ChatEngine, EngineConfig
from moldassist.toolbox import FixtureSearchProvider, ToolContext

DATA = Path(__file__).parent / "data"

# the settings validated to satisfy the desk-scale fidelity tolerance
TRAIN_CFG = TrainConfig(epochs=400, batch_size=128, learning_rate=3e-3, seed=0)
SCHED_T = 200
DATASET_SEED = 1
DATASET_ROWS = 2000


@pytest.fixture(scope="session")
def embedder():
    return retrieval.HashedEmbedder(256)


def build_store(embedder):
    store = retrieval.VectorStore(embedder)
    chunks = retrieval.ingest_table(str(DATA / "directions.csv"),
                                    str(DATA / "priorities.csv"))
    store.add_all(chunks)
    store.add_all(retrieval.ingest_manual(str(DATA / "manual_pages.jsonl"),
                                          id_offset=len(chunks)))
    return store


@pytest.fixture(scope="session")
def knowledge_store(embedder):
    return build_store(embedder)


def make_gateway(with_prices: bool = True) -> Gateway:
    backend = ScriptedBackend.load(str(DATA / "fixtures.json"))
    table = PriceTable.load(str(DATA / "price_table.json")) if with_prices else None
    return Gateway(backend, model_id="default", price_table=table)


@pytest.fixture
def gateway():
    return make_gateway()


@pytest.fixture(scope="session")
def synth_dataset():
    return make_synthetic_dataset(DATASET_ROWS, seed=DATASET_SEED)


@pytest.fixture(scope="session")
def diffusion_model(synth_dataset):
    return train(synth_dataset, TRAIN_CFG, make_schedule(SCHED_T, "linear"))


@pytest.fixture(scope="session")
def surrogate_model(synth_dataset):
    records = [(env, pp, "defective" if env.cls else "good")
               for env, pp in synth_dataset[:500]]
    return surrogate.fit_records(records, surrogate.Hyper(trees=30, depth=3))


@pytest.fixture
def tool_context(gateway, knowledge_store, diffusion_model, surrogate_model):
    return ToolContext(
        gateway=gateway,
        store=knowledge_store,
        search_provider=FixtureSearchProvider.load(str(DATA / "search_fixture.json")),
        diffusion_model=diffusion_model,
        surrogate_model=surrogate_model,
    )


@pytest.fixture
def engine(gateway, tool_context):
    return ChatEngine(gateway, tool_context, EngineConfig())
