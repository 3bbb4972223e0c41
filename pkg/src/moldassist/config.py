"""Runtime configuration and assembly of the chat engine."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Optional

from . import retrieval, surrogate
from .diffusion import load_checkpoint
from .gateway import Gateway, HttpBackend, PriceTable, ScriptedBackend
from .orchestrator import ChatEngine, EngineConfig
from .toolbox import FixtureSearchProvider, HttpSearchProvider, ToolContext


class ConfigError(Exception):
    pass


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    backend: str = "scripted"  # scripted | live
    model_id: str = "default"
    fixture_path: Optional[str] = None
    direction_csv: Optional[str] = None
    priority_csv: Optional[str] = None
    manual_pages: Optional[str] = None
    checkpoint_path: Optional[str] = None
    surrogate_path: Optional[str] = None
    price_table_path: Optional[str] = None
    search_fixture_path: Optional[str] = None
    search_endpoint: Optional[str] = None
    state_dir: Optional[str] = None
    auth_token: Optional[str] = None
    replan_cap: int = 5
    react_cap: int = 6
    embed_dim: int = 256
    debug_prompts: bool = False

    @classmethod
    def load(cls, path: str) -> "ServiceConfig":
        with open(path) as fh:
            raw = json.load(fh)
        unknown = set(raw) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        # env overrides for secrets and machine-local paths
        cfg.auth_token = os.environ.get("MOLDASSIST_AUTH_TOKEN", cfg.auth_token)
        cfg.model_id = os.environ.get("MOLDASSIST_MODEL_ID", cfg.model_id)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.backend not in ("scripted", "live"):
            raise ConfigError(f"backend must be scripted or live: {self.backend}")
        missing = []
        for name in ("fixture_path", "direction_csv", "priority_csv",
                     "manual_pages", "checkpoint_path", "surrogate_path",
                     "price_table_path", "search_fixture_path"):
            path = getattr(self, name)
            if path is not None and not os.path.exists(path):
                missing.append(f"{name}: {path}")
        if self.backend == "scripted" and self.fixture_path is None:
            missing.append("fixture_path (required for scripted backend)")
        if missing:
            raise ConfigError("missing configured files: " + "; ".join(missing))


@dataclass
class Runtime:
    config: ServiceConfig
    gateway: Gateway
    engine: ChatEngine
    tool_context: ToolContext


def build_runtime(config: ServiceConfig) -> Runtime:
    config.validate()
    if config.backend == "scripted":
        backend = ScriptedBackend.load(config.fixture_path)
    else:
        backend = HttpBackend.from_env()
    price_table = None
    if config.price_table_path:
        price_table = PriceTable.load(config.price_table_path)
    gateway = Gateway(backend, model_id=config.model_id,
                      price_table=price_table)

    store = None
    embedder = retrieval.HashedEmbedder(config.embed_dim)
    if config.direction_csv and config.priority_csv:
        store = retrieval.VectorStore(embedder)
        chunks = retrieval.ingest_table(config.direction_csv, config.priority_csv)
        store.add_all(chunks)
        if config.manual_pages:
            store.add_all(retrieval.ingest_manual(config.manual_pages,
                                                  id_offset=len(chunks)))
    elif config.manual_pages:
        store = retrieval.VectorStore(embedder)
        store.add_all(retrieval.ingest_manual(config.manual_pages))

    diffusion_model = None
    if config.checkpoint_path:
        diffusion_model = load_checkpoint(config.checkpoint_path)
    surrogate_model = None
    if config.surrogate_path:
        surrogate_model = surrogate.GBTModel.load(config.surrogate_path)

    search_provider = None
    if config.search_fixture_path:
        search_provider = FixtureSearchProvider.load(config.search_fixture_path)
    elif config.search_endpoint:
        search_provider = HttpSearchProvider(
            config.search_endpoint,
            api_key=os.environ.get("MOLDASSIST_SEARCH_KEY", ""))

    ctx = ToolContext(gateway=gateway, store=store,
                      search_provider=search_provider,
                      diffusion_model=diffusion_model,
                      surrogate_model=surrogate_model,
                      model_id=config.model_id)
    engine = ChatEngine(gateway, ctx, EngineConfig(
        model_id=config.model_id, replan_cap=config.replan_cap,
        react_cap=config.react_cap, debug_prompts=config.debug_prompts))
    return Runtime(config=config, gateway=gateway, engine=engine,
                   tool_context=ctx)
