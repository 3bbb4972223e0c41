"""Command-line surface: REPL chat, knowledge ingestion, model training,
sampling, suite evaluation, and the HTTP service."""

from __future__ import annotations

import json
import logging
import os
import sys

import click
import numpy as np

from . import evalharness, retrieval, surrogate
from .config import ConfigError, ServiceConfig, build_runtime
from .diffusion import (
    EnvCondition,
    TrainConfig,
    generate_candidates,
    load_checkpoint,
    make_schedule,
    make_synthetic_dataset,
    save_checkpoint,
    train,
)
from .diffusion.synth import read_dataset_tsv, write_dataset_tsv


@click.group()
@click.option("--verbose", is_flag=True)
def main(verbose):
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s")


def _load_config(path: str) -> ServiceConfig:
    try:
        return ServiceConfig.load(path)
    except (ConfigError, OSError) as err:
        raise click.ClickException(str(err))


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def chat(config_path):
    """Interactive terminal chat."""
    runtime = build_runtime(_load_config(config_path))
    history = []
    click.echo("moldassist chat (empty line to quit)")
    while True:
        try:
            line = input("> ").strip()
        except (EOFError, KeyboardInterrupt):
            break
        if not line:
            break
        turn = runtime.engine.run_turn(line, history)
        click.echo(turn.final_report)
        click.echo(f"[{turn.language}; {turn.latency:.2f}s; "
                   f"{turn.usage.input_tokens}+{turn.usage.output_tokens} tok; "
                   f"${turn.cost}]")


@main.command()
@click.option("--directions", required=True, type=click.Path(exists=True))
@click.option("--priorities", required=True, type=click.Path(exists=True))
@click.option("--manual", type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--dim", default=256, show_default=True)
def ingest(directions, priorities, manual, out, dim):
    """Build and persist a vector store from the knowledge files."""
    store = retrieval.VectorStore(retrieval.HashedEmbedder(dim))
    chunks = retrieval.ingest_table(directions, priorities)
    store.add_all(chunks)
    if manual:
        store.add_all(retrieval.ingest_manual(manual, id_offset=len(chunks)))
    store.save(out)
    click.echo(f"ingested {len(store)} chunks -> {out}")


@main.command("train-diffusion")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--epochs", default=400, show_default=True)
@click.option("--batch-size", default=128, show_default=True)
@click.option("--learning-rate", default=3e-3, show_default=True)
@click.option("--timesteps", default=200, show_default=True)
@click.option("--schedule", default="linear", type=click.Choice(["linear", "cosine"]))
@click.option("--seed", default=0, show_default=True)
def train_diffusion(data, out, epochs, batch_size, learning_rate, timesteps,
                    schedule, seed):
    """Train the process-parameter generator on a (class, env, params) TSV."""
    dataset = read_dataset_tsv(data)
    sched = make_schedule(timesteps, schedule)
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size,
                      learning_rate=learning_rate, seed=seed)
    model = train(dataset, cfg, sched)
    save_checkpoint(model, out)
    click.echo(f"trained on {len(dataset)} rows; final loss "
               f"{model.loss_history[-1]:.5f} -> {out}")


@main.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--surrogate-model", "surrogate_path", type=click.Path(exists=True))
@click.option("--factory-temp", required=True, type=float)
@click.option("--factory-humidity", required=True, type=float)
@click.option("--machine-temp", required=True, type=float)
@click.option("--machine-humidity", required=True, type=float)
@click.option("--guidance", default=3.0, show_default=True)
@click.option("--candidates", default=64, show_default=True)
@click.option("--seed", default=0, show_default=True)
def sample(checkpoint, surrogate_path, factory_temp, factory_humidity,
           machine_temp, machine_humidity, guidance, candidates, seed):
    """Generate candidates for an environment and print the best (or first)."""
    model = load_checkpoint(checkpoint)
    env = EnvCondition(0, factory_temp, factory_humidity,
                       machine_temp, machine_humidity)
    batch = generate_candidates(model, env, w=guidance, n=candidates, seed=seed)
    if surrogate_path:
        gbt = surrogate.GBTModel.load(surrogate_path)
        best, scores = surrogate.rank_candidates(gbt, env, batch)
        click.echo(f"best of {len(batch)} (p_good={max(scores):.3f}):")
    else:
        best = batch[0]
        click.echo(f"first of {len(batch)} candidates (no surrogate):")
    click.echo(best.render())


@main.command("fit-surrogate")
@click.option("--data", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@click.option("--trees", default=100, show_default=True)
@click.option("--depth", default=3, show_default=True)
@click.option("--learning-rate", default=0.1, show_default=True)
def fit_surrogate(data, out, trees, depth, learning_rate):
    """Fit the quality classifier on a (class, env, params) TSV."""
    dataset = read_dataset_tsv(data)
    records = [(env, pp, "defective" if env.cls else "good")
               for env, pp in dataset]
    model = surrogate.fit_records(
        records, surrogate.Hyper(trees=trees, depth=depth,
                                 learning_rate=learning_rate))
    model.save(out)
    feats = np.stack([np.concatenate([env.env_vector(), pp.as_vector()])
                      for env, pp in dataset])
    labels = np.array([0.0 if env.cls else 1.0 for env, _ in dataset])
    acc = float(np.mean((model.raw_score(feats) > 0) == labels))
    click.echo(f"fitted {trees} trees; training accuracy {acc:.3f} -> {out}")


@main.command("make-synth")
@click.option("--rows", default=2000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
def make_synth(rows, seed, out):
    """Write a synthetic benchmark dataset with known class structure."""
    write_dataset_tsv(make_synthetic_dataset(rows, seed), out)
    click.echo(f"wrote {rows} rows -> {out}")


@main.command("eval-run")
@click.option("--suite", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-dir", default=".", type=click.Path())
@click.option("--judge/--no-judge", "use_judge", default=True)
@click.option("--human-scores", type=click.Path(exists=True))
def eval_run(suite, config_path, out_dir, use_judge, human_scores):
    """Run an evaluation suite and write JSON + text reports."""
    runtime = build_runtime(_load_config(config_path))
    tasks = evalharness.load_suite(suite)
    scores = evalharness.load_human_scores(human_scores) if human_scores else None

    def run_query(query):
        return runtime.engine.run_turn(query, [])

    records = evalharness.run_suite(
        tasks, run_query,
        judge_gateway=runtime.gateway if use_judge else None,
        human_scores=scores)
    report = evalharness.aggregate(records)
    os.makedirs(out_dir, exist_ok=True)
    json_path = os.path.join(out_dir, "eval_report.json")
    text_path = os.path.join(out_dir, "eval_report.txt")
    evalharness.write_reports(report, records, json_path, text_path)
    click.echo(report.render_table())
    click.echo(f"reports: {json_path}, {text_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def serve(config_path):
    """Run the HTTP chat service."""
    import uvicorn

    from .service import create_app

    config = _load_config(config_path)
    app = create_app(config)
    if app.state.runtime.tool_context.diffusion_model is None:
        click.echo("note: no diffusion checkpoint configured; the diffusion "
                   "tool is registered as unavailable", err=True)
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")


if __name__ == "__main__":
    sys.exit(main())
