#!/usr/bin/env python3
"""Build the runnable artifact set under data/: synthetic benchmark data,
a trained diffusion checkpoint, a fitted quality surrogate, an ingested
vector store, and a service config wiring them together with the scripted
backend fixtures used by the test suite.

Usage: python3 scripts/build_artifacts.py [--out-dir data] [--quick]
"""

import argparse
import json
import logging
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from moldassist import retrieval, surrogate  # noqa: E402
from moldassist.diffusion import (  # noqa: E402
    TrainConfig,
    make_schedule,
    make_synthetic_dataset,
    save_checkpoint,
    train,
)
from moldassist.diffusion.synth import write_dataset_tsv  # noqa: E402

TESTS_DATA = ROOT / "tests" / "data"


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", default=str(ROOT / "data"))
    parser.add_argument("--rows", type=int, default=2000)
    parser.add_argument("--epochs", type=int, default=400)
    parser.add_argument("--timesteps", type=int, default=200)
    parser.add_argument("--trees", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--quick", action="store_true",
                        help="small fast models for smoke testing")
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    if args.quick:
        args.rows, args.epochs, args.timesteps, args.trees = 300, 20, 50, 10

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    dataset = make_synthetic_dataset(args.rows, seed=1)
    data_path = out / "synthetic.tsv"
    write_dataset_tsv(dataset, str(data_path))
    print(f"wrote {args.rows} rows -> {data_path}")

    cfg = TrainConfig(epochs=args.epochs, batch_size=128, learning_rate=3e-3,
                      seed=args.seed)
    model = train(dataset, cfg, make_schedule(args.timesteps, "linear"))
    ckpt_path = out / "diffusion.ckpt"
    save_checkpoint(model, str(ckpt_path))
    print(f"trained {args.epochs} epochs (final loss "
          f"{model.loss_history[-1]:.5f}) -> {ckpt_path}")

    records = [(env, pp, "defective" if env.cls else "good")
               for env, pp in dataset]
    gbt = surrogate.fit_records(records, surrogate.Hyper(trees=args.trees))
    gbt_path = out / "surrogate.json"
    gbt.save(str(gbt_path))
    print(f"fitted {args.trees} trees -> {gbt_path}")

    store = retrieval.VectorStore(retrieval.HashedEmbedder(256))
    chunks = retrieval.ingest_table(str(TESTS_DATA / "directions.csv"),
                                    str(TESTS_DATA / "priorities.csv"))
    store.add_all(chunks)
    store.add_all(retrieval.ingest_manual(str(TESTS_DATA / "manual_pages.jsonl"),
                                          id_offset=len(chunks)))
    store_path = out / "store.json"
    store.save(str(store_path))
    print(f"ingested {len(store)} chunks -> {store_path}")

    config = {
        "backend": "scripted",
        "fixture_path": str(TESTS_DATA / "fixtures.json"),
        "direction_csv": str(TESTS_DATA / "directions.csv"),
        "priority_csv": str(TESTS_DATA / "priorities.csv"),
        "manual_pages": str(TESTS_DATA / "manual_pages.jsonl"),
        "price_table_path": str(TESTS_DATA / "price_table.json"),
        "search_fixture_path": str(TESTS_DATA / "search_fixture.json"),
        "checkpoint_path": str(ckpt_path),
        "surrogate_path": str(gbt_path),
        "state_dir": str(out / "sessions"),
    }
    config_path = out / "service_config.json"
    config_path.write_text(json.dumps(config, indent=2) + "\n")
    print(f"wrote service config -> {config_path}")
    print("serve with: moldassist serve --config", config_path)


if __name__ == "__main__":
    main()
