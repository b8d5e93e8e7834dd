#!/usr/bin/env python3
"""Train every named patch-model variant under one budget and report the test
MRR delta of each against the unmodified configuration.

The default budget is sized for the bundled data/blocks135 set; pass a larger
--epochs for real datasets.
"""

import argparse
import os
import sys
import tempfile
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pkge.evaluation import evaluate
from pkge.kg import load_dataset
from pkge.model import ABLATION_VARIANTS, ModelConfig, build_model
from pkge.training import TrainConfig, restore_model, seed_streams, train_model

from dataclasses import replace


def train_and_test(store, model_cfg, train_cfg):
    rng = seed_streams(train_cfg.seed)["init"]
    model = build_model("patreformer", model_cfg, store.num_entities,
                        store.num_relations_with_reverse, rng)
    with tempfile.TemporaryDirectory() as tmp:
        result = train_model(store, model, train_cfg, out_dir=tmp)
        best, _ = restore_model(result.checkpoint_path)
    return evaluate(store, best, "test", batch_size=train_cfg.eval_batch).mrr


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="data/blocks135")
    ap.add_argument("--out", default="runs/ablations")
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--eval-every", type=int, default=25)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--variants", default="all",
                    help="comma-separated variant names, or 'all'")
    args = ap.parse_args()

    if args.variants == "all":
        names = list(ABLATION_VARIANTS)
    else:
        names = [v.strip() for v in args.variants.split(",") if v.strip()]
        unknown = [v for v in names if v not in ABLATION_VARIANTS]
        if unknown:
            ap.error(f"unknown variants: {', '.join(unknown)} "
                     f"(choose from {', '.join(ABLATION_VARIANTS)})")

    store = load_dataset(args.data)
    print(f"dataset {args.data}: {store.stats()}")
    base_cfg = ModelConfig()
    train_cfg = TrainConfig(epochs=args.epochs, eval_every=args.eval_every,
                            seed=args.seed)

    t0 = time.perf_counter()
    base_mrr = train_and_test(store, base_cfg, train_cfg)
    print(f"base          test MRR {base_mrr:.4f}  "
          f"({time.perf_counter() - t0:.0f}s)")

    rows = [("base", base_mrr, 0.0)]
    for name in names:
        t0 = time.perf_counter()
        cfg = replace(base_cfg, **ABLATION_VARIANTS[name])
        mrr = train_and_test(store, cfg, train_cfg)
        rows.append((name, mrr, mrr - base_mrr))
        print(f"{name:<13} test MRR {mrr:.4f}  delta {mrr - base_mrr:+.4f}  "
              f"({time.perf_counter() - t0:.0f}s)")

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "ablation.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant,test_mrr,delta_vs_base\n")
        for name, mrr, delta in rows:
            fh.write(f"{name},{mrr:.6f},{delta:+.6f}\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
