#!/usr/bin/env python3
"""Sweep the relation embedding size for one or more models and tabulate the
resulting test MRR. For the patch model only the relation side moves; the
baselines scale entities and relations together.
"""

import argparse
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pkge.evaluation import sweep_relation_dim
from pkge.kg import load_dataset
from pkge.model import MODEL_KINDS, ModelConfig
from pkge.training import TrainConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="data/blocks135")
    ap.add_argument("--out", default="runs/dim_sweep")
    ap.add_argument("--models", default="patreformer")
    ap.add_argument("--dims", default="100,500,1000")
    ap.add_argument("--epochs", type=int, default=160)
    ap.add_argument("--eval-every", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    kinds = [k.strip() for k in args.models.split(",") if k.strip()]
    unknown = [k for k in kinds if k not in MODEL_KINDS]
    if unknown:
        ap.error(f"unknown models: {', '.join(unknown)}")
    dims = [int(d) for d in args.dims.split(",") if d.strip()]

    store = load_dataset(args.data)
    print(f"dataset {args.data}: {store.stats()}")
    train_cfg = TrainConfig(epochs=args.epochs, eval_every=args.eval_every,
                            seed=args.seed)

    t0 = time.perf_counter()

    def progress(row):
        print(f"{row['model']:<12} d_r {row['d_r']:>5}  "
              f"valid MRR {row['best_valid_mrr']:.4f}  "
              f"test MRR {row['test_mrr']:.4f}  "
              f"({time.perf_counter() - t0:.0f}s)")

    rows = sweep_relation_dim(store, kinds, ModelConfig(), train_cfg, dims,
                              progress=progress)

    os.makedirs(args.out, exist_ok=True)
    path = os.path.join(args.out, "sweep.csv")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("model,d_r,best_valid_mrr,test_mrr\n")
        for row in rows:
            fh.write(f"{row['model']},{row['d_r']},"
                     f"{row['best_valid_mrr']:.6f},{row['test_mrr']:.6f}\n")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
