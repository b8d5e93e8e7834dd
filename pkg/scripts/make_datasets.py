#!/usr/bin/env python3
"""Regenerate the bundled desk-scale datasets under data/.

Both are deterministic draws from the generators in pkge.synth:

* data/memo30    - 30 entities, train = valid = test; a memorization probe.
* data/blocks135 - 135 entities in 15 clusters, 46 block-structured
  relations, 80/10/10 split; the benchmark-scale testbed.
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from pkge.synth import clustered_kg, memorization_kg, write_dataset

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "data")


def main():
    write_dataset(os.path.join(ROOT, "memo30"),
                  memorization_kg(np.random.default_rng(7)))
    write_dataset(os.path.join(ROOT, "blocks135"),
                  clustered_kg(np.random.default_rng(11)))
    for name in ("memo30", "blocks135"):
        path = os.path.join(ROOT, name)
        sizes = {s: sum(1 for _ in open(os.path.join(path, f"{s}.txt")))
                 for s in ("train", "valid", "test")}
        print(f"{name}: {sizes}")


if __name__ == "__main__":
    main()
