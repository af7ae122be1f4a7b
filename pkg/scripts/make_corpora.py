#!/usr/bin/env python3
"""Generate the two synthetic IDX corpora used by the experiment scripts.

Writes train/test image+label pairs for two distributions ("c1", "c2") that
share the generator but not the class templates, standing in for two
different datasets over the same task family.
"""

import argparse
from pathlib import Path

import numpy as np

from uapcraft.data import save_idx, synth_dataset
from uapcraft.tensorops import Rng

CORPUS_SEEDS = {"c1": 101, "c2": 202}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out-dir", default="corpora")
    ap.add_argument("--n-train", type=int, default=2500)
    ap.add_argument("--n-test", type=int, default=1000)
    ap.add_argument("--classes", type=int, default=10)
    ap.add_argument("--hw", type=int, default=28)
    ap.add_argument("--contrast", type=float, default=4.0)
    ap.add_argument("--noise", type=float, default=8.0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for tag, seed in CORPUS_SEEDS.items():
        full = synth_dataset(Rng(seed), args.classes,
                             args.n_train + args.n_test,
                             (1, args.hw, args.hw), contrast=args.contrast,
                             noise_std=args.noise, name=tag)
        train = full.subset(np.arange(args.n_train))
        test = full.subset(np.arange(args.n_train,
                                     args.n_train + args.n_test))
        for split, ds in (("train", train), ("test", test)):
            save_idx(ds, out / f"{tag}-{split}-images.idx",
                     out / f"{tag}-{split}-labels.idx")
        print(f"corpus {tag}: {args.n_train} train / {args.n_test} test "
              f"-> {out}/{tag}-*.idx")


if __name__ == "__main__":
    main()
