#!/usr/bin/env python3
"""Generate a synthetic probe-set corpus (matrix + metadata TSVs).

The corpus mixes three kinds of probe sets so the whole screening pipeline
has something to do: plain nulls that the ratio screen discards, nulls with
an inflated second-axis variance that pass the screen but carry no mean
effect, and alternatives with a group-aligned second-dimension mean.

    python scripts/make_demo_corpus.py --out-dir demo/ --seed 1
    dimtest analyze demo/matrix.tsv --groups demo/meta.tsv --test target --out demo/report.tsv
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from dimtest.screenflow import ProbeSetRecord, save_dataset
from dimtest.simlab import SimulationSpec, gen_dataset

N_ARRAYS = 20
GROUPS = ("normal",) * 10 + ("tumor",) * 10


def build_records(seed, n_plain, n_structured, n_alt):
    mu2_alt = np.concatenate([np.full(10, 2500.0), np.full(10, -2500.0)])
    kinds = [
        ("plain_null", n_plain, dict()),
        ("structured_null", n_structured, dict(var_theta2=2.5e6)),
        ("alternative", n_alt, dict(var_theta2=2.5e6, mu2=mu2_alt)),
    ]
    records = []
    index = 0
    for kind, count, overrides in kinds:
        for _ in range(count):
            spec = SimulationSpec(n=N_ARRAYS, seed=seed, **overrides)
            records.append(
                ProbeSetRecord(
                    probeset_id=f"ps{index:04d}_{kind}",
                    matrix=gen_dataset(spec, index),
                )
            )
            index += 1
    return records


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out-dir", type=Path, default=Path("demo"))
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--plain", type=int, default=180)
    parser.add_argument("--structured", type=int, default=100)
    parser.add_argument("--alternatives", type=int, default=70)
    args = parser.parse_args(argv)

    args.out_dir.mkdir(parents=True, exist_ok=True)
    records = build_records(args.seed, args.plain, args.structured, args.alternatives)
    matrix = args.out_dir / "matrix.tsv"
    save_dataset(records, matrix)
    meta = args.out_dir / "meta.tsv"
    meta.write_text(
        "array_id\tgroup\n"
        + "".join(f"{a}\t{g}\n" for a, g in zip(records[0].matrix.row_labels, GROUPS))
    )
    print(f"wrote {matrix} ({len(records)} probe sets) and {meta}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
