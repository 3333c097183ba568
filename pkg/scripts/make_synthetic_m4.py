"""Write M4-format synthetic train/test CSVs for dry runs of the pipeline.

These series are not M4 data; scores computed on them say nothing about
published results.

    python3 scripts/make_synthetic_m4.py --out /tmp/m4_synth --series 64
"""
import argparse
from pathlib import Path

from pitransformer.data import FREQUENCIES, synthetic_series, write_m4_csv


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--out", required=True)
    ap.add_argument("--freqs", default="hourly", help="comma-separated frequency names or 'all'")
    ap.add_argument("--series", type=int, default=64)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    root = Path(args.out)
    root.mkdir(parents=True, exist_ok=True)
    names = sorted(FREQUENCIES) if args.freqs == "all" else [f.strip().lower() for f in args.freqs.split(",")]
    for name in names:
        recs = synthetic_series(name, args.series, seed=args.seed)
        meta = recs[0].frequency
        write_m4_csv(root / f"{meta.name}-train.csv", recs, "train")
        write_m4_csv(root / f"{meta.name}-test.csv", recs, "test")
        print(f"{meta.name}: {len(recs)} series -> {root}")


if __name__ == "__main__":
    main()
