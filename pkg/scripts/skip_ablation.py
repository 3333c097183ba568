"""Compare the gated skip against no skip on one frequency across sizes and seeds.

    python3 scripts/skip_ablation.py --data-root ~/m4 --freq hourly --d-models 32,64 --out runs/abl
"""
import argparse

from pitransformer import experiment as X
from pitransformer.config import resolve


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--data-root")
    ap.add_argument("--freq", default="hourly")
    ap.add_argument("--d-models", default="32")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    rc = resolve("desk", None, {"frequency": args.freq, "data_root": args.data_root,
                                "seeds": args.seeds, "workers": args.workers})
    records = X.load_records(rc)
    sizes = [int(d) for d in args.d_models.split(",")]
    res = X.run_ablation(rc, records, "skip", sizes, args.out, arms={"skip_mode": ["skip_gate", "none"]})
    print(X.format_ablation(res))
    for s in res["summary"]:
        print(s["arm"]["skip_mode"], s["d_model"], "mean epoch-5 train loss", s["mean_train_loss_epoch5"])


if __name__ == "__main__":
    main()
