"""Train three seeds on M4 Hourly and report median OWA and R0.5.

Published reference for this configuration: OWA 0.525, R0.5 0.046.
Needs the official files under --data-root (or $PITF_DATA_ROOT).

    python3 scripts/hourly_replication.py --data-root ~/m4 --out runs/hourly --profile desk
"""
import argparse
import json
from pathlib import Path

from pitransformer import experiment as X
from pitransformer.config import resolve

REFERENCE = {"owa": 0.525, "r05": 0.046}


def main():
    ap = argparse.ArgumentParser(description=__doc__.split("\n")[0])
    ap.add_argument("--data-root")
    ap.add_argument("--out", required=True)
    ap.add_argument("--profile", default="desk")
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--max-epochs", type=int)
    args = ap.parse_args()
    rc = resolve(args.profile, None, {"frequency": "hourly", "data_root": args.data_root,
                                      "seeds": args.seeds, "workers": args.workers, "out": args.out,
                                      "max_epochs": args.max_epochs})
    records = X.load_records(rc)
    out = Path(args.out)
    X.train_all(rc, records, out)
    sets = [X.checkpoint_forecasts(out / f"seed_{s}" / "checkpoint.npz", records) for s in rc.seeds]
    report = X.score_sets(records, sets, median=True)
    med = report["median"]
    members = [m.to_dict() for m in report["members"]]
    (out / "report.json").write_text(json.dumps({"members": members, "median": med}, indent=2, sort_keys=True))
    for m in report["members"]:
        print(m.table())
    print(f"median OWA  {med['owa']:.3f}   (reference {REFERENCE['owa']})")
    print(f"median R0.5 {med['r05']:.3f}   (reference {REFERENCE['r05']})")


if __name__ == "__main__":
    main()
