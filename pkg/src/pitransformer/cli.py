"""Command-line front end.

Commands: ``train``, ``evaluate``, ``forecast``, ``ablate``, ``baseline``.
Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
The default data root comes from ``$PITF_DATA_ROOT``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import experiment as X
from .config import DATA_ROOT_ENV, PROFILES, RunConfig, flatten_file_config, resolve
from .data import FREQUENCIES
from .errors import ConfigError, DataError, NumericalError
from .metrics import BASELINES, baseline_forecasts, read_forecasts, write_forecasts
from .model import SKIP_MODES
from .transformer import CONNECTORS, POS_ENCODINGS

log = logging.getLogger("pitransformer")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _int_list(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _add_data_args(p):
    p.add_argument("--freq", dest="frequency", choices=sorted(FREQUENCIES), type=str.lower)
    p.add_argument("--data-root", help=f"directory with <Freq>-train/test.csv (default ${DATA_ROOT_ENV})")
    p.add_argument("--subsample", type=float, help="keep this random fraction of series")
    p.add_argument("--subsample-seed", type=int)


def _add_run_args(p):
    _add_data_args(p)
    p.add_argument("--config", help="JSON settings file; flags override it")
    p.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    p.add_argument("--d-model", type=int)
    p.add_argument("--d-ff", type=int)
    p.add_argument("--layers", dest="n_layers", type=int)
    p.add_argument("--heads", dest="n_heads", type=int)
    p.add_argument("--skip-mode", choices=SKIP_MODES)
    p.add_argument("--connector", choices=CONNECTORS)
    p.add_argument("--pos-encoding", choices=POS_ENCODINGS)
    p.add_argument("--window-multiple", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--batches-per-epoch", type=int)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seeds", type=int, help="train seeds 0..N-1")
    p.add_argument("--seed-list", type=_int_list, help="explicit comma-separated seeds")
    p.add_argument("--pad-short", action="store_true", default=None,
                   help="give series shorter than nH+H one left-padded training window")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pitf", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train one model per seed")
    _add_run_args(p)

    p = sub.add_parser("evaluate", help="score checkpoints or forecast files on the test split")
    _add_data_args(p)
    p.add_argument("--checkpoints", nargs="*", default=[])
    p.add_argument("--forecasts", nargs="*", default=[], help="M4-style forecast CSVs")
    p.add_argument("--run-dir", help="use every seed_*/checkpoint.npz under this directory")
    p.add_argument("--ensemble", action="store_true", help="also score the mean of all inputs")
    p.add_argument("--median-of", action="store_true", help="report median scores across inputs")
    p.add_argument("--out", help="write the report as JSON here")

    p = sub.add_parser("forecast", help="write test-period forecasts from a checkpoint")
    _add_data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ablate", help="sweep ablation arms x model sizes x seeds")
    _add_run_args(p)
    p.add_argument("--study", choices=sorted(X.ABLATION_STUDIES), default="skip")
    p.add_argument("--d-models", type=_int_list, default=None, help="comma-separated sizes")
    p.add_argument("--skip-modes", type=_str_list)
    p.add_argument("--connectors", type=_str_list)
    p.add_argument("--pos-encodings", type=_str_list)

    p = sub.add_parser("baseline", help="write Naive2 / seasonal-naive / naive forecasts")
    _add_data_args(p)
    p.add_argument("--method", choices=BASELINES, default="naive2")
    p.add_argument("--out", required=True)
    return parser


def _run_config(args) -> RunConfig:
    file_settings = None
    if args.config:
        try:
            file_settings = flatten_file_config(json.loads(Path(args.config).read_text()))
        except FileNotFoundError:
            raise ConfigError(f"config file {args.config} not found") from None
    seeds = args.seed_list if args.seed_list else (list(range(args.seeds)) if args.seeds else None)
    overrides = {
        k: getattr(args, k, None)
        for k in (
            "frequency", "data_root", "subsample", "subsample_seed", "d_model", "d_ff",
            "n_layers", "n_heads", "skip_mode", "connector", "pos_encoding", "window_multiple",
            "batch_size", "batches_per_epoch", "max_epochs", "patience", "lr", "pad_short",
            "workers", "out",
        )
    }
    overrides["seeds"] = seeds
    return resolve(args.profile, file_settings, overrides)


def _records(args, require_test=True):
    rc = resolve(
        "desk",
        None,
        {"frequency": args.frequency, "data_root": args.data_root,
         "subsample": args.subsample, "subsample_seed": args.subsample_seed},
    )
    return X.load_records(rc, require_test=require_test)


def cmd_train(args) -> int:
    rc = _run_config(args)
    # load before touching the output directory so failures leave nothing behind
    records = X.load_records(rc, require_test=False)
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    rc.save(out / "config.json")
    try:
        results = X.train_all(rc, records, out)
    except BaseException:
        log.error("training failed; run directory %s left incomplete", out)
        raise
    summary = {
        str(seed): {"best_epoch": r.best_epoch, "best_val_loss": r.best_val_loss,
                    "epochs_run": len(r.history), "stopped_early": r.stopped_early}
        for seed, r in results.items()
    }
    (out / "validation_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for seed, s in summary.items():
        print(f"seed {seed}: best epoch {s['best_epoch']} val MASE {s['best_val_loss']:.4f}")
    return 0


def cmd_evaluate(args) -> int:
    checkpoints = list(args.checkpoints)
    if args.run_dir:
        checkpoints += sorted(str(p) for p in Path(args.run_dir).glob("seed_*/checkpoint.npz"))
    if not checkpoints and not args.forecasts:
        raise ConfigError("evaluate needs --checkpoints, --forecasts or --run-dir")
    records = _records(args)
    meta = records[0].frequency
    sets = [X.checkpoint_forecasts(c, records) for c in checkpoints]
    ids = [r.id for r in records]
    for path in args.forecasts:
        fs = read_forecasts(path, ids=ids, horizon=meta.horizon)
        fs.matrix(ids)
        sets.append(fs)
    result = X.score_sets(records, sets, ensemble=args.ensemble, median=args.median_of)
    out: dict = {"members": [m.to_dict() for m in result["members"]]}
    for rep, fs in zip(result["members"], sets):
        print(f"# {fs.provenance}")
        print(rep.table())
    if "ensemble" in result:
        print(f"# mean ensemble of {len(sets)}")
        print(result["ensemble"].table())
        out["ensemble"] = result["ensemble"].to_dict()
    if "median" in result:
        med = result["median"]
        print(f"# median over {len(sets)}: OWA {med['owa']:.3f} sMAPE {med['smape']:.3f} "
              f"MASE {med['mase']:.3f} R0.5 {med['r05']:.4f}")
        out["median"] = med
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return 0


def cmd_forecast(args) -> int:
    records = _records(args, require_test=False)
    fs = X.checkpoint_forecasts(args.checkpoint, records)
    write_forecasts(args.out, fs, records[0].frequency.horizon)
    print(f"wrote {len(fs)} forecasts to {args.out}")
    return 0


def cmd_ablate(args) -> int:
    rc = _run_config(args)
    records = X.load_records(rc)
    d_models = args.d_models or [rc.pi.transformer.d_model]
    arms = {"skip_mode": args.skip_modes, "connector": args.connectors,
            "pos_encoding": args.pos_encodings}
    out = Path(rc.out)
    out.mkdir(parents=True, exist_ok=True)
    rc.save(out / "config.json")
    result = X.run_ablation(rc, records, args.study, d_models, out, arms)
    print(X.format_ablation(result))
    return 0


def cmd_baseline(args) -> int:
    records = _records(args, require_test=False)
    fs = baseline_forecasts(records, args.method)
    write_forecasts(args.out, fs, records[0].frequency.horizon)
    print(f"wrote {len(fs)} {args.method} forecasts to {args.out}")
    return 0


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "forecast": cmd_forecast,
    "ablate": cmd_ablate,
    "baseline": cmd_baseline,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"pitf: configuration error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as e:
        print(f"pitf: data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, FloatingPointError) as e:
        print(f"pitf: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
