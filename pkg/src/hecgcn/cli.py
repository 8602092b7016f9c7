"""Command line: ``hecgcn {train,eval,ablate,gradcheck}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .config import ABLATIONS, ConfigError, TrainConfig, coerce_value
from .dataset import load_manifest
from .evaluator import evaluate
from .gradcheck import TOLERANCE, run_gradcheck
from .model import forward
from .synthetic import planted_dataset, toy_dataset
from .trainer import CheckpointError, build_graphs, fit, init_params, load_checkpoint, save_checkpoint

logger = logging.getLogger("hecgcn")

HISTORY_FIELDS = ["epoch", "loss_bpr", "loss_gb", "loss_gh", "loss_bh", "val_hr10", "val_ndcg10"]

BUILTIN = {"builtin:planted": planted_dataset, "builtin:toy": toy_dataset}


def load_data(ref):
    if ref in BUILTIN:
        return BUILTIN[ref]()
    path = Path(ref)
    if not path.exists():
        raise FileNotFoundError(f"dataset manifest not found: {path}")
    return load_manifest(path)


def _flatten(table):
    # tables only group keys; [train] lr = 1e-3 and lr = 1e-3 are the same
    out = {}
    for key, value in table.items():
        if isinstance(value, dict):
            out.update(_flatten(value))
        else:
            out[key] = value
    return out


def resolve_config(args):
    data = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        with open(path, "rb") as fh:
            data = _flatten(tomllib.load(fh))
    config = TrainConfig.from_dict(data)
    changes = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        changes[key.strip()] = coerce_value(config, key.strip(), value.strip())
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.ablate:
        changes["ablations"] = tuple(config.ablations) + tuple(args.ablate)
    return config.replace(**changes) if changes else config


def data_ref(ref):
    return ref if ref in BUILTIN else str(Path(ref).resolve())


def run_id(config, data):
    blob = json.dumps({"config": config.to_dict(), "data": data}, sort_keys=True).encode()
    return hashlib.sha1(blob).hexdigest()[:12]


def write_history(path, history):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_FIELDS)
        for h in history:
            w.writerow([h.epoch, h.loss_bpr, h.loss_gb, h.loss_gh, h.loss_bh,
                        h.val.get("hr@10", ""), h.val.get("ndcg@10", "")])


def train_run(config, data, out):
    """Train, evaluate on test, and write the run directory. Returns the test report."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    ds = load_data(data)
    graphs = build_graphs(ds)
    params = init_params(ds, config)
    result = fit(params, graphs, ds, config)
    save_checkpoint(result.params, result.opt_state, config, out / "checkpoint.bin",
                    fingerprint=ds.fingerprint(), epoch=result.best_epoch + 1)
    write_history(out / "history.csv", result.history)
    ns = sorted(set(config.eval_ns) | {10})
    report = evaluate(forward(result.params, graphs, config), ds, ns=ns, split="test")
    report.write_json(out / "report.json")
    manifest = {
        "run_id": run_id(config, data_ref(data)),
        "config": config.to_dict(),
        "data": data_ref(data),
        "out": str(out.resolve()),
        "ablations": list(config.ablations),
        "best_epoch": result.best_epoch,
    }
    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
    return report


def cmd_train(args):
    config = resolve_config(args)
    report = train_run(config, args.data, args.out)
    print(f"test HR@10 {report.hr[10]:.4f}  NDCG@10 {report.ndcg[10]:.4f}")
    return 0


def cmd_eval(args):
    run = Path(args.run)
    with open(run / "manifest.json", encoding="utf-8") as fh:
        manifest = json.load(fh)
    config = TrainConfig.from_dict(manifest["config"])
    ds = load_data(args.data or manifest["data"])
    try:
        params, _, _ = load_checkpoint(run / "checkpoint.bin", config, ds.fingerprint())
    except CheckpointError as exc:
        print(f"refusing to evaluate: {exc}", file=sys.stderr)
        return 2
    ns = [int(n) for n in args.ns.split(",")] if args.ns else sorted(set(config.eval_ns) | {10})
    report = evaluate(forward(params, build_graphs(ds), config), ds, ns=ns, split=args.split)
    name = "report.json" if args.split == "test" else f"report_{args.split}.json"
    report.write_json(run / name)
    if args.ranks:
        report.write_ranks(run / f"ranks_{args.split}.csv")
    for n in ns:
        print(f"{args.split} HR@{n} {report.hr[n]:.4f}  NDCG@{n} {report.ndcg[n]:.4f}")
    return 0


def cmd_ablate(args):
    base = resolve_config(args)
    variants = args.variant or list(ABLATIONS)
    out = Path(args.out)
    rows = []
    for name in ["full"] + variants:
        config = base if name == "full" else base.replace(ablations=base.ablations + (name,))
        report = train_run(config, args.data, out / name)
        rows.append({"variant": name, "hr10": report.hr[10], "ndcg10": report.ndcg[10]})
        print(f"{name:14s} HR@10 {report.hr[10]:.4f}  NDCG@10 {report.ndcg[10]:.4f}")
    with open(out / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
    return 0


def cmd_gradcheck(args):
    err, name, idx = run_gradcheck(ablations=tuple(args.ablate or ()), seed=args.seed or 0,
                                   broken=tuple(args.broken or ()), negative_pool=args.pool)
    status = "PASS" if err < TOLERANCE else "FAIL"
    print(f"{status} max relative error {err:.3e} (tolerance {TOLERANCE:g}); worst: {name}[{idx}]")
    return 0 if err < TOLERANCE else 1


def _common(p, data_required=True):
    p.add_argument("--config", help="TOML file with TrainConfig keys")
    p.add_argument("--data", required=data_required,
                   help="dataset manifest JSON, or builtin:planted / builtin:toy")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    p.add_argument("--ablate", action="append", choices=ABLATIONS, help="enable an ablation switch")


def build_parser():
    parser = argparse.ArgumentParser(prog="hecgcn", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write a run directory")
    _common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a run directory")
    p.add_argument("run", help="run directory written by train")
    p.add_argument("--split", choices=("val", "test"), default="test")
    p.add_argument("--ns", help="comma-separated cutoffs, e.g. 5,10,20")
    p.add_argument("--data", help="override the dataset recorded in the manifest")
    p.add_argument("--ranks", action="store_true", help="also write per-user ranks CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train the full model and ablated variants")
    _common(p)
    p.add_argument("--variant", action="append", choices=ABLATIONS,
                   help="variant to compare (default: all)")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss on a toy")
    p.add_argument("--ablate", action="append", choices=ABLATIONS)
    p.add_argument("--seed", type=int)
    p.add_argument("--pool", choices=("in_batch", "full"), default="in_batch")
    p.add_argument("--break", dest="broken", action="append", choices=("stop_gradient",),
                   help="disable a backward rule (negative control)")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
