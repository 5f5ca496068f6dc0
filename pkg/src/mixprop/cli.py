"""Command-line entry point.

Subcommands: train, eval, predict, verify, split.  Config files are plain
``key = value`` lines mirroring the training-config fields; command-line
flags override file values.  Every run writes a manifest (resolved config,
seed, data hash, tool version, thread setting) sufficient to reproduce it.

Exit codes: 0 success, 2 usage problems (bad flags, unknown config keys,
missing files), 1 runtime faults prefixed with their error category.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

THREAD_ENV = "MIXPROP_THREADS"


def _configure_threads() -> str:
    """Pin BLAS pools before numpy loads; default is all available cores."""
    n = os.environ.get(THREAD_ENV, "")
    if n:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = n
    return n or "auto"


class UsageError(Exception):
    pass


def _bool(text: str) -> bool:
    if text.lower() in ("true", "1", "yes", "on"):
        return True
    if text.lower() in ("false", "0", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _config_fields():
    from .training import TrainConfig

    return {f.name: f.type for f in fields(TrainConfig)}


def _add_config_flags(parser: argparse.ArgumentParser):
    for name, ftype in _config_fields().items():
        flag = "--" + name.replace("_", "-")
        if ftype == "bool":
            parser.add_argument(flag, type=_bool, default=None)
        elif ftype == "int":
            parser.add_argument(flag, type=int, default=None)
        elif ftype == "float":
            parser.add_argument(flag, type=float, default=None)
        else:
            parser.add_argument(flag, type=str, default=None)


def parse_config_file(path) -> dict:
    """``key = value`` lines; # starts a comment; keys must be known."""
    from .training import TrainConfig

    known = _config_fields()
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise UsageError(f"{path}:{lineno}: unknown config key '{key}'")
            ftype = known[key]
            if ftype == "bool":
                out[key] = _bool(value)
            elif ftype == "int":
                out[key] = int(value)
            elif ftype == "float":
                out[key] = float(value)
            else:
                out[key] = value
    return out


def resolve_train_config(args) -> "TrainConfig":
    from .training import TrainConfig

    values = {}
    if args.config:
        values.update(parse_config_file(_existing(args.config, "config")))
    for name in _config_fields():
        cli_val = getattr(args, name, None)
        if cli_val is not None:
            values[name] = cli_val
    return TrainConfig(**values)


def _existing(path, what) -> Path:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} file not found: {p}")
    return p


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(out_dir: Path, command: str, data_path, config_dict,
                    seed, threads):
    from . import __version__

    manifest = {
        "command": command,
        "version": __version__,
        "data": str(data_path),
        "data_sha256": _sha256(data_path),
        "seed": seed,
        "threads": threads,
        "config": config_dict,
    }
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def _load_dataset(path):
    from .data import load_meta, parse_dataset

    systems = parse_dataset(path)
    meta = load_meta(path)
    if meta and "type_to_element" in meta:
        type_dim = len(meta["type_to_element"])
    else:
        type_dim = 1 + max(int(g.atom_type.max())
                           for s in systems for g in s.graphs)
    return systems, type_dim


def _split_spec(mode: str, seed: int):
    from .data import SplitSpec

    return SplitSpec(mode=mode.replace("-", "_"), seed=seed)


# -- commands ---------------------------------------------------------------

def cmd_train(args, threads) -> int:
    from .data import make_split
    from .training import save_checkpoint, train

    data_path = _existing(args.data, "data")
    config = resolve_train_config(args)
    systems, type_dim = _load_dataset(data_path)
    tr, va, te = make_split(systems, _split_spec(args.split, config.seed))

    out_dir = Path(args.out)
    from dataclasses import asdict

    _write_manifest(out_dir, "train", data_path, asdict(config), config.seed,
                    threads)
    with open(out_dir / "split.json", "w", encoding="utf-8") as fh:
        json.dump({"mode": args.split,
                   "train": [s.id for s in tr],
                   "valid": [s.id for s in va],
                   "test": [s.id for s in te]}, fh)

    model, history, artifacts = train(tr, va, config, type_dim,
                                      quiet=not args.verbose)
    with open(out_dir / "history.csv", "w", encoding="utf-8") as fh:
        fh.write(history.to_csv())
    save_checkpoint(out_dir / "checkpoint.npz", model, config, artifacts)
    print(json.dumps({"best_epoch": artifacts["best_epoch"],
                      "best_valid_mse": artifacts["best_valid_mse"],
                      "out": str(out_dir)}))
    return 0


def cmd_eval(args, threads) -> int:
    from dataclasses import replace as dc_replace

    from .data import perturb_coordinates
    from .training import evaluate_metrics, load_checkpoint, predict

    ckpt = _existing(args.checkpoint, "checkpoint")
    data_path = _existing(args.data, "data")
    model, config, artifacts = load_checkpoint(ckpt)
    systems, _ = _load_dataset(data_path)
    if args.perturb_sigma and args.perturb_sigma > 0:
        systems = [
            dc_replace(s, graphs=[
                perturb_coordinates(g, args.perturb_sigma,
                                    seed=args.perturb_seed + 977 * k + j)
                for j, g in enumerate(s.graphs)])
            for k, s in enumerate(systems)]
    preds = predict(model, systems, artifacts["env_mean"],
                    artifacts["env_std"], log_target=config.log_target)
    targets = [s.conductivity for s in systems]
    mse, mae, pearson, spearman = evaluate_metrics(preds, targets)
    print(json.dumps({"n": len(systems), "mse": mse, "mae": mae,
                      "pearson": pearson, "spearman": spearman,
                      "perturb_sigma": args.perturb_sigma or 0.0}))
    return 0


def cmd_predict(args, threads) -> int:
    from .training import load_checkpoint, predict

    ckpt = _existing(args.checkpoint, "checkpoint")
    data_path = _existing(args.data, "data")
    model, config, artifacts = load_checkpoint(ckpt)
    systems, _ = _load_dataset(data_path)
    preds = predict(model, systems, artifacts["env_mean"],
                    artifacts["env_std"], log_target=config.log_target)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("id,y_pred,y_true,abs_err\n")
        for s, y in zip(systems, preds):
            y = float(y)
            fh.write(f"{s.id},{y!r},{s.conductivity!r},"
                     f"{abs(y - s.conductivity)!r}\n")
    print(json.dumps({"n": len(systems), "out": args.out}))
    return 0


def cmd_verify(args, threads) -> int:
    from .harness import check_set_se3, check_transform_covariance
    from .training import load_checkpoint

    ckpt = _existing(args.checkpoint, "checkpoint")
    data_path = _existing(args.data, "data")
    model, _, _ = load_checkpoint(ckpt)
    systems, _ = _load_dataset(data_path)
    systems = systems[:args.systems]

    mode_map = {"rotation": "rotation", "node-perm": "node_perm",
                "graph-perm": "graph_perm"}
    modes = list(mode_map) if args.mode == "all" else [args.mode]
    reports = [check_set_se3(model, systems, mode_map[m], trials=args.trials,
                             tol=args.tol, seed=args.seed) for m in modes]
    if args.mode == "all":
        reports.append(check_transform_covariance(
            model, trials=args.trials, tol=args.tol, seed=args.seed))
    print(json.dumps(reports, indent=1))
    return 0 if all(r["pass"] for r in reports) else 1


def cmd_split(args, threads) -> int:
    from .data import make_split

    data_path = _existing(args.data, "data")
    systems, _ = _load_dataset(data_path)
    tr, va, te = make_split(systems, _split_spec(args.mode, args.seed))
    out_dir = Path(args.out)
    _write_manifest(out_dir, "split", data_path,
                    {"mode": args.mode, "seed": args.seed}, args.seed, threads)
    payload = {"mode": args.mode, "seed": args.seed,
               "counts": {"train": len(tr), "valid": len(va), "test": len(te)},
               "train": [s.id for s in tr], "valid": [s.id for s in va],
               "test": [s.id for s in te]}
    with open(out_dir / "split.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh)
    print(json.dumps(payload["counts"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="mixprop",
        description="Equivariant mixture-property engine")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model and write run artifacts")
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="random",
                   choices=("random", "ood-conductivity", "ood-temperature"))
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--verbose", action="store_true")
    _add_config_flags(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--perturb-sigma", type=float, default=0.0)
    p.add_argument("--perturb-seed", type=int, default=0)

    p = sub.add_parser("predict", help="write per-record predictions as CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="run the symmetry certification")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="all",
                   choices=("all", "rotation", "node-perm", "graph-perm"))
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--systems", type=int, default=4)

    p = sub.add_parser("split", help="materialize a dataset split manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--mode", default="random",
                   choices=("random", "ood-conductivity", "ood-temperature"))
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)

    return ap


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "predict": cmd_predict,
            "verify": cmd_verify, "split": cmd_split}


def main(argv=None) -> int:
    threads = _configure_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import MixpropError

    try:
        return COMMANDS[args.command](args, threads)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except MixpropError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
