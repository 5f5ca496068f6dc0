"""Data-prep CLI: synthesize raw tables, build the structure cache, export.

    mixprep gen-raw --dataset calisol --out raw.csv
    mixprep build-cache --out cache.json
    mixprep export --raw raw.csv --cache cache.json --out outdir
"""

from __future__ import annotations

import argparse
import json
import sys

from . import ExportError, LookupFailure


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="mixprep", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-raw", help="write a synthetic raw CSV")
    p.add_argument("--dataset", choices=("calisol", "diffmix"), required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("build-cache", help="embed and pin all structures")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("export", help="convert a raw CSV to canonical JSONL")
    p.add_argument("--raw", required=True)
    p.add_argument("--cache", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dataset", choices=("calisol", "diffmix"),
                   default="calisol")
    p.add_argument("--seed", type=int, default=7)

    args = ap.parse_args(argv)
    try:
        if args.command == "gen-raw":
            from .rawgen import write_raw

            path = write_raw(args.dataset, args.out, seed=args.seed)
            print(path)
        elif args.command == "build-cache":
            from .structures import build_cache

            cache = build_cache(args.out, seed=args.seed)
            print(json.dumps({"molecules": len(cache["molecules"]),
                              "out": args.out}))
        else:
            from .export import export_canonical
            from .structures import load_cache

            report = export_canonical(args.raw, load_cache(args.cache),
                                      args.out, dataset=args.dataset,
                                      seed=args.seed)
            print(json.dumps(report))
    except (LookupFailure, ExportError, FileNotFoundError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
