"""``mglc`` command line: motif dictionaries, propagation statistics, training and evaluation.

Every run writes into ``--out DIR`` and finishes with ``manifest.json`` (config hash plus
file inventory). Exit codes: 0 success, 1 usage, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
import time
from dataclasses import fields
from pathlib import Path
from typing import Sequence

from .context import MODES, SCHEMES, build_context_graph, propagation_stats, write_stats_csv
from .data import read_corpus
from .encoders import READOUTS
from .fewshot import (DatasetError, Model, TaskSplit, TrainConfig, evaluate, generate_synthetic,
                      load_dataset, sample_episode, substream, train, write_log)
from .molgraph import SmilesError
from .motif import MotifDictionary, build_dictionary

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- config handling -------------------------------------------------------------

_FIELDS = {f.name: f for f in fields(TrainConfig)}
_DEFAULTS = TrainConfig()


def _coerce(key: str, text: str):
    if key not in _FIELDS:
        raise UsageError(f"unknown config key {key!r}")
    default = getattr(_DEFAULTS, key)
    if isinstance(default, bool):
        low = text.strip().lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"{key}: expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    try:
        return type(default)(text.strip())
    except ValueError:
        raise UsageError(f"{key}: cannot read {text!r} as {type(default).__name__}") from None


def read_config(path: str | Path) -> dict:
    """Flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = _coerce(key, value)
    return values


def write_config(config: TrainConfig, path: Path) -> None:
    lines = [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in config.to_dict().items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_config(args: argparse.Namespace) -> TrainConfig:
    values = read_config(args.config) if getattr(args, "config", None) else {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = _coerce(key.strip(), value)
    for key in _FIELDS:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        return TrainConfig(**values)
    except ValueError as err:
        raise UsageError(str(err)) from None


def parse_seeds(text: str) -> list[int]:
    """``0..9`` (inclusive) or a comma list."""
    try:
        if ".." in text:
            lo, hi = (int(x) for x in text.split("..", 1))
            seeds = list(range(lo, hi + 1))
        else:
            seeds = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}") from None
    if not seeds or min(seeds) < 0:
        raise argparse.ArgumentTypeError(f"bad seed list {text!r}")
    return seeds


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, command: str, payload: dict) -> None:
    files = []
    for p in sorted(out.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files.append({"path": p.relative_to(out).as_posix(), "bytes": p.stat().st_size,
                          "sha256": hashlib.sha256(p.read_bytes()).hexdigest()})
    manifest = {"command": command, "config": payload, "config_hash": config_hash(payload),
                "files": files, "created": time.strftime("%Y-%m-%dT%H:%M:%S")}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _split(n_properties: int, n_test: int) -> TaskSplit:
    if not 1 <= n_test < n_properties:
        raise DatasetError(f"cannot hold out {n_test} of {n_properties} properties")
    return TaskSplit.last_as_test(n_properties, n_test)


# -- subcommands -----------------------------------------------------------------

def cmd_motifs(args, out: Path) -> dict:
    if args.top_k < 1:
        raise UsageError("--top-k must be positive")
    _, graphs = read_corpus(args.corpus)
    if not graphs:
        raise DatasetError(f"{args.corpus}: no molecules")
    d = build_dictionary(graphs, args.top_k)
    d.save(out / "dictionary.tsv")
    rows = [f"{rank}\t{freq}\t{example}" for rank, ((_, freq), example) in
            enumerate(zip(d.entries, d.examples), 1)]
    (out / "motif_table.tsv").write_text("rank\tfrequency\texample\n" + "\n".join(rows) + "\n", encoding="utf-8")
    print(f"{len(graphs)} molecules, {len(d)} motifs")
    print("rank\tfrequency\texample")
    print("\n".join(rows))
    return {"corpus": str(args.corpus), "top_k": args.top_k}


def cmd_stats(args, out: Path) -> dict:
    ds = load_dataset(args.dataset)
    split = _split(ds.n_properties, args.test_properties)
    episode = sample_episode(ds, split, "train", args.k_shot, args.query_size, substream(args.seed, "stats"),
                             target=split.train[0])
    dictionary = build_dictionary(ds.graphs, args.top_k) if args.mode == "tripartite" else None
    g = build_context_graph(episode, dictionary, args.mode)
    schemes = ["uniform_row", "symmetric"] + ([args.scheme] if args.scheme == "row_normalized" else [])
    summary = {}
    for scheme in schemes:
        stats = propagation_stats(g, scheme)
        write_stats_csv(stats, out / f"stats_{scheme}.csv", g)
        summary[scheme] = {kind.name.lower(): {"mean": m, "std": s, "cv": cv}
                           for kind, (m, s, cv) in stats.summary.items()}
        cvs = ", ".join(f"{k}={v['cv']:.4f}" for k, v in summary[scheme].items())
        print(f"{scheme}: CV {cvs}")
    (out / "stats_summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return {"dataset": str(args.dataset), "mode": args.mode, "scheme": args.scheme, "k_shot": args.k_shot,
            "query_size": args.query_size, "top_k": args.top_k, "seed": args.seed,
            "test_properties": args.test_properties}


def cmd_train(args, out: Path) -> dict:
    config = build_config(args)
    ds = load_dataset(args.dataset)
    split = _split(ds.n_properties, args.test_properties)
    dictionary = MotifDictionary.load(args.dictionary) if args.dictionary else None
    model, log = train(ds, split, config, dictionary)
    model.save(out / "checkpoint.json")
    write_log(log, out / "train_log.csv")
    write_config(config, out / "config.txt")
    if log:
        print(f"trained {len(log)} episodes; final loss {log[-1].loss:.4f}")
    else:
        print("wrote initialized checkpoint")
    return {"dataset": str(args.dataset), "test_properties": args.test_properties, **config.to_dict()}


def cmd_eval(args, out: Path) -> dict:
    if not Path(args.checkpoint).is_file():
        raise DatasetError(f"checkpoint {args.checkpoint} not found")
    model = Model.load(args.checkpoint)
    ds = load_dataset(args.dataset)
    split = _split(ds.n_properties, args.test_properties)
    report = evaluate(ds, split, model, episodes=args.episodes, fine_tune_steps=args.fine_tune_steps,
                      seeds=args.seeds, query_size=args.query_size, workers=args.workers)
    (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
    if math.isnan(report.mean):
        print("no scorable episodes", file=sys.stderr)
    print(f"ROC-AUC {report.mean:.4f} +/- {report.std:.4f} over {len(report.seeds)} seeds")
    return {"dataset": str(args.dataset), "checkpoint": str(args.checkpoint), "episodes": args.episodes,
            "fine_tune_steps": args.fine_tune_steps, "seeds": args.seeds, "query_size": args.query_size,
            "test_properties": args.test_properties}


def cmd_synth(args, out: Path) -> dict:
    ds = generate_synthetic(args.molecules, rng=substream(args.seed, "synthetic"), label_dropout=args.dropout)
    ds.to_csv(out / "dataset.csv")
    print(f"{len(ds)} molecules, {ds.n_properties} properties, "
          f"{100 * ds.label_fractions()['unknown']:.1f}% unknown labels")
    return {"molecules": args.molecules, "dropout": args.dropout, "seed": args.seed}


# -- parser ----------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--episodes", type=int)
    p.add_argument("--k-shot", dest="k_shot", type=int)
    p.add_argument("--query-size", dest="query_size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--hidden", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--readout", choices=READOUTS)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mglc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("motifs", help="build a motif dictionary from a SMILES corpus")
    p.add_argument("corpus")
    p.add_argument("--top-k", type=int, default=64)

    p = sub.add_parser("stats", help="per-node propagation weights of one episode graph")
    p.add_argument("dataset")
    p.add_argument("--mode", choices=MODES, default="tripartite")
    p.add_argument("--scheme", choices=SCHEMES, default="symmetric")
    p.add_argument("--k-shot", type=int, default=5)
    p.add_argument("--query-size", type=int, default=10)
    p.add_argument("--top-k", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="episodic training")
    p.add_argument("dataset")
    p.add_argument("--dictionary", help="motif dictionary TSV (default: built from the dataset)")
    _add_train_flags(p)

    p = sub.add_parser("eval", help="ROC-AUC on held-out properties")
    p.add_argument("dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int, default=10)
    p.add_argument("--fine-tune-steps", type=int, default=0)
    p.add_argument("--seeds", type=parse_seeds, default=[0])
    p.add_argument("--query-size", type=int)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("synth", help="write a synthetic motif-labelled dataset")
    p.add_argument("--molecules", type=int, default=1000)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)

    for name in ("stats", "train", "eval"):
        sub.choices[name].add_argument("--test-properties", type=int, default=1,
                                       help="hold out this many trailing properties")
    for p in sub.choices.values():
        p.add_argument("--out", default="mglc_out", help="output directory")
    return parser


COMMANDS = {"motifs": cmd_motifs, "stats": cmd_stats, "train": cmd_train, "eval": cmd_eval, "synth": cmd_synth}


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        payload = COMMANDS[args.command](args, out)
        write_manifest(out, args.command, payload)
        return EXIT_OK
    except UsageError as err:
        print(f"mglc: usage error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FloatingPointError as err:
        print(f"mglc: numeric failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DatasetError, SmilesError, ValueError, KeyError, OSError) as err:
        print(f"mglc: data error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
