"""Batch command-line entry point.

Subcommands: ``synth`` (write a benchmark to disk), ``train`` (run the full
pipeline on a data directory), ``ablate`` (variant comparison), ``match``
(standalone cross-domain matching) and ``eval`` (score a checkpoint).
Hyperparameters live in a config file; flags carry only paths, seeds and
variant selection. Exit statuses: 0 success, 1 usage/config error,
2 numeric failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace

from . import synth
from .evaluate import accuracy_triple, predict
from .graph import GraphError, load_graph, save_graph
from .matching import match_domains, save_pairs
from .model import load_checkpoint, save_checkpoint
from .numkit import load_matrix, make_rng, save_matrix
from .trainer import (
    ConfigError,
    NonFiniteLossError,
    config_to_text,
    experiment_hash,
    format_ablation_table,
    parse_config,
    run_ablation,
    run_pipeline,
)

_DATA_FILES = {
    "source": "source.ds",
    "target": "target.ds",
    "graph": "graph.txt",
    "wordvec": "wordvec.mat",
}


def _read_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def _load_data_dir(directory):
    source, n_src_classes = synth.load_dataset(
        os.path.join(directory, _DATA_FILES["source"]))
    target, _ = synth.load_dataset(os.path.join(directory, _DATA_FILES["target"]))
    graph_path = os.path.join(directory, _DATA_FILES["graph"])
    graph = load_graph(graph_path) if os.path.exists(graph_path) else None
    word_vectors = load_matrix(os.path.join(directory, _DATA_FILES["wordvec"]))
    return source, target, graph, word_vectors


def _apply_flag_string(cfg, flags: str):
    tokens = [] if flags == "none" else [t for t in flags.split(",") if t]
    valid = {"lb", "sgmd", "gcn", "vanilla"}
    unknown = set(tokens) - valid
    if unknown:
        raise ConfigError(f"unknown flag tokens: {sorted(unknown)}")
    return replace(
        cfg,
        enable_lb="lb" in tokens,
        enable_sgmd="sgmd" in tokens,
        enable_gcn="gcn" in tokens,
        vanilla_balance="vanilla" in tokens,
    )


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_synth(args) -> int:
    cfg = _read_config(args.config)
    source, target, graph, word_vectors = synth.generate(cfg.synth)
    os.makedirs(args.out, exist_ok=True)
    synth.save_dataset(os.path.join(args.out, _DATA_FILES["source"]), source,
                       cfg.synth.known_classes)
    synth.save_dataset(os.path.join(args.out, _DATA_FILES["target"]), target,
                       cfg.synth.total_classes)
    if graph is not None:
        save_graph(os.path.join(args.out, _DATA_FILES["graph"]), graph)
    save_matrix(os.path.join(args.out, _DATA_FILES["wordvec"]), word_vectors)
    _write_json(os.path.join(args.out, "manifest.json"), {
        "config_hash": experiment_hash(cfg),
        "known_classes": cfg.synth.known_classes,
        "total_classes": cfg.synth.total_classes,
        "input_dim": cfg.synth.input_dim,
        "word_dim": cfg.synth.word_dim,
        "seed": cfg.synth.seed,
        "files": sorted(_DATA_FILES.values()) + [_DATA_FILES["target"] + ".eval"],
    })
    return 0


def cmd_train(args) -> int:
    cfg = _read_config(args.config)
    if args.flags is not None:
        cfg = _apply_flag_string(cfg, args.flags)
    data = _load_data_dir(args.data)
    state, history = run_pipeline(cfg, data=data)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(os.path.join(args.out, "checkpoint"), state,
                    config_hash=experiment_hash(cfg))
    with open(os.path.join(args.out, "history.json"), "w", encoding="utf-8") as fh:
        fh.write(history.to_json() + "\n")
    final = history.final()
    _write_json(os.path.join(args.out, "metrics.json"), {
        "known": final["known"],
        "unknown": final["unknown"],
        "all": final["all"],
        "n_known": final["n_known"],
        "n_unknown": final["n_unknown"],
        "config_hash": experiment_hash(cfg),
        "seed": cfg.seed,
    })
    return 0


def cmd_ablate(args) -> int:
    cfg = _read_config(args.config)
    data = _load_data_dir(args.data) if args.data else None
    seeds = [cfg.seed + i for i in range(args.seeds)]
    results = run_ablation(cfg, seeds, data=data)
    os.makedirs(args.out, exist_ok=True)
    _write_json(os.path.join(args.out, "ablation.json"), {
        "config_hash": experiment_hash(cfg),
        "seeds": seeds,
        "variants": results,
    })
    table = format_ablation_table(results)
    with open(os.path.join(args.out, "table.txt"), "w", encoding="utf-8") as fh:
        fh.write(table)
    sys.stdout.write(table)
    return 0


def cmd_match(args) -> int:
    fs = load_matrix(args.source)
    ft = load_matrix(args.target)
    pairs = match_domains(fs, ft, args.folds, make_rng(args.seed))
    save_pairs(args.out, pairs)
    return 0


def cmd_eval(args) -> int:
    state, _manifest = load_checkpoint(args.checkpoint)
    target, _ = synth.load_dataset(os.path.join(args.data, _DATA_FILES["target"]))
    preds = predict(state, target.features)
    triple = accuracy_triple(preds, target.eval_labels, state.head.known_count)
    sys.stdout.write(json.dumps(triple.as_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="opendomain",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a benchmark into a directory")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="run the training pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--flags", default=None,
                   help="comma list of lb,sgmd,gcn,vanilla or 'none'")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate", help="run the variant comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("match", help="match two feature matrices")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--folds", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_match)

    p = sub.add_parser("eval", help="score a checkpoint on a data directory")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.set_defaults(fn=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NonFiniteLossError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
