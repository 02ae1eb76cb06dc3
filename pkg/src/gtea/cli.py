"""Command-line entry point: ``gtea synth|train|eval|embed``.

Settings come from an optional INI file (``--config``) and then from flags,
which win.  Sections and keys:

  [paths]  nodes, events, checkpoint, out
  [synth]  seed and every SyntheticSpec field
  [train]  every TrainConfig field (fanouts and split are comma lists)
  [eval]   split = train | val | test | all
  [embed]  nodes = all | comma list of ids; edges = all | none | list of u-v pairs

Unknown sections or keys are errors.  Each command writes ``config.json``
with the fully resolved settings next to its other outputs.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import numerics as nm
from .errors import CheckpointError, ConfigError, DataError, GteaError, NumericError
from .gnn import check_graph, edge_embeddings, forward_details
from .graph import SyntheticSpec, canonical, full_minibatch, generate_synthetic, load_graph, write_graph
from .training import (
    TrainConfig,
    evaluate,
    make_splits,
    read_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
METRICS_SCHEMA = 1

PATH_KEYS = ("nodes", "events", "checkpoint", "out")
EVAL_KEYS = ("split",)
EMBED_KEYS = ("nodes", "edges")


class UsageError(GteaError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------- value parsing


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _convert(name: str, text: str, like):
    """Parse ``text`` into the type of the default value ``like``."""
    try:
        if isinstance(like, bool):
            return _parse_bool(text)
        if isinstance(like, int):
            return int(text)
        if isinstance(like, float):
            return float(text)
        if isinstance(like, tuple):
            cast = type(like[0]) if like else float
            return tuple(cast(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {text!r} as {type(like).__name__}") from None
    return text.strip()


def _defaults(cls) -> dict:
    return {f.name: f.default for f in dataclasses.fields(cls)}


def _show(value) -> str:
    """Render a default the way it is written in a config file or flag."""
    if isinstance(value, tuple):
        return ",".join(map(str, value))
    return str(value).lower() if isinstance(value, bool) else str(value)


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


# ---------------------------------------------------------------- config resolution


def read_config(path) -> dict[str, dict[str, str]]:
    """Sections of an INI file as plain dicts; unknown names are rejected."""
    allowed = {
        "paths": set(PATH_KEYS),
        "synth": set(_defaults(SyntheticSpec)) | {"seed"},
        "train": set(_defaults(TrainConfig)),
        "eval": set(EVAL_KEYS),
        "embed": set(EMBED_KEYS),
    }
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    out = {}
    for section in parser.sections():
        if section not in allowed:
            raise ConfigError(f"{path}: unknown section [{section}]; known: {', '.join(sorted(allowed))}")
        keys = dict(parser.items(section))
        unknown = sorted(set(keys) - allowed[section])
        if unknown:
            raise ConfigError(f"{path}: unknown key(s) in [{section}]: {', '.join(unknown)}")
        out[section] = keys
    return out


def _section(args, name: str) -> dict[str, str]:
    return args.file_config.get(name, {})


def _path(args, key: str, required: bool = True):
    value = getattr(args, key, None) or _section(args, "paths").get(key)
    if required and not value:
        raise UsageError(f"missing required path: {_flag(key)} (or [paths] {key})")
    return Path(value) if value else None


def _resolve(cls, section: dict[str, str], args, extra: dict | None = None):
    values = {}
    defaults = _defaults(cls)
    for name, like in defaults.items():
        if name in section:
            values[name] = _convert(name, section[name], like)
        flag = getattr(args, name, None)
        if flag is not None:
            values[name] = _convert(name, flag, like)
    values.update(extra or {})
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def resolve_train_config(args) -> TrainConfig:
    extra = {"seed": args.seed} if args.seed is not None else {}
    cfg = _resolve(TrainConfig, _section(args, "train"), args, extra)
    cfg.validate()
    return cfg


def resolve_synth(args) -> tuple[SyntheticSpec, int]:
    section = dict(_section(args, "synth"))
    seed = int(section.pop("seed", 0))
    if args.seed is not None:
        seed = args.seed
    spec = _resolve(SyntheticSpec, section, args)
    spec.validate()
    return spec, seed


# ---------------------------------------------------------------- output helpers


def _out_dir(args) -> Path:
    out = _path(args, "out", required=False) or Path(".")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_dataset(args, num_classes=None):
    return load_graph(_path(args, "nodes"), _path(args, "events"), num_classes)


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- commands


def cmd_synth(args) -> int:
    spec, seed = resolve_synth(args)
    out = _out_dir(args)
    graph = generate_synthetic(spec, np.random.default_rng(seed))
    write_graph(graph, out / "nodes.csv", out / "events.csv")
    with open(out / "labels.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id", "label"])
        for u, lab in enumerate(graph.labels):
            w.writerow([u, int(lab)])
    manifest = {"seed": seed, "spec": dataclasses.asdict(spec),
                "num_nodes": graph.num_nodes, "num_edges": graph.num_edges,
                "pattern_pairs": [list(p) for p in graph.meta.get("pattern_pairs", [])]}
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "config.json", {"command": "synth", "seed": seed, "synth": dataclasses.asdict(spec)})
    print(f"wrote {graph.num_nodes} nodes and {graph.num_edges} edges to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_train_config(args)
    graph = _load_dataset(args)
    out = _out_dir(args)
    ckpt = _path(args, "checkpoint", required=False) or out / "model.npz"
    result = train(graph, cfg, log=None if args.quiet else _print_epoch)
    metrics = {
        "schema_version": METRICS_SCHEMA,
        "variant": cfg.variant,
        "seed": cfg.seed,
        "best_epoch": result.best_epoch,
        "epochs_run": len(result.history),
        "history": result.history,
    }
    for name, nodes in zip(("train", "val", "test"), result.splits):
        metrics[name] = evaluate(result.model, graph, nodes).to_dict()
    save_checkpoint(result.model, ckpt, cfg, result.history)
    _write_json(out / "metrics.json", metrics)
    _write_json(out / "config.json", {"command": "train", "paths": _paths_dict(args, ckpt),
                                      "train": cfg.to_dict()})
    print(f"test accuracy {metrics['test']['accuracy']:.4f}  macro-F1 {metrics['test']['macro_f1']:.4f}"
          f"  (best epoch {result.best_epoch}); checkpoint {ckpt}")
    return EXIT_OK


def _print_epoch(entry: dict) -> None:
    print(f"epoch {entry['epoch']:4d}  loss {entry['train_loss']:.5f}  val loss {entry['val_loss']:.5f}  "
          f"val acc {entry['val_accuracy']:.4f}  val macro-F1 {entry['val_macro_f1']:.4f}", flush=True)


def _paths_dict(args, ckpt=None) -> dict:
    d = {k: str(_path(args, k, required=False)) for k in PATH_KEYS if _path(args, k, required=False)}
    if ckpt is not None:
        d["checkpoint"] = str(ckpt)
    return d


def _load_model(args, graph):
    ckpt = read_checkpoint(_path(args, "checkpoint"))
    try:
        check_graph(ckpt.model, graph)
    except ConfigError as exc:
        raise DataError(f"dataset does not match checkpoint: {exc}") from exc
    return ckpt


def cmd_eval(args) -> int:
    split = args.split or _section(args, "eval").get("split", "test")
    if split not in ("train", "val", "test", "all"):
        raise ConfigError(f"split must be train, val, test or all, got {split!r}")
    graph = _load_dataset(args)
    ckpt = _load_model(args, graph)
    if split == "all":
        nodes = graph.labeled_nodes()
    else:
        if ckpt.train_config is None:
            raise CheckpointError("checkpoint has no training config, so only split=all is available")
        cfg = TrainConfig(**ckpt.train_config)
        nodes = dict(zip(("train", "val", "test"), make_splits(graph, cfg)))[split]
    out = _out_dir(args)
    report = {"schema_version": METRICS_SCHEMA, "split": split, "variant": ckpt.model.config.variant,
              "num_nodes": int(len(nodes)), **evaluate(ckpt.model, graph, nodes).to_dict()}
    _write_json(out / "eval_metrics.json", report)
    _write_json(out / "config.json", {"command": "eval", "paths": _paths_dict(args), "eval": {"split": split}})
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


def _parse_ids(text: str, graph) -> np.ndarray:
    if text.strip() == "all":
        return np.arange(graph.num_nodes)
    try:
        ids = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"node list must be 'all' or comma-separated ids, got {text!r}") from None
    for u in ids:
        if not 0 <= u < graph.num_nodes:
            raise DataError(f"unknown node id {u} (graph has {graph.num_nodes} nodes)")
    return np.array(ids, dtype=np.int64)


def _parse_edges(text: str, graph) -> list[tuple[int, int]]:
    text = text.strip()
    if text == "none":
        return []
    if text == "all":
        return [e.pair for e in graph.edges]
    pairs = []
    for item in text.split(","):
        if not item.strip():
            continue
        try:
            u, v = (int(x) for x in item.split("-"))
        except ValueError:
            raise ConfigError(f"edges must look like 'u-v,u-v', got {item!r}") from None
        if canonical(u, v) not in graph.edge_index:
            raise DataError(f"no interactions between nodes {u} and {v}")
        pairs.append((u, v))
    return pairs


def cmd_embed(args) -> int:
    section = _section(args, "embed")
    graph = _load_dataset(args)
    ckpt = _load_model(args, graph)
    model = ckpt.model
    nodes = _parse_ids(args.node_ids or section.get("nodes", "all"), graph)
    pairs = _parse_edges(args.edge_pairs or section.get("edges", "all"), graph)
    out = _out_dir(args)
    with open(out / "node_embeddings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["node_id"] + [f"z_{i}" for i in range(model.config.num_classes)])
        if len(nodes):
            with nm.no_tape():
                uniq = np.unique(nodes)
                z = forward_details(full_minibatch(graph, uniq, model.config.num_layers), graph, model).logits.data
            rows = z[np.searchsorted(uniq, nodes)]
            for u, row in zip(nodes, rows):
                w.writerow([int(u)] + [_fmt(x) for x in row])
    with open(out / "edge_embeddings.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"] + [f"e_{i}" for i in range(model.mt.out_dim)])
        if pairs:
            ids = np.array([graph.edge_index[canonical(u, v)] for u, v in pairs], dtype=np.int64)
            emb = edge_embeddings(model, graph, ids)
            for (u, v), row in zip(pairs, emb):
                w.writerow([u, v] + [_fmt(x) for x in row])
    _write_json(out / "config.json", {"command": "embed", "paths": _paths_dict(args),
                                      "embed": {"nodes": [int(u) for u in nodes],
                                                "edges": [list(p) for p in pairs]}})
    print(f"wrote {len(nodes)} node and {len(pairs)} edge embeddings to {out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gtea", description="Temporal interaction graph node classification.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(p, data=True, checkpoint=False):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--seed", type=int, help="random seed (overrides config)")
        p.add_argument("--out", help="output directory (default: current directory)")
        if data:
            p.add_argument("--nodes", help="nodes CSV")
            p.add_argument("--events", help="events CSV")
        if checkpoint:
            p.add_argument("--checkpoint", help="checkpoint file")

    p = sub.add_parser("synth", help="generate a synthetic labeled dataset")
    common(p, data=False)
    for name, default in _defaults(SyntheticSpec).items():
        p.add_argument(_flag(name), dest=name, metavar="VALUE", help=f"default {_show(default)}")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write checkpoint + metrics")
    common(p, checkpoint=True)
    for name, default in _defaults(TrainConfig).items():
        if name != "seed":
            p.add_argument(_flag(name), dest=name, metavar="VALUE", help=f"default {_show(default)}")
    p.add_argument("--quiet", action="store_true", help="no per-epoch log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    common(p, checkpoint=True)
    p.add_argument("--split", choices=("train", "val", "test", "all"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("embed", help="export node and edge embeddings")
    common(p, checkpoint=True)
    p.add_argument("--node-ids", help="'all' or comma-separated node ids")
    p.add_argument("--edge-pairs", help="'all', 'none' or pairs like 0-1,2-5")
    p.set_defaults(func=cmd_embed)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.file_config = read_config(args.config) if args.config else {}
        return args.func(args)
    except (UsageError, ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
