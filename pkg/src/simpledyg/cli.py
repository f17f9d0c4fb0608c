"""Command-line entry point: ``simpledyg <command> [options]``.

Every command accepts ``--config FILE`` (flat ``key=value`` lines whose keys
are the long option names) and writes a JSON run manifest before doing any
work. ``--from-manifest FILE`` replays a recorded run.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .experiment import (
    DataConfig,
    MetricReport,
    ModelSpec,
    Prepared,
    evaluate_baseline,
    evaluate_model,
    prepare,
    report_csv,
    report_table,
    run_experiment,
    score_generated,
    train_model,
)
from .generate import format_predictions, multi_step_batch, predict_steps
from .graph import (
    ConfigError,
    TemporalGraph,
    format_edge_list,
    format_stats_csv,
    interaction_stats,
    parse_edge_list,
    parse_features,
    with_features,
)
from .model import ModelConfigError, load_checkpoint, save_checkpoint
from .synth import SynthKind, SynthSpec, generate
from .tokens import ALL_VARIANTS, SpecialMode, TemporalMode, TokenVariant, format_corpus
from .train import TrainConfig, training_sequences

log = logging.getLogger("simpledyg")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("ingest", "synth", "tokenize", "train", "eval", "predict", "multistep", "ablate", "stats")
# options that steer the invocation rather than the computation
_META_KEYS = {"command", "config", "workdir", "from_manifest", "threads", "log_level", "manifest"}


class CliConfigError(Exception):
    pass


def _bool(text: str | bool) -> bool:
    if isinstance(text, bool):
        return text
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _flag(p: argparse.ArgumentParser, name: str, help: str) -> None:
    p.add_argument(name, type=_bool, nargs="?", const=True, default=False, help=help)


# ---------------------------------------------------------------- parser


def _data_args(p: argparse.ArgumentParser, graph_only: bool = False) -> None:
    g = p.add_argument_group("data")
    g.add_argument("--edges", help="edge list: src dst time [add|del] per line")
    g.add_argument("--delimiter", default=None, help="field delimiter (default: whitespace)")
    g.add_argument("--deletion-column", type=_bool, default=None,
                   help="require (true) or forbid (false) the 4th op column; default: optional")
    g.add_argument("--features", help="node features: node v1 ... vF per line")
    if graph_only:
        return
    g.add_argument("--truth", help="ground-truth CSV ego,step,node; restricts scored egos to its egos")
    g.add_argument("--T", dest="T", type=int, default=13, help="number of time steps")
    g.add_argument("--special", default="distinct", choices=[m.value for m in SpecialMode])
    g.add_argument("--temporal", default="distinct", choices=[m.value for m in TemporalMode])
    g.add_argument("--context-length", type=int, default=1024)
    _flag(g, "--deletions", "encode deletion events as [del] tokens")
    g.add_argument("--extra-steps", type=int, default=0, help="temporal tokens reserved past T for rollouts")


def _model_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, default=2)
    g.add_argument("--heads", type=int, default=2)
    g.add_argument("--d-model", type=int, default=128)
    g.add_argument("--d-ff", type=int, default=None, help="default 4 * d-model")
    g.add_argument("--dropout", type=float, default=0.0)
    g.add_argument("--position", default="learned", choices=["learned", "sinusoidal"])
    g.add_argument("--init-std", type=float, default=0.02)


def _train_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("training")
    d = TrainConfig()
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--beta1", type=float, default=d.beta1)
    g.add_argument("--beta2", type=float, default=d.beta2)
    g.add_argument("--eps", type=float, default=d.eps)
    g.add_argument("--batch-size", type=int, default=d.batch_size)
    g.add_argument("--max-epochs", type=int, default=d.max_epochs)
    g.add_argument("--patience", type=int, default=d.patience)
    g.add_argument("--warmup-steps", type=int, default=d.warmup_steps)
    g.add_argument("--grad-clip", type=float, default=d.grad_clip)
    g.add_argument("--seed", type=int, default=d.seed)
    g.add_argument("--loss-on", default=d.loss_on, choices=["all", "target"])
    g.add_argument("--cap", type=int, default=d.cap, help="generation cap per step")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--workdir", default=".", help="base directory for relative paths")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS threads (default: $SIMPLEDYG_THREADS or 1)")
    common.add_argument("--manifest", default=None, help="manifest path (default: <command>.manifest.json)")
    common.add_argument("--from-manifest", default=None, help="replay the run recorded in this manifest")
    common.add_argument("--log-level", default="INFO")

    parser = argparse.ArgumentParser(prog="simpledyg", description="Dynamic link prediction with a plain Transformer.")
    parser.add_argument("--version", action="version", version=f"simpledyg {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", parents=[common], help="validate an edge list and report its shape")
    _data_args(p, graph_only=True)
    p.add_argument("--T", dest="T", type=int, default=None, help="also report per-step counts for T steps")
    p.add_argument("--out", default=None, help="JSON summary path")

    p = sub.add_parser("synth", parents=[common], help="write a synthetic graph and its ground truth")
    d = SynthSpec()
    p.add_argument("--kind", default=d.kind.value, choices=[k.value for k in SynthKind])
    p.add_argument("--num-egos", type=int, default=d.num_egos)
    p.add_argument("--neighbors", type=int, default=d.neighbors)
    p.add_argument("--period", type=int, default=d.period)
    p.add_argument("--T", dest="T", type=int, default=d.T)
    p.add_argument("--noise", type=float, default=d.noise)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--extra-steps", type=int, default=d.extra_steps)
    p.add_argument("--step-width", type=float, default=d.step_width)
    p.add_argument("--burst-fraction", type=float, default=d.burst_fraction)
    p.add_argument("--out", default="synth.edges")
    p.add_argument("--truth-out", default="synth.truth.csv")

    p = sub.add_parser("tokenize", parents=[common], help="emit the symbolic token corpus")
    _data_args(p)
    p.add_argument("--split", default="train", choices=["train", "val", "test"])
    p.add_argument("--out", default="corpus.txt")

    p = sub.add_parser("train", parents=[common], help="train one model")
    _data_args(p)
    _model_args(p)
    _train_args(p)
    p.add_argument("--out", default="model.ckpt")
    p.add_argument("--log", default="train_log.csv")

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint, or train and score N seeded runs")
    _data_args(p)
    _model_args(p)
    _train_args(p)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--runs", type=int, default=1, help="seeds seed..seed+runs-1")
    p.add_argument("--rank", default="generation", choices=["generation", "first_position"])
    p.add_argument("--save-checkpoints", default=None, help="directory for per-run checkpoints")
    p.add_argument("--out", default="report.csv")

    for name, help in (("predict", "dump next-step predictions"), ("multistep", "dump multi-step rollouts")):
        p = sub.add_parser(name, parents=[common], help=help)
        _data_args(p)
        p.add_argument("--checkpoint", default=None)
        p.add_argument("--cap", type=int, default=TrainConfig().cap)
        p.add_argument("--egos", default=None, help="comma-separated egos (default: truth egos or all with history)")
        if name == "predict":
            p.add_argument("--step", type=int, default=None, help="target step (default: T)")
            p.add_argument("--rank", default="generation", choices=["generation", "first_position"])
        else:
            p.add_argument("--start", type=int, default=None, help="first rolled-out step (default: T)")
            p.add_argument("--horizon", type=int, default=3)
            p.add_argument("--scores-out", default="multistep_scores.csv")
        p.add_argument("--out", default=f"{name}.tsv")

    p = sub.add_parser("ablate", parents=[common], help="train and score every special/temporal token variant")
    _data_args(p)
    _model_args(p)
    _train_args(p)
    p.add_argument("--runs", type=int, default=1)
    p.add_argument("--out", default="ablation.csv")

    p = sub.add_parser("stats", parents=[common], help="binned interaction rates")
    _data_args(p, graph_only=True)
    p.add_argument("--bin-width", type=float, default=None)
    p.add_argument("--unit", type=float, default=1.0, help="rate denominator, e.g. 86400 for per-day")
    p.add_argument("--out", default="stats.csv")
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


# ------------------------------------------------------- config handling


def read_config_file(path: Path) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise CliConfigError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, Any]) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help",)}
    defaults = {}
    for key, value in values.items():
        if key in _META_KEYS:
            continue
        if key not in actions:
            raise CliConfigError(f"unknown config key {key!r}")
        action = actions[key]
        if isinstance(value, str) and action.type is not None:
            try:
                value = action.type(value)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise CliConfigError(f"config key {key!r}: {exc}") from None
        if action.choices is not None and value is not None and value not in action.choices:
            raise CliConfigError(f"config key {key!r}: {value!r} not in {sorted(action.choices)}")
        defaults[key] = value
    sub.set_defaults(**defaults)


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("--from-manifest")
    known, _ = pre.parse_known_args(argv)
    known.command = next((a for a in argv if a in COMMANDS), None)
    manifest = None
    if known.from_manifest:
        manifest = json.loads(Path(known.from_manifest).read_text())
        argv = [manifest["command"]] + [a for a in argv if a != known.command]
        known.command = manifest["command"]
    if known.command in COMMANDS:
        sub = _subparser(parser, known.command)
        if manifest is not None:
            _apply_config(sub, manifest["config"])
        if known.config:
            _apply_config(sub, read_config_file(Path(known.config)))
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise SystemExit(EXIT_CONFIG)
    args._manifest_in = manifest
    return args


def resolved_config(args: argparse.Namespace) -> dict[str, Any]:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _META_KEYS and not k.startswith("_")}


# -------------------------------------------------------------- manifest


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


_INPUT_KEYS = ("edges", "features", "truth", "checkpoint")


class Run:
    """Per-invocation context: path resolution, manifest, thread count."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.workdir = Path(args.workdir).resolve()
        self.workdir.mkdir(parents=True, exist_ok=True)
        env = os.environ.get("SIMPLEDYG_THREADS")
        try:
            self.threads = args.threads if args.threads is not None else int(env or 1)
        except ValueError:
            raise CliConfigError(f"SIMPLEDYG_THREADS must be an integer, got {env!r}") from None
        if self.threads < 1:
            raise CliConfigError("--threads must be >= 1")

    def path(self, p: str | None) -> Path | None:
        if p is None:
            return None
        q = Path(p)
        return q if q.is_absolute() else self.workdir / q

    def input(self, key: str) -> Path | None:
        p = self.path(getattr(self.args, key, None))
        if p is not None and not p.is_file():
            raise CliConfigError(f"--{key.replace('_', '-')}: no such file {p}")
        return p

    def write_manifest(self) -> Path:
        args = self.args
        inputs = {}
        cfg = resolved_config(args)
        for key in _INPUT_KEYS:
            p = self.input(key) if getattr(args, key, None) else None
            if p is not None:
                inputs[key] = {"path": str(p.resolve()), "sha256": sha256_file(p)}
                cfg[key] = str(p.resolve())
        recorded = args._manifest_in
        if recorded is not None:
            for key, entry in recorded.get("inputs", {}).items():
                now = inputs.get(key)
                if now is None or now["sha256"] != entry["sha256"]:
                    raise CliConfigError(f"input {key!r} differs from the manifest ({entry['path']})")
        seed = cfg.get("seed")
        runs = cfg.get("runs", 1)
        manifest = {
            "tool": "simpledyg",
            "version": __version__,
            "command": args.command,
            "config": cfg,
            "inputs": inputs,
            "seeds": [seed + r for r in range(runs)] if isinstance(seed, int) else [],
            "threads": self.threads,
        }
        path = self.path(args.manifest or f"{args.command}.manifest.json")
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return path

    def write(self, p: str, text: str) -> Path:
        out = self.path(p)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text)
        log.info("wrote %s", out)
        return out


# ------------------------------------------------------------- builders


def load_graph(run: Run) -> TemporalGraph:
    path = run.input("edges")
    if path is None:
        raise CliConfigError("--edges is required")
    a = run.args
    g = parse_edge_list(path.read_text(), a.delimiter, a.deletion_column)
    feats = run.input("features")
    if feats is not None:
        g = with_features(g, parse_features(feats.read_text()))
    return g


def load_truth(run: Run) -> tuple[dict[tuple[str, int], set[str]], list[str]] | None:
    path = run.input("truth")
    if path is None:
        return None
    truth: dict[tuple[str, int], set[str]] = {}
    egos: dict[str, None] = {}
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != "ego,step,node":
        raise CliConfigError(f"{path}: expected header ego,step,node")
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            ego, step, node = line.split(",")
            key = (ego, int(step))
        except ValueError:
            raise CliConfigError(f"{path}:{lineno}: expected ego,step,node") from None
        truth.setdefault(key, set()).add(node)
        egos[ego] = None
    return truth, list(egos)


def data_config(a: argparse.Namespace) -> DataConfig:
    return DataConfig(
        T=a.T,
        variant=TokenVariant.parse(a.special, a.temporal),
        context_length=a.context_length,
        deletions=a.deletions,
        extra_steps=a.extra_steps,
    )


def model_spec(a: argparse.Namespace) -> ModelSpec:
    return ModelSpec(a.layers, a.heads, a.d_model, a.d_ff, a.dropout, a.position, a.init_std)


def train_config(a: argparse.Namespace) -> TrainConfig:
    return TrainConfig(
        lr=a.lr, beta1=a.beta1, beta2=a.beta2, eps=a.eps, batch_size=a.batch_size, max_epochs=a.max_epochs,
        patience=a.patience, warmup_steps=a.warmup_steps, grad_clip=a.grad_clip, seed=a.seed, loss_on=a.loss_on,
        cap=a.cap,
    )


def _configs(a, with_model=True):
    try:
        data = data_config(a)
        if not with_model:
            return data
        return data, model_spec(a), train_config(a)
    except ValueError as exc:
        raise CliConfigError(str(exc)) from None


def _scope(run: Run):
    """(truth function or None, ego list or None) from --truth."""
    loaded = load_truth(run)
    if loaded is None:
        return None, None
    table, egos = loaded
    return (lambda e, s: table.get((e, s), set())), egos


def _data_meta(data: DataConfig) -> dict:
    return {
        "T": data.T,
        "special": data.variant.special.value,
        "temporal": data.variant.temporal.value,
        "context_length": data.context_length,
        "deletions": data.deletions,
        "extra_steps": data.extra_steps,
    }


def _checkpoint_meta(prep: Prepared, seed: int, **extra) -> dict:
    return {"data": _data_meta(prep.data), "vocab_sha256": prep.vocab.digest(), "seed": seed, **extra}


def _load_model(run: Run, prep: Prepared):
    path = run.input("checkpoint")
    if path is None:
        raise CliConfigError("--checkpoint is required")
    params, meta = load_checkpoint(path)
    if meta.get("vocab_sha256") not in (None, prep.vocab.digest()):
        raise CliConfigError("checkpoint vocabulary does not match this graph and data configuration")
    if params.config.vocab_size != len(prep.vocab):
        raise CliConfigError(f"checkpoint vocab size {params.config.vocab_size} != {len(prep.vocab)}")
    return params, meta


def _data_from_checkpoint(run: Run, data: DataConfig) -> DataConfig:
    """Flags the user did not set fall back to the checkpoint's data settings."""
    path = run.input("checkpoint")
    if path is None:
        return data
    _, meta = load_checkpoint(path)
    saved = meta.get("data")
    if not saved:
        return data
    given = set(_explicit_keys(run))
    merged = _data_meta(data)
    for k, v in saved.items():
        if k not in given:
            merged[k] = v
    return DataConfig(
        T=merged["T"],
        variant=TokenVariant.parse(merged["special"], merged["temporal"]),
        context_length=merged["context_length"],
        deletions=merged["deletions"],
        extra_steps=merged["extra_steps"],
    )


def _explicit_keys(run: Run) -> list[str]:
    keys = []
    for tok in run.args._argv:
        if tok.startswith("--"):
            keys.append(tok[2:].split("=", 1)[0].replace("-", "_"))
    if run.args.config:
        keys += list(read_config_file(Path(run.args.config)))
    if run.args._manifest_in is not None:
        keys += list(run.args._manifest_in["config"])
    return keys


def _select_egos(run: Run, prep: Prepared, step: int, scope_egos) -> list[str]:
    if run.args.egos:
        egos = [e.strip() for e in run.args.egos.split(",") if e.strip()]
        unknown = [e for e in egos if e not in prep.vocab.index or not prep.vocab.is_node(prep.vocab[e])]
        if unknown:
            raise CliConfigError(f"unknown egos: {unknown[:5]}")
        return egos
    if scope_egos is not None:
        return list(scope_egos)
    return [n for n in prep.graph.nodes if prep.index.history(n, step - 1)]


# ------------------------------------------------------------- commands


def cmd_ingest(run: Run) -> int:
    g = load_graph(run)
    summary = {
        "nodes": len(g.nodes),
        "edges": len(g.edges),
        "deletions": sum(e.op.value == "del" for e in g.edges),
        "self_loops": len(g.self_loops),
        "time_min": g.time_min,
        "time_max": g.time_max,
        "feature_dim": g.feature_dim,
    }
    if run.args.T is not None:
        prep = prepare(g, DataConfig(T=run.args.T))
        counts = [0] * prep.grid.T
        for s in prep.index.steps:
            counts[int(s) - 1] += 1
        summary["edges_per_step"] = counts
        summary["val_egos"] = len(prep.split.val_egos)
        summary["test_egos"] = len(prep.split.test_egos)
    text = json.dumps(summary, indent=2)
    print(text)
    if run.args.out:
        run.write(run.args.out, text + "\n")
    return EXIT_OK


def cmd_synth(run: Run) -> int:
    a = run.args
    try:
        spec = SynthSpec(SynthKind(a.kind), a.num_egos, a.neighbors, a.period, a.T, a.noise, a.seed,
                         a.extra_steps, a.step_width, a.burst_fraction)
    except ValueError as exc:
        raise CliConfigError(str(exc)) from None
    sg = generate(spec)
    run.write(a.out, format_edge_list(sg.graph))
    run.write(a.truth_out, sg.truth_csv())
    print(f"{len(sg.graph.edges)} edges, {len(sg.graph.nodes)} nodes, {sg.deviations} noisy interactions")
    return EXIT_OK


def cmd_tokenize(run: Run) -> int:
    data = _configs(run.args, with_model=False)
    prep = prepare(load_graph(run), data)
    steps = {"train": prep.train_steps, "val": [prep.split.val_step], "test": [prep.split.test_step]}[run.args.split]
    seqs = training_sequences(prep.index, prep.vocab, steps, data.variant, data.context_length, data.deletions)
    run.write(run.args.out, format_corpus(seqs, prep.vocab))
    print(f"{len(seqs)} sequences, vocabulary {len(prep.vocab)}")
    return EXIT_OK


def cmd_train(run: Run) -> int:
    data, model, tcfg = _configs(run.args)
    prep = prepare(load_graph(run), data)
    truth, egos = _scope(run)
    try:
        model.config(len(prep.vocab), data.context_length, tcfg.seed)
    except ModelConfigError as exc:
        raise CliConfigError(str(exc)) from None
    res = train_model(prep, model, tcfg, tcfg.seed, egos, truth)
    meta = _checkpoint_meta(prep, tcfg.seed, best_epoch=res.best_epoch)
    save_checkpoint(run.path(run.args.out), res.params, meta)
    run.write(run.args.log, res.log_csv())
    print(f"best epoch {res.best_epoch}, validation NDCG@5 {res.best_val_ndcg5:.4f}")
    return EXIT_OK


def cmd_eval(run: Run) -> int:
    a = run.args
    data, model, tcfg = _configs(a)
    if a.runs < 1:
        raise CliConfigError("--runs must be >= 1")
    truth, egos = _scope(run)
    if a.checkpoint:
        data = _data_from_checkpoint(run, data)
        prep = prepare(load_graph(run), data)
        params, _ = _load_model(run, prep)
        step = prep.split.test_step
        scope = egos if egos is not None else prep.graph.nodes
        scores = evaluate_model(params, prep, step, scope, truth, tcfg.cap, a.rank)
        reports = [MetricReport.from_runs(f"SimpleDyG[{data.variant.name}]", [scores]),
                   MetricReport.from_runs("recency-frequency", [evaluate_baseline(prep, step, scope, truth)])]
    else:
        result = run_experiment(load_graph(run), data, model, tcfg, a.runs, egos, truth)
        reports = [result.model, result.baseline]
        if a.save_checkpoints:
            prep = prepare(load_graph(run), data)
            for r, res in enumerate(result.trained):
                out = run.path(a.save_checkpoints) / f"run{r}.ckpt"
                out.parent.mkdir(parents=True, exist_ok=True)
                save_checkpoint(out, res.params, _checkpoint_meta(prep, tcfg.seed + r, best_epoch=res.best_epoch))
    run.write(a.out, report_csv(reports))
    print(report_table(reports), end="")
    return EXIT_OK


def cmd_predict(run: Run) -> int:
    a = run.args
    data = _data_from_checkpoint(run, _configs(a, with_model=False))
    prep = prepare(load_graph(run), data)
    params, _ = _load_model(run, prep)
    step = a.step if a.step is not None else prep.split.test_step
    if not 2 <= step <= prep.vocab.max_step:
        raise CliConfigError(f"--step must lie in 2..{prep.vocab.max_step}")
    _, scope_egos = _scope(run)
    egos = _select_egos(run, prep, step, scope_egos)
    preds = predict_steps(params, prep.vocab, prep.index, egos, step, data.variant, a.cap, a.rank, data.deletions)
    run.write(a.out, format_predictions(preds))
    return EXIT_OK


def cmd_multistep(run: Run) -> int:
    a = run.args
    data = _data_from_checkpoint(run, _configs(a, with_model=False))
    prep = prepare(load_graph(run), data)
    params, _ = _load_model(run, prep)
    start = a.start if a.start is not None else prep.split.test_step
    truth, scope_egos = _scope(run)
    egos = _select_egos(run, prep, start, scope_egos)
    rolls = multi_step_batch(params, prep.vocab, prep.index, egos, start, a.horizon, data.variant, a.cap)
    run.write(a.out, format_predictions([p for roll in rolls for p in roll]))
    if truth is not None:
        rows = ["step,ndcg5,jaccard"]
        for j in range(a.horizon):
            preds = [r[j] for r in rolls if truth(r[j].ego, r[j].step)]
            if preds:
                s = score_generated(preds, truth)
                rows.append(f"{start + j},{s.ndcg5!r},{s.jaccard!r}")
        run.write(a.scores_out, "\n".join(rows) + "\n")
        print("\n".join(rows))
    return EXIT_OK


ABLATION_HEADER = "special,temporal,ndcg5_mean,ndcg5_std,jaccard_mean,jaccard_std"


def cmd_ablate(run: Run) -> int:
    a = run.args
    data, model, tcfg = _configs(a)
    truth, egos = _scope(run)
    g = load_graph(run)
    rows = [ABLATION_HEADER]
    reports = []
    for variant in ALL_VARIANTS:
        log.info("variant %s", variant.name)
        res = run_experiment(g, dataclasses.replace(data, variant=variant), model, tcfg, a.runs, egos, truth,
                             method=variant.name)
        m = res.model
        reports.append(m)
        rows.append(f"{variant.special.value},{variant.temporal.value},"
                     f"{m.ndcg5[0]!r},{m.ndcg5[1]!r},{m.jaccard[0]!r},{m.jaccard[1]!r}")
    run.write(a.out, "\n".join(rows) + "\n")
    print(report_table(reports), end="")
    return EXIT_OK


def cmd_stats(run: Run) -> int:
    a = run.args
    if a.bin_width is None:
        raise CliConfigError("--bin-width is required")
    bins = interaction_stats(load_graph(run), a.bin_width, a.unit)
    text = format_stats_csv(bins)
    run.write(a.out, text)
    print(text, end="")
    return EXIT_OK


HANDLERS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "tokenize": cmd_tokenize,
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "multistep": cmd_multistep,
    "ablate": cmd_ablate,
    "stats": cmd_stats,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (CliConfigError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    args._argv = argv
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        run = Run(args)
        run.write_manifest()
        from threadpoolctl import threadpool_limits

        with threadpool_limits(limits=run.threads):
            return HANDLERS[args.command](run)
    except (CliConfigError, ConfigError, ModelConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:
        log.debug("failure", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
