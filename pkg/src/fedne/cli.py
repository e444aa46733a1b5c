"""Command-line interface: ``fedne {gen,partition,train,eval,plot,compare}``.

Every subcommand accepts ``--config FILE``: ``key = value`` lines using the
flag names (dashes or underscores, ``#`` starts a comment).  Flags given on
the command line override the file.

Exit status: 0 success, 1 usage or configuration error, 2 data error,
3 any other runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augment import MixingConfig
from .errors import ConfigError, DataError, FedNEError
from .federation import Method, RunConfig, embed, run
from .io import (BlobSpec, RunManifest, emit_svg, export_embedding, fingerprint, gen_blobs,
                 load_dataset, load_indices, read_embedding, save_dataset, save_indices)
from .metrics import EvalReport, evaluate
from .nn import load_checkpoint, save_checkpoint
from .partition import PartitionSpec, make_partition
from .surrogate import GridSpec

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text):
    try:
        return tuple(int(t) for t in str(text).replace(" ", "").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text):
    try:
        return tuple(float(t) for t in str(text).replace(" ", "").split(",") if t)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _str_list(text):
    return [t for t in str(text).replace(" ", "").split(",") if t]


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# -- config files -------------------------------------------------------------

def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; keys are normalized to underscores."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc.strerror}") from None
    for n, line in enumerate(lines, start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config(parser, args, argv):
    path = getattr(args, "config", None)
    if not path:
        return args
    given = {a.dest: a for a in parser._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, raw in read_config_file(path).items():
        action = given.get(key)
        if action is None:
            raise UsageError(f"{path}: unknown key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = _bool(raw)
            if isinstance(action, argparse._StoreFalseAction):
                value = not value
        else:
            try:
                value = action.type(raw) if action.type else raw
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{path}: bad value for {key}: {exc}") from None
            if action.choices is not None and value not in action.choices:
                raise UsageError(f"{path}: {key} must be one of {sorted(action.choices)}")
        defaults[key] = value
    parser.set_defaults(**defaults)
    return parser.parse_args(argv)


# -- shared flag groups -------------------------------------------------------

def _add_common(p):
    p.add_argument("--config", help="key=value file with defaults for any flag")
    p.add_argument("--seed", type=int, default=0)


def _add_partition_flags(p):
    g = p.add_argument_group("partition")
    g.add_argument("--scheme", choices=["dirichlet", "shards"], default=None)
    g.add_argument("--clients", type=int, default=None)
    g.add_argument("--dirichlet-alpha", type=float, default=None)
    g.add_argument("--classes-per-client", type=int, default=None)


_RUN_FLAGS = {
    # flag dest -> (RunConfig field, type)
    "rounds": ("rounds", int),
    "local_epochs": ("local_epochs", int),
    "batch_edges": ("batch_edges", int),
    "b": ("b", int),
    "k": ("k", int),
    "lr": ("lr", float),
    "lr_milestones": ("lr_milestones", _float_list),
    "lr_decay": ("lr_decay", float),
    "hidden": ("hidden", _int_list),
    "prox_mu": ("prox_mu", float),
    "participation_fraction": ("participation_fraction", float),
    "surrogate_start": ("surrogate_start_fraction", float),
    "surrogate_period": ("surrogate_period", int),
    "surrogate_hidden": ("surrogate_hidden", int),
    "surrogate_epochs": ("surrogate_epochs", int),
    "surrogate_initial_epochs": ("surrogate_initial_epochs", int),
    "surrogate_lr": ("surrogate_lr", float),
    "surrogate_batch": ("surrogate_batch", int),
}


def _add_run_flags(p):
    _add_partition_flags(p)
    g = p.add_argument_group("training")
    for dest, (_, typ) in _RUN_FLAGS.items():
        g.add_argument("--" + dest.replace("_", "-"), dest=dest, type=typ, default=None)
    g.add_argument("--surrogate-targets", choices=["sampled", "expected"], default=None)
    g.add_argument("--no-surrogate", action="store_true", help="FedNE without surrogates")
    g.add_argument("--no-mixing", action="store_true", help="FedNE without data mixing")
    g.add_argument("--mix-alpha", type=float, default=None)
    g.add_argument("--mix-ratio", type=float, default=None)
    g.add_argument("--grid-step", type=float, default=None)
    g.add_argument("--grid-margin", type=float, default=None)
    g.add_argument("--grid-max-points", type=int, default=None)


def _pick(args, names: dict) -> dict:
    return {field: getattr(args, flag) for flag, field in names.items()
            if getattr(args, flag, None) is not None}


def partition_spec(args) -> PartitionSpec:
    return PartitionSpec(**_pick(args, {"scheme": "scheme", "clients": "num_clients",
                                        "dirichlet_alpha": "alpha",
                                        "classes_per_client": "classes_per_client"}),
                         seed=args.seed)


def run_config(args, method=None) -> RunConfig:
    base = RunConfig()
    mix = _pick(args, {"mix_alpha": "alpha", "mix_ratio": "ratio"})
    if args.no_mixing:
        mix["ratio"] = 0.0
    grid = _pick(args, {"grid_step": "step", "grid_margin": "margin_fraction",
                        "grid_max_points": "max_points"})
    fields = {field: getattr(args, dest) for dest, (field, _) in _RUN_FLAGS.items()
              if getattr(args, dest) is not None}
    if args.surrogate_targets is not None:
        fields["surrogate_targets"] = args.surrogate_targets
    return RunConfig(
        method=Method.parse(method or args.method),
        partition=partition_spec(args),
        mixing=replace(base.mixing, seed=args.seed, **mix) if mix else
        MixingConfig(seed=args.seed),
        grid=replace(base.grid, **grid),
        use_surrogate=not args.no_surrogate,
        seed=args.seed,
        **fields,
    )


def _load_partition(directory, n_points):
    directory = Path(directory)
    files = sorted(directory.glob("client_*.idx"), key=lambda p: int(p.stem.split("_")[1]))
    if not files:
        raise DataError(f"{directory}: no client_*.idx files")
    parts = [load_indices(f) for f in files]
    for f, idx in zip(files, parts):
        if idx.size and (idx.min() < 0 or idx.max() >= n_points):
            raise DataError(f"{f}: index out of range for {n_points} points")
    return parts


def _now():
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def _mean_report(reports) -> EvalReport:
    return EvalReport(
        continuity=float(np.mean([r.continuity for r in reports])),
        trustworthiness=float(np.mean([r.trustworthiness for r in reports])),
        knn_accuracy=float(np.mean([r.knn_accuracy for r in reports])),
        k=reports[0].k, n=reports[0].n)


def evaluate_result(result, data, k) -> EvalReport:
    """Score a run on ``data``; LocalNE is scored as the mean over its client models."""
    reports = [evaluate(data, embed(m, data), k=k) for m in result.client_models]
    return _mean_report(reports)


def _deterministic(record: dict) -> dict:
    return {key: val for key, val in record.items() if key != "wall_time"}


# -- subcommands --------------------------------------------------------------

def cmd_gen(args):
    spec = BlobSpec(args.clusters, args.points_per_cluster, args.dim, args.std,
                    args.separation, args.seed)
    data = gen_blobs(spec)
    save_dataset(data, args.out, args.format)
    print(f"wrote {len(data)} points x {data.dim} dims to {args.out}")


def cmd_partition(args):
    data = load_dataset(args.data, args.format)
    spec = partition_spec(args)
    parts = make_partition(data, spec)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for m, idx in enumerate(parts):
        save_indices(idx, out / f"client_{m}.idx")
    summary = {"scheme": spec.scheme, "num_clients": spec.num_clients, "alpha": spec.alpha,
               "classes_per_client": spec.classes_per_client, "seed": spec.seed,
               "sizes": [int(p.size) for p in parts]}
    (out / "partition.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"wrote {len(parts)} client index files to {out}")


def cmd_train(args):
    data = load_dataset(args.data, args.format)
    cfg = run_config(args)
    parts = _load_partition(args.partition_dir, len(data)) if args.partition_dir else None
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    started = _now()
    log_path = out / "log.jsonl"
    with open(log_path, "w") as fh:
        def on_round(rec):
            fh.write(json.dumps(_deterministic(rec), sort_keys=True) + "\n")
            if args.verbose:
                print(f"round {rec['round']}: total={rec['total']:.5f}", file=sys.stderr)
        result = run(cfg, data, parts=parts, on_round=on_round,
                     checkpoint_dir=args.checkpoint_dir)
    outputs = {"log": str(log_path)}
    meta = {"method": cfg.method.value, "rounds": cfg.rounds, "seed": cfg.seed}
    if cfg.method is Method.LOCAL:
        for m, model in enumerate(result.client_models):
            path = out / f"model_client_{m}.fne"
            save_checkpoint(model, path, {**meta, "client": m})
            outputs[f"model_client_{m}"] = str(path)
    model_path = out / "model.fne"
    save_checkpoint(result.model, model_path, meta)
    outputs["model"] = str(model_path)
    emb_path = out / "embedding.csv"
    export_embedding(result.model, data, emb_path)
    outputs["embedding"] = str(emb_path)
    RunManifest(cfg.to_dict(), fingerprint(data), outputs, started, _now()).save(
        out / "manifest.json")
    print(f"trained {cfg.method.value} for {cfg.rounds} rounds; outputs in {out}")


def cmd_eval(args):
    data = load_dataset(args.data, args.format)
    if bool(args.embedding) == bool(args.model):
        raise UsageError("eval needs exactly one of --embedding or --model")
    if args.embedding:
        ids, _, z = read_embedding(args.embedding)
        if ids.shape[0] != len(data):
            raise DataError(f"{args.embedding}: {ids.shape[0]} rows for {len(data)} points")
        pos = {int(i): r for r, i in enumerate(ids)}
        try:
            z = z[[pos[int(i)] for i in data.ids]]
        except KeyError as exc:
            raise DataError(f"{args.embedding}: no row for id {exc.args[0]}") from None
        report = evaluate(data, z, k=args.k)
    else:
        reports = []
        for path in args.model:
            model, _ = load_checkpoint(path)
            if model.input_dim != data.dim:
                raise DataError(f"{path}: model expects D={model.input_dim}, data has {data.dim}")
            reports.append(evaluate(data, embed(model, data), k=args.k))
        report = _mean_report(reports)
    text = json.dumps(report.as_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text)


def cmd_plot(args):
    emit_svg(args.embedding, args.out, args.point_radius, args.palette_size)
    print(f"wrote {args.out}")


def cmd_compare(args):
    data = load_dataset(args.data, args.format)
    test = load_dataset(args.test_data, args.format) if args.test_data else data
    if test.dim != data.dim:
        raise DataError("test data dimension differs from training data")
    methods = [Method.parse(m) for m in args.methods]
    base = run_config(args, methods[0])
    parts = _load_partition(args.partition_dir, len(data)) if args.partition_dir else \
        make_partition(data, base.partition)
    rows = []
    for method in methods:
        result = run(run_config(args, method), data, parts=parts)
        rep = evaluate_result(result, test, args.eval_k)
        rows.append({"method": method.value, **rep.as_dict()})
    header = ["method", "knn_accuracy", "trustworthiness", "continuity", "k", "n"]
    lines = [",".join(header)]
    for r in rows:
        lines.append(",".join(f"{r[h]:.6f}" if isinstance(r[h], float) else str(r[h])
                              for h in header))
    table = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(table)
    sys.stdout.write(table)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedne", description="Federated parametric neighbor embedding.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate Gaussian blobs")
    _add_common(p)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--points-per-cluster", type=int, default=200)
    p.add_argument("--dim", type=int, default=50)
    p.add_argument("--std", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=10.0)
    p.add_argument("--format", choices=["csv", "fvec"], default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("partition", help="split a dataset into client index files")
    _add_common(p)
    _add_partition_flags(p)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["csv", "fvec"], default=None)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_partition)

    p = sub.add_parser("train", help="run one federated (or baseline) training")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("--method", default="fedne",
                   help="fedne, fedavg, fedprox, local or global")
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["csv", "fvec"], default=None)
    p.add_argument("--partition-dir", help="use client_*.idx files instead of partitioning")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--checkpoint-dir", help="save the global model after every round")
    p.add_argument("--verbose", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score an embedding or a model")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--format", choices=["csv", "fvec"], default=None)
    p.add_argument("--embedding")
    p.add_argument("--model", action="append", help="repeat to average several models")
    p.add_argument("--k", type=int, default=7)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("plot", help="render an embedding CSV as SVG")
    _add_common(p)
    p.add_argument("--embedding", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--point-radius", type=float, default=2.0)
    p.add_argument("--palette-size", type=int, default=10)
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("compare", help="run several methods on one partition")
    _add_common(p)
    _add_run_flags(p)
    p.add_argument("--methods", type=_str_list, default=["local", "fedavg", "fedne"])
    p.add_argument("--data", required=True)
    p.add_argument("--test-data", help="score on this dataset instead of the training data")
    p.add_argument("--format", choices=["csv", "fvec"], default=None)
    p.add_argument("--partition-dir")
    p.add_argument("--eval-k", type=int, default=7, help="neighborhood size of the metrics")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)
    return parser


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices.get(name)
    return None


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.config:
            sub = _subparser(parser, args.command)
            args = _apply_config(sub, sub.parse_args(argv[1:]), argv[1:])
            args.command = argv[0]
        args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"fedne: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FedNEError, FileNotFoundError) as exc:
        print(f"fedne: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001
        print(f"fedne: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
