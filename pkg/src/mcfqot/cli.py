"""Command-line driver: ``mcfqot calibrate|generate|train|predict``.

Exit codes: 0 success, 1 runtime failure, 2 usage or input error.
The oracle config defaults to ``oracle.cfg`` in ``$MCFQOT_CONFIG_DIR`` when
that variable is set, otherwise to the bundled defaults.
"""

from __future__ import annotations

import argparse
import contextlib
import logging
import os
import pathlib
import sys
import time
from dataclasses import replace
from importlib import resources

from . import __version__
from .dataset import (
    DatasetFormatError,
    InsufficientPatterns,
    config_fingerprint,
    generate_balanced,
    read_dataset,
    run_generation,
    write_dataset,
)
from .dgcnn import FEASIBLE, INFEASIBLE, DgcnnConfig, forward, read_model, train, write_model
from .metrics import cross_validate
from .oracle import CalibrationError, OracleConfig, calibrate, read_config, write_config
from .rsca import RscaConfig
from .topology import Topology, TopologyError, load_topology, sample_topology
from .traffic import TrafficConfig

log = logging.getLogger("mcfqot")

CONFIG_DIR_ENV = "MCFQOT_CONFIG_DIR"
SAMPLES = ("sample30", "sample14")


class InputError(Exception):
    """Bad input file or argument detected after parsing; exit code 2."""


# --- argument helpers -------------------------------------------------------


def _topology(arg: str) -> Topology:
    path = pathlib.Path(arg)
    if not path.exists() and arg in SAMPLES:
        return sample_topology(arg)
    if not path.is_file():
        raise InputError(f"topology file not found: {arg}")
    try:
        return load_topology(path)
    except TopologyError as exc:
        raise InputError(f"{arg}: {exc}") from None


def default_oracle_config_path() -> pathlib.Path:
    env = os.environ.get(CONFIG_DIR_ENV)
    if env:
        candidate = pathlib.Path(env) / "oracle.cfg"
        if candidate.is_file():
            return candidate
    return pathlib.Path(str(resources.files("mcfqot.data").joinpath("oracle.cfg")))


def _oracle(arg: str | None) -> OracleConfig:
    path = pathlib.Path(arg) if arg else default_oracle_config_path()
    if not path.is_file():
        raise InputError(f"oracle config not found: {path}")
    try:
        return read_config(path)
    except (ValueError, TypeError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _dataset(arg: str):
    path = pathlib.Path(arg)
    if not path.is_file():
        raise InputError(f"dataset file not found: {arg}")
    try:
        with open(path) as fh:
            return read_dataset(fh)
    except DatasetFormatError as exc:
        raise InputError(f"{arg}: {exc}") from None


@contextlib.contextmanager
def _output(arg: str | None):
    if arg is None or arg == "-":
        yield sys.stdout
    else:
        with open(arg, "w") as fh:
            yield fh


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return value


def _non_negative_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0: {text}")
    return value


def _traffic(args, requests: int) -> TrafficConfig:
    return TrafficConfig(load_erlangs=args.load, mean_holding=args.holding, request_count=requests, seed=args.seed)


# --- subcommands ------------------------------------------------------------


def cmd_calibrate(args) -> int:
    topology = _topology(args.topology)
    base = _oracle(args.oracle_config)
    traffic = _traffic(args, args.requests)
    result = calibrate(base, topology, traffic, RscaConfig(), h_range=tuple(args.h_range))
    extra = {
        "infeasible_fraction": f"{result.infeasible_fraction:.4f}",
        "pilot_requests": args.requests,
        "load_erlangs": args.load,
        "seed": args.seed,
        "topology": topology.fingerprint(),
        "trials": " ".join(f"{h:.4g}:{f:.3f}" for h, f in result.trials),
    }
    with _output(args.out) as sink:
        write_config(base.with_h(result.h_per_km), sink, extra)
    print(f"h = {result.h_per_km:.6g} per km, infeasible fraction {result.infeasible_fraction:.3f}", file=sys.stderr)
    return 0


def cmd_generate(args) -> int:
    topology = _topology(args.topology)
    oracle = _oracle(args.oracle_config)
    traffic = _traffic(args, args.requests)
    rsca = RscaConfig()
    started = time.perf_counter()
    if args.balance:
        dataset = generate_balanced(topology, traffic, oracle, rsca, args.balance, seed=args.seed)
    else:
        dataset = run_generation(topology, traffic, oracle, rsca)
    comments = [
        f"seed {args.seed}",
        f"load_erlangs {args.load}",
        f"requests {args.requests}",
        f"balance {args.balance or 0}",
        f"h_per_km {oracle.xt_coupling_h_per_km!r}",
    ]
    with _output(args.out) as sink:
        write_dataset(dataset, sink, comments)
    labels = dataset.labels
    print(
        f"{len(dataset)} patterns ({int(labels.sum())} feasible) in {time.perf_counter() - started:.1f} s;"
        f" config {config_fingerprint(traffic, oracle, rsca)}",
        file=sys.stderr,
    )
    return 0


def _history_path(base: str, fold: int | None) -> pathlib.Path:
    path = pathlib.Path(base)
    return path if fold is None else path.with_name(f"{path.stem}-fold{fold}{path.suffix}")


def cmd_train(args) -> int:
    dataset = _dataset(args.dataset)
    if len(dataset) == 0:
        raise InputError(f"{args.dataset}: dataset is empty")
    overrides = {"seed": args.seed}
    if args.epochs is not None:
        overrides["max_epochs"] = args.epochs
    if args.lr is not None:
        overrides["learning_rate"] = args.lr
    if args.sortpool_k is not None:
        overrides["sortpool_k"] = args.sortpool_k
    if args.val_fraction is not None:
        overrides["val_fraction"] = args.val_fraction
    config = replace(DgcnnConfig(), **overrides)

    if args.cv:
        def saved(result):
            print(f"fold {result.fold}: acc {result.accuracy:.4f} auc {result.auc:.4f}", file=sys.stderr)
            if args.history:
                with open(_history_path(args.history, result.fold), "w") as fh:
                    result.history.write_csv(fh)

        try:
            report = cross_validate(dataset, args.cv, config, seed=args.seed, on_fold=saved)
        except ValueError as exc:
            raise InputError(str(exc)) from None
        with _output(args.out) as sink:
            report.write_csv(sink, case=args.case)
        print(
            f"mean acc {report.mean_accuracy:.4f} auc {report.mean_auc:.4f};"
            f" pooled acc {report.pooled_accuracy:.4f} auc {report.pooled_auc:.4f};"
            f" {report.seconds / 60:.2f} min",
            file=sys.stderr,
        )
        return 0

    if not args.out or args.out == "-":
        raise InputError("train without --cv needs --out for the model file")
    model, history = train(dataset, config)
    with open(args.out, "w") as fh:
        write_model(model, fh, fingerprint=dataset.config_fingerprint)
    history_path = pathlib.Path(args.history) if args.history else pathlib.Path(args.out).with_suffix(".history.csv")
    with open(history_path, "w") as fh:
        history.write_csv(fh)
    last = history.epochs[-1]
    print(f"{len(history)} epochs, final loss {last.loss:.4f} train acc {last.train_acc:.4f}", file=sys.stderr)
    return 0


def cmd_predict(args) -> int:
    model_path = pathlib.Path(args.model)
    if not model_path.is_file():
        raise InputError(f"model file not found: {args.model}")
    try:
        model = read_model(model_path)
    except ValueError as exc:
        raise InputError(f"{args.model}: {exc}") from None
    dataset = _dataset(args.dataset)
    if len(dataset) and dataset.n != model.n:
        raise InputError(f"dataset has n={dataset.n}, model expects n={model.n}")
    latencies = []
    with _output(args.out) as sink:
        for pattern in dataset.patterns:
            t0 = time.perf_counter()
            score = forward(model, pattern)
            decision = FEASIBLE if score >= args.threshold else INFEASIBLE
            latencies.append(time.perf_counter() - t0)
            sink.write(f"{pattern.request} {score:.6f} {decision}\n")
            print(f"latency {pattern.request} {1000 * latencies[-1]:.2f} ms", file=sys.stderr)
    if latencies:
        print(f"{len(latencies)} patterns, max latency {1000 * max(latencies):.2f} ms", file=sys.stderr)
    return 0


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcfqot", description="QoT estimation pipeline for multi-core fibre networks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def network_flags(p, requests: int):
        p.add_argument("--topology", default="sample30", help="topology file, or a bundled sample name")
        p.add_argument("--oracle-config", help=f"oracle config file (default: ${CONFIG_DIR_ENV}/oracle.cfg or bundled)")
        p.add_argument("--load", type=_positive_float, default=400.0, help="offered load in Erlangs")
        p.add_argument("--holding", type=_positive_float, default=1.0, help="mean holding time")
        p.add_argument("--requests", type=_non_negative_int, default=requests)
        p.add_argument("--seed", type=int, default=1)
        p.add_argument("--out", help="output file (default stdout)")

    p = sub.add_parser("calibrate", help="fit the crosstalk coefficient and write an oracle config")
    network_flags(p, 2000)
    p.add_argument("--h-range", type=_positive_float, nargs=2, metavar=("LOW", "HIGH"), default=[1e-6, 1e-2])
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("generate", help="simulate traffic and write a labelled dataset")
    network_flags(p, 20000)
    p.add_argument("--balance", type=_non_negative_int, default=0, metavar="PER_CLASS", help="keep this many patterns per label")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model, or cross-validate with --cv")
    p.add_argument("dataset")
    p.add_argument("--cv", type=_non_negative_int, default=0, metavar="FOLDS")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=_positive_float)
    p.add_argument("--sortpool-k", type=int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--case", default="1", help="case label for the --cv summary")
    p.add_argument("--history", help="learning-curve CSV path")
    p.add_argument("--out", help="model file, or the --cv report CSV (default stdout)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="score patterns and print admission decisions")
    p.add_argument("dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", help="decision stream (default stdout)")
    p.set_defaults(func=cmd_predict)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "calibrate" and not args.h_range[0] < args.h_range[1]:
        parser.error("--h-range: LOW must be below HIGH")
    if args.command == "train" and args.epochs is not None and args.epochs < 1:
        parser.error("--epochs must be >= 1")
    if args.command == "train" and args.cv == 1:
        parser.error("--cv needs at least 2 folds")
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"mcfqot: error: {exc}", file=sys.stderr)
        return 2
    except (CalibrationError, InsufficientPatterns) as exc:
        print(f"mcfqot: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
