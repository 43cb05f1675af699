"""Command-line front end: train, predict, evaluate, gap-trace, bench.

Exit codes: 0 on success (training converged), 2 when training ran out of
epochs without converging, 1 on usage, IO, or data errors. The MCSVM_LOG
environment variable (debug/info/warning/error) sets log verbosity.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from dataclasses import dataclass, field

from .dataset import (
    DatasetError,
    Normalization,
    SparseDataset,
    normalize,
    parse_libsvm,
    parse_vector,
)
from .dist import llw_distributed_train, ww_distributed_train
from .eval import evaluate
from .kernels import warm_up
from .llw import llw_train
from .model import ModelFormatError, load_model_file, predict, save_model_file
from .ovr import ovr_train
from .sched import build_schedule
from .solver import SolverConfig
from .transport import TcpTransport, TransportError, parse_hosts
from .ww import ww_train

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CONVERGED = 2

SOLVERS = ("llw", "ww", "ovr")


@dataclass
class RunConfig:
    """Validated run parameters shared by the train-like commands."""

    command: str
    solver: str = "ww"
    data: str | None = None
    test: str | None = None
    c_reg: float = 1.0
    epsilon: float = 1e-3
    seed: int = 0
    workers: int = 1
    nodes: "list[tuple[str, int]] | None" = None
    node_id: int = 0
    normalization: Normalization = Normalization.NONE
    max_epochs: int = 1000
    shrinking: bool = True
    model_path: str | None = None
    stats_path: str | None = None
    output_path: str | None = None
    repeats: int = 1
    rounds: int = 10
    workers_grid: "list[int]" = field(default_factory=lambda: [1, 2, 4])

    def __post_init__(self) -> None:
        if self.solver not in SOLVERS:
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.c_reg <= 0:
            raise ValueError("C must be positive")
        if self.epsilon <= 0:
            raise ValueError("eps must be positive")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.nodes is not None:
            if self.solver == "ovr":
                raise ValueError("distributed training supports llw and ww only")
            if not 0 <= self.node_id < len(self.nodes):
                raise ValueError("node-id must index the --nodes list")

    def solver_config(self, seed: int | None = None) -> SolverConfig:
        return SolverConfig(
            c_reg=self.c_reg,
            epsilon=self.epsilon,
            max_epochs=self.max_epochs,
            seed=self.seed if seed is None else seed,
            num_workers=self.workers,
            shrinking=self.shrinking,
        )


def _c_value(args: argparse.Namespace) -> float:
    if args.C is not None and args.logC is not None:
        raise ValueError("give either --C or --logC, not both")
    if args.C is not None:
        return args.C
    if args.logC is not None:
        return 10.0 ** args.logC
    return 1.0


def _load_dataset(path: str, mode: Normalization) -> SparseDataset:
    with open(path, "r", encoding="utf-8") as fh:
        ds = parse_libsvm(fh)
    return normalize(ds, mode)


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    return RunConfig(
        command=args.command,
        solver=getattr(args, "solver", "ww"),
        data=getattr(args, "data", None),
        test=getattr(args, "test", None),
        c_reg=_c_value(args) if hasattr(args, "C") else 1.0,
        epsilon=getattr(args, "eps", 1e-3),
        seed=getattr(args, "seed", 0),
        workers=getattr(args, "workers", 1),
        nodes=parse_hosts(args.nodes) if getattr(args, "nodes", None) else None,
        node_id=getattr(args, "node_id", 0),
        normalization=Normalization(getattr(args, "normalize", "none")),
        max_epochs=getattr(args, "max_epochs", 1000),
        shrinking=not getattr(args, "no_shrink", False),
        model_path=getattr(args, "model", None),
        stats_path=getattr(args, "stats", None),
        output_path=getattr(args, "output", None),
        repeats=getattr(args, "repeats", 1),
        rounds=getattr(args, "rounds", 10),
        workers_grid=_parse_grid(getattr(args, "workers_grid", "1,2,4")),
    )


def _parse_grid(text: str) -> "list[int]":
    grid = [int(tok) for tok in text.split(",") if tok.strip()]
    if not grid or any(w < 1 for w in grid):
        raise ValueError("workers grid must be positive integers")
    return grid


def _numbered_path(path: str, k: int) -> str:
    if k == 1:
        return path
    stem, dot, ext = path.rpartition(".")
    if not dot:
        return f"{path}-{k}"
    return f"{stem}-{k}.{ext}"


def _train_once(cfg: RunConfig, ds: SparseDataset, seed: int) -> tuple:
    solver_cfg = cfg.solver_config(seed)
    if cfg.nodes is not None:
        transport = TcpTransport(cfg.node_id, cfg.nodes, ds.content_hash())
        try:
            trainer = llw_distributed_train if cfg.solver == "llw" else ww_distributed_train
            model, stats = trainer(ds, solver_cfg, transport)
        finally:
            transport.close()
        return model, None, stats
    if cfg.solver == "llw":
        return llw_train(ds, solver_cfg)
    if cfg.solver == "ww":
        return ww_train(ds, solver_cfg)
    return ovr_train(ds, solver_cfg)


def cmd_train(cfg: RunConfig) -> int:
    if not cfg.data:
        raise ValueError("--data is required")
    ds = _load_dataset(cfg.data, cfg.normalization)
    log.info("training %s on %s: %d samples, %d classes, %d features",
             cfg.solver, cfg.data, ds.num_samples, ds.num_classes,
             ds.num_features)
    all_converged = True
    for k in range(1, cfg.repeats + 1):
        model, _, stats = _train_once(cfg, ds, cfg.seed + k - 1)
        all_converged = all_converged and stats.converged
        if cfg.stats_path:
            with open(_numbered_path(cfg.stats_path, k), "w", encoding="utf-8") as fh:
                fh.write(stats.to_csv())
        if k == 1 and cfg.model_path:
            save_model_file(model, cfg.model_path)
        print(f"repeat {k}: epochs={len(stats.epochs)} "
              f"dual={stats.final_dual():.6f} converged={stats.converged}")
    return EXIT_OK if all_converged else EXIT_NOT_CONVERGED


def cmd_gap_trace(cfg: RunConfig) -> int:
    """Train and report the per-epoch duality gap trace."""
    if not cfg.data:
        raise ValueError("--data is required")
    ds = _load_dataset(cfg.data, cfg.normalization)
    _, _, stats = _train_once(cfg, ds, cfg.seed)
    text = stats.to_csv()
    if cfg.stats_path:
        with open(cfg.stats_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    first, last = stats.epochs[0], stats.epochs[-1]
    print(f"gap: initial={first.gap:.6g} final={last.gap:.6g} "
          f"epochs={len(stats.epochs)} converged={stats.converged}",
          file=sys.stderr)
    return EXIT_OK if stats.converged else EXIT_NOT_CONVERGED


def cmd_predict(cfg: RunConfig) -> int:
    if not cfg.model_path or not cfg.data:
        raise ValueError("--model and --data are required")
    model = load_model_file(cfg.model_path)
    lines_out = []
    with open(cfg.data, "r", encoding="utf-8") as fh:
        for line in fh:
            bare = line.strip()
            if not bare or bare.startswith("#"):
                continue
            vector = parse_vector(bare)
            lines_out.append(model.label_names[predict(model, vector)])
    text = "".join(name + "\n" for name in lines_out)
    if cfg.output_path:
        with open(cfg.output_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_evaluate(cfg: RunConfig) -> int:
    if not cfg.model_path:
        raise ValueError("--model is required")
    test_path = cfg.test or cfg.data
    if not test_path:
        raise ValueError("--test (or --data) is required")
    model = load_model_file(cfg.model_path)
    test_ds = _load_dataset(test_path, cfg.normalization)
    report = evaluate(model, test_ds)
    sys.stdout.write(report.to_text())
    if cfg.stats_path:
        with open(cfg.stats_path, "w", encoding="utf-8") as fh:
            fh.write(report.to_csv())
    else:
        sys.stdout.write(report.to_csv())
    return EXIT_OK


def _dump_schedule(num_classes: int, path: str) -> int:
    rows = ["round,kind,class_a,class_b"]
    for r, rnd in enumerate(build_schedule(num_classes), start=1):
        for a, b in rnd.pairs:
            rows.append(f"{r},pair,{a},{b}")
        if rnd.bye is not None:
            rows.append(f"{r},bye,{rnd.bye},")
    text = "\n".join(rows) + "\n"
    if path == "-":
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_bench(cfg: RunConfig, dump_schedule: str | None = None,
              num_classes: int | None = None) -> int:
    """Fixed-epoch timing across a worker grid; emits a speedup CSV."""
    if dump_schedule is not None:
        if not num_classes:
            raise ValueError("--classes is required with --dump-schedule")
        return _dump_schedule(num_classes, dump_schedule)
    if not cfg.data:
        raise ValueError("--data is required")
    ds = _load_dataset(cfg.data, cfg.normalization)
    trainer = {"llw": llw_train, "ww": ww_train, "ovr": ovr_train}[cfg.solver]
    warm_up()
    timings = []
    for workers in cfg.workers_grid:
        solver_cfg = SolverConfig(
            c_reg=cfg.c_reg, epsilon=cfg.epsilon, max_epochs=cfg.rounds,
            seed=cfg.seed, num_workers=workers, shrinking=False,
        )
        tick = time.perf_counter()
        trainer(ds, solver_cfg)
        seconds = time.perf_counter() - tick
        timings.append((workers, seconds))
        log.info("bench %s workers=%d: %.3fs", cfg.solver, workers, seconds)
    reference = next((s for w, s in timings if w == 1), timings[0][1])
    rows = ["solver,workers,nodes,seconds,speedup"]
    for workers, seconds in timings:
        speedup = 1.0 if workers == 1 else reference / seconds
        rows.append(f"{cfg.solver},{workers},1,{seconds:.6f},{speedup:.4f}")
    text = "\n".join(rows) + "\n"
    if cfg.stats_path:
        with open(cfg.stats_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _add_common(sub: argparse.ArgumentParser, with_solver: bool = True) -> None:
    if with_solver:
        sub.add_argument("--solver", choices=SOLVERS, default="ww")
    sub.add_argument("--data", help="training data in sparse text format")
    sub.add_argument("--test", help="test data path")
    sub.add_argument("--logC", type=float, default=None,
                     help="regularization as log10(C)")
    sub.add_argument("--C", type=float, default=None, help="regularization C")
    sub.add_argument("--eps", type=float, default=1e-3,
                     help="optimality band half-width")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--workers", type=int, default=1)
    sub.add_argument("--nodes", help="comma-separated host:port list")
    sub.add_argument("--node-id", type=int, default=0, dest="node_id",
                     help="this node's index into --nodes")
    sub.add_argument("--normalize", choices=[m.value for m in Normalization],
                     default="none")
    sub.add_argument("--max-epochs", type=int, default=1000, dest="max_epochs")
    sub.add_argument("--no-shrink", action="store_true", dest="no_shrink")
    sub.add_argument("--model", help="model file path")
    sub.add_argument("--stats", help="statistics CSV path")
    sub.add_argument("--repeats", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mcsvm",
        description="Parallel dual coordinate ascent for linear multi-class SVMs",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    train = subs.add_parser("train", help="train a model to convergence")
    _add_common(train)

    gap = subs.add_parser("gap-trace", help="train and emit the duality-gap trace")
    _add_common(gap)

    pred = subs.add_parser("predict", help="label samples with a saved model")
    _add_common(pred)
    pred.add_argument("--output", help="write one label per line here")

    ev = subs.add_parser("evaluate", help="score a saved model on a test set")
    _add_common(ev)

    bench = subs.add_parser("bench", help="fixed-epoch timing over a worker grid")
    _add_common(bench)
    bench.add_argument("--rounds", type=int, default=10,
                       help="fixed epoch budget per timing run")
    bench.add_argument("--workers-grid", default="1,2,4", dest="workers_grid")
    bench.add_argument("--dump-schedule", dest="dump_schedule", default=None,
                       help="write the pairing schedule CSV to PATH ('-' = stdout)")
    bench.add_argument("--classes", type=int, default=None,
                       help="class count for --dump-schedule")
    return parser


def _setup_logging() -> None:
    level_name = os.environ.get("MCSVM_LOG", "warning").upper()
    level = getattr(logging, level_name, None)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(
        level=level, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )


def main(argv: "list[str] | None" = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    try:
        cfg = _config_from_args(args)
        if cfg.command == "train":
            return cmd_train(cfg)
        if cfg.command == "gap-trace":
            return cmd_gap_trace(cfg)
        if cfg.command == "predict":
            return cmd_predict(cfg)
        if cfg.command == "evaluate":
            return cmd_evaluate(cfg)
        if cfg.command == "bench":
            return cmd_bench(cfg, getattr(args, "dump_schedule", None),
                             getattr(args, "classes", None))
        parser.error(f"unknown command {cfg.command!r}")
        return EXIT_ERROR
    except (DatasetError, ModelFormatError, TransportError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
