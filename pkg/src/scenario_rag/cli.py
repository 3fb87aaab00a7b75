"""scenario-rag command line - main entry point."""

import argparse
import logging
import sys
from collections.abc import Callable, Sequence
from dataclasses import replace

from . import __version__, pipeline
from .config import PipelineConfig, default_config, settings
from .errors import ScenarioRagError
from .gradcheck import OBJECTIVES

logger = logging.getLogger(__name__)

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class UsageError(Exception):
    """Raised instead of argparse's exit(2) so usage errors map to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _global_flags(parser: argparse.ArgumentParser, *, suppress: bool) -> None:
    """Global flags; subparsers repeat them with suppressed defaults so either position works."""
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="Seed for every random stream (u64)")
    parser.add_argument("--config", default=default, help="Pipeline config JSON (see --dump-config)")
    parser.add_argument("--out", default=default, help="Output directory for artifacts")
    parser.add_argument("--threads", type=int, default=default, help="Worker processes")
    parser.add_argument("--log-level", choices=LOG_LEVELS, default=default, type=str.upper)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="scenario-rag", description="Structure-aware driving-scenario retrieval.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--dump-config", action="store_true", help="Print the effective config and exit")
    _global_flags(parser, suppress=False)

    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    command("gen-data", "Generate the labelled dataset and held-out queries")

    p = command("dtw-matrix", "Compute the pairwise graph-DTW distance matrix")
    p.add_argument("--w-node", type=float, help="Node-term weight")
    p.add_argument("--w-edge", type=float, help="Edge-term weight")
    p.add_argument("--w-attr", type=float, help="Attribute-term weight")

    p = command("train-embed", "Train the scenario encoder")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lambda-r", type=float, help="Restoration loss weight")
    p.add_argument("--lambda-a", type=float, help="Alignment loss weight")

    p = command("embed", "Embed a dataset with the trained checkpoint")
    p.add_argument("--dataset", help="Scenario JSONL (default: the generated dataset)")
    p.add_argument("--vectors-out", help="Vectors CSV path (default: <out>/vectors.csv)")

    p = command("build-index", "Build the retrieval index from embedded vectors")
    p.add_argument("--vectors", help="Vectors CSV (default: <out>/vectors.csv)")

    p = command("query", "Retrieve the k nearest scenarios")
    p.add_argument("--scenario", required=True, help="Scenario id or JSONL file")
    p.add_argument("-k", type=int)
    p.add_argument("--context-out", help="Write the retrieved context as JSONL")

    p = command("bench", "Benchmark exact-index query latency")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("--queries", type=int, help="Queries per size")
    p.add_argument("--dim", type=int)

    p = command("eval-retrieval", "Recall@k of held-out queries")
    p.add_argument("--mode", choices=("gbr", "vsr"), required=True)
    p.add_argument("-k", type=int)

    p = command("eval-ablation", "Restoration-only vs full-objective recall@k")
    p.add_argument("-k", type=int)

    p = command("grad-check", "Finite-difference gradient checks of every objective")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--objectives", nargs="+", choices=OBJECTIVES)

    p = command("size-sweep", "Recall@k and latency over nested index sizes")
    p.add_argument("--sizes", type=int, nargs="+")
    p.add_argument("-k", type=int)

    return parser


def effective_config(args: argparse.Namespace) -> PipelineConfig:
    """Defaults, then the config file, then flags."""
    cfg = PipelineConfig.load(args.config) if args.config else default_config()
    cfg = cfg.with_overrides(seed=args.seed, threads=args.threads, output_dir=args.out)

    if getattr(args, "k", None) is not None:
        cfg = replace(cfg, k=args.k)
    weights = {
        name: getattr(args, name)
        for name in ("w_node", "w_edge", "w_attr")
        if getattr(args, name, None) is not None
    }
    if weights:
        cfg = replace(cfg, weights=replace(cfg.weights, **weights))
    train = {
        name: getattr(args, name)
        for name in ("epochs", "lambda_r", "lambda_a")
        if getattr(args, name, None) is not None
    }
    if train:
        cfg = replace(cfg, train=replace(cfg.train, **train))
    cfg.check()
    return cfg


def _dispatch(args: argparse.Namespace, cfg: PipelineConfig) -> str:
    handlers: dict[str, Callable[[], str]] = {
        "gen-data": lambda: pipeline.gen_data(cfg),
        "dtw-matrix": lambda: pipeline.dtw_matrix(cfg),
        "train-embed": lambda: pipeline.train_embed(cfg),
        "embed": lambda: pipeline.embed(cfg, dataset=args.dataset, out=args.vectors_out),
        "build-index": lambda: pipeline.build_index_cmd(cfg, vectors=args.vectors),
        "query": lambda: pipeline.query(cfg, args.scenario, context_out=args.context_out),
        "bench": lambda: pipeline.bench(cfg, sizes=args.sizes, queries_per_size=args.queries, dim=args.dim),
        "eval-retrieval": lambda: pipeline.eval_retrieval(cfg, args.mode),
        "eval-ablation": lambda: pipeline.eval_ablation(cfg),
        "grad-check": lambda: pipeline.grad_check_cmd(cfg, points=args.points, objectives=args.objectives),
        "size-sweep": lambda: pipeline.size_sweep_cmd(cfg, sizes=args.sizes),
    }
    return handlers[args.command]()


def run(argv: Sequence[str] | None = None) -> int:
    """Run one subcommand; return the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.dump_config and args.command is None:
            raise UsageError(f"{parser.format_usage()}scenario-rag: error: a command is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    if args.log_level:
        logging.getLogger("scenario_rag").setLevel(args.log_level)

    try:
        cfg = effective_config(args)
        if args.dump_config:
            sys.stdout.write(cfg.dumps())
            return 0
        logger.info(
            "%s: seed=%d threads=%d out=%s k=%d",
            args.command,
            cfg.seed,
            cfg.threads,
            cfg.output_dir,
            cfg.k,
        )
        pipeline.ensure_output_dir(cfg)
        sys.stdout.write(_dispatch(args, cfg))
    except ScenarioRagError as exc:
        logger.debug("Command failed", exc_info=True)
        print(f"Error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 2
    return 0


# ------------------------------------------------------------------
# Entry point
# ------------------------------------------------------------------


def main() -> None:
    """Run the scenario-rag command line."""
    logging.basicConfig(
        level=getattr(logging, settings.log_level.upper(), logging.INFO),
        stream=sys.stderr,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    sys.exit(run())


if __name__ == "__main__":
    main()
