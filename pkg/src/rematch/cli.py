"""Command-line interface: match, eval, grid, docgen, serve.

Every subcommand accepts ``--config FILE`` naming a JSON object whose keys are
flag names (underscored); explicit flags win over config-file values. Usage
errors exit 2, runtime failures exit 1 with the error on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .docgen import MODE_FULL, MODES, all_documents, write_documents
from .embedding import DEFAULT_REMOTE_DIM, EmbedderSpec, EmbeddingCache, default_cache
from .errors import RematchError
from .evaluation import format_grid_table, format_report, make_report
from .pipeline import (
    PipelineConfig,
    grid_search,
    matrix_from_dict,
    matrix_to_dict,
    run_rematch,
)
from .ranking import KIND_ORACLE, KIND_REMOTE_LLM, RankerSpec, TranscriptLogger
from .schema import load_ground_truth, load_schema

logger = logging.getLogger(__name__)

EMBEDDER_CHOICES = ("hash", "remote")
RANKER_CHOICES = ("oracle", "remote")


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not an integer")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def int_list(text: str) -> list[int]:
    try:
        values = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{text!r} is not a comma-separated "
                                         f"integer list")
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError("values must be integers >= 1")
    return values


def _embedder_spec(name: str) -> EmbedderSpec:
    if name == "hash":
        return EmbedderSpec()
    return EmbedderSpec(kind="remote", dim=DEFAULT_REMOTE_DIM)


def _ranker_spec(name: str) -> RankerSpec:
    return RankerSpec(kind=KIND_ORACLE if name == "oracle" else KIND_REMOTE_LLM)


def _add_backend_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--embedder", choices=EMBEDDER_CHOICES, default="hash",
                        help="embedding backend (default: hash)")
    parser.add_argument("--ranker", choices=RANKER_CHOICES, default="oracle",
                        help="ranking backend (default: oracle)")
    parser.add_argument("--mode", choices=MODES, default=MODE_FULL,
                        help="document rendering mode")
    parser.add_argument("--cache", metavar="FILE",
                        help="embedding cache file (default: REMATCH_CACHE_DIR)")


def _add_config_flag(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE",
                        help="JSON file of flag defaults; explicit flags win")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="rematch",
        description="Schema matching via document retrieval and top-K ranking.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands: dict[str, argparse.ArgumentParser] = {}

    match = sub.add_parser("match", help="run one matching pass")
    match.add_argument("--source", metavar="FILE", help="source schema")
    match.add_argument("--target", metavar="FILE", help="target schema")
    match.add_argument("--out", metavar="DIR", help="output directory")
    match.add_argument("--j", type=positive_int, default=1,
                       help="tables retrieved per attribute (default 1)")
    match.add_argument("--k", type=positive_int, default=1,
                       help="ranked targets per attribute (default 1)")
    match.add_argument("--no-retrieval", action="store_true",
                       help="skip retrieval; every target table is a candidate")
    match.add_argument("--guidance", metavar="FILE",
                       help="known mappings in the ground-truth format")
    match.add_argument("--checkpoint", metavar="FILE",
                       help="per-table progress file (default: OUT/checkpoint.json)")
    match.add_argument("--tag", default="", help="free-form run label")
    match.add_argument("--parallel", type=positive_int, default=4,
                       help="tables ranked at once with a remote ranker")
    _add_backend_flags(match)
    _add_config_flag(match)
    commands["match"] = match

    ev = sub.add_parser("eval", help="score a finished run against ground truth")
    ev.add_argument("--results", metavar="PATH",
                    help="run manifest file or its directory")
    ev.add_argument("--truth", metavar="FILE", help="ground-truth CSV")
    ev.add_argument("--k", type=int_list, default=[1],
                    help="comma-separated cutoffs, e.g. 1,2,5")
    ev.add_argument("--out", metavar="DIR",
                    help="also write report.json and report.txt here")
    _add_config_flag(ev)
    commands["eval"] = ev

    grid = sub.add_parser("grid", help="sweep a (J, K) grid")
    grid.add_argument("--source", metavar="FILE", help="source schema")
    grid.add_argument("--target", metavar="FILE", help="target schema")
    grid.add_argument("--truth", metavar="FILE", help="ground-truth CSV")
    grid.add_argument("--j", type=int_list, default=[1, 2, 3, 5, 7],
                      help="J values (default 1,2,3,5,7)")
    grid.add_argument("--k", type=int_list, default=[1, 2, 3, 5, 7],
                      help="K values (default 1,2,3,5,7)")
    grid.add_argument("--out", metavar="DIR",
                      help="write grid.json and grid.txt here")
    _add_backend_flags(grid)
    _add_config_flag(grid)
    commands["grid"] = grid

    docgen = sub.add_parser("docgen", help="render one schema to documents")
    docgen.add_argument("--schema", metavar="FILE", help="schema file")
    docgen.add_argument("--out", metavar="DIR", help="output directory")
    docgen.add_argument("--mode", choices=MODES, default=MODE_FULL)
    _add_config_flag(docgen)
    commands["docgen"] = docgen

    serve = sub.add_parser("serve", help="start the HTTP service")
    serve.add_argument("--root", metavar="DIR", help="persistence directory")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=positive_int, default=8000)
    serve.add_argument("--ui", metavar="DIR",
                       help="static frontend assets to serve at /")
    _add_config_flag(serve)
    commands["serve"] = serve

    return parser, commands


def _apply_config_file(parser: argparse.ArgumentParser,
                       commands: dict[str, argparse.ArgumentParser],
                       argv: list[str],
                       args: argparse.Namespace) -> argparse.Namespace:
    """Reparse with config-file values as defaults so explicit flags win."""
    path = getattr(args, "config", None)
    if not path:
        return args
    command = commands[args.command]
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        command.error(f"cannot read --config {path}: {exc}")
    if not isinstance(doc, dict):
        command.error(f"--config {path} must hold a JSON object")
    known = {action.dest for action in command._actions}
    unknown = sorted(set(doc) - known)
    if unknown:
        command.error(f"unknown config keys: {', '.join(unknown)}")
    command.set_defaults(**doc)
    return parser.parse_args(argv)


def _require(command: argparse.ArgumentParser, args: argparse.Namespace,
             *names: str) -> None:
    for name in names:
        if getattr(args, name, None) in (None, ""):
            command.error(f"--{name.replace('_', '-')} is required")


def _as_int_list(value) -> list[int]:
    if isinstance(value, int):
        values = [value]
    elif isinstance(value, str):
        values = [int(part) for part in value.split(",") if part.strip()]
    else:
        values = [int(v) for v in value]
    if not values or any(v < 1 for v in values):
        raise ValueError(f"values must be integers >= 1, got {value!r}")
    return values


def _coerce_numeric(command: argparse.ArgumentParser,
                    args: argparse.Namespace) -> None:
    """Config files may supply numbers as strings or scalars; normalize and
    validate them with a usage error (exit 2), same as bad flags."""
    try:
        if args.command == "match":
            args.j, args.k = int(args.j), int(args.k)
            args.parallel = int(args.parallel)
            if min(args.j, args.k, args.parallel) < 1:
                raise ValueError("--j/--k/--parallel must be >= 1")
        elif args.command == "eval":
            args.k = _as_int_list(args.k)
        elif args.command == "grid":
            args.j = _as_int_list(args.j)
            args.k = _as_int_list(args.k)
        elif args.command == "serve":
            args.port = int(args.port)
    except (TypeError, ValueError) as exc:
        command.error(str(exc))


def _cache_for(args: argparse.Namespace) -> EmbeddingCache:
    return default_cache(args.cache) if getattr(args, "cache", None) else default_cache()


def _cmd_match(args: argparse.Namespace) -> int:
    source = load_schema(args.source)
    target = load_schema(args.target)
    guidance = ()
    if args.guidance:
        guidance = tuple(load_ground_truth(args.guidance).pairs)
    config = PipelineConfig(
        j=args.j, k=args.k, mode=args.mode, retrieval=not args.no_retrieval,
        embedder=_embedder_spec(args.embedder), ranker=_ranker_spec(args.ranker),
        guidance=guidance, tag=args.tag, table_parallelism=args.parallel)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    checkpoint = Path(args.checkpoint) if args.checkpoint else out / "checkpoint.json"
    matrix = run_rematch(source, target, config, cache=_cache_for(args),
                         checkpoint=checkpoint,
                         transcript=TranscriptLogger(out / "transcript.jsonl"))
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(matrix_to_dict(matrix), indent=2) + "\n",
                             encoding="utf-8")
    print(f"matched {len(matrix.rows)} attributes across "
          f"{len(matrix.candidate_counts)} tables "
          f"(avg {matrix.avg_candidate_tables:.2f} candidate tables)")
    print(f"wrote {manifest_path}")
    return 0


def _load_manifest(path_text: str) -> dict:
    path = Path(path_text)
    if path.is_dir():
        path = path / "manifest.json"
    return json.loads(path.read_text(encoding="utf-8"))


def _cmd_eval(args: argparse.Namespace) -> int:
    matrix = matrix_from_dict(_load_manifest(args.results))
    truth = load_ground_truth(args.truth)
    report = make_report(matrix, truth, args.k)
    text = format_report(report)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (out / "report.txt").write_text(text + "\n", encoding="utf-8")
        print(f"wrote {out / 'report.json'}")
    return 0


def _cmd_grid(args: argparse.Namespace) -> int:
    source = load_schema(args.source)
    target = load_schema(args.target)
    truth = load_ground_truth(args.truth)
    config = PipelineConfig(
        mode=args.mode, embedder=_embedder_spec(args.embedder),
        ranker=_ranker_spec(args.ranker))
    report = grid_search(source, target, truth, args.j, args.k, config,
                         cache=_cache_for(args))
    text = format_grid_table(report)
    print(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "grid.json").write_text(
            json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out / "grid.txt").write_text(text + "\n", encoding="utf-8")
        print(f"wrote {out / 'grid.json'}")
    if report.errors:
        print(f"{len(report.errors)} cells failed", file=sys.stderr)
        return 1
    return 0


def _cmd_docgen(args: argparse.Namespace) -> int:
    schema = load_schema(args.schema)
    docs = all_documents(schema, args.mode)
    manifest = write_documents(docs, args.out)
    n_tables = len(schema.tables)
    print(f"wrote {len(manifest)} documents ({n_tables} tables, "
          f"{len(manifest) - n_tables} attributes) to {args.out}")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(args.root, ui_dir=args.ui)
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    logging.basicConfig(level=logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    parser, commands = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    args = _apply_config_file(parser, commands, argv, args)
    command = commands[args.command]

    if args.command == "match":
        _require(command, args, "source", "target", "out")
    elif args.command == "eval":
        _require(command, args, "results", "truth")
    elif args.command == "grid":
        _require(command, args, "source", "target", "truth")
    elif args.command == "docgen":
        _require(command, args, "schema", "out")
    elif args.command == "serve":
        _require(command, args, "root")
    _coerce_numeric(command, args)

    handlers = {
        "match": _cmd_match,
        "eval": _cmd_eval,
        "grid": _cmd_grid,
        "docgen": _cmd_docgen,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except RematchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
