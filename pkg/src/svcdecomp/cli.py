"""Command-line pipeline: analyze -> decompose -> evaluate, plus the search oracles.

Exit codes: 0 success, 1 internal error, 2 bad input, 3 configuration error.
Verbosity comes from the RAKE_LOG_LEVEL environment variable.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from dataclasses import fields, replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .agent import TrainConfig, save_checkpoint, train
from .env import ConfigError, EnvConfig, Objective, objective_value, parse_objective
from .graph import GraphError, build_odgs, load_graph, merge_odgs, overlap_ratio, save_graph
from .io import write_json_atomic, write_text_atomic
from .metrics import (
    TABLE_COLUMNS,
    Decomposition,
    DecompositionError,
    MetricsReport,
    evaluate,
    majority_capability,
)
from .oracle import DEFAULT_CAP, OracleError, TooLarge, exhaustive_best, hill_climb
from .trace_ingest import CapabilityMapError, TraceLog, TraceParseError, read_capability_map, read_log

DECOMPOSITION_FORMAT = "svcdecomp-decomposition/1"

EXIT_OK, EXIT_INTERNAL, EXIT_INPUT, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("svcdecomp")


class InputError(Exception):
    pass


def _setup_logging() -> None:
    level = os.environ.get("RAKE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _need_file(path: str | Path) -> Path:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"no such file: {p}")
    return p


# --- decomposition files -----------------------------------------------------


def decomposition_to_dict(g, d: Decomposition, report: MetricsReport | None = None, objective: Objective | None = None, value: float | None = None) -> dict:
    report = report or evaluate(g, d)
    services = []
    for sid, detail in enumerate(report.per_service):
        services.append({"id": sid, "capability": majority_capability(detail), "methods": detail.methods})
    doc = {"format": DECOMPOSITION_FORMAT}
    if objective is not None:
        doc["objective"] = str(objective)
        doc["objective_value"] = value
    doc["k"] = report.k
    doc["services"] = services
    return doc


def expand_classes(g, class_services: Sequence[Sequence[str]]) -> list[list[str]]:
    """Turn class-level services into method-level ones by signature prefix.

    A method belongs to class ``C`` when its signature starts with ``C.``.
    """
    out = []
    for classes in class_services:
        members = []
        for m in g.methods:
            owner = m.split("(", 1)[0].rsplit(".", 1)[0]
            if owner in classes:
                members.append(m)
        out.append(members)
    return out


def load_decomposition(g, path: str | Path, classes: bool = False) -> Decomposition:
    try:
        doc = json.loads(_need_file(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON: {exc}") from None
    raw = doc.get("services") if isinstance(doc, dict) else None
    if raw is None:
        raise InputError(f"{path}: missing 'services'")
    if isinstance(raw, dict):
        groups = [list(v) for _, v in sorted(raw.items())]
    else:
        groups = [list(s["methods"]) if isinstance(s, dict) else list(s) for s in raw]
    if classes:
        groups = expand_classes(g, groups)
    return Decomposition.from_services(g, groups)


def _report_csv(report: MetricsReport, label: str | None = None) -> str:
    buf = io.StringIO()
    cols = (("label",) if label is not None else ()) + TABLE_COLUMNS
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(cols)
    row = report.row()
    writer.writerow(([label] if label is not None else []) + [row[c] for c in TABLE_COLUMNS])
    return buf.getvalue()


def _print_report(report: MetricsReport, out=sys.stdout) -> None:
    print(f"services  {report.k}", file=out)
    print(f"MQ        {report.mq:.4f}   (cohesion {report.cohesion:.4f}, coupling {report.coupling:.4f})", file=out)
    print(f"ABCP      {report.abcp:.2f}   (BCP {report.bcp:.2f}, DI {report.di:.2f})", file=out)
    print(f"ICP       {report.icp:.4f}", file=out)
    print(f"IFN       {report.ifn:.4f}", file=out)
    for flag in report.flags:
        print(f"note: {flag}", file=out)


# --- commands ----------------------------------------------------------------


def cmd_analyze(args) -> int:
    blocks = []
    for path in args.input:
        blocks.extend(read_log(_need_file(path)).blocks)
    tlog = TraceLog(tuple(blocks))
    cmap = read_capability_map(_need_file(args.capability_map)) if args.capability_map else None
    odgs = build_odgs(tlog, allow_unlabeled=cmap is not None)
    g = merge_odgs(odgs, cmap)
    save_graph(g, args.output)
    if args.dot:
        write_text_atomic(args.dot, g.to_dot())
    split = sum(o.split_blocks for o in odgs)
    print(f"methods       {g.n}")
    print(f"edges         {g.n_edges}  (calls {g.total_calls})")
    print(f"capabilities  {g.caps.n_capabilities}  {', '.join(g.capability_names)}")
    print(f"overlap       {overlap_ratio(g):.4f}")
    if split:
        print(f"note: {split} trace block(s) interleaved several trace ids and were split per id")
    print(f"wrote {args.output}")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    cfg = TrainConfig(episodes=args.episodes, seed=args.seed, patience=args.patience)
    overrides = {}
    types = {f.name: f.type for f in fields(TrainConfig)}
    for item in args.hyper or ():
        key, sep, value = item.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in types or key in ("episodes", "seed", "patience"):
            raise ConfigError(f"bad hyperparameter override {item!r}")
        try:
            if key == "hidden":
                overrides[key] = tuple(int(v) for v in value.split(",") if v)
            elif key in ("update_epochs", "minibatch_size"):
                overrides[key] = int(value)
            else:
                overrides[key] = float(value)
        except ValueError:
            raise ConfigError(f"bad value in override {item!r}") from None
    try:
        return replace(cfg, **overrides)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_decompose(args) -> int:
    objective = parse_objective(args.objective, args.weight)
    try:
        train_cfg = _train_config(args)
        env_cfg_probe = EnvConfig(n_methods=1, p_max=args.pmax, objective=objective)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    g = load_graph(_need_file(args.input))
    env_cfg = replace(env_cfg_probe, n_methods=g.n, seed=args.seed)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    rows = ["episode,episode_best,global_best\n"]
    timing = ["episode,wall_time\n"]

    def on_episode(entry):
        rows.append(f"{entry.episode},{entry.episode_best!r},{entry.global_best!r}\n")
        timing.append(f"{entry.episode},{entry.wall_time:.6f}\n")

    try:
        result = train(g, env_cfg, train_cfg, on_episode=on_episode)
    finally:
        # flush whatever was logged, even when training aborts
        write_text_atomic(out / "train_log.csv", "".join(rows))
        write_text_atomic(out / "timing.csv", "".join(timing))
    report = evaluate(g, result.best, env_cfg.fractional)
    value = objective_value(g, result.best, objective, env_cfg.fractional)
    write_json_atomic(out / "decomposition.json", decomposition_to_dict(g, result.best, report, objective, value))
    write_json_atomic(out / "metrics.json", report.to_dict())
    write_text_atomic(out / "metrics.csv", _report_csv(report, str(objective)))
    save_checkpoint(out / "policy.npz", result, train_cfg, env_cfg)
    print(f"objective {objective}: best {value:.6f} after {len(result.log)} episode(s)")
    _print_report(report)
    print(f"wrote {out}/decomposition.json, metrics.json, metrics.csv, train_log.csv, policy.npz")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    g = load_graph(_need_file(args.input))
    d = load_decomposition(g, args.decomposition, classes=args.classes)
    report = evaluate(g, d)
    if args.output:
        if args.format == "csv":
            write_text_atomic(args.output, _report_csv(report))
        else:
            write_json_atomic(args.output, report.to_dict())
    if args.format == "csv" and not args.output:
        sys.stdout.write(_report_csv(report))
    else:
        _print_report(report)
    return EXIT_OK


def cmd_oracle(args) -> int:
    objective = parse_objective(args.objective, args.weight)
    g = load_graph(_need_file(args.input))
    if args.oracle_mode == "exhaustive":
        res = exhaustive_best(g, objective, cap=args.cap)
    else:
        res = hill_climb(g, objective, restarts=args.restarts, seed=args.seed)
    report = evaluate(g, res.best)
    doc = decomposition_to_dict(g, res.best, report, objective, res.objective)
    doc["mode"] = res.mode
    doc["evaluated"] = res.evaluated
    doc["metrics"] = report.to_dict()
    if args.output:
        write_json_atomic(args.output, doc)
    print(f"{res.mode}: best {objective} = {res.objective:.6f} over {res.evaluated} evaluation(s) in {res.elapsed:.2f}s")
    _print_report(report)
    return EXIT_OK


# --- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svcdecomp", description="Method-level service decomposition from execution traces.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="parse trace logs into a call-graph file")
    a.add_argument("--input", nargs="+", required=True, help="trace log file(s)")
    a.add_argument("--capability-map", help="method,capability mapping (CSV lines or JSON)")
    a.add_argument("--output", required=True, help="graph file to write (JSON)")
    a.add_argument("--dot", help="also write a Graphviz DOT export")
    a.set_defaults(func=cmd_analyze)

    def objective_flags(q):
        q.add_argument("--objective", default="mq", help="mq | abcp | weighted:<w>")
        q.add_argument("--weight", type=float, help="MQ weight for --objective weighted")

    d = sub.add_parser("decompose", help="train the agent and write the best decomposition")
    d.add_argument("--input", required=True, help="graph file")
    objective_flags(d)
    d.add_argument("--episodes", type=int, default=1500)
    d.add_argument("--pmax", type=int, default=3, help="passes over all methods per episode")
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--patience", type=int, help="stop after this many episodes without improvement")
    d.add_argument("--hyper", action="append", metavar="KEY=VALUE", help="override a training hyperparameter")
    d.add_argument("--output", required=True, help="output directory")
    d.set_defaults(func=cmd_decompose)

    e = sub.add_parser("evaluate", help="compute all metrics for a decomposition file")
    e.add_argument("--input", required=True, help="graph file")
    e.add_argument("--decomposition", required=True, help="decomposition file")
    e.add_argument("--classes", action="store_true", help="services list class names; expand to their methods")
    e.add_argument("--format", choices=("json", "csv"), default="json")
    e.add_argument("--output", help="write the report here")
    e.set_defaults(func=cmd_evaluate)

    o = sub.add_parser("oracle", help="exhaustive or hill-climbing search")
    o.add_argument("--input", required=True, help="graph file")
    objective_flags(o)
    o.add_argument("--oracle-mode", choices=("exhaustive", "hill-climb"), default="exhaustive")
    o.add_argument("--restarts", type=int, default=20)
    o.add_argument("--cap", type=int, default=DEFAULT_CAP, help="largest N for exhaustive search")
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--output", help="result file (JSON)")
    o.set_defaults(func=cmd_oracle)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, OracleError) as exc:
        code = EXIT_INPUT if isinstance(exc, TooLarge) else EXIT_CONFIG
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (InputError, TraceParseError, CapabilityMapError, GraphError, DecompositionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
