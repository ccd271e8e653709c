"""Command-line entry point.

    fedrec run   [--config FILE] [overrides...]
    fedrec sweep [--config FILE] --pair recommender:hsimagg --pair random:fedavg

Config files are YAML mappings whose keys are ``FederationConfig`` field
names plus ``outdir``, ``label`` and (for sweeps) ``pairs``, a list of
``[policy, aggregator]`` entries. Command-line flags override the file.

Exit codes: 0 success, 1 configuration error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import yaml

from fedrec.aggregation import AGGREGATORS, MODES
from fedrec.recommender import POLICIES
from fedrec.simulator import FederationConfig, InvalidConfig, RoundError, final_metrics, make_federation, run_federation

logger = logging.getLogger(__name__)

OUTDIR_ENV = "FEDREC_OUTDIR"
EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

_CONFIG_FIELDS = {f.name: f for f in dataclasses.fields(FederationConfig)}
_SPEC_KEYS = {"outdir", "label", "pairs"}


class ConfigError(ValueError):
    def __init__(self, msg: str, line: int | None = None) -> None:
        super().__init__(f"line {line}: {msg}" if line is not None else msg)
        self.line = line


@dataclass
class ExperimentSpec:
    config: FederationConfig
    outdir: Path
    label: str = "run"
    pairs: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        labels = [pair_label(p) for p in self.pairs]
        if len(set(labels)) != len(labels):
            raise ConfigError("duplicate (policy, aggregator) pairs in sweep")


def pair_label(pair: tuple[str, str]) -> str:
    return f"{pair[0]}+{pair[1]}"


def _coerce(name: str, value, line: int | None):
    f = _CONFIG_FIELDS[name]
    default = f.default
    try:
        if isinstance(default, bool):
            if not isinstance(value, bool):
                raise TypeError
            return value
        if isinstance(default, int):
            if isinstance(value, bool) or not isinstance(value, int):
                raise TypeError
            return value
        if isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise TypeError
            return float(value)
        if isinstance(default, str):
            if not isinstance(value, str):
                raise TypeError
            return value
        if name == "speed_range":
            if not isinstance(value, (list, tuple)) or len(value) != 2:
                raise TypeError
            return tuple(float(x) for x in value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {name!r}: {value!r}", line) from None
    return value


def load_config_file(path: str | Path) -> tuple[dict, dict[str, int]]:
    """Parse a YAML config, returning values and the 1-based line of each key."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark is not None else None
        raise ConfigError(f"cannot parse config: {exc.problem}", line) from None
    if data is None:
        return {}, {}
    if not isinstance(data, dict) or not isinstance(node, yaml.MappingNode):
        raise ConfigError("config must be a mapping of key: value", 1)
    lines = {k.value: k.start_mark.line + 1 for k, _ in node.value if isinstance(k, yaml.ScalarNode)}
    return data, lines


def _parse_pair(text) -> tuple[str, str]:
    if isinstance(text, str):
        parts = text.split(":")
    else:
        parts = list(text)
    if len(parts) != 2:
        raise ConfigError(f"pair must be policy:aggregator, got {text!r}")
    policy, agg = parts
    if policy not in POLICIES:
        raise ConfigError(f"unknown policy {policy!r} in pair")
    if agg not in AGGREGATORS:
        raise ConfigError(f"unknown aggregator {agg!r} in pair")
    return policy, agg


def build_spec(args: argparse.Namespace) -> ExperimentSpec:
    values: dict = {}
    lines: dict[str, int] = {}
    if args.config:
        try:
            values, lines = load_config_file(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None

    kwargs = {}
    for key, value in values.items():
        line = lines.get(key)
        if key in _SPEC_KEYS:
            continue
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"unknown key {key!r}", line)
        kwargs[key] = _coerce(key, value, line)

    overrides = {
        "seed": args.seed,
        "rounds": args.rounds,
        "n_collaborators": args.collaborators,
        "fraction": args.fraction,
        "policy": args.policy,
        "aggregator": args.aggregator,
        "agg_mode": args.agg_mode,
        "epsilon": args.epsilon,
        "heterogeneity": args.heterogeneity,
        "workers": args.workers,
    }
    overrides = {k: v for k, v in overrides.items() if v is not None}
    kwargs.update(overrides)
    try:
        config = FederationConfig(**kwargs)
    except InvalidConfig as exc:
        line = None if exc.field in overrides else lines.get(exc.field)
        raise ConfigError(str(exc), line) from None

    outdir = args.outdir or values.get("outdir") or os.environ.get(OUTDIR_ENV) or "runs"
    label = args.label or values.get("label") or "run"
    if not isinstance(label, str) or not label or "/" in label:
        raise ConfigError(f"invalid label {label!r}", lines.get("label"))

    pairs: list[tuple[str, str]] = []
    raw_pairs = getattr(args, "pair", None) or values.get("pairs") or []
    if not isinstance(raw_pairs, list):
        raise ConfigError("pairs must be a list", lines.get("pairs"))
    for p in raw_pairs:
        try:
            pairs.append(_parse_pair(p))
        except ConfigError as exc:
            line = None if getattr(args, "pair", None) else lines.get("pairs")
            raise ConfigError(str(exc), line) from None
    return ExperimentSpec(config, Path(outdir), label, pairs)


def write_rounds(path: Path, logs) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for log in logs:
            fh.write(json.dumps(log.to_dict(), sort_keys=True) + "\n")


ROUND_TABLE_COLUMNS = ("round", "mode", "n_selected", "performance_score", "loss", "duration", "sim_time")


def write_round_table(path: Path, logs) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(ROUND_TABLE_COLUMNS)
        for log in logs:
            writer.writerow([log.round, log.mode, len(log.selected_ids), repr(log.performance_score),
                             repr(log.loss), repr(log.duration), repr(log.sim_time)])


def execute(config: FederationConfig, dest: Path, label: str) -> dict:
    """Run one federation and write its files into ``dest``."""
    dest.mkdir(parents=True, exist_ok=True)
    fed = make_federation(config)
    logs = run_federation(config, federation=fed)
    write_rounds(dest / "rounds.jsonl", logs)
    write_round_table(dest / "rounds.csv", logs)
    fed.store.save(dest / "store.jsonl")
    summary = {"label": label, "config": config.to_dict(), **final_metrics(logs)}
    (dest / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return summary


def run(spec: ExperimentSpec) -> int:
    try:
        summary = execute(spec.config, spec.outdir / spec.label, spec.label)
    except RoundError as exc:
        print(f"error: run {spec.label!r} failed in {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"{spec.label}: final score {summary['final_performance_score']!r} loss {summary['final_loss']!r}")
    return EXIT_OK


def sweep(spec: ExperimentSpec, jobs: int = 1) -> int:
    if not spec.pairs:
        print("error: sweep needs at least one --pair", file=sys.stderr)
        return EXIT_CONFIG
    root = spec.outdir / spec.label

    def one(pair):
        cfg = dataclasses.replace(spec.config, policy=pair[0], aggregator=pair[1])
        name = pair_label(pair)
        try:
            return name, execute(cfg, root / name, name), None
        except (RoundError, OSError) as exc:
            return name, None, exc

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(one, spec.pairs))
    else:
        results = [one(p) for p in spec.pairs]

    root.mkdir(parents=True, exist_ok=True)
    with open(root / "comparison.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pair", "policy", "aggregator", "status", "final_performance_score", "final_loss", "sim_time"])
        for pair, (name, summary, err) in zip(spec.pairs, results):
            if summary is None:
                writer.writerow([name, *pair, "failed", "", "", ""])
            else:
                writer.writerow([name, *pair, "ok", repr(summary["final_performance_score"]),
                                 repr(summary["final_loss"]), repr(summary["sim_time"])])

    failed = [(name, err) for name, summary, err in results if summary is None]
    for name, summary, _ in results:
        if summary is not None:
            print(f"{name}: final score {summary['final_performance_score']!r} loss {summary['final_loss']!r}")
    for name, err in failed:
        print(f"error: pair {name} failed in {err}", file=sys.stderr)
    return EXIT_RUNTIME if failed else EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--rounds", type=int)
    p.add_argument("--collaborators", type=int)
    p.add_argument("--fraction", type=float)
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--aggregator", choices=AGGREGATORS)
    p.add_argument("--agg-mode", choices=MODES)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--heterogeneity", type=float)
    p.add_argument("--workers", type=int, help="threads for local training within a round")
    p.add_argument("--outdir", help=f"output root (default ${OUTDIR_ENV} or ./runs)")
    p.add_argument("--label")
    p.add_argument("-v", "--verbose", action="store_true")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fedrec", description="Federated learning simulator with recommender-driven selection.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p_run = sub.add_parser("run", help="run one federation")
    _add_common(p_run)
    p_sweep = sub.add_parser("sweep", help="compare (policy, aggregator) pairs")
    _add_common(p_sweep)
    p_sweep.add_argument("--pair", action="append", help="policy:aggregator, repeatable")
    p_sweep.add_argument("--jobs", type=int, default=1, help="pairs to run concurrently")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        spec = build_spec(args)
    except ConfigError as exc:
        where = f"{args.config}: " if args.config else ""
        print(f"config error: {where}{exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "run":
        return run(spec)
    return sweep(spec, jobs=max(1, args.jobs))


if __name__ == "__main__":
    sys.exit(main())
