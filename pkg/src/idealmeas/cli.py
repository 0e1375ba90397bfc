"""Command-line entry point: ``idealmeas run`` and ``idealmeas verify``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config, resolve
from .scenarios import ScenarioResult, run_scenario_result, verify_suite

CSV_COLUMNS = ("scenario", "seed", "param", "t", "metric", "value")


def _cell(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path: Path, result: ScenarioResult) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in result.rows:
            w.writerow([_cell(r.scenario), _cell(r.seed), _cell(r.param), _cell(r.t), _cell(r.metric), _cell(r.value)])


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "item"):
        x = x.item()
    if isinstance(x, float) and x != x or x in (float("inf"), float("-inf")):
        return None
    return x


def summary(result: ScenarioResult, cfg: ExperimentConfig) -> dict:
    return {
        "scenario": result.scenario,
        "config_echo": cfg.echo(),
        "checks": [c.as_dict() for c in result.checks],
        "fitted": _jsonable(result.fitted),
    }


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n")


def run_scenario(cfg: ExperimentConfig, out: Path) -> ScenarioResult:
    """Run the configured scenario and write results.csv and summary.json into ``out``."""
    result = run_scenario_result(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "results.csv", result)
    write_json(out / "summary.json", summary(result, cfg))
    return result


def verify(cfg: ExperimentConfig, out: Path | None = None) -> ScenarioResult:
    result = verify_suite(cfg)
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_json(out / "verify.json", summary(result, cfg))
    return result


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else resolve(ExperimentConfig())
    if args.seed is not None:
        cfg = resolve(replace(cfg, experiment=replace(cfg.experiment, seed=args.seed)))
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="idealmeas", description="Finite-size ideal measurement experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("run", "run the configured scenario"), ("verify", "run the invariant suite")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=str, default=None, help="INI configuration file")
        p.add_argument("--out", type=str, default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override [experiment] seed")
        p.add_argument("--quiet", action="store_true", help="suppress progress output")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.command == "run":
        out = Path(args.out or "results")
        result = run_scenario(cfg, out)
        if not args.quiet:
            for c in result.checks:
                print(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={c.value!r} tolerance={c.tolerance!r}")
            print(f"wrote {out / 'results.csv'} and {out / 'summary.json'}")
        return 0
    result = verify(cfg, Path(args.out) if args.out else None)
    failed = [c.as_dict() for c in result.checks if not c.passed]
    if not args.quiet:
        for c in result.checks:
            print(f"{'PASS' if c.passed else 'FAIL'} {c.name} value={c.value!r} tolerance={c.tolerance!r}")
    if failed:
        print(json.dumps({"failures": failed}, sort_keys=True))
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
