"""Command-line entry point: run, report, validate-config, bench-math, make-dataset."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .analysis import SchemaError, emit_report
from .core import RunConfig
from .experiment import FAILURE_LIMIT, ExperimentConfig, make_sim_dataset, run_experiment
from .propositions import run_all

# flag name -> RunConfig field
_RUN_FLAGS = {
    "seed": "seed",
    "n_agents": "n_agents",
    "rounds": "refinement_rounds",
    "alpha": "alpha",
    "retention_rate": "retention_rate",
    "tau_min": "tau_min",
    "theta_sim": "theta_sim",
    "code_threshold": "code_cluster_threshold",
    "temperature": "temperature",
    "top_p": "top_p",
    "max_tokens": "max_tokens",
    "predictor": "predictor",
    "workers": "max_workers",
}
_EXP_FLAGS = ("dataset", "kind", "method", "backend", "out", "repetitions", "parallelism",
              "http_config", "confidence_fallback", "test_command")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config JSON; flags override its values")
    p.add_argument("--dataset")
    p.add_argument("--kind", choices=["choice", "numeric", "code"])
    p.add_argument("--method", help="concat, llm_debate, cot, sc_cot or vanilla:<star|chain|random|layered|full>")
    p.add_argument("--backend", help="sim, sim:<profile.json>, http or http:<base-url>")
    p.add_argument("--out")
    p.add_argument("--repetitions", type=int)
    p.add_argument("--parallelism", type=int)
    p.add_argument("--http-config")
    p.add_argument("--confidence-fallback", type=float)
    p.add_argument("--test-command", help="e.g. 'python {file}'; runs generated code (disabled by default)")
    p.add_argument("--seed", type=int)
    p.add_argument("--n-agents", type=int)
    p.add_argument("--rounds", type=int, help="refinement rounds after the independent round")
    p.add_argument("--alpha", type=float)
    p.add_argument("--retention-rate", type=float)
    p.add_argument("--tau-min", type=float)
    p.add_argument("--theta-sim", type=float)
    p.add_argument("--code-threshold", type=float)
    p.add_argument("--temperature", type=float)
    p.add_argument("--top-p", type=float)
    p.add_argument("--max-tokens", type=int)
    p.add_argument("--predictor", choices=["heuristic", "exact"])
    p.add_argument("--workers", type=int, help="concurrent agent calls within a round")


def config_from_args(args: argparse.Namespace) -> ExperimentConfig:
    base = json.loads(Path(args.config).read_text()) if args.config else {}
    for name in _EXP_FLAGS:
        value = getattr(args, name)
        if value is not None:
            base[name] = value
    run = dict(base.get("run", {}))
    for flag, fieldname in _RUN_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            run[fieldname] = value
    base["run"] = run
    if "dataset" not in base or "kind" not in base:
        raise ValueError("--dataset and --kind are required (or set them in --config)")
    return ExperimentConfig.from_dict(base)


def cmd_run(args) -> int:
    cfg = config_from_args(args)
    summary = run_experiment(cfg)
    print(json.dumps(summary, indent=2, sort_keys=True))
    if summary["failed_fraction"] > FAILURE_LIMIT:
        print(f"error: {summary['failed_fraction']:.0%} of tasks failed", file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    out = args.out or str(Path(args.results).parent / "report")
    report = emit_report(args.results, out)
    for row in report["efficiency"]:
        print(f"{row['method']:<20} acc={row['accuracy']} lat={row['mean_latency']:.3f} eff={row['efficiency']}")
    print(f"report written to {out}")
    return 0


def cmd_validate(args) -> int:
    cfg = config_from_args(args)
    cfg.validate()
    print("config ok")
    return 0


def cmd_bench_math(args) -> int:
    checks, elapsed = run_all()
    for c in checks:
        print(f"[{'PASS' if c.passed else 'FAIL'}] {c.name}: {c.detail}")
    print(f"elapsed {elapsed:.3f}s")
    return 0 if all(c.passed for c in checks) else 1


def cmd_make_dataset(args) -> int:
    rows = make_sim_dataset(args.kind, args.n, args.seed)
    with open(args.out, "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")
    print(f"wrote {len(rows)} tasks to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="concat-mas", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a method over a dataset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="analysis tables from a results JSONL")
    p.add_argument("results")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("validate-config", help="check a config without running it")
    _add_config_flags(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("bench-math", help="property grid for the exact expected-utility model")
    p.set_defaults(func=cmd_bench_math)

    p = sub.add_parser("make-dataset", help="write a synthetic dataset for simulation runs")
    p.add_argument("--kind", choices=["choice", "numeric", "code"], required=True)
    p.add_argument("--n", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_dataset)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, SchemaError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
