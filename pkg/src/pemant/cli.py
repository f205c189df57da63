"""Command-line entry point.

Exit codes: 0 success, 2 usage, 3 configuration, 4 data, 5 backend, 6 protocol.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .errors import (
    BackendError,
    ConfigError,
    DataError,
    MetricDomainError,
    PemantError,
    ProtocolError,
    RenderError,
    ResponseParseError,
)

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_BACKEND, EXIT_PROTOCOL = 0, 2, 3, 4, 5, 6

log = logging.getLogger("pemant")


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, RenderError)):
        return EXIT_CONFIG
    if isinstance(exc, (DataError, MetricDomainError)):
        return EXIT_DATA
    if isinstance(exc, BackendError):
        return EXIT_BACKEND
    if isinstance(exc, (ProtocolError, ResponseParseError)):
        return EXIT_PROTOCOL
    return EXIT_PROTOCOL


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("-c", "--config", required=True, help="run configuration (YAML)")
    p.add_argument("--run-dir", help="write outputs here instead of a timestamped directory")
    p.add_argument("--output-dir", help="parent of timestamped run directories")
    p.add_argument("--seed", type=int, help="scripted backend seed")
    p.add_argument("--workers", type=int, help="households processed concurrently")
    p.add_argument("--delta", type=int, help="consensus tolerance")
    p.add_argument("--t-max", type=int, help="maximum refinement rounds")
    p.add_argument("--lambda", dest="lam", type=float, help="trajectory length penalty")
    p.add_argument("--max-households", type=int, help="cap on evaluated households")
    p.add_argument("--endpoint", help="chat-completions base URL (switches to the HTTP backend)")
    p.add_argument("--model", help="model id for the HTTP backend")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pemant", description="Household trip generation with negotiating "
                                                                "persona agents.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("predict", help="full pipeline on the test split")
    _common(p)

    p = sub.add_parser("baseline", help="single-call baselines")
    p.add_argument("which", choices=("demographics", "household_copb"))
    _common(p)

    p = sub.add_parser("sft-export", help="proposal and dialogue fine-tuning sets")
    _common(p)
    p.add_argument("--k", dest="sft_k", type=int, help="proposal candidates per agent")
    p.add_argument("--m", dest="sft_m", type=int, help="self-play trajectories per household")

    p = sub.add_parser("perception", help="Likert perception survey and agreement metrics")
    _common(p)

    p = sub.add_parser("ablate", help="run one ablation variant")
    p.add_argument("variant", choices=("role_only", "demo_only", "no_parallel", "no_moderator", "full"))
    _common(p)

    p = sub.add_parser("validate-config", help="check config files, rule coverage and anchor leakage")
    p.add_argument("-c", "--config", required=True)

    p = sub.add_parser("make-fixture", help="write a synthetic dataset and a matching config")
    p.add_argument("out", help="output directory")
    p.add_argument("--households", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--nonresponse", type=float, default=0.05)
    p.add_argument("--test-fraction", type=float, default=0.5)
    return parser


def _overrides(args) -> dict:
    out = {}
    for name in ("output_dir", "workers", "delta", "t_max", "lam", "max_households", "sft_k", "sft_m"):
        v = getattr(args, name, None)
        if v is not None:
            out[name] = v
    return out


def _load(args):
    from .pipeline import load_config
    cfg = load_config(args.config, _overrides(args))
    if args.seed is not None:
        cfg.backend = {**cfg.backend, "seed": args.seed}
    if args.endpoint:
        cfg.backend = {"kind": "http", "endpoint": args.endpoint, "model": args.model or cfg.backend.get("model"),
                       **{k: v for k, v in cfg.backend.items() if k in ("api_key_env", "path", "timeout")}}
    cfg.validate()
    return cfg


def cmd_validate(args) -> int:
    from .pipeline import Study, load_config
    from .survey import load_schema
    from .translation import load_rules, validate_rule_set

    cfg = load_config(args.config)
    schema = load_schema(cfg.path("schema"))
    rules = load_rules(cfg.path("rules"))
    report = validate_rule_set(rules, schema, variables=rules.variables)
    for var, a, b in report.overlaps:
        print(f"overlap: {var}: {a} / {b}")
    for rid, name in report.unresolvable:
        print(f"unresolvable placeholder: {rid}: {{{name}}}")
    if report.uncovered_codes:
        print(f"note: {len(report.uncovered_codes)} coded values have no rule and emit no fact")
    if not report.ok:
        raise ConfigError("translation rule set is inconsistent")
    study = Study.load(cfg)
    print(f"ok: {len(study.train)} train / {len(study.test)} test households, "
          f"{len(study.drops)} dropped; anchors {cfg.anchor_source} -> {cfg.target_cycle}")
    return EXIT_OK


def cmd_make_fixture(args) -> int:
    from .synthetic import write_fixture

    p, h = write_fixture(args.out, args.households, args.seed, args.nonresponse)
    cfg = {"data": {"persons": p.name, "households": h.name},
           "split": {"test_fraction": args.test_fraction, "seed": args.seed},
           "backend": {"kind": "scripted", "seed": args.seed},
           "output_dir": "runs"}
    path = Path(args.out) / "config.yaml"
    path.write_text(yaml.safe_dump(cfg, sort_keys=False))
    print(path)
    return EXIT_OK


def run(args) -> int:
    from . import pipeline

    if args.command == "validate-config":
        return cmd_validate(args)
    if args.command == "make-fixture":
        return cmd_make_fixture(args)
    cfg = _load(args)
    if args.command == "predict":
        r, report, _ = pipeline.run_negotiation(cfg, "full", args.run_dir, "predict")
        print(report.to_table())
    elif args.command == "ablate":
        r, report, _ = pipeline.run_negotiation(cfg, args.variant, args.run_dir, f"ablate-{args.variant}")
        print(report.to_table())
    elif args.command == "baseline":
        r, report, _ = pipeline.run_baseline(cfg, args.which, args.run_dir)
        print(report.to_table())
    elif args.command == "sft-export":
        r, res, _ = pipeline.run_sft_export(cfg, args.run_dir)
        print(f"proposals: {len(res.proposals)}  dialogues: {len(res.dialogues)}  skipped: {len(res.skipped)}")
    elif args.command == "perception":
        r, metrics = pipeline.run_perception(cfg, args.run_dir)
        print(json.dumps(metrics, indent=2, sort_keys=True))
    print(f"run directory: {r.dir}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except PemantError as exc:
        stage = type(exc).__name__
        print(f"error [{stage}]: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
