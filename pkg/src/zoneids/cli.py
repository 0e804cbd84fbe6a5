"""Command-line entry point: one verb per pipeline stage plus ``run-all``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ExperimentConfig
from .errors import ZoneIDSError
from .runner import (
    REPORT_FORMAT,
    SeedRun,
    Workdir,
    dumps_report,
    restore_through,
    run_experiment,
    save_stage,
    summarize,
    write_report,
)

log = logging.getLogger("zoneids")

# verb -> pipeline stage; the data split is recomputed by every verb
VERBS = {
    "select-features": "selection",
    "train-universal": "universal",
    "train-autoencoder": "autoencoder",
    "deploy-zones": "deploy",
    "federate": "federate",
    "evaluate": "evaluate",
}


def _load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seeds([args.seed])
    return cfg


def _stage_verb(verb: str, args) -> int:
    cfg = _load_config(args)
    report = {"format": REPORT_FORMAT, "verb": verb, "status": "running",
              "config": cfg.to_dict(), "runs": []}
    status = 0
    for seed in cfg.seeds:
        run = SeedRun(cfg, seed)
        report["runs"].append(run.report)
        wd = Workdir(args.workdir, seed)
        stage = VERBS[verb]
        try:
            restore_through(run, stage, wd)
            getattr(run, f"stage_{stage}")()
            save_stage(run, stage, wd)
            run.report["status"] = "ok"
        except (ZoneIDSError, ValueError, FileNotFoundError, KeyError) as exc:
            log.error("%s failed for seed %d: %s", verb, seed, exc)
            run.report["status"] = "failed"
            run.report["error"] = {"stage": stage, "type": type(exc).__name__, "message": str(exc)}
            status = 1
            break
    report["status"] = "ok" if status == 0 else "failed"
    if verb == "evaluate" and status == 0:
        report["summary"] = summarize(report["runs"])
    _emit(report, args.out)
    return status


def _emit(report: dict, out) -> None:
    if out:
        write_report(report, out)
        log.info("report written to %s", out)
    else:
        sys.stdout.write(dumps_report(report))


def _run_all(args) -> int:
    cfg = _load_config(args)
    report = run_experiment(cfg)
    _emit(report, args.out)
    return 0 if report["status"] == "ok" else 1


def _show_config(args) -> int:
    cfg = _load_config(args)
    if args.out:
        cfg.save(args.out)
    else:
        sys.stdout.write(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zoneids",
        description="Zone-adaptive intrusion detection: staged pipeline and experiment runner.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, workdir=True):
        p.add_argument("--config", help="JSON experiment config (defaults built in when omitted)")
        p.add_argument("--seed", type=int, help="run this single seed instead of the configured list")
        p.add_argument("--out", help="report path (JSON; the metrics table goes next to it as .metrics.csv)")
        if workdir:
            p.add_argument("--workdir", default="zoneids-work",
                           help="artifact directory shared between stage verbs")

    for verb, stage in VERBS.items():
        common(sub.add_parser(verb, help=f"run the {stage} stage using earlier stages' artifacts"))
    common(sub.add_parser("run-all", help="run every stage for every seed and write the report"),
           workdir=False)
    common(sub.add_parser("show-config", help="print the fully resolved config"), workdir=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "run-all":
            return _run_all(args)
        if args.verb == "show-config":
            return _show_config(args)
        return _stage_verb(args.verb, args)
    except (ZoneIDSError, OSError) as exc:
        log.error("%s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
