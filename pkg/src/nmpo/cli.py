"""``nmpo`` command line.

Machine-readable output goes to stdout as JSON, diagnostics to stderr.
Exit codes: 0 success, 1 usage, 2 data, 3 model, 4 internal.
"""

from __future__ import annotations

import argparse
import contextlib
import dataclasses
import json
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Iterator, Optional, Sequence

from . import __version__
from .errors import ConfigError, DataError, NmpoError
from .ingest import RunSpec, parse_perf_csv
from .pipeline import PipelineConfig, load_model, predict_offload, prepare_records, save_model, train_pipeline
from .report import ReportOptions, load_timings, report, write_report
from .stats import build_matrix, correlation_matrix
from .metrics import NMC_FEATURES
from .synth import SynthConfig, generate_synthetic_corpus

log = logging.getLogger("nmpo")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL, EXIT_INTERNAL = 0, 1, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this CLI reserves 2 for data errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("global options")
    g.add_argument("--config", type=Path, help="pipeline config (JSON)")
    g.add_argument("--seed", type=int, help="override the seed in the config")
    g.add_argument("--force", action="store_true", help="overwrite existing outputs")
    g.add_argument("--quiet", action="store_true", help="only print errors on stderr")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="nmpo", description="Predict near-memory offload suitability from host profiles.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", parents=[common], help="train the two-stage model")
    p.add_argument("--out", type=Path, required=True, help="model bundle to write")
    p.add_argument("--reports", type=Path, help="report directory (default: <out>.reports)")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    p = sub.add_parser("predict", parents=[common], help="predict offload suitability for one profile")
    p.add_argument("--model", type=Path, required=True, help="model bundle")
    p.add_argument("--perf", type=Path, required=True, help="host profile (perf stat CSV)")
    p.add_argument("--spec", required=True, help="run spec as inline JSON or a path to a JSON file")

    p = sub.add_parser("correlate", parents=[common], help="write the feature correlation matrix")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    p = sub.add_parser("report", parents=[common], help="write report tables and figures")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--model", type=Path, help="model bundle; adds confusion, probabilities and accuracy")
    p.add_argument("--timings", help="paired perf/PISA timings CSV, or 'builtin' for the bundled table")
    p.add_argument("--no-figures", action="store_true", help="skip PNG figures")

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--synth-config", type=Path, help="generator options (JSON); defaults otherwise")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    return parser


# ---------------------------------------------------------------------------
# atomic outputs


@contextlib.contextmanager
def staged_dir(target: Path, force: bool) -> Iterator[Path]:
    """Yield a scratch directory that replaces ``target`` only on success."""
    target = Path(target)
    if target.exists() and not force:
        raise ConfigError(f"{target} exists (use --force to overwrite)")
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{target.name}.", dir=target.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    if target.exists():
        old = Path(tempfile.mkdtemp(prefix=f".{target.name}.old.", dir=target.parent))
        os.replace(target, old / target.name)
        os.replace(tmp, target)
        shutil.rmtree(old, ignore_errors=True)
    else:
        os.replace(tmp, target)


def _check_file_target(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigError(f"{path} exists (use --force to overwrite)")


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_config(args) -> PipelineConfig:
    if args.config is None:
        raise ConfigError("--config is required for this command")
    cfg = PipelineConfig.load(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    return cfg


# ---------------------------------------------------------------------------
# commands


def cmd_train(args) -> int:
    cfg = _load_config(args)
    reports = args.reports or args.out.with_name(args.out.name + ".reports")
    _check_file_target(args.out, args.force)
    result = train_pipeline(cfg)
    opts = ReportOptions(machine=cfg.roofline, label_convention=cfg.label_convention,
                         timings=load_timings(cfg.timings) if cfg.timings else None,
                         evaluation=result.evaluation, correlation=result.correlation)
    docs = report(result.records, result.bundle, opts)
    with staged_dir(reports, args.force) as tmp:
        write_report(docs, tmp, figures=not args.no_figures)
        (tmp / "cv_reports.json").write_text(json.dumps({
            "regressor": [r.to_dict() for r in result.regressor_search.trials],
            "classifier": [r.to_dict() for r in result.classifier_search.trials],
            "stage_coupling": result.ipc_mismatch,
            "warnings": result.warnings,
        }, indent=2, sort_keys=True) + "\n")
    save_model(result.bundle, args.out)
    summary = {"model": str(args.out), "reports": str(reports), "model_hash": result.bundle.digest,
               "features": result.selected, "warnings": result.warnings,
               "regressor_cv_rmse": result.regressor_search.report.cv_score,
               "classifier_cv_accuracy": result.classifier_search.report.cv_score}
    if result.evaluation is not None:
        summary["loao_mean_accuracy"] = result.evaluation.mean_app_accuracy
        summary["loao_pooled_accuracy"] = result.evaluation.pooled_accuracy
    _emit(summary)
    return EXIT_OK


def _read_spec(text: str) -> RunSpec:
    src = text
    if not text.lstrip().startswith("{"):
        try:
            src = Path(text).read_text()
        except OSError as exc:
            raise ConfigError(f"--spec: cannot read {text}: {exc.strerror or exc}") from None
    try:
        d = json.loads(src)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"--spec: invalid JSON: {exc.msg}") from None
    if not isinstance(d, dict):
        raise ConfigError("--spec must be a JSON object")
    try:
        return RunSpec(app=d["app"], dataset_level=d.get("dataset_level", 1),
                       dataset_param=d.get("dataset_param", 1), threads=d["threads"],
                       role=d.get("role", "test"))
    except KeyError as exc:
        raise ConfigError(f"--spec is missing {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"--spec: {exc}") from None


def cmd_predict(args) -> int:
    bundle = load_model(args.model)
    spec = _read_spec(args.spec)
    try:
        data = args.perf.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read profile {args.perf}: {exc.strerror or exc}") from None
    profile = parse_perf_csv(data, bundle.perf_schema, source=str(args.perf))
    _emit(predict_offload(bundle, profile, spec).to_dict())
    return EXIT_OK


def cmd_correlate(args) -> int:
    cfg = _load_config(args)
    records = [r for r in prepare_records(cfg) if r.derived is not None and r.derived.nmc_ipc is not None]
    if not records:
        raise DataError("no runs with simulator results to correlate")
    names = cfg.host_candidates() + list(NMC_FEATURES)
    cm = correlation_matrix(build_matrix(records, names))
    opts = ReportOptions(correlation=cm)
    docs = {"correlation": report(records, None, opts)["correlation"]}
    with staged_dir(args.out, args.force) as tmp:
        write_report(docs, tmp, figures=not args.no_figures)
    _emit({"out": str(args.out), "features": cm.names, "undefined": cm.undefined,
           "n_entries": len(cm.names) ** 2})
    return EXIT_OK


def cmd_report(args) -> int:
    cfg = _load_config(args)
    records = prepare_records(cfg)
    bundle = load_model(args.model) if args.model else None
    timings = None
    if args.timings == "builtin":
        timings = load_timings()
    elif args.timings:
        timings = load_timings(args.timings)
    elif cfg.timings:
        timings = load_timings(cfg.timings)
    docs = report(records, bundle, ReportOptions(machine=cfg.roofline, label_convention=cfg.label_convention,
                                                 timings=timings))
    with staged_dir(args.out, args.force) as tmp:
        write_report(docs, tmp, figures=not args.no_figures)
    _emit({"out": str(args.out), "documents": sorted(docs)})
    return EXIT_OK


def cmd_synth(args) -> int:
    opts = {}
    if args.synth_config:
        try:
            opts = json.loads(args.synth_config.read_text())
        except OSError as exc:
            raise ConfigError(f"cannot read {args.synth_config}: {exc.strerror or exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.synth_config}: invalid JSON: {exc.msg}") from None
        if not isinstance(opts, dict):
            raise ConfigError(f"{args.synth_config}: must be a JSON object")
    if args.seed is not None:
        opts["seed"] = args.seed
    cfg = SynthConfig.from_dict(opts)
    with staged_dir(args.out, args.force) as tmp:
        corpus = generate_synthetic_corpus(cfg, tmp)
        n = len(corpus.rows)
    _emit({"out": str(args.out), "runs": n, "manifest": str(args.out / "manifest.json"),
           "pipeline_config": str(args.out / "pipeline.json"), "ipc_scale": corpus.ipc_scale})
    return EXIT_OK


COMMANDS = {"train": cmd_train, "predict": cmd_predict, "correlate": cmd_correlate,
            "report": cmd_report, "synth": cmd_synth}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help, --version and usage errors
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="nmpo: %(levelname)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except NmpoError as exc:
        print(f"nmpo {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except KeyboardInterrupt:
        print("nmpo: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:  # anything unexpected is a bug
        log.debug("internal error", exc_info=True)
        print(f"nmpo {args.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
