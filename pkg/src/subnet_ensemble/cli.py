"""Command-line entry point: ``subnet-ensemble <command> [options]``.

Exit codes: 0 success, 1 contract error (bad config, missing checkpoint,
failed gradient check), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import experiment as X
from .checkpoint import load_model_set, save_checkpoint, save_ensemble
from .config import ExperimentConfig
from .errors import ContractError
from .eval import reliability_bins, reports_to_csv
from .verify import gradient_report

log = logging.getLogger("subnet_ensemble")

COMMANDS = ("pretrain", "probe", "eval-ood", "corrupt-eval", "ablate", "gradcheck", "report")
METRIC_FILES = ("probe.csv", "ood.csv", "corrupt.csv", "ablate.csv")
THREADS_ENV = "SUBNET_ENSEMBLE_THREADS"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment config")
    common.add_argument("--seed", type=int, help="overrides experiment.seed")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--override", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="repeatable config override")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="subnet-ensemble", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    sub.add_parser("pretrain", parents=[common], help="self-supervised pretraining")
    p = sub.add_parser("probe", parents=[common], help="linear probe + calibration metrics")
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--baseline", type=Path, help="checkpoint to measure disagreement against")
    for name, helptext in (("eval-ood", "OOD detection AUROC"),
                           ("corrupt-eval", "metrics under graded covariate shift")):
        sp = sub.add_parser(name, parents=[common], help=helptext)
        sp.add_argument("--checkpoint", type=Path)
    a = sub.add_parser("ablate", parents=[common], help="sweep one config key")
    a.add_argument("--sweep", required=True, metavar="KEY=V1,V2,...",
                   help="KEY is M, alpha, lambda or a dotted section.key")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient verification")
    sub.add_parser("report", parents=[common], help="summarise stored metric CSVs")
    return parser


def load_config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    for item in args.override:
        key, sep, value = item.partition("=")
        if not sep:
            raise ContractError(f"override must be SECTION.KEY=VALUE, got {item!r}")
        cfg = cfg.with_override(key.strip(), value.strip())
    if args.seed is not None:
        cfg = cfg.with_override("experiment.seed", str(args.seed))
    if args.out is not None:
        cfg = cfg.with_override("experiment.out", str(args.out))
    return cfg


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    return path


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, outputs, started: float,
                   **extra) -> Path:
    manifest = {
        "command": command,
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "outputs": sorted(str(p.relative_to(out)) for p in outputs),
        "wall_clock_seconds": round(time.time() - started, 3),
    }
    manifest.update(extra)
    _write(out / "config.ini", cfg.to_ini())
    return _write(out / f"{command}.manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _checkpoint_dir(args, out: Path) -> Path:
    ckpt = getattr(args, "checkpoint", None) or out / "checkpoint"
    if not (ckpt / "manifest.json").exists() and not (ckpt / "ensemble.json").exists():
        raise ContractError(f"no checkpoint at {ckpt}; run `pretrain` first")
    return ckpt


def cmd_pretrain(cfg: ExperimentConfig, out: Path, args) -> list[Path]:
    splits = X.build_splits(cfg)
    outputs = []
    if cfg.train.method == "deep_ensemble":
        traces = X.run_pretrain(cfg, splits.train)
        for j, t in enumerate(traces):
            outputs.append(_write(out / f"trace_member_{j:02d}.jsonl", t.to_jsonl()))
        save_ensemble([t.params for t in traces], cfg, out / "checkpoint", seed=cfg.seed)
    else:
        trace_path = out / "trace.jsonl"
        trace_path.parent.mkdir(parents=True, exist_ok=True)
        with trace_path.open("w", encoding="utf-8") as fh:
            traces = X.run_pretrain(cfg, splits.train,
                                    on_step=lambda r: fh.write(r.to_json() + "\n"))
        outputs.append(trace_path)
        save_checkpoint(traces[0].params, cfg, out / "checkpoint", seed=cfg.seed)
    outputs.append(out / "checkpoint")
    summary = {"steps": len(traces[0].records),
               "final_total_std": traces[0].final_epoch_total_std(),
               "final_total": traces[0].records[-1].total if traces[0].records else None}
    outputs.append(_write(out / "pretrain_summary.json", json.dumps(summary, indent=2, sort_keys=True) + "\n"))
    return outputs


def _reliability_csv(pred, bins) -> str:
    buf = io.StringIO()
    rows = reliability_bins(pred, bins)
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def cmd_probe(cfg, out, args) -> list[Path]:
    models = load_model_set(_checkpoint_dir(args, out))
    baseline = load_model_set(args.baseline) if args.baseline else None
    splits = X.build_splits(cfg)
    report, pred = X.ind_report(cfg, models, splits, baseline=baseline)
    return [
        _write(out / "probe.csv", reports_to_csv([report])),
        _write(out / "probe.json", report.to_json() + "\n"),
        _write(out / "reliability.csv", _reliability_csv(pred, cfg.eval.ece_bins)),
    ]


def cmd_eval_ood(cfg, out, args) -> list[Path]:
    models = load_model_set(_checkpoint_dir(args, out))
    rows = X.ood_reports(cfg, models, X.build_splits(cfg))
    return [_write(out / "ood.csv", reports_to_csv(rows))]


def cmd_corrupt_eval(cfg, out, args) -> list[Path]:
    models = load_model_set(_checkpoint_dir(args, out))
    rows = X.corruption_reports(cfg, models, X.build_splits(cfg))
    return [_write(out / "corrupt.csv", reports_to_csv(rows))]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        raise ContractError(f"{THREADS_ENV} must be an integer") from None


def cmd_ablate(cfg, out, args) -> list[Path]:
    key, values = X.parse_sweep(args.sweep)
    cfg.with_override(key, values[0])  # validate the key before fanning out

    def run(value):
        point, report, traces = X.run_sweep_point(cfg, key, value)
        sub = out / "ablate" / f"{key}={value}"
        _write(sub / "config.ini", point.to_ini())
        _write(sub / "trace.jsonl", traces[0].to_jsonl())
        _write(sub / "report.json", report.to_json() + "\n")
        return report

    workers = min(_threads(), len(values))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(run, values))
    else:
        reports = [run(v) for v in values]
    return [_write(out / "ablate.csv", reports_to_csv(reports))]


def cmd_gradcheck(cfg, out, args) -> list[Path]:
    rep = gradient_report(cfg.seed)
    path = _write(out / "gradcheck.json", json.dumps(rep, indent=2, sort_keys=True) + "\n")
    tl = rep["total_loss_gradcheck"]
    orc = rep["diversity_oracle"]
    print(f"total loss: max rel err {tl['max_rel_error']:.3e} over {tl['checked']} coords "
          f"({tl['skipped']} skipped at kinks) -> {'PASS' if tl['passed'] else 'FAIL'}")
    print(f"diversity oracle: vs autodiff {orc['oracle_vs_autodiff']:.3e}, "
          f"vs finite differences {orc['oracle_vs_fd']:.3e}, "
          f"sub-network sum {orc['subnet_sum_max_abs']:.3e}")
    print(f"variance-scaled form: vs finite differences {orc['variance_scaled_vs_fd']:.3e}, "
          f"sign agreement {orc['variance_scaled_sign_agreement']}")
    if not rep["passed"]:
        raise ContractError(f"gradient check failed; see {path}")
    return [path]


def cmd_report(cfg, out, args) -> list[Path]:
    """Concatenate every stored metric CSV under ``out`` into summary.csv."""
    tables = []
    for name in METRIC_FILES:
        for path in sorted(out.rglob(name)):
            with path.open(newline="", encoding="utf-8") as fh:
                rows = list(csv.DictReader(fh))
            for row in rows:
                row["source"] = str(path.relative_to(out))
            tables.extend(rows)
    if not tables:
        raise ContractError(f"no metric CSVs found under {out}")
    head = ["source", "acc", "nll", "ece", "tace", "auroc", "disagreement"]
    extra = sorted({k for r in tables for k in r} - set(head))
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=head + extra, restval="", lineterminator="\n")
    w.writeheader()
    w.writerows(tables)
    return [_write(out / "summary.csv", buf.getvalue())]


HANDLERS = {
    "pretrain": cmd_pretrain,
    "probe": cmd_probe,
    "eval-ood": cmd_eval_ood,
    "corrupt-eval": cmd_corrupt_eval,
    "ablate": cmd_ablate,
    "gradcheck": cmd_gradcheck,
    "report": cmd_report,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    started = time.time()
    try:
        cfg = load_config(args)
        out = Path(cfg.experiment.out)
        outputs = HANDLERS[args.command](cfg, out, args)
        write_manifest(out, args.command.replace("-", "_"), cfg, outputs, started)
    except (ContractError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
