"""Experiment orchestration shared by the CLI and the acceptance suite."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import data as D
from . import eval as E
from .config import ExperimentConfig
from .errors import ContractError
from .model import ModelParams
from .train import TrainTrace, ensemble_probe, linear_probe, pretrain, train_deep_ensemble


@dataclass
class Splits:
    train: D.Dataset
    labeled: D.Dataset
    test: D.Dataset


def build_dataset(cfg: ExperimentConfig) -> D.Dataset:
    dc = cfg.data
    if dc.source == "synthetic":
        return D.gen_synthetic(dc.classes, dc.per_class, dc.dim, dc.spread, cfg.seed)
    if dc.source == "idx":
        return D.load_idx(dc.images, dc.labels)
    if dc.source == "csv":
        return D.load_csv(dc.csv)
    raise ContractError(f"unknown data source {dc.source!r}")


def build_splits(cfg: ExperimentConfig) -> Splits:
    d = build_dataset(cfg)
    tr, lab, te = D.split(d, cfg.data.train_frac, cfg.data.label_frac, cfg.seed)
    if len(te) == 0:
        raise ContractError("the test split is empty; lower data.train_frac")
    return Splits(tr, lab, te)


def run_pretrain(cfg: ExperimentConfig, train_set: D.Dataset, on_step=None) -> list[TrainTrace]:
    """One trace for the sub-network method, one per member for the deep ensemble."""
    tc = cfg.train_config(train_set.dim)
    if cfg.train.method == "deep_ensemble":
        return train_deep_ensemble(train_set, tc, cfg.train.ensemble_members)
    return [pretrain(train_set, tc, on_step=on_step)]


def metadata(cfg: ExperimentConfig, **extra) -> dict:
    meta = {
        "dataset": cfg.experiment.name,
        "seed": cfg.seed,
        "config_hash": cfg.digest(),
        "method": cfg.train.method,
        "num_subnets": cfg.model.num_subnets,
        "lam": cfg.loss.lam,
        "alpha": cfg.loss.alpha,
        "label_frac": cfg.data.label_frac,
    }
    meta.update(extra)
    return meta


def predict(models: list[ModelParams], labeled: D.Dataset, test: D.Dataset,
            cfg: ExperimentConfig) -> np.ndarray:
    if len(models) == 1:
        return linear_probe(models[0], labeled, test, cfg.probe_config())[0].array
    return ensemble_probe(models, labeled, test, cfg.probe_config()).array


def member_disagreement(models, labeled, test, cfg, acc) -> float | None:
    """Mean pairwise diversity disagreement between ensemble members' probes."""
    if len(models) < 2 or acc >= 1:
        return None
    preds = [linear_probe(m, labeled, test, cfg.probe_config())[0].array.argmax(axis=1)
             for m in models]
    vals = [E.diversity_disagreement(a, b, acc) for a, b in itertools.combinations(preds, 2)]
    return float(np.mean(vals))


def ind_report(cfg: ExperimentConfig, models: list[ModelParams], splits: Splits,
               baseline: list[ModelParams] | None = None, **extra) -> tuple[E.EvalReport, E.Prediction]:
    probs = predict(models, splits.labeled, splits.test, cfg)
    pred = E.Prediction(probs, splits.test.y)
    ec = cfg.eval
    report = E.EvalReport.from_prediction(pred, ec.ece_bins, ec.tace_bins, ec.tace_threshold,
                                          metadata=metadata(cfg, split="test", **extra))
    if baseline is not None and report.acc < 1:
        base = predict(baseline, splits.labeled, splits.test, cfg).argmax(axis=1)
        report.disagreement = E.diversity_disagreement(pred.predicted, base, report.acc)
    elif len(models) > 1:
        report.disagreement = member_disagreement(models, splits.labeled, splits.test, cfg,
                                                  report.acc)
    return report, pred


def ood_scores(cfg: ExperimentConfig, models: list[ModelParams], kind: str, x,
               ref: D.Dataset) -> np.ndarray:
    """Ensembles average the per-member scores; ``subnet_std`` needs one multi-head model."""
    scores = [E.ood_score(m, x, ref, kind, cfg.loss.epsilon, cfg.model.batch_norm) for m in models]
    return np.mean(scores, axis=0)


def ood_reports(cfg: ExperimentConfig, models: list[ModelParams], splits: Splits) -> list[E.EvalReport]:
    base, _ = ind_report(cfg, models, splits)
    ood = D.corrupt(splits.test, cfg.eval.ood_level, cfg.seed)
    rows = []
    for kind in cfg.eval.ood_scores:
        if kind == "subnet_std" and any(m.num_subnets < 2 for m in models):
            continue
        s_in = ood_scores(cfg, models, kind, splits.test.x, splits.train)
        s_out = ood_scores(cfg, models, kind, ood.x, splits.train)
        meta = dict(base.metadata, ood_score=kind, ood_level=cfg.eval.ood_level,
                    ood_shift="gaussian_noise", ood_score_is_reference_protocol=False)
        rows.append(E.EvalReport(base.acc, base.nll, base.ece, base.tace,
                                 auroc=E.auroc(s_in, s_out), metadata=meta))
    return rows


def corruption_reports(cfg: ExperimentConfig, models: list[ModelParams],
                       splits: Splits) -> list[E.EvalReport]:
    """Clean test metrics followed by one row per corruption level."""
    rows = []
    clean, _ = ind_report(cfg, models, splits, corruption_level=0)
    rows.append(clean)
    for level in cfg.eval.corruption_levels:
        shifted = Splits(splits.train, splits.labeled, D.corrupt(splits.test, level, cfg.seed))
        rep, _ = ind_report(cfg, models, shifted, corruption_level=level)
        rows.append(rep)
    return rows


SWEEP_ALIASES = {"M": "model.num_subnets", "alpha": "loss.alpha", "lambda": "loss.lam",
                 "lam": "loss.lam"}


def parse_sweep(spec: str) -> tuple[str, list[str]]:
    key, sep, values = spec.partition("=")
    if not sep or not values:
        raise ContractError(f"sweep must look like KEY=v1,v2,...; got {spec!r}")
    key = SWEEP_ALIASES.get(key.strip(), key.strip())
    return key, [v.strip() for v in values.split(",") if v.strip()]


def sweep_point(cfg: ExperimentConfig, key: str, value: str) -> ExperimentConfig:
    point = cfg.with_override(key, value)
    if point.model.num_subnets < 2 and point.loss.lam != 0:
        # the diversity term needs two heads; a single head is the plain baseline
        point = point.with_override("loss.lam", "0.0")
    return point


def run_sweep_point(cfg: ExperimentConfig, key: str, value: str) -> tuple[ExperimentConfig, E.EvalReport, list[TrainTrace]]:
    point = sweep_point(cfg, key, value)
    splits = build_splits(point)
    traces = run_pretrain(point, splits.train)
    report, _ = ind_report(point, [t.params for t in traces], splits, sweep_key=key,
                           sweep_value=value)
    report.metadata["final_total_std"] = traces[0].final_epoch_total_std()
    return point, report, traces
