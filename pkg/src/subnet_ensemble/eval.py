"""Accuracy, calibration, OOD and diversity metrics plus report assembly."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from . import model as M
from .data import Dataset
from .errors import ContractError
from .model import ModelParams
from .tensor import Tensor

PROB_FLOOR = 1e-12
METRIC_COLUMNS = ("acc", "nll", "ece", "tace", "auroc", "disagreement")
OOD_SCORE_KINDS = ("subnet_std", "knn")


@dataclass
class Prediction:
    probs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(getattr(self.probs, "array", self.probs), dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs.ndim != 2 or self.labels.shape != (self.probs.shape[0],):
            raise ContractError(f"probs {self.probs.shape} / labels {self.labels.shape} mismatch")
        if self.probs.shape[0] == 0:
            raise ContractError("empty prediction set")
        if (self.probs < 0).any() or (self.probs > 1).any():
            raise ContractError("probabilities must lie in [0, 1]")
        if np.abs(self.probs.sum(axis=1) - 1).max() > 1e-9:
            raise ContractError("probability rows must sum to 1 within 1e-9")
        if self.labels.min() < 0 or self.labels.max() >= self.probs.shape[1]:
            raise ContractError("labels out of range")

    @property
    def predicted(self) -> np.ndarray:
        # np.argmax returns the first maximum: ties go to the lowest class
        return self.probs.argmax(axis=1)


def top1_nll(p: Prediction) -> tuple[float, float]:
    acc = float(np.mean(p.predicted == p.labels))
    true_p = np.maximum(p.probs[np.arange(p.labels.size), p.labels], PROB_FLOOR)
    return acc, float(-np.mean(np.log(true_p)))


def ece(p: Prediction, bins: int = 15) -> float:
    """Expected calibration error over ``bins`` equal-width confidence bins.

    Bins are left-open ``(lo, hi]``; a confidence of exactly 0 joins the first.
    """
    if bins < 1:
        raise ContractError("bins must be >= 1")
    conf = p.probs.max(axis=1)
    correct = (p.predicted == p.labels).astype(np.float64)
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    n_b = np.bincount(idx, minlength=bins)
    conf_b = np.bincount(idx, weights=conf, minlength=bins)
    acc_b = np.bincount(idx, weights=correct, minlength=bins)
    occupied = n_b > 0
    gaps = np.abs(acc_b[occupied] - conf_b[occupied]) / n_b[occupied]
    return float(np.sum(n_b[occupied] / conf.size * gaps))


def reliability_bins(p: Prediction, bins: int = 15) -> list[dict]:
    """Per-bin count, mean confidence and accuracy (the reliability-diagram data)."""
    conf = p.probs.max(axis=1)
    correct = p.predicted == p.labels
    edges = np.linspace(0.0, 1.0, bins + 1)
    idx = np.clip(np.searchsorted(edges, conf, side="left") - 1, 0, bins - 1)
    rows = []
    for b in range(bins):
        sel = idx == b
        n = int(sel.sum())
        rows.append({
            "bin": b, "lo": float(edges[b]), "hi": float(edges[b + 1]), "count": n,
            "confidence": float(conf[sel].mean()) if n else None,
            "accuracy": float(correct[sel].mean()) if n else None,
        })
    return rows


def tace(p: Prediction, bins: int = 15, threshold: float = 0.01) -> float:
    """Thresholded adaptive calibration error over all class probabilities.

    Entries below ``threshold`` are dropped; the rest are sorted (ties ordered
    by correctness so the result does not depend on sample order) and cut into
    ``bins`` contiguous groups whose sizes differ by at most one.
    """
    if bins < 1 or not 0 <= threshold < 1:
        raise ContractError("need bins >= 1 and threshold in [0, 1)")
    n, c = p.probs.shape
    probs = p.probs.reshape(-1)
    hits = (np.arange(c)[None, :] == p.labels[:, None]).reshape(-1).astype(np.float64)
    keep = probs >= threshold
    if not keep.any():
        raise ContractError("no predictions above threshold")
    probs, hits = probs[keep], hits[keep]
    order = np.lexsort((hits, probs))
    probs, hits = probs[order], hits[order]
    total = probs.size
    err = 0.0
    for gp, gh in zip(np.array_split(probs, bins), np.array_split(hits, bins)):
        if gp.size:
            err += gp.size / total * abs(gp.mean() - gh.mean())
    return float(err)


def auroc(scores_in, scores_out) -> float:
    """Probability that an OOD score exceeds an in-distribution one (ties count half)."""
    s_in = np.sort(np.asarray(scores_in, dtype=np.float64).reshape(-1))
    s_out = np.asarray(scores_out, dtype=np.float64).reshape(-1)
    if s_in.size == 0 or s_out.size == 0:
        raise ContractError("AUROC needs non-empty score lists")
    below = np.searchsorted(s_in, s_out, side="left")
    ties = np.searchsorted(s_in, s_out, side="right") - below
    return float((below.sum() + 0.5 * ties.sum()) / (s_in.size * s_out.size))


def _unit_rows(a: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(a, axis=1, keepdims=True)
    return a / np.where(norms == 0, 1.0, norms)


def ood_score(params: ModelParams, x, ref: Dataset | None = None, kind: str = "subnet_std",
              eps: float = 1e-4, batch_norm: bool = False) -> np.ndarray:
    """Per-sample OOD score; larger means more likely out of distribution.

    ``subnet_std``: mean over embedding coordinates of the across-sub-network std.
    ``knn``: Euclidean distance from the L2-normalised representation to the
    nearest L2-normalised representation of ``ref``.
    """
    x = np.asarray(getattr(x, "array", x), dtype=np.float64)
    b = M.encode(params, Tensor(x))
    if kind == "subnet_std":
        if params.num_subnets < 2:
            raise ContractError("subnet_std needs at least 2 sub-networks")
        emb = M.project(params, b, eps=eps, batch_norm=batch_norm)
        return emb.std.array.mean(axis=1)
    if kind == "knn":
        if ref is None or len(ref) == 0:
            raise ContractError("knn score needs a non-empty reference set")
        ref_b = _unit_rows(M.encode(params, Tensor(ref.x)).array)
        dist, _ = cKDTree(ref_b).query(_unit_rows(b.array), k=1)
        return np.asarray(dist, dtype=np.float64)
    raise ContractError(f"unknown OOD score kind {kind!r}")


def diversity_disagreement(preds_a, preds_b, acc: float) -> float:
    """Fraction of points where two classifiers disagree, divided by ``1 - acc``."""
    a = np.asarray(preds_a)
    b = np.asarray(preds_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError("prediction vectors must be 1-D and equally long")
    if acc >= 1:
        raise ContractError("diversity disagreement undefined at perfect accuracy")
    return float(np.mean(a != b) / (1.0 - acc))


# ------------------------------------------------------------------ reports


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


@dataclass
class EvalReport:
    acc: float
    nll: float
    ece: float
    tace: float
    auroc: float | None = None
    disagreement: float | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("acc", "ece", "tace", "auroc"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 1:
                raise ContractError(f"{name}={v} outside [0, 1]")

    @classmethod
    def from_prediction(cls, p: Prediction, bins: int = 15, tace_bins: int = 15,
                        threshold: float = 0.01, **kw) -> "EvalReport":
        acc, nll = top1_nll(p)
        meta = dict(kw.pop("metadata", {}))
        meta.setdefault("ece_bins", bins)
        meta.setdefault("tace_bins", tace_bins)
        meta.setdefault("tace_threshold", threshold)
        return cls(acc, nll, ece(p, bins), tace(p, tace_bins, threshold), metadata=meta, **kw)

    def as_dict(self) -> dict:
        d = {k: getattr(self, k) for k in METRIC_COLUMNS}
        d["metadata"] = dict(self.metadata)
        return d

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)

    def columns(self) -> list[str]:
        return list(METRIC_COLUMNS) + sorted(self.metadata)

    def csv_row(self, columns: list[str] | None = None) -> list[str]:
        columns = columns or self.columns()
        values = {**{k: getattr(self, k) for k in METRIC_COLUMNS}, **self.metadata}
        return [_fmt(values.get(c)) for c in columns]


def reports_to_csv(reports: list[EvalReport]) -> str:
    """One header plus one row per report; metadata columns are the sorted union."""
    meta = sorted({k for r in reports for k in r.metadata})
    cols = list(METRIC_COLUMNS) + meta
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in reports:
        w.writerow(r.csv_row(cols))
    return buf.getvalue()
