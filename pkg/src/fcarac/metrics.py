"""Count metrics (mean relative error, off-by-one accuracy) and report files."""

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

# reference points reported for the full video pipeline on RepCount-A
REFERENCE_REPCOUNT_MAE = 0.268
REFERENCE_REPCOUNT_OBO = 0.47


class DataError(ValueError):
    pass


@dataclass
class SequenceRecord:
    id: str
    gt: int
    pred: float
    abs_err: float


@dataclass
class EvalReport:
    mae: float
    obo: float
    records: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.records)


def mae_obo(gts, preds, round_pred: bool = False) -> tuple:
    gts = np.asarray(gts, dtype=np.float64)
    preds = np.asarray(preds, dtype=np.float64)
    if gts.size == 0:
        raise DataError("no sequences to score")
    if np.any(gts <= 0):
        raise DataError("ground-truth count of 0 makes the relative error undefined")
    if round_pred:
        preds = np.floor(preds + 0.5)
    err = np.abs(gts - preds)
    return float(np.mean(err / gts)), float(np.mean(err <= 1.0))


def report_from(ids, gts, preds, round_pred: bool = False) -> EvalReport:
    mae, obo = mae_obo(gts, preds, round_pred)
    recs = [SequenceRecord(i, int(g), float(p), float(abs(g - p))) for i, g, p in zip(ids, gts, preds)]
    return EvalReport(mae, obo, recs)


def predict_counts(model, seqs: list, store=None, K: int = 0, tta_steps: int = 0, tta_lr: float = 1e-4, batch_size: int = 16):
    from .pipeline import tta_adapt

    preds = []
    if tta_steps > 0:
        for s in seqs:
            adapted = tta_adapt(model, s, tta_steps, tta_lr, store, K)
            with torch.no_grad():
                preds.append(float(adapted([s], store=store, K=K).counts()[0]))
        return np.array(preds)
    with torch.no_grad():
        for i in range(0, len(seqs), batch_size):
            chunk = seqs[i : i + batch_size]
            preds.extend(model(chunk, store=store, K=K).counts().tolist())
    return np.array(preds)


def evaluate(model, seqs: list, store=None, K: int = 0, tta_steps: int = 0, tta_lr: float = 1e-4, round_obo: bool = False) -> EvalReport:
    if not seqs:
        raise DataError("evaluation split is empty")
    if any(s.count <= 0 for s in seqs):
        raise DataError("ground-truth count of 0 in evaluation split")
    preds = predict_counts(model, seqs, store, K, tta_steps, tta_lr)
    return report_from([s.id for s in seqs], [s.count for s in seqs], preds, round_obo)


def mean_baseline_report(train: list, test: list) -> EvalReport:
    """Predict the mean training count for every test sequence."""
    mean = float(np.mean([s.count for s in train]))
    return report_from([s.id for s in test], [s.count for s in test], [mean] * len(test))


def write_report(out_dir, report: EvalReport, config_hash: str, name: str = "eval") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = {"mae": report.mae, "obo": report.obo, "n": report.n, "config_hash": config_hash}
    (out / f"{name}_summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n")
    with open(out / f"{name}_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["mae", "obo", "n", "config_hash"])
        w.writerow([repr(report.mae), repr(report.obo), report.n, config_hash])
    with open(out / f"{name}_sequences.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "gt", "pred", "abs_err"])
        for r in report.records:
            w.writerow([r.id, r.gt, repr(r.pred), repr(r.abs_err)])
