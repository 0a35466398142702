"""WA/UA metrics, confusion matrices, and the leave-one-session-out CV driver."""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import Dataset, Sample, make_batch, split_by_session
from .fusion import (
    FusionConfig,
    FusionModelParams,
    UnimodalHeadParams,
    forward,
    forward_unimodal,
    predict,
)
from .train import TrainConfig, train, train_unimodal

THREADS_ENV = "MERMIX_THREADS"


def confusion_matrix(true, pred, num_classes: int) -> np.ndarray:
    """Count matrix with true classes on rows and predictions on columns."""
    true = np.asarray(true, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if true.shape != pred.shape:
        raise ValueError(f"true/pred length mismatch: {true.shape} vs {pred.shape}")
    if true.size and (true.min() < 0 or true.max() >= num_classes or pred.min() < 0 or pred.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


def weighted_accuracy(cm: np.ndarray) -> float:
    """Overall accuracy: every sample weighted equally."""
    total = int(cm.sum())
    if total == 0:
        raise ValueError("empty confusion matrix")
    return float(np.trace(cm)) / total


def unweighted_accuracy(cm: np.ndarray) -> float:
    """Macro recall: mean per-class recall over classes with at least one true sample."""
    row_sums = cm.sum(axis=1)
    present = row_sums > 0
    if not np.any(present):
        raise ValueError("confusion matrix has no true samples in any class")
    recalls = np.diag(cm)[present] / row_sums[present]
    return float(recalls.mean())


@dataclass
class FoldReport:
    fold: int
    confusion: np.ndarray
    wa: float
    ua: float


@dataclass
class CvReport:
    folds: list[FoldReport]
    mean_wa: float
    mean_ua: float

    @classmethod
    def from_folds(cls, folds: Sequence[FoldReport]) -> "CvReport":
        folds = sorted(folds, key=lambda f: f.fold)
        if len(folds) != 5:
            raise ValueError(f"session-wise CV needs exactly 5 folds, got {len(folds)}")
        return cls(
            folds=list(folds),
            mean_wa=float(np.mean([f.wa for f in folds])),
            mean_ua=float(np.mean([f.ua for f in folds])),
        )


def fold_seed(master_seed: int, fold_id: int) -> int:
    """Fixed rule deriving independent per-fold seeds from the master seed."""
    return int(np.random.SeedSequence([master_seed, fold_id]).generate_state(1)[0])


def predict_fusion(
    params: FusionModelParams,
    cfg: FusionConfig,
    samples: Sequence[Sample],
    skip_attention: bool = False,
    batch_size: int = 64,
) -> np.ndarray:
    preds = []
    for start in range(0, len(samples), batch_size):
        batch = make_batch(samples[start : start + batch_size])
        _, logits, _ = forward(params, cfg, batch, skip_attention=skip_attention)
        preds.append(predict(logits.data))
    return np.concatenate(preds)


def predict_unimodal(
    params: UnimodalHeadParams, modality: str, samples: Sequence[Sample], batch_size: int = 64
) -> np.ndarray:
    preds = []
    for start in range(0, len(samples), batch_size):
        batch = make_batch(samples[start : start + batch_size])
        features = batch.audio if modality == "audio" else batch.text
        mask = batch.audio_mask if modality == "audio" else batch.text_mask
        logits = forward_unimodal(params, features, mask)
        preds.append(predict(logits.data))
    return np.concatenate(preds)


def evaluate_split(
    params: FusionModelParams,
    cfg: FusionConfig,
    samples: Sequence[Sample],
    skip_attention: bool = False,
) -> np.ndarray:
    preds = predict_fusion(params, cfg, samples, skip_attention=skip_attention)
    return confusion_matrix([s.label for s in samples], preds, cfg.num_emotions)


def fold_worker_count() -> int:
    env = os.environ.get(THREADS_ENV)
    if env:
        return max(1, min(5, int(env)))
    return max(1, min(5, os.cpu_count() or 1))


def run_cv(
    dataset: Dataset,
    model_cfg: FusionConfig,
    train_cfg: TrainConfig,
    fusion: str = "ca",
    modality: str = "both",
) -> CvReport:
    """Five leave-one-session-out folds: fresh seeded init, train off-session, test held-out.

    Folds run concurrently up to the MERMIX_THREADS cap; the report is a
    deterministic reduce ordered by fold id.
    """
    if fusion not in ("ca", "fc"):
        raise ValueError(f"fusion must be 'ca' or 'fc', got {fusion!r}")
    if modality not in ("both", "audio", "text"):
        raise ValueError(f"modality must be both/audio/text, got {modality!r}")
    folds = split_by_session(dataset)
    skip_attention = fusion == "fc"

    def one_fold(fold_id: int, train_s: list[Sample], test_s: list[Sample]) -> FoldReport:
        train_ids = {s.uid for s in train_s}
        test_ids = {s.uid for s in test_s}
        overlap = train_ids & test_ids
        if overlap:
            raise ValueError(f"fold {fold_id}: train/test share utterances {sorted(overlap)[:3]}")
        fcfg = replace(train_cfg, seed=fold_seed(train_cfg.seed, fold_id))
        if modality == "both":
            params, _ = train(train_s, model_cfg, fcfg, skip_attention=skip_attention)
            preds = predict_fusion(params, model_cfg, test_s, skip_attention=skip_attention)
        else:
            uni, _ = train_unimodal(
                train_s, modality, model_cfg.feature_dim, model_cfg.num_emotions, fcfg
            )
            preds = predict_unimodal(uni, modality, test_s)
        cm = confusion_matrix([s.label for s in test_s], preds, model_cfg.num_emotions)
        return FoldReport(fold_id, cm, weighted_accuracy(cm), unweighted_accuracy(cm))

    workers = fold_worker_count()
    if workers == 1:
        reports = [one_fold(i + 1, tr, te) for i, (tr, te) in enumerate(folds)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(one_fold, i + 1, tr, te) for i, (tr, te) in enumerate(folds)
            ]
            reports = [f.result() for f in futures]
    return CvReport.from_folds(reports)


# -- report emission -------------------------------------------------------------


def render_report(report: CvReport, class_names: Sequence[str]) -> str:
    lines = ["fold  wa      ua"]
    for f in report.folds:
        lines.append(f"{f.fold:<5d} {f.wa:.4f}  {f.ua:.4f}")
    lines.append(f"mean  {report.mean_wa:.4f}  {report.mean_ua:.4f}")
    lines.append("")
    header = " ".join(f"{name[:7]:>7s}" for name in class_names)
    for f in report.folds:
        lines.append(f"fold {f.fold} confusion (rows true, cols predicted):")
        lines.append("        " + header)
        for c, row in enumerate(f.confusion):
            cells = " ".join(f"{int(v):>7d}" for v in row)
            lines.append(f"{class_names[c][:7]:>7s} {cells}")
        lines.append("")
    return "\n".join(lines)


def report_records(report: CvReport, config_echo: dict) -> list[dict]:
    records: list[dict] = []
    for f in report.folds:
        records.append(
            {
                "record": "fold",
                "fold": f.fold,
                "wa": f.wa,
                "ua": f.ua,
                "confusion": f.confusion.tolist(),
            }
        )
    records.append(
        {
            "record": "summary",
            "mean_wa": report.mean_wa,
            "mean_ua": report.mean_ua,
            "config": config_echo,
        }
    )
    return records


def write_report_files(report: CvReport, prefix: str, class_names: Sequence[str], config_echo: dict) -> tuple[str, str]:
    """Write the human table and machine records; byte-stable for fixed inputs."""
    txt_path = prefix + ".txt"
    jsonl_path = prefix + ".jsonl"
    with open(txt_path, "w") as fh:
        for key in sorted(config_echo):
            fh.write(f"{key}={config_echo[key]}\n")
        fh.write("\n")
        fh.write(render_report(report, class_names))
    with open(jsonl_path, "w") as fh:
        for rec in report_records(report, config_echo):
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return txt_path, jsonl_path
