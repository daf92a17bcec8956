"""Leave-one-subject-out cross-testing and modality ablation."""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ..compression import CompressionConfig, compress, size_breakdown
from ..errors import ConfigError, DataError
from ..nn.engine import init_parameters, predict_proba
from ..nn.model import ModelSpec, fit_input_scales, labels_of
from ..nn.train import TrainConfig, train
from ..signals import (DEFAULT_LABEL_THRESHOLD, DEFAULT_STRIDE_S, DEFAULT_WINDOW_S, ModalityKind,
                       labeled_windows, parse_modality)
from .metrics import (METRIC_NAMES, MetricReport, confusion, metrics_from_confusion, report_from_scores,
                      roc_auc, youden_threshold)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowingConfig:
    length_s: float = DEFAULT_WINDOW_S
    stride_s: float = DEFAULT_STRIDE_S
    label_threshold: float = DEFAULT_LABEL_THRESHOLD


@dataclass
class FoldResult:
    subject_id: str
    labels: np.ndarray
    scores: np.ndarray
    threshold: float
    manifest_hash: str
    n_train: int
    leaked: bool
    train_losses: list = field(default_factory=list)
    compressed_scores: np.ndarray | None = None
    compressed_threshold: float | None = None
    sizes: dict | None = None


def cohort_windows(cohort, windowing: WindowingConfig = WindowingConfig()) -> dict[str, list]:
    """Labeled windows per subject id, in cohort order."""
    out = {}
    for rec in cohort:
        if rec.subject_id in out:
            raise DataError(f"duplicate subject id {rec.subject_id}")
        ws = labeled_windows(rec, windowing.length_s, windowing.stride_s, windowing.label_threshold)
        if not ws:
            raise DataError(f"subject {rec.subject_id} yields no windows")
        out[rec.subject_id] = ws
    return out


def fold_training_windows(windows_by_subject: dict, test_subject: str) -> list:
    """Every window of every subject except ``test_subject``."""
    return [w for sid, ws in windows_by_subject.items() if sid != test_subject for w in ws]


def manifest_hash(windows) -> str:
    """sha256 over the identities (subject, start, label) of a training set."""
    h = hashlib.sha256()
    for w in windows:
        h.update(f"{w.subject_id}|{w.start_s:.6f}|{w.label}\n".encode())
    return h.hexdigest()


def run_fold(windows_by_subject: dict, test_subject: str, spec: ModelSpec, train_cfg: TrainConfig,
             compression_cfg: CompressionConfig | None = None) -> FoldResult:
    train_ws = fold_training_windows(windows_by_subject, test_subject)
    test_ws = windows_by_subject[test_subject]
    if not train_ws:
        raise DataError(f"fold {test_subject}: empty training set")
    fold_spec = fit_input_scales(spec, train_ws)
    res = train(fold_spec, train_ws, train_cfg)
    y_train = labels_of(train_ws)
    threshold = youden_threshold(predict_proba(fold_spec, res.params, train_ws), y_train)
    fold = FoldResult(
        subject_id=test_subject,
        labels=labels_of(test_ws).astype(np.int64),
        scores=predict_proba(fold_spec, res.params, test_ws),
        threshold=threshold,
        manifest_hash=manifest_hash(train_ws),
        n_train=len(train_ws),
        leaked=any(w.subject_id == test_subject for w in train_ws),
        train_losses=list(res.losses),
    )
    if compression_cfg is not None:
        comp = compress(fold_spec, res.params, train_ws, compression_cfg)
        if compression_cfg.refit_threshold:
            fold.compressed_threshold = youden_threshold(comp.predict_proba(fold_spec, train_ws), y_train)
        else:
            fold.compressed_threshold = threshold
        fold.compressed_scores = comp.predict_proba(fold_spec, test_ws)
        fold.sizes = size_breakdown(fold_spec, res.params, comp, compression_cfg.sparse_encoding)
    log.info("fold %s: %d train windows, threshold %.3f", test_subject, len(train_ws), threshold)
    return fold


def _fold_task(args):
    return run_fold(*args)


def loo_folds(windows_by_subject: dict, spec: ModelSpec, train_cfg: TrainConfig = TrainConfig(),
              compression_cfg: CompressionConfig | None = None, jobs: int = 1) -> list[FoldResult]:
    """One fold per subject; results sorted by subject id regardless of ``jobs``."""
    if len(windows_by_subject) < 2:
        raise DataError("leave-one-out needs at least 2 subjects")
    subjects = sorted(windows_by_subject)
    tasks = [(windows_by_subject, s, spec, train_cfg, compression_cfg) for s in subjects]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_fold_task, tasks))
    return [run_fold(*t) for t in tasks]


def _subject_metrics(labels, scores, threshold) -> dict:
    m = metrics_from_confusion(confusion(scores, labels, threshold))
    try:
        m["auc"] = roc_auc(scores, labels)
    except DataError:
        m["auc"] = None
    m["n_windows"] = int(len(labels))
    m["n_positive"] = int(np.sum(labels))
    return m


def report_from_folds(folds: list[FoldResult], compressed: bool = False, n_boot: int = 1000,
                      seed: int = 0) -> MetricReport:
    """Pooled metrics over all folds (primary), with per-subject and fold-mean figures."""
    def pick(f):
        if compressed:
            if f.compressed_scores is None:
                raise DataError("folds were run without compression")
            return f.compressed_scores, f.compressed_threshold
        return f.scores, f.threshold

    scores = np.concatenate([pick(f)[0] for f in folds])
    labels = np.concatenate([f.labels for f in folds])
    thresholds = np.concatenate([np.full(len(f.labels), pick(f)[1]) for f in folds])
    rep = report_from_scores(scores, labels, thresholds, n_boot=n_boot, seed=seed)
    per_subject = {f.subject_id: _subject_metrics(f.labels, *pick(f)) for f in folds}
    rep.per_subject = per_subject
    fold_mean = {}
    for name in METRIC_NAMES:
        vals = [m[name] for m in per_subject.values() if m[name] is not None]
        fold_mean[name] = float(np.mean(vals)) if vals else None
    rep.extra = {
        "pooling": "pooled",
        "fold_mean": fold_mean,
        "decision_rate_at_0.5": float(np.mean(scores >= 0.5)),
        "manifest_hashes": {f.subject_id: f.manifest_hash for f in folds},
        "single_class_subjects": sorted(f.subject_id for f in folds if f.labels.min() == f.labels.max()),
        "leaked_folds": sorted(f.subject_id for f in folds if f.leaked),
        "compressed": compressed,
    }
    if compressed:
        rep.extra["sizes"] = {f.subject_id: f.sizes for f in folds}
    return rep


def loo_evaluate(cohort, spec: ModelSpec, train_cfg: TrainConfig = TrainConfig(),
                 compression_cfg: CompressionConfig | None = None,
                 windowing: WindowingConfig = WindowingConfig(), n_boot: int = 1000, seed: int = 0,
                 jobs: int = 1) -> MetricReport:
    """LOO report for the float model, or for the compressed model when ``compression_cfg`` is set."""
    folds = loo_folds(cohort_windows(cohort, windowing), spec, train_cfg, compression_cfg, jobs)
    return report_from_folds(folds, compressed=compression_cfg is not None, n_boot=n_boot, seed=seed)


def decision_agreement(folds: list[FoldResult], threshold: float | None = 0.5) -> float:
    """Fraction of test windows on which float and compressed decisions coincide.

    ``threshold=None`` uses each model's own training-set operating point.
    """
    same = []
    for f in folds:
        if f.compressed_scores is None:
            raise DataError("folds were run without compression")
        if threshold is None:
            a, b = f.scores >= f.threshold, f.compressed_scores >= f.compressed_threshold
        else:
            a, b = f.scores >= threshold, f.compressed_scores >= threshold
        same.append(a == b)
    return float(np.mean(np.concatenate(same)))


# ---------------------------------------------------------------------------
# ablation


def subset_key(modalities) -> str:
    ms = {parse_modality(m) for m in modalities}
    return "+".join(m.value for m in (ModalityKind.EEG, ModalityKind.EMG, ModalityKind.ACC) if m in ms)


@dataclass(frozen=True)
class AblationSpec:
    subsets: tuple = (("EEG", "EMG", "ACC"), ("EEG",), ("EMG",), ("ACC",))
    # True: every subset model is trained from a fresh initialization. False:
    # branch weights come from the full model of the same fold, only the head is trained.
    retrain_branches: bool = True

    def validate(self) -> "AblationSpec":
        if not self.subsets:
            raise ConfigError("ablation needs at least one modality subset")
        for s in self.subsets:
            if not s:
                raise ConfigError("modality subsets must be non-empty")
            for m in s:
                parse_modality(m)
        return self


def _head_only_folds(windows_by_subject, full_spec, sub_spec, train_cfg):
    """Train the full model per fold, then re-train only the head on the subset's branches."""
    folds = []
    branch_names = tuple(f"{b.name}." for b in sub_spec.branches)
    for sid in sorted(windows_by_subject):
        train_ws = fold_training_windows(windows_by_subject, sid)
        test_ws = windows_by_subject[sid]
        full = fit_input_scales(full_spec, train_ws)
        full_params = train(full, train_ws, train_cfg).params
        sub = fit_input_scales(sub_spec, train_ws)
        init = init_parameters(sub, train_cfg.seed)
        init.update({k: v for k, v in full_params.items() if k.startswith(branch_names)})
        res = train(sub, train_ws, replace(train_cfg, frozen=branch_names), init=init)
        y_train = labels_of(train_ws)
        folds.append(FoldResult(
            subject_id=sid, labels=labels_of(test_ws).astype(np.int64),
            scores=predict_proba(sub, res.params, test_ws),
            threshold=youden_threshold(predict_proba(sub, res.params, train_ws), y_train),
            manifest_hash=manifest_hash(train_ws), n_train=len(train_ws),
            leaked=any(w.subject_id == sid for w in train_ws), train_losses=list(res.losses)))
    return folds


def ablation(cohort, base_spec: ModelSpec, ablation_spec: AblationSpec = AblationSpec(),
             train_cfg: TrainConfig = TrainConfig(), windowing: WindowingConfig = WindowingConfig(),
             n_boot: int = 1000, seed: int = 0, jobs: int = 1,
             full_folds: list[FoldResult] | None = None) -> dict[str, MetricReport]:
    """LOO report per modality subset, keyed like ``"EEG+EMG"``.

    ``full_folds`` (float folds of ``base_spec`` with the same settings) are
    reused for the all-modality subset instead of being trained again.
    """
    ablation_spec.validate()
    windows = cohort_windows(cohort, windowing)
    everything = {m.value for m in base_spec.modalities()}
    out = {}
    for subset in ablation_spec.subsets:
        sub_spec = base_spec.restrict(subset)
        reuse = full_folds is not None and ablation_spec.retrain_branches
        if reuse and {parse_modality(m).value for m in subset} == everything:
            folds = full_folds
        elif ablation_spec.retrain_branches:
            folds = loo_folds(windows, sub_spec, train_cfg, None, jobs)
        else:
            folds = _head_only_folds(windows, base_spec, sub_spec, train_cfg)
        out[subset_key(subset)] = report_from_folds(folds, n_boot=n_boot, seed=seed)
    return out
