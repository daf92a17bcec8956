"""Leave-one-out evaluation, modality ablation, metrics and synthetic cohorts."""

from .cohort import PROFILES, EffectProfile, generate_synthetic_cohort, get_profile
from .features import band_power_features, feature_oracle_auc
from .loo import (AblationSpec, FoldResult, WindowingConfig, ablation, cohort_windows, decision_agreement,
                  fold_training_windows, loo_evaluate, loo_folds, manifest_hash, report_from_folds, run_fold)
from .metrics import (METRIC_NAMES, ConfusionCounts, MetricReport, bootstrap_ci, confusion,
                      metrics_from_confusion, rank_auc, report_from_scores, roc_auc, roc_curve,
                      youden_threshold)
from .report_io import read_report_yaml, write_report_yaml, write_reports_csv

__all__ = [
    "PROFILES", "METRIC_NAMES", "AblationSpec", "ConfusionCounts", "EffectProfile", "FoldResult",
    "MetricReport", "WindowingConfig", "ablation", "band_power_features", "bootstrap_ci", "cohort_windows",
    "confusion", "decision_agreement", "feature_oracle_auc", "fold_training_windows",
    "generate_synthetic_cohort", "get_profile", "loo_evaluate", "loo_folds", "manifest_hash",
    "metrics_from_confusion", "rank_auc", "read_report_yaml", "report_from_folds", "report_from_scores",
    "roc_auc", "roc_curve", "run_fold", "write_report_yaml", "write_reports_csv", "youden_threshold",
]
