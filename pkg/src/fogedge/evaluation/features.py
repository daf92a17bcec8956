"""Band-power features and a logistic-regression baseline.

Used to check that a synthetic cohort carries (or lacks) the planted signal
before any CNN result is trusted.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import welch
from sklearn.linear_model import LogisticRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from ..errors import DataError
from ..signals import ModalityKind
from .metrics import roc_auc

BANDS = {
    ModalityKind.EEG: ((1.0, 4.0), (4.0, 8.0), (8.0, 13.0), (15.0, 25.0), (25.0, 40.0)),
    ModalityKind.EMG: ((20.0, 60.0), (60.0, 150.0), (150.0, 450.0)),
    ModalityKind.ACC: ((0.5, 3.0), (3.0, 8.0), (8.0, 20.0)),
}


def band_power_features(window) -> np.ndarray:
    """log10 mean band power per modality and band, averaged over channels."""
    feats = []
    for m, bands in BANDS.items():
        if m not in window.blocks:
            continue
        x = np.asarray(window.blocks[m], dtype=np.float64)
        rate = x.shape[1] / window.length_s
        f, pxx = welch(x, fs=rate, nperseg=min(x.shape[1], int(round(rate))), axis=-1)
        for lo, hi in bands:
            sel = (f >= lo) & (f < min(hi, rate / 2))
            p = pxx[:, sel].mean() if sel.any() else 0.0
            feats.append(np.log10(p + 1e-12))
    return np.asarray(feats)


def feature_matrix(windows) -> np.ndarray:
    return np.stack([band_power_features(w) for w in windows])


def feature_oracle_auc(windows_by_subject: dict, C: float = 1.0) -> float:
    """Pooled leave-one-subject-out AUC of logistic regression on band powers."""
    subjects = sorted(windows_by_subject)
    if len(subjects) < 2:
        raise DataError("the feature oracle needs at least 2 subjects")
    X = {s: feature_matrix(windows_by_subject[s]) for s in subjects}
    y = {s: np.array([int(w.label) for w in windows_by_subject[s]]) for s in subjects}
    scores, labels = [], []
    for s in subjects:
        Xtr = np.concatenate([X[t] for t in subjects if t != s])
        ytr = np.concatenate([y[t] for t in subjects if t != s])
        if ytr.min() == ytr.max():
            raise DataError(f"fold {s}: training labels are single-class")
        clf = make_pipeline(StandardScaler(), LogisticRegression(C=C, max_iter=1000))
        clf.fit(Xtr, ytr)
        scores.append(clf.predict_proba(X[s])[:, 1])
        labels.append(y[s])
    return roc_auc(np.concatenate(scores), np.concatenate(labels))
