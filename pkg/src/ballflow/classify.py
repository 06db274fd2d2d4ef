"""Multiclass state classifier: an ensemble of per-feature decision stumps.

Each feature contributes one stump whose threshold minimizes weighted Gini
impurity. A stump votes with the empirical class distribution of the side a
sample falls on; the ensemble averages the votes weighted by each stump's
training accuracy and renormalizes. Any calibrated multiclass model works in
its place; this one keeps training deterministic and dependency-light.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y


class StumpEnsembleClassifier(BaseEstimator, ClassifierMixin):
    """One decision stump per feature, accuracy-weighted soft voting.

    Ties in predict resolve to the lowest class index. A single-class fit
    returns that class with probability 1 everywhere.
    """

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        k = len(self.classes_)
        self.stumps_ = []
        if k == 1:
            return self
        for f in range(X.shape[1]):
            stump = _fit_stump(X[:, f], y_enc, k)
            stump["feature"] = f
            self.stumps_.append(stump)
        # training accuracy of each stump, used as its vote weight
        for stump in self.stumps_:
            pred = np.where(
                X[:, stump["feature"]] <= stump["threshold"],
                np.argmax(stump["left"]),
                np.argmax(stump["right"]),
            )
            stump["weight"] = float(np.mean(pred == y_enc))
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "classes_")
        X = check_array(X)
        k = len(self.classes_)
        if k == 1:
            return np.ones((X.shape[0], 1))
        total = np.zeros((X.shape[0], k))
        weight_sum = 0.0
        for stump in self.stumps_:
            side = X[:, stump["feature"]] <= stump["threshold"]
            votes = np.where(side[:, None], stump["left"][None, :], stump["right"][None, :])
            total += stump["weight"] * votes
            weight_sum += stump["weight"]
        if weight_sum <= 0:
            return np.full((X.shape[0], k), 1.0 / k)
        total /= weight_sum
        return total / total.sum(axis=1, keepdims=True)

    def predict(self, X):
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]


def _fit_stump(values: np.ndarray, y_enc: np.ndarray, k: int) -> dict:
    """Best-Gini threshold for one feature; ties keep the lowest threshold."""
    order = np.argsort(values, kind="stable")
    v_sorted = values[order]
    y_sorted = y_enc[order]
    n = len(values)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), y_sorted] = 1.0
    left_counts = np.cumsum(onehot, axis=0)            # counts for splits after i
    total = left_counts[-1]
    # candidate split after position i requires a value change at i -> i+1
    cuts = np.nonzero(v_sorted[:-1] < v_sorted[1:])[0]
    if len(cuts) == 0:
        dist = total / total.sum()
        return {
            "feature": 0,
            "threshold": float(v_sorted[0]) if n else 0.0,
            "left": dist,
            "right": dist,
            "weight": 0.0,
        }
    nl = cuts + 1.0
    nr = n - nl
    lc = left_counts[cuts]
    rc = total[None, :] - lc
    gini_l = 1.0 - np.sum((lc / nl[:, None]) ** 2, axis=1)
    gini_r = 1.0 - np.sum((rc / nr[:, None]) ** 2, axis=1)
    score = (nl * gini_l + nr * gini_r) / n
    best = int(np.argmin(score))  # first minimum: lowest threshold
    i = cuts[best]
    return {
        "feature": 0,  # caller overwrites
        "threshold": float((v_sorted[i] + v_sorted[i + 1]) / 2.0),
        "left": lc[best] / nl[best],
        "right": rc[best] / nr[best],
        "weight": 0.0,
    }
