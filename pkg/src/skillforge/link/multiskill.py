"""Multi-skill span detection: bag-of-words counts + RBF-kernel SVM.

The dual is solved with an SMO solver using second-order working-set
selection (maximal violating pair for the first index, largest objective
decrease for the second). Training is deterministic; there is no random
state in the solver.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from ..corpus import SkillSpan
from ..fuzzy import turkish_lower

TAU = 1e-12

SparseVec = dict  # token index -> count
_TOKEN = re.compile(r"\w+|[^\w\s]")


def span_tokens(text: str) -> list[str]:
    # punctuation is kept as its own token: "," and "/" are delimiter cues
    return _TOKEN.findall(turkish_lower(text))


def build_vocabulary(texts: Sequence[str]) -> dict[str, int]:
    vocab: dict[str, int] = {}
    for text in texts:
        for tok in span_tokens(text):
            if tok not in vocab:
                vocab[tok] = len(vocab)
    # sorted order so the vocabulary does not depend on example order
    return {tok: i for i, tok in enumerate(sorted(vocab))}


def count_vector(text: str, vocabulary: Mapping[str, int]) -> SparseVec:
    vec: SparseVec = {}
    for tok in span_tokens(text):
        idx = vocabulary.get(tok)
        if idx is not None:
            vec[idx] = vec.get(idx, 0) + 1
    return vec


def _sq_norm(v: SparseVec) -> float:
    return float(sum(c * c for c in v.values()))


def _dot(a: SparseVec, b: SparseVec) -> float:
    if len(a) > len(b):
        a, b = b, a
    return float(sum(c * b.get(i, 0) for i, c in a.items()))


@dataclass
class MultiSkillModel:
    vocabulary: dict[str, int]
    support_vectors: list[SparseVec]
    dual_coefs: list[float]
    bias: float
    gamma: float
    C: float = 1.0
    training_accuracy: float | None = None
    _sv_norms: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if len(self.support_vectors) != len(self.dual_coefs):
            raise ValueError("support_vectors and dual_coefs differ in length")
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        self._sv_norms = [_sq_norm(sv) for sv in self.support_vectors]

    def decision_value(self, text: str) -> float:
        x = count_vector(text, self.vocabulary)
        xx = _sq_norm(x)
        total = self.bias
        for sv, norm, coef in zip(self.support_vectors, self._sv_norms, self.dual_coefs):
            d2 = max(xx + norm - 2.0 * _dot(x, sv), 0.0)
            total += coef * math.exp(-self.gamma * d2)
        return total

    def to_dict(self) -> dict:
        return {
            "vocabulary": self.vocabulary,
            "support_vectors": [sorted(sv.items()) for sv in self.support_vectors],
            "dual_coefs": self.dual_coefs,
            "bias": self.bias,
            "gamma": self.gamma,
            "C": self.C,
            "training_accuracy": self.training_accuracy,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MultiSkillModel":
        return cls(
            vocabulary=dict(d["vocabulary"]),
            support_vectors=[{int(i): c for i, c in sv} for sv in d["support_vectors"]],
            dual_coefs=[float(c) for c in d["dual_coefs"]],
            bias=float(d["bias"]),
            gamma=float(d["gamma"]),
            C=float(d.get("C", 1.0)),
            training_accuracy=d.get("training_accuracy"),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "MultiSkillModel":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _span_text(span: SkillSpan | str) -> str:
    return span.surface if isinstance(span, SkillSpan) else span


def classify_multiskill(span: SkillSpan | str, model: MultiSkillModel) -> bool:
    text = _span_text(span)
    if not text.strip():
        raise ValueError("cannot classify an empty span")
    return model.decision_value(text) > 0


# ------------------------------------------------------------------ solver


@dataclass
class SMOResult:
    alpha: np.ndarray
    rho: float
    iterations: int
    converged: bool


def rbf_kernel(X: np.ndarray, gamma: float, Y: np.ndarray | None = None) -> np.ndarray:
    Y = X if Y is None else Y
    d2 = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.exp(-gamma * np.maximum(d2, 0.0))


def smo_solve(K: np.ndarray, y: np.ndarray, C: float, tol: float = 1e-3, max_iter: int = 100_000) -> SMOResult:
    """Solve min 1/2 a'Qa - e'a s.t. 0 <= a <= C, y'a = 0 with Q = yy' * K."""
    n = len(y)
    y = y.astype(np.float64)
    Q = K * np.outer(y, y)
    QD = np.diag(K).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        pos = y > 0
        up = (pos & (alpha < C)) | (~pos & (alpha > 0))
        low = (pos & (alpha > 0)) | (~pos & (alpha < C))
        score = -y * G
        if not up.any() or not low.any():
            converged = True
            break
        up_scores = np.where(up, score, -np.inf)
        i = int(np.argmax(up_scores))
        g_max = up_scores[i]
        g_min = np.min(np.where(low, score, np.inf))
        if g_max - g_min < tol:
            converged = True
            break
        grad_diff = g_max - score
        cand = low & (grad_diff > 0)
        quad = QD[i] + QD - 2.0 * K[i]
        quad = np.where(quad > 0, quad, TAU)
        obj = np.where(cand, -(grad_diff**2) / quad, np.inf)
        j = int(np.argmin(obj))
        if not cand[j]:
            converged = True
            break

        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            qc = QD[i] + QD[j] + 2.0 * Q[i, j]
            qc = qc if qc > 0 else TAU
            delta = (-G[i] - G[j]) / qc
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            qc = QD[i] + QD[j] - 2.0 * Q[i, j]
            qc = qc if qc > 0 else TAU
            delta = (G[i] - G[j]) / qc
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
                if nj > C:
                    nj, ni = C, total - C
            else:
                if nj < 0:
                    nj, ni = 0.0, total
                if ni < 0:
                    ni, nj = 0.0, total
        G += Q[:, i] * (ni - ai) + Q[:, j] * (nj - aj)
        alpha[i], alpha[j] = ni, nj

    yG = y * G
    at_upper = alpha >= C
    at_lower = alpha <= 0
    free = ~at_upper & ~at_lower
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub_mask = (at_upper & (y < 0)) | (at_lower & (y > 0))
        lb_mask = (at_upper & (y > 0)) | (at_lower & (y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2)
    return SMOResult(alpha, rho, it, converged)


def _dense(vectors: Sequence[SparseVec], n_features: int) -> np.ndarray:
    X = np.zeros((len(vectors), n_features))
    for r, v in enumerate(vectors):
        for i, c in v.items():
            X[r, i] = c
    return X


def scale_gamma(X: np.ndarray) -> float:
    var = float(X.var()) if X.size else 0.0
    return 1.0 / (X.shape[1] * var) if var > 0 and X.shape[1] else 1.0


def train_multiskill(
    spans: Sequence[SkillSpan | str],
    labels: Sequence[bool] | None = None,
    C: float = 1.0,
    gamma: float | str = "scale",
    tol: float = 1e-3,
    max_iter: int = 100_000,
) -> MultiSkillModel:
    """Fit on spans (``is_multi`` used as the label unless ``labels`` given)."""
    texts = [_span_text(s) for s in spans]
    if labels is None:
        labels = [bool(s.is_multi) for s in spans]
    y = np.where(np.asarray(labels, dtype=bool), 1.0, -1.0)
    if len(set(y.tolist())) < 2:
        raise ValueError("training data must contain both multi-skill and single-skill spans")
    vocab = build_vocabulary(texts)
    vecs = [count_vector(t, vocab) for t in texts]
    X = _dense(vecs, len(vocab))
    g = scale_gamma(X) if gamma == "scale" else float(gamma)
    if not g > 0:
        raise ValueError("gamma must be positive")
    K = rbf_kernel(X, g)
    res = smo_solve(K, y, C, tol, max_iter)
    sv = np.flatnonzero(res.alpha > 0)
    model = MultiSkillModel(
        vocabulary=vocab,
        support_vectors=[vecs[i] for i in sv],
        dual_coefs=[float(res.alpha[i] * y[i]) for i in sv],
        bias=-res.rho,
        gamma=g,
        C=float(C),
    )
    decision = (K[:, sv] @ (res.alpha[sv] * y[sv])) - res.rho
    model.training_accuracy = float(np.mean((decision > 0) == (y > 0)))
    return model


class MultiSkillClassifier(ClassifierMixin, BaseEstimator):
    """Estimator wrapper: ``X`` is a sequence of span strings, ``y`` booleans."""

    def __init__(self, C=1.0, gamma="scale", tol=1e-3, max_iter=100_000):
        self.C = C
        self.gamma = gamma
        self.tol = tol
        self.max_iter = max_iter

    def fit(self, X, y):
        X = _as_texts(X)
        y = np.asarray(y, dtype=bool)
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} spans but y has {len(y)} labels")
        self.model_ = train_multiskill(X, y, self.C, self.gamma, self.tol, self.max_iter)
        self.classes_ = np.array([False, True])
        return self

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return np.array([self.model_.decision_value(t) for t in _as_texts(X)])

    def predict(self, X):
        return self.decision_function(X) > 0

    @classmethod
    def from_model(cls, model: MultiSkillModel) -> "MultiSkillClassifier":
        est = cls(C=model.C, gamma=model.gamma)
        est.model_ = model
        est.classes_ = np.array([False, True])
        return est


def _as_texts(X) -> list[str]:
    if isinstance(X, str):
        raise ValueError("expected a sequence of span strings, got a single string")
    return [_span_text(x) for x in X]
