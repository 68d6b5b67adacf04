"""Polynomial logistic classifier trained by full-batch gradient descent.

Two classes use a single logit (positive favours class index 1); more use a
multinomial softmax, and the full priority order comes from sorting the
predicted probabilities.
"""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.preprocessing import PolynomialFeatures
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..model import NumericalError

CONSTANT_LOGIT = 10.0


def monomial_exponents(n_coords: int, degree: int) -> np.ndarray:
    """Exponent rows of every monomial up to ``degree``, intercept first."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    pf = PolynomialFeatures(degree=degree, include_bias=True).fit(np.zeros((1, n_coords)))
    return pf.powers_.astype(np.int64)


def featurize(x, degree: int = 3, scale=None) -> np.ndarray:
    """Monomials of the (scaled) coordinates up to ``degree``, intercept first.

    Order for two coordinates and degree 3: 1, x1, x2, x1^2, x1 x2, x2^2,
    x1^3, x1^2 x2, x1 x2^2, x2^3.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if scale is not None:
        X = X / np.asarray(scale, dtype=float)
    E = monomial_exponents(X.shape[1], degree)
    out = np.ones((X.shape[0], E.shape[0]))
    for f, row in enumerate(E):
        for d, e in enumerate(row):
            for _ in range(int(e)):
                out[:, f] *= X[:, d]
    return out[0] if np.ndim(x) == 1 else out


def _softmax(S):
    S = S - S.max(axis=1, keepdims=True)
    P = np.exp(S)
    return P / P.sum(axis=1, keepdims=True)


def _sigmoid(s):
    return 0.5 * (1.0 + np.tanh(0.5 * s))


class PolynomialLogisticClassifier(BaseEstimator, ClassifierMixin):
    """Logistic regression on standardized polynomial features.

    Parameters
    ----------
    degree : total degree of the monomial features.
    lr : gradient-descent step size.
    max_epochs : cap on full-batch iterations.
    tol : stop once the loss improves by less than this.
    l2 : ridge penalty on the non-intercept weights.
    n_classes : label count; inferred from the labels when None.
    coord_scale : per-coordinate divisor applied before forming monomials.
    """

    def __init__(self, degree=3, lr=0.1, max_epochs=5000, tol=1e-8, l2=1e-6, n_classes=None,
                 coord_scale=None):
        self.degree = degree
        self.lr = lr
        self.max_epochs = max_epochs
        self.tol = tol
        self.l2 = l2
        self.n_classes = n_classes
        self.coord_scale = coord_scale

    # -------------------------------------------------------------- fitting

    def _raw(self, X):
        return featurize(X, self.degree, self.scale_)

    def _design(self, X):
        return (self._raw(X) - self.mean_) / self.std_

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=float)
        y = y.astype(np.int64)
        if self.degree < 1 or self.lr <= 0 or self.max_epochs < 1:
            raise ValueError("need degree >= 1, lr > 0 and max_epochs >= 1")
        K = int(self.n_classes) if self.n_classes is not None else int(y.max()) + 1
        K = max(K, 2)
        if y.min() < 0 or y.max() >= K:
            raise ValueError("labels must lie in 0..n_classes-1")
        D = X.shape[1]
        self.scale_ = (np.ones(D) if self.coord_scale is None
                       else np.asarray(self.coord_scale, dtype=float).copy())
        if self.scale_.shape != (D,) or np.any(self.scale_ <= 0):
            raise ValueError("coord_scale must hold one positive value per coordinate")
        self.exponents_ = monomial_exponents(D, self.degree)
        self.classes_ = np.arange(K)
        self.n_features_in_ = D
        Phi = self._raw(X)
        mean = Phi.mean(axis=0)
        std = Phi.std(axis=0)
        flat = std < 1e-12
        intercept = self.exponents_.sum(axis=1) == 0
        mean[intercept] = 0.0
        std[flat] = 1.0
        mean[flat & ~intercept] = Phi[0, flat & ~intercept]
        self.mean_, self.std_ = mean, std
        Phi = (Phi - mean) / std
        rows = 1 if K == 2 else K
        W = np.zeros((rows, Phi.shape[1]))
        labels = np.unique(y)
        self.constant_ = labels.size == 1
        if self.constant_:
            warnings.warn("training labels are constant; the fitted rule is constant",
                          stacklevel=2)
            if K == 2:
                W[0, intercept] = CONSTANT_LOGIT if labels[0] == 1 else -CONSTANT_LOGIT
            else:
                W[labels[0], intercept] = CONSTANT_LOGIT
            self.coef_, self.n_iter_, self.loss_ = W, 0, 0.0
            return self
        pen = np.where(intercept, 0.0, self.l2)
        n = Phi.shape[0]
        if K == 2:
            t = y.astype(float)
        else:
            T = np.zeros((n, K))
            T[np.arange(n), y] = 1.0
        prev = np.inf
        loss = np.inf
        it = 0
        for it in range(1, int(self.max_epochs) + 1):
            if K == 2:
                s = Phi @ W[0]
                p = _sigmoid(s)
                # log(1 + e^s) - t s, stable on both tails
                loss = np.mean(np.logaddexp(0.0, s) - t * s)
                G = ((p - t) @ Phi / n)[None, :]
            else:
                S = Phi @ W.T
                P = _softmax(S)
                lse = np.log(np.exp(S - S.max(axis=1, keepdims=True)).sum(axis=1)) + S.max(axis=1)
                loss = np.mean(lse - (S * T).sum(axis=1))
                G = (P - T).T @ Phi / n
            loss += 0.5 * np.sum(pen * W * W)
            if not np.isfinite(loss):
                raise NumericalError("classifier loss is not finite")
            if prev - loss < self.tol:
                break
            prev = loss
            W -= self.lr * (G + pen * W)
        self.coef_, self.n_iter_, self.loss_ = W, it, float(loss)
        return self

    # -------------------------------------------------------------- prediction

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=float)
        S = self._design(X) @ self.coef_.T
        return S[:, 0] if S.shape[1] == 1 else S

    def predict_proba(self, X):
        S = self.decision_function(X)
        if S.ndim == 1:
            p = _sigmoid(S)
            return np.column_stack([1.0 - p, p])
        return _softmax(S)

    def predict(self, X):
        """Top-priority class: the most likely label (smaller index on ties)."""
        S = self.decision_function(X)
        if S.ndim == 1:
            return (S > 0).astype(np.int64)
        return np.argmax(S, axis=1)

    def rank(self, X) -> np.ndarray:
        """Priority orders, most likely class first; ties keep the smaller index.

        With two labels but more coordinates than classes (e.g. z appended),
        the order covers the two labelled classes.
        """
        S = self.decision_function(X)
        if S.ndim == 1:
            return np.where((S > 0)[:, None], [[1, 0]], [[0, 1]]).astype(np.int64)
        return np.argsort(-S, axis=1, kind="stable").astype(np.int64)

    # -------------------------------------------------------------- export

    def kernel_params(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "exps": np.ascontiguousarray(self.exponents_, dtype=np.int64),
            "scale": np.ascontiguousarray(self.scale_, dtype=float),
            "mean": np.ascontiguousarray(self.mean_, dtype=float),
            "std": np.ascontiguousarray(self.std_, dtype=float),
            "weights": np.ascontiguousarray(self.coef_, dtype=float),
        }

    def to_dict(self) -> dict:
        check_is_fitted(self, "coef_")
        return {
            "kind": "binary_logistic" if self.coef_.shape[0] == 1 else "multinomial",
            "degree": int(self.degree),
            "n_classes": int(self.classes_.size),
            "params": {"lr": self.lr, "max_epochs": int(self.max_epochs), "tol": self.tol,
                       "l2": self.l2},
            "scaling": {"coord_scale": self.scale_.tolist(), "mean": self.mean_.tolist(),
                        "std": self.std_.tolist()},
            "exponents": self.exponents_.tolist(),
            "weights": self.coef_.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PolynomialLogisticClassifier":
        if d.get("kind") not in ("binary_logistic", "multinomial"):
            raise ValueError(f"not a classifier document: kind={d.get('kind')!r}")
        p = d.get("params", {})
        sc = d["scaling"]
        m = cls(degree=int(d["degree"]), n_classes=int(d["n_classes"]),
                coord_scale=tuple(sc["coord_scale"]), **p)
        m.scale_ = np.asarray(sc["coord_scale"], dtype=float)
        m.mean_ = np.asarray(sc["mean"], dtype=float)
        m.std_ = np.asarray(sc["std"], dtype=float)
        m.exponents_ = np.asarray(d["exponents"], dtype=np.int64)
        m.coef_ = np.asarray(d["weights"], dtype=float)
        m.classes_ = np.arange(int(d["n_classes"]))
        m.n_features_in_ = m.scale_.size
        m.constant_ = False
        return m
