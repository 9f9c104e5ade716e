"""Ridge-regularised canonical correlation analysis between two feature views.

Both views are standardised (zero-variance columns dropped). With thin SVDs
``Z1 = U1 S1 V1^T`` and ``Z2 = U2 S2 V2^T`` the regularised covariances are
``V (S^2/n + eps) V^T`` on the data span, and the whitened cross-covariance
reduces to the small core matrix

    M = D1^{-1/2} (S1 U1^T U2 S2 / n) D2^{-1/2},   D = S^2/n + eps.

Its singular vectors give the projections ``A = V1 D1^{-1/2} P`` and
``B = V2 D2^{-1/2} Q``, and its singular values the canonical correlations.
Cost is linear in the number of columns, which matters for the unigram view.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_RIDGE = 1e-9


@dataclass(frozen=True)
class ViewScaler:
    names: tuple          # kept column names (or indices)
    columns: np.ndarray   # indices of kept columns in the input
    mean: np.ndarray
    scale: np.ndarray
    n_input: int

    def apply(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_input:
            raise ValueError(f"expected {self.n_input} columns, got {X.shape[1]}")
        return (X[:, self.columns] - self.mean) / self.scale


@dataclass(frozen=True)
class CcaModel:
    view1: ViewScaler
    view2: ViewScaler
    proj1: np.ndarray     # kept-columns(view1) x k
    proj2: np.ndarray     # kept-columns(view2) x k
    correlations: np.ndarray
    ridge: float

    @property
    def k(self) -> int:
        return len(self.correlations)

    def variates(self, X1, X2):
        """Canonical variates of both views, each an (n, k) array."""
        return self.view1.apply(X1) @ self.proj1, self.view2.apply(X2) @ self.proj2

    def to_dict(self) -> dict:
        def view(v):
            return {"names": list(map(str, v.names)), "mean": v.mean.tolist(),
                    "scale": v.scale.tolist()}
        return {"k": self.k, "ridge": self.ridge, "correlations": self.correlations.tolist(),
                "view1": view(self.view1), "view2": view(self.view2),
                "projection1": self.proj1.tolist(), "projection2": self.proj2.tolist()}

    def dump(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=1)
            fh.write("\n")


def _scaler(X, names):
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    keep = np.flatnonzero(sd > 1e-12 * np.maximum(1.0, np.abs(mean)))
    names = tuple(names[i] for i in keep) if names is not None else tuple(keep.tolist())
    return ViewScaler(names, keep, mean[keep], sd[keep], X.shape[1])


def _span(Z, n, ridge):
    U, S, Vt = np.linalg.svd(Z, full_matrices=False)
    tol = S[0] * max(Z.shape) * np.finfo(float).eps if len(S) else 0.0
    r = int(np.sum(S > tol))
    U, S, V = U[:, :r], S[:r], Vt[:r].T
    D = S ** 2 / n + ridge
    return U, S, V, D


def fit(X1, X2, k: int, ridge: float = DEFAULT_RIDGE, names1=None, names2=None) -> CcaModel:
    """Fit k canonical component pairs on row-aligned views ``X1`` (n, m1), ``X2`` (n, m2)."""
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    if X1.ndim != 2 or X2.ndim != 2:
        raise ValueError("views must be 2-D arrays")
    n = X1.shape[0]
    if X2.shape[0] != n:
        raise ValueError(f"views are not row-aligned: {n} vs {X2.shape[0]} rows")
    if n < 2:
        raise ValueError("need at least two samples")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    if k < 1 or k > min(X1.shape[1], X2.shape[1], n - 1):
        raise ValueError(f"k={k} exceeds min(m1, m2, n-1) = "
                         f"{min(X1.shape[1], X2.shape[1], n - 1)}")
    s1, s2 = _scaler(X1, names1), _scaler(X2, names2)
    Z1, Z2 = s1.apply(X1), s2.apply(X2)
    if Z1.shape[1] == 0 or Z2.shape[1] == 0:
        raise ValueError("a view has no columns with nonzero variance")
    U1, S1, V1, D1 = _span(Z1, n, ridge)
    U2, S2, V2, D2 = _span(Z2, n, ridge)
    if k > min(len(S1), len(S2)):
        raise ValueError(f"k={k} exceeds the numerical rank of the views "
                         f"({len(S1)}, {len(S2)})")
    core = (S1[:, None] * (U1.T @ U2) * S2[None, :]) / n
    M = core / np.sqrt(D1)[:, None] / np.sqrt(D2)[None, :]
    P, rho, Qt = np.linalg.svd(M, full_matrices=False)
    P, rho, Q = P[:, :k], rho[:k], Qt[:k].T
    A = V1 @ (P / np.sqrt(D1)[:, None])
    B = V2 @ (Q / np.sqrt(D2)[:, None])
    # fix the sign of each pair so the view-1 loading of largest magnitude is positive
    for j in range(k):
        i = int(np.argmax(np.abs(A[:, j])))
        if A[i, j] < 0:
            A[:, j] *= -1
            B[:, j] *= -1
    return CcaModel(s1, s2, A, B, np.clip(rho, 0.0, 1.0), float(ridge))


def transform(model: CcaModel, x1, x2) -> dict:
    """Feature dict ``cca.v1.i`` / ``cca.v2.i`` (1-based) for one sample or the first row."""
    a, b = model.variates(x1, x2)
    out = {}
    for i in range(model.k):
        out[f"cca.v1.{i + 1}"] = float(a[0, i])
    for i in range(model.k):
        out[f"cca.v2.{i + 1}"] = float(b[0, i])
    return out


def transform_rows(model: CcaModel, X1, X2) -> np.ndarray:
    """(n, 2k) matrix of view-1 then view-2 variates."""
    a, b = model.variates(X1, X2)
    return np.hstack([a, b])


def feature_names(k: int) -> list[str]:
    return [f"cca.v1.{i + 1}" for i in range(k)] + [f"cca.v2.{i + 1}" for i in range(k)]


def align(rows, names):
    """Dense matrix for feature dicts over a fixed vocabulary; unseen keys dropped."""
    index = {n: i for i, n in enumerate(names)}
    X = np.zeros((len(rows), len(names)))
    for r, fv in enumerate(rows):
        for key, v in fv.items():
            j = index.get(key)
            if j is not None:
                X[r, j] = v
    return X
