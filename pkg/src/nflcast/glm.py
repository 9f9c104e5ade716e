"""Binary logistic regression with L1 or L2 penalty, fitted deterministically.

The objective is the mean negative log-likelihood plus ``lam * penalty(w)``
with ``penalty`` either ``||w||_1`` or ``||w||_2^2``; the intercept is not
penalised. Columns are centred and scaled internally before optimisation. The
reparametrisation is exact (the penalty is rescaled to match), so the returned
coefficients solve the problem on the raw features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import expit

LAMBDA_GRID = (0, 1, 5, 10, 25, 50, 100, 250, 500, 1000)
PENALTIES = ("l2", "l1")
NEWTON_MAX_DIM = 400


@dataclass(frozen=True)
class ModelWeights:
    coef: dict
    intercept: float
    penalty: str = "l2"
    lam: float = 0.0
    n_iter: int = 0
    converged: bool = True

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not all(math.isfinite(v) for v in self.coef.values()) or not math.isfinite(self.intercept):
            raise ValueError("non-finite coefficient")

    def as_arrays(self, names):
        return np.array([self.coef.get(n, 0.0) for n in names]), self.intercept


@dataclass
class FitResult:
    w: np.ndarray
    b: float
    n_iter: int
    converged: bool
    trace: list = field(default_factory=list)


# -- objective ------------------------------------------------------------------


def _check_penalty(penalty):
    penalty = penalty.lower()
    if penalty not in PENALTIES:
        raise ValueError(f"penalty must be one of {PENALTIES}, got {penalty!r}")
    return penalty


def log_loss(X, y, w, b) -> float:
    z = X @ w + b
    s = 2.0 * y - 1.0
    return float(np.mean(np.logaddexp(0.0, -s * z)))


def objective(X, y, w, b, penalty="l2", lam=0.0) -> float:
    penalty = _check_penalty(penalty)
    reg = np.abs(w).sum() if penalty == "l1" else float(w @ w)
    return log_loss(X, y, w, b) + lam * reg


def gradient(X, y, w, b, lam=0.0):
    """Gradient of the L2-penalised objective with respect to (w, b)."""
    r = expit(X @ w + b) - y
    n = len(y)
    return X.T @ r / n + 2.0 * lam * w, float(r.sum() / n)


# -- fitting --------------------------------------------------------------------


def _validate(X, y, penalty, lam):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise ValueError(f"shape mismatch: X {X.shape}, y {y.shape}")
    if len(y) == 0:
        raise ValueError("no training instances")
    if not np.isfinite(X).all():
        raise ValueError("training features contain NaN or infinity")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    if lam == 0 and (y.min() == y.max()):
        raise ValueError("single-class data with lam=0 has no finite solution")
    return X, y, _check_penalty(penalty)


def fit_arrays(X, y, penalty="l2", lam=0.0, tol=1e-9, max_iter=10000, init=None,
               trace=None) -> FitResult:
    """Minimise the penalised mean log-loss on dense arrays.

    ``init`` is an optional ``(w, b)`` warm start. When ``trace`` is a list the
    objective after every iteration is appended to it.
    """
    X, y, penalty = _validate(X, y, penalty, lam)
    n, d = X.shape
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale < 1e-12 * np.maximum(1.0, np.abs(mean))] = 1.0
    Z = (X - mean) / scale
    if init is None:
        u = np.zeros(d)
        c = 0.0
    else:
        w0, b0 = init
        u = np.asarray(w0, dtype=float) * scale
        c = float(b0 + np.asarray(w0, dtype=float) @ mean)
    theta = np.concatenate([[c], u])
    # penalty weights per coordinate in the scaled space (intercept unpenalised)
    pw = np.concatenate([[0.0], 1.0 / scale])
    s = 2.0 * y - 1.0
    local_trace = [] if trace is None else trace

    if penalty == "l1" and lam > 0:
        theta, it, ok = _mfista(Z, y, s, theta, lam * pw, tol, max_iter, local_trace)
    elif d + 1 <= NEWTON_MAX_DIM:
        theta, it, ok = _newton(Z, y, s, theta, lam * pw ** 2, tol, max_iter, local_trace)
    else:
        theta, it, ok = _lbfgs(Z, y, s, theta, lam * pw ** 2, tol, max_iter, local_trace)
    u = theta[1:]
    w = u / scale
    b = float(theta[0] - w @ mean)
    return FitResult(w, b, it, ok, local_trace)


def _loss(Z, s, theta):
    z = Z @ theta[1:] + theta[0]
    return float(np.mean(np.logaddexp(0.0, -s * z)))


def _newton(Z, y, s, theta, ridge, tol, max_iter, trace):
    n, d = Z.shape
    A = np.hstack([np.ones((n, 1)), Z])

    def f(th):
        return _loss(Z, s, th) + float(ridge @ (th * th))

    fx = f(theta)
    for it in range(1, max_iter + 1):
        p = expit(A @ theta)
        g = A.T @ (p - y) / n + 2.0 * ridge * theta
        wts = p * (1.0 - p)
        H = (A.T * wts) @ A / n + np.diag(2.0 * ridge)
        step = -np.linalg.lstsq(H, g, rcond=None)[0]
        slope = float(g @ step)
        if not slope < 0:
            trace.append(fx)
            return theta, it, True
        t = 1.0
        for _ in range(60):
            cand = theta + t * step
            fc = f(cand)
            if fc <= fx + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            trace.append(fx)
            return theta, it, True
        done = fx - fc <= tol * max(1.0, abs(fx))
        theta, fx = cand, fc
        trace.append(fx)
        if done:
            return theta, it, True
    return theta, max_iter, False


def _lbfgs(Z, y, s, theta, ridge, tol, max_iter, trace):
    n = len(y)

    def fg(th):
        z = Z @ th[1:] + th[0]
        val = float(np.mean(np.logaddexp(0.0, -s * z))) + float(ridge @ (th * th))
        r = expit(z) - y
        g = np.concatenate([[r.sum() / n], Z.T @ r / n]) + 2.0 * ridge * th
        return val, g

    def cb(xk):
        trace.append(fg(xk)[0])

    res = optimize.minimize(fg, theta, jac=True, method="L-BFGS-B", callback=cb,
                            options={"maxiter": max_iter, "ftol": tol, "gtol": 1e-12})
    return res.x, int(res.nit), bool(res.success)


def _soft(v, thr):
    return np.sign(v) * np.maximum(np.abs(v) - thr, 0.0)


def _mfista(Z, y, s, theta, thresh, tol, max_iter, trace):
    """Monotone FISTA with gradient restart for the L1-penalised problem."""
    n, d = Z.shape
    A = np.hstack([np.ones((n, 1)), Z])
    L = 0.25 * float(np.linalg.eigvalsh(A.T @ A / n)[-1])
    L = max(L, 1e-12)

    def F(th):
        return _loss(Z, s, th) + float(thresh @ np.abs(th))

    def prox_step(v):
        g = A.T @ (expit(A @ v) - y) / n
        return _soft(v - g / L, thresh / L)

    x = theta.copy()
    fx = F(x)
    yv = x.copy()
    t = 1.0
    for it in range(1, max_iter + 1):
        z = prox_step(yv)
        fz = F(z)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if fz <= fx:
            x_new, f_new = z, fz
            yv = x_new + (t / t_next) * (z - x_new) + ((t - 1.0) / t_next) * (x_new - x)
        else:
            # rejected momentum step: restart from the incumbent
            x_new, f_new = x, fx
            yv = x.copy()
            t_next = 1.0
        small = fx - f_new <= tol * max(1.0, abs(fx))
        x, fx, t = x_new, f_new, t_next
        trace.append(fx)
        if small:
            z0 = prox_step(x)
            f0 = F(z0)
            if fx - f0 <= tol * max(1.0, abs(fx)):
                if f0 <= fx:
                    x, fx = z0, f0
                    trace.append(fx)
                return x, it, True
    return x, max_iter, False


# -- dict interface --------------------------------------------------------------


def vectorize(rows, names=None):
    """Dense matrix from feature dicts; ``names`` fixes the column order."""
    if names is None:
        names = sorted({k for r in rows for k in r})
    index = {n: i for i, n in enumerate(names)}
    X = np.zeros((len(rows), len(names)))
    for i, r in enumerate(rows):
        for k, v in r.items():
            j = index.get(k)
            if j is not None:
                X[i, j] = v
    return X, list(names)


def train(instances, penalty="l2", lam=0.0, tol=1e-9, max_iter=10000, trace=None) -> ModelWeights:
    """Fit a logistic model on ``(feature_dict, label)`` pairs."""
    rows = [fv for fv, _ in instances]
    y = np.array([lab for _, lab in instances], dtype=float)
    for fv in rows:
        for k, v in fv.items():
            if not math.isfinite(v):
                raise ValueError(f"feature {k} is not finite")
    X, names = vectorize(rows)
    res = fit_arrays(X, y, penalty, lam, tol, max_iter, trace=trace)
    return ModelWeights(dict(zip(names, map(float, res.w))), res.b, _check_penalty(penalty),
                        float(lam), res.n_iter, res.converged)


def predict_prob(model: ModelWeights, x: dict) -> float:
    z = model.intercept + sum(model.coef.get(k, 0.0) * v for k, v in x.items())
    return float(expit(z))


def predict_label(model: ModelWeights, x: dict) -> int:
    return int(predict_prob(model, x) >= 0.5)


def top_features(model: ModelWeights, n: int):
    """(most positive, most negative) coefficient lists, ties broken by name."""
    items = list(model.coef.items())
    pos = sorted(items, key=lambda kv: (-kv[1], kv[0]))[:max(n, 0)]
    neg = sorted(items, key=lambda kv: (kv[1], kv[0]))[:max(n, 0)]
    return pos, neg


def dump_weights(model: ModelWeights, path):
    """Tab-separated (feature, coefficient) sorted by |coefficient|."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# penalty={model.penalty} lambda={model.lam:g}\n")
        fh.write("feature\tcoefficient\n")
        fh.write(f"(intercept)\t{model.intercept!r}\n")
        for k, v in sorted(model.coef.items(), key=lambda kv: (-abs(kv[1]), kv[0])):
            fh.write(f"{k}\t{v!r}\n")
