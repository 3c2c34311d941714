"""Binary logistic regression with deterministic full-batch training.

Newton iterations with step halving, falling back to a gradient step
whenever the Hessian solve is unreliable. No randomness anywhere: the
optimizer starts at zero and the data order is never shuffled, so
identical inputs produce bitwise-identical models.

Features are standardized internally; the transform is stored in the
model so artifacts are self-contained. Constant columns are flagged and
their weights forced to zero.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ARTIFACT_VERSION = "lm-v1"


class SingleClassError(ValueError):
    """Training labels contain only one class."""


class NonConvergenceError(RuntimeError):
    def __init__(self, grad_norm: float, max_iter: int) -> None:
        self.grad_norm = grad_norm
        super().__init__(f"no convergence after {max_iter} iterations; gradient norm {grad_norm:.3e}")


class FoldError(RuntimeError):
    """Training failed inside cross_fit; carries the fold index."""

    def __init__(self, fold_index: int, original: Exception) -> None:
        self.fold_index = fold_index
        self.original = original
        super().__init__(f"fold {fold_index}: {original}")


@dataclass(frozen=True)
class TrainConfig:
    l2_penalty: float = 1.0
    tol: float = 1e-8
    max_iter: int = 200


@dataclass(frozen=True)
class LinearModel:
    weights: tuple[float, ...]
    bias: float
    feature_names: tuple[str, ...]
    mean: tuple[float, ...]
    std: tuple[float, ...]
    constant: tuple[bool, ...]
    train_meta: dict = field(default_factory=dict, compare=False)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        mu = np.asarray(self.mean)
        sd = np.where(np.asarray(self.constant), 1.0, np.asarray(self.std))
        return (x - mu) / sd


def _sigmoid(eta: np.ndarray) -> np.ndarray:
    out = np.empty_like(eta)
    pos = eta >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-eta[pos]))
    e = np.exp(eta[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _penalized_nll(theta: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> float:
    eta = Z @ theta[:-1] + theta[-1]
    nll = float(np.sum(np.logaddexp(0.0, eta) - y * eta))
    return nll + 0.5 * l2 * float(np.dot(theta[:-1], theta[:-1]))


def _gradient(theta: np.ndarray, Z: np.ndarray, y: np.ndarray, l2: float) -> np.ndarray:
    p = _sigmoid(Z @ theta[:-1] + theta[-1])
    r = p - y
    return np.concatenate([Z.T @ r + l2 * theta[:-1], [float(np.sum(r))]])


def _hessian(theta: np.ndarray, Z: np.ndarray, l2: float) -> np.ndarray:
    p = _sigmoid(Z @ theta[:-1] + theta[-1])
    w = p * (1.0 - p)
    d = Z.shape[1]
    H = np.empty((d + 1, d + 1))
    Zw = Z * w[:, None]
    H[:d, :d] = Z.T @ Zw + l2 * np.eye(d)
    H[:d, d] = Zw.sum(axis=0)
    H[d, :d] = H[:d, d]
    H[d, d] = float(np.sum(w))
    return H


def train(X, y, cfg: TrainConfig | None = None) -> LinearModel:
    """Minimize the L2-penalized negative log-likelihood to grad norm <= tol."""
    cfg = cfg or TrainConfig()
    X = np.asarray(X, dtype=float)
    yv = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite values")
    if not np.all((yv == 0.0) | (yv == 1.0)):
        raise ValueError("y must be binary 0/1")
    if yv.min() == yv.max():
        raise SingleClassError("labels contain a single class")

    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    constant = sd == 0.0
    sd_safe = np.where(constant, 1.0, sd)
    Z_full = (X - mu) / sd_safe
    free = ~constant
    Z = Z_full[:, free]

    l2 = cfg.l2_penalty
    theta = np.zeros(Z.shape[1] + 1)
    grad = _gradient(theta, Z, yv, l2)
    for _ in range(cfg.max_iter):
        if float(np.linalg.norm(grad)) <= cfg.tol:
            break
        step = None
        H = _hessian(theta, Z, l2)
        try:
            cand = np.linalg.solve(H, -grad)
            if np.all(np.isfinite(cand)) and np.linalg.cond(H) < 1e12:
                step = cand
        except np.linalg.LinAlgError:
            step = None
        if step is None:
            step = -grad  # gradient-descent fallback
        loss = _penalized_nll(theta, Z, yv, l2)
        t = 1.0
        accepted = False
        for _ in range(60):
            trial = theta + t * step
            # Non-strict: near the optimum the loss is flat to float
            # precision while the Newton step still shrinks the gradient.
            if _penalized_nll(trial, Z, yv, l2) <= loss:
                theta = trial
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        grad = _gradient(theta, Z, yv, l2)
    final_norm = float(np.linalg.norm(_gradient(theta, Z, yv, l2)))
    if final_norm > cfg.tol:
        raise NonConvergenceError(final_norm, cfg.max_iter)

    weights = np.zeros(X.shape[1])
    weights[free] = theta[:-1]
    names = tuple(f"f{i}" for i in range(X.shape[1]))
    return LinearModel(
        weights=tuple(float(w) for w in weights),
        bias=float(theta[-1]),
        feature_names=names,
        mean=tuple(float(v) for v in mu),
        std=tuple(float(v) for v in sd),
        constant=tuple(bool(c) for c in constant),
        train_meta={
            "n": int(X.shape[0]),
            "l2_penalty": l2,
            "tol": cfg.tol,
            "max_iter": cfg.max_iter,
            "deterministic": True,
        },
    )


def with_feature_names(m: LinearModel, names) -> LinearModel:
    names = tuple(names)
    if len(names) != len(m.weights):
        raise ValueError("feature name count must match weight count")
    return LinearModel(
        weights=m.weights,
        bias=m.bias,
        feature_names=names,
        mean=m.mean,
        std=m.std,
        constant=m.constant,
        train_meta=m.train_meta,
    )


def predict_proba(m: LinearModel, x) -> float:
    xv = np.asarray(x, dtype=float)
    if xv.shape != (len(m.weights),):
        raise ValueError(f"expected {len(m.weights)} features, got shape {xv.shape}")
    if not np.all(np.isfinite(xv)):
        raise ValueError("feature vector contains non-finite values")
    z = m.standardize(xv)
    eta = float(np.dot(z, np.asarray(m.weights)) + m.bias)
    if eta >= 0:
        return 1.0 / (1.0 + math.exp(-eta))
    e = math.exp(eta)
    return e / (1.0 + e)


def predict_proba_matrix(m: LinearModel, X) -> np.ndarray:
    Xv = np.asarray(X, dtype=float)
    Z = m.standardize(Xv)
    return _sigmoid(Z @ np.asarray(m.weights) + m.bias)


def fold_bounds(n: int, k: int) -> list[tuple[int, int]]:
    """Contiguous folds in input order, sizes differing by at most one."""
    base, rem = divmod(n, k)
    bounds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < rem else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


@dataclass(frozen=True)
class CrossFitResult:
    out_of_fold_probs: tuple[float, ...]
    fold_models: tuple[LinearModel, ...]
    full_model: LinearModel
    fold_sizes: tuple[int, ...]


def cross_fit(X, y, k: int = 5, cfg: TrainConfig | None = None) -> CrossFitResult:
    """Contiguous shuffle-free k-fold cross-fitting.

    Each example's probability comes from the model trained without its
    fold; a full model over all rows is returned for transfer use.
    """
    X = np.asarray(X, dtype=float)
    yv = np.asarray(y, dtype=float)
    n = X.shape[0]
    if n < k:
        raise ValueError(f"need at least k={k} examples, got {n}")
    bounds = fold_bounds(n, k)
    oof = np.empty(n)
    fold_models: list[LinearModel] = []
    for fi, (lo, hi) in enumerate(bounds):
        mask = np.ones(n, dtype=bool)
        mask[lo:hi] = False
        try:
            fm = train(X[mask], yv[mask], cfg)
        except Exception as exc:
            raise FoldError(fi, exc) from exc
        fm = LinearModel(
            weights=fm.weights,
            bias=fm.bias,
            feature_names=fm.feature_names,
            mean=fm.mean,
            std=fm.std,
            constant=fm.constant,
            train_meta={**fm.train_meta, "fold": fi},
        )
        fold_models.append(fm)
        oof[lo:hi] = predict_proba_matrix(fm, X[lo:hi])
    try:
        full = train(X, yv, cfg)
    except Exception as exc:
        raise FoldError(-1, exc) from exc
    full = LinearModel(
        weights=full.weights,
        bias=full.bias,
        feature_names=full.feature_names,
        mean=full.mean,
        std=full.std,
        constant=full.constant,
        train_meta={**full.train_meta, "fold": -1},
    )
    return CrossFitResult(
        out_of_fold_probs=tuple(float(p) for p in oof),
        fold_models=tuple(fold_models),
        full_model=full,
        fold_sizes=tuple(hi - lo for lo, hi in bounds),
    )


def save_model(m: LinearModel, path: Path | str) -> None:
    payload = {
        "version": ARTIFACT_VERSION,
        "feature_names": list(m.feature_names),
        "weights": list(m.weights),
        "bias": m.bias,
        "standardization": {
            "mean": list(m.mean),
            "std": list(m.std),
            "constant": list(m.constant),
        },
        "train_meta": m.train_meta,
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path: Path | str) -> LinearModel:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("version")
    if version != ARTIFACT_VERSION:
        raise ValueError(f"unsupported model artifact version {version!r}")
    std = payload["standardization"]
    return LinearModel(
        weights=tuple(float(w) for w in payload["weights"]),
        bias=float(payload["bias"]),
        feature_names=tuple(payload["feature_names"]),
        mean=tuple(float(v) for v in std["mean"]),
        std=tuple(float(v) for v in std["std"]),
        constant=tuple(bool(c) for c in std["constant"]),
        train_meta=dict(payload.get("train_meta", {})),
    )
