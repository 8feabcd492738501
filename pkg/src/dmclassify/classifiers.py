"""Two-class classifiers on embedded coordinates (Fisher LDA and
L2-penalized logistic regression) plus confusion-matrix metrics.

Label 1 is the positive (abnormal) class throughout.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatchError, LengthMismatchError, SingleClassError

LDA_SHRINKAGE = 1e-4
LOGISTIC_L2 = 1e-6


@dataclass(frozen=True)
class LdaModel:
    """Linear discriminant: score = w.x + b, label 1 iff score > 0."""

    weights: np.ndarray
    bias: float
    class_means: np.ndarray  # (2, k); row 0 = class 0
    pooled_covariance: np.ndarray  # (k, k), after shrinkage


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray
    bias: float
    converged: bool
    n_iter: int
    loss_history: tuple


@dataclass(frozen=True)
class Metrics:
    """Confusion counts and the usual ratios; undefined ratios stay None."""

    accuracy: Optional[float]
    precision: Optional[float]
    sensitivity: Optional[float]
    specificity: Optional[float]
    confusion: tuple  # (tp, fp, fn, tn)


def _check_two_classes(labels: np.ndarray) -> None:
    present = set(np.unique(labels).tolist())
    if present != {0, 1}:
        raise SingleClassError(f"need both classes present, got labels {sorted(present)}")


def lda_fit(coords: np.ndarray, labels: np.ndarray, shrinkage: float = LDA_SHRINKAGE) -> LdaModel:
    """Fisher discriminant with equal priors and a small diagonal shrinkage.

    The pooled within-class covariance gets
    (1 - gamma) * cov + gamma * (trace/k) * I, which only has to guard
    rank deficiency when k approaches the training count. The bias puts
    the boundary through the midpoint of the projected class means.
    """
    coords = np.asarray(coords, dtype=np.float64)
    labels = np.asarray(labels)
    _check_two_classes(labels)
    k = coords.shape[1]
    mu0 = coords[labels == 0].mean(axis=0)
    mu1 = coords[labels == 1].mean(axis=0)
    scatter = np.zeros((k, k))
    for mu, cls in ((mu0, 0), (mu1, 1)):
        d = coords[labels == cls] - mu
        scatter += d.T @ d
    denom = max(coords.shape[0] - 2, 1)
    pooled = scatter / denom
    trace = float(np.trace(pooled))
    if trace <= 0:
        # Zero within-class scatter: fall back to the Euclidean direction.
        pooled = np.eye(k)
        trace = float(k)
    sigma = (1.0 - shrinkage) * pooled + shrinkage * (trace / k) * np.eye(k)
    weights = np.linalg.solve(sigma, mu1 - mu0)
    bias = -float(weights @ (mu0 + mu1)) / 2.0
    return LdaModel(
        weights=weights,
        bias=bias,
        class_means=np.stack([mu0, mu1]),
        pooled_covariance=sigma,
    )


def lda_scores(model: LdaModel, coords: np.ndarray) -> np.ndarray:
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if coords.shape[1] != model.weights.shape[0]:
        raise DimensionMismatchError(
            f"coords width {coords.shape[1]} != model dimension {model.weights.shape[0]}"
        )
    return coords @ model.weights + model.bias


def lda_predict(model: LdaModel, coords: np.ndarray):
    """Labels and raw scores; a score of exactly 0 goes to class 0."""
    scores = lda_scores(model, coords)
    return (scores > 0).astype(np.int64), scores


def _nll(z: np.ndarray, y: np.ndarray, w: np.ndarray, l2: float) -> float:
    # log(1 + e^z) - y*z, computed stably, plus the ridge on the weights.
    return float(np.sum(np.logaddexp(0.0, z) - y * z) + 0.5 * l2 * (w @ w))


def logistic_fit(
    coords: np.ndarray,
    labels: np.ndarray,
    max_iter: int = 500,
    tol: float = 1e-8,
    l2: float = LOGISTIC_L2,
) -> LogisticModel:
    """Newton/IRLS fit of the penalized Bernoulli log-likelihood.

    The ridge applies to the weights only, never the bias. Each Newton
    step is halved until the penalized loss does not increase, so the
    recorded loss history is nonincreasing. Convergence means the
    gradient's max-norm fell below ``tol``; the flag is reported either
    way.
    """
    x = np.asarray(coords, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    _check_two_classes(np.asarray(labels))
    n, k = x.shape
    w = np.zeros(k)
    b = 0.0
    losses = [_nll(x @ w + b, y, w, l2)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        z = x @ w + b
        p = 1.0 / (1.0 + np.exp(-z))
        grad_w = x.T @ (p - y) + l2 * w
        grad_b = float(np.sum(p - y))
        grad_inf = max(float(np.max(np.abs(grad_w))) if k else 0.0, abs(grad_b))
        if grad_inf < tol:
            converged = True
            break
        r = p * (1.0 - p)
        h = np.empty((k + 1, k + 1))
        xr = x * r[:, None]
        h[:k, :k] = x.T @ xr + l2 * np.eye(k)
        h[:k, k] = xr.sum(axis=0)
        h[k, :k] = h[:k, k]
        h[k, k] = float(r.sum())
        try:
            step = np.linalg.solve(h, -np.concatenate([grad_w, [grad_b]]))
        except np.linalg.LinAlgError:
            break
        scale = 1.0
        for _ in range(30):
            w_new = w + scale * step[:k]
            b_new = b + scale * float(step[k])
            loss_new = _nll(x @ w_new + b_new, y, w_new, l2)
            if loss_new <= losses[-1]:
                break
            scale /= 2.0
        else:
            break
        w, b = w_new, b_new
        losses.append(loss_new)
    return LogisticModel(
        weights=w, bias=b, converged=converged, n_iter=it, loss_history=tuple(losses)
    )


def logistic_predict(model: LogisticModel, coords: np.ndarray):
    coords = np.atleast_2d(np.asarray(coords, dtype=np.float64))
    if coords.shape[1] != model.weights.shape[0]:
        raise DimensionMismatchError(
            f"coords width {coords.shape[1]} != model dimension {model.weights.shape[0]}"
        )
    scores = coords @ model.weights + model.bias
    return (scores > 0).astype(np.int64), scores


def compute_metrics(predicted, truth) -> Metrics:
    """Accuracy/precision/sensitivity/specificity from paired label lists."""
    pred = np.asarray(predicted, dtype=np.int64)
    true = np.asarray(truth, dtype=np.int64)
    if pred.shape != true.shape or pred.size == 0:
        raise LengthMismatchError(
            f"predicted ({pred.size}) and truth ({true.size}) must be equal-length and nonempty"
        )
    tp = int(np.sum((pred == 1) & (true == 1)))
    fp = int(np.sum((pred == 1) & (true == 0)))
    fn = int(np.sum((pred == 0) & (true == 1)))
    tn = int(np.sum((pred == 0) & (true == 0)))

    def ratio(num, den):
        return num / den if den > 0 else None

    return Metrics(
        accuracy=ratio(tp + tn, tp + fp + fn + tn),
        precision=ratio(tp, tp + fp),
        sensitivity=ratio(tp, tp + fn),
        specificity=ratio(tn, tn + fp),
        confusion=(tp, fp, fn, tn),
    )


def save_model_json(model, path) -> None:
    """Audit/persistence export; floats keep full round-trip precision."""
    if isinstance(model, LdaModel):
        payload = {
            "kind": "lda",
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "class_means": model.class_means.tolist(),
        }
    elif isinstance(model, LogisticModel):
        payload = {
            "kind": "logistic",
            "weights": model.weights.tolist(),
            "bias": model.bias,
            "converged": model.converged,
        }
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model_json(path):
    with open(path) as fh:
        payload = json.load(fh)
    kind = payload.get("kind")
    if kind == "lda":
        means = np.asarray(payload["class_means"], dtype=np.float64)
        return LdaModel(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            bias=float(payload["bias"]),
            class_means=means,
            pooled_covariance=np.eye(len(payload["weights"])),
        )
    if kind == "logistic":
        return LogisticModel(
            weights=np.asarray(payload["weights"], dtype=np.float64),
            bias=float(payload["bias"]),
            converged=bool(payload.get("converged", True)),
            n_iter=0,
            loss_history=(),
        )
    raise ValueError(f"{path}: unknown model kind {kind!r}")
