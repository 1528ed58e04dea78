"""Kernel ridge regression in dual form and membership-weighted fusion of cluster models."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist

from .errors import DomainError, EmptyTrainingError, IllConditionedError, ParseError

KERNELS = ("gaussian", "linear")


@dataclass
class TrainingSet:
    features: np.ndarray
    targets: np.ndarray
    indices: np.ndarray | None = None
    names: tuple = ()

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float))
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.features.shape[0] != self.targets.shape[0]:
            raise DomainError("features and targets disagree on sample count")
        if not (np.all(np.isfinite(self.features)) and np.all(np.isfinite(self.targets))):
            raise DomainError("training data contain NaN or Inf")
        if self.indices is None:
            self.indices = np.arange(self.targets.shape[0])
        self.indices = np.asarray(self.indices)

    def __len__(self):
        return self.targets.shape[0]

    def subset(self, rows):
        rows = np.asarray(rows)
        if rows.dtype != bool:
            rows = rows.astype(np.intp)
        return TrainingSet(self.features[rows], self.targets[rows], self.indices[rows], self.names)


def augment(features):
    """Append a constant column of ones."""
    x = np.asarray(features, dtype=float)
    if x.ndim == 1:
        return np.append(x, 1.0)
    return np.hstack([x, np.ones((x.shape[0], 1))])


def kernel_matrix(a, b, width=1.0, kernel="gaussian"):
    """``k(a_i, b_j)`` for all pairs; Gaussian ``exp(-|a-b|^2 / (2 width^2))`` or dot product."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    if kernel == "gaussian":
        return np.exp(-cdist(a, b, "sqeuclidean") / (2.0 * width * width))
    if kernel == "linear":
        return a @ b.T
    raise DomainError(f"unknown kernel {kernel!r}; choose from {KERNELS}")


def solve_dual(gram, targets, ridge_weight):
    """Solve ``(ridge_weight * I + gram) alpha = targets`` by Cholesky."""
    gram = np.asarray(gram, dtype=float)
    y = np.asarray(targets, dtype=float)
    system = gram + ridge_weight * np.eye(gram.shape[0])
    try:
        factor = linalg.cho_factor(system, lower=True, check_finite=False)
        alpha = linalg.cho_solve(factor, y, check_finite=False)
    except linalg.LinAlgError:
        raise IllConditionedError(
            "kernel system is singular or indefinite; use ridge_weight > 0"
        ) from None
    resid = np.linalg.norm(system @ alpha - y)
    if not np.isfinite(resid) or resid > 1e-6 * (1.0 + np.linalg.norm(y)):
        raise IllConditionedError("kernel system too ill-conditioned to solve accurately; use ridge_weight > 0")
    return alpha


def primal_weights(features, targets, ridge_weight):
    """Primal ridge weights ``(mu I_D + X^T X)^-1 X^T y`` for an explicit feature map."""
    x = np.atleast_2d(np.asarray(features, dtype=float))
    y = np.asarray(targets, dtype=float)
    phi = x.T
    return np.linalg.solve(ridge_weight * np.eye(phi.shape[0]) + phi @ phi.T, phi @ y)


@dataclass
class KernelModel:
    """A fitted kernel ridge regressor.

    ``training_inputs`` are standardised and augmented; ``dual_coefficients``
    are in standardised target units.
    """

    training_inputs: np.ndarray
    dual_coefficients: np.ndarray
    kernel_width: float
    ridge_weight: float
    feature_offset: np.ndarray
    feature_scale: np.ndarray
    target_mean: float
    target_scale: float
    kernel: str = "gaussian"

    @property
    def n_features(self):
        return self.feature_offset.shape[0]

    def transform(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_features:
            raise DomainError(f"expected {self.n_features} features, got {x.shape[-1]}")
        return augment((x - self.feature_offset) / self.feature_scale)

    def predict(self, x):
        """Predict for one feature vector (returns float) or a matrix of rows."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        z = np.atleast_2d(self.transform(x))
        k = kernel_matrix(z, self.training_inputs, self.kernel_width, self.kernel)
        y = k @ self.dual_coefficients * self.target_scale + self.target_mean
        return float(y[0]) if single else y


def standardisation(x):
    offset = x.mean(axis=0)
    scale = x.std(axis=0)
    const = scale == 0
    # constant columns are passed through untouched
    offset[const] = 0.0
    scale[const] = 1.0
    return offset, scale


def fit(train, kernel_width=None, ridge_weight=0.0, kernel="gaussian", standardize=True):
    """Fit kernel ridge regression in closed dual form.

    Parameters
    ----------
    train : TrainingSet
    kernel_width : float, optional
        Gaussian width; defaults to the median pairwise distance of the
        standardised training inputs.
    ridge_weight : float
        Ridge penalty added to the Gram diagonal.
    kernel : {"gaussian", "linear"}
    standardize : bool
        Standardise features and targets on the training set.

    Returns
    -------
    KernelModel
    """
    if len(train) == 0:
        raise EmptyTrainingError("cannot fit a model on zero training samples")
    if ridge_weight < 0:
        raise DomainError("ridge_weight must be >= 0")
    if kernel not in KERNELS:
        raise DomainError(f"unknown kernel {kernel!r}; choose from {KERNELS}")
    x = train.features
    y = train.targets
    if standardize:
        offset, scale = standardisation(x.copy())
        t_mean = float(y.mean())
        t_scale = float(y.std()) or 1.0
    else:
        offset, scale = np.zeros(x.shape[1]), np.ones(x.shape[1])
        t_mean, t_scale = 0.0, 1.0
    z = augment((x - offset) / scale)
    if kernel_width is None:
        kernel_width = median_distance(z)
    if kernel_width <= 0:
        raise DomainError("kernel_width must be > 0")
    gram = kernel_matrix(z, z, kernel_width, kernel)
    alpha = solve_dual(gram, (y - t_mean) / t_scale, ridge_weight)
    return KernelModel(z, alpha, float(kernel_width), float(ridge_weight), offset, scale, t_mean, t_scale, kernel)


def median_distance(z):
    d = pdist(z)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


@dataclass
class Ensemble:
    """One model slot per cluster; ``None`` marks a vacant cluster."""

    models: list
    counts: np.ndarray = field(default=None)

    @property
    def vacancy(self):
        return np.array([m is None for m in self.models])

    def predict(self, x):
        """N x K matrix of per-cluster predictions; vacant columns are NaN."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        out = np.full((x.shape[0], len(self.models)), np.nan)
        for k, model in enumerate(self.models):
            if model is not None:
                out[:, k] = model.predict(x)
        return out


def fit_ensemble(train, labels, n_clusters, kernel_width=None, ridge_weight=0.0, kernel="gaussian"):
    """Fit one model per cluster on the training samples hard-assigned to it."""
    labels = np.asarray(labels)
    if labels.shape[0] != len(train):
        raise DomainError("need one label per training sample")
    models = []
    counts = np.zeros(n_clusters, dtype=int)
    for k in range(n_clusters):
        rows = np.flatnonzero(labels == k)
        counts[k] = rows.size
        models.append(fit(train.subset(rows), kernel_width, ridge_weight, kernel) if rows.size else None)
    if all(m is None for m in models):
        raise EmptyTrainingError("every cluster is vacant")
    return Ensemble(models, counts)


def fuse(memberships, predictions, vacancy=None):
    """Membership-weighted combination of cluster predictions.

    Works on one pixel (1-D inputs) or many (N x K). Memberships are
    renormalised over non-vacant clusters; a pixel whose membership lies
    entirely on vacant clusters falls back to equal weights over the rest.
    """
    m = np.asarray(memberships, dtype=float)
    p = np.asarray(predictions, dtype=float)
    single = m.ndim == 1
    m = np.atleast_2d(m)
    p = np.atleast_2d(p)
    vac = np.zeros(m.shape[1], dtype=bool) if vacancy is None else np.asarray(vacancy, dtype=bool)
    if vac.all():
        raise EmptyTrainingError("every cluster is vacant")
    w = np.where(vac, 0.0, m)
    total = w.sum(axis=1, keepdims=True)
    fallback = np.where(vac, 0.0, 1.0) / (~vac).sum()
    w = np.where(total > 0, w / np.where(total > 0, total, 1.0), fallback)
    out = np.sum(w * np.where(vac, 0.0, p), axis=1)
    return float(out[0]) if single else out


# --------------------------------------------------------------------------- serialisation


def _floats(values):
    return " ".join(repr(float(v)) for v in np.ravel(values))


def write_models(ensemble, path):
    """Text dump of an ensemble, one block per cluster; exact round trip."""
    lines = [f"ensemble {len(ensemble.models)}"]
    for k, m in enumerate(ensemble.models):
        if m is None:
            lines.append(f"model {k} vacant")
            continue
        rows, cols = m.training_inputs.shape
        lines += [
            f"model {k} {m.kernel} {rows} {cols}",
            f"kernel_width {m.kernel_width!r}",
            f"ridge_weight {m.ridge_weight!r}",
            f"target {m.target_mean!r} {m.target_scale!r}",
            f"feature_offset {_floats(m.feature_offset)}",
            f"feature_scale {_floats(m.feature_scale)}",
            f"dual {_floats(m.dual_coefficients)}",
        ]
        lines += [_floats(row) for row in m.training_inputs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_models(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    pos = 0

    def take(prefix):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(f"unexpected end of file, wanted {prefix!r}", line=pos + 1)
        parts = lines[pos].split()
        if not parts or parts[0] != prefix:
            raise ParseError(f"expected {prefix!r}", line=pos + 1)
        pos += 1
        return parts[1:]

    try:
        (n,) = take("ensemble")
        models = []
        for _ in range(int(n)):
            head = take("model")
            if head[1] == "vacant":
                models.append(None)
                continue
            kernel, rows, cols = head[1], int(head[2]), int(head[3])
            width = float(take("kernel_width")[0])
            ridge = float(take("ridge_weight")[0])
            t_mean, t_scale = (float(v) for v in take("target"))
            offset = np.array(take("feature_offset"), dtype=float)
            scale = np.array(take("feature_scale"), dtype=float)
            dual = np.array(take("dual"), dtype=float)
            inputs = np.array([lines[pos + i].split() for i in range(rows)], dtype=float).reshape(rows, cols)
            pos += rows
            models.append(KernelModel(inputs, dual, width, ridge, offset, scale, t_mean, t_scale, kernel))
    except (ValueError, IndexError) as exc:
        raise ParseError(str(exc), line=pos + 1) from None
    counts = np.array([0 if m is None else m.training_inputs.shape[0] for m in models])
    return Ensemble(models, counts)
