"""Entropy-regularised Cauchy-Schwarz fuzzy clustering.

The objective for soft memberships ``M`` (N x K, rows on the probability
simplex) and a Gaussian affinity ``G`` of width ``sigma * sqrt(2)`` is::

    J(M) = A(M) / sqrt(prod_k c_k(M)) - mu * sum_ik m_ik log m_ik

    A(M)   = 1/2 * sum_ij (1 - m_i . m_j) G_ij
    c_k(M) = sum_ij m_ik m_jk G_ij

It is minimised by projected stochastic gradient descent over row batches,
halving the step until the full objective does not increase.
Memberships are kept soft throughout; use :func:`hard_assign` to discretise.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import pdist, squareform

from .errors import (
    DegenerateClusterError,
    DomainError,
    OptimizerDivergenceError,
    ParseError,
)

# minimum soft mass a cluster may keep before the run is declared degenerate
_MASS_FLOOR = 1e-12
# a step shrunk this many times without improving the cost is skipped
_MAX_HALVINGS = 30


@dataclass
class FeatureMatrix:
    """Standardised per-pixel features with the record needed to undo the scaling."""

    values: np.ndarray
    names: tuple
    offset: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.names):
            raise DomainError("feature values must be N x D with one name per column")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("features contain NaN or Inf")

    @classmethod
    def from_raw(cls, raw, names, passthrough=()):
        """Standardise columns to zero mean / unit SD.

        Columns listed in ``passthrough`` (and constant columns) are left as is.
        """
        raw = np.asarray(raw, dtype=float)
        offset = raw.mean(axis=0)
        scale = raw.std(axis=0)
        for j, name in enumerate(names):
            if name in passthrough or scale[j] == 0:
                offset[j], scale[j] = 0.0, 1.0
        return cls((raw - offset) / scale, tuple(names), offset, scale)

    def inverse(self):
        return self.values * self.scale + self.offset

    @property
    def n(self):
        return self.values.shape[0]


@dataclass
class ClusterConfig:
    n_clusters: int = 3
    entropy_weight: float = 0.0
    kernel_width: float | None = None
    max_iterations: int = 200
    step_size: float = 0.05
    step_decay: float = 0.01
    batch_size: int | None = 256
    tol: float = 1e-7
    patience: int = 20
    entropy_floor: float = 1e-8
    dirichlet_alpha: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_clusters < 1:
            raise DomainError("n_clusters must be >= 1")
        if self.entropy_weight < 0:
            raise DomainError("entropy_weight must be >= 0")
        if self.kernel_width is not None and self.kernel_width <= 0:
            raise DomainError("kernel_width must be > 0")
        if self.max_iterations < 0:
            raise DomainError("max_iterations must be >= 0")
        if self.step_size <= 0 or self.step_decay < 0:
            raise DomainError("step_size must be > 0 and step_decay >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")


@dataclass
class ClusterResult:
    memberships: np.ndarray
    cost_trace: np.ndarray
    kernel_width: float
    n_iterations: int
    snapshots: dict = field(default_factory=dict)


def _values(features):
    return features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)


def gaussian_affinity(x_i, x_j, sigma):
    """Gaussian affinity of width ``sigma * sqrt(2)``: ``exp(-|x_i - x_j|^2 / (4 sigma^2))``."""
    x_i = np.asarray(x_i, dtype=float)
    x_j = np.asarray(x_j, dtype=float)
    if x_i.shape != x_j.shape:
        raise DomainError(f"dimension mismatch {x_i.shape} vs {x_j.shape}")
    if sigma <= 0:
        raise DomainError("sigma must be > 0")
    d2 = float(np.sum((x_i - x_j) ** 2))
    return float(np.exp(-d2 / (2.0 * (sigma * np.sqrt(2.0)) ** 2)))


def affinity_matrix(x, sigma):
    """Dense N x N matrix of :func:`gaussian_affinity` values."""
    x = _values(x)
    if sigma <= 0:
        raise DomainError("sigma must be > 0")
    d2 = squareform(pdist(x, "sqeuclidean"))
    return np.exp(-d2 / (4.0 * sigma * sigma))


def median_width(x, max_samples=1000, seed=0):
    """Median pairwise Euclidean distance over (a seeded subsample of) the rows."""
    x = _values(x)
    if x.shape[0] > max_samples:
        idx = np.random.default_rng(seed).choice(x.shape[0], max_samples, replace=False)
        x = x[np.sort(idx)]
    d = pdist(x)
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def project_simplex(v):
    """Euclidean projection of each row of ``v`` onto the probability simplex.

    Rows that are already feasible (non-negative, summing to one within 1e-12)
    are returned bit-for-bit unchanged.
    """
    v = np.array(v, dtype=float, copy=True)
    squeeze = v.ndim == 1
    v = np.atleast_2d(v)
    feasible = np.all(v >= 0, axis=1) & (np.abs(v.sum(axis=1) - 1.0) <= 1e-12)
    todo = ~feasible
    if np.any(todo):
        w = v[todo]
        k = w.shape[1]
        u = -np.sort(-w, axis=1)
        css = np.cumsum(u, axis=1) - 1.0
        ind = np.arange(1, k + 1)
        cond = u - css / ind > 0
        rho = k - 1 - np.argmax(cond[:, ::-1], axis=1)
        theta = css[np.arange(w.shape[0]), rho] / (rho + 1)
        w = np.maximum(w - theta[:, None], 0.0)
        # one renormalisation pass absorbs rounding in theta
        w /= w.sum(axis=1, keepdims=True)
        v[todo] = w
    return v[0] if squeeze else v


def _check_memberships(m, n):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != n:
        raise DomainError(f"membership matrix must have {n} rows")
    return m


def _entropy(m):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(m > 0, m * np.log(m), 0.0)
    return -float(t.sum())


def _ratio_terms(m, g, gm=None):
    """Numerator A, per-cluster c_k and denominator sqrt(prod c_k)."""
    if gm is None:
        gm = g @ m
    c = np.einsum("ik,ik->k", m, gm)
    a = 0.5 * (g.sum() - c.sum())
    dead = np.flatnonzero(m.sum(axis=0) <= _MASS_FLOOR)
    if dead.size or np.any(c <= 0):
        raise DegenerateClusterError(dead if dead.size else np.flatnonzero(c <= 0))
    denom = float(np.exp(0.5 * np.sum(np.log(c))))
    return a, c, denom, gm


def _config_affinity(features, config, affinity):
    if affinity is not None:
        return np.asarray(affinity, dtype=float)
    sigma = config.kernel_width if config.kernel_width is not None else median_width(features, seed=config.seed)
    return affinity_matrix(features, sigma)


def cs_cost(memberships, features, config, affinity=None):
    """Regularised Cauchy-Schwarz objective ``J(M)``.

    ``affinity`` may carry a precomputed :func:`affinity_matrix` to avoid
    rebuilding it; ``features`` is then only used for its row count.
    """
    x = _values(features)
    n = x.shape[0]
    if n < 2:
        raise DomainError("need at least two points")
    m = _check_memberships(memberships, n)
    g = _config_affinity(x, config, affinity)
    a, _, denom, _ = _ratio_terms(m, g)
    return a / denom + config.entropy_weight * _entropy(m)


def _gradient_rows(m_rows, gm_rows, a, c, denom, mu, floor):
    ratio = -(gm_rows / denom) * (1.0 + a / c)
    if mu:
        ratio = ratio - mu * (np.log(np.maximum(m_rows, floor)) + 1.0)
    return ratio


def cs_gradient(memberships, features, config, affinity=None):
    """Analytic partial derivatives ``dJ/dm_ik`` (N x K).

    These are unconstrained partials; the optimiser only uses their component
    tangent to the simplex (see :func:`simplex_tangent`). The entropy part uses
    ``log(max(m_ik, entropy_floor))``.
    """
    x = _values(features)
    n = x.shape[0]
    if n < 2:
        raise DomainError("need at least two points")
    m = _check_memberships(memberships, n)
    g = _config_affinity(x, config, affinity)
    a, c, denom, gm = _ratio_terms(m, g)
    return _gradient_rows(m, gm, a, c, denom, config.entropy_weight, config.entropy_floor)


def simplex_tangent(grad):
    """Component of a per-row gradient lying in the simplex's tangent space."""
    grad = np.asarray(grad, dtype=float)
    return grad - grad.mean(axis=-1, keepdims=True)


def init_memberships(n, k, alpha=5.0, seed=0):
    """Seeded symmetric-Dirichlet initial memberships."""
    rng = np.random.default_rng(seed)
    return project_simplex(rng.dirichlet(np.full(k, alpha), size=n))


def cluster(features, config, affinity=None, snapshot_every=None, initial=None):
    """Minimise the regularised CS objective by projected stochastic gradient descent.

    Parameters
    ----------
    features : FeatureMatrix or array (N x D)
    config : ClusterConfig
    affinity : array, optional
        Precomputed affinity matrix (must match ``config.kernel_width``).
    snapshot_every : int, optional
        Store copies of the iterate every this many iterations (and at 0).
        Disables early stopping so the full iteration budget is traced.
    initial : array, optional
        Starting memberships; defaults to :func:`init_memberships`.

    Returns
    -------
    ClusterResult
        ``cost_trace[t]`` is the full objective at iterate ``t`` (0 = start).
    """
    x = _values(features)
    n = x.shape[0]
    k = config.n_clusters
    if n < max(k, 2):
        raise DomainError(f"need N >= K (N={n}, K={k})")
    if affinity is None:
        sigma = config.kernel_width if config.kernel_width is not None else median_width(x, seed=config.seed)
        g = affinity_matrix(x, sigma)
    else:
        sigma = config.kernel_width
        g = np.asarray(affinity, dtype=float)
    rng = np.random.default_rng(config.seed)
    if initial is None:
        m = project_simplex(rng.dirichlet(np.full(k, config.dirichlet_alpha), size=n))
    else:
        m = project_simplex(_check_memberships(initial, n))
    mu = config.entropy_weight
    batch = n if config.batch_size is None else min(config.batch_size, n)
    g_total = g.sum()

    def objective(m, gm):
        c = np.einsum("ik,ik->k", m, gm)
        dead = np.flatnonzero(m.sum(axis=0) <= _MASS_FLOOR)
        if dead.size or np.any(c <= 0):
            raise DegenerateClusterError(dead if dead.size else np.flatnonzero(c <= 0))
        a = 0.5 * (g_total - c.sum())
        denom = np.exp(0.5 * np.sum(np.log(c)))
        return a, c, denom, a / denom + mu * _entropy(m)

    gm = g @ m
    a, c, denom, cost = objective(m, gm)
    if not np.isfinite(cost):
        raise OptimizerDivergenceError(0)
    trace = [cost]
    snapshots = {0: m.copy()} if snapshot_every else {}

    # Step sizes are expressed in membership units: gradients are divided by the
    # typical magnitude of the ratio gradient at the start so that eta does not
    # depend on N, K or the affinity scale.
    g0 = _gradient_rows(m, gm, a, c, denom, 0.0, config.entropy_floor)
    grad_scale = float(np.mean(np.abs(simplex_tangent(g0)))) or 1.0

    t = 0
    for t in range(1, config.max_iterations + 1):
        rows = np.sort(rng.choice(n, size=batch, replace=False)) if batch < n else np.arange(n)
        grad = _gradient_rows(m[rows], gm[rows], a, c, denom, mu, config.entropy_floor)
        step = simplex_tangent(grad) / grad_scale
        eta = config.step_size / (1.0 + (t - 1) * config.step_decay)
        # Backtrack until the full objective does not increase.  Without this a
        # step taken by every row at once can jump past the barrier that keeps
        # cluster masses positive and drain clusters in a couple of iterations.
        for _ in range(_MAX_HALVINGS):
            new_rows = project_simplex(m[rows] - eta * step)
            delta = new_rows - m[rows]
            if batch < n:
                # G is symmetric: row slices are contiguous and cheaper than column slices
                gm_new = gm + (delta.T @ g[rows]).T
            else:
                gm_new = g @ (m + delta)
            m_new = m.copy()
            m_new[rows] = new_rows
            try:
                trial = objective(m_new, gm_new)
            except DegenerateClusterError:
                trial = None
            if trial is not None and not np.isfinite(trial[3]):
                raise OptimizerDivergenceError(t)
            if trial is not None and trial[3] <= cost:
                m, gm = m_new, gm_new
                a, c, denom, cost = trial
                break
            eta *= 0.5
        trace.append(cost)
        if snapshot_every and t % snapshot_every == 0:
            snapshots[t] = m.copy()
        p = config.patience
        if not snapshot_every and config.tol > 0 and t >= p:
            ref = trace[-1 - p]
            if abs(cost - ref) <= config.tol * max(abs(ref), np.finfo(float).tiny):
                break
    return ClusterResult(
        memberships=m,
        cost_trace=np.asarray(trace),
        kernel_width=sigma,
        n_iterations=t,
        snapshots=snapshots,
    )


def hard_assign(memberships):
    """Index of the largest membership per row (lowest index on ties)."""
    return np.argmax(np.asarray(memberships), axis=1)


def mean_row_entropy(memberships):
    m = np.asarray(memberships, dtype=float)
    return _entropy(m) / m.shape[0]


def write_memberships(memberships, path):
    m = np.asarray(memberships, dtype=float)
    lines = [f"{m.shape[0]} {m.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in m]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_memberships(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].strip():
        raise ParseError("missing header", line=1)
    try:
        n, k = (int(v) for v in lines[0].split())
    except ValueError:
        raise ParseError(f"header must be 'N K', got {lines[0]!r}", line=1) from None
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise ParseError(f"expected {n} rows, found {len(body)}", line=len(lines) + 1)
    out = np.empty((n, k))
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != k:
            raise ParseError(f"expected {k} values, found {len(parts)}", line=i + 2)
        out[i] = [float(p) for p in parts]
    return out
