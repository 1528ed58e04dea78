"""Per-day downscaling: features, clustering, cross-validated model selection,
per-cluster kernel regression and membership-weighted fusion."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import clustering
from .clustering import ClusterConfig, FeatureMatrix, hard_assign
from .errors import DomainError, SelectionError, SRRMError, StageError
from .grid import N_LANDCOVER, add_observation_noise, aggregate, upsample
from .regression import TrainingSet, fit_ensemble, fuse

log = logging.getLogger(__name__)

CLUSTER_FEATURES = ("LST", "PPT", "LAI", "lc_baresoil", "lc_corn", "lc_cotton", "x_scaled", "y_scaled")
REGRESSION_FEATURES = ("LST", "PPT", "LAI", "lc_baresoil", "lc_corn", "lc_cotton", "TB_coarse")
# left unstandardised in the clustering features
_PASSTHROUGH = ("lc_baresoil", "lc_corn", "lc_cotton", "x_scaled", "y_scaled")


@dataclass
class PipelineConfig:
    """Settings of the per-day downscaling run.

    Entropy weights are given relative to the magnitude of the clustering
    ratio gradient at the seeded start point unless ``entropy_weight_units``
    is ``"absolute"``; the ratio term's scale changes by orders of magnitude
    with N and K, so absolute values do not transfer between scenes.
    """

    scale_factor: int = 10
    training_fraction: float = 0.10
    candidate_clusters: tuple = (2, 3, 4)
    candidate_entropy_weights: tuple = (0.0, 3.0)
    candidate_ridge_weights: tuple = (1e-3, 1e-2, 1e-1, 1.0)
    entropy_weight_units: str = "relative"
    cv_folds: int = 5
    cadence: int = 3
    regression_kernel_width: float | None = None
    cluster: ClusterConfig = field(default_factory=ClusterConfig)
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.training_fraction <= 1:
            raise DomainError("training_fraction must be in (0, 1]")
        for name in ("candidate_clusters", "candidate_entropy_weights", "candidate_ridge_weights"):
            values = tuple(getattr(self, name))
            if not values:
                raise DomainError(f"{name} must be non-empty")
            setattr(self, name, values)
        if min(self.candidate_clusters) < 1:
            raise DomainError("cluster counts must be >= 1")
        if min(self.candidate_entropy_weights) < 0 or min(self.candidate_ridge_weights) < 0:
            raise DomainError("entropy and ridge weights must be >= 0")
        if self.entropy_weight_units not in ("relative", "absolute"):
            raise DomainError("entropy_weight_units must be 'relative' or 'absolute'")
        if self.cv_folds < 2:
            raise DomainError("cv_folds must be >= 2")
        if self.cadence < 1 or self.scale_factor < 1:
            raise DomainError("cadence and scale_factor must be >= 1")


@dataclass
class DayInputs:
    """Everything one day's run needs, assembled from the grids."""

    cluster_features: FeatureMatrix
    regression_features: np.ndarray
    shape: tuple
    train_index: np.ndarray
    train_targets: np.ndarray

    def training_set(self):
        return TrainingSet(
            self.regression_features[self.train_index], self.train_targets, self.train_index, REGRESSION_FEATURES
        )


@dataclass
class Selection:
    n_clusters: int
    entropy_weight: float
    ridge_weight: float
    score: float
    scores: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)


@dataclass
class DownscaleResult:
    day: int
    estimate: np.ndarray
    n_clusters: int
    entropy_weight: float
    ridge_weight: float
    memberships: np.ndarray
    training_mask: np.ndarray
    cost_trace: np.ndarray
    cluster_predictions: np.ndarray
    cv_score: float = float("nan")
    absolute_entropy_weight: float = 0.0


@dataclass
class SeasonResult:
    results: list
    failures: dict

    @property
    def days(self):
        return [r.day for r in self.results]


def _day_seeds(seed, day):
    """Independent integer seeds for the training mask, clustering and CV folds."""
    ss = np.random.SeedSequence([int(seed), int(day)])
    return [int(s.generate_state(1)[0]) for s in ss.spawn(3)]


def one_hot_landcover(landcover):
    return np.eye(N_LANDCOVER)[np.asarray(landcover).ravel()]


def scaled_coordinates(rows, cols):
    """Column and row index of every pixel scaled to [0, 1] (row-major order)."""
    rr, cc = np.mgrid[0:rows, 0:cols]
    x = cc.ravel() / (cols - 1) if cols > 1 else np.zeros(rows * cols)
    y = rr.ravel() / (rows - 1) if rows > 1 else np.zeros(rows * cols)
    return x, y


def assemble_features(fine, coarse):
    """Clustering FeatureMatrix and raw regression features (N x 7) for every fine pixel."""
    fine.require("LST", "PPT", "LAI")
    coarse.require("TB")
    if fine.landcover is None:
        raise DomainError("fine grid has no landcover")
    s = getattr(coarse, "scale_factor", None) or fine.rows // coarse.rows
    if coarse.rows * s != fine.rows or coarse.cols * s != fine.cols:
        raise DomainError(f"coarse grid {coarse.shape} does not tile fine grid {fine.shape}")
    aux = np.column_stack([fine["LST"].ravel(), fine["PPT"].ravel(), fine["LAI"].ravel()])
    lc = one_hot_landcover(fine.landcover)
    x, y = scaled_coordinates(fine.rows, fine.cols)
    features = FeatureMatrix.from_raw(np.column_stack([aux, lc, x, y]), CLUSTER_FEATURES, passthrough=_PASSTHROUGH)
    tb_coarse = upsample(coarse["TB"], s).ravel()
    regression = np.column_stack([aux, lc, tb_coarse])
    return features, regression


def training_mask(shape, fraction, seed):
    n = shape[0] * shape[1]
    m = max(1, int(round(fraction * n)))
    rng = np.random.default_rng(seed)
    mask = np.zeros(n, dtype=bool)
    mask[rng.choice(n, size=m, replace=False)] = True
    return mask.reshape(shape)


def prepare_inputs(fine, coarse, config, day=0):
    """Assemble features and draw the day's training pixels.

    Only the TB values of ``fine`` at the training pixels are read.
    """
    fine.require("TB")
    features, regression = assemble_features(fine, coarse)
    mask_seed, _, _ = _day_seeds(config.seed, day)
    mask = training_mask(fine.shape, config.training_fraction, mask_seed)
    idx = np.flatnonzero(mask.ravel())
    return DayInputs(features, regression, fine.shape, idx, fine["TB"].ravel()[idx])


class _Clusterings:
    """Lazily computed clustering runs sharing one affinity matrix."""

    def __init__(self, inputs, config, day):
        self.inputs = inputs
        self.config = config
        _, self.seed, _ = _day_seeds(config.seed, day)
        base = config.cluster
        x = inputs.cluster_features
        self.width = base.kernel_width or clustering.median_width(x, seed=self.seed)
        self._affinity = None
        self._runs = {}
        self._refs = {}

    @property
    def affinity(self):
        if self._affinity is None:
            self._affinity = clustering.affinity_matrix(self.inputs.cluster_features, self.width)
        return self._affinity

    def cluster_config(self, k, mu_abs, **overrides):
        return replace(
            self.config.cluster,
            n_clusters=k,
            entropy_weight=mu_abs,
            kernel_width=self.width,
            seed=self.seed,
            **overrides,
        )

    def absolute_weight(self, k, mu):
        if self.config.entropy_weight_units == "absolute" or mu == 0:
            return float(mu)
        if k not in self._refs:
            cfg = self.cluster_config(k, 0.0)
            m0 = clustering.init_memberships(self.inputs.cluster_features.n, k, cfg.dirichlet_alpha, cfg.seed)
            g0 = clustering.cs_gradient(m0, self.inputs.cluster_features, cfg, affinity=self.affinity)
            self._refs[k] = float(np.mean(np.abs(clustering.simplex_tangent(g0))))
        return mu * self._refs[k]

    def get(self, k, mu):
        key = (k, mu)
        if key not in self._runs:
            try:
                cfg = self.cluster_config(k, self.absolute_weight(k, mu))
                self._runs[key] = clustering.cluster(self.inputs.cluster_features, cfg, affinity=self.affinity)
            except (SRRMError, ValueError) as exc:
                self._runs[key] = exc
        return self._runs[key]


def _folds(n, n_folds, seed):
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, n_folds)]


def cv_score(inputs, memberships, n_clusters, ridge_weight, kernel_width, n_folds, seed):
    """Mean absolute error of fused predictions on held-out training pixels."""
    train = inputs.training_set()
    m_train = memberships[inputs.train_index]
    labels = hard_assign(m_train)
    folds = _folds(len(train), n_folds, seed)
    if min(f.size for f in folds) < 1 or len(train) - max(f.size for f in folds) < 2:
        raise DomainError("too few training pixels for cross-validation")
    errors = np.empty(len(train))
    for held in folds:
        keep = np.setdiff1d(np.arange(len(train)), held)
        ens = fit_ensemble(train.subset(keep), labels[keep], n_clusters, kernel_width, ridge_weight)
        pred = fuse(m_train[held], ens.predict(train.features[held]), ens.vacancy)
        errors[held] = np.abs(pred - train.targets[held])
    return float(errors.mean())


def _candidates(config):
    return sorted(set(config.candidate_clusters)), sorted(set(config.candidate_entropy_weights)), sorted(
        set(config.candidate_ridge_weights)
    )


def select_parameters(inputs, config, day=0, runs=None):
    """Grid search over (K, entropy weight, ridge weight) by k-fold CV on training pixels.

    Ties go to the smaller K, then smaller entropy weight, then smaller ridge weight.
    """
    runs = runs or _Clusterings(inputs, config, day)
    ks, mus, ridges = _candidates(config)
    if len(ks) == len(mus) == len(ridges) == 1:
        return Selection(ks[0], mus[0], ridges[0], float("nan"))
    _, _, fold_seed = _day_seeds(config.seed, day)
    scores, failures = {}, {}
    best = None
    for k in ks:
        for mu in mus:
            run = runs.get(k, mu)
            for ridge in ridges:
                key = (k, mu, ridge)
                if isinstance(run, Exception):
                    failures[key] = f"{type(run).__name__}: {run}"
                    continue
                try:
                    score = cv_score(
                        inputs, run.memberships, k, ridge, config.regression_kernel_width, config.cv_folds, fold_seed
                    )
                except (SRRMError, ValueError) as exc:
                    failures[key] = f"{type(exc).__name__}: {exc}"
                    continue
                if not np.isfinite(score):
                    failures[key] = "non-finite score"
                    continue
                scores[key] = score
                if best is None or score < best[1]:
                    best = (key, score)
    if best is None:
        raise SelectionError(failures)
    (k, mu, ridge), score = best
    return Selection(k, mu, ridge, score, scores, failures)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (SRRMError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        raise StageError(name, exc) from exc


def predict_field(inputs, memberships, n_clusters, ridge_weight, kernel_width=None):
    """Fit the cluster ensemble on all training pixels and fuse predictions everywhere."""
    train = inputs.training_set()
    labels = hard_assign(memberships[inputs.train_index])
    ens = fit_ensemble(train, labels, n_clusters, kernel_width, ridge_weight)
    per_cluster = ens.predict(inputs.regression_features)
    estimate = fuse(memberships, per_cluster, ens.vacancy)
    return estimate.reshape(inputs.shape), per_cluster


def downscale_day(fine, coarse, config, day=0):
    """Downscale one day.

    Parameters
    ----------
    fine : FineGrid
        Fine auxiliary layers (LST, PPT, LAI, landcover) and a TB layer that
        is only read at the training pixels.
    coarse : CoarseGrid
        Coarse TB observation tiling ``fine``.
    config : PipelineConfig
    day : int
        Day number; seeds the training mask, clustering and CV folds.

    Returns
    -------
    DownscaleResult
    """
    inputs = _stage("assemble", prepare_inputs, fine, coarse, config, day)
    runs = _Clusterings(inputs, config, day)
    sel = _stage("select", select_parameters, inputs, config, day, runs)
    run = runs.get(sel.n_clusters, sel.entropy_weight)
    if isinstance(run, Exception):
        raise StageError("cluster", run)
    estimate, per_cluster = _stage(
        "predict", predict_field, inputs, run.memberships, sel.n_clusters, sel.ridge_weight,
        config.regression_kernel_width,
    )
    mask = np.zeros(inputs.shape[0] * inputs.shape[1], dtype=bool)
    mask[inputs.train_index] = True
    return DownscaleResult(
        day=day,
        estimate=estimate,
        n_clusters=sel.n_clusters,
        entropy_weight=sel.entropy_weight,
        ridge_weight=sel.ridge_weight,
        memberships=run.memberships,
        training_mask=mask.reshape(inputs.shape),
        cost_trace=run.cost_trace,
        cluster_predictions=per_cluster,
        cv_score=sel.score,
        absolute_entropy_weight=runs.absolute_weight(sel.n_clusters, sel.entropy_weight),
    )


# --------------------------------------------------------------------------- season


def observe(truth, scale_factor, noise=None, day=0):
    """Simulate the day's observations from a truth grid.

    Returns the noisy fine auxiliary grid (TB kept for training-pixel lookup)
    and the coarse TB grid obtained by block-averaging the true fine TB.
    """
    truth.require("TB")
    fine = truth
    if noise is not None:
        seed = int(np.random.SeedSequence([int(noise.seed), int(day)]).generate_state(1)[0])
        fine = add_observation_noise(truth, replace(noise, seed=seed))
    coarse = aggregate(truth, scale_factor, layers=["TB"])
    return fine, coarse


def processed_days(n_days, cadence):
    """1-based day numbers visited at the given cadence."""
    return list(range(1, n_days + 1, cadence))


def _run_one(args):
    truth, config, noise, day = args
    try:
        fine, coarse = observe(truth, config.scale_factor, noise, day)
        return downscale_day(fine, coarse, config, day), None
    except (SRRMError, ValueError, ArithmeticError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def run_season(series, config, noise=None, jobs=1, days=None):
    """Downscale every ``config.cadence``-th day of a series of truth grids.

    Failed days are recorded in ``SeasonResult.failures`` and skipped.
    """
    if len(series) == 0:
        raise DomainError("empty scene series")
    days = processed_days(len(series), config.cadence) if days is None else list(days)
    tasks = [(series[d - 1], config, noise, d) for d in days]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_run_one, tasks))
    else:
        outcomes = [_run_one(t) for t in tasks]
    results, failures = [], {}
    for day, (res, err) in zip(days, outcomes):
        if err is None:
            results.append(res)
        else:
            log.warning("day %d failed: %s", day, err)
            failures[day] = err
    return SeasonResult(results, failures)


def iteration_study(truth, config, noise=None, day=0, every=10, max_iterations=200):
    """RMSE of the downscaled field at clustering checkpoints 0, every, ..., max_iterations.

    Parameters are selected once with the regular pipeline; the clustering
    for the selected (K, entropy weight) is then re-run without early
    stopping and the regression/fusion stage is re-evaluated at each
    checkpoint against the true fine TB.
    """
    from .evaluation import rmse_sd

    fine, coarse = observe(truth, config.scale_factor, noise, day)
    inputs = prepare_inputs(fine, coarse, config, day)
    runs = _Clusterings(inputs, config, day)
    sel = select_parameters(inputs, config, day, runs)
    cfg = runs.cluster_config(
        sel.n_clusters, runs.absolute_weight(sel.n_clusters, sel.entropy_weight), max_iterations=max_iterations
    )
    result = clustering.cluster(inputs.cluster_features, cfg, affinity=runs.affinity, snapshot_every=every)
    rows = []
    for it in sorted(result.snapshots):
        estimate, _ = predict_field(
            inputs, result.snapshots[it], sel.n_clusters, sel.ridge_weight, config.regression_kernel_width
        )
        rmse, sd, bias = rmse_sd(truth["TB"], estimate)
        rows.append({"iteration": it, "rmse": rmse, "sd": sd, "bias": bias, "cost": float(result.cost_trace[it])})
    return rows, sel


__all__ = [
    "PipelineConfig",
    "DownscaleResult",
    "SeasonResult",
    "Selection",
    "assemble_features",
    "select_parameters",
    "downscale_day",
    "run_season",
    "iteration_study",
    "observe",
    "processed_days",
]
