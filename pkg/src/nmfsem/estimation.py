"""Penalized multiplicative estimation of the feedback factorization.

The fitted objective is

    || y1 - x @ b ||_F^2
        + (lambda_x / 2) * || x.T @ x - diag(x.T @ x) ||_F^2
        + lambda_1 * sum(theta1) + lambda_2 * sum(theta2)

with ``b = theta1 @ y1 + theta2 @ y2``. One iteration updates x, then
theta1, then theta2, each multiplicative rule using the freshly updated
factors before it; denominators are floored at ``epsilon_floor``.
Columns of x are rescaled to sum to one after the x update, with the
matching rows of theta1 and theta2 scaled inversely so the products
``x @ b`` and ``x @ theta1`` are unchanged by the rescaling.

Fitting starts from a feed-forward solution: the special case
``theta1 = 0`` is estimated first (``y1 ~ x0 @ theta0 @ y2``), the full
model then starts at ``x = x0``, ``theta2 = theta0`` and a small uniform
``theta1``. The feed-forward map ``m_simple = x0 @ theta0`` is kept as
the reference against which the equilibrium map is compared.
"""

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels
from .errors import (
    DegenerateInputError,
    DimensionError,
    NumericalError,
    ValidationError,
)
from .matrix import as_nonneg
from .model import EquilibriumSummary, ModelParams, equilibrium

__all__ = [
    "Dataset",
    "Penalties",
    "FitConfig",
    "FitResult",
    "init_basis",
    "init_feedforward",
    "loss",
    "update_step",
    "fit",
]

_INIT_METHODS = ("nndsvdar", "kmeans", "given")

# Smoothing added to k-means membership indicators before normalization.
_KMEANS_SMOOTHING = 0.01


@dataclass
class Dataset:
    """Observed endogenous (y1) and exogenous (y2) data, variables by rows.

    Both blocks share the same observations (columns); at least two are
    required. Entries must be non-negative and finite; data loaded
    through :mod:`nmfsem.io` additionally lies in [0, 1], but that is a
    property of the loader, raw non-negative data is accepted here.
    """

    y1: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        self.y1 = as_nonneg(self.y1, "y1")
        self.y2 = as_nonneg(self.y2, "y2")
        if self.y1.shape[1] != self.y2.shape[1]:
            raise DimensionError(
                f"y1 has {self.y1.shape[1]} observations, "
                f"y2 has {self.y2.shape[1]}")
        if self.y1.shape[1] < 2:
            raise ValidationError("at least two observations are required")
        self._gram_cache = None

    @property
    def p1(self) -> int:
        return self.y1.shape[0]

    @property
    def p2(self) -> int:
        return self.y2.shape[0]

    @property
    def n(self) -> int:
        return self.y1.shape[1]

    def grams(self):
        """Cached Gram blocks consumed by the kernels."""
        if self._gram_cache is None:
            g11 = np.ascontiguousarray(self.y1 @ self.y1.T)
            g12 = np.ascontiguousarray(self.y1 @ self.y2.T)
            g21 = np.ascontiguousarray(self.y2 @ self.y1.T)
            g22 = np.ascontiguousarray(self.y2 @ self.y2.T)
            tr11 = float(np.sum(self.y1 * self.y1))
            self._gram_cache = (tr11, g11, g12, g21, g22)
        return self._gram_cache

    def take(self, indices) -> "Dataset":
        """New dataset restricted to the given observation indices."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.y1[:, idx], self.y2[:, idx])


@dataclass(frozen=True)
class Penalties:
    """Penalty weights; all finite and non-negative."""

    lambda_x: float = 100.0
    lambda_1: float = 0.0
    lambda_2: float = 0.0

    def __post_init__(self):
        for name in ("lambda_x", "lambda_1", "lambda_2"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0.0:
                raise ValidationError(f"{name} must be finite and >= 0, got {value}")


@dataclass(frozen=True)
class FitConfig:
    """Everything that determines a fit besides the data itself."""

    q: int
    penalties: Penalties = field(default_factory=Penalties)
    max_iter: int = 2000
    rel_tol: float = 1e-6
    init: str = "nndsvdar"
    epsilon_floor: float = 1e-12
    seed: int = 0
    x0: Optional[np.ndarray] = None

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 1:
            raise ValidationError(f"q must be a positive integer, got {self.q}")
        if self.max_iter < 1:
            raise ValidationError(f"max_iter must be >= 1, got {self.max_iter}")
        if not (np.isfinite(self.rel_tol) and self.rel_tol > 0.0):
            raise ValidationError(f"rel_tol must be positive, got {self.rel_tol}")
        if not (np.isfinite(self.epsilon_floor) and self.epsilon_floor > 0.0):
            raise ValidationError(
                f"epsilon_floor must be positive, got {self.epsilon_floor}")
        if self.init not in _INIT_METHODS:
            raise ValidationError(
                f"init must be one of {_INIT_METHODS}, got {self.init!r}")
        if self.seed < 0:
            raise ValidationError(f"seed must be >= 0, got {self.seed}")
        if self.init == "given" and self.x0 is None:
            raise ValidationError("init='given' requires x0")


@dataclass
class FitResult:
    """Fitted parameters together with the audit trail of the fit."""

    params: ModelParams
    m_simple: np.ndarray
    loss_trace: np.ndarray
    iterations: int
    converged: bool
    equilibrium: EquilibriumSummary
    metrics: Optional["EvalMetrics"] = None  # noqa: F821


def _check_q(p1: int, n: int, q: int) -> None:
    if q > min(p1, n):
        raise DimensionError(
            f"q={q} exceeds min(p1, n) = {min(p1, n)}")


def _positive_section(v):
    return np.where(v > 0.0, v, 0.0)


def init_basis(y1, q: int, method: str = "nndsvdar", seed: int = 0,
               epsilon_floor: float = 1e-12) -> np.ndarray:
    """Column-stochastic starting basis for the factorization.

    ``nndsvdar`` builds the basis from the leading singular value pairs
    of ``y1``, keeping whichever of the positive or negative sections of
    each pair carries more mass, and fills remaining zeros with small
    uniform draws scaled to the data mean. If ``y1`` has rank below
    ``q`` the method falls back to a seeded random basis with a warning.
    ``kmeans`` clusters the rows of ``y1`` into ``q`` groups and builds
    the basis from smoothed group-membership indicators.

    The result has shape (p1, q), columns summing to one, and every
    entry at least ``epsilon_floor`` (column sums therefore deviate from
    one by at most ``p1 * epsilon_floor``).
    """
    y1 = np.asarray(y1, dtype=np.float64)
    if y1.ndim != 2:
        raise DimensionError("y1 must be 2-dimensional")
    p1, n = y1.shape
    _check_q(p1, n, q)
    if method == "given":
        raise ValidationError("init='given' supplies x0 through FitConfig")
    if method not in ("nndsvdar", "kmeans"):
        raise ValidationError(f"unknown init method {method!r}")
    rng = np.random.default_rng(seed)

    if method == "kmeans":
        from scipy.cluster.vq import kmeans2

        with warnings.catch_warnings():
            # Empty clusters are tolerated: smoothing revives the column.
            warnings.simplefilter("ignore")
            _, labels = kmeans2(y1, q, minit="++", seed=rng)
        w = np.zeros((p1, q))
        w[np.arange(p1), labels] = 1.0
        w += _KMEANS_SMOOTHING
    else:
        u, s, vt = np.linalg.svd(y1, full_matrices=False)
        if s[0] <= 0.0 or s[q - 1] <= s[0] * 1e-12:
            warnings.warn(
                f"y1 has numerical rank below q={q}; using a random basis",
                stacklevel=2)
            w = rng.uniform(0.0, 1.0, (p1, q))
        else:
            w = np.zeros((p1, q))
            w[:, 0] = np.sqrt(s[0]) * np.abs(u[:, 0])
            for j in range(1, q):
                up = _positive_section(u[:, j])
                un = _positive_section(-u[:, j])
                vp = _positive_section(vt[j, :])
                vn = _positive_section(-vt[j, :])
                n_up = np.linalg.norm(up)
                n_un = np.linalg.norm(un)
                mass_p = n_up * np.linalg.norm(vp)
                mass_n = n_un * np.linalg.norm(vn)
                if mass_p >= mass_n and n_up > 0.0:
                    w[:, j] = np.sqrt(s[j] * mass_p) / n_up * up
                elif n_un > 0.0:
                    w[:, j] = np.sqrt(s[j] * mass_n) / n_un * un
            fill = w <= 0.0
            if np.any(fill):
                w[fill] = rng.uniform(0.0, y1.mean() / 100.0, size=int(fill.sum()))

    colsums = w.sum(axis=0)
    colsums[colsums <= 0.0] = 1.0
    w /= colsums
    np.maximum(w, epsilon_floor, out=w)
    return w


def init_feedforward(data: Dataset, q: int, config: FitConfig):
    """Feed-forward starting point: fit ``y1 ~ x0 @ theta0 @ y2``.

    Runs the multiplicative updates with ``theta1`` pinned at zero (its
    rule preserves zeros, so pinning costs nothing) under the same
    ``lambda_x`` and ``lambda_2`` penalties as the full fit. Returns the
    pair ``(x0, theta0)``.
    """
    _check_q(data.p1, data.n, q)
    if np.any(data.y2.sum(axis=1) == 0.0):
        dead = int(np.flatnonzero(data.y2.sum(axis=1) == 0.0)[0])
        raise DegenerateInputError(
            f"y2 row {dead} is all zero, its pathway weights cannot be identified")

    if config.init == "given":
        x0 = np.array(config.x0, dtype=np.float64, order="C")
        if x0.shape != (data.p1, q):
            raise DimensionError(
                f"x0 must have shape {(data.p1, q)}, got {x0.shape}")
        if np.any(x0 < 0.0) or not np.all(np.isfinite(x0)):
            raise ValidationError("x0 must be non-negative and finite")
        colsums = x0.sum(axis=0)
        if np.any(colsums <= 0.0):
            raise ValidationError("x0 has an all-zero column")
        x0 /= colsums
        np.maximum(x0, config.epsilon_floor, out=x0)
    else:
        x0 = init_basis(data.y1, q, config.init, config.seed, config.epsilon_floor)

    rng = np.random.default_rng((config.seed, 1))
    theta0 = rng.uniform(0.5, 1.5, (q, data.p2))
    base = float(np.mean(x0 @ theta0 @ data.y2))
    scale = float(np.mean(data.y1)) / base if base > 0.0 else 1.0
    theta0 *= max(scale, config.epsilon_floor)

    tr11, g11, g12, g21, g22 = data.grams()
    pen = config.penalties
    out = kernels.fit_loop(tr11, g11, g12, g21, g22,
                           x0, np.zeros((q, data.p1)), theta0,
                           pen.lambda_x, 0.0, pen.lambda_2,
                           config.epsilon_floor, config.max_iter, config.rel_tol)
    x0, _, theta0, _, iterations, _, status, n_reset = out
    if status != 0:
        raise NumericalError("feed-forward initialization produced a "
                             "non-finite loss", iteration=iterations)
    if n_reset:
        warnings.warn(f"{n_reset} basis column(s) collapsed during "
                      "initialization and were reset to uniform", stacklevel=2)
    return x0, theta0


def _check_pair(params: ModelParams, data: Dataset) -> None:
    if params.p1 != data.p1 or params.p2 != data.p2:
        raise DimensionError(
            f"params are for (p1={params.p1}, p2={params.p2}), data has "
            f"(p1={data.p1}, p2={data.p2})")


def loss(params: ModelParams, data: Dataset, penalties: Penalties) -> float:
    """Penalized squared loss of the parameters on the data."""
    _check_pair(params, data)
    tr11, g11, g12, g21, g22 = data.grams()
    return float(kernels.loss_value(
        tr11, g11, g12, g21, g22, params.x, params.theta1, params.theta2,
        penalties.lambda_x, penalties.lambda_1, penalties.lambda_2))


def update_step(params: ModelParams, data: Dataset, penalties: Penalties,
                epsilon_floor: float = 1e-12) -> ModelParams:
    """One full multiplicative update (x, theta1, theta2) on the data."""
    _check_pair(params, data)
    tr11, g11, g12, g21, g22 = data.grams()
    x, t1, t2, n_reset = kernels.update_once(
        g11, g12, g21, g22, params.x, params.theta1, params.theta2,
        penalties.lambda_x, penalties.lambda_1, penalties.lambda_2,
        epsilon_floor)
    if n_reset:
        warnings.warn(f"{n_reset} basis column(s) collapsed and were reset "
                      "to uniform", stacklevel=2)
    return ModelParams(x, t1, t2)


def fit(data: Dataset, config: FitConfig) -> FitResult:
    """Estimate the factorization on a dataset.

    Parameters
    ----------
    data : Dataset
        Endogenous and exogenous blocks sharing observations.
    config : FitConfig
        Rank, penalties, iteration budget, and initialization choices.

    Returns
    -------
    FitResult
        Fitted :class:`~nmfsem.model.ModelParams`, the feed-forward map
        ``m_simple`` kept from initialization, the loss trace (entry 0
        is the loss at the starting point), the equilibrium summary, and
        (for stable fits) the comparison metrics against ``m_simple``.
        Instability is reported through ``equilibrium.stable``, not as
        an exception.

    Raises
    ------
    NumericalError
        If the loss turns non-finite during optimization.
    DimensionError
        If ``config.q`` exceeds ``min(p1, n)``.
    """
    _check_q(data.p1, data.n, config.q)
    x0, theta0 = init_feedforward(data, config.q, config)
    m_simple = x0 @ theta0
    m_simple.flags.writeable = False

    start = max(0.01 * float(theta0.mean()), config.epsilon_floor)
    theta1_0 = np.full((config.q, data.p1), start)

    tr11, g11, g12, g21, g22 = data.grams()
    pen = config.penalties
    out = kernels.fit_loop(tr11, g11, g12, g21, g22,
                           x0, theta1_0, theta0,
                           pen.lambda_x, pen.lambda_1, pen.lambda_2,
                           config.epsilon_floor, config.max_iter, config.rel_tol)
    x, t1, t2, trace, iterations, converged, status, n_reset = out
    if status != 0:
        raise NumericalError("loss became non-finite during optimization",
                             iteration=iterations)
    if n_reset:
        warnings.warn(f"{n_reset} basis column(s) collapsed during fitting "
                      "and were reset to uniform", stacklevel=2)

    params = ModelParams(x, t1, t2)
    summary = equilibrium(params)

    metrics = None
    if summary.stable:
        from .evaluation import EvalMetrics, mae, sc_cov, sc_map

        try:
            predicted = summary.m_model @ data.y2
            metrics = EvalMetrics(
                sc_map=sc_map(summary.m_model, m_simple),
                sc_cov=sc_cov(summary.m_model, data),
                mae=mae(data.y1, predicted),
            )
        except DegenerateInputError:
            metrics = None

    trace = np.array(trace)
    trace.flags.writeable = False
    return FitResult(params=params, m_simple=m_simple, loss_trace=trace,
                     iterations=iterations, converged=converged,
                     equilibrium=summary, metrics=metrics)
