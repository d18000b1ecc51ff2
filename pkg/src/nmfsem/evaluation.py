"""Fit quality metrics and bootstrap uncertainty for fitted models.

Two structural-consistency scores compare the equilibrium map against
references that do not use the feedback estimate directly:

* ``sc_map``: Pearson correlation between the entries of the
  equilibrium map and the feed-forward map (no-feedback baseline).
* ``sc_cov``: Pearson correlation between the entries of the model
  implied second-moment matrix ``m @ (y2 @ y2.T) @ m.T`` and the sample
  second moments ``y1 @ y1.T``.

``mae`` is the mean absolute error between the data and the equilibrium
predictions. Bootstrap intervals resample observations (columns) with
replacement and refit with fixed hyperparameters.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateInputError,
    DimensionError,
    InsufficientReplicatesError,
    ValidationError,
)
from .estimation import Dataset, FitConfig, fit

__all__ = [
    "EvalMetrics",
    "BootstrapResult",
    "sc_map",
    "sc_cov",
    "mae",
    "bootstrap",
]


@dataclass(frozen=True)
class EvalMetrics:
    """Structural-consistency scores and equilibrium prediction error."""

    sc_map: float
    sc_cov: float
    mae: float


@dataclass
class BootstrapResult:
    """Point estimates with percentile intervals over stable replicates.

    ``rho_values`` and ``ar_values`` hold the per-replicate estimates
    that entered the intervals (stable refits only, aligned);
    ``n_unstable`` counts the replicates discarded as unstable or
    failed. ``ar_point`` is None when the point fit itself is unstable.
    """

    rho_point: float
    ar_point: float | None
    rho_interval: tuple[float, float]
    ar_interval: tuple[float, float]
    rho_values: np.ndarray
    ar_values: np.ndarray
    n_unstable: int
    b: int


def _flat_correlation(a: np.ndarray, b: np.ndarray, what: str) -> float:
    av = a.ravel()
    bv = b.ravel()
    if av.size < 2:
        raise DegenerateInputError(
            f"{what}: correlation needs at least two entries")
    ac = av - av.mean()
    bc = bv - bv.mean()
    na = float(np.sqrt(np.sum(ac * ac)))
    nb = float(np.sqrt(np.sum(bc * bc)))
    # Centered mass at round-off scale means the input was constant.
    floor_a = 1e-12 * np.sqrt(av.size) * max(float(np.abs(av).max()), 1e-300)
    floor_b = 1e-12 * np.sqrt(bv.size) * max(float(np.abs(bv).max()), 1e-300)
    if na <= floor_a or nb <= floor_b:
        raise DegenerateInputError(f"{what}: correlation of a constant "
                                   "matrix is undefined")
    r = float(np.sum(ac * bc) / (na * nb))
    return min(1.0, max(-1.0, r))


def sc_map(m_model, m_simple) -> float:
    """Correlation between equilibrium and feed-forward maps, entrywise."""
    a = np.asarray(m_model, dtype=np.float64)
    b = np.asarray(m_simple, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(
            f"maps must share a shape, got {a.shape} and {b.shape}")
    return _flat_correlation(a, b, "sc_map")


def sc_cov(m_model, data: Dataset) -> float:
    """Correlation between implied and sample second-moment matrices."""
    m = np.asarray(m_model, dtype=np.float64)
    if m.shape != (data.p1, data.p2):
        raise DimensionError(
            f"m_model must have shape {(data.p1, data.p2)}, got {m.shape}")
    implied = m @ (data.y2 @ data.y2.T) @ m.T
    sample = data.y1 @ data.y1.T
    return _flat_correlation(implied, sample, "sc_cov")


def mae(y1, y1_hat) -> float:
    """Mean absolute entrywise deviation between data and predictions."""
    a = np.asarray(y1, dtype=np.float64)
    b = np.asarray(y1_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(
            f"shapes must match, got {a.shape} and {b.shape}")
    return float(np.mean(np.abs(a - b)))


def bootstrap(data: Dataset, config: FitConfig, b: int, seed: int = 0, *,
              threads: int = 1, identity_resample: bool = False) -> BootstrapResult:
    """Percentile bootstrap for the spectral radius and amplification ratio.

    Each replicate draws ``n`` observation indices with replacement
    (deterministically from ``(seed, replicate)``), refits with the same
    hyperparameters (the fit seed is offset by the replicate index), and
    records rho and ar when the refit is stable. Unstable or failed
    refits are discarded and counted in ``n_unstable``. Intervals are
    the 2.5 and 97.5 linear-interpolation percentiles of the retained
    values.

    ``identity_resample`` is a testing hook that disables resampling, so
    every replicate sees the original data and intervals degenerate to a
    point.

    Raises
    ------
    InsufficientReplicatesError
        If fewer than two replicates were retained.
    """
    if b < 2:
        raise ValidationError(f"b must be >= 2, got {b}")
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")

    point = fit(data, config)
    rho_point = point.equilibrium.rho
    ar_point = point.equilibrium.ar

    n = data.n

    def one(r: int):
        if identity_resample:
            # Test hook: no resampling and no seed offset, so every
            # replicate reproduces the point fit exactly.
            idx = np.arange(n)
            cfg = config
        else:
            rng = np.random.default_rng((seed, r))
            idx = rng.integers(0, n, size=n)
            cfg = replace(config, seed=config.seed + 1 + r)
        try:
            res = fit(data.take(idx), cfg)
        except Exception:
            return None
        if not res.equilibrium.stable:
            return None
        return res.equilibrium.rho, res.equilibrium.ar

    if threads == 1:
        results = [one(r) for r in range(b)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, range(b)))

    kept = [r for r in results if r is not None]
    n_unstable = b - len(kept)
    if len(kept) < 2:
        raise InsufficientReplicatesError(
            f"only {len(kept)} of {b} replicates were stable")

    rho_values = np.array([r[0] for r in kept])
    ar_values = np.array([r[1] for r in kept])
    rho_lo, rho_hi = np.percentile(rho_values, [2.5, 97.5])
    ar_lo, ar_hi = np.percentile(ar_values, [2.5, 97.5])
    return BootstrapResult(
        rho_point=rho_point, ar_point=ar_point,
        rho_interval=(float(rho_lo), float(rho_hi)),
        ar_interval=(float(ar_lo), float(ar_hi)),
        rho_values=rho_values, ar_values=ar_values,
        n_unstable=n_unstable, b=b)
