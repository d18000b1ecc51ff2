"""Synthetic benchmark: generator and Monte Carlo study driver.

Reference generator design (study scale is p1=9, p2=3, q=3):

* ``x_true``: columns drawn from a symmetric Dirichlet(1) over the p1
  endogenous variables, hence column-stochastic by construction.
* ``theta2_true``: uniform [0, 1] entries.
* ``theta1_true``: uniform [0, 1] entries rescaled so the spectral
  radius of ``x_true @ theta1_true`` equals ``rho_true`` exactly (zero
  when ``rho_true`` is zero). The rescaling factor comes from the exact
  eigenvalues of the small (q, q) product ``theta1 @ x``, whose nonzero
  spectrum coincides with that of ``x @ theta1``.
* ``y2``: uniform [0, 1]; ``y1``: the equilibrium response
  ``(I - x@theta1)^{-1} @ x @ theta2 @ y2`` plus Gaussian noise
  truncated below at minus the clean value, so y1 stays non-negative.

Everything is deterministic given the seeds: replicate r of condition c
draws from a fresh ``default_rng((seed, c, r))`` stream.
"""

import io as _stringio
import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateInputError, ValidationError
from .estimation import Dataset, FitConfig, Penalties, fit
from .model import ModelParams

__all__ = [
    "SimCondition",
    "SimSummary",
    "generate",
    "run_study",
    "table1_conditions",
    "study_fit_config",
    "summaries_to_csv",
    "summaries_to_text",
]


@dataclass(frozen=True)
class SimCondition:
    """One cell of the synthetic study design."""

    n: int
    rho_true: float
    sigma: float = 0.0
    p1: int = 9
    p2: int = 3
    q: int = 3
    r: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValidationError(f"n must be >= 2, got {self.n}")
        if not (0.0 <= self.rho_true < 1.0):
            raise ValidationError(
                f"rho_true must lie in [0, 1), got {self.rho_true}")
        if self.sigma < 0.0:
            raise ValidationError(f"sigma must be >= 0, got {self.sigma}")
        if min(self.p1, self.p2, self.q) < 1:
            raise ValidationError("p1, p2 and q must be positive")
        if self.q > self.p1:
            raise ValidationError(f"q={self.q} exceeds p1={self.p1}")
        if self.r < 1:
            raise ValidationError(f"r must be >= 1, got {self.r}")

    def label(self) -> str:
        return f"rho_true={self.rho_true:g}, N={self.n}"


@dataclass
class SimSummary:
    """Replicate means and dispersions for one condition.

    Means are over the successful stable replicates; ``n_unstable`` and
    ``n_failed`` count replicates excluded as unstable or crashed, so
    ``n_unstable + n_failed + (count behind the means) == condition.r``.
    """

    condition: SimCondition
    mean_rho_hat: float
    sd_rho_hat: float
    mean_ar: float
    sd_ar: float
    mean_sc_map: float
    sd_sc_map: float
    mean_sc_cov: float
    sd_sc_cov: float
    mean_mae: float
    sd_mae: float
    n_unstable: int
    n_failed: int


def generate(condition: SimCondition, *, seed=None):
    """Draw one synthetic dataset and its ground-truth parameters.

    Returns ``(Dataset, ModelParams)``. ``seed`` overrides the
    condition's seed (the study driver passes per-replicate streams).
    """
    rng = np.random.default_rng(condition.seed if seed is None else seed)
    p1, p2, q = condition.p1, condition.p2, condition.q

    x = rng.dirichlet(np.ones(p1), size=q).T
    theta2 = rng.uniform(0.0, 1.0, (q, p2))

    if condition.rho_true == 0.0:
        theta1 = np.zeros((q, p1))
    else:
        theta1 = None
        for _ in range(20):
            m = rng.uniform(0.0, 1.0, (q, p1))
            # Nonzero eigenvalues of x @ m equal those of m @ x (q, q).
            rho0 = float(np.max(np.abs(np.linalg.eigvals(m @ x))))
            if rho0 > 1e-12:
                theta1 = m * (condition.rho_true / rho0)
                break
        if theta1 is None:
            raise DegenerateInputError(
                "could not draw a feedback matrix with positive spectral radius")

    y2 = rng.uniform(0.0, 1.0, (p2, condition.n))
    if condition.rho_true == 0.0:
        # No feedback: the equilibrium is the direct map, exactly.
        y1 = x @ theta2 @ y2
    else:
        y1 = np.linalg.solve(np.eye(p1) - x @ theta1, x @ theta2 @ y2)
        np.maximum(y1, 0.0, out=y1)

    if condition.sigma > 0.0:
        from scipy.stats import truncnorm

        lower = -y1 / condition.sigma
        noise = truncnorm.rvs(lower, np.inf, loc=0.0, scale=condition.sigma,
                              size=y1.shape, random_state=rng)
        y1 = np.maximum(y1 + noise, 0.0)

    return Dataset(y1, y2), ModelParams(x, theta1, theta2)


def study_fit_config(seed: int = 0, n: int = 50) -> FitConfig:
    """Fit configuration used for the synthetic study.

    The iteration budget is deliberately generous: the feedback
    coefficients grow slowly out of their small initialization, and
    stopping early leaves the feedback contrast between conditions
    undeveloped. Penalties scale with the observation count ``n`` so
    that their pull per observation is constant; with fixed penalties
    the data term drowns them out at larger samples and feedback
    recovery degrades.
    """
    return FitConfig(q=3, penalties=Penalties(lambda_x=2.0 * n,
                                              lambda_1=0.0002 * n,
                                              lambda_2=0.0002 * n),
                     max_iter=40_000, rel_tol=1e-10, seed=seed)


def table1_conditions(r: int = 50, seed: int = 0, sigma: float = 0.0,
                      n_values=(50, 200), rho_values=(0.0, 0.2)):
    """The four benchmark conditions, noise-free by default."""
    return [SimCondition(n=n, rho_true=rho, sigma=sigma, r=r, seed=seed)
            for rho in rho_values for n in n_values]


def _summarize(cond: SimCondition, rows, n_unstable: int, n_failed: int) -> SimSummary:
    def stats(values):
        arr = np.asarray(values, dtype=np.float64)
        if arr.size == 0:
            return float("nan"), float("nan")
        sd = float(np.std(arr, ddof=1)) if arr.size > 1 else 0.0
        return float(np.mean(arr)), sd

    cols = list(zip(*rows)) if rows else [[], [], [], [], []]
    (m_rho, s_rho), (m_ar, s_ar) = stats(cols[0]), stats(cols[1])
    (m_map, s_map), (m_cov, s_cov), (m_mae, s_mae) = (
        stats(cols[2]), stats(cols[3]), stats(cols[4]))
    return SimSummary(condition=cond,
                      mean_rho_hat=m_rho, sd_rho_hat=s_rho,
                      mean_ar=m_ar, sd_ar=s_ar,
                      mean_sc_map=m_map, sd_sc_map=s_map,
                      mean_sc_cov=m_cov, sd_sc_cov=s_cov,
                      mean_mae=m_mae, sd_mae=s_mae,
                      n_unstable=n_unstable, n_failed=n_failed)


def run_study(conditions, fit_config, *, threads: int = 1, on_fit=None):
    """Monte Carlo over conditions; returns one :class:`SimSummary` each.

    ``fit_config`` is either a single :class:`FitConfig` used for every
    condition or a callable ``condition -> FitConfig`` for settings that
    depend on the condition (the benchmark study scales its penalties
    with the sample size this way).

    Replicate r of condition index c generates data from the stream
    ``(condition.seed, c, r)`` and fits with the rank of the condition
    and a seed offset by r. Replicates whose fit is unstable or raises
    are excluded from the means and counted, never silently dropped.

    ``on_fit``, when given, is called as ``on_fit(ci, rep, result, data)``
    for every fit that completes, unstable ones included. With
    ``threads > 1`` the callback runs on worker threads.
    """
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")
    make_config = fit_config if callable(fit_config) else lambda cond: fit_config

    def one(job):
        ci, cond, rep = job
        data, _truth = generate(cond, seed=(cond.seed, ci, rep))
        base = make_config(cond)
        cfg = replace(base, q=cond.q, seed=base.seed + rep)
        try:
            res = fit(data, cfg)
        except Exception:
            return "failed", None
        if on_fit is not None:
            on_fit(ci, rep, res, data)
        eq = res.equilibrium
        if not eq.stable or res.metrics is None:
            return "unstable", None
        return "ok", (eq.rho, eq.ar, res.metrics.sc_map, res.metrics.sc_cov,
                      res.metrics.mae)

    summaries = []
    for ci, cond in enumerate(conditions):
        jobs = [(ci, cond, rep) for rep in range(cond.r)]
        if threads == 1:
            outcomes = [one(j) for j in jobs]
        else:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(one, jobs))
        rows = [payload for status, payload in outcomes if status == "ok"]
        n_unstable = sum(1 for status, _ in outcomes if status == "unstable")
        n_failed = sum(1 for status, _ in outcomes if status == "failed")
        summaries.append(_summarize(cond, rows, n_unstable, n_failed))
    return summaries


_CSV_FIELDS = [
    "rho_true", "n", "sigma", "r",
    "mean_rho_hat", "sd_rho_hat", "mean_ar", "sd_ar",
    "mean_sc_map", "sd_sc_map", "mean_sc_cov", "sd_sc_cov",
    "mean_mae", "sd_mae", "n_unstable", "n_failed",
]


def summaries_to_csv(summaries) -> str:
    """Full-precision CSV of the study summaries, one row per condition."""
    buf = _stringio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_FIELDS)
    for s in summaries:
        c = s.condition
        writer.writerow([repr(float(c.rho_true)), c.n, repr(float(c.sigma)), c.r,
                         repr(s.mean_rho_hat), repr(s.sd_rho_hat),
                         repr(s.mean_ar), repr(s.sd_ar),
                         repr(s.mean_sc_map), repr(s.sd_sc_map),
                         repr(s.mean_sc_cov), repr(s.sd_sc_cov),
                         repr(s.mean_mae), repr(s.sd_mae),
                         s.n_unstable, s.n_failed])
    return buf.getvalue()


def summaries_to_text(summaries) -> str:
    """Aligned table with the benchmark column order."""
    header = ["Condition", "rho_hat", "AR_hat", "SC_map", "SC_cov", "MAE"]
    rows = [header]
    for s in summaries:
        rows.append([s.condition.label(),
                     f"{s.mean_rho_hat:.3f}", f"{s.mean_ar:.2f}",
                     f"{s.mean_sc_map:.3f}", f"{s.mean_sc_cov:.3f}",
                     f"{s.mean_mae:.3f}"])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for row in rows:
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"
