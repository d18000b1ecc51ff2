"""Model parameters and equilibrium analysis of the feedback structure.

A parameter triple ``(x, theta1, theta2)`` defines the structural map

    y1  =  x @ (theta1 @ y1 + theta2 @ y2)

whose feedback operator is ``F = x @ theta1``. When ``F`` is a
contraction (spectral radius below one) the map has the unique
non-negative equilibrium ``y1 = m_model @ y2`` with
``m_model = (I - F)^{-1} @ x @ theta2``; the analysis here is static,
the equilibrium is what the model asserts, not the trajectory of an
explicit dynamical process. The amplification ratio compares the
equilibrium operator against the direct (feedback-free) pathways
``x @ theta2`` in operator 1-norm and satisfies

    1  <=  ar  <=  1 / (1 - op_norm_1(F))        when op_norm_1(F) < 1,

with equality on the left exactly when ``F`` is zero.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DegenerateInputError, DimensionError, InstabilityError, ValidationError
from .matrix import as_nonneg, op_norm_1, solve_i_minus, spectral_radius

if TYPE_CHECKING:
    from .estimation import Dataset

__all__ = [
    "ModelParams",
    "EquilibriumSummary",
    "coefficient_matrix",
    "equilibrium",
    "neumann_terms",
    "predict",
]

# Columns of x must sum to one within this tolerance.
_COLUMN_SUM_TOL = 1e-8

# Spectral radii above this are surfaced as near-critical: the point
# estimate is stable but small perturbations may not be.
_NEAR_CRITICAL = 0.99


@dataclass
class ModelParams:
    """Validated parameter triple of the factorization.

    ``x`` is (p1, q) column-stochastic, ``theta1`` is (q, p1), and
    ``theta2`` is (q, p2); all entries non-negative and finite. Arrays
    are stored as read-only float64 copies.
    """

    x: np.ndarray
    theta1: np.ndarray
    theta2: np.ndarray

    def __post_init__(self):
        self.x = as_nonneg(self.x, "x")
        self.theta1 = as_nonneg(self.theta1, "theta1")
        self.theta2 = as_nonneg(self.theta2, "theta2")
        p1, q = self.x.shape
        if self.theta1.shape != (q, p1):
            raise DimensionError(
                f"theta1 must have shape {(q, p1)}, got {self.theta1.shape}")
        if self.theta2.shape[0] != q:
            raise DimensionError(
                f"theta2 must have {q} rows, got {self.theta2.shape[0]}")
        colsums = self.x.sum(axis=0)
        worst = float(np.max(np.abs(colsums - 1.0)))
        if worst > _COLUMN_SUM_TOL:
            raise ValidationError(
                f"columns of x must sum to 1 within {_COLUMN_SUM_TOL:g}, "
                f"worst deviation {worst:g}")

    @property
    def p1(self) -> int:
        return self.x.shape[0]

    @property
    def p2(self) -> int:
        return self.theta2.shape[1]

    @property
    def q(self) -> int:
        return self.x.shape[1]

    def feedback_operator(self) -> np.ndarray:
        """The (p1, p1) operator ``x @ theta1``."""
        return self.x @ self.theta1


@dataclass
class EquilibriumSummary:
    """Equilibrium quantities of one parameter triple.

    ``m_model`` and ``ar`` are None when the fit is unstable
    (``rho >= 1``); ``ar_upper_bound`` is None when
    ``op_norm_1(x @ theta1) >= 1``, where the norm bound is vacuous.
    """

    m_model: np.ndarray | None
    m_direct: np.ndarray
    rho: float
    ar: float | None
    ar_upper_bound: float | None
    stable: bool

    @property
    def near_critical(self) -> bool:
        """True when the point estimate sits within 0.01 of the stability edge."""
        return self.stable and self.rho > _NEAR_CRITICAL


def coefficient_matrix(params: ModelParams, data: "Dataset") -> np.ndarray:
    """Coefficient matrix ``theta1 @ y1 + theta2 @ y2`` of shape (q, n)."""
    if params.theta1.shape[1] != data.y1.shape[0]:
        raise DimensionError(
            f"theta1 expects {params.theta1.shape[1]} endogenous variables, "
            f"data has {data.y1.shape[0]}")
    if params.theta2.shape[1] != data.y2.shape[0]:
        raise DimensionError(
            f"theta2 expects {params.theta2.shape[1]} exogenous variables, "
            f"data has {data.y2.shape[0]}")
    return params.theta1 @ data.y1 + params.theta2 @ data.y2


def equilibrium(params: ModelParams) -> EquilibriumSummary:
    """Analyze the feedback structure of a parameter triple.

    Computes the spectral radius of ``x @ theta1``, and when it is below
    one also the equilibrium operator and the amplification ratio

        ar = op_norm_1(m_model) / op_norm_1(x @ theta2).

    Raises
    ------
    DegenerateInputError
        If the direct pathways vanish (``op_norm_1(x @ theta2)`` below
        1e-12), which leaves the ratio undefined.
    """
    f = params.feedback_operator()
    m_direct = params.x @ params.theta2
    op_direct = op_norm_1(m_direct)
    if op_direct < 1e-12:
        raise DegenerateInputError(
            "x @ theta2 is numerically zero, the amplification ratio is undefined")
    rho = spectral_radius(f)
    stable = rho < 1.0
    norm_f = op_norm_1(f)
    ar_upper = 1.0 / (1.0 - norm_f) if norm_f < 1.0 else None
    if stable:
        m_model = solve_i_minus(f, m_direct)
        m_model.flags.writeable = False
        ar = op_norm_1(m_model) / op_direct
    else:
        m_model = None
        ar = None
    m_direct.flags.writeable = False
    return EquilibriumSummary(m_model=m_model, m_direct=m_direct, rho=rho,
                              ar=ar, ar_upper_bound=ar_upper, stable=stable)


def neumann_terms(params: ModelParams, k: int) -> list[np.ndarray]:
    """Propagation rounds ``[x@theta2, F@x@theta2, ..., F^k@x@theta2]``.

    The k-th entry is the effect arriving after exactly k feedback
    passes; partial sums converge to ``m_model`` at a geometric rate
    bounded by the spectral radius of ``F = x @ theta1``.
    """
    if k < 0:
        raise ValidationError(f"k must be non-negative, got {k}")
    f = params.feedback_operator()
    if spectral_radius(f) >= 1.0:
        raise InstabilityError(
            "feedback operator is not a contraction, rounds do not converge")
    term = params.x @ params.theta2
    out = [term]
    for _ in range(k):
        term = f @ term
        out.append(term)
    return out


def predict(summary: EquilibriumSummary, y2) -> np.ndarray:
    """Equilibrium prediction ``m_model @ y2`` for exogenous data ``y2``."""
    if not summary.stable:
        raise InstabilityError("no equilibrium: the fit is unstable")
    arr = np.ascontiguousarray(np.asarray(y2, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[0] != summary.m_model.shape[1]:
        raise DimensionError(
            f"y2 must have shape ({summary.m_model.shape[1]}, n), "
            f"got {arr.shape}")
    out = summary.m_model @ arr
    # The exact product is non-negative; round-off may leave dust below zero.
    np.maximum(out, 0.0, out=out)
    return out
