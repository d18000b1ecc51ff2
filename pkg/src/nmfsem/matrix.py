"""Dense non-negative matrices and the spectral quantities built on them.

The package represents matrices as plain float64 numpy arrays. The
non-negativity contract is enforced at construction boundaries through
:func:`as_nonneg`, which returns a C-contiguous read-only view so that
validated values cannot drift afterwards; interior arithmetic trusts the
invariant for speed. Everything here is deterministic: the power
iteration uses a fixed all-ones start vector, which is valid for
non-negative matrices because the dominant eigenvalue is real and
non-negative with a non-negative eigenvector (Perron-Frobenius).
"""

import warnings

import numpy as np

from . import kernels
from .errors import ConvergenceError, DimensionError, InstabilityError, ValidationError

__all__ = [
    "as_nonneg",
    "spectral_radius",
    "op_norm_1",
    "neumann_inverse",
    "solve_i_minus",
]


def as_nonneg(values, name: str = "matrix") -> np.ndarray:
    """Validate a dense non-negative matrix and freeze it.

    Parameters
    ----------
    values : array-like
        Two-dimensional numeric data with at least one row and column.
    name : str
        Label used in error messages.

    Returns
    -------
    numpy.ndarray
        A float64, C-contiguous, read-only copy of ``values``.

    Raises
    ------
    ValidationError
        If the input is not 2-dimensional, is empty, or contains
        negative or non-finite entries.
    """
    arr = np.array(values, dtype=np.float64, order="C")
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-dimensional, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValidationError(f"{name} must have at least one row and column, "
                              f"got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite entries")
    if np.any(arr < 0.0):
        raise ValidationError(f"{name} contains negative entries "
                              f"(minimum {arr.min():g})")
    arr.flags.writeable = False
    return arr


def _square(m, name: str) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(m, dtype=np.float64))
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise DimensionError(f"{name} must be square, got shape {arr.shape}")
    return arr


def spectral_radius(m, tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Spectral radius of a non-negative square matrix by power iteration.

    Stops when the dominant-eigenvalue estimate changes by less than
    ``tol`` relative to its value, or after ``max_iter`` products, in
    which case a warning is emitted and the last estimate is returned.
    """
    arr = _square(m, "matrix")
    rho, converged = kernels.power_iteration(arr, tol, max_iter)
    if not converged:
        warnings.warn(
            f"power iteration did not reach tol={tol:g} within {max_iter} "
            f"iterations; returning the last estimate {rho:.6g}",
            stacklevel=2)
    return float(rho)


def op_norm_1(m) -> float:
    """Operator 1-norm, the maximum absolute column sum."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"matrix must be 2-dimensional, got ndim={arr.ndim}")
    return float(np.abs(arr).sum(axis=0).max())


def neumann_inverse(a, tol: float = 1e-12, max_terms: int = 10_000) -> np.ndarray:
    """Sum the geometric series ``I + a + a^2 + ...`` for ``(I - a)^{-1}``.

    Truncates once the newest term's operator 1-norm drops below
    ``tol``. Requires a contraction: the spectral radius of ``a`` must be
    below one, which is checked before summing (through the cheap
    sufficient condition ``op_norm_1(a) < 1`` when it applies).

    Raises
    ------
    InstabilityError
        If ``spectral_radius(a) >= 1``.
    ConvergenceError
        If ``max_terms`` is reached first; the exception's ``partial``
        attribute carries the truncated sum.
    """
    arr = _square(a, "matrix")
    if op_norm_1(arr) >= 1.0 and spectral_radius(arr) >= 1.0:
        raise InstabilityError(
            "spectral radius is not below one, the series does not converge")
    n = arr.shape[0]
    total = np.eye(n)
    term = np.eye(n)
    for _ in range(max_terms):
        term = term @ arr
        total += term
        if op_norm_1(term) < tol:
            return total
    raise ConvergenceError(
        f"series did not reach tol={tol:g} within {max_terms} terms",
        partial=total)


def solve_i_minus(a, b) -> np.ndarray:
    """Solve ``(I - a) z = b`` by LU factorization with partial pivoting.

    The caller is responsible for ``spectral_radius(a) < 1``; an exactly
    singular ``I - a`` surfaces as :class:`InstabilityError`.
    """
    arr = _square(a, "a")
    rhs = np.ascontiguousarray(np.asarray(b, dtype=np.float64))
    if rhs.ndim != 2:
        raise DimensionError(f"b must be 2-dimensional, got ndim={rhs.ndim}")
    if rhs.shape[0] != arr.shape[0]:
        raise DimensionError(
            f"b has {rhs.shape[0]} rows, expected {arr.shape[0]}")
    try:
        return np.linalg.solve(np.eye(arr.shape[0]) - arr, rhs)
    except np.linalg.LinAlgError as exc:
        raise InstabilityError(f"I - a is singular: {exc}") from exc
