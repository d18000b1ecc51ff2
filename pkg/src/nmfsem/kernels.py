"""Hot numeric loops, compiled with numba when available.

Backend contract
----------------
Every kernel exists twice: a pure numpy implementation (the ``*_py``
name) and a selected public name that may point at a numba-compiled
version of the same source. Selection happens once at import from the
``NMFSEM_BACKEND`` environment variable:

* ``numba`` (default): compile with ``numba.njit(cache=True, nogil=True)``,
  falling back to numpy with a warning if numba cannot be imported.
* ``numpy``: skip compilation entirely.

Both backends run the same statements, so results agree to floating
point round-off; the equivalence is covered by tests. ``nogil`` lets the
thread pools in the driver modules scale across cores.

The factorization kernels work on Gram matrices of the data
(``g11 = Y1 @ Y1.T`` and friends), which the callers precompute once per
dataset. The update and loss formulas are algebraically identical to
their definitions on the raw data; routing them through Grams makes the
per-iteration cost independent of the number of observations.

Shape conventions (all float64, C-contiguous):
    y1 : (p1, n)    endogenous data        y2 : (p2, n)  exogenous data
    x  : (p1, q)    basis, column-stochastic
    t1 : (q, p1)    latent feedback coefficients
    t2 : (q, p2)    exogenous pathway coefficients
"""

import os
import warnings

import numpy as np

_BACKEND_ENV = "NMFSEM_BACKEND"

# Column sums below this are treated as dead and reset to uniform.
_DEAD_COLUMN = 1e-12


def power_iteration_py(a, tol, max_iter):
    """Spectral radius of a non-negative square matrix.

    Iterates on ``a + shift*I`` with a small diagonal shift proportional
    to the matrix scale. For non-negative matrices the shift moves the
    dominant eigenvalue to ``rho + shift`` and breaks modulus ties with
    complex eigenvalues, so the all-ones start converges whenever the
    dominant pair is non-defective. Returns ``(rho, converged)``;
    ``converged`` is False when ``max_iter`` was exhausted first.
    """
    n = a.shape[0]
    scale = np.abs(a).sum(axis=0).max()
    if scale == 0.0:
        return 0.0, True
    shift = 0.05 * scale
    b = a + shift * np.eye(n)
    x = np.full(n, 1.0 / np.sqrt(n))
    lam = 0.0
    converged = False
    for it in range(max_iter):
        y = b @ x
        lam_new = np.sqrt(np.sum(y * y))
        if lam_new <= 1e-300:
            return 0.0, True
        x = y / lam_new
        if it > 0 and abs(lam_new - lam) <= tol * lam_new:
            lam = lam_new
            converged = True
            break
        lam = lam_new
    rho = lam - shift
    if rho < 0.0:
        rho = 0.0
    return rho, converged


def update_once_py(g11, g12, g21, g22, x, t1, t2, lam_x, lam_1, lam_2, eps):
    """One full multiplicative update: x, then t1, then t2.

    Each factor update uses the freshly updated values of the factors
    before it. Denominators are floored at ``eps`` so ratios stay finite;
    zeros in a factor are preserved by construction. After the x update
    its columns are rescaled to sum to one and the matching rows of t1
    and t2 are scaled inversely, which leaves ``x @ (t1 @ y1 + t2 @ y2)``
    and the feedback operator ``x @ t1`` unchanged. A column whose sum
    collapsed below 1e-12 is reset to uniform without compensation;
    the count of such resets is returned.
    """
    p1 = x.shape[0]
    q = x.shape[1]

    t1t = np.ascontiguousarray(t1.T)
    t2t = np.ascontiguousarray(t2.T)
    c1 = t1 @ g11 + t2 @ g21          # B @ y1.T
    c2 = t1 @ g12 + t2 @ g22          # B @ y2.T
    bbt = c1 @ t1t + c2 @ t2t         # B @ B.T

    xt = np.ascontiguousarray(x.T)
    gram = xt @ x
    off = gram.copy()
    for i in range(q):
        off[i, i] = 0.0

    den_x = np.maximum(x @ (bbt + lam_x * off), eps)
    xn = x * (c1.T / den_x)

    s = xn.sum(axis=0)
    n_reset = 0
    for j in range(q):
        if s[j] < _DEAD_COLUMN:
            xn[:, j] = 1.0 / p1
            s[j] = 1.0
            n_reset += 1
        else:
            xn[:, j] = xn[:, j] / s[j]
    sc = s.reshape(q, 1)
    t1s = t1 * sc
    t2s = t2 * sc

    xtn = np.ascontiguousarray(xn.T)
    gram2 = xtn @ xn
    c1s = t1s @ g11 + t2s @ g21
    den1 = np.maximum(gram2 @ c1s + lam_1, eps)
    t1n = t1s * ((xtn @ g11) / den1)

    c2s = t1n @ g12 + t2s @ g22
    den2 = np.maximum(gram2 @ c2s + lam_2, eps)
    t2n = t2s * ((xtn @ g12) / den2)

    return xn, t1n, t2n, n_reset


def loss_value_py(tr11, g11, g12, g21, g22, x, t1, t2, lam_x, lam_1, lam_2):
    """Penalized squared loss evaluated through the data Grams.

    ``tr11`` is ``sum(y1 * y1)``. The reconstruction part is clamped at
    zero: on near-exact fits the Gram formula can go negative by
    round-off.
    """
    q = x.shape[1]
    t1t = np.ascontiguousarray(t1.T)
    t2t = np.ascontiguousarray(t2.T)
    c1 = t1 @ g11 + t2 @ g21
    c2 = t1 @ g12 + t2 @ g22
    bbt = c1 @ t1t + c2 @ t2t
    xt = np.ascontiguousarray(x.T)
    gram = xt @ x
    cross = np.sum(xt * c1)
    recon = tr11 - 2.0 * cross + np.sum(gram * bbt)
    if recon < 0.0:
        recon = 0.0
    orth = 0.0
    for i in range(q):
        for j in range(q):
            if i != j:
                orth += gram[i, j] * gram[i, j]
    return recon + 0.5 * lam_x * orth + lam_1 * t1.sum() + lam_2 * t2.sum()


def _build_fit_loop(update_fn, loss_fn):
    """Bind a fit loop to one backend's update and loss kernels."""

    def fit_loop(tr11, g11, g12, g21, g22, x, t1, t2,
                 lam_x, lam_1, lam_2, eps, max_iter, rel_tol):
        """Run multiplicative updates until the loss stalls or iterations run out.

        Returns ``(x, t1, t2, trace, iterations, converged, status, n_reset)``.
        ``trace`` has ``iterations + 1`` entries, starting at the loss of
        the initial point. ``status`` is 0 on success and 1 when a
        non-finite loss appeared; in that case ``iterations`` is the
        failing update and the returned factors are the last computed.
        """
        trace = np.empty(max_iter + 1)
        prev = loss_fn(tr11, g11, g12, g21, g22, x, t1, t2, lam_x, lam_1, lam_2)
        trace[0] = prev
        iterations = 0
        converged = False
        status = 0
        n_reset = 0
        for it in range(1, max_iter + 1):
            x, t1, t2, resets = update_fn(g11, g12, g21, g22, x, t1, t2,
                                          lam_x, lam_1, lam_2, eps)
            n_reset += resets
            cur = loss_fn(tr11, g11, g12, g21, g22, x, t1, t2, lam_x, lam_1, lam_2)
            trace[it] = cur
            iterations = it
            if not np.isfinite(cur):
                status = 1
                break
            denom = prev if prev > 0.0 else 1.0
            if abs(prev - cur) <= rel_tol * denom:
                converged = True
                break
            prev = cur
        return x, t1, t2, trace[:iterations + 1], iterations, converged, status, n_reset

    return fit_loop


fit_loop_py = _build_fit_loop(update_once_py, loss_value_py)


def _select_backend():
    requested = os.environ.get(_BACKEND_ENV, "numba").strip().lower()
    if requested not in ("numba", "numpy"):
        warnings.warn(
            f"unknown {_BACKEND_ENV}={requested!r}, expected 'numba' or 'numpy'; "
            "using numba", stacklevel=2)
        requested = "numba"
    if requested == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        warnings.warn("numba is not importable; falling back to the numpy backend",
                      stacklevel=2)
        return "numpy"
    return "numba"


BACKEND = _select_backend()
USING_NUMBA = BACKEND == "numba"

if USING_NUMBA:
    from numba import njit

    _jit = njit(cache=True, nogil=True)
    power_iteration = _jit(power_iteration_py)
    update_once = _jit(update_once_py)
    loss_value = _jit(loss_value_py)
    fit_loop = _jit(_build_fit_loop(update_once, loss_value))
else:
    power_iteration = power_iteration_py
    update_once = update_once_py
    loss_value = loss_value_py
    fit_loop = fit_loop_py
