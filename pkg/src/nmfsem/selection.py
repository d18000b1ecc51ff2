"""Hyperparameter selection by k-fold cross-validation.

The grid spans the two sparsity penalties (and optionally the rank q)
while the orthogonality penalty stays fixed. A cell's score is the mean
held-out equilibrium prediction error over folds; any fold whose fit is
unstable disqualifies the whole cell. Among stable cells the smallest
score wins, with exact ties resolved toward the sparser model: larger
``lambda_1 + lambda_2`` first, then larger ``lambda_1``, then smaller
``q``.
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import NoFeasibleModelError, ValidationError
from .estimation import Dataset, FitConfig, Penalties, fit
from .evaluation import mae
from .model import predict

__all__ = ["CvGrid", "CvResult", "kfold_split", "cross_validate", "default_grid"]

_DEFAULT_FACTORS = (0.0, 0.001, 0.01, 0.1, 1.0)


@dataclass(frozen=True)
class CvGrid:
    """Candidate penalties (and optionally ranks) to score."""

    lambda1_values: tuple[float, ...]
    lambda2_values: tuple[float, ...]
    lambda_x: float = 100.0
    k_folds: int = 5
    q_values: tuple[int, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "lambda1_values", tuple(self.lambda1_values))
        object.__setattr__(self, "lambda2_values", tuple(self.lambda2_values))
        if self.q_values is not None:
            object.__setattr__(self, "q_values", tuple(self.q_values))
        if not self.lambda1_values or not self.lambda2_values:
            raise ValidationError("the grid must contain at least one value "
                                  "per penalty")
        for vals, name in ((self.lambda1_values, "lambda1_values"),
                           (self.lambda2_values, "lambda2_values")):
            for v in vals:
                if not np.isfinite(v) or v < 0.0:
                    raise ValidationError(f"{name} must be finite and >= 0")
        if not np.isfinite(self.lambda_x) or self.lambda_x < 0.0:
            raise ValidationError("lambda_x must be finite and >= 0")
        if self.k_folds < 2:
            raise ValidationError(f"k_folds must be >= 2, got {self.k_folds}")
        if self.q_values is not None and any(q < 1 for q in self.q_values):
            raise ValidationError("q_values must be positive")


def default_grid(data: Dataset, k_folds: int = 5, lambda_x: float = 100.0) -> CvGrid:
    """Sparsity grid {0, 0.001, 0.01, 0.1, 1} scaled by the mean of y1."""
    scale = float(np.mean(data.y1))
    if scale <= 0.0:
        scale = 1.0
    values = tuple(f * scale for f in _DEFAULT_FACTORS)
    return CvGrid(lambda1_values=values, lambda2_values=values,
                  lambda_x=lambda_x, k_folds=k_folds)


@dataclass
class CvResult:
    """Scores per grid cell and the selected cell.

    Cells are keyed by ``(q, lambda_1, lambda_2)``. ``cell_mae`` holds
    NaN for unstable cells, which never win.
    """

    cell_mae: dict
    cell_stable: dict
    best: tuple
    fold_assignments: np.ndarray
    lambda_x: float = 100.0
    cell_order: list = field(default_factory=list)


def kfold_split(n: int, k: int, seed: int = 0) -> np.ndarray:
    """Shuffled fold labels for n observations; sizes differ by at most one."""
    if k < 2:
        raise ValidationError(f"k must be >= 2, got {k}")
    if k > n:
        raise ValidationError(f"k={k} exceeds the number of observations {n}")
    perm = np.random.default_rng(seed).permutation(n)
    labels = np.empty(n, dtype=np.intp)
    sizes = np.full(k, n // k)
    sizes[: n % k] += 1
    start = 0
    for f, size in enumerate(sizes):
        labels[perm[start:start + size]] = f
        start += size
    return labels


def cross_validate(data: Dataset, grid: CvGrid, base_config: FitConfig, *,
                   threads: int = 1) -> CvResult:
    """Score every grid cell by held-out equilibrium prediction error.

    For each cell and fold, the model is refit on the training columns
    and the held-out columns are predicted through the equilibrium map;
    the cell score is the mean held-out ``mae`` over folds. Cells with
    any unstable (or failed) fold fit are excluded from the argmin.

    Raises
    ------
    NoFeasibleModelError
        If every cell is unstable.
    """
    if threads < 1:
        raise ValidationError(f"threads must be >= 1, got {threads}")
    folds = kfold_split(data.n, grid.k_folds, base_config.seed)
    q_values = grid.q_values if grid.q_values is not None else (base_config.q,)

    min_train = data.n - int(np.max(np.bincount(folds)))
    if min_train < 2:
        raise ValidationError(
            f"k_folds={grid.k_folds} leaves only {min_train} training "
            "columns; at least 2 are required")
    if max(q_values) > min(data.p1, min_train):
        raise ValidationError(
            f"q={max(q_values)} exceeds min(p1, training columns) = "
            f"{min(data.p1, min_train)}")

    cells = [(int(q), float(l1), float(l2))
             for q in q_values
             for l1 in grid.lambda1_values
             for l2 in grid.lambda2_values]

    def run_fold(args):
        (q, l1, l2), f = args
        train = np.flatnonzero(folds != f)
        test = np.flatnonzero(folds == f)
        cfg = replace(base_config, q=q,
                      penalties=Penalties(lambda_x=grid.lambda_x,
                                          lambda_1=l1, lambda_2=l2))
        try:
            res = fit(data.take(train), cfg)
        except Exception:
            return None
        if not res.equilibrium.stable:
            return None
        predicted = predict(res.equilibrium, data.y2[:, test])
        return mae(data.y1[:, test], predicted)

    jobs = [(cell, f) for cell in cells for f in range(grid.k_folds)]
    if threads == 1:
        outcomes = [run_fold(j) for j in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run_fold, jobs))

    cell_mae = {}
    cell_stable = {}
    for i, cell in enumerate(cells):
        scores = outcomes[i * grid.k_folds:(i + 1) * grid.k_folds]
        if any(s is None for s in scores):
            cell_stable[cell] = False
            cell_mae[cell] = float("nan")
        else:
            cell_stable[cell] = True
            cell_mae[cell] = float(np.mean(scores))

    feasible = [c for c in cells if cell_stable[c]]
    if not feasible:
        raise NoFeasibleModelError(
            "every grid cell had an unstable fold fit")
    # Ties go to the sparser model: larger penalty sum, then larger
    # lambda_1, then smaller q.
    best = min(feasible,
               key=lambda c: (cell_mae[c], -(c[1] + c[2]), -c[1], c[0]))
    return CvResult(cell_mae=cell_mae, cell_stable=cell_stable, best=best,
                    fold_assignments=folds, lambda_x=grid.lambda_x,
                    cell_order=cells)
