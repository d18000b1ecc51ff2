"""Non-negative matrix factorization with a latent feedback structure.

Factorizes endogenous data as ``Y1 ~ X @ (Theta1 @ Y1 + Theta2 @ Y2)``
with all factors non-negative and the basis ``X`` column-stochastic.
When the feedback operator ``X @ Theta1`` is a contraction the model has
a unique non-negative equilibrium ``Y1 = M @ Y2`` with
``M = (I - X @ Theta1)^{-1} @ X @ Theta2``, which is what the analysis
tools in this package quantify.
"""

from .errors import (
    ArtifactFormatError,
    ConvergenceError,
    DegenerateInputError,
    DimensionError,
    InstabilityError,
    InsufficientReplicatesError,
    NmfsemError,
    NoFeasibleModelError,
    NumericalError,
    ValidationError,
)
from .estimation import (
    Dataset,
    FitConfig,
    FitResult,
    Penalties,
    fit,
    init_basis,
    init_feedforward,
    loss,
    update_step,
)
from .evaluation import (
    BootstrapResult,
    EvalMetrics,
    bootstrap,
    mae,
    sc_cov,
    sc_map,
)
from .io import (
    ColumnSpec,
    RunArtifact,
    cv_result_to_csv,
    export_diagram,
    load_artifact,
    load_column_specs,
    load_dataset,
    save_artifact,
)
from .matrix import as_nonneg, neumann_inverse, op_norm_1, solve_i_minus, spectral_radius
from .model import (
    EquilibriumSummary,
    ModelParams,
    coefficient_matrix,
    equilibrium,
    neumann_terms,
    predict,
)
from .selection import (
    CvGrid,
    CvResult,
    cross_validate,
    default_grid,
    kfold_split,
)
from .simulation import (
    SimCondition,
    SimSummary,
    generate,
    run_study,
    study_fit_config,
    summaries_to_csv,
    summaries_to_text,
    table1_conditions,
)

__version__ = "0.1.0"
