"""CSV ingestion, preprocessing, diagram export, and run artifacts.

Preprocessing applies a fixed per-variable pipeline: optional transform
(``log1p``, or ``reverse`` meaning column maximum minus value), optional
protective sign flip (multiply by -1), then min-max rescaling to [0, 1].
Variables become rows and observations columns, so a CSV with one row
per observation turns into the (variables, observations) orientation
used everywhere else in the package.

Artifacts bundle one complete analysis (fit, optional cross-validation
and bootstrap, provenance) into a versioned JSON document with explicit
matrix shapes and row-major value arrays; finite values round-trip
exactly. Diagrams are Graphviz DOT text with deterministic node and
edge ordering, so identical inputs produce byte-identical output.
"""

from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ArtifactFormatError,
    DegenerateInputError,
    DimensionError,
    ValidationError,
)
from .estimation import Dataset, FitResult
from .evaluation import BootstrapResult, EvalMetrics
from .model import EquilibriumSummary, ModelParams
from .selection import CvResult

SCHEMA_VERSION = "1"

_ROLES = ("endogenous", "exogenous", "ignore")
_TRANSFORMS = ("none", "log1p", "reverse")
_SPEC_KEYS = {"role", "transform", "protective"}


@dataclass(frozen=True)
class ColumnSpec:
    """How one CSV column enters the model.

    ``role`` routes the column (endogenous, exogenous, or ignore),
    ``transform`` is applied before rescaling, and ``protective``
    flips the sign so that larger always means more of the outcome.
    """

    name: str
    role: str
    transform: str = "none"
    protective: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.name, str) or not self.name:
            raise ValidationError("column name must be a non-empty string")
        if self.role not in _ROLES:
            raise ValidationError(
                f"column {self.name!r}: role must be one of {_ROLES}, "
                f"got {self.role!r}")
        if self.transform not in _TRANSFORMS:
            raise ValidationError(
                f"column {self.name!r}: transform must be one of "
                f"{_TRANSFORMS}, got {self.transform!r}")
        if not isinstance(self.protective, bool):
            raise ValidationError(
                f"column {self.name!r}: protective must be true or false, "
                f"got {self.protective!r}")


def load_column_specs(path) -> list[ColumnSpec]:
    """Read column specs from a JSON object, preserving key order.

    Each key is a column name; each value is either a role string or an
    object with ``role`` and optional ``transform`` and ``protective``
    fields.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict) or not raw:
        raise ValidationError(
            f"{path}: expected a non-empty JSON object mapping column "
            "names to specs")
    specs = []
    for name, value in raw.items():
        if isinstance(value, str):
            specs.append(ColumnSpec(name, value))
        elif isinstance(value, dict):
            unknown = set(value) - _SPEC_KEYS
            if unknown:
                raise ValidationError(
                    f"{path}: column {name!r} has unknown keys "
                    f"{sorted(unknown)}")
            if "role" not in value:
                raise ValidationError(
                    f"{path}: column {name!r} is missing 'role'")
            specs.append(ColumnSpec(
                name, value["role"],
                value.get("transform", "none"),
                value.get("protective", False)))
        else:
            raise ValidationError(
                f"{path}: column {name!r} must map to a role string or "
                "an object")
    return specs


def _parse_cell(cell: str, path, line_no: int, name: str) -> float:
    text = cell.strip()
    if text == "":
        raise ValidationError(
            f"{path}: missing value at line {line_no}, column {name!r}")
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(
            f"{path}: non-numeric cell {text!r} at line {line_no}, "
            f"column {name!r}") from None
    if not math.isfinite(value):
        raise ValidationError(
            f"{path}: non-finite cell {text!r} at line {line_no}, "
            f"column {name!r}")
    return value


def _prepare_column(spec: ColumnSpec, values: list[float], path) -> np.ndarray:
    v = np.array(values, dtype=np.float64)
    if spec.transform == "log1p":
        bad = np.nonzero(v <= -1.0)[0]
        if bad.size:
            line_no = int(bad[0]) + 2
            raise ValidationError(
                f"{path}: log1p needs values greater than -1, got "
                f"{v[bad[0]]} at line {line_no}, column {spec.name!r}")
        v = np.log1p(v)
    elif spec.transform == "reverse":
        v = v.max() - v
    if spec.protective:
        v = -v
    lo = v.min()
    hi = v.max()
    if hi - lo <= 0.0:
        raise DegenerateInputError(
            f"{path}: column {spec.name!r} has zero range after "
            "transforms; constant variables cannot be rescaled")
    return (v - lo) / (hi - lo)


def load_dataset(path, specs) -> Dataset:
    """Read a CSV with header into a preprocessed Dataset.

    Every CSV column must be covered by exactly one spec and every spec
    must match a column. Cells of ignored columns are not parsed. Rows
    of the result follow spec order within each role. The header is
    line 1; data lines are numbered from 2, and cell errors report both
    the line number and the column name.
    """
    specs = list(specs)
    if not specs:
        raise ValidationError("column specs are empty")
    names = [s.name for s in specs]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise ValidationError(f"duplicate column specs: {dupes}")
    by_name = {s.name: s for s in specs}

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValidationError(
                f"{path}: empty file, expected a header row") from None
        if len(set(header)) != len(header):
            dupes = sorted({h for h in header if header.count(h) > 1})
            raise ValidationError(f"{path}: duplicate header columns {dupes}")
        uncovered = [h for h in header if h not in by_name]
        if uncovered:
            raise ValidationError(
                f"{path}: no column spec for {uncovered[0]!r}")
        absent = [n for n in names if n not in set(header)]
        if absent:
            raise ValidationError(
                f"{path}: spec column {absent[0]!r} not found in the "
                "CSV header")

        used = [(header.index(s.name), s) for s in specs
                if s.role != "ignore"]
        if not any(s.role == "endogenous" for _, s in used):
            raise ValidationError(
                f"{path}: at least one endogenous column is required")
        if not any(s.role == "exogenous" for _, s in used):
            raise ValidationError(
                f"{path}: at least one exogenous column is required")

        columns: dict[str, list[float]] = {s.name: [] for _, s in used}
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ValidationError(
                    f"{path}: line {line_no} has {len(row)} cells, the "
                    f"header has {len(header)}")
            for idx, spec in used:
                columns[spec.name].append(
                    _parse_cell(row[idx], path, line_no, spec.name))

    n = len(next(iter(columns.values())))
    if n < 2:
        raise ValidationError(
            f"{path}: needs at least 2 data rows, got {n}")

    y1_rows = [_prepare_column(s, columns[s.name], path)
               for _, s in used if s.role == "endogenous"]
    y2_rows = [_prepare_column(s, columns[s.name], path)
               for _, s in used if s.role == "exogenous"]
    return Dataset(np.array(y1_rows), np.array(y2_rows))


def _dot_quote(text: str) -> str:
    return text.replace("\\", "\\\\").replace('"', '\\"')


def _names(given, count: int, fallback: str, what: str) -> list[str]:
    if given is None:
        return [f"{fallback}{i + 1}" for i in range(count)]
    out = [str(v) for v in given]
    if len(out) != count:
        raise DimensionError(
            f"{what} names: expected {count}, got {len(out)}")
    return out


def export_diagram(result: FitResult, edge_threshold: float | None = None,
                   endo_names=None, exo_names=None) -> str:
    """Render a fitted model as Graphviz DOT text.

    Three ranks left to right: exogenous variables, latent factors
    F1..FQ, endogenous variables. Solid edges carry the driver weights
    (exogenous to factor) and the basis weights (factor to endogenous);
    dashed edges carry the feedback weights (endogenous to factor). An
    edge is drawn when its weight is positive and at least the
    threshold; without an explicit threshold each matrix uses 5% of its
    own maximum weight. A caption node reports the feedback spectral
    radius and, for stable fits, the amplification ratio; unstable fits
    get a warning node instead.
    """
    params = result.params
    p1, p2, q = params.p1, params.p2, params.q
    endo = _names(endo_names, p1, "y1_", "endogenous")
    exo = _names(exo_names, p2, "y2_", "exogenous")
    if edge_threshold is not None:
        edge_threshold = float(edge_threshold)
        if not math.isfinite(edge_threshold) or edge_threshold < 0.0:
            raise ValidationError(
                f"edge_threshold must be finite and >= 0, got "
                f"{edge_threshold}")

    def threshold(m: np.ndarray) -> float:
        if edge_threshold is not None:
            return edge_threshold
        return 0.05 * float(m.max())

    lines = [
        "digraph model {",
        "  rankdir=LR;",
        '  node [fontname="Helvetica"];',
        "  { rank=same;",
    ]
    for j, name in enumerate(exo):
        lines.append(f'    z{j + 1} [label="{_dot_quote(name)}"];')
    lines.append("  }")
    lines.append("  { rank=same;")
    for k in range(q):
        lines.append(f'    f{k + 1} [label="F{k + 1}", shape=box];')
    lines.append("  }")
    lines.append("  { rank=same;")
    for i, name in enumerate(endo):
        lines.append(f'    y{i + 1} [label="{_dot_quote(name)}"];')
    lines.append("  }")

    thr = threshold(params.theta2)
    for k in range(q):
        for j in range(p2):
            w = params.theta2[k, j]
            if w > 0.0 and w >= thr:
                lines.append(
                    f'  z{j + 1} -> f{k + 1} [label="{w:.3f}"];')
    thr = threshold(params.x)
    for i in range(p1):
        for k in range(q):
            w = params.x[i, k]
            if w > 0.0 and w >= thr:
                lines.append(
                    f'  f{k + 1} -> y{i + 1} [label="{w:.3f}"];')
    thr = threshold(params.theta1)
    for k in range(q):
        for i in range(p1):
            w = params.theta1[k, i]
            if w > 0.0 and w >= thr:
                lines.append(
                    f'  y{i + 1} -> f{k + 1} '
                    f'[label="{w:.3f}", style=dashed];')

    eq = result.equilibrium
    if eq.stable:
        lines.append(
            f'  caption [shape=note, '
            f'label="rho = {eq.rho:.3f}\\nAR = {eq.ar:.3f}"];')
    else:
        lines.append(
            f'  warning [shape=note, color=red, '
            f'label="unstable fit: rho = {eq.rho:.3f} >= 1\\n'
            f'no equilibrium, AR undefined"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


@dataclass
class RunArtifact:
    """Serialized bundle of one analysis run."""

    fit: FitResult
    cv: CvResult | None = None
    bootstrap: BootstrapResult | None = None
    provenance: dict = field(default_factory=dict)


def _encode_matrix(m: np.ndarray) -> dict:
    a = np.asarray(m, dtype=np.float64)
    return {
        "rows": int(a.shape[0]),
        "cols": int(a.shape[1]),
        "values": [float(v) for v in a.ravel()],
    }


def _get(obj, key: str, where: str):
    if not isinstance(obj, dict):
        raise ArtifactFormatError(f"{where}: expected an object")
    if key not in obj:
        raise ArtifactFormatError(f"{where}: missing field {key!r}")
    return obj[key]


def _as_float(value, where: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ArtifactFormatError(f"{where}: expected a number")
    return float(value)


def _as_int(value, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ArtifactFormatError(f"{where}: expected an integer")
    return value


def _decode_matrix(obj, where: str) -> np.ndarray:
    rows = _as_int(_get(obj, "rows", where), f"{where}.rows")
    cols = _as_int(_get(obj, "cols", where), f"{where}.cols")
    if rows < 1 or cols < 1:
        raise ArtifactFormatError(
            f"{where}: empty matrix ({rows} x {cols})")
    values = _get(obj, "values", where)
    if not isinstance(values, list) or len(values) != rows * cols:
        raise ArtifactFormatError(
            f"{where}: expected {rows * cols} values")
    m = np.array([_as_float(v, f"{where}.values") for v in values],
                 dtype=np.float64).reshape(rows, cols)
    m.setflags(write=False)
    return m


def _encode_fit(fit: FitResult) -> dict:
    eq = fit.equilibrium
    metrics = None
    if fit.metrics is not None:
        metrics = {
            "sc_map": float(fit.metrics.sc_map),
            "sc_cov": float(fit.metrics.sc_cov),
            "mae": float(fit.metrics.mae),
        }
    return {
        "params": {
            "x": _encode_matrix(fit.params.x),
            "theta1": _encode_matrix(fit.params.theta1),
            "theta2": _encode_matrix(fit.params.theta2),
        },
        "m_simple": _encode_matrix(fit.m_simple),
        "loss_trace": [float(v) for v in fit.loss_trace],
        "iterations": int(fit.iterations),
        "converged": bool(fit.converged),
        "equilibrium": {
            "rho": float(eq.rho),
            "stable": bool(eq.stable),
            "m_direct": _encode_matrix(eq.m_direct),
            "m_model": (None if eq.m_model is None
                        else _encode_matrix(eq.m_model)),
            "ar": None if eq.ar is None else float(eq.ar),
            "ar_upper_bound": (None if eq.ar_upper_bound is None
                               else float(eq.ar_upper_bound)),
        },
        "metrics": metrics,
    }


def _decode_fit(obj) -> FitResult:
    params_obj = _get(obj, "params", "fit")
    params = ModelParams(
        _decode_matrix(_get(params_obj, "x", "fit.params"), "fit.params.x"),
        _decode_matrix(_get(params_obj, "theta1", "fit.params"),
                       "fit.params.theta1"),
        _decode_matrix(_get(params_obj, "theta2", "fit.params"),
                       "fit.params.theta2"))
    eq_obj = _get(obj, "equilibrium", "fit")
    m_model_obj = _get(eq_obj, "m_model", "fit.equilibrium")
    ar = _get(eq_obj, "ar", "fit.equilibrium")
    bound = _get(eq_obj, "ar_upper_bound", "fit.equilibrium")
    equilibrium = EquilibriumSummary(
        m_model=(None if m_model_obj is None
                 else _decode_matrix(m_model_obj, "fit.equilibrium.m_model")),
        m_direct=_decode_matrix(_get(eq_obj, "m_direct", "fit.equilibrium"),
                                "fit.equilibrium.m_direct"),
        rho=_as_float(_get(eq_obj, "rho", "fit.equilibrium"),
                      "fit.equilibrium.rho"),
        ar=None if ar is None else _as_float(ar, "fit.equilibrium.ar"),
        ar_upper_bound=(None if bound is None else
                        _as_float(bound, "fit.equilibrium.ar_upper_bound")),
        stable=bool(_get(eq_obj, "stable", "fit.equilibrium")))
    metrics_obj = _get(obj, "metrics", "fit")
    metrics = None
    if metrics_obj is not None:
        metrics = EvalMetrics(
            sc_map=_as_float(_get(metrics_obj, "sc_map", "fit.metrics"),
                             "fit.metrics.sc_map"),
            sc_cov=_as_float(_get(metrics_obj, "sc_cov", "fit.metrics"),
                             "fit.metrics.sc_cov"),
            mae=_as_float(_get(metrics_obj, "mae", "fit.metrics"),
                          "fit.metrics.mae"))
    trace_obj = _get(obj, "loss_trace", "fit")
    if not isinstance(trace_obj, list):
        raise ArtifactFormatError("fit.loss_trace: expected a list")
    trace = np.array([_as_float(v, "fit.loss_trace") for v in trace_obj],
                     dtype=np.float64)
    trace.setflags(write=False)
    m_simple = _decode_matrix(_get(obj, "m_simple", "fit"), "fit.m_simple")
    return FitResult(
        params=params,
        m_simple=m_simple,
        loss_trace=trace,
        iterations=_as_int(_get(obj, "iterations", "fit"), "fit.iterations"),
        converged=bool(_get(obj, "converged", "fit")),
        equilibrium=equilibrium,
        metrics=metrics)


def _encode_cv(cv: CvResult) -> dict:
    cells = []
    for cell in cv.cell_order:
        q, l1, l2 = cell
        cells.append({
            "q": int(q),
            "lambda1": float(l1),
            "lambda2": float(l2),
            "mae": float(cv.cell_mae[cell]),
            "stable": bool(cv.cell_stable[cell]),
        })
    return {
        "lambda_x": float(cv.lambda_x),
        "best": [int(cv.best[0]), float(cv.best[1]), float(cv.best[2])],
        "fold_assignments": [int(v) for v in cv.fold_assignments],
        "cells": cells,
    }


def _decode_cv(obj) -> CvResult:
    cells_obj = _get(obj, "cells", "cv")
    if not isinstance(cells_obj, list):
        raise ArtifactFormatError("cv.cells: expected a list")
    cell_mae: dict = {}
    cell_stable: dict = {}
    order = []
    for i, cell_obj in enumerate(cells_obj):
        where = f"cv.cells[{i}]"
        cell = (_as_int(_get(cell_obj, "q", where), f"{where}.q"),
                _as_float(_get(cell_obj, "lambda1", where),
                          f"{where}.lambda1"),
                _as_float(_get(cell_obj, "lambda2", where),
                          f"{where}.lambda2"))
        cell_mae[cell] = _as_float(_get(cell_obj, "mae", where),
                                   f"{where}.mae")
        cell_stable[cell] = bool(_get(cell_obj, "stable", where))
        order.append(cell)
    best_obj = _get(obj, "best", "cv")
    if not isinstance(best_obj, list) or len(best_obj) != 3:
        raise ArtifactFormatError("cv.best: expected [q, lambda1, lambda2]")
    folds_obj = _get(obj, "fold_assignments", "cv")
    if not isinstance(folds_obj, list):
        raise ArtifactFormatError("cv.fold_assignments: expected a list")
    folds = np.array([_as_int(v, "cv.fold_assignments") for v in folds_obj],
                     dtype=np.intp)
    folds.setflags(write=False)
    return CvResult(
        cell_mae=cell_mae,
        cell_stable=cell_stable,
        best=(_as_int(best_obj[0], "cv.best.q"),
              _as_float(best_obj[1], "cv.best.lambda1"),
              _as_float(best_obj[2], "cv.best.lambda2")),
        fold_assignments=folds,
        lambda_x=_as_float(_get(obj, "lambda_x", "cv"), "cv.lambda_x"),
        cell_order=order)


def _encode_bootstrap(bs: BootstrapResult) -> dict:
    return {
        "rho_point": float(bs.rho_point),
        "ar_point": None if bs.ar_point is None else float(bs.ar_point),
        "rho_interval": [float(bs.rho_interval[0]),
                         float(bs.rho_interval[1])],
        "ar_interval": [float(bs.ar_interval[0]), float(bs.ar_interval[1])],
        "rho_values": [float(v) for v in bs.rho_values],
        "ar_values": [float(v) for v in bs.ar_values],
        "n_unstable": int(bs.n_unstable),
        "b": int(bs.b),
    }


def _decode_bootstrap(obj) -> BootstrapResult:
    def interval(key: str) -> tuple[float, float]:
        pair = _get(obj, key, "bootstrap")
        if not isinstance(pair, list) or len(pair) != 2:
            raise ArtifactFormatError(
                f"bootstrap.{key}: expected [lo, hi]")
        return (_as_float(pair[0], f"bootstrap.{key}"),
                _as_float(pair[1], f"bootstrap.{key}"))

    def values(key: str) -> np.ndarray:
        seq = _get(obj, key, "bootstrap")
        if not isinstance(seq, list):
            raise ArtifactFormatError(f"bootstrap.{key}: expected a list")
        out = np.array([_as_float(v, f"bootstrap.{key}") for v in seq],
                       dtype=np.float64)
        out.setflags(write=False)
        return out

    ar_point = _get(obj, "ar_point", "bootstrap")
    return BootstrapResult(
        rho_point=_as_float(_get(obj, "rho_point", "bootstrap"),
                            "bootstrap.rho_point"),
        ar_point=(None if ar_point is None
                  else _as_float(ar_point, "bootstrap.ar_point")),
        rho_interval=interval("rho_interval"),
        ar_interval=interval("ar_interval"),
        rho_values=values("rho_values"),
        ar_values=values("ar_values"),
        n_unstable=_as_int(_get(obj, "n_unstable", "bootstrap"),
                           "bootstrap.n_unstable"),
        b=_as_int(_get(obj, "b", "bootstrap"), "bootstrap.b"))


def save_artifact(artifact: RunArtifact, path) -> None:
    """Write an artifact as versioned JSON, atomically.

    The document is written to a temporary file in the target
    directory and renamed into place, so a failed save never leaves a
    partial artifact behind.
    """
    if not isinstance(artifact.provenance, dict):
        raise ValidationError("provenance must be a dict")
    payload = {
        "schema_version": SCHEMA_VERSION,
        "provenance": artifact.provenance,
        "fit": _encode_fit(artifact.fit),
        "cv": None if artifact.cv is None else _encode_cv(artifact.cv),
        "bootstrap": (None if artifact.bootstrap is None
                      else _encode_bootstrap(artifact.bootstrap)),
    }
    try:
        text = json.dumps(payload, indent=2)
    except (TypeError, ValueError) as exc:
        raise ValidationError(
            f"artifact is not JSON-serializable: {exc}") from None
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".artifact-",
                               suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def load_artifact(path) -> RunArtifact:
    """Read an artifact written by save_artifact, checking the schema."""
    with open(path, encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ArtifactFormatError(
                f"{path}: not valid JSON ({exc})") from None
    if not isinstance(payload, dict):
        raise ArtifactFormatError(f"{path}: expected a JSON object")
    version = payload.get("schema_version")
    if version is None:
        raise ArtifactFormatError(f"{path}: missing schema_version")
    if version != SCHEMA_VERSION:
        raise ArtifactFormatError(
            f"{path}: unsupported schema_version {version!r}, expected "
            f"{SCHEMA_VERSION!r}; regenerate the artifact with this "
            "release")
    provenance = payload.get("provenance", {})
    if not isinstance(provenance, dict):
        raise ArtifactFormatError(f"{path}: provenance must be an object")
    cv_obj = payload.get("cv")
    bs_obj = payload.get("bootstrap")
    return RunArtifact(
        fit=_decode_fit(_get(payload, "fit", path)),
        cv=None if cv_obj is None else _decode_cv(cv_obj),
        bootstrap=None if bs_obj is None else _decode_bootstrap(bs_obj),
        provenance=provenance)


def cv_result_to_csv(cv: CvResult) -> str:
    """Cross-validation table as CSV, one row per grid cell."""
    import io as stringio

    buf = stringio.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["q", "lambda1", "lambda2", "mae", "stable", "selected"])
    for cell in cv.cell_order:
        q, l1, l2 = cell
        writer.writerow([
            q, repr(float(l1)), repr(float(l2)),
            repr(float(cv.cell_mae[cell])),
            int(cv.cell_stable[cell]),
            int(cell == cv.best),
        ])
    return buf.getvalue()
