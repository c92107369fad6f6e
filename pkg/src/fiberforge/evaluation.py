"""Percentage errors against holdout cell means, and loss-curve diagnostics."""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .pipelines import DESIGN, PREDICT, snap_bath
from .synthdata import CELLS, FEATURE_NAMES, FiberFeatures

DESIGN_TARGETS = ("sheath_flow", "core_flow")


class UndefinedReferenceError(ZeroDivisionError):
    """Percentage error requested against a zero reference value."""


def percent_error(predicted: float, reference: float) -> float:
    """``(predicted - reference) / reference * 100``; positive means over-prediction."""
    if reference == 0:
        raise UndefinedReferenceError("percentage error is undefined for a zero reference value")
    return (predicted - reference) / reference * 100.0


def _reference_names(direction):
    if direction == PREDICT:
        return FEATURE_NAMES
    if direction == DESIGN:
        return DESIGN_TARGETS
    raise ValueError(f"unknown direction {direction!r}")


def _value(record, name):
    if name in FEATURE_NAMES:
        return getattr(record.features, name)
    return getattr(record.params, name)


@dataclass(frozen=True)
class CellReference:
    direction: str
    means: dict  # cell_id -> {quantity: mean}
    counts: dict  # cell_id -> n holdout records


def cell_reference(holdout, direction: str) -> CellReference:
    names = _reference_names(direction)
    by_cell = {c: [] for c in CELLS}
    for r in holdout:
        by_cell[r.cell].append(r)
    means, counts = {}, {}
    for cell, recs in by_cell.items():
        if not recs:
            raise ValueError(f"holdout has no records for cell {cell.id}")
        means[cell.id] = {n: math.fsum(_value(r, n) for r in recs) / len(recs) for n in names}
        counts[cell.id] = len(recs)
    return CellReference(direction, means, counts)


@dataclass(frozen=True)
class CellError:
    mean_signed_pct: float
    mean_abs_pct: float
    n: int
    # population std of per-record signed errors; 0 for predictive rows,
    # which come from a single query per cell
    sd_signed_pct: float = 0.0


@dataclass
class ErrorReport:
    task: str
    rows: dict  # (cell_id, quantity) -> CellError, cell-major in CELLS order
    confusion: Optional[dict] = None  # (true_bath, pred_bath) -> count, design only
    batch_size: Optional[int] = None

    def mape(self, cell_id: str, quantity: str) -> float:
        return self.rows[(cell_id, quantity)].mean_abs_pct

    def quantities(self):
        return _reference_names(self.task)

    def overall_mape(self, quantity: str) -> float:
        """Record-weighted mean absolute error over all cells."""
        rows = [e for (c, q), e in self.rows.items() if q == quantity]
        return math.fsum(e.mean_abs_pct * e.n for e in rows) / sum(e.n for e in rows)

    def bath_accuracy(self) -> float:
        if self.confusion is None:
            raise ValueError("bath accuracy only exists for design reports")
        total = sum(self.confusion.values())
        return sum(v for (t, p), v in self.confusion.items() if t == p) / total


def evaluate_predictive(m, holdout, batch_size=None) -> ErrorReport:
    """One query per cell at its fixed manufacturing parameters vs holdout means."""
    if m.direction != PREDICT:
        raise ValueError(f"expected a predict model, got {m.direction}")
    ref = cell_reference(holdout, PREDICT)
    rows = {}
    for cell in CELLS:
        pred = m.predict_features(cell.params)
        for name in FEATURE_NAMES:
            pe = percent_error(getattr(pred, name), ref.means[cell.id][name])
            rows[(cell.id, name)] = CellError(pe, abs(pe), ref.counts[cell.id])
    return ErrorReport(PREDICT, rows, None, batch_size)


def evaluate_design(m, holdout, batch_size=None) -> ErrorReport:
    """One query per holdout record; flows vs the cell reference, bath via snapping."""
    if m.direction != DESIGN:
        raise ValueError(f"expected a design model, got {m.direction}")
    records = list(holdout)
    ref = cell_reference(records, DESIGN)
    feats = np.array([r.features.as_tuple() for r in records], dtype=np.float64).reshape(-1, 4)
    raw = np.asarray(m.design_raw(feats), dtype=np.float64)
    confusion = {(t, p): 0 for t in (0.0, 5.0) for p in (0.0, 5.0)}
    errs = {(c.id, q): [] for c in CELLS for q in DESIGN_TARGETS}
    for r, out in zip(records, raw):
        cid = r.cell.id
        errs[(cid, "sheath_flow")].append(percent_error(out[0], ref.means[cid]["sheath_flow"]))
        errs[(cid, "core_flow")].append(percent_error(out[1], ref.means[cid]["core_flow"]))
        confusion[(r.params.bath_conc, snap_bath(out[2]))] += 1
    rows = {}
    for key, e in errs.items():
        e = np.array(e)
        rows[key] = CellError(float(e.mean()), float(np.abs(e).mean()), int(e.size), float(e.std()))
    return ErrorReport(DESIGN, rows, confusion, batch_size)


def evaluate(m, holdout, batch_size=None) -> ErrorReport:
    if m.direction == PREDICT:
        return evaluate_predictive(m, holdout, batch_size)
    return evaluate_design(m, holdout, batch_size)


class OracleMeansModel:
    """Stand-in model that answers with the holdout truth.

    Predict direction returns each cell's holdout feature means; design
    direction maps each known feature vector back to its record's cell
    parameters. Evaluating it on the same holdout gives all-zero errors.
    """

    def __init__(self, direction: str, holdout):
        records = list(holdout)
        self.direction = direction
        self._ref = cell_reference(records, PREDICT) if direction == PREDICT else None
        self._lookup = {r.features.as_tuple(): r.params.as_tuple() for r in records}

    def predict_features(self, p) -> FiberFeatures:
        for cell in CELLS:
            if cell.params == p:
                return FiberFeatures(*(self._ref.means[cell.id][n] for n in FEATURE_NAMES))
        raise KeyError(f"no holdout cell with parameters {p}")

    def design_raw(self, features) -> np.ndarray:
        return np.array([self._lookup[tuple(float(v) for v in row)] for row in np.asarray(features)])


@dataclass(frozen=True)
class OverfitDiagnostic:
    final_training_loss: float
    final_validation_loss: float
    ratio: float  # validation / training
    best_validation_epoch: int  # 1-based
    rising_tail: bool


def overfit_diagnostic(curve, k: int = 5) -> OverfitDiagnostic:
    """``rising_tail`` is set when the last ``k`` validation losses strictly increase."""
    tl, vl = list(curve.training_loss), list(curve.validation_loss)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > len(vl):
        raise ValueError(f"k={k} exceeds the curve length {len(vl)}")
    ft, fv = tl[-1], vl[-1]
    if ft > 0:
        ratio = fv / ft
    else:
        ratio = 1.0 if fv == 0 else math.inf
    best = min(range(len(vl)), key=lambda i: vl[i]) + 1
    tail = vl[-k:]
    rising = all(b > a for a, b in zip(tail, tail[1:]))
    return OverfitDiagnostic(ft, fv, ratio, best, rising)
