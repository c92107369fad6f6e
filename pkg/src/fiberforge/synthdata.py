"""Fiber statistics, Gaussian synthetic records, splitting and CSV I/O.

Generation order is fixed so that a seed pins down every value:

* cells are visited in :data:`CELLS` order (0% bath first, then 5%; within a
  bath the ratios 100:10, 125:10, 125:15), ``per_cell`` records each;
* within a record the features are drawn as length, width, porosity,
  Young's modulus, one :func:`~fiberforge.rng.gaussian_sample` each, from a
  single :class:`~fiberforge.rng.Rng` seeded with the dataset seed.

Manufacturing parameters are never sampled. Sampled features are never
clamped, so porosity above 100% or negative values can appear.
"""

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .rng import Rng, gaussian_sample

FEATURE_NAMES = ("length", "width", "porosity", "youngs_modulus")
PARAM_NAMES = ("sheath_flow", "core_flow", "bath_conc")

CSV_COLUMNS = (
    "sheath_ul_min",
    "core_ul_min",
    "bath_pct",
    "length_um",
    "width_um",
    "porosity_pct",
    "youngs_mpa",
    "cell_id",
)


class CsvFormatError(ValueError):
    """A dataset file does not follow the record schema."""


@dataclass(frozen=True)
class ManufacturingParams:
    sheath_flow: float  # uL/min
    core_flow: float  # uL/min
    bath_conc: float  # % CaCl2

    def __post_init__(self):
        if not (self.sheath_flow > 0 and self.core_flow > 0):
            raise ValueError(
                f"flow rates must be positive, got sheath={self.sheath_flow}, core={self.core_flow}"
            )
        if not self.bath_conc >= 0:
            raise ValueError(f"bath concentration must be >= 0, got {self.bath_conc}")

    def as_tuple(self):
        return (self.sheath_flow, self.core_flow, self.bath_conc)


@dataclass(frozen=True)
class FiberFeatures:
    length: float  # um
    width: float  # um
    porosity: float  # %
    youngs_modulus: float  # MPa

    def __post_init__(self):
        for name in FEATURE_NAMES:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")

    def as_tuple(self):
        return (self.length, self.width, self.porosity, self.youngs_modulus)


@dataclass(frozen=True)
class Cell:
    """One experimental condition: a bath concentration and a sheath:core ratio."""

    bath_conc: float
    sheath_flow: float
    core_flow: float

    @property
    def id(self) -> str:
        return f"b{self.bath_conc:g}_r{self.sheath_flow:g}_{self.core_flow:g}"

    @property
    def frr(self) -> str:
        return f"{self.sheath_flow:g}:{self.core_flow:g}"

    @property
    def params(self) -> ManufacturingParams:
        return ManufacturingParams(self.sheath_flow, self.core_flow, self.bath_conc)


CELLS = tuple(
    Cell(float(bath), float(sheath), float(core))
    for bath in (0, 5)
    for sheath, core in ((100, 10), (125, 10), (125, 15))
)
CELLS_BY_ID = {c.id: c for c in CELLS}


def cell_by_id(cell_id: str) -> Cell:
    try:
        return CELLS_BY_ID[cell_id]
    except KeyError:
        raise ValueError(f"unknown cell id {cell_id!r}; expected one of {sorted(CELLS_BY_ID)}") from None


# (bath %, sheath:core) -> feature -> (mean, std), as measured for solid alginate fibers
_TABLE = {
    (0, "125:15"): {"porosity": (93.8, 19.8), "length": (24.8, 1.98), "width": (19.5, 1.38), "youngs_modulus": (1750.0, 375.0)},
    (0, "100:10"): {"porosity": (22.4, 2.41), "length": (16.7, 3.44), "width": (14.4, 1.70), "youngs_modulus": (402.0, 114.0)},
    (0, "125:10"): {"porosity": (51.6, 18.3), "length": (20.0, 1.36), "width": (16.9, 1.27), "youngs_modulus": (1270.0, 303.0)},
    (5, "125:15"): {"porosity": (76.3, 9.47), "length": (21.2, 1.19), "width": (20.6, 1.86), "youngs_modulus": (6010.0, 2300.0)},
    (5, "100:10"): {"porosity": (12.2, 2.49), "length": (7.86, 1.29), "width": (6.51, 0.991), "youngs_modulus": (15900.0, 6230.0)},
    (5, "125:10"): {"porosity": (19.0, 6.40), "length": (10.3, 1.86), "width": (8.24, 1.34), "youngs_modulus": (8560.0, 1460.0)},
}


class StatsTable:
    """Read-only ``(cell, feature) -> (mean, std)`` registry."""

    def __init__(self, entries: dict):
        for (cell, feature), (mean, std) in entries.items():
            if feature not in FEATURE_NAMES:
                raise ValueError(f"unknown feature {feature!r}")
            if std < 0:
                raise ValueError(f"negative std for {cell.id}/{feature}")
        self._entries = dict(entries)

    def __len__(self):
        return len(self._entries)

    def __getitem__(self, key):
        return self._entries[key]

    def __iter__(self):
        return iter(self._entries)

    def items(self):
        return self._entries.items()

    def mean(self, cell: Cell, feature: str) -> float:
        return self._entries[(cell, feature)][0]

    def std(self, cell: Cell, feature: str) -> float:
        return self._entries[(cell, feature)][1]

    def means(self, cell: Cell) -> FiberFeatures:
        return FiberFeatures(*(self.mean(cell, f) for f in FEATURE_NAMES))


def baseline_stats() -> StatsTable:
    entries = {}
    for cell in CELLS:
        row = _TABLE[(int(cell.bath_conc), cell.frr)]
        for feature in FEATURE_NAMES:
            entries[(cell, feature)] = row[feature]
    return StatsTable(entries)


@dataclass(frozen=True)
class SampleRecord:
    params: ManufacturingParams
    features: FiberFeatures
    cell: Cell


@dataclass(frozen=True)
class Dataset:
    """Ordered records plus the generation seed.

    ``per_cell`` is ``None`` (and ``seed`` may be) for split views and for
    files whose cell counts are unequal.
    """

    records: tuple
    seed: Optional[int] = None
    per_cell: Optional[int] = None

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def by_cell(self) -> dict:
        out = {c: [] for c in CELLS}
        for r in self.records:
            out[r.cell].append(r)
        return out


def generate_dataset(per_cell: int = 200, seed: int = 0, stats: Optional[StatsTable] = None) -> Dataset:
    if per_cell < 1:
        raise ValueError(f"per_cell must be >= 1, got {per_cell}")
    stats = stats or baseline_stats()
    rng = Rng(seed)
    records = []
    for cell in CELLS:
        params = cell.params
        moments = [stats[(cell, f)] for f in FEATURE_NAMES]
        for _ in range(per_cell):
            values = [gaussian_sample(rng, m, s) for m, s in moments]
            records.append(SampleRecord(params, FiberFeatures(*values), cell))
    return Dataset(tuple(records), seed=seed, per_cell=per_cell)


def split_dataset(ds: Dataset, n_model: int, seed: int):
    """Uniform random (unstratified) partition into ``(model_set, holdout_set)``.

    A Fisher-Yates permutation of record indices is drawn from ``Rng(seed)``;
    its first ``n_model`` entries form the model set. Both parts keep the
    original record order.
    """
    n = len(ds.records)
    if not 0 < n_model < n:
        raise ValueError(f"n_model must be in (0, {n}), got {n_model}")
    perm = Rng(seed).permutation(n)
    chosen = sorted(perm[:n_model])
    rest = sorted(perm[n_model:])
    model = Dataset(tuple(ds.records[i] for i in chosen), seed=ds.seed)
    holdout = Dataset(tuple(ds.records[i] for i in rest), seed=ds.seed)
    return model, holdout


def dumps_csv(ds) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in ds.records if isinstance(ds, Dataset) else ds:
        w.writerow([repr(float(v)) for v in r.params.as_tuple() + r.features.as_tuple()] + [r.cell.id])
    return buf.getvalue()


def write_csv(ds, path) -> None:
    Path(path).write_text(dumps_csv(ds), encoding="utf-8")


def loads_csv(text: str, source: str = "<string>") -> Dataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise CsvFormatError(f"{source}: empty file, expected header {','.join(CSV_COLUMNS)}") from None
    missing = [c for c in CSV_COLUMNS if c not in header]
    if missing:
        raise CsvFormatError(f"{source}: row 1: missing column(s) {', '.join(missing)}")
    pos = {c: header.index(c) for c in CSV_COLUMNS}

    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise CsvFormatError(f"{source}: row {lineno}: expected {len(header)} fields, got {len(row)}")
        values = []
        for col in CSV_COLUMNS[:-1]:
            raw = row[pos[col]]
            try:
                v = float(raw)
            except ValueError:
                raise CsvFormatError(f"{source}: row {lineno}, column {col}: non-numeric value {raw!r}") from None
            if not math.isfinite(v):
                raise CsvFormatError(f"{source}: row {lineno}, column {col}: non-finite value {raw!r}")
            values.append(v)
        cell_id = row[pos["cell_id"]]
        try:
            cell = cell_by_id(cell_id)
        except ValueError as exc:
            raise CsvFormatError(f"{source}: row {lineno}, column cell_id: {exc}") from None
        if tuple(values[:3]) != cell.params.as_tuple():
            raise CsvFormatError(
                f"{source}: row {lineno}, column sheath_ul_min: parameters {values[:3]} do not match cell {cell_id}"
            )
        records.append(SampleRecord(cell.params, FiberFeatures(*values[3:]), cell))

    counts = {c: 0 for c in CELLS}
    for r in records:
        counts[r.cell] += 1
    per_cell = None
    if records and len(set(counts.values())) == 1:
        per_cell = counts[CELLS[0]]
    return Dataset(tuple(records), seed=None, per_cell=per_cell)


def read_csv(path) -> Dataset:
    path = Path(path)
    return loads_csv(path.read_text(encoding="utf-8"), source=str(path))
