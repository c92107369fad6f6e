"""Predictive (params -> features) and design (features -> params) tasks."""

import hashlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import neuralnet as nn
from .scaling import Scaler, fit_scaler
from .synthdata import (
    FEATURE_NAMES,
    PARAM_NAMES,
    Dataset,
    FiberFeatures,
    ManufacturingParams,
    dumps_csv,
)

PREDICT = "predict"
DESIGN = "design"
DIRECTIONS = (PREDICT, DESIGN)

BATH_LEVELS = (0.0, 5.0)
BATH_THRESHOLD = 2.5
SWEEP_SIZES = tuple(range(1, 21))
VAL_FRACTION = 0.2


class DirectionError(ValueError):
    """A model was used for the opposite task."""


def io_names(direction: str):
    if direction == PREDICT:
        return PARAM_NAMES, FEATURE_NAMES
    if direction == DESIGN:
        return FEATURE_NAMES, PARAM_NAMES
    raise ValueError(f"direction must be one of {DIRECTIONS}, got {direction!r}")


def params_matrix(records) -> np.ndarray:
    return np.array([r.params.as_tuple() for r in records], dtype=np.float64).reshape(-1, 3)


def features_matrix(records) -> np.ndarray:
    return np.array([r.features.as_tuple() for r in records], dtype=np.float64).reshape(-1, 4)


def io_arrays(records, direction: str):
    p, f = params_matrix(records), features_matrix(records)
    return (p, f) if direction == PREDICT else (f, p)


def default_config(direction: str, **overrides) -> nn.NetworkConfig:
    n_in, n_out = (len(n) for n in io_names(direction))
    return nn.NetworkConfig(input_dim=n_in, output_dim=n_out, **overrides)


def fingerprint(records) -> str:
    return hashlib.sha256(dumps_csv(records).encode()).hexdigest()[:16]


def snap_bath(raw: float) -> float:
    """Nearest bath level; the midpoint goes to 5%."""
    return BATH_LEVELS[1] if raw >= BATH_THRESHOLD else BATH_LEVELS[0]


@dataclass(frozen=True)
class DesignResult:
    params: ManufacturingParams  # bath snapped to 0 or 5
    raw: tuple  # unsnapped (sheath, core, bath) network output


@dataclass
class TaskModel:
    direction: str
    net: nn.Network
    input_scaler: Scaler
    output_scaler: Scaler
    config: nn.NetworkConfig
    provenance: dict = field(default_factory=dict)
    curve: Optional[nn.LossCurve] = field(default=None, compare=False)  # not persisted

    def __post_init__(self):
        n_in, n_out = (len(n) for n in io_names(self.direction))
        if (self.net.input_dim, self.net.output_dim) != (n_in, n_out):
            raise ValueError(
                f"{self.direction} model must be {n_in}->{n_out}, got {self.net.input_dim}->{self.net.output_dim}"
            )

    def run(self, x) -> np.ndarray:
        """Physical-unit inputs to physical-unit outputs; accepts a vector or a batch."""
        return self.output_scaler.invert(nn.predict(self.net, self.input_scaler.apply(x)))

    def predict_features(self, p: ManufacturingParams) -> FiberFeatures:
        return FiberFeatures(*(float(v) for v in self.run(p.as_tuple())))

    def design_raw(self, features) -> np.ndarray:
        return self.run(features)

    def to_json(self) -> str:
        meta = {"task": self.direction, "config": self.config, "provenance": self.provenance}
        return nn.dumps_model(self.net, {"input": self.input_scaler, "output": self.output_scaler}, meta)

    def save(self, path) -> None:
        nn.save_model(self.net, {"input": self.input_scaler, "output": self.output_scaler},
                      {"task": self.direction, "config": self.config, "provenance": self.provenance}, path)

    @classmethod
    def load(cls, path) -> "TaskModel":
        net, scalers, meta = nn.load_model(path)
        try:
            return cls(meta["task"], net, scalers["input"], scalers["output"], meta["config"], meta["provenance"])
        except ValueError as exc:
            raise nn.ModelFormatError(f"{path}: {exc}") from None


def _train_task(direction, model_set, cfg, val_fraction) -> TaskModel:
    records = list(model_set)
    if not records:
        raise ValueError("model set is empty")
    in_names, out_names = io_names(direction)
    cfg = cfg.replace(input_dim=len(in_names), output_dim=len(out_names))
    X, Y = io_arrays(records, direction)
    xs = fit_scaler(X, in_names)
    ys = fit_scaler(Y, out_names)
    net = nn.init_network(cfg)
    curve = nn.train(net, xs.apply(X), ys.apply(Y), cfg, val_fraction)
    provenance = {
        "seed": cfg.seed,
        "batch_size": cfg.batch_size,
        "n_records": len(records),
        "val_fraction": val_fraction,
        "dataset_fingerprint": fingerprint(records),
    }
    return TaskModel(direction, net, xs, ys, cfg, provenance, curve)


def train_predictive(model_set, cfg: Optional[nn.NetworkConfig] = None, val_fraction: float = VAL_FRACTION) -> TaskModel:
    """Fit manufacturing params -> fiber features. Dimensions in ``cfg`` are overridden to 3->4."""
    return _train_task(PREDICT, model_set, cfg or default_config(PREDICT), val_fraction)


def train_design(model_set, cfg: Optional[nn.NetworkConfig] = None, val_fraction: float = VAL_FRACTION) -> TaskModel:
    """Fit fiber features -> manufacturing params. Dimensions in ``cfg`` are overridden to 4->3."""
    return _train_task(DESIGN, model_set, cfg or default_config(DESIGN), val_fraction)


def train_task(direction: str, model_set, cfg=None, val_fraction: float = VAL_FRACTION) -> TaskModel:
    return _train_task(direction, model_set, cfg or default_config(direction), val_fraction)


def predict_features(m, p: ManufacturingParams) -> FiberFeatures:
    if m.direction != PREDICT:
        raise DirectionError(f"predict_features needs a predict model, got a {m.direction} model")
    return m.predict_features(p)


def design_params(m, f: FiberFeatures) -> DesignResult:
    if m.direction != DESIGN:
        raise DirectionError(f"design_params needs a design model, got a {m.direction} model")
    raw = tuple(float(v) for v in np.asarray(m.design_raw(np.array([f.as_tuple()])))[0])
    return DesignResult(ManufacturingParams(raw[0], raw[1], snap_bath(raw[2])), raw)


# -- batch-size sweep --------------------------------------------------------

def sweep_seed(base_seed: int, batch_size: int) -> int:
    return base_seed * 10_000 + batch_size


@dataclass
class SweepEntry:
    batch_size: int
    seed: int
    model: TaskModel
    curve: nn.LossCurve
    report: object  # evaluation.ErrorReport


@dataclass
class SweepReport:
    direction: str
    entries: dict  # batch_size -> SweepEntry, ascending

    def __len__(self):
        return len(self.entries)

    def __getitem__(self, batch_size):
        return self.entries[batch_size]

    def __iter__(self):
        return iter(self.entries.values())


def _sweep_one(args):
    from .evaluation import evaluate

    direction, model_set, holdout, cfg, val_fraction = args
    model = _train_task(direction, model_set, cfg, val_fraction)
    report = evaluate(model, holdout, batch_size=cfg.batch_size)
    return SweepEntry(cfg.batch_size, cfg.seed, model, model.curve, report)


def sweep_batch_sizes(direction: str, model_set, holdout, base_cfg: Optional[nn.NetworkConfig] = None,
                      sizes=SWEEP_SIZES, workers: int = 1, val_fraction: float = VAL_FRACTION) -> SweepReport:
    """Train and evaluate one model per mini-batch size.

    The model for size ``N`` uses seed ``base_cfg.seed * 10000 + N``, so the
    report is the same whether entries run serially or in ``workers``
    processes.
    """
    model_set = Dataset(tuple(model_set))
    holdout = Dataset(tuple(holdout))
    if not len(model_set) or not len(holdout):
        raise ValueError("model set and holdout must be nonempty")
    sizes = sorted(set(int(s) for s in sizes))
    if not sizes or sizes[0] < 1:
        raise ValueError(f"batch sizes must be >= 1, got {sizes}")
    base_cfg = base_cfg or default_config(direction)
    jobs = [
        (direction, model_set, holdout, base_cfg.replace(batch_size=s, seed=sweep_seed(base_cfg.seed, s)), val_fraction)
        for s in sizes
    ]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    return SweepReport(direction, {e.batch_size: e for e in results})
