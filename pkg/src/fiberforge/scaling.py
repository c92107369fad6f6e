"""Per-feature z-score standardization."""

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Scaler:
    """Column means and (population) standard deviations of a training split."""

    names: tuple
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if not (len(self.names) == mean.size == std.size):
            raise ValueError(
                f"scaler size mismatch: {len(self.names)} names, {mean.size} means, {std.size} stds"
            )
        if np.any(~(std > 0)):
            raise ValueError("scaler std entries must be positive")
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.size

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {
            "names": list(self.names),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scaler":
        return cls(tuple(d["names"]), np.array(d["mean"], dtype=np.float64), np.array(d["std"], dtype=np.float64))


def fit_scaler(values, names) -> Scaler:
    """Fit on an ``(n, d)`` array. Constant columns get std 1 (with a warning)."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 2:
        raise ValueError(f"need an (n>=2, d) array to fit a scaler, got shape {values.shape}")
    if values.shape[1] != len(names):
        raise ValueError(f"{values.shape[1]} columns but {len(names)} names")
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    flat = ~(std > 0)
    if flat.any():
        warnings.warn(
            "constant feature(s) " + ", ".join(n for n, f in zip(names, flat) if f) + "; using std 1",
            RuntimeWarning,
            stacklevel=2,
        )
        std = np.where(flat, 1.0, std)
    return Scaler(tuple(names), mean, std)
