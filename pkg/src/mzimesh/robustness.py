"""Accuracy surfaces over phase uncertainty and loss, and their FoM areas.

A trained model is frozen and re-evaluated on a grid of noise conditions.
Two sweep modes exist: sigma_theta x sigma_phi at zero loss ("theta-phi",
FoM in rad^2) and sigma_theta = sigma_phi x per-MZI loss ("sigma-loss",
FoM in dB*rad).
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .onn import Dataset, OnnModel, trial_accuracies
from .propagation import NoiseConfig
from .svg import heatmap

MODES = ("theta-phi", "sigma-loss")
UNITS = {"theta-phi": "rad^2", "sigma-loss": "dB*rad"}
AXIS_NAMES = {"theta-phi": ("sigma_theta_rad", "sigma_phi_rad"), "sigma-loss": ("sigma_rad", "loss_db")}


@dataclass(frozen=True)
class Axis:
    start: float
    stop: float
    steps: int

    def __post_init__(self):
        if self.start < 0 or self.stop < self.start:
            raise ValueError(f"axis range must satisfy 0 <= start <= stop, got [{self.start}, {self.stop}]")
        if self.steps < 1:
            raise ValueError("axis steps must be >= 1")

    @property
    def values(self) -> np.ndarray:
        return np.linspace(self.start, self.stop, self.steps)


@dataclass(frozen=True)
class SweepSpec:
    mode: str = "sigma-loss"
    axis1: Axis = Axis(0.0, 0.5, 21)
    axis2: Axis = Axis(0.0, 1.0, 21)
    trials: int = 20
    samples: int = 200
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if self.samples < 1 or self.workers < 1:
            raise ValueError("samples and workers must be >= 1")

    @classmethod
    def default(cls, mode: str = "sigma-loss", **kw) -> "SweepSpec":
        if mode == "theta-phi":
            kw.setdefault("axis2", Axis(0.0, 0.5, 21))
        return cls(mode=mode, **kw)


@dataclass
class SweepReport:
    mode: str
    axis1: np.ndarray
    axis2: np.ndarray
    accuracy: np.ndarray
    trials: int
    threshold: float = 0.75
    metadata: dict = field(default_factory=dict)

    @property
    def units(self) -> str:
        return UNITS[self.mode]

    @property
    def fom_value(self) -> float:
        return fom_area(self.accuracy, self.axis1, self.axis2, self.threshold)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        a1, a2 = AXIS_NAMES[self.mode]
        w.writerow(["axis1", "axis2", "mean_accuracy", "trials"])
        for i, x in enumerate(self.axis1):
            for j, y in enumerate(self.axis2):
                w.writerow([f"{x:.10g}", f"{y:.10g}", f"{self.accuracy[i, j]:.10g}", self.trials])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.csv_text())

    def summary(self) -> dict:
        a1, a2 = AXIS_NAMES[self.mode]
        return {
            "mode": self.mode,
            "fom_value": self.fom_value,
            "threshold": self.threshold,
            "units": self.units,
            "axis1": {"name": a1, "values": self.axis1.tolist()},
            "axis2": {"name": a2, "values": self.axis2.tolist()},
            "trials": self.trials,
            "origin_accuracy": float(self.accuracy[0, 0]),
            "metadata": self.metadata,
        }

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)
            fh.write("\n")

    def write_svg(self, path) -> None:
        a1, a2 = AXIS_NAMES[self.mode]
        title = f"{self.metadata.get('topology', '')} FoM = {self.fom_value:.4g} {self.units}"
        heatmap(self.accuracy, self.axis1, self.axis2, a1, a2, title, self.threshold).save(path)


def _cell_noise(mode: str, x: float, y: float, seed: int) -> tuple[NoiseConfig, float]:
    if mode == "theta-phi":
        return NoiseConfig(x, y, seed), 0.0
    return NoiseConfig(x, x, seed), y


def run_sweep(model: OnnModel, data: Dataset, spec: SweepSpec = SweepSpec(),
              metadata: dict | None = None) -> SweepReport:
    """Mean accuracy on every grid cell; cell (i, j) uses the RNG streams keyed (seed, i, j, trial).

    Cells are independent, so the grid is identical for any ``workers``.
    """
    data = data.subset(np.arange(min(spec.samples, len(data))))
    xs, ys = spec.axis1.values, spec.axis2.values

    def cell(ij):
        i, j = ij
        noise, loss = _cell_noise(spec.mode, xs[i], ys[j], spec.seed)
        return float(np.mean(trial_accuracies(model, data, noise, loss, spec.trials, key=(i, j))))

    cells = [(i, j) for i in range(xs.size) for j in range(ys.size)]
    if spec.workers > 1:
        with ThreadPoolExecutor(spec.workers) as pool:
            vals = list(pool.map(cell, cells))
    else:
        vals = [cell(c) for c in cells]
    meta = {
        "topology": model.kind.value,
        "n": model.n_features,
        "layers": len(model.layers),
        "samples": len(data),
        "seed": spec.seed,
        "grid_ranges_decided": True,
    }
    meta.update(metadata or {})
    return SweepReport(spec.mode, xs, ys, np.array(vals).reshape(xs.size, ys.size), spec.trials,
                       metadata=meta)


def _weights(v: np.ndarray) -> np.ndarray:
    """Trapezoid weights: each node owns half of each adjacent interval."""
    if v.size == 1:
        return np.zeros(1)
    d = np.diff(v)
    w = np.zeros(v.size)
    w[:-1] += d / 2
    w[1:] += d / 2
    return w


def fom_area(grid, axis1, axis2, threshold: float = 0.75) -> float:
    """Area of the grid region whose mean accuracy is at least ``threshold``.

    Each node owns the rectangle halfway to its neighbours, so a grid that
    passes everywhere has exactly the swept area.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be non-empty")
    w = np.outer(_weights(np.asarray(axis1, float)), _weights(np.asarray(axis2, float)))
    return float(np.sum(w[grid >= threshold]))


def report_from_csv(path, mode: str = "sigma-loss") -> SweepReport:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or set(rows[0]) != {"axis1", "axis2", "mean_accuracy", "trials"}:
        raise ValueError(f"{path}: not a sweep grid CSV")
    a1 = np.array(sorted({float(r["axis1"]) for r in rows}))
    a2 = np.array(sorted({float(r["axis2"]) for r in rows}))
    grid = np.zeros((a1.size, a2.size))
    for r in rows:
        grid[np.searchsorted(a1, float(r["axis1"])), np.searchsorted(a2, float(r["axis2"]))] = float(
            r["mean_accuracy"]
        )
    return SweepReport(mode, a1, a2, grid, int(rows[0]["trials"]))


def spec_dict(spec: SweepSpec) -> dict:
    return asdict(spec)
