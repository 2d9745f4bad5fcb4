"""Scattered -> grid -> forecast -> scattered composition and rollout metrics."""

import csv
from dataclasses import dataclass, replace

import numpy as np

from grind.fourier_interp import DEFAULT_N_FREQ, FIOperator, ScatteredField, fi_layer, grid_targets, mirror_fi_layer
from grind.mol_forecaster import forecast
from grind.pde_sim import InstabilityError, grid_to_points, points_to_grid

DEFAULT_HORIZON = 16
REPORT_COLUMNS = ("system", "model", "step", "mse", "seed")


class PipelineError(RuntimeError):
    """A pipeline stage produced non-finite values."""


@dataclass(frozen=True)
class GrindConfig:
    dt: float  # time between recorded frames
    n_freq: int = DEFAULT_N_FREQ
    grid_resolution: tuple = (64, 64)
    ridge: float = None
    substeps: int = 4
    use_mirror: bool = False
    cache_factorization: bool = True

    def __post_init__(self):
        res = tuple(int(n) for n in np.broadcast_to(self.grid_resolution, (2,)))
        object.__setattr__(self, "grid_resolution", res)
        if self.n_freq < 1:
            raise ValueError(f"n_freq must be >= 1, got {self.n_freq}")
        if min(res) < 3:
            raise ValueError(f"grid resolution must be >= 3 per axis, got {res}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")
        if self.ridge is not None and not self.ridge >= 0:
            raise ValueError(f"ridge must be nonnegative, got {self.ridge}")


class GrindOperators:
    """Up (scattered -> grid) and down (grid -> scattered) FI layers for fixed locations."""

    def __init__(self, points, cfg):
        self.points = np.asarray(points, dtype=float)
        self.grid = grid_targets(cfg.grid_resolution)
        kw = dict(n_freq=cfg.n_freq, ridge=cfg.ridge, mirror=cfg.use_mirror)
        self.up = FIOperator(self.points, self.grid, **kw)
        self.down = FIOperator(self.grid, self.points, **kw)


def _fi(cfg, points, values, targets):
    layer = mirror_fi_layer if cfg.use_mirror else fi_layer
    return layer(ScatteredField(points, values), targets, cfg.n_freq, cfg.ridge)


def _check(stage, values):
    if not np.all(np.isfinite(values)):
        raise PipelineError(f"{stage} produced non-finite values")
    return values


def grind_step(u_low, model, cfg, operators=None):
    """One step of the scattered forecast: FI up, grid forecast, FI down."""
    if model.library.channels != u_low.channels:
        raise ValueError(f"model has {model.library.channels} channels, field has {u_low.channels}")
    if operators is not None and not np.array_equal(operators.points, u_low.points):
        raise ValueError("cached operators were built for different observation points")
    grid = operators.grid if operators is not None else grid_targets(cfg.grid_resolution)

    if operators is not None:
        high = operators.up(u_low.values)
    else:
        high = _fi(cfg, u_low.points, u_low.values, grid)
    state = points_to_grid(_check("FI up-interpolation", high), cfg.grid_resolution)

    try:
        (nxt,) = forecast(model, state, cfg.dt, 1, cfg.substeps)
    except InstabilityError as exc:
        raise PipelineError(f"grid forecast failed: {exc}") from exc

    high_next = grid_to_points(nxt)
    if operators is not None:
        low = operators.down(high_next)
    else:
        low = _fi(cfg, grid, high_next, u_low.points)
    return u_low.with_values(_check("FI down-mapping", low))


def rollout(u0_low, model, cfg, horizon=DEFAULT_HORIZON):
    """Closed-loop rollout: each prediction is the next step's input."""
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    operators = GrindOperators(u0_low.points, cfg) if cfg.cache_factorization else None
    out, u = [], u0_low
    for _ in range(horizon):
        u = grind_step(u, model, cfg, operators)
        out.append(u)
    return out


def persistence(u0_low, horizon=DEFAULT_HORIZON):
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    return [u0_low.with_values(u0_low.values.copy()) for _ in range(horizon)]


@dataclass(frozen=True)
class RolloutReport:
    per_step_mse: list
    system: str = ""
    model: str = ""
    seed: int = None

    def __post_init__(self):
        mse = [float(v) for v in self.per_step_mse]
        if not all(np.isfinite(v) and v >= 0 for v in mse):
            raise ValueError("per-step MSE must be finite and nonnegative")
        object.__setattr__(self, "per_step_mse", mse)

    @property
    def horizon(self):
        return len(self.per_step_mse)

    def rows(self):
        seed = "" if self.seed is None else self.seed
        return [(self.system, self.model, t, repr(v), seed) for t, v in enumerate(self.per_step_mse, 1)]

    def with_seed(self, seed):
        return replace(self, seed=seed)


def mse(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def evaluate_rollout(predictions, truth, system="", model=""):
    if len(predictions) != len(truth):
        raise ValueError(f"{len(predictions)} predictions for {len(truth)} truth frames")
    per_step = [mse(p.values, t.values) for p, t in zip(predictions, truth)]
    return RolloutReport(per_step, system, model)


def write_reports(reports, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for report in reports:
            writer.writerows(report.rows())


def read_reports(path):
    """Group a rollout CSV back into reports keyed by ``(system, model, seed)``."""
    grouped = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames[:4]) != REPORT_COLUMNS[:4]:
            raise ValueError(f"{path} is not a rollout report (columns {reader.fieldnames})")
        for row in reader:
            seed = row.get("seed") or None
            key = (row["system"], row["model"], None if seed is None else int(seed))
            grouped.setdefault(key, []).append((int(row["step"]), float(row["mse"])))
    return [RolloutReport([v for _, v in sorted(steps)], system, model, seed)
            for (system, model, seed), steps in grouped.items()]
