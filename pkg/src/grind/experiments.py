"""Interpolation sweeps and rollout evaluations over generated datasets."""

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from grind.fourier_interp import ScatteredField, fi_layer, grid_targets
from grind.pde_sim import grid_to_points
from grind.pipeline import evaluate_rollout, persistence, rollout

WORKERS_ENV = "GRIND_WORKERS"


def worker_count(default=1):
    value = os.environ.get(WORKERS_ENV)
    if value is None:
        return default
    try:
        n = int(value)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {value!r}")
    return n


def pool_map(fn, items, workers=None):
    """Ordered map, optionally over a thread pool (numpy releases the GIL)."""
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def sweep_dataset(dataset, n_freqs):
    """Interpolation MSE against the grid truth for each ``n_freq``.

    All frames are fitted together (one channel per frame and field
    channel); the MSE is the mean over grid points, channels and frames.
    """
    run = dataset.run
    targets = grid_targets(run.resolution)
    obs = np.concatenate([o.values for o in dataset.observations], axis=1)
    truth = np.concatenate([grid_to_points(f) for f in run.frames], axis=1)
    field = ScatteredField(dataset.points, obs)
    return np.array([np.mean((fi_layer(field, targets, n) - truth) ** 2) for n in n_freqs])


@dataclass(frozen=True)
class SweepRow:
    system: str
    n_points: int
    n_freq: int
    mse: float


def interpolation_sweep(datasets, n_freqs, workers=None):
    """Mean interpolation MSE over ``datasets`` for every ``n_freq``, sorted by ``n_freq``."""
    datasets = list(datasets)
    n_freqs = sorted(int(n) for n in n_freqs)
    if not n_freqs:
        raise ValueError("empty frequency range")
    if not datasets:
        raise ValueError("no datasets to sweep")
    systems = {d.system for d in datasets}
    sizes = {d.points.shape[0] for d in datasets}
    if len(systems) != 1 or len(sizes) != 1:
        raise ValueError(f"sweep datasets must share system and point count, got {systems}, {sizes}")
    curves = pool_map(lambda d: sweep_dataset(d, n_freqs), datasets, workers)
    mean = np.mean(curves, axis=0)
    system, n_points = systems.pop(), sizes.pop()
    return [SweepRow(system, n_points, n, float(m)) for n, m in zip(n_freqs, mean)]


def best_row(rows):
    return min(rows, key=lambda r: (r.mse, r.n_freq))


def rollout_reports(dataset, model, cfg, horizon, start=0, model_label="model", seed=None):
    """Rollout from observation ``start`` plus the persistence baseline."""
    obs = dataset.observations
    if start < 0 or start + horizon >= len(obs):
        raise ValueError(
            f"horizon {horizon} from frame {start} needs {start + horizon + 1} frames, dataset has {len(obs)}"
        )
    truth = obs[start + 1:start + 1 + horizon]
    preds = persistence(obs[start], horizon) if model is None else rollout(obs[start], model, cfg, horizon)
    reports = [evaluate_rollout(preds, truth, dataset.system, model_label)]
    if model is not None:
        reports.append(evaluate_rollout(persistence(obs[start], horizon), truth, dataset.system, "persistence"))
    return reports
