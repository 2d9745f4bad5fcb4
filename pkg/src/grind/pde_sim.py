"""Periodic finite-difference simulation of 2-D systems and scattered sampling.

Grid arrays are laid out ``(channel, row, column)`` with rows along y and
columns along x; grid node ``[i, j]`` sits at ``(x, y) = (j / n_x, i / n_y)``.
All spatial operators are second-order centered differences with periodic
wrap.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from grind.fourier_interp import ScatteredField, as_points
from grind.numerics import rk4_step

SYSTEMS = ("advection", "burgers", "diffusion", "wave")

DEFAULT_PARAMS = {
    "advection": {"c_x": 1.0, "c_y": 0.5},
    "burgers": {"nu": 0.01},
    "diffusion": {"D": 0.01},
    "wave": {"c": 0.5},
}

CHANNELS = {"advection": 1, "burgers": 1, "diffusion": 1, "wave": 2}


class InstabilityError(FloatingPointError):
    """Raised when an explicit integration produces non-finite values."""


@dataclass(frozen=True)
class SystemSpec:
    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SYSTEMS:
            raise ValueError(f"unknown system {self.kind!r}; expected one of {SYSTEMS}")
        params = dict(DEFAULT_PARAMS[self.kind])
        unknown = set(self.params) - set(params)
        if unknown:
            raise ValueError(f"unknown parameters for {self.kind}: {sorted(unknown)}")
        params.update({k: float(v) for k, v in self.params.items()})
        if not all(math.isfinite(v) for v in params.values()):
            raise ValueError(f"parameters must be finite: {params}")
        if self.kind == "burgers" and params["nu"] < 0:
            raise ValueError("viscosity nu must be >= 0")
        if self.kind == "diffusion" and params["D"] < 0:
            raise ValueError("diffusion constant D must be >= 0")
        if self.kind == "wave" and params["c"] <= 0:
            raise ValueError("wave speed c must be > 0")
        object.__setattr__(self, "params", params)

    @property
    def channels(self):
        return CHANNELS[self.kind]

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items()))))


@dataclass(frozen=True)
class GridField:
    values: np.ndarray  # C x n_y x n_x

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 2:
            values = values[None]
        if values.ndim != 3:
            raise ValueError(f"grid values must be C x n_y x n_x, got shape {values.shape}")
        if min(values.shape[1:]) < 3:
            raise ValueError(f"grid resolution must be >= 3 per axis, got {values.shape[1:]}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        object.__setattr__(self, "values", values)

    @property
    def resolution(self):
        """``(n_x, n_y)``."""
        return self.values.shape[2], self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def spacing(self):
        n_x, n_y = self.resolution
        return 1.0 / n_x, 1.0 / n_y


@dataclass(frozen=True)
class SimulationRun:
    spec: SystemSpec
    dt: float
    substeps: int
    record_stride: int
    frames: list
    seed: int
    max_wavenumber: int = 3

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError("a simulation run needs at least two frames")
        shapes = {f.values.shape for f in self.frames}
        if len(shapes) != 1:
            raise ValueError(f"frames have inconsistent shapes: {shapes}")

    @property
    def resolution(self):
        return self.frames[0].resolution

    @property
    def record_dt(self):
        """Time between recorded frames."""
        return self.dt * self.record_stride

    def array(self):
        return np.stack([f.values for f in self.frames])


def _resolution(resolution):
    resolution = tuple(int(n) for n in np.atleast_1d(resolution))
    if len(resolution) == 1:
        resolution = resolution * 2
    if len(resolution) != 2 or min(resolution) < 3:
        raise ValueError(f"resolution must be two integers >= 3, got {resolution}")
    return resolution


def grid_coordinates(resolution):
    """Meshgrid ``(x, y)`` of shape ``(n_y, n_x)`` for the periodic grid."""
    n_x, n_y = _resolution(resolution)
    return np.meshgrid(np.arange(n_x) / n_x, np.arange(n_y) / n_y)


def initial_condition(spec, resolution, seed, max_wavenumber=3):
    """Smooth random periodic field built from low Fourier modes.

    Every wave-vector ``k != 0`` with ``|k| <= max_wavenumber`` gets seeded
    unit-normal cosine and sine amplitudes; the sum is shifted to zero mean
    and scaled to unit max-abs.  For the wave system only the displacement is
    random, the velocity channel starts at zero.
    """
    x, y = grid_coordinates(resolution)
    rng = np.random.default_rng(seed)
    kmax = int(max_wavenumber)
    modes = [
        (kx, ky)
        for kx in range(0, kmax + 1)
        for ky in range(-kmax, kmax + 1)
        if (kx > 0 or ky > 0) and kx * kx + ky * ky <= kmax * kmax
    ]

    def random_field():
        u = np.zeros_like(x)
        for kx, ky in modes:
            a, b = rng.standard_normal(2)
            phase = 2.0 * np.pi * (kx * x + ky * y)
            u += a * np.cos(phase) + b * np.sin(phase)
        u -= u.mean()
        peak = np.abs(u).max()
        return u / peak if peak > 0 else u

    if spec.kind == "wave":
        u = random_field()
        return GridField(np.stack([u, np.zeros_like(u)]))
    return GridField(np.stack([random_field() for _ in range(spec.channels)]))


# --- periodic differences -------------------------------------------------------
# Sums are written in the same order as a row-major sweep over a 3x3 kernel so
# that stencil-model evaluations reproduce them exactly.


def centered_x(u):
    """``U[i, j+1] - U[i, j-1]`` (undivided)."""
    return -np.roll(u, 1, axis=-1) + np.roll(u, -1, axis=-1)


def centered_y(u):
    """``U[i+1, j] - U[i-1, j]`` (undivided)."""
    return -np.roll(u, 1, axis=-2) + np.roll(u, -1, axis=-2)


def laplacian5(u):
    """Undivided 5-point Laplacian."""
    north = np.roll(u, 1, axis=-2)
    west = np.roll(u, 1, axis=-1)
    east = np.roll(u, -1, axis=-1)
    south = np.roll(u, -1, axis=-2)
    return north + west + -4.0 * u + east + south


def _square_spacing(dx, dy, what):
    if dx != dy:
        raise ValueError(f"{what} needs equal grid spacing, got dx={dx}, dy={dy}")
    return dx


def _rhs_array(spec, u, dx, dy):
    p = spec.params
    if spec.kind == "advection":
        return (-p["c_x"] / (2.0 * dx)) * centered_x(u) + (-p["c_y"] / (2.0 * dy)) * centered_y(u)
    if spec.kind == "diffusion":
        h = _square_spacing(dx, dy, "diffusion")
        return (p["D"] / h**2) * laplacian5(u)
    if spec.kind == "burgers":
        h = _square_spacing(dx, dy, "burgers")
        return (
            (p["nu"] / h**2) * laplacian5(u)
            + (-1.0 / (2.0 * dx)) * (u * centered_x(u))
            + (-1.0 / (2.0 * dy)) * (u * centered_y(u))
        )
    h = _square_spacing(dx, dy, "wave")
    return np.stack([u[1], (p["c"] ** 2 / h**2) * laplacian5(u[0])])


def analytic_rhs(spec, state):
    """Method-of-lines right-hand side of ``spec`` evaluated on ``state``."""
    if state.channels != spec.channels:
        raise ValueError(f"{spec.kind} expects {spec.channels} channel(s), got {state.channels}")
    dx, dy = state.spacing
    return GridField(_rhs_array(spec, state.values, dx, dy))


def max_stable_step(spec, resolution, cfl=0.25):
    """Largest RK4 step keeping the CFL-type number at ``cfl``.

    Advection/wave use ``speed * h / dx``, diffusion/Burgers viscosity use
    ``D * h / dx^2``, and Burgers' transport uses unit speed (fields are
    normalized to max-abs 1 initially).
    """
    n_x, n_y = _resolution(resolution)
    dx = 1.0 / max(n_x, n_y)
    p = spec.params
    limits = []
    if spec.kind == "advection":
        limits.append(dx / max(abs(p["c_x"]) + abs(p["c_y"]), 1e-300))
    elif spec.kind == "wave":
        limits.append(dx / p["c"])
    elif spec.kind == "burgers":
        limits.append(dx / 2.0)
        if p["nu"] > 0:
            limits.append(dx**2 / p["nu"])
    elif p["D"] > 0:
        limits.append(dx**2 / p["D"])
    return cfl * min(limits) if limits else cfl * dx


def default_dt(spec, resolution, substeps=4, cfl=0.25):
    return substeps * max_stable_step(spec, resolution, cfl)


def simulate(spec, ic, dt, n_steps, record_stride=1, substeps=4, seed=0, max_wavenumber=3):
    """Integrate ``spec`` from ``ic`` with RK4.

    Each of the ``n_steps`` outer steps is ``substeps`` RK4 steps of size
    ``dt / substeps``; a frame is recorded every ``record_stride`` outer steps.
    Frame 0 is the initial condition.
    """
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    if record_stride < 1 or substeps < 1:
        raise ValueError("record_stride and substeps must be >= 1")
    if ic.channels != spec.channels:
        raise ValueError(f"{spec.kind} expects {spec.channels} channel(s), got {ic.channels}")
    dx, dy = ic.spacing
    h = dt / substeps

    def rhs(u):
        return _rhs_array(spec, u, dx, dy)

    u = ic.values
    frames = [ic]
    for step in range(1, n_steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(substeps):
                u = rk4_step(rhs, u, h)
        if not np.all(np.isfinite(u)):
            raise InstabilityError(
                f"{spec.kind} simulation became non-finite at outer step {step} "
                f"(dt={dt}, substeps={substeps}); reduce dt"
            )
        if step % record_stride == 0:
            frames.append(GridField(u))
    return SimulationRun(spec, float(dt), int(substeps), int(record_stride), frames, seed, max_wavenumber)


def run_system(spec, resolution=64, n_frames=32, seed=0, dt=None, substeps=4, record_stride=1,
               max_wavenumber=3):
    """Random initial condition plus simulation, recording ``n_frames`` frames."""
    resolution = _resolution(resolution)
    if dt is None:
        dt = default_dt(spec, resolution, substeps)
    ic = initial_condition(spec, resolution, seed, max_wavenumber)
    return simulate(spec, ic, dt, (n_frames - 1) * record_stride, record_stride, substeps, seed,
                    max_wavenumber)


def generate_points(n, seed, distribution="uniform_random"):
    if n < 1:
        raise ValueError(f"need at least one point, got {n}")
    if distribution != "uniform_random":
        raise ValueError(f"unsupported point distribution {distribution!r}")
    return np.random.default_rng(seed).random((int(n), 2))


def _cell_position(coord, n):
    s = coord * n
    nearest = np.rint(s)
    s = np.where(np.abs(s - nearest) < 1e-9, nearest, s)
    i0 = np.floor(s)
    return i0.astype(np.int64) % n, s - i0


def sample_scattered(frame, points):
    """Bilinear interpolation of a periodic grid field at scattered points."""
    points = as_points(points, 2)
    n_x, n_y = frame.resolution
    j0, tx = _cell_position(points[:, 0], n_x)
    i0, ty = _cell_position(points[:, 1], n_y)
    j1 = (j0 + 1) % n_x
    i1 = (i0 + 1) % n_y
    v = frame.values
    out = (
        (1 - tx) * (1 - ty) * v[:, i0, j0]
        + tx * (1 - ty) * v[:, i0, j1]
        + (1 - tx) * ty * v[:, i1, j0]
        + tx * ty * v[:, i1, j1]
    )
    return ScatteredField(points, out.T)


def grid_to_points(frame):
    """Flatten a grid field to ``n_y * n_x`` x C values in grid-target order."""
    return frame.values.reshape(frame.channels, -1).T


def points_to_grid(values, resolution):
    n_x, n_y = _resolution(resolution)
    values = np.asarray(values, dtype=float)
    return GridField(values.T.reshape(-1, n_y, n_x))
