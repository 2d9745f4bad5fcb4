"""Method-of-lines forecaster whose right-hand side is a stencil-feature model.

The time derivative of every output channel is a weighted sum of features;
a feature is a 3x3 stencil applied to one channel, or the pointwise product
of two such terms.  Weights come either from the closed-form discretization
of a known system (:func:`analytic_model`) or from least squares on
finite-difference time derivatives (:func:`fit_model`).
"""

import logging
from dataclasses import dataclass

import numpy as np

from grind.numerics import rk4_step, solve_complex_lls
from grind.pde_sim import GridField, InstabilityError, SystemSpec

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Stencil:
    kernel: np.ndarray
    name: str

    def __post_init__(self):
        kernel = np.asarray(self.kernel, dtype=float)
        if kernel.shape != (3, 3):
            raise ValueError(f"stencil kernels are 3x3, got {kernel.shape}")
        if not np.all(np.isfinite(kernel)):
            raise ValueError("stencil kernel must be finite")
        object.__setattr__(self, "kernel", kernel)


IDENTITY = Stencil([[0, 0, 0], [0, 1, 0], [0, 0, 0]], "identity")
CENTERED_X = Stencil([[0, 0, 0], [-1, 0, 1], [0, 0, 0]], "centered_x")
CENTERED_Y = Stencil([[0, -1, 0], [0, 0, 0], [0, 1, 0]], "centered_y")
LAPLACIAN = Stencil([[0, 1, 0], [1, -4, 1], [0, 1, 0]], "laplacian")

STENCILS = {s.name: s for s in (IDENTITY, CENTERED_X, CENTERED_Y, LAPLACIAN)}


def correlate_periodic(kernel, u):
    """Periodic 3x3 cross-correlation: ``sum_ab K[a,b] u[i+a-1, j+b-1]``."""
    out = np.zeros_like(u, dtype=float)
    for a in range(3):
        for b in range(3):
            k = kernel[a, b]
            if k != 0.0:
                out = out + k * np.roll(u, (1 - a, 1 - b), axis=(-2, -1))
    return out


def apply_stencil(stencil, field, channel=0):
    if not 0 <= channel < field.channels:
        raise IndexError(f"channel {channel} out of range for {field.channels}-channel field")
    return correlate_periodic(stencil.kernel, field.values[channel])


@dataclass(frozen=True)
class Feature:
    """Product of ``(stencil name, channel)`` terms; one term is a linear feature."""

    terms: tuple

    def __post_init__(self):
        terms = tuple((str(name), int(ch)) for name, ch in self.terms)
        if not 1 <= len(terms) <= 2:
            raise ValueError("a feature has one or two terms")
        for name, ch in terms:
            if name not in STENCILS:
                raise ValueError(f"unknown stencil {name!r}")
            if ch < 0:
                raise ValueError(f"negative channel {ch}")
        object.__setattr__(self, "terms", terms)

    def __str__(self):
        return "*".join(f"{name}[{ch}]" for name, ch in self.terms)

    @classmethod
    def parse(cls, text):
        terms = []
        for part in text.strip().split("*"):
            name, _, rest = part.partition("[")
            if not rest.endswith("]"):
                raise ValueError(f"malformed feature descriptor {text!r}")
            terms.append((name, int(rest[:-1])))
        return cls(tuple(terms))


@dataclass(frozen=True)
class FeatureLibrary:
    features: tuple
    channels: int

    def __post_init__(self):
        features = tuple(f if isinstance(f, Feature) else Feature(f) for f in self.features)
        if not features:
            raise ValueError("feature library is empty")
        for f in features:
            for _, ch in f.terms:
                if ch >= self.channels:
                    raise ValueError(f"feature {f} references channel {ch} of {self.channels}")
        object.__setattr__(self, "features", features)

    def __len__(self):
        return len(self.features)

    def index(self, descriptor):
        return [str(f) for f in self.features].index(descriptor)

    def evaluate(self, field):
        """Feature values, shape ``(n_features, n_y, n_x)``."""
        return self.evaluate_array(field.values)

    def evaluate_array(self, u):
        # unvalidated: RK4 stages may be non-finite before the step check
        if u.shape[0] != self.channels:
            raise ValueError(f"library expects {self.channels} channels, got {u.shape[0]}")
        cache = {}

        def term(name, ch):
            if (name, ch) not in cache:
                cache[name, ch] = correlate_periodic(STENCILS[name].kernel, u[ch])
            return cache[name, ch]

        out = []
        for f in self.features:
            value = term(*f.terms[0])
            if len(f.terms) == 2:
                value = value * term(*f.terms[1])
            out.append(value)
        return np.stack(out)


def default_library(channels=1):
    """Identity, centered x/y differences and Laplacian of every channel, plus
    ``u * dx u`` and ``u * dy u`` for every channel."""
    linear = [((name, c),) for c in range(channels)
              for name in ("identity", "centered_x", "centered_y", "laplacian")]
    products = [(("identity", c), (name, c)) for c in range(channels)
                for name in ("centered_x", "centered_y")]
    return FeatureLibrary(tuple(linear + products), channels)


@dataclass(frozen=True)
class StencilModel:
    library: FeatureLibrary
    weights: np.ndarray  # channels x n_features

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        expected = (self.library.channels, len(self.library))
        if weights.shape != expected:
            raise ValueError(f"weights have shape {weights.shape}, expected {expected}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("weights must be finite")
        object.__setattr__(self, "weights", weights)

    def rhs_array(self, u):
        feats = self.library.evaluate_array(u)
        out = np.zeros_like(u)
        for c in range(self.library.channels):
            acc = out[c]
            for w, feat in zip(self.weights[c], feats):
                acc = acc + w * feat
            out[c] = acc
        return out

    def rhs(self, state):
        return GridField(self.rhs_array(state.values))


def zero_model(channels=1, library=None):
    library = library or default_library(channels)
    return StencilModel(library, np.zeros((library.channels, len(library))))


def analytic_model(spec, grid_spacing, library=None):
    """Stencil model reproducing the simulator's discrete right-hand side."""
    if not isinstance(spec, SystemSpec):
        raise TypeError(f"expected a SystemSpec, got {type(spec).__name__}")
    dx, dy = np.broadcast_to(np.asarray(grid_spacing, dtype=float), (2,))
    dx, dy = float(dx), float(dy)
    library = library or default_library(spec.channels)
    w = np.zeros((library.channels, len(library)))
    p = spec.params

    def put(out, descriptor, value):
        try:
            w[out, library.index(descriptor)] = value
        except ValueError:
            raise ValueError(f"library lacks feature {descriptor} needed for {spec.kind}") from None

    if spec.kind == "advection":
        put(0, "centered_x[0]", -p["c_x"] / (2.0 * dx))
        put(0, "centered_y[0]", -p["c_y"] / (2.0 * dy))
        return StencilModel(library, w)
    if dx != dy:
        raise ValueError(f"{spec.kind} model needs equal grid spacing, got {dx}, {dy}")
    h = dx
    if spec.kind == "diffusion":
        put(0, "laplacian[0]", p["D"] / h**2)
    elif spec.kind == "burgers":
        put(0, "laplacian[0]", p["nu"] / h**2)
        put(0, "identity[0]*centered_x[0]", -1.0 / (2.0 * dx))
        put(0, "identity[0]*centered_y[0]", -1.0 / (2.0 * dy))
    elif spec.kind == "wave":
        put(0, "identity[1]", 1.0)
        put(1, "laplacian[0]", p["c"] ** 2 / h**2)
    return StencilModel(library, w)


def derivative_snapshots(frames, dt):
    """``(U_t, (U_{t+1} - U_{t-1}) / (2 dt))`` for every interior frame."""
    if len(frames) < 3:
        raise ValueError(f"centered time differences need >= 3 frames, got {len(frames)}")
    return [
        (frames[t], GridField((frames[t + 1].values - frames[t - 1].values) / (2.0 * dt)))
        for t in range(1, len(frames) - 1)
    ]


def fit_model(snapshots, library=None, ridge=0.0):
    """Least-squares stencil weights from ``(state, rhs_label)`` pairs.

    Every grid cell of every snapshot is one row; each output channel is
    fitted independently.
    """
    snapshots = list(snapshots)
    if not snapshots:
        raise ValueError("fit_model needs at least one snapshot")
    channels = snapshots[0][0].channels
    library = library or default_library(channels)
    rows, targets = [], []
    for state, label in snapshots:
        if state.values.shape != label.values.shape:
            raise ValueError(f"state {state.values.shape} and label {label.values.shape} differ")
        if state.values.shape != snapshots[0][0].values.shape:
            raise ValueError("snapshots have inconsistent shapes")
        rows.append(library.evaluate(state).reshape(len(library), -1).T)
        targets.append(label.values.reshape(channels, -1).T)
    X = np.concatenate(rows)
    Y = np.concatenate(targets)
    dead = [str(f) for f, col in zip(library.features, X.T) if not np.any(col)]
    if dead:
        log.warning("all-zero features in training data: %s", ", ".join(dead))
    weights = solve_complex_lls(X, Y, ridge).T
    return StencilModel(library, weights)


def forecast(model, state, dt, n_steps, substeps=1):
    """Closed-loop RK4 forecast; returns ``n_steps`` frames after ``state``.

    Each frame advances ``dt`` using ``substeps`` RK4 steps.  For stability
    keep ``|c| dt / (substeps dx) <= 0.25`` for transport terms and
    ``D dt / (substeps dx^2) <= 0.25`` for diffusive ones.
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    h = dt / substeps
    u = state.values
    frames = []
    for step in range(1, n_steps + 1):
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(substeps):
                u = rk4_step(model.rhs_array, u, h)
        if not np.all(np.isfinite(u)):
            raise InstabilityError(f"forecast became non-finite at step {step} (dt={dt}, substeps={substeps})")
        frames.append(GridField(u))
    return frames
