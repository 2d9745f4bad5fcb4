"""Fourier interpolation (FI) of scattered samples on the unit box.

Coefficients of a truncated complex Fourier series are fitted to the samples
by linear least squares, then the real part of the series is evaluated at
arbitrary targets.  Coordinates must already lie in ``[0, 1]^M``.

Grid point order: :func:`grid_targets` enumerates points with the *first*
coordinate varying fastest, so the flat list reshapes to ``resolution[::-1]``
(for 2-D, rows are y and columns are x).
"""

import itertools
from dataclasses import dataclass

import numpy as np

from grind.numerics import lls_operator, solve_complex_lls

DEFAULT_N_FREQ = 18
UNDERDETERMINED_RIDGE = 1e-8


def axis_frequencies(n):
    """Integer frequencies kept along one axis for ``n`` modes."""
    if n % 2 == 0:
        return np.arange(-n // 2, n // 2)
    return np.arange(-(n - 1) // 2, (n - 1) // 2 + 1)


@dataclass(frozen=True)
class FrequencySet:
    counts: tuple
    indices: np.ndarray  # |K| x M integer multi-indices, lexicographic

    @property
    def dims(self):
        return len(self.counts)

    def __len__(self):
        return self.indices.shape[0]


def frequency_set(counts):
    counts = tuple(int(n) for n in np.atleast_1d(counts))
    if not counts or any(n < 1 for n in counts):
        raise ValueError(f"frequency counts must be positive, got {counts}")
    axes = [axis_frequencies(n) for n in counts]
    indices = np.array(list(itertools.product(*axes)), dtype=np.int64).reshape(-1, len(counts))
    indices.setflags(write=False)
    return FrequencySet(counts, indices)


def as_points(points, dims=None, name="points"):
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None] if dims in (None, 1) else points[None, :]
    if points.ndim != 2:
        raise ValueError(f"{name} must be an H x M array, got shape {points.shape}")
    if dims is not None and points.shape[1] != dims:
        raise ValueError(f"{name} have dimension {points.shape[1]}, expected {dims}")
    if not np.all(np.isfinite(points)):
        raise ValueError(f"{name} contain non-finite coordinates")
    if np.any(points < 0.0) or np.any(points > 1.0):
        raise ValueError(f"{name} must lie in the unit box [0, 1]^M")
    return points


@dataclass(frozen=True)
class ScatteredField:
    """Per-channel values observed at H points of the unit box."""

    points: np.ndarray  # H x M
    values: np.ndarray  # H x C

    def __post_init__(self):
        points = as_points(self.points)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != points.shape[0]:
            raise ValueError(
                f"values shape {values.shape} does not match {points.shape[0]} points"
            )
        if points.shape[0] < 1:
            raise ValueError("a scattered field needs at least one point")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "values", values)

    @property
    def dims(self):
        return self.points.shape[1]

    @property
    def channels(self):
        return self.values.shape[1]

    def with_values(self, values):
        return ScatteredField(self.points, values)


@dataclass(frozen=True)
class FourierCoefficients:
    freq: FrequencySet
    coeffs: np.ndarray  # |K| x C complex

    def __post_init__(self):
        coeffs = np.asarray(self.coeffs, dtype=complex)
        if coeffs.ndim == 1:
            coeffs = coeffs[:, None]
        if coeffs.shape[0] != len(self.freq):
            raise ValueError(f"{coeffs.shape[0]} coefficient rows for {len(self.freq)} frequencies")
        if not np.all(np.isfinite(coeffs)):
            raise ValueError("coefficients must be finite")
        object.__setattr__(self, "coeffs", coeffs)


def design_matrix(points, freq):
    """H x |K| matrix with entries ``exp(2 pi i k_l . x_j)``."""
    points = as_points(points, freq.dims)
    return np.exp(2j * np.pi * (points @ freq.indices.T))


def default_ridge(n_points, n_coeffs):
    return UNDERDETERMINED_RIDGE if n_coeffs > n_points else 0.0


def fit_coefficients(field, freq, ridge=None):
    """Least-squares Fourier coefficients of every channel of ``field``.

    ``ridge=None`` picks 0 for (over)determined fits and ``1e-8`` when there
    are more frequencies than points.
    """
    if field.dims != freq.dims:
        raise ValueError(f"field is {field.dims}-D but frequencies are {freq.dims}-D")
    A = design_matrix(field.points, freq)
    if ridge is None:
        ridge = default_ridge(*A.shape)
    return FourierCoefficients(freq, solve_complex_lls(A, field.values.astype(complex), ridge))


def evaluate(coeffs, targets, return_imag=False):
    """Real part of the fitted series at ``targets`` (|targets| x C).

    With ``return_imag`` the discarded imaginary part is returned as well.
    """
    z = design_matrix(targets, coeffs.freq) @ coeffs.coeffs
    if return_imag:
        return z.real, z.imag
    return z.real


def fi_layer(field, targets, n_freq=DEFAULT_N_FREQ, ridge=None):
    if n_freq < 1:
        raise ValueError(f"n_freq must be >= 1, got {n_freq}")
    freq = frequency_set((n_freq,) * field.dims)
    return evaluate(fit_coefficients(field, freq, ridge), targets)


def grid_targets(resolution):
    """Endpoint-open regular grid ``{0, 1/n, ..., (n-1)/n}`` per dimension."""
    resolution = tuple(int(n) for n in np.atleast_1d(resolution))
    if not resolution or any(n < 1 for n in resolution):
        raise ValueError(f"grid resolution must be positive, got {resolution}")
    axes = [np.arange(n) / n for n in resolution]
    mesh = np.meshgrid(*axes[::-1], indexing="ij")
    return np.stack([m.ravel() for m in mesh[::-1]], axis=1)


class FIOperator:
    """Cached FI layer from fixed source points to fixed targets.

    The pseudoinverse of the source design matrix and the target evaluation
    matrix are formed once; each call is then two matrix products.
    """

    def __init__(self, sources, targets, n_freq=DEFAULT_N_FREQ, ridge=None, mirror=False):
        sources = as_points(sources, name="sources")
        dims = sources.shape[1]
        targets = as_points(targets, dims, name="targets")
        if n_freq < 1:
            raise ValueError(f"n_freq must be >= 1, got {n_freq}")
        self.freq = frequency_set((n_freq,) * dims)
        self.n_sources = sources.shape[0]
        self.mirror = mirror

        if mirror:
            sources, _ = _mirror_images(embed_subdomain(sources))
            targets = embed_subdomain(targets)
        A = design_matrix(sources, self.freq)
        if ridge is None:
            ridge = default_ridge(*A.shape)
        P = lls_operator(A, ridge)
        if mirror:
            # images are stacked image-major; every copy carries the same value
            P = P.reshape(len(self.freq), -1, self.n_sources).sum(axis=1)
        self.pinv = P
        self.synthesis = design_matrix(targets, self.freq)

    def coefficients(self, values):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != self.n_sources:
            raise ValueError(f"expected {self.n_sources} source values, got {values.shape[0]}")
        return FourierCoefficients(self.freq, self.pinv @ values)

    def __call__(self, values):
        return (self.synthesis @ self.coefficients(values).coeffs).real


# --- extension to non-periodic functions -------------------------------------------


def fold(x):
    """Fold map ``2 |1/2 - x|``: symmetric about 1/2, maps [0, 1] onto [0, 1]."""
    return 2.0 * np.abs(0.5 - np.asarray(x, dtype=float))


def embed_subdomain(points):
    """Map the unit box into the subdomain ``[1/2, 1]^M``."""
    return 0.5 * (1.0 + np.asarray(points, dtype=float))


def _mirror_images(points):
    """All ``2^M`` reflections ``y -> 1 - y`` of every point.

    Returns the stacked images and, for every image row, the index of the
    original point it came from.
    """
    H, M = points.shape
    images, origin = [], []
    for flips in itertools.product((False, True), repeat=M):
        img = points.copy()
        for d, flip in enumerate(flips):
            if flip:
                img[:, d] = 1.0 - img[:, d]
        images.append(img)
        origin.append(np.arange(H))
    return np.concatenate(images), np.concatenate(origin)


def surrogate_samples(field):
    """Samples of the periodic surrogate ``g(x) = f(fold(x))`` built from ``field``.

    Each sample is embedded into ``[1/2, 1]^M`` and replicated across all
    mirror images, keeping its value.
    """
    points, origin = _mirror_images(embed_subdomain(field.points))
    return ScatteredField(points, field.values[origin])


def fit_surrogate(field, n_freq, ridge=None):
    freq = frequency_set((n_freq,) * field.dims)
    return fit_coefficients(surrogate_samples(field), freq, ridge)


def mirror_fi_layer(field, targets, n_freq=DEFAULT_N_FREQ, ridge=None):
    """FI layer for non-periodic data via the mirrored periodic surrogate."""
    if n_freq < 1:
        raise ValueError(f"n_freq must be >= 1, got {n_freq}")
    targets = as_points(targets, field.dims, name="targets")
    return evaluate(fit_surrogate(field, n_freq, ridge), embed_subdomain(targets))
