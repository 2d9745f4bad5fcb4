"""On-disk formats for datasets and stencil models.

Both are directories holding a plain-text ``manifest.txt`` (``key = value``
lines) next to a little-endian float64 binary payload.  The manifest records
the payload size and SHA-256 so truncation or corruption is detected on read.

Dataset payload order: points (H x 2), grid frames (F x C x n_y x n_x), then
scattered observations (F x H x C).
"""

import csv
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from grind.fourier_interp import ScatteredField
from grind.mol_forecaster import Feature, FeatureLibrary, StencilModel
from grind.pde_sim import GridField, SimulationRun, SystemSpec, generate_points, run_system, sample_scattered

SCHEMA_VERSION = 1
MANIFEST = "manifest.txt"
DATASET_PAYLOAD = "payload.bin"
MODEL_PAYLOAD = "weights.bin"
DTYPE = np.dtype("<f8")


class FormatError(ValueError):
    """Malformed, truncated or incompatible file."""


def write_manifest(path, entries):
    lines = [f"{key} = {value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path):
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing manifest {path}")
    entries = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
        entries[key.strip()] = value.strip()
    return entries


def _require(manifest, key, kind):
    if key not in manifest:
        raise FormatError(f"manifest lacks {key!r}")
    return manifest[key] if kind is None else _coerce(manifest[key], key, kind)


def _coerce(value, key, kind):
    try:
        return kind(value)
    except ValueError:
        raise FormatError(f"manifest key {key!r} has invalid value {value!r}") from None


def _check_header(manifest, fmt):
    if manifest.get("format") != fmt:
        raise FormatError(f"expected format {fmt!r}, got {manifest.get('format')!r}")
    version = _require(manifest, "schema_version", int)
    if version != SCHEMA_VERSION:
        raise FormatError(f"unsupported schema_version {version} (this build reads {SCHEMA_VERSION})")


def _write_payload(path, arrays):
    blob = b"".join(np.ascontiguousarray(a, dtype=DTYPE).tobytes() for a in arrays)
    Path(path).write_bytes(blob)
    return {"byte_order": "little", "dtype": "float64", "payload_bytes": len(blob),
            "payload_sha256": hashlib.sha256(blob).hexdigest()}


def _read_payload(path, manifest, n_values):
    path = Path(path)
    if not path.is_file():
        raise FormatError(f"missing payload {path}")
    blob = path.read_bytes()
    expected = _require(manifest, "payload_bytes", int)
    if len(blob) != expected or expected != n_values * DTYPE.itemsize:
        raise FormatError(
            f"payload {path} has {len(blob)} bytes; manifest says {expected}, "
            f"shape implies {n_values * DTYPE.itemsize}"
        )
    if hashlib.sha256(blob).hexdigest() != _require(manifest, "payload_sha256", None):
        raise FormatError(f"checksum mismatch for {path}")
    return np.frombuffer(blob, dtype=DTYPE).astype(float)


@dataclass(frozen=True)
class Dataset:
    observations: list  # ScatteredField per frame
    run: SimulationRun
    points: np.ndarray
    point_seed: int

    @property
    def system(self):
        return self.run.spec.kind


def make_dataset(run, points, point_seed):
    points = np.asarray(points, dtype=float)
    observations = [sample_scattered(frame, points) for frame in run.frames]
    return Dataset(observations, run, points, int(point_seed))


def generate_dataset(spec, resolution=64, n_points=900, n_frames=32, seed=0, point_seed=None,
                     dt=None, substeps=4, record_stride=1, max_wavenumber=3):
    point_seed = seed + 1_000_003 if point_seed is None else point_seed
    run = run_system(spec, resolution, n_frames, seed, dt, substeps, record_stride, max_wavenumber)
    return make_dataset(run, generate_points(n_points, point_seed), point_seed)


def write_dataset(dataset, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    run = dataset.run
    n_x, n_y = run.resolution
    obs = np.stack([o.values for o in dataset.observations])
    payload = _write_payload(path / DATASET_PAYLOAD, [dataset.points, run.array(), obs])
    entries = {
        "format": "grind-dataset",
        "schema_version": SCHEMA_VERSION,
        "system": run.spec.kind,
        **{f"param.{k}": repr(float(v)) for k, v in sorted(run.spec.params.items())},
        "seed": run.seed,
        "point_seed": dataset.point_seed,
        "distribution": "uniform_random",
        "max_wavenumber": run.max_wavenumber,
        "dt": repr(float(run.dt)),
        "substeps": run.substeps,
        "record_stride": run.record_stride,
        "resolution": f"{n_x}x{n_y}",
        "channels": run.frames[0].channels,
        "n_frames": len(run.frames),
        "n_points": dataset.points.shape[0],
        **payload,
    }
    write_manifest(path / MANIFEST, entries)
    return path


def _dataset_shape(manifest):
    try:
        n_x, n_y = (int(v) for v in _require(manifest, "resolution", None).split("x"))
    except ValueError:
        raise FormatError(f"bad resolution {manifest['resolution']!r}") from None
    return (n_x, n_y, _require(manifest, "channels", int), _require(manifest, "n_frames", int),
            _require(manifest, "n_points", int))


def _spec_from_manifest(manifest):
    params = {k[len("param."):]: _coerce(v, k, float) for k, v in manifest.items() if k.startswith("param.")}
    try:
        return SystemSpec(_require(manifest, "system", None), params)
    except ValueError as exc:
        raise FormatError(str(exc)) from None


def read_dataset(path):
    path = Path(path)
    manifest = read_manifest(path / MANIFEST)
    _check_header(manifest, "grind-dataset")
    n_x, n_y, C, F, H = _dataset_shape(manifest)
    n_points, n_grid, n_obs = H * 2, F * C * n_y * n_x, F * H * C
    flat = _read_payload(path / DATASET_PAYLOAD, manifest, n_points + n_grid + n_obs)
    points = flat[:n_points].reshape(H, 2)
    grid = flat[n_points:n_points + n_grid].reshape(F, C, n_y, n_x)
    obs = flat[n_points + n_grid:].reshape(F, H, C)
    run = SimulationRun(
        _spec_from_manifest(manifest),
        _require(manifest, "dt", float),
        _require(manifest, "substeps", int),
        _require(manifest, "record_stride", int),
        [GridField(g) for g in grid],
        _require(manifest, "seed", int),
        _require(manifest, "max_wavenumber", int),
    )
    observations = [ScatteredField(points, o) for o in obs]
    return Dataset(observations, run, points, _require(manifest, "point_seed", int))


def regenerate_dataset(path):
    """Rebuild a dataset from its manifest alone."""
    manifest = read_manifest(Path(path) / MANIFEST)
    _check_header(manifest, "grind-dataset")
    n_x, n_y, _, F, H = _dataset_shape(manifest)
    return generate_dataset(
        _spec_from_manifest(manifest), (n_x, n_y), H, F,
        seed=_require(manifest, "seed", int),
        point_seed=_require(manifest, "point_seed", int),
        dt=_require(manifest, "dt", float),
        substeps=_require(manifest, "substeps", int),
        record_stride=_require(manifest, "record_stride", int),
        max_wavenumber=_require(manifest, "max_wavenumber", int),
    )


def export_observations_csv(dataset, path):
    """Scattered observations as CSV: frame, point, x, y, one column per channel."""
    C = dataset.observations[0].channels
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame", "point", "x", "y"] + [f"u{c}" for c in range(C)])
        for t, obs in enumerate(dataset.observations):
            for j, (p, v) in enumerate(zip(obs.points, obs.values)):
                writer.writerow([t, j, repr(float(p[0])), repr(float(p[1]))] + [repr(float(x)) for x in v])


def save_model(model, path, extra=None):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    payload = _write_payload(path / MODEL_PAYLOAD, [model.weights])
    entries = {
        "format": "grind-model",
        "schema_version": SCHEMA_VERSION,
        "channels": model.library.channels,
        "n_features": len(model.library),
        **{f"feature.{i}": str(f) for i, f in enumerate(model.library.features)},
        **(extra or {}),
        **payload,
    }
    write_manifest(path / MANIFEST, entries)
    return path


def load_model(path):
    path = Path(path)
    manifest = read_manifest(path / MANIFEST)
    _check_header(manifest, "grind-model")
    C = _require(manifest, "channels", int)
    n = _require(manifest, "n_features", int)
    try:
        features = tuple(Feature.parse(_require(manifest, f"feature.{i}", None)) for i in range(n))
        library = FeatureLibrary(features, C)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    weights = _read_payload(path / MODEL_PAYLOAD, manifest, C * n).reshape(C, n)
    return StencilModel(library, weights)
