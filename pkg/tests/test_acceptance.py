"""Acceptance criteria.  Each test prints one PASS/FAIL line with the measured
values and wall time, then asserts.  Data generation counts toward the time."""

import time
from contextlib import contextmanager

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from grind.experiments import best_row, interpolation_sweep, rollout_reports
from grind.fourier_interp import (
    FourierCoefficients,
    ScatteredField,
    evaluate,
    fi_layer,
    frequency_set,
    grid_targets,
    mirror_fi_layer,
)
from grind.mol_forecaster import (
    StencilModel,
    analytic_model,
    default_library,
    derivative_snapshots,
    fit_model,
    zero_model,
)
from grind.numerics import integrate
from grind.pde_sim import SYSTEMS, GridField, SystemSpec, analytic_rhs, default_dt, initial_condition, simulate
from grind.pipeline import GrindConfig, grind_step
from grind.storage import (
    FormatError,
    generate_dataset,
    load_model,
    read_dataset,
    save_model,
    write_dataset,
)

# measured at seed 0: mirrored / periodic MSE = 0.01344; committed threshold is twice that
MIRROR_RATIO_THRESHOLD = 0.027


@pytest.fixture
def criterion(capsys):
    """Yields a recorder; on exit prints the verdict line and asserts."""

    @contextmanager
    def run(number, budget):
        result = {"ok": True, "detail": ""}
        start = time.perf_counter()
        yield result
        elapsed = time.perf_counter() - start
        in_budget = elapsed < budget
        ok = bool(result["ok"]) and in_budget
        with capsys.disabled():
            print(f"\ncriterion {number:>2}: {'PASS' if ok else 'FAIL'}  {result['detail']}  "
                  f"[{elapsed:.2f}s / budget {budget:g}s]")
        assert in_budget, f"criterion {number} took {elapsed:.2f}s, budget {budget}s"
        assert result["ok"], f"criterion {number}: {result['detail']}"

    return run


def conjugate_symmetric(rng, counts):
    freq = frequency_set(counts)
    index = {tuple(k): i for i, k in enumerate(freq.indices)}
    c = np.zeros(len(freq), complex)
    for i, k in enumerate(freq.indices):
        j = index[tuple(-k)]
        if i < j:
            c[i] = rng.standard_normal() + 1j * rng.standard_normal()
            c[j] = np.conj(c[i])
        elif i == j:
            c[i] = rng.standard_normal()
    return FourierCoefficients(freq, c)


def test_criterion_01_band_limited_exactness(criterion):
    targets = grid_targets((64, 64))
    worst = []

    @settings(max_examples=20, deadline=None, derandomize=True)
    @given(seed=st.integers(0, 2**32 - 1))
    def check(seed):
        rng = np.random.default_rng(seed)
        coeffs = conjugate_symmetric(rng, (7, 7))
        pts = rng.random((200, 2))
        field = ScatteredField(pts, evaluate(coeffs, pts))
        err = np.mean((fi_layer(field, targets, n_freq=7) - evaluate(coeffs, targets)) ** 2)
        worst.append(err)
        assert err < 1e-12

    with criterion(1, budget=1.0) as r:
        try:
            check()
        except AssertionError:
            r["ok"] = False
        r["detail"] = f"max grid MSE {max(worst):.2e} over {len(worst)} draws (< 1e-12)"


def advection_sweep(n_points, kind="advection"):
    datasets = [generate_dataset(SystemSpec(kind), 64, n_points, 32, seed=s) for s in range(3)]
    return interpolation_sweep(datasets, range(3, 26))


def test_criterion_02_u_curve(criterion):
    with criterion(2, budget=60.0) as r:
        rows = advection_sweep(900)
        best = best_row(rows)
        first, last = rows[0].mse, rows[-1].mse
        interior = rows[0].n_freq < best.n_freq < rows[-1].n_freq
        deep = best.mse <= 0.5 * min(first, last)
        r["ok"] = interior and deep
        r["detail"] = (f"advection 900 pts, 3 seeds: argmin n_freq={best.n_freq} mse={best.mse:.3e}; "
                       f"mse(3)={first:.3e} mse(25)={last:.3e}")


def test_criterion_03_optimal_frequency_scaling(criterion):
    # broadband Burgers data; see the project notes for the advection sweep
    with criterion(3, budget=120.0) as r:
        argmins, inside = [], []
        for n in (225, 484, 900):
            best = best_row(advection_sweep(n, kind="burgers"))
            argmins.append(best.n_freq)
            inside.append(0.4 * np.sqrt(n) <= best.n_freq <= 0.9 * np.sqrt(n))
        monotone = all(a <= b for a, b in zip(argmins, argmins[1:]))
        r["ok"] = monotone and all(inside)
        r["detail"] = (f"burgers argmins n=225/484/900: {argmins}; "
                       f"intervals [6,13.5] [8.8,19.8] [12,27]; non-decreasing={monotone}")


def test_criterion_04_mirror_extension(criterion):
    with criterion(4, budget=5.0) as r:
        rng = np.random.default_rng(0)
        pts = rng.random((400, 2))
        field = ScatteredField(pts, pts.sum(axis=1))
        targets = grid_targets((64, 64))
        truth = targets.sum(axis=1)[:, None]
        mirrored = np.mean((mirror_fi_layer(field, targets, 9) - truth) ** 2)
        plain = np.mean((fi_layer(field, targets, 9) - truth) ** 2)
        ratio = mirrored / plain
        r["ok"] = ratio <= MIRROR_RATIO_THRESHOLD and ratio <= 0.1
        r["detail"] = (f"mirror {mirrored:.3e} / periodic {plain:.3e} = {ratio:.4f} "
                       f"(<= {MIRROR_RATIO_THRESHOLD}, <= 0.1)")


def test_criterion_05_stencil_recovery(criterion):
    with criterion(5, budget=10.0) as r:
        rng = np.random.default_rng(0)
        lib = default_library(2)
        planted = StencilModel(lib, rng.standard_normal((2, len(lib))))
        states = [GridField(rng.standard_normal((2, 32, 32))) for _ in range(3)]
        fitted = fit_model([(s, planted.rhs(s)) for s in states], lib)
        plant_err = np.max(np.abs(fitted.weights - planted.weights))

        spec = SystemSpec("advection")
        run = generate_dataset(spec, 64, 900, 32, seed=0).run
        model = fit_model(derivative_snapshots(run.frames, run.record_dt))
        ref = analytic_model(spec, 1 / 64)
        devs = []
        for name in ("centered_x[0]", "centered_y[0]"):
            i = model.library.index(name)
            devs.append(abs(model.weights[0, i] - ref.weights[0, i]) / abs(ref.weights[0, i]))
        r["ok"] = plant_err < 1e-8 and max(devs) < 0.05
        r["detail"] = (f"planted max error {plant_err:.1e} (< 1e-8); advection velocity deviation "
                       f"x {devs[0]:.2%}, y {devs[1]:.2%} (< 5%)")


def test_criterion_06_analytic_equivalence(criterion):
    with criterion(6, budget=1.0) as r:
        rng = np.random.default_rng(0)
        worst = 0.0
        for kind in SYSTEMS:
            spec = SystemSpec(kind)
            model = analytic_model(spec, 1 / 64)
            for _ in range(10):
                f = GridField(rng.standard_normal((spec.channels, 64, 64)))
                worst = max(worst, np.max(np.abs(model.rhs(f).values - analytic_rhs(spec, f).values)))
        r["ok"] = worst < 1e-12
        r["detail"] = f"max |model - simulator| {worst:.1e} over 10 fields x {len(SYSTEMS)} systems (< 1e-12)"


def test_criterion_07_rk4_order(criterion):
    with criterion(7, budget=1.0) as r:
        dts = [0.1, 0.05, 0.025, 0.0125]
        errs = [abs(integrate(lambda u: u, 1.0, dt, round(1 / dt)) - np.e) for dt in dts]
        order = np.polyfit(np.log(dts), np.log(errs), 1)[0]
        r["ok"] = order >= 3.8
        r["detail"] = f"measured order {order:.3f} (>= 3.8)"


def test_criterion_08_conservation(criterion):
    with criterion(8, budget=5.0) as r:
        drifts = {}
        for kind in ("advection", "diffusion"):
            spec = SystemSpec(kind)
            ic = GridField(initial_condition(spec, 64, 0).values + 1.0)
            run = simulate(spec, ic, default_dt(spec, 64), 32)
            mass0 = ic.values.sum()
            drifts[kind] = max(abs(f.values.sum() - mass0) / abs(mass0) for f in run.frames)
        r["ok"] = all(d <= 1e-9 for d in drifts.values())
        r["detail"] = "relative mass drift over 32 steps: " + ", ".join(
            f"{k} {v:.1e}" for k, v in drifts.items()) + " (<= 1e-9)"


def test_criterion_09_end_to_end(criterion):
    with criterion(9, budget=60.0) as r:
        lines, ok = [], True
        for kind in ("advection", "wave"):
            ds = generate_dataset(SystemSpec(kind), 64, 900, 32, seed=0)
            cfg = GrindConfig(dt=ds.run.record_dt)
            models = {
                "analytic": analytic_model(ds.run.spec, 1 / 64),
                "fitted": fit_model(derivative_snapshots(ds.run.frames, ds.run.record_dt)),
            }
            for label, model in models.items():
                pred, base = rollout_reports(ds, model, cfg, horizon=16)
                ok &= pred.per_step_mse[-1] < base.per_step_mse[-1]
                lines.append(f"{kind}/{label} {pred.per_step_mse[-1]:.2e} vs {base.per_step_mse[-1]:.2e}")
        r["ok"] = ok
        r["detail"] = "16-step MSE vs persistence: " + "; ".join(lines)


def test_criterion_10_identity_composition(criterion):
    with criterion(10, budget=1.0) as r:
        ds = generate_dataset(SystemSpec("advection"), 64, 900, 3, seed=0)
        cfg = GrindConfig(dt=ds.run.record_dt)
        u = ds.observations[0]
        grid = grid_targets(cfg.grid_resolution)
        up = fi_layer(u, grid, cfg.n_freq)
        round_trip = fi_layer(ScatteredField(grid, up), u.points, cfg.n_freq)
        diff = np.max(np.abs(grind_step(u, zero_model(), cfg).values - round_trip))
        r["ok"] = diff < 1e-12
        r["detail"] = f"max |grind_step(zero rhs) - FI round trip| {diff:.1e} (< 1e-12)"


def test_criterion_11_file_round_trip(criterion, tmp_path):
    with criterion(11, budget=1.0) as r:
        ds = generate_dataset(SystemSpec("wave"), 32, 100, 4, seed=2)
        write_dataset(ds, tmp_path / "d")
        back = read_dataset(tmp_path / "d")
        same_data = (back.run.array().tobytes() == ds.run.array().tobytes()
                     and back.points.tobytes() == ds.points.tobytes()
                     and all(a.values.tobytes() == b.values.tobytes()
                             for a, b in zip(back.observations, ds.observations)))
        model = analytic_model(SystemSpec("burgers"), 1 / 32)
        save_model(model, tmp_path / "m")
        same_model = load_model(tmp_path / "m").weights.tobytes() == model.weights.tobytes()

        errors = []
        for path, payload, loader in ((tmp_path / "d", "payload.bin", read_dataset),
                                      (tmp_path / "m", "weights.bin", load_model)):
            blob = (path / payload).read_bytes()
            (path / payload).write_bytes(blob[: len(blob) // 2])
            try:
                loader(path)
            except FormatError as exc:
                errors.append(str(exc))
        r["ok"] = same_data and same_model and len(errors) == 2
        r["detail"] = (f"dataset bit-exact={same_data}, model bit-exact={same_model}, "
                       f"truncation errors raised {len(errors)}/2")
