"""Linear least squares over complex numbers and a fixed-step RK4 integrator."""

import numpy as np

RCOND = 1e-12


def as_finite_matrix(A, name="A"):
    A = np.asarray(A)
    if A.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} contains non-finite entries")
    return A


def solve_complex_lls(A, b, ridge=0.0):
    """Minimize ``||A c - b||^2 + ridge * ||c||^2`` over ``c``.

    ``b`` may be a vector of length H or an H x C matrix, in which case every
    column is solved independently. With ``ridge == 0`` the minimizer is the
    SVD pseudoinverse solution (singular values below ``1e-12 * s_max`` are
    dropped), so rank-deficient systems get the minimum-norm answer. With
    ``ridge > 0`` the regularized normal equations are solved.

    Real inputs give real output; otherwise the result is complex.
    """
    A = as_finite_matrix(A)
    b = np.asarray(b)
    if b.ndim not in (1, 2) or b.shape[0] != A.shape[0]:
        raise ValueError(f"b has shape {b.shape}, expected leading length {A.shape[0]}")
    if not np.all(np.isfinite(b)):
        raise ValueError("b contains non-finite entries")
    ridge = float(ridge)
    if not ridge >= 0.0:
        raise ValueError(f"ridge must be nonnegative, got {ridge}")

    if ridge == 0.0:
        c, *_ = np.linalg.lstsq(A, b, rcond=RCOND)
        return c
    AH = A.conj().T
    G = AH @ A
    G[np.diag_indices_from(G)] += ridge
    return np.linalg.solve(G, AH @ b)


def lls_operator(A, ridge=0.0):
    """Return the matrix ``P`` with ``solve_complex_lls(A, b, ridge) == P @ b``.

    Used to factor a fixed design matrix once and reuse it for many
    right-hand sides.
    """
    A = as_finite_matrix(A)
    ridge = float(ridge)
    if not ridge >= 0.0:
        raise ValueError(f"ridge must be nonnegative, got {ridge}")
    if ridge == 0.0:
        return np.linalg.pinv(A, rcond=RCOND)
    AH = A.conj().T
    G = AH @ A
    G[np.diag_indices_from(G)] += ridge
    return np.linalg.solve(G, AH)


def rk4_step(rhs, state, dt):
    """One classical fourth-order Runge-Kutta step of ``du/dt = rhs(u)``."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    state = np.asarray(state, dtype=float)

    def f(u):
        du = np.asarray(rhs(u), dtype=float)
        if du.shape != state.shape:
            raise ValueError(f"rhs returned shape {du.shape}, state has shape {state.shape}")
        return du

    k1 = f(state)
    k2 = f(state + 0.5 * dt * k1)
    k3 = f(state + 0.5 * dt * k2)
    k4 = f(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def integrate(rhs, state, dt, n_steps):
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    u = np.asarray(state, dtype=float)
    for _ in range(int(n_steps)):
        u = rk4_step(rhs, u, dt)
    return u
