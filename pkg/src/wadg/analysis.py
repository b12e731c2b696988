"""Experiment harness: h-convergence studies for projections and the wave
solver, evolution-operator spectra, Jacobian-constant growth studies,
moment-conservation rate studies, and a CPU matrix-free RHS benchmark.

Every study returns a ConvergenceRecord (or SpectrumResult) and can emit
machine-readable CSV; reruns with identical arguments reproduce results
bitwise (all computations are deterministic, fixed-order numpy).
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import geometry, meshgen, operators, refelem, solver
from .solver import Formulation, MassMode, MediumField, SolverConfig


class SizeCapExceeded(Exception):
    """Operator assembly would exceed the configured unknown cap."""


class EigenSolveFailure(Exception):
    """Dense eigenvalue solve did not converge."""


@dataclass
class ConvergenceRecord:
    """(h, error) series with a least-squares log-log slope over a window
    of the finest levels (default 3)."""

    h: np.ndarray
    errors: np.ndarray
    fitted_slope: float = 0.0
    fit_residual: float = 0.0
    window: int = 3
    label: str = ""

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.errors = np.asarray(self.errors, dtype=float)
        if np.any(np.diff(self.h) >= 0):
            raise ValueError("h must be strictly decreasing")
        if np.any(self.errors <= 0):
            raise ValueError("errors must be positive")
        w = min(self.window, len(self.h))
        lh, le = np.log(self.h[-w:]), np.log(self.errors[-w:])
        coef = np.polyfit(lh, le, 1)
        self.fitted_slope = float(coef[0])
        self.fit_residual = float(np.sqrt(np.mean((np.polyval(coef, lh) - le) ** 2)))

    def to_csv(self, path):
        w = min(self.window, len(self.h))
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(["h", "error", "slope_window_flag"])
            for i, (h, e) in enumerate(zip(self.h, self.errors)):
                out.writerow([repr(h), repr(e), int(i >= len(self.h) - w)])


@dataclass
class SpectrumResult:
    """Eigenvalues of the time-evolution operator, |lambda|-descending."""

    eigenvalues: np.ndarray = field(repr=False)
    max_real_part: float = 0.0

    def __post_init__(self):
        order = np.argsort(-np.abs(self.eigenvalues))
        self.eigenvalues = self.eigenvalues[order]
        self.max_real_part = float(self.eigenvalues.real.max())

    @property
    def spectral_radius(self):
        return float(np.abs(self.eigenvalues[0]))

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            out = csv.writer(f)
            out.writerow(["re", "im"])
            for lam in self.eigenvalues:
                out.writerow([repr(lam.real), repr(lam.imag)])


def assemble_evolution_matrix(mesh, config, medium=MediumField(), cap=6000):
    """Dense matrix of the full semi-discrete operator (mass inverse
    included): column j is the RHS applied to unit vector e_j, ordering
    (p, u1, u2) blocks of K*Np each."""
    disc = solver.Discretization(mesh, config, medium)
    K, Np = mesh.K, disc.ref.Np
    n = 3 * K * Np
    if n > cap:
        raise SizeCapExceeded(f"{n} unknowns exceed cap {cap}")
    A = np.empty((n, n))
    z = np.zeros((3, K, Np))
    for j in range(n):
        z.flat[j] = 1.0
        st = solver.FieldState(z[0], z[1], z[2])
        d = solver.rhs_full(st, disc)
        A[:, j] = np.concatenate([d.p.ravel(), d.u1.ravel(), d.u2.ravel()])
        z.flat[j] = 0.0
    return A


def eigenspectrum(matrix):
    """All eigenvalues of the assembled evolution matrix."""
    try:
        lam = np.linalg.eigvals(matrix)
    except np.linalg.LinAlgError as exc:
        raise EigenSolveFailure(str(exc)) from exc
    if np.any(~np.isfinite(lam)):
        raise EigenSolveFailure("non-finite eigenvalues")
    return SpectrumResult(eigenvalues=lam)


# ---------------------------------------------------------------------------
# Studies

def default_exact_fn(x, y):
    return np.sin(np.pi * x) * np.sin(np.pi * y)


PROJECTION_METHODS = ("l2", "wadg", "lsc")


def projection_convergence_study(meshes, N, method, exact_fn=default_exact_fn,
                                 quad_margin=4, window=3):
    """Global L2 error of the chosen projection on each mesh of a family.

    method: 'l2' (weighted L2 projection), 'wadg' (weight-adjusted
    pseudo-projection), or 'lsc' (square-root-weighted projection error).
    Quadrature degree 2N + 2 N_geo + quad_margin approximates the exact
    integration used in the reference results.
    """
    if len(meshes) < 4:
        raise ValueError("need at least 4 refinement levels")
    if method not in PROJECTION_METHODS:
        raise ValueError(f"unknown method {method!r}")
    hs, errs = [], []
    for mesh in meshes:
        deg = 2 * N + 2 * mesh.N_geo + quad_margin
        ref = refelem.build_reference_element(N, mesh.shape, volume_quad_degree=deg)
        geo = geometry.compute_geometric_data(mesh, ref)
        if method == "l2":
            err = operators.global_l2_error(ref, geo, operators.l2_project(ref, geo, exact_fn), exact_fn)
        elif method == "wadg":
            err = operators.global_l2_error(ref, geo, operators.wadg_pseudo_project(ref, geo, exact_fn), exact_fn)
        else:
            err = float(np.sqrt(np.sum(operators.lsc_projection_error(ref, geo, exact_fn) ** 2)))
        hs.append(mesh.h)
        errs.append(err)
    return ConvergenceRecord(hs, errs, window=window, label=f"projection-{method}-N{N}")


def kappa_growth_study(omega, N, levels=5, N_geo=None, K1D0=4, window=3):
    """Growth of max_k ||1/J|| * ||J||_{W^{N+1,inf}} on the cosine-warped
    family; fitted slope is negative for growing constants."""
    if levels < 4:
        raise ValueError("need at least 4 refinement levels")
    N_geo = N_geo or N
    hs, ks = [], []
    for l in range(levels):
        mesh = meshgen.warped_arnold_mesh(meshgen.WarpParams(omega, K1D0 * 2**l), N_geo)
        hs.append(mesh.h)
        ks.append(geometry.kappa_tilde(mesh, N + 1))
    return ConvergenceRecord(hs, ks, window=window, label=f"kappa-omega{omega}-N{N}")


def conservation_rate_study(N=2, N_geo=None, levels=(1, 2, 3, 4),
                            exact_fn=default_exact_fn, window=3):
    """Zeroth-moment discrepancy of the weight-adjusted inner product with
    w = J on nested disk meshes.

    Uses a quadrature much richer than the (N+1)^2-point update rule: on
    exactly that tensor rule any weight is point-equivalent to a Q^N
    polynomial and the discrete operator is exactly conservative, so the
    continuous-operator rate is only visible on finer rules.  N_geo
    defaults to N+1 since one-curved-edge isoparametric Jacobians of degree
    N stay inside Q^N.
    """
    N_geo = N_geo or N + 1
    ref = refelem.build_reference_element(
        N, refelem.ElementShape.Quadrilateral, volume_quad_degree=4 * N + 6)
    hs, errs = [], []
    for l in levels:
        mesh = meshgen.disk_mesh(l, N_geo)
        geo = geometry.compute_geometric_data(mesh, ref)
        hs.append(mesh.h)
        errs.append(operators.conservation_moment_error(ref, geo, geo.Jq, exact_fn, 0))
    return ConvergenceRecord(hs, errs, window=window, label=f"conservation-N{N}")


def wave_convergence_study(meshes, N, config=None, T=1.0, medium=MediumField(),
                           mass_modes=(MassMode.WADG,), window=3,
                           dt_check=False, n_outputs=1):
    """Final-time pressure L2 error of the disk standing mode per mesh.

    Returns {mass_mode: ConvergenceRecord}.  With dt_check=True the coarsest
    level is rerun at half the time step and the relative error change is
    stored in record.label (must be < 1% for the spatial error to dominate).
    """
    if config is None:
        config = SolverConfig(N=N, cfl=1.0)
    out = {}
    for mode in mass_modes:
        cfg = SolverConfig(N=N, formulation=config.formulation, mass_mode=mode,
                           flux=config.flux, cfl=config.cfl,
                           volume_quad_degree=config.volume_quad_degree,
                           face_quad_degree=config.face_quad_degree,
                           update_quad_degree=config.update_quad_degree,
                           unsafe_quadrature=config.unsafe_quadrature)
        hs, errs = [], []
        for mesh in meshes:
            _, diag = solver.run(mesh, cfg, solver.bessel_initial_condition, T,
                                 medium=medium, exact_p=solver.bessel_pressure,
                                 n_outputs=n_outputs)
            hs.append(mesh.h)
            errs.append(diag["l2_error_p"][-1])
        label = f"wave-N{N}-{mode.value}"
        if dt_check:
            ref = refelem.build_reference_element(N, meshes[0].shape)
            dt0 = solver.stable_dt(meshes[0], ref, medium, cfg.cfl)
            _, diag2 = solver.run(meshes[0], cfg, solver.bessel_initial_condition, T,
                                  medium=medium, exact_p=solver.bessel_pressure,
                                  n_outputs=n_outputs, dt=0.5 * dt0)
            rel = abs(diag2["l2_error_p"][-1] - errs[0]) / errs[0]
            label += f"-dtcheck{rel:.2e}"
        out[mode] = ConvergenceRecord(hs, errs, window=window, label=label)
    return out


# ---------------------------------------------------------------------------
# Benchmark

def benchmark_rhs(mesh, config, repetitions=20, medium=MediumField(), seed=0):
    """Median wall time per degree of freedom of the volume, surface, and
    mass-update phases of one RHS evaluation."""
    if repetitions < 10:
        raise ValueError("need at least 10 repetitions")
    disc = solver.Discretization(mesh, config, medium)
    rng = np.random.default_rng(seed)
    K, Np = mesh.K, disc.ref.Np
    st = solver.FieldState(*(rng.standard_normal((K, Np)) for _ in range(3)))
    ndof = 3 * K * Np
    sw = config.formulation is Formulation.StrongWeak

    phases = {
        "volume": lambda: solver._volume_terms(st, disc, strong_weak=sw),
        "surface": lambda: solver._surface_terms(st, disc, strong_weak=sw),
        "update": lambda: solver.apply_mass_inverse(solver.FieldState(st.p, st.u1, st.u2), disc),
    }
    report = {}
    for name, fn in phases.items():
        fn(), fn()  # warmup
        times = []
        for _ in range(repetitions):
            t0 = time.perf_counter_ns()
            fn()
            times.append(time.perf_counter_ns() - t0)
        report[name] = float(np.median(times)) / ndof
    report["total"] = sum(report[k] for k in phases)
    report["ndof"] = ndof
    return report


def benchmark_to_csv(rows, path):
    """rows: iterables of (phase, N, K, ns_per_dof)."""
    with open(path, "w", newline="") as f:
        out = csv.writer(f)
        out.writerow(["phase", "N", "K", "ns_per_dof"])
        for row in rows:
            out.writerow(list(row))
