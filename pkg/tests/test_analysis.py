import csv

import numpy as np
import pytest

from wadg import analysis as an
from wadg import meshgen as mg
from wadg import solver as sv
from wadg.solver import FluxParams, Formulation, MassMode, SolverConfig


class TestConvergenceRecord:
    def test_exact_power_fit(self):
        h = np.array([0.4, 0.2, 0.1, 0.05])
        rec = an.ConvergenceRecord(h, 3.7 * h**2.5)
        assert rec.fitted_slope == pytest.approx(2.5, abs=1e-12)
        assert rec.fit_residual < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            an.ConvergenceRecord([0.1, 0.2], [1.0, 1.0])
        with pytest.raises(ValueError):
            an.ConvergenceRecord([0.2, 0.1], [1.0, -1.0])

    def test_csv_schema(self, tmp_path):
        rec = an.ConvergenceRecord([0.4, 0.2, 0.1, 0.05], [1, 0.1, 0.01, 0.001])
        path = tmp_path / "r.csv"
        rec.to_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["h", "error", "slope_window_flag"]
        assert len(rows) == 5
        assert [r[2] for r in rows[1:]] == ["0", "1", "1", "1"]


class TestEvolutionMatrix:
    def test_linearity(self, rng):
        m = mg.disk_mesh(0, 2)
        cfg = SolverConfig(N=2, flux=FluxParams(1, 1))
        A = an.assemble_evolution_matrix(m, cfg)
        disc = sv.Discretization(m, cfg)
        x = rng.standard_normal(A.shape[0])
        K, Np = m.K, disc.ref.Np
        st = sv.FieldState(*(x.reshape(3, K, Np)))
        d = sv.rhs_full(st, disc)
        direct = np.concatenate([d.p.ravel(), d.u1.ravel(), d.u2.ravel()])
        assert np.max(np.abs(A @ x - direct)) < 1e-12 * max(1, np.max(np.abs(direct)))
        y = A @ (2.5 * x)
        assert np.max(np.abs(y - 2.5 * (A @ x))) < 1e-12 * np.max(np.abs(y))

    def test_size_cap(self):
        m = mg.disk_mesh(2, 3)
        with pytest.raises(an.SizeCapExceeded):
            an.assemble_evolution_matrix(m, SolverConfig(N=3), cap=100)

    def test_single_affine_element_skew(self):
        # one element with mirror boundaries, central flux: purely imaginary
        m = mg.uniform_quad_mesh(1)
        cfg = SolverConfig(N=3, formulation=Formulation.StrongWeak,
                           flux=FluxParams(0, 0))
        spec = an.eigenspectrum(an.assemble_evolution_matrix(m, cfg))
        assert spec.max_real_part <= 1e-8 * spec.spectral_radius

    def test_conjugate_pairing(self):
        m = mg.uniform_quad_mesh(2)
        cfg = SolverConfig(N=2, formulation=Formulation.StrongWeak,
                           flux=FluxParams(0, 0))
        spec = an.eigenspectrum(an.assemble_evolution_matrix(m, cfg))
        lam = spec.eigenvalues
        for v in lam[:40]:
            assert np.min(np.abs(lam - np.conj(v))) < 1e-8 * spec.spectral_radius


class TestEigenspectrum:
    def test_zero_matrix(self):
        spec = an.eigenspectrum(np.zeros((12, 12)))
        assert np.max(np.abs(spec.eigenvalues)) == 0.0

    def test_failure_on_nonfinite(self):
        with pytest.raises(an.EigenSolveFailure):
            an.eigenspectrum(np.full((4, 4), np.nan))

    def test_sorted_by_magnitude(self):
        spec = an.eigenspectrum(np.diag([1.0, -3.0, 2.0]))
        assert np.abs(spec.eigenvalues[0]) == pytest.approx(3.0)
        assert spec.max_real_part == pytest.approx(2.0)

    def test_csv(self, tmp_path):
        spec = an.eigenspectrum(np.diag([1.0, -2.0]))
        path = tmp_path / "s.csv"
        spec.to_csv(path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["re", "im"]
        assert len(rows) == 3

    def test_dissipative_flux_spectrum(self):
        m = mg.disk_mesh(0, 3)
        cfg = SolverConfig(N=3, formulation=Formulation.StrongWeak,
                           flux=FluxParams(1, 1))
        spec = an.eigenspectrum(an.assemble_evolution_matrix(m, cfg))
        assert spec.max_real_part <= 1e-8 * spec.spectral_radius
        assert spec.eigenvalues.real.min() < -1e-6 * spec.spectral_radius


class TestStudies:
    def test_projection_study_requires_levels(self):
        meshes = [mg.arnold_mesh(l) for l in range(3)]
        with pytest.raises(ValueError):
            an.projection_convergence_study(meshes, 3, "l2")

    def test_projection_study_unknown_method(self):
        meshes = [mg.arnold_mesh(l) for l in range(4)]
        with pytest.raises(ValueError):
            an.projection_convergence_study(meshes, 3, "bogus")

    def test_affine_family_methods_coincide(self):
        meshes = mg.mesh_family("uniform", 4, N_geo=1, K1D=2)
        recs = {m: an.projection_convergence_study(meshes, 2, m)
                for m in an.PROJECTION_METHODS}
        for m in an.PROJECTION_METHODS:
            assert recs[m].fitted_slope == pytest.approx(3.0, abs=0.25)
        for a, b in zip(recs["l2"].errors, recs["wadg"].errors):
            assert a == pytest.approx(b, rel=1e-9)
        for a, b in zip(recs["l2"].errors, recs["lsc"].errors):
            assert a == pytest.approx(b, rel=1e-9)

    def test_kappa_study_affine_flat(self):
        # omega = 0 keeps the family affine: kappa == 1, slope 0
        rec = an.kappa_growth_study(0.0, 2, levels=4)
        assert np.max(np.abs(rec.errors - 1.0)) < 1e-10
        assert abs(rec.fitted_slope) < 1e-8

    def test_deterministic_rerun(self):
        meshes = [mg.arnold_mesh(l) for l in range(4)]
        a = an.projection_convergence_study(meshes, 2, "wadg")
        b = an.projection_convergence_study(meshes, 2, "wadg")
        assert np.array_equal(a.errors, b.errors)

    def test_wave_study_dt_check(self):
        meshes = [mg.disk_mesh(l, 2) for l in range(4)]
        recs = an.wave_convergence_study(meshes, 2, dt_check=True)
        rec = recs[MassMode.WADG]
        assert len(rec.h) == 4
        rel = float(rec.label.split("dtcheck")[-1])
        assert rel < 0.01


class TestBenchmark:
    def test_report_and_scaling(self):
        cfg = SolverConfig(N=3, flux=FluxParams(1, 1))
        reports = {}
        for K1D in (24, 34):
            m = mg.uniform_quad_mesh(K1D, N_geo=1)
            reports[K1D] = an.benchmark_rhs(m, cfg, repetitions=20)
        for rep in reports.values():
            for phase in ("volume", "surface", "update", "total"):
                assert rep[phase] > 0
        # linear scaling sanity: doubling K moves ns/dof by < 20%
        a, b = reports[24]["total"], reports[34]["total"]
        assert abs(a - b) / max(a, b) < 0.20

    def test_repetition_floor(self):
        m = mg.uniform_quad_mesh(4)
        with pytest.raises(ValueError):
            an.benchmark_rhs(m, SolverConfig(N=2), repetitions=3)

    def test_csv(self, tmp_path):
        path = tmp_path / "b.csv"
        an.benchmark_to_csv([("strong:volume", 3, 64, 12.5)], path)
        rows = list(csv.reader(open(path)))
        assert rows[0] == ["phase", "N", "K", "ns_per_dof"]
        assert rows[1][0] == "strong:volume"
