"""Command-line interface: mesh generation, convergence studies, operator
spectra, single solver runs, and the RHS benchmark.

Every command writes its artifacts into a run directory (--out-dir,
default ./wadg-out): the resolved configuration (config.echo), CSV result
files, and log.txt.  Exit codes: 0 success, 1 numerical failure
(instability, nonpositive Jacobian, eigensolver failure), 2 configuration
error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, geometry, meshgen, solver
from .solver import (BlowUp, ConfigError, FluxParams, Formulation, MassMode,
                     MediumField, SolverConfig)

EXIT_OK = 0
EXIT_NUMERICAL = 1
EXIT_CONFIG = 2

MEDIA = {
    "constant": lambda: MediumField(1.0),
    "radial_sine": lambda: MediumField(lambda x, y: 1.0 + 0.5 * np.sin(np.pi * np.hypot(x, y))),
}


class _RunDir:
    def __init__(self, path, args):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._log = []
        echo = {k: v for k, v in vars(args).items() if k != "func"}
        (self.path / "config.echo").write_text(json.dumps(echo, indent=2, default=str))

    def log(self, msg):
        print(msg)
        self._log.append(msg)

    def close(self):
        (self.path / "log.txt").write_text("\n".join(self._log) + "\n")


def _parse_mesh_spec(spec, N_geo):
    """'uniform<K1D>', 'arnold<level>', 'disk<level>', 'warped<omega>x<K1D>',
    or a path to a wadg-mesh-v1 JSON file."""
    if spec.startswith("uniform"):
        return meshgen.uniform_quad_mesh(int(spec[7:] or 2), N_geo=N_geo)
    if spec.startswith("arnold"):
        return meshgen.arnold_mesh(int(spec[6:] or 0), N_geo=N_geo)
    if spec.startswith("disk"):
        return meshgen.disk_mesh(int(spec[4:] or 0), N_geo)
    if spec.startswith("warped"):
        omega, k1d = spec[6:].split("x")
        return meshgen.warped_arnold_mesh(meshgen.WarpParams(float(omega), int(k1d)), N_geo)
    path = Path(spec)
    if path.exists():
        return meshgen.load_mesh(path)
    raise ConfigError(f"unrecognized mesh spec {spec!r}")


def _families(kind, levels, N_geo, omega=None, amplitude=0.15, seed=0):
    if kind == "arnold":
        return [meshgen.arnold_mesh(l, N_geo=N_geo) for l in range(levels)]
    if kind == "uniform":
        return meshgen.mesh_family("uniform", levels, N_geo=N_geo, K1D=2)
    if kind == "random":
        return meshgen.mesh_family("random", levels, N_geo=N_geo, K1D=2,
                                   amplitude=amplitude, seed=seed)
    if kind == "warped":
        return [meshgen.warped_arnold_mesh(meshgen.WarpParams(omega, 4 * 2**l), N_geo)
                for l in range(levels)]
    if kind == "disk":
        return [meshgen.disk_mesh(l, N_geo) for l in range(levels)]
    raise ConfigError(f"unknown mesh family {kind!r}")


def _solver_config(args):
    form = Formulation.StrongWeak if args.formulation == "strong-weak" else Formulation.Strong
    mode = MassMode.ExactCurvedMass if getattr(args, "mass_mode", "wadg") == "exact" else MassMode.WADG
    return SolverConfig(
        N=args.N, formulation=form, mass_mode=mode,
        flux=FluxParams(args.tau_p, args.tau_u), cfl=args.cfl,
        volume_quad_degree=getattr(args, "volume_quad_degree", None),
        face_quad_degree=getattr(args, "face_quad_degree", None),
        unsafe_quadrature=getattr(args, "unsafe_quadrature", False))


# ---------------------------------------------------------------------------
# Commands

def cmd_mesh(args, rd):
    mesh = _families(args.family, args.level + 1, args.N_geo,
                     omega=args.omega, amplitude=args.amplitude, seed=args.seed)[-1]
    out = rd.path / (args.out or f"{args.family}{args.level}.json")
    meshgen.save_mesh(mesh, out)
    rd.log(f"wrote {out} (K={mesh.K}, h={mesh.h:.5g})")
    return EXIT_OK


def cmd_project_convergence(args, rd):
    meshes = _families(args.family, args.levels, args.N_geo or args.N,
                       omega=args.omega, amplitude=args.amplitude, seed=args.seed)
    rec = analysis.projection_convergence_study(meshes, args.N, args.method)
    out = rd.path / f"projection_{args.family}_{args.method}_N{args.N}.csv"
    rec.to_csv(out)
    rd.log(f"{rec.label}: slope {rec.fitted_slope:.3f} (residual {rec.fit_residual:.2e})")
    rd.log(f"wrote {out} ({len(rec.h)} rows)")
    return EXIT_OK


def cmd_wave_convergence(args, rd):
    meshes = [meshgen.disk_mesh(l, args.N_geo or args.N) for l in range(args.levels)]
    modes = [MassMode.WADG, MassMode.ExactCurvedMass] if args.both_modes else [MassMode.WADG]
    recs = analysis.wave_convergence_study(
        meshes, args.N, config=_solver_config(args), T=args.T,
        medium=MEDIA[args.medium](), mass_modes=modes, dt_check=args.dt_check)
    for mode, rec in recs.items():
        out = rd.path / f"wave_N{args.N}_{mode.value}.csv"
        rec.to_csv(out)
        rd.log(f"{rec.label}: slope {rec.fitted_slope:.3f}, finest error {rec.errors[-1]:.6e}")
        rd.log(f"wrote {out}")
    return EXIT_OK


def cmd_kappa_study(args, rd):
    rec = analysis.kappa_growth_study(args.omega, args.N, levels=args.levels)
    out = rd.path / f"kappa_omega{args.omega}_N{args.N}.csv"
    rec.to_csv(out)
    rd.log(f"{rec.label}: growth slope {rec.fitted_slope:.3f}")
    rd.log(f"wrote {out}")
    return EXIT_OK


def cmd_conservation_study(args, rd):
    rec = analysis.conservation_rate_study(N=args.N, levels=tuple(range(1, args.levels + 1)))
    out = rd.path / f"conservation_N{args.N}.csv"
    rec.to_csv(out)
    rd.log(f"{rec.label}: slope {rec.fitted_slope:.3f}")
    rd.log(f"wrote {out}")
    return EXIT_OK


def cmd_spectrum(args, rd):
    mesh = _parse_mesh_spec(args.mesh, args.N_geo or args.N)
    cfg = _solver_config(args)
    A = analysis.assemble_evolution_matrix(mesh, cfg, MEDIA[args.medium]())
    spec = analysis.eigenspectrum(A)
    out = rd.path / "spectrum.csv"
    spec.to_csv(out)
    rd.log(f"n = {A.shape[0]}, max real part {spec.max_real_part:.6e}, "
           f"spectral radius {spec.spectral_radius:.6e}")
    rd.log(f"wrote {out}")
    return EXIT_OK


def _load_flat_toml(path):
    """Flat key = value subset (strings, numbers, booleans); fallback for
    interpreters without tomllib."""
    doc = {}
    for raw in Path(path).read_text().splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, val = line.partition("=")
        key, val = key.strip(), val.strip()
        if not _ or not key:
            raise ConfigError(f"cannot parse config line {raw!r}")
        if val.startswith('"') and val.endswith('"'):
            doc[key] = val[1:-1]
        elif val in ("true", "false"):
            doc[key] = val == "true"
        else:
            num = float(val)
            doc[key] = int(num) if num == int(num) and "." not in val else num
    return doc


def cmd_run(args, rd):
    if args.config.endswith(".toml"):
        try:
            import tomllib
            with open(args.config, "rb") as fb:
                doc = tomllib.load(fb)
        except ModuleNotFoundError:
            doc = _load_flat_toml(args.config)
    else:
        with open(args.config) as f:
            doc = json.load(f)
    known = {"N", "N_geo", "formulation", "mass_mode", "tau_p", "tau_u", "cfl",
             "volume_quad_degree", "face_quad_degree", "unsafe_quadrature",
             "mesh", "medium", "T", "output_interval"}
    unknown = set(doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    N = int(doc.get("N", 3))
    ngeo = int(doc.get("N_geo", N))
    mesh = _parse_mesh_spec(doc.get("mesh", "disk1"), ngeo)
    form = Formulation(doc.get("formulation", "strong"))
    mode = MassMode(doc.get("mass_mode", "wadg"))
    cfg = SolverConfig(N=N, formulation=form, mass_mode=mode,
                       flux=FluxParams(doc.get("tau_p", 1.0), doc.get("tau_u", 1.0)),
                       cfl=doc.get("cfl", 0.5),
                       volume_quad_degree=doc.get("volume_quad_degree"),
                       face_quad_degree=doc.get("face_quad_degree"),
                       unsafe_quadrature=doc.get("unsafe_quadrature", False))
    medium = MEDIA[doc.get("medium", "constant")]()
    T = float(doc.get("T", 1.0))
    n_out = int(round(T / doc.get("output_interval", T / 10)))
    exact = solver.bessel_pressure if doc.get("medium", "constant") == "constant" else None
    state, diag = solver.run(mesh, cfg, solver.bessel_initial_condition, T,
                             medium=medium, exact_p=exact, n_outputs=n_out)
    out = rd.path / "timeseries.csv"
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["t", "energy", "l2_error_p"])
        for i, t in enumerate(diag["t"]):
            err = diag["l2_error_p"][i] if len(diag["l2_error_p"]) else ""
            w.writerow([repr(float(t)), repr(float(diag["energy"][i])), err])
    rd.log(f"final t = {state.t}, energy {diag['energy'][-1]:.8e}")
    if len(diag["l2_error_p"]):
        rd.log(f"final pressure L2 error {diag['l2_error_p'][-1]:.6e}")
    rd.log(f"wrote {out}")
    return EXIT_OK


def cmd_bench(args, rd):
    mesh = _parse_mesh_spec(args.mesh, args.N_geo or args.N)
    rows = []
    for form in (Formulation.Strong, Formulation.StrongWeak):
        cfg = SolverConfig(N=args.N, formulation=form, flux=FluxParams(1.0, 1.0))
        rep = analysis.benchmark_rhs(mesh, cfg, repetitions=args.reps)
        for phase in ("volume", "surface", "update", "total"):
            rows.append((f"{form.value}:{phase}", args.N, mesh.K, rep[phase]))
        rd.log(f"{form.value}: total {rep['total']:.2f} ns/dof "
               f"(volume {rep['volume']:.2f}, surface {rep['surface']:.2f}, "
               f"update {rep['update']:.2f})")
    out = rd.path / "bench.csv"
    analysis.benchmark_to_csv(rows, out)
    rd.log(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="wadg", description=__doc__)
    p.add_argument("--out-dir", default="wadg-out", help="run directory for artifacts")
    p.add_argument("--deterministic", action="store_true",
                   help="fixed evaluation order (always on; flag recorded for audit)")
    sub = p.add_subparsers(dest="command", required=True)

    def common_solver(q):
        q.add_argument("--N", type=int, default=3)
        q.add_argument("--N-geo", type=int, default=None, dest="N_geo")
        q.add_argument("--formulation", choices=["strong", "strong-weak"], default="strong")
        q.add_argument("--mass-mode", choices=["wadg", "exact"], default="wadg")
        q.add_argument("--tau", type=float, default=None,
                       help="set both penalty parameters")
        q.add_argument("--tau-p", type=float, default=1.0)
        q.add_argument("--tau-u", type=float, default=1.0)
        q.add_argument("--cfl", type=float, default=0.5)
        q.add_argument("--volume-quad-degree", type=int, default=None)
        q.add_argument("--face-quad-degree", type=int, default=None)
        q.add_argument("--unsafe-quadrature", action="store_true")
        q.add_argument("--medium", choices=sorted(MEDIA), default="constant")

    q = sub.add_parser("mesh", help="generate a mesh and write it as JSON")
    q.add_argument("--family", choices=["uniform", "arnold", "random", "warped", "disk"],
                   required=True)
    q.add_argument("--level", type=int, default=0)
    q.add_argument("--N-geo", type=int, default=1, dest="N_geo")
    q.add_argument("--omega", type=float, default=1.0)
    q.add_argument("--amplitude", type=float, default=0.15)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", default=None)
    q.set_defaults(func=cmd_mesh)

    q = sub.add_parser("project-convergence", help="projection h-convergence study")
    q.add_argument("--family", choices=["uniform", "arnold", "random", "warped"],
                   default="arnold")
    q.add_argument("--N", type=int, default=3)
    q.add_argument("--N-geo", type=int, default=None, dest="N_geo")
    q.add_argument("--levels", type=int, default=6)
    q.add_argument("--method", choices=list(analysis.PROJECTION_METHODS), default="wadg")
    q.add_argument("--omega", type=float, default=1.0)
    q.add_argument("--amplitude", type=float, default=0.15)
    q.add_argument("--seed", type=int, default=0)
    q.set_defaults(func=cmd_project_convergence)

    q = sub.add_parser("wave-convergence", help="disk wave-solver convergence study")
    common_solver(q)
    q.add_argument("--levels", type=int, default=4)
    q.add_argument("--T", type=float, default=1.0)
    q.add_argument("--both-modes", action="store_true",
                   help="also run the exact curved-mass reference")
    q.add_argument("--dt-check", action="store_true")
    q.set_defaults(func=cmd_wave_convergence, cfl=1.0)

    q = sub.add_parser("kappa-study", help="Jacobian constant growth study")
    q.add_argument("--omega", type=float, required=True)
    q.add_argument("--N", type=int, default=3)
    q.add_argument("--levels", type=int, default=5)
    q.set_defaults(func=cmd_kappa_study)

    q = sub.add_parser("conservation-study", help="moment conservation rate study")
    q.add_argument("--N", type=int, default=2)
    q.add_argument("--levels", type=int, default=4)
    q.set_defaults(func=cmd_conservation_study)

    q = sub.add_parser("spectrum", help="eigenspectrum of the evolution operator")
    common_solver(q)
    q.add_argument("--mesh", default="disk1")
    q.add_argument("--cap", type=int, default=6000)
    q.set_defaults(func=cmd_spectrum)

    q = sub.add_parser("run", help="single solver run from a config file")
    q.add_argument("--config", required=True)
    q.set_defaults(func=cmd_run)

    q = sub.add_parser("bench", help="matrix-free RHS benchmark")
    common_solver(q)
    q.add_argument("--mesh", default="disk2")
    q.add_argument("--reps", type=int, default=20)
    q.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "tau", None) is not None:
        args.tau_p = args.tau_u = args.tau
    rd = _RunDir(args.out_dir, args)
    try:
        code = args.func(args, rd)
    except (ConfigError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        rd.log(f"configuration error: {exc}")
        code = EXIT_CONFIG
    except (BlowUp, geometry.NonPositiveJacobian, analysis.EigenSolveFailure,
            analysis.SizeCapExceeded) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        rd.log(f"numerical failure: {exc}")
        code = EXIT_NUMERICAL
    finally:
        rd.close()
    return code


if __name__ == "__main__":
    sys.exit(main())
