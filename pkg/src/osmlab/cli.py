"""Command line runner: ``osmlab {solve,verify,constants,sweep-theta} --config run.json``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import build_lifting, compute_constants
from .exchange import (
    DENSE_LIMIT,
    apply_local_swap,
    check_cauchy_characterization,
    check_transmission_characterization,
)
from .fem import ConstantSource, MediumSpec, PlaneWaveSource
from .impedance import ImpedanceSpec, decompose_primal
from .mesh import (
    MeshFormatError,
    PartitionError,
    box_partition,
    build_partition,
    extract_topology,
    load_mesh,
    load_partition,
    structured_square_mesh,
)
from .skeleton import (
    SkeletonProblem,
    SolveConfig,
    compute_rhs,
    glue,
    h1_relative_error,
    monolithic_solve,
    reconstruct,
    richardson_solve,
    solve,
)
from .traces import project_onto_polar

log = logging.getLogger("osmlab")

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_NOT_CONVERGED = 2
EXIT_CONFIG = 3


class ConfigError(ValueError):
    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def _fmt(x):
    return f"{x:.17g}"


@dataclass
class RunConfig:
    mesh: dict
    partition: dict
    medium: MediumSpec
    impedance: ImpedanceSpec
    solver: SolveConfig
    source: object
    outputs: Path
    sweep: dict = field(default_factory=dict)
    seed: int = 0
    vtk: bool = True
    base_dir: Path = Path(".")

    @classmethod
    def from_dict(cls, d, base_dir="."):
        base_dir = Path(base_dir)
        if not isinstance(d, dict):
            raise ConfigError("<root>", "config must be a JSON object")

        mesh = d.get("mesh", {"structured": {"n": 64}})
        if not isinstance(mesh, dict) or not ("path" in mesh or "structured" in mesh):
            raise ConfigError("mesh", "expected {'path': ...} or {'structured': {'n': ...}}")
        if "format" in mesh and mesh["format"] not in ("native", "msh2"):
            raise ConfigError("mesh.format", "must be 'native' or 'msh2'")

        part = d.get("partition", {"J": 8, "seed": 0})
        if not isinstance(part, dict) or not any(k in part for k in ("path", "J", "box")):
            raise ConfigError("partition", "expected {'path'}, {'J', 'seed'} or {'box': [nx, ny]}")
        if "J" in part and (not isinstance(part["J"], int) or part["J"] < 1):
            raise ConfigError("partition.J", "must be a positive integer")

        med = d.get("medium", {})
        lam = med.get("wavelength", 0.2)
        sigma = med.get("absorption", 1.0)
        mu = med.get("mu", 1.0)
        if not isinstance(lam, (int, float)) or not lam > 0:
            raise ConfigError("medium.wavelength", f"must be positive, got {lam!r}")
        if not isinstance(sigma, (int, float)) or sigma < 0:
            raise ConfigError("medium.absorption", f"must be non-negative, got {sigma!r}")
        if not isinstance(mu, (int, float)) or not mu > 0:
            raise ConfigError("medium.mu", f"must be positive, got {mu!r}")
        medium = MediumSpec.from_wavelength(lam, sigma, mu)

        try:
            impedance = ImpedanceSpec.from_dict(d.get("impedance", {"choice": 2}))
        except (KeyError, ValueError, TypeError) as exc:
            raise ConfigError("impedance", str(exc)) from None
        try:
            solver = SolveConfig.from_dict(d.get("solver", {}))
        except (ValueError, TypeError) as exc:
            raise ConfigError("solver", str(exc)) from None

        src = d.get("source", {"plane_wave": [1 / np.sqrt(2), 1 / np.sqrt(2)]})
        try:
            if src is None:
                source = None
            elif "plane_wave" in src:
                source = PlaneWaveSource(tuple(src["plane_wave"]))
            elif "constant" in src:
                v = src["constant"]
                source = ConstantSource(complex(*v) if isinstance(v, list) else complex(v))
            else:
                raise ValueError("expected 'plane_wave' or 'constant'")
        except (ValueError, TypeError) as exc:
            raise ConfigError("source", str(exc)) from None

        sweep = d.get("sweep", {})
        if sweep:
            steps = sweep.get("steps", 19)
            if not isinstance(steps, int) or steps < 1:
                raise ConfigError("sweep.steps", "must be a positive integer")
            lo, hi = sweep.get("theta_min", -0.4), sweep.get("theta_max", 0.5)
            if steps > 1 and not lo < hi:
                raise ConfigError("sweep.theta_max", "must exceed theta_min")
            if max(abs(lo), abs(hi)) >= np.pi / 2:
                raise ConfigError("sweep", "thetas must lie in (-pi/2, pi/2)")

        out = d.get("outputs", "out")
        outputs = Path(out) if os.path.isabs(out) else base_dir / out
        return cls(mesh, part, medium, impedance, solver, source, outputs, sweep,
                   int(d.get("seed", 0)), bool(d.get("vtk", True)), base_dir)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except OSError as exc:
            raise ConfigError("<file>", f"cannot read {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON in {path}: {exc}") from None
        return cls.from_dict(d, path.parent)

    def _path(self, p):
        return p if os.path.isabs(p) else self.base_dir / p

    def build_mesh(self):
        if "path" in self.mesh:
            return load_mesh(self._path(self.mesh["path"]), self.mesh.get("format", "native"))
        s = self.mesh["structured"]
        return structured_square_mesh(int(s.get("n", 64)), float(s.get("side", 2.0)))

    def build_partition(self, mesh):
        if "path" in self.partition:
            return load_partition(self._path(self.partition["path"]), mesh)
        if "box" in self.partition:
            nx, ny = self.partition["box"]
            return box_partition(mesh, int(nx), int(ny))
        return build_partition(mesh, int(self.partition["J"]), seed=int(self.partition.get("seed", self.seed)))

    def metadata(self, mesh, partition):
        return {
            "n_vertices": int(mesh.n_vertices),
            "n_triangles": int(mesh.n_triangles),
            "J": int(partition.J),
            "kappa": [self.medium.kappa.real, self.medium.kappa.imag],
            "mu": self.medium.mu,
            "impedance": self.impedance.to_dict(),
        }


def _write(path, text):
    try:
        path.write_text(text)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _dump_json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_solution_csv(values):
    lines = ["vertex_index,re,im"]
    lines += [f"{k},{_fmt(z.real)},{_fmt(z.imag)}" for k, z in enumerate(np.asarray(values, dtype=complex))]
    return "\n".join(lines) + "\n"


def write_vtk(mesh, values, title="osmlab solution"):
    values = np.asarray(values, dtype=complex)
    out = ["# vtk DataFile Version 3.0", title, "ASCII", "DATASET UNSTRUCTURED_GRID"]
    out.append(f"POINTS {mesh.n_vertices} double")
    out += [f"{_fmt(x)} {_fmt(y)} 0" for x, y in mesh.vertices]
    out.append(f"CELLS {mesh.n_triangles} {4 * mesh.n_triangles}")
    out += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    out.append(f"CELL_TYPES {mesh.n_triangles}")
    out += ["5"] * mesh.n_triangles
    out.append(f"POINT_DATA {mesh.n_vertices}")
    for name, part in (("re", values.real), ("im", values.imag)):
        out += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        out += [_fmt(v) for v in part]
    return "\n".join(out) + "\n"


def _setup(cfg):
    mesh = cfg.build_mesh()
    partition = cfg.build_partition(mesh)
    topology = extract_topology(mesh, partition)
    return mesh, partition, topology


def run_solve(cfg):
    mesh, partition, topology = _setup(cfg)
    problem = SkeletonProblem(topology, cfg.medium, cfg.impedance, cfg.source)
    g = compute_rhs(problem)
    q, hist = solve(problem, g, cfg.solver)
    u, _ = reconstruct(problem, q)
    glued = glue(problem.spaces, u)
    ref = monolithic_solve(mesh, cfg.medium, problem.spaces.embed_adjoint(problem.load))
    ref_norm = np.abs(ref).max()
    err = h1_relative_error(mesh, glued.values, ref) if ref_norm > 0 else float(np.abs(glued.values).max())
    cfg.outputs.mkdir(parents=True, exist_ok=True)
    _write(cfg.outputs / "residual_history.csv", hist.to_csv())
    _write(cfg.outputs / "solution.csv", write_solution_csv(glued.values))
    if cfg.vtk:
        _write(cfg.outputs / "solution.vtk", write_vtk(mesh, glued.values))
    summary = {
        "method": cfg.solver.method,
        "converged": bool(hist.converged),
        "iterations": int(hist.iterations),
        "final_residual": float(hist.final_residual),
        "tol": cfg.solver.tol,
        "oracle_h1_error": float(err),
        "max_interface_jump": glued.max_jump,
        "n_multi_trace": int(problem.n),
        "metadata": cfg.metadata(mesh, partition),
    }
    _write(cfg.outputs / "summary.json", _dump_json(summary))
    log.info("solve: %d iterations, converged=%s, oracle H1 error %.3e", hist.iterations, hist.converged, err)
    return EXIT_OK if hist.converged else EXIT_NOT_CONVERGED


def _rand(rng, n):
    return rng.standard_normal(n) + 1j * rng.standard_normal(n)


def verify_suites(problem, rng, samples=20):
    """Invariant checks of every layer on one configured problem."""
    imp, sp_, pi, scat = problem.impedance, problem.spaces, problem.exchange, problem.scattering
    n = problem.n
    out = {}

    def record(name, value, ok):
        out[name] = {"pass": bool(ok), "value": float(value)}

    ploc = lambda p: apply_local_swap(p, sp_)  # noqa: E731
    p = _rand(rng, n)
    record("local_swap_involution", np.abs(ploc(ploc(p)) - p).max() / np.abs(p).max(),
           np.abs(ploc(ploc(p)) - p).max() <= 1e-12 * np.abs(p).max())

    worst = max(abs(imp.norm_ts_dual(pi(p)) - imp.norm_ts_dual(p)) / imp.norm_ts_dual(p)
                for p in (_rand(rng, n) for _ in range(samples)))
    record("exchange_isometry", worst, worst <= 1e-10)
    p = _rand(rng, n)
    rt = imp.norm_ts_dual(pi(pi.apply_inverse(p)) - p) / imp.norm_ts_dual(p)
    record("exchange_inverse", rt, rt <= 1e-10)

    worst = max(scat.energy_defect(_rand(rng, n)) for _ in range(samples))
    record("scattering_energy", worst, worst <= 1e-9)

    ok = all(
        check_transmission_characterization(sp_.apply_restriction(_rand(rng, sp_.n_skeleton)),
                                            project_onto_polar(_rand(rng, n), imp), pi)
        for _ in range(samples)
    )
    record("transmission_characterization", float(ok), ok)

    def cauchy_member():
        qt = _rand(rng, n)
        u = problem.robin.solve(sp_.apply_trace_adjoint(qt))
        v = sp_.apply_trace(u)
        return v, qt + 1j * imp.apply(v)

    ok = all(check_cauchy_characterization(*cauchy_member(), scat) for _ in range(samples))
    record("cauchy_characterization", float(ok), ok)

    v = _rand(rng, n)
    x, r = decompose_primal(v, imp)
    res = np.abs(sp_.apply_restriction_adjoint(imp.apply(r))).max() / np.abs(imp.apply(v)).max()
    record("primal_decomposition", res, res <= 1e-11)

    lifting = build_lifting(problem)
    v = _rand(rng, n)
    res = np.abs(sp_.apply_trace(lifting.lift(v)) - v).max()
    record("lifting_right_inverse", res, res == 0.0)

    g = compute_rhs(problem)
    if imp.norm_ts_dual(g) > 0:
        q, hist = solve(problem, g, SolveConfig(method="gmres", tol=1e-10, maxit=5000))
        u, _ = reconstruct(problem, q)
        mesh = problem.topology.mesh
        ref = monolithic_solve(mesh, problem.medium, sp_.embed_adjoint(problem.load))
        err = h1_relative_error(mesh, glue(sp_, u).values, ref)
        record("oracle_equivalence", err, hist.converged and err <= 1e-6)
    return out


def run_verify(cfg):
    mesh, partition, topology = _setup(cfg)
    problem = SkeletonProblem(topology, cfg.medium, cfg.impedance, cfg.source)
    if problem.n > DENSE_LIMIT:
        raise ConfigError("mesh", f"verify mode is limited to {DENSE_LIMIT} multi-trace dofs")
    suites = verify_suites(problem, np.random.default_rng(cfg.seed))
    report = {"all_pass": all(s["pass"] for s in suites.values()), "suites": suites,
              "metadata": cfg.metadata(mesh, partition)}
    cfg.outputs.mkdir(parents=True, exist_ok=True)
    _write(cfg.outputs / "verify.json", _dump_json(report))
    for name, s in suites.items():
        log.info("verify %-32s %s", name, "pass" if s["pass"] else "FAIL")
    return EXIT_OK if report["all_pass"] else EXIT_CHECK_FAILED


def run_constants(cfg):
    mesh, partition, topology = _setup(cfg)
    problem = SkeletonProblem(topology, cfg.medium, cfg.impedance, cfg.source)
    report = compute_constants(problem, seed=cfg.seed, metadata=cfg.metadata(mesh, partition))
    cfg.outputs.mkdir(parents=True, exist_ok=True)
    _write(cfg.outputs / "constants.json", report.to_json() + "\n")
    return EXIT_OK if all(report.checks().values()) else EXIT_CHECK_FAILED


def sweep_theta(topology, medium, source, thetas, config):
    """Richardson iteration counts for the rotated second order impedance.

    Non-converged runs are reported as ``-1``.
    """
    forms = None
    rows = []
    for theta in thetas:
        problem = SkeletonProblem(topology, medium, ImpedanceSpec("rotated_second_order", theta=float(theta)),
                                  source, forms=forms)
        forms = problem.forms
        _, hist = richardson_solve(problem, compute_rhs(problem), config)
        rows.append((float(theta), hist.iterations if hist.converged else -1))
    return rows


def interior_minimizer(rows):
    """``theta`` with the fewest iterations if it beats ``theta = 0``, else ``None``."""
    ok = [(n, t) for t, n in rows if n >= 0]
    zero = [n for t, n in rows if abs(t) < 1e-12 and n >= 0]
    if not ok or not zero:
        return None
    n, t = min(ok)
    return t if n < zero[0] and abs(t) > 1e-12 else None


def run_sweep(cfg):
    mesh, partition, topology = _setup(cfg)
    sw = cfg.sweep or {}
    thetas = np.linspace(sw.get("theta_min", -0.4), sw.get("theta_max", 0.5), sw.get("steps", 19))
    rows = sweep_theta(topology, cfg.medium, cfg.source, thetas, cfg.solver)
    cfg.outputs.mkdir(parents=True, exist_ok=True)
    text = "theta,n_theta\n" + "".join(f"{_fmt(t)},{n}\n" for t, n in rows)
    _write(cfg.outputs / "sweep.csv", text)
    best = interior_minimizer(rows)
    log.info("sweep: interior minimizer %s", "none" if best is None else f"theta = {best:.4g}")
    return EXIT_OK if all(n >= 0 for _, n in rows) else EXIT_NOT_CONVERGED


COMMANDS = {"solve": run_solve, "verify": run_verify, "constants": run_constants, "sweep-theta": run_sweep}


def run(command, config):
    cfg = config if isinstance(config, RunConfig) else RunConfig.load(config)
    return COMMANDS[command](cfg)


def main(argv=None):
    parser = argparse.ArgumentParser(prog="osmlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON run configuration")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return run(args.command, args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MeshFormatError, PartitionError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
