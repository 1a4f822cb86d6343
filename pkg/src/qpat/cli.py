"""Command-line interface: ``qpat {simulate, reconstruct, check, preset}``.

Exit status is 0 on success, 1 for configuration errors (bad flags, missing
or malformed files) and 2 for numerical failures (solver, truncation or
divergence errors). Outputs are staged in a temporary directory and moved
into ``--out`` only when the command succeeds.
"""

from __future__ import annotations

import argparse
import logging
import re
import shutil
import sys
import tempfile
from importlib import metadata
from pathlib import Path

import numpy as np

from . import io
from .acoustics import PressureData
from .checks import run_checks
from .errors import ConfigurationError, DivergenceError, ParameterError, QpatError, SolverError, TruncationError
from .experiments import PRESETS, VARIANTS, SimulationResult, get_preset, reconstruct, simulate
from .geometry import write_mesh_csv
from .transport import write_coefficients_csv

log = logging.getLogger("qpat")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 1, 2
CHECK_DEFAULTS = dict(n_subdiv=16, n_theta=16, n_detectors=128, n_time=256)


def _version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


_NUM = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)?\s*\*?\s*(pi)?\s*$")


def parse_angle(text: str) -> float:
    """Parse ``1.5``, ``pi``, ``2pi`` or ``0.5*pi``."""
    m = _NUM.match(text)
    if not m or (m.group(1) is None and m.group(2) is None):
        raise ConfigurationError(f"cannot parse angle {text!r}")
    val = float(m.group(1)) if m.group(1) else 1.0
    return val * np.pi if m.group(2) else val


def parse_arc(text: str) -> tuple:
    if ":" not in text:
        raise ConfigurationError(f"--arc expects lo:hi, got {text!r}")
    lo, hi = text.split(":", 1)
    return parse_angle(lo), parse_angle(hi)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--preset", choices=sorted(PRESETS), help="named scenario preset")
    common.add_argument("--config", type=Path, help="scenario file (key = value)")
    common.add_argument("--variant", choices=sorted(VARIANTS), default="full",
                        help="measurement variant applied to the scenario")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int)
    common.add_argument("--iters", type=int, help="Landweber iterations")
    common.add_argument("--lambda-factor", type=float, help="step size as a multiple of 1/|WD|^2")
    common.add_argument("--noise", type=float, help="noise level as a fraction of max|p|")
    common.add_argument("--arc", type=str, help="detector arc lo:hi in radians, e.g. pi:2pi")
    common.add_argument("--mesh-n", type=int, help="cells per side of the mesh")
    common.add_argument("--ntheta", type=int, help="number of directions")
    common.add_argument("--time-horizon", type=float, help="measurement time T")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="qpat", description="Quantitative photoacoustic tomography toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {_version()}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate pressure data for a scenario")
    r = sub.add_parser("reconstruct", parents=[common], help="Landweber reconstruction from simulated data")
    r.add_argument("--data", type=Path, help="directory written by 'simulate' (default: --out)")
    r.add_argument("--clamp", action="store_true", help="project onto mu_a >= 0")
    r.add_argument("--discrepancy", action="store_true", help="stop by the discrepancy principle")
    sub.add_parser("check", parents=[common], help="run verification suites")
    pr = sub.add_parser("preset", parents=[common], help="write a preset scenario file")
    pr.add_argument("name", nargs="?", choices=sorted(PRESETS))
    return p


def resolve_scenario(args, base=None):
    if args.config is not None:
        sc = io.read_scenario(args.config)
    elif getattr(args, "preset", None):
        sc = get_preset(args.preset)
    elif getattr(args, "name", None):
        sc = get_preset(args.name)
    elif base is not None:
        sc = base
    else:
        raise ConfigurationError("give --preset or --config")
    sc = VARIANTS[args.variant](sc)
    sc = sc.with_overrides(seed=args.seed, n_iters=args.iters, lambda_factor=args.lambda_factor,
                           noise=args.noise, n_subdiv=args.mesh_n, n_theta=args.ntheta,
                           time_horizon=args.time_horizon)
    if args.arc is not None:
        arc = parse_arc(args.arc)
        sc = sc.with_overrides(arcs=tuple(arc for _ in sc.sides))
    _validate(sc)
    return sc


def _validate(sc):
    if sc.n_subdiv < 1:
        raise ConfigurationError("--mesh-n must be >= 1")
    if sc.n_theta < 4:
        raise ConfigurationError("--ntheta must be >= 4")
    if sc.n_iters < 0:
        raise ConfigurationError("--iters must be >= 0")
    if not sc.lambda_factor > 0:
        raise ConfigurationError("--lambda-factor must be positive")
    if not sc.time_horizon > 0:
        raise ConfigurationError("--time-horizon must be positive")
    sc.geometries()


def _manifest(sc, command, extra=None):
    m = {"command": command, "artifact_version": _version()}
    m.update({f"scenario.{k}": v for k, v in io.scenario_to_dict(sc).items()})
    m.update(extra or {})
    return m


def _write_simulation(sim: SimulationResult, out: Path):
    sc, mesh = sim.scenario, sim.mesh
    io.write_scenario(out / "scenario.cfg", sc)
    write_mesh_csv(mesh, out / "mesh")
    write_coefficients_csv(out / "coefficients.csv", sim.truth)
    for i, (H, phi, p) in enumerate(zip(sim.heating, sim.fluence, sim.data)):
        io.write_nodal_field(out / f"heating_{i}", mesh, H, "heating")
        io.write_nodal_field(out / f"fluence_{i}", mesh, phi, "fluence")
        p.write_csv(out / f"pressure_{i}.csv")
        io.write_pgm(out / f"pressure_{i}.pgm", p.values)
    io.write_manifest(out / "manifest.txt", _manifest(sc, "simulate", {
        "n_illuminations": len(sim.data),
        "active_detectors": ",".join(str(g.n_active) for g in sc.geometries()),
        "noise_energy": sim.noise_energy,
    }))


def cmd_simulate(args, out: Path):
    sc = resolve_scenario(args)
    sim = simulate(sc)
    _write_simulation(sim, out)
    print(f"simulated {len(sim.data)} illumination(s) for scenario {sc.name}")
    return EXIT_OK


def _load_simulation(data_dir: Path, sc) -> SimulationResult:
    mesh, ang = sc.mesh(), sc.angular()
    files = [data_dir / f"pressure_{i}.csv" for i in range(len(sc.sides))]
    missing = [str(f) for f in files if not f.exists()]
    if missing:
        raise ConfigurationError(f"missing data files: {', '.join(missing)}")
    geoms = sc.geometries()
    data = []
    for f, g in zip(files, geoms):
        p = PressureData.read_csv(f, g)
        data.append(p)
    truth = sc.truth(mesh)
    energy = float("nan")
    man = data_dir / "manifest.txt"
    if man.exists():
        energy = float(io.read_key_values(man).get("noise_energy", "nan"))
    return SimulationResult(sc, mesh, ang, truth, [], [], [], data, energy)


def cmd_reconstruct(args, out: Path):
    data_dir = args.data if args.data is not None else args.out
    if data_dir is None or not (data_dir / "scenario.cfg").exists():
        raise ConfigurationError(f"no simulated data found in {data_dir}; run 'qpat simulate' first")
    base = io.read_scenario(data_dir / "scenario.cfg")
    if args.config is None and args.preset is None:
        args.variant = "full"  # the stored scenario already includes its variant
    sc = resolve_scenario(args, base=base)
    sim = _load_simulation(data_dir, sc)
    if args.discrepancy and not np.isfinite(sim.noise_energy):
        raise ConfigurationError("discrepancy stopping needs the noise energy from the simulate manifest")
    res = reconstruct(sim, clamp=args.clamp, discrepancy=args.discrepancy)
    rec = res.reconstruction
    mesh = sim.mesh
    io.write_element_field(out / "reconstruction.csv", {"mu_a": rec.mu_a, "h_a": rec.h_a,
                                                        "mu_a_true": sim.truth.mu_a})
    io.write_pgm(out / "reconstruction.pgm", mesh.as_grid(mesh.element_to_node @ rec.mu_a)[::-1])
    rec.log.write_csv(out / "iterations.csv")
    m = res.metrics
    io.write_manifest(out / "manifest.txt", _manifest(sc, "reconstruct", {
        "data_dir": str(data_dir), "clamp": args.clamp, "discrepancy": args.discrepancy,
        "step_size": rec.log.step_size, "norm_estimate": rec.log.norm_estimate,
        "iterations": len(rec.log.residuals) - 1, "final_residual": rec.log.residuals[-1],
        "rel_l2_error": m["rel_l2"], "max_abs_error": m["max_abs"],
        "inclusion_means": ",".join(repr(x) for x in m["inclusion_means"]),
    }))
    print(f"iterations {len(rec.log.residuals) - 1}  residual {rec.log.residuals[0]:.6e} -> "
          f"{rec.log.residuals[-1]:.6e}")
    print(f"relative L2 error {m['rel_l2']!r}")
    print("inclusion means " + ", ".join(f"{x:.4f}" for x in m["inclusion_means"]))
    return EXIT_OK


def cmd_check(args, out: Path | None):
    base = get_preset(args.preset) if args.preset else get_preset("low_scattering")
    if args.config is not None:
        base = io.read_scenario(args.config)
    base = base.with_overrides(**{k: v for k, v in CHECK_DEFAULTS.items()})
    args.preset, args.config = None, None
    sc = resolve_scenario(args, base=base)
    results = run_checks(sc, seed=sc.seed)
    width = max(len(r.name) for r in results)
    ok = True
    lines = []
    for r in results:
        status = "INFO" if r.informational else ("PASS" if r.passed else "FAIL")
        ok &= r.passed
        lines.append(f"{status}  {r.name:<{width}}  {r.detail}")
    print("\n".join(lines))
    if out is not None:
        (out / "checks.txt").write_text("\n".join(lines) + "\n")
    print("all checks passed" if ok else "some checks failed")
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_preset(args, out: Path | None):
    if args.name is None and args.preset is None and args.config is None:
        raise ConfigurationError("name a preset, e.g. 'qpat preset low_scattering'")
    sc = resolve_scenario(args)
    if out is None:
        sys.stdout.write(io.SCENARIO_HEADER + "\n")
        for k, v in io.scenario_to_dict(sc).items():
            sys.stdout.write(f"{k} = {v}\n")
    else:
        io.write_scenario(out / f"{sc.name}.cfg", sc)
        print(f"wrote {out / (sc.name + '.cfg')}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "reconstruct": cmd_reconstruct, "check": cmd_check, "preset": cmd_preset}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    needs_out = args.command in ("simulate", "reconstruct")
    if needs_out and args.out is None:
        print("error: --out is required", file=sys.stderr)
        return EXIT_CONFIG
    stage = None
    try:
        if args.out is not None:
            args.out.parent.mkdir(parents=True, exist_ok=True)
            stage = Path(tempfile.mkdtemp(prefix=".qpat-", dir=args.out.parent))
        code = COMMANDS[args.command](args, stage)
    except (ConfigurationError, ParameterError, FileNotFoundError, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        code = EXIT_CONFIG
    except (SolverError, TruncationError, DivergenceError, QpatError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        code = EXIT_NUMERICAL
    if stage is not None:
        if code in (EXIT_OK,) or (args.command == "check" and code == EXIT_NUMERICAL):
            args.out.mkdir(parents=True, exist_ok=True)
            for f in sorted(stage.iterdir()):
                shutil.move(str(f), args.out / f.name)
        shutil.rmtree(stage, ignore_errors=True)
    return code


if __name__ == "__main__":
    sys.exit(main())
