"""Command-line front end.

Every subcommand reads a flat ``key = value`` config (``#`` comments),
applies flag overrides and writes its outputs under ``--output-dir``.
Exit codes: 0 success, 1 validation failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

log = logging.getLogger("waveplate")

EXIT_OK, EXIT_INVALID, EXIT_USAGE = 0, 1, 2


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    mesh: str = "rect"             # "rect", "lens" or a mesh file path
    n: int = 8
    alpha1: float = 90.0           # lens half-opening angles, degrees
    alpha2: float = 60.0
    x0: tuple[float, float] = (0.0, 0.5)
    mu: float = 0.3
    omega0: float | None = None    # plate angle threshold, degrees
    dt: float = 1e-2
    T: float = 10.0
    stride: int = 1
    seed: int = 0
    smoothing: bool = True
    smooth_depth: int = 3
    eig_k: int = 30
    witness_count: int = 20
    sweep_n: int | None = None     # mesh resolution for resolvent-sweep (default n)
    sweep_k: int = 60
    sweep_points: int = 16
    ell: float = 2.0
    output_dir: str = "."
    base_dir: str = "."            # directory of the config file, for relative paths

    def __post_init__(self):
        if not 0.0 < self.mu < 0.5:
            raise ConfigError(f"mu must lie in (0, 1/2), got {self.mu}")
        if not (self.dt > 0 and self.T > 0):
            raise ConfigError(f"dt and T must be positive, got dt={self.dt}, T={self.T}")
        for name in ("n", "stride", "eig_k", "witness_count", "sweep_k", "sweep_points", "smooth_depth"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.mesh not in ("rect", "lens") and not self.mesh_path.is_file():
            raise ConfigError(f"mesh file not found: {self.mesh_path}")

    @property
    def mesh_path(self) -> Path:
        p = Path(self.mesh)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def out(self) -> Path:
        p = Path(self.output_dir)
        return p if p.is_absolute() else Path.cwd() / p


def _parse_bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _parse_value(name: str, raw: str):
    raw = raw.strip()
    if name in ("mesh", "output_dir", "base_dir"):
        return raw
    if name == "x0":
        parts = [p for p in raw.replace(",", " ").split() if p]
        if len(parts) != 2:
            raise ConfigError(f"x0 needs two numbers, got {raw!r}")
        return (float(parts[0]), float(parts[1]))
    if name == "smoothing":
        return _parse_bool(raw)
    if name in ("omega0", "sweep_n") and raw.lower() in ("", "none"):
        return None
    if name in ("n", "stride", "seed", "eig_k", "witness_count", "sweep_n", "sweep_k", "sweep_points",
                "smooth_depth"):
        return int(raw)
    return float(raw)


_KEYS = {f.name for f in fields(RunConfig)} - {"base_dir"}


def read_config_text(path: Path) -> dict[str, str]:
    """Flat ``key = value`` pairs of a config file."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",), comment_prefixes=("#",),
                                       interpolation=None, delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string("[run]\n" + path.read_text(), source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dict(parser["run"])


def build_config(path: str | None, overrides: dict[str, str]) -> RunConfig:
    raw: dict[str, str] = {}
    base = "."
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        raw.update(read_config_text(p))
        base = str(p.resolve().parent)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = sorted(set(raw) - _KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    try:
        values = {k: _parse_value(k, v) for k, v in raw.items()}
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return RunConfig(base_dir=base, **values)


# -- shared steps --------------------------------------------------------------

def make_mesh(cfg: RunConfig, n: int | None = None):
    from .mesh import gen_lens, gen_rect_transmission, load_mesh

    n = n or cfg.n
    if cfg.mesh == "rect":
        return gen_rect_transmission(n)
    if cfg.mesh == "lens":
        return gen_lens(math.radians(cfg.alpha1), math.radians(cfg.alpha2), n)
    return load_mesh(cfg.mesh_path)


def geometry_report(cfg: RunConfig, mesh) -> dict:
    from .geometry import check_mgc, check_plate_angles, check_wave_angles

    mgc = check_mgc(mesh, cfg.x0)
    wave = check_wave_angles(mesh)
    plate = check_plate_angles(mesh, cfg.mu, cfg.omega0)
    report = mgc.to_dict()
    report.update(wave_angles=wave.to_dict(), plate_angles=plate.to_dict())
    report["pass"] = bool(mgc.passed and wave.passed and plate.passed is not False)
    return report


def _write_rows(path: Path, header: str, rows) -> None:
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join(v if isinstance(v, str) else f"{v:.17g}" for v in row) + "\n")


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _eigenpairs(cfg: RunConfig, mesh, k: int):
    from .spectral import eig_ODeltaR

    return eig_ODeltaR(mesh, cfg.mu, k)


# -- subcommands ---------------------------------------------------------------

def cmd_mesh_gen(cfg: RunConfig, args) -> int:
    from .mesh import save_mesh

    mesh = make_mesh(cfg)
    path = cfg.out / (args.name or "mesh.txt")
    save_mesh(mesh, path)
    print(f"{path}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, h={mesh.h:.6g}")
    return EXIT_OK


def cmd_check_geometry(cfg: RunConfig, args) -> int:
    report = geometry_report(cfg, make_mesh(cfg))
    _write_json(cfg.out / "geometry.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK if report["pass"] else EXIT_INVALID


def cmd_simulate(cfg: RunConfig, args) -> int:
    from .dynamics import run
    from .system import build_generator, mean_project, random_state, smooth_initial_data

    mesh = make_mesh(cfg)
    if args.strict:
        report = geometry_report(cfg, mesh)
        if not report["pass"]:
            print(json.dumps(report, indent=2, sort_keys=True))
            return EXIT_INVALID
    t0 = time.perf_counter()
    sysm = build_generator(mesh, cfg.mu)
    F = random_state(sysm, cfg.seed)
    if cfg.smoothing:
        U0, dA = smooth_initial_data(sysm, F, cfg.smooth_depth)
    else:
        U0 = mean_project(sysm, F)
        dA = float(np.sqrt(sysm.norm(U0) ** 2 + sysm.norm(sysm.apply_A(U0)) ** 2))
    trace = run(sysm, U0, cfg.dt, cfg.T, cfg.stride)
    trace.to_csv(cfg.out / "energy.csv")
    meta = {"dA_norm": dA, "E0": float(trace.E[0]), "E_final": float(trace.E[-1]),
            "dissipated": trace.dissipated, "max_step_defect": trace.max_step_defect,
            "max_step_increase": trace.max_step_increase, "h": mesh.h, "n_state": sysm.n,
            "dt": cfg.dt, "T": cfg.T, "seed": cfg.seed}
    _write_json(cfg.out / "energy.json", meta)
    log.info("simulate: %d rows in %.1f s, E(T)/E(0) = %.3e", len(trace), time.perf_counter() - t0,
             trace.E[-1] / trace.E[0])
    print(cfg.out / "energy.csv")
    return EXIT_OK


def cmd_eigs(cfg: RunConfig, args) -> int:
    mesh = make_mesh(cfg)
    pairs = _eigenpairs(cfg, mesh, cfg.eig_k)
    _write_rows(cfg.out / "eigs.csv", "n,mu,residual",
                ((str(i + 1), p.mu, p.residual) for i, p in enumerate(pairs)))
    print(cfg.out / "eigs.csv")
    return EXIT_OK


def cmd_witness(cfg: RunConfig, args) -> int:
    from .spectral import resolved, witness
    from .system import build_generator

    mesh = make_mesh(cfg)
    pairs = _eigenpairs(cfg, mesh, cfg.eig_k)
    ok = resolved(pairs, mesh.h)
    pairs = [p for p, r in zip(pairs, ok) if r][: cfg.witness_count]
    if len(pairs) < cfg.witness_count:
        log.warning("only %d resolved eigenpairs (asked for %d); raise eig_k or refine", len(pairs), cfg.witness_count)
    pts = witness(pairs, build_generator(mesh, cfg.mu))
    _write_rows(cfg.out / "witness.csv", "mu,U_norm,F_norm,residual",
                ((w.mu, w.U_norm, w.F_norm, w.residual) for w in pts))
    print(cfg.out / "witness.csv")
    return EXIT_OK


def cmd_resolvent_sweep(cfg: RunConfig, args) -> int:
    from .spectral import frequency_sweep, growth_report, sweep_frequencies
    from .system import build_generator

    mesh = make_mesh(cfg, cfg.sweep_n)
    pairs = _eigenpairs(cfg, mesh, cfg.sweep_k)
    betas = sweep_frequencies(pairs, mesh.h, cfg.sweep_points)
    pts = frequency_sweep(build_generator(mesh, cfg.mu), betas)
    _write_rows(cfg.out / "resolvent.csv", "beta,resnorm", pts)
    try:
        summary = growth_report(pts, cfg.ell).to_dict()
    except ValueError as exc:
        summary = {"error": str(exc)}
    _write_json(cfg.out / "resolvent.json", summary)
    print(cfg.out / "resolvent.csv")
    return EXIT_OK


def cmd_decay_fit(cfg: RunConfig, args) -> int:
    from .analysis import decay_fit
    from .dynamics import EnergyTrace

    trace_path = Path(args.trace) if args.trace else cfg.out / "energy.csv"
    if not trace_path.is_file():
        raise ConfigError(f"energy trace not found: {trace_path}")
    dA = args.dA_norm
    if dA is None:
        meta = trace_path.with_suffix(".json")
        if not meta.is_file():
            raise ConfigError(f"--dA-norm not given and {meta} is missing")
        dA = json.loads(meta.read_text())["dA_norm"]
    window = tuple(args.window) if args.window else None
    report = decay_fit(EnergyTrace.from_csv(trace_path), dA, window).to_dict()
    _write_json(cfg.out / "decay.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


COMMANDS = {
    "mesh-gen": (cmd_mesh_gen, "generate the configured mesh and write it in the text mesh format"),
    "check-geometry": (cmd_check_geometry, "validate corner angles and the multiplier condition (JSON report)"),
    "simulate": (cmd_simulate, "integrate from seeded smoothed data and write the energy trace CSV"),
    "eigs": (cmd_eigs, "smallest eigenpairs of the boundary-augmented operator (CSV n,mu,residual)"),
    "resolvent-sweep": (cmd_resolvent_sweep, "resolvent norms on log-spaced frequencies (CSV beta,resnorm)"),
    "witness": (cmd_witness, "witness sequence from resolved eigenpairs (CSV mu,U_norm,F_norm,residual)"),
    "decay-fit": (cmd_decay_fit, "fit decay laws to an energy trace (JSON)"),
}

# flags that override config keys; each maps to the config key of the same name
OVERRIDES = {
    "mesh": "generator name (rect, lens) or mesh file path",
    "n": "mesh resolution",
    "alpha1": "corner angle between the wave arc and the interface, degrees (lens)",
    "alpha2": "corner angle between the plate arc and the interface, degrees (lens)",
    "x0": "multiplier centre, 'x,y'",
    "mu": "Poisson coefficient in (0, 1/2)",
    "omega0": "plate corner threshold in degrees",
    "dt": "time step",
    "T": "time horizon",
    "stride": "output decimation",
    "seed": "random seed for initial data",
    "smoothing": "smooth the initial data into D(A) (on/off)",
    "smooth_depth": "number of resolvent applications used for smoothing",
    "eig_k": "number of eigenpairs for eigs and witness",
    "witness_count": "number of resolved witness points",
    "sweep_n": "mesh resolution for resolvent-sweep",
    "sweep_k": "eigenpairs computed to place the sweep frequencies",
    "sweep_points": "number of sweep frequencies",
    "ell": "power of beta in the scaled-resolvent check",
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--output-dir", help="directory for outputs (created if missing)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override any config key; may be repeated")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    for key, text in OVERRIDES.items():
        common.add_argument(f"--{key.replace('_', '-')}", dest=f"ovr_{key}", metavar="VALUE", help=text)

    parser = argparse.ArgumentParser(prog="waveplate", description="Coupled wave-plate stability experiments.")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name, (_, text) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=text, description=text)
        if name == "simulate":
            p.add_argument("--strict", action="store_true",
                           help="validate the geometry first and exit 1 with the report if it fails")
        if name == "mesh-gen":
            p.add_argument("--name", help="output file name (default mesh.txt)")
        if name == "decay-fit":
            p.add_argument("--trace", help="energy CSV (default <output-dir>/energy.csv)")
            p.add_argument("--dA-norm", dest="dA_norm", type=float,
                           help="graph norm of the initial state (default from the trace's .json sidecar)")
            p.add_argument("--window", nargs=2, type=float, metavar=("T_MIN", "T_MAX"),
                           help="fit window (default [T/4, T])")
    return parser


def _limit_threads():
    n = os.environ.get("WAVEPLATE_THREADS")
    if not n:
        return None
    from threadpoolctl import threadpool_limits

    try:
        return threadpool_limits(limits=max(1, int(n)))
    except ValueError:
        raise ConfigError(f"WAVEPLATE_THREADS must be a positive integer, got {n!r}") from None


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("ovr_") and v is not None}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            print(f"error: --set expects KEY=VALUE, got {item!r}", file=sys.stderr)
            return EXIT_USAGE
        overrides[key.strip()] = value
    if args.output_dir:
        overrides["output_dir"] = args.output_dir
    try:
        cfg = build_config(args.config, overrides)
        cfg.out.mkdir(parents=True, exist_ok=True)
        limiter = _limit_threads()
        try:
            return COMMANDS[args.command][0](cfg, args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
