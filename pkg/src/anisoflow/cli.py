"""Command-line entry point.

Subcommands: simulate (closed-curve runs), dewet (open-curve runs), k0
(stabilizer table CSV), check-gamma (stability report JSON), converge
(order study CSV), distance (symmetric-difference area of two curve CSVs).
Config errors exit with status 2, run failures with 1.
"""

from __future__ import annotations

import argparse
import datetime
import json
import sys
from pathlib import Path

import numpy as np

from . import diagnostics
from .anisotropy import check_energy_stable
from .config import (
    ConfigError,
    ExperimentConfig,
    anisotropy_from_config,
    load_experiment_config,
    parse_number,
    resolved_config_dict,
    shape_from_config,
)
from .curve import DegenerateMeshError, PolygonalCurve, Topology, make_shape
from .dewetting import evolve_open, initial_state_open
from .diagnostics import ConvergenceTable, GeometryError, ReferenceConfig, manifold_distance
from .records import RunRecord, format_value
from .solver import StepFailureError, evolve, initial_state
from .stabilizer import StabilizerDivergenceError, build_table


class RunError(RuntimeError):
    """A run failed after configuration succeeded (exit status 1)."""


def _write_curve_csv(path: Path, curve: PolygonalCurve):
    with open(path, "w") as fh:
        fh.write("x,y\n")
        for x, y in curve.vertices:
            fh.write(f"{format_value(x)},{format_value(y)}\n")


def _read_curve_csv(path: Path, topology: Topology) -> PolygonalCurve:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if topology is Topology.CLOSED:
        return PolygonalCurve.closed(data)
    return PolygonalCurve.open_on_substrate(data)


def _snapshot_times(cfg: ExperimentConfig, every: float | None) -> list[float]:
    times = list(cfg.output.snapshot_times)
    if every is not None:
        t = 0.0
        while t < cfg.run.t_end + 1e-12:
            times.append(t)
            t += every
    return sorted(set(times))


def _make_snapshot_observer(times, tau, out_dir: Path):
    remaining = sorted(times)

    def obs(state):
        while remaining and state.time >= remaining[0] - 0.25 * tau:
            t = remaining.pop(0)
            _write_curve_csv(out_dir / f"snapshot_t{format_value(t)}.csv", state.curve)

    return obs


def _thin_record(record: RunRecord, every: int) -> RunRecord:
    if every <= 1:
        return record
    rows = [r for i, r in enumerate(record.rows) if i % every == 0]
    if record.rows and rows[-1] is not record.rows[-1]:
        rows.append(record.rows[-1])
    thinned = RunRecord(columns=record.columns, meta=record.meta)
    thinned.rows = rows
    return thinned


def _write_outputs(out_dir: Path, record: RunRecord, cfg: ExperimentConfig):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "record.csv", "w") as fh:
        _thin_record(record, cfg.output.record_every).write_csv(fh)
    manifest = {
        "created_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "resolved": resolved_config_dict(cfg),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))


def _load_gamma_spec(arg: str) -> dict:
    text = arg.strip()
    if not text.startswith("{"):
        try:
            text = Path(arg).read_text()
        except OSError as err:
            raise ConfigError(f"cannot read anisotropy spec {arg!r}: {err}") from err
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"bad anisotropy JSON: {err}") from err


def cmd_simulate(args) -> int:
    cfg = load_experiment_config(args.config, out_dir=args.out)
    if cfg.dewetting is not None:
        raise ConfigError("simulate runs closed shapes; use 'dewet' for open ones")
    curve = make_shape(cfg.shape)
    state = initial_state(curve, cfg.run, cfg.anisotropy)
    out_dir = cfg.output.directory
    out_dir.mkdir(parents=True, exist_ok=True)
    obs = _make_snapshot_observer(_snapshot_times(cfg, args.snapshot_every),
                                  cfg.run.resolved_tau, out_dir)
    try:
        final, record = evolve(state, cfg.run, cfg.anisotropy, observers=(obs,))
    except (StepFailureError, DegenerateMeshError) as err:
        raise RunError(str(err)) from err
    _write_curve_csv(out_dir / "final.csv", final.curve)
    _write_outputs(out_dir, record, cfg)
    return 0


def cmd_dewet(args) -> int:
    cfg = load_experiment_config(args.config, out_dir=args.out)
    if cfg.dewetting is None:
        raise ConfigError("dewet runs open shapes with a dewetting block")
    curve = make_shape(cfg.shape)
    state = initial_state_open(curve, cfg.run, cfg.anisotropy, cfg.dewetting)
    out_dir = cfg.output.directory
    out_dir.mkdir(parents=True, exist_ok=True)
    obs = _make_snapshot_observer(_snapshot_times(cfg, args.snapshot_every),
                                  cfg.run.resolved_tau, out_dir)
    try:
        final, record = evolve_open(state, cfg.run, cfg.anisotropy, cfg.dewetting,
                                    observers=(obs,))
    except (StepFailureError, DegenerateMeshError) as err:
        raise RunError(str(err)) from err
    _write_curve_csv(out_dir / "final.csv", final.curve)
    _write_outputs(out_dir, record, cfg)
    return 0


def cmd_k0(args) -> int:
    a = anisotropy_from_config(_load_gamma_spec(args.gamma))
    report = check_energy_stable(a)
    if not report.satisfied:
        raise RunError(
            "stabilizing function diverges: the density violates the energy "
            f"stability condition (min margin {report.min_margin:.3e})"
        )
    try:
        table = build_table(a, args.samples)
    except StabilizerDivergenceError as err:
        raise RunError(str(err)) from err
    lines = ["theta,k0"]
    lines += [f"{format_value(t)},{format_value(k)}"
              for t, k in zip(table.thetas, table.k0_values)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_check_gamma(args) -> int:
    a = anisotropy_from_config(_load_gamma_spec(args.gamma))
    report = check_energy_stable(a)
    sys.stdout.write(json.dumps(report.to_dict(), indent=1) + "\n")
    return 0 if report.satisfied else 1


def cmd_converge(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {args.config}: {err}") from err
    try:
        a = anisotropy_from_config(raw["anisotropy"])
        h_list = [parse_number(h) for h in raw["h_list"]]
        checkpoints = [parse_number(t) for t in raw["checkpoints"]]
        ref_block = raw.get("reference", {})
        reference = ReferenceConfig(
            h=parse_number(ref_block.get("h", "2^-7")),
            tau=parse_number(ref_block.get("tau", "2^-10")),
            cache_dir=Path(ref_block["cache_dir"]) if "cache_dir" in ref_block else None,
        )
        n_coarsest = round(1.0 / max(h_list))
        shape = shape_from_config(raw["shape"], n_coarsest)
        k_kind = raw.get("k", {}).get("source", "k0")
        n_theta = int(raw.get("k", {}).get("n_theta_samples", 20))
        out_dir = Path(args.out) if args.out else Path(raw.get("output", {}).get("directory", "."))
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad convergence config: {err}") from err
    try:
        table = diagnostics.convergence_study(a, shape, h_list, checkpoints,
                                              reference=reference, k_source_kind=k_kind,
                                              n_theta_samples=n_theta)
    except (StepFailureError, DegenerateMeshError, StabilizerDivergenceError) as err:
        raise RunError(str(err)) from err
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "convergence.csv", "w") as fh:
        table.write_csv(fh)
    with open(out_dir / "convergence.csv") as fh:
        sys.stdout.write(fh.read())
    return 0


def cmd_distance(args) -> int:
    topology = Topology.CLOSED if args.topology == "closed" else Topology.OPEN_ON_SUBSTRATE
    try:
        c1 = _read_curve_csv(Path(args.csv1), topology)
        c2 = _read_curve_csv(Path(args.csv2), topology)
    except (OSError, ValueError) as err:
        raise ConfigError(f"cannot load curves: {err}") from err
    try:
        m = manifold_distance(c1, c2)
    except GeometryError as err:
        raise RunError(str(err)) from err
    sys.stdout.write(format_value(m) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="anisoflow",
        description="Stabilized parametric FEM for anisotropic surface diffusion "
                    "and solid-state dewetting of planar curves.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="evolve a closed curve")
    sim.add_argument("--config", required=True, help="experiment config or manifest JSON")
    sim.add_argument("--out", default=None, help="output directory (overrides config)")
    sim.add_argument("--snapshot-every", type=float, default=None, metavar="T",
                     help="write a curve snapshot every T time units")
    sim.set_defaults(func=cmd_simulate)

    dew = sub.add_parser("dewet", help="evolve an open curve on the substrate")
    dew.add_argument("--config", required=True)
    dew.add_argument("--out", default=None)
    dew.add_argument("--snapshot-every", type=float, default=None, metavar="T")
    dew.set_defaults(func=cmd_dewet)

    k0 = sub.add_parser("k0", help="write the sampled stabilizing function as CSV")
    k0.add_argument("gamma", help="anisotropy spec: inline JSON or a path to one")
    k0.add_argument("--samples", type=int, default=20)
    k0.add_argument("--out", default=None, help="CSV path (default: stdout)")
    k0.set_defaults(func=cmd_k0)

    chk = sub.add_parser("check-gamma", help="print the stability report as JSON")
    chk.add_argument("gamma", help="anisotropy spec: inline JSON or a path to one")
    chk.set_defaults(func=cmd_check_gamma)

    conv = sub.add_parser("converge", help="run a convergence-order study")
    conv.add_argument("--config", required=True)
    conv.add_argument("--out", default=None)
    conv.add_argument("--workers", type=int, default=1,
                      help="reserved; studies currently run serially")
    conv.set_defaults(func=cmd_converge)

    dist = sub.add_parser("distance", help="symmetric-difference area of two curve CSVs")
    dist.add_argument("csv1")
    dist.add_argument("csv2")
    dist.add_argument("--topology", choices=("closed", "open"), default="closed")
    dist.set_defaults(func=cmd_distance)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (RunError, StepFailureError, DegenerateMeshError,
            StabilizerDivergenceError, GeometryError) as err:
        print(f"run failed: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
