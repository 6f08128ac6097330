"""JSON experiment configuration: schema, parsing, and manifest round-trip.

Numbers may be given as JSON numbers or as exact power-of-two strings like
"2^-7"; the time step additionally accepts "16h2" for the mesh-dependent
default. A manifest written by a previous run (the resolved config under a
"resolved" key, including the materialized stabilizer table) loads the same
way, reproducing the run bit for bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .anisotropy import Anisotropy, Ellipsoidal, Isotropic, MFold, PiecewiseSgn, RiemannianSum
from .curve import Ellipse, FourFoldStar, HalfEllipse, OpenRectangle, ShapeSpec
from .dewetting import DewettingParams
from .solver import KSource, RunConfig, ScaledK, TableK, ZeroK
from .stabilizer import StabilizerTable, build_table


class ConfigError(ValueError):
    """The configuration file violates the schema."""


def parse_number(value) -> float:
    """Accept JSON numbers and exact strings like '2^-7' or '0.125'."""
    if isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        s = value.strip()
        if s.startswith("2^"):
            try:
                return float(Fraction(2) ** int(s[2:]))
            except (ValueError, OverflowError) as err:
                raise ConfigError(f"bad power-of-two literal {value!r}") from err
        try:
            return float(s)
        except ValueError as err:
            raise ConfigError(f"bad numeric literal {value!r}") from err
    raise ConfigError(f"expected a number, got {value!r}")


def anisotropy_from_config(spec: dict) -> Anisotropy:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("anisotropy must be a tagged object with a 'kind'")
    kind = spec["kind"]
    try:
        if kind == "isotropic":
            return Isotropic()
        if kind == "mfold":
            return MFold(m=int(spec["m"]), beta=parse_number(spec["beta"]),
                         theta0=parse_number(spec.get("theta0", 0.0)))
        if kind == "ellipsoidal":
            return Ellipsoidal(a=parse_number(spec["a"]), b=parse_number(spec["b"]))
        if kind == "riemannian":
            return RiemannianSum(matrices=tuple(
                tuple(tuple(parse_number(x) for x in row) for row in mat)
                for mat in spec["matrices"]
            ))
        if kind == "piecewise_sgn":
            return PiecewiseSgn()
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad anisotropy spec {spec!r}: {err}") from err
    raise ConfigError(f"unknown anisotropy kind {kind!r}")


def shape_from_config(spec: dict, n_vertices: int) -> ShapeSpec:
    if not isinstance(spec, dict) or "kind" not in spec:
        raise ConfigError("shape must be a tagged object with a 'kind'")
    kind = spec["kind"]
    n = int(spec.get("n", n_vertices))
    try:
        if kind == "ellipse":
            return Ellipse(rx=parse_number(spec["rx"]), ry=parse_number(spec["ry"]),
                           rotation=parse_number(spec.get("rotation", 0.0)), n=n)
        if kind == "half_ellipse":
            return HalfEllipse(rx=parse_number(spec["rx"]), ry=parse_number(spec["ry"]), n=n)
        if kind == "open_rectangle":
            return OpenRectangle(width=parse_number(spec["width"]),
                                 height=parse_number(spec["height"]), n=n)
        if kind == "four_fold_star":
            return FourFoldStar(n=n)
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad shape spec {spec!r}: {err}") from err
    raise ConfigError(f"unknown shape kind {kind!r}")


def k_source_from_config(spec: dict | None, a: Anisotropy) -> KSource:
    spec = dict(spec or {"source": "k0"})
    source = spec.get("source", "k0")
    if isinstance(source, dict) and "k0_scaled" in source:
        spec["factor"] = source["k0_scaled"]
        source = "k0_scaled"
    n_samples = int(spec.get("n_theta_samples", 20))
    if "table" in spec:
        table = StabilizerTable(np.asarray(spec["table"]["thetas"], dtype=float),
                                np.asarray(spec["table"]["values"], dtype=float))
    elif source in ("k0", "k0_scaled"):
        table = build_table(a, n_samples)
    else:
        table = None
    if source == "zero":
        return ZeroK()
    if source == "k0":
        return TableK(table)
    if source == "k0_scaled":
        factor = parse_number(spec.get("factor", 1.0))
        return ScaledK(table, factor)
    raise ConfigError(f"unknown k source {source!r}")


@dataclass(frozen=True)
class OutputConfig:
    directory: Path
    snapshot_times: tuple[float, ...] = ()
    record_every: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    anisotropy: Anisotropy
    shape: ShapeSpec
    run: RunConfig
    dewetting: DewettingParams | None
    output: OutputConfig


def _solver_block(cfg: dict, n_default: int | None = None) -> RunConfig:
    solver = cfg.get("solver")
    if not isinstance(solver, dict):
        raise ConfigError("config needs a 'solver' object")
    try:
        n_vertices = int(solver["n_vertices"]) if "n_vertices" in solver else n_default
        if n_vertices is None:
            raise ConfigError("solver block needs n_vertices")
        tau_spec = solver.get("tau", "16h2")
        if isinstance(tau_spec, str) and tau_spec.replace(" ", "") == "16h2":
            tau = None
        else:
            tau = parse_number(tau_spec)
        return RunConfig(
            n_vertices=n_vertices,
            t_end=parse_number(solver["t_end"]),
            tau=tau,
            newton_tol=parse_number(solver.get("newton_tol", 1e-12)),
            newton_max_iters=int(solver.get("newton_max_iters", 50)),
            min_edge_factor=parse_number(solver.get("min_edge_factor", 1e-12)),
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"bad solver block: {err}") from err


def load_experiment_config(path: str | Path, out_dir: Path | None = None) -> ExperimentConfig:
    """Load an experiment config or a manifest written by a previous run."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if "resolved" in raw:
        raw = raw["resolved"]
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")

    a = anisotropy_from_config(raw.get("anisotropy", {"kind": "isotropic"}))
    run = _solver_block(raw)
    shape = shape_from_config(raw.get("shape", {}), run.n_vertices)
    run = RunConfig(
        n_vertices=run.n_vertices, t_end=run.t_end, tau=run.tau,
        k_source=k_source_from_config(raw.get("k"), a),
        newton_tol=run.newton_tol, newton_max_iters=run.newton_max_iters,
        min_edge_factor=run.min_edge_factor,
    )

    dew = None
    if "dewetting" in raw and raw["dewetting"] is not None:
        block = raw["dewetting"]
        try:
            dew = DewettingParams(sigma=parse_number(block["sigma"]),
                                  eta=parse_number(block.get("eta", 100.0)))
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as err:
            raise ConfigError(f"bad dewetting block: {err}") from err

    is_open = isinstance(shape, (HalfEllipse, OpenRectangle))
    if is_open and dew is None:
        raise ConfigError("open shapes require a dewetting block")
    if not is_open and dew is not None:
        raise ConfigError("closed shapes take no dewetting block")

    out_block = raw.get("output", {})
    directory = Path(out_dir) if out_dir is not None else Path(out_block.get("directory", "."))
    try:
        output = OutputConfig(
            directory=directory,
            snapshot_times=tuple(parse_number(t) for t in out_block.get("snapshot_times", ())),
            record_every=int(out_block.get("record_every", 1)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(f"bad output block: {err}") from err
    if output.record_every < 1:
        raise ConfigError("record_every must be a positive integer")
    return ExperimentConfig(anisotropy=a, shape=shape, run=run, dewetting=dew, output=output)


def resolved_config_dict(cfg: ExperimentConfig) -> dict:
    """The manifest payload: the full protocol with the table materialized."""
    shape = {"kind": {
        Ellipse: "ellipse", HalfEllipse: "half_ellipse",
        OpenRectangle: "open_rectangle", FourFoldStar: "four_fold_star",
    }[type(cfg.shape)]}
    shape.update(vars(cfg.shape))
    out = {
        "anisotropy": cfg.anisotropy.to_config(),
        "shape": shape,
        "solver": {
            "n_vertices": cfg.run.n_vertices,
            "tau": cfg.run.resolved_tau,
            "t_end": cfg.run.t_end,
            "newton_tol": cfg.run.newton_tol,
            "newton_max_iters": cfg.run.newton_max_iters,
            "min_edge_factor": cfg.run.min_edge_factor,
        },
        "k": cfg.run.k_source.describe(),
        "output": {
            "directory": str(cfg.output.directory),
            "snapshot_times": list(cfg.output.snapshot_times),
            "record_every": cfg.output.record_every,
        },
    }
    if cfg.dewetting is not None:
        out["dewetting"] = {"sigma": cfg.dewetting.sigma, "eta": cfg.dewetting.eta}
    return out
