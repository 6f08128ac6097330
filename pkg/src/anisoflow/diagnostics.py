"""Error metrics, conservation indicators, and convergence-order studies.

The distance between two curves is the area of the symmetric difference of
the regions they enclose, computed by exact polygon clipping. Open curves
are closed along the substrate (their vertex loop already does this since
both contact points sit on y = 0). Convergence studies run the solver at a
ladder of resolutions against a cached fine reference and report observed
orders between consecutive levels.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import shapely.geometry as _sg

from .anisotropy import Anisotropy
from .curve import PolygonalCurve, ShapeSpec, Topology, make_shape
from .records import RunRecord, format_value
from .solver import RunConfig, ScaledK, TableK, ZeroK, evolve, initial_state
from .stabilizer import build_table

#: consecutive vertices closer than this are merged before clipping
DEDUP_DISTANCE = 1e-14

#: environment variable overriding the reference cache directory
CACHE_ENV_VAR = "ANISOFLOW_CACHE"


class GeometryError(ValueError):
    """Input polygon is unusable for boolean operations (e.g. self-intersecting)."""


def _dedup(vertices: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    keep = np.ones(len(v), dtype=bool)
    d = np.linalg.norm(np.diff(v, axis=0), axis=1)
    keep[1:] = d > DEDUP_DISTANCE
    if np.linalg.norm(v[-1] - v[0]) <= DEDUP_DISTANCE and keep[-1]:
        keep[-1] = False
    return v[keep]


def _polygon(vertices: np.ndarray) -> _sg.Polygon:
    v = _dedup(vertices)
    if len(v) < 3:
        raise GeometryError("polygon degenerates to fewer than 3 distinct vertices")
    poly = _sg.Polygon(v)
    if not poly.is_valid:
        raise GeometryError("polygon is self-intersecting or otherwise invalid")
    if poly.area <= 0.0:
        raise GeometryError("polygon has zero area")
    return poly


def polygon_intersection_area(p1, p2) -> float:
    """Area of the intersection of two simple polygons (vertex arrays).

    Handles non-convex inputs and multi-component intersections; commutative
    to roundoff.
    """
    a = _polygon(np.asarray(p1, dtype=float))
    b = _polygon(np.asarray(p2, dtype=float))
    return float(a.intersection(b).area)


def manifold_distance(c1: PolygonalCurve, c2: PolygonalCurve) -> float:
    """Symmetric-difference area |O1| + |O2| - 2 |O1 n O2| of the regions.

    Both curves must be simple and share a topology; open curves are closed
    by the substrate segment between their contact points, which their
    vertex loop provides implicitly.
    """
    if c1.topology is not c2.topology:
        raise ValueError("cannot compare curves of different topologies")
    a = _polygon(c1.vertices)
    b = _polygon(c2.vertices)
    m = a.area + b.area - 2.0 * a.intersection(b).area
    return max(0.0, float(m))


def normalized_indicators(rec: RunRecord) -> list[tuple[float, float, float]]:
    """Per-row (t, (A - A0)/A0, W/W0) from a run record."""
    if not rec.rows:
        raise ValueError("record has no rows")
    t = rec.column("t")
    area = rec.column("area")
    energy = rec.column("energy")
    a0, w0 = area[0], energy[0]
    if a0 == 0.0 or w0 == 0.0:
        raise ValueError("initial area and energy must be nonzero")
    return [(ti, (ai - a0) / a0, wi / w0) for ti, ai, wi in zip(t, area, energy)]


@dataclass(frozen=True)
class ReferenceConfig:
    """Fine-run protocol used as the surrogate exact solution."""

    h: float = 2.0**-7
    tau: float = 2.0**-10
    cache_dir: Path | None = None

    def resolved_cache_dir(self) -> Path | None:
        env = os.environ.get(CACHE_ENV_VAR)
        if env:
            return Path(env)
        return self.cache_dir


@dataclass
class ConvergenceRow:
    h: float
    t: float
    error: float
    order: float | None = None


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow] = field(default_factory=list)

    def write_csv(self, fh):
        fh.write("h,t,error,order\n")
        for r in self.rows:
            order = "" if r.order is None else format_value(r.order)
            fh.write(f"{format_value(r.h)},{format_value(r.t)},{format_value(r.error)},{order}\n")


def _snapshot_observer(checkpoints, tau, out: dict):
    remaining = sorted(checkpoints)

    def obs(state):
        while remaining and state.time >= remaining[0] - 0.25 * tau:
            out[remaining.pop(0)] = state.curve

    return obs


def _run_with_snapshots(a, shape_spec, n_vertices, tau, k_source, checkpoints):
    for t in checkpoints:
        if abs(t / tau - round(t / tau)) > 1e-9:
            raise ValueError(f"checkpoint {t} is not a multiple of the time step {tau}")
    curve = make_shape(shape_spec)
    cfg = RunConfig(n_vertices=n_vertices, t_end=max(checkpoints), tau=tau, k_source=k_source)
    state = initial_state(curve, cfg, a)
    snaps: dict[float, PolygonalCurve] = {}
    evolve(state, cfg, a, observers=(_snapshot_observer(checkpoints, tau, snaps),))
    missing = [t for t in checkpoints if t not in snaps]
    if missing:
        raise RuntimeError(f"run never reached checkpoints {missing}")
    return snaps


def _cache_key(a, shape_spec, n_ref, tau_ref, k_kind, checkpoints) -> str | None:
    try:
        payload = {
            "anisotropy": a.to_config(),
            "shape": [type(shape_spec).__name__, sorted(vars(shape_spec).items())],
            "n_ref": n_ref,
            "tau_ref": repr(float(tau_ref)),
            "k": k_kind,
            "checkpoints": [repr(float(t)) for t in sorted(checkpoints)],
        }
    except TypeError:
        return None
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:24]


def _load_cached(cache_dir: Path, key: str, checkpoints):
    base = cache_dir / key
    manifest = base / "manifest.json"
    if not manifest.exists():
        return None
    topo = Topology(json.loads(manifest.read_text())["topology"])
    snaps = {}
    for i, t in enumerate(sorted(checkpoints)):
        f = base / f"ref_{i}.csv"
        if not f.exists():
            return None
        data = np.loadtxt(f, delimiter=",", skiprows=1)
        snaps[t] = PolygonalCurve(topo, data)
    return snaps


def _store_cached(cache_dir: Path, key: str, snaps, payload_note: dict):
    base = cache_dir / key
    base.mkdir(parents=True, exist_ok=True)
    topo = None
    for i, t in enumerate(sorted(snaps)):
        curve = snaps[t]
        topo = curve.topology.value
        with open(base / f"ref_{i}.csv", "w") as fh:
            fh.write("x,y\n")
            for x, y in curve.vertices:
                fh.write(f"{format_value(x)},{format_value(y)}\n")
    (base / "manifest.json").write_text(
        json.dumps({"topology": topo, **payload_note}, sort_keys=True, indent=1)
    )


def convergence_study(a: Anisotropy, shape_spec: ShapeSpec, h_list, t_checkpoints,
                      reference: ReferenceConfig = ReferenceConfig(),
                      k_source_kind: str = "k0",
                      n_theta_samples: int = 20) -> ConvergenceTable:
    """Measure errors against a fine reference and report observed orders.

    Each resolution h runs with N = 1/h vertices and time step 16 h^2; the
    reference uses the configured (finer) h and tau with the same shape and
    stabilization, and is cached on disk keyed by the full protocol.
    Checkpoints must be multiples of every time step involved. Orders are
    log ratios between consecutive entries of ``h_list`` (descending).
    """
    h_list = list(h_list)
    if any(h2 >= h1 for h1, h2 in zip(h_list, h_list[1:])):
        raise ValueError("h_list must be strictly decreasing")
    if min(h_list) <= reference.h:
        raise ValueError("reference mesh must be finer than every run")
    checkpoints = sorted(float(t) for t in t_checkpoints)
    if not checkpoints:
        raise ValueError("need at least one checkpoint")

    if k_source_kind == "zero":
        k_source = ZeroK()
    elif k_source_kind == "k0":
        k_source = TableK(build_table(a, n_theta_samples))
    else:
        raise ValueError(f"unknown k source {k_source_kind!r}")

    n_ref = round(1.0 / reference.h)

    def with_n(spec, n):
        kwargs = dict(vars(spec))
        kwargs["n"] = n
        return type(spec)(**kwargs)

    cache_dir = reference.resolved_cache_dir()
    key = _cache_key(a, shape_spec, n_ref, reference.tau, k_source_kind, checkpoints)
    ref_snaps = None
    if cache_dir is not None and key is not None:
        ref_snaps = _load_cached(Path(cache_dir), key, checkpoints)
    if ref_snaps is None:
        ref_snaps = _run_with_snapshots(a, with_n(shape_spec, n_ref), n_ref,
                                        reference.tau, k_source, checkpoints)
        if cache_dir is not None and key is not None:
            _store_cached(Path(cache_dir), key, ref_snaps,
                          {"n_ref": n_ref, "tau_ref": reference.tau})

    table = ConvergenceTable()
    prev_errors: dict[float, float] | None = None
    prev_h = None
    for h in h_list:
        n = round(1.0 / h)
        tau = 16.0 * h * h
        snaps = _run_with_snapshots(a, with_n(shape_spec, n), n, tau, k_source, checkpoints)
        errors = {t: manifold_distance(snaps[t], ref_snaps[t]) for t in checkpoints}
        for t in checkpoints:
            order = None
            if prev_errors is not None and errors[t] > 0.0 and prev_errors[t] > 0.0:
                order = float(np.log(prev_errors[t] / errors[t]) / np.log(prev_h / h))
            table.rows.append(ConvergenceRow(h=h, t=t, error=errors[t], order=order))
        prev_errors, prev_h = errors, h
    return table
