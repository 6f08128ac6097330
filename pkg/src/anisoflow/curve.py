"""Polygonal curves, segment geometry, discrete functionals, initial shapes.

Closed curves store their vertices in clockwise order so that the discrete
enclosed area is positive and the per-segment normal (-sin, cos) points
outward. Open curves sit on the substrate y = 0 with both endpoints pinned
there exactly and run left to right. Curves are immutable values; every
function here is pure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._util import wrap_angle
from .anisotropy import Anisotropy

#: segments shorter than this fraction of the mean segment length are
#: treated as a collapsed mesh
DEGENERATE_EDGE_FACTOR = 1e-12


class DegenerateMeshError(RuntimeError):
    """A segment collapsed (or nearly collapsed) to zero length."""


class Topology(enum.Enum):
    CLOSED = "closed"
    OPEN_ON_SUBSTRATE = "open_on_substrate"


@dataclass(frozen=True)
class PolygonalCurve:
    """Ordered vertices with topology.

    Closed curves hold N vertices with implicit wraparound; open-on-substrate
    curves hold N+1 vertices whose first and last y-coordinates are exactly
    zero with x nondecreasing between them. Use the ``closed`` /
    ``open_on_substrate`` constructors, which normalize orientation and
    validate; vertex arrays are frozen after construction.
    """

    topology: Topology
    vertices: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.vertices, dtype=float))
        if v.ndim != 2 or v.shape[1] != 2:
            raise ValueError("vertices must be an (n, 2) array")
        v.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        n_seg = self.n_segments
        if n_seg < 3:
            raise ValueError(f"need at least 3 segments, got {n_seg}")
        lengths = np.linalg.norm(self.segment_vectors(), axis=1)
        if np.any(lengths <= DEGENERATE_EDGE_FACTOR * lengths.mean()):
            raise DegenerateMeshError("curve has a (nearly) zero-length segment")
        if self.topology is Topology.OPEN_ON_SUBSTRATE:
            if v[0, 1] != 0.0 or v[-1, 1] != 0.0:
                raise ValueError("open curve endpoints must lie exactly on y = 0")
            if not v[0, 0] <= v[-1, 0]:
                raise ValueError("open curve must run left to right on the substrate")

    @classmethod
    def closed(cls, vertices) -> "PolygonalCurve":
        """Build a closed curve, reversing counterclockwise input to clockwise."""
        v = np.asarray(vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("closed curve needs an (n>=3, 2) vertex array")
        signed = 0.5 * np.sum(
            (np.roll(v[:, 0], -1) - v[:, 0]) * (np.roll(v[:, 1], -1) + v[:, 1])
        )
        if signed == 0.0:
            raise ValueError("closed curve encloses zero area")
        if signed < 0.0:
            v = v[::-1]
        return cls(Topology.CLOSED, v)

    @classmethod
    def open_on_substrate(cls, vertices) -> "PolygonalCurve":
        return cls(Topology.OPEN_ON_SUBSTRATE, np.asarray(vertices, dtype=float))

    @property
    def n_segments(self) -> int:
        n = len(self.vertices)
        return n if self.topology is Topology.CLOSED else n - 1

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def segment_vectors(self) -> np.ndarray:
        """Per-segment difference vectors, shape (n_segments, 2)."""
        v = self.vertices
        if self.topology is Topology.CLOSED:
            return np.roll(v, -1, axis=0) - v
        return v[1:] - v[:-1]

    def with_vertices(self, vertices) -> "PolygonalCurve":
        """Same topology, new vertex positions (no orientation normalization)."""
        return PolygonalCurve(self.topology, np.asarray(vertices, dtype=float))


@dataclass(frozen=True)
class SegmentFrame:
    """Length, inclination and unit frame of one segment."""

    length: float
    theta: float
    tangent: tuple[float, float]
    normal: tuple[float, float]


@dataclass(frozen=True)
class SegmentGeometry:
    """Vectorized segment quantities used by the solvers."""

    vectors: np.ndarray  # (N, 2)
    lengths: np.ndarray  # (N,)
    thetas: np.ndarray  # (N,) in (-pi, pi]
    tangents: np.ndarray  # (N, 2)
    normals: np.ndarray  # (N, 2), the outward (-sin, cos) convention


def segment_geometry(c: PolygonalCurve) -> SegmentGeometry:
    h = c.segment_vectors()
    lengths = np.linalg.norm(h, axis=1)
    bad = np.nonzero(lengths == 0.0)[0]
    if bad.size:
        raise DegenerateMeshError(f"zero-length segment at index {bad[0]}")
    thetas = wrap_angle(np.arctan2(h[:, 1], h[:, 0]))
    tangents = h / lengths[:, None]
    # (-sin, cos) computed as the exact quarter turn of the unit tangent
    normals = np.stack([-tangents[:, 1], tangents[:, 0]], axis=1)
    return SegmentGeometry(h, lengths, thetas, tangents, normals)


def frames(c: PolygonalCurve) -> list[SegmentFrame]:
    """One frame per segment, in storage order."""
    geo = segment_geometry(c)
    return [
        SegmentFrame(
            float(geo.lengths[j]),
            float(geo.thetas[j]),
            (float(geo.tangents[j, 0]), float(geo.tangents[j, 1])),
            (float(geo.normals[j, 0]), float(geo.normals[j, 1])),
        )
        for j in range(c.n_segments)
    ]


def area(c: PolygonalCurve) -> float:
    """Discrete enclosed area 0.5 * sum (x_j - x_{j-1})(y_j + y_{j-1}).

    Positive under the orientation conventions; for open curves this is the
    area between the curve and the substrate.
    """
    v = c.vertices
    if c.topology is Topology.CLOSED:
        x2, y2 = np.roll(v[:, 0], -1), np.roll(v[:, 1], -1)
        return float(0.5 * np.sum((x2 - v[:, 0]) * (y2 + v[:, 1])))
    return float(0.5 * np.sum((v[1:, 0] - v[:-1, 0]) * (v[1:, 1] + v[:-1, 1])))


def energy(c: PolygonalCurve, a: Anisotropy, sigma: float | None = None) -> float:
    """Total surface energy sum |h_j| gamma(theta_j), minus the substrate term.

    Closed curves take no ``sigma``; open-on-substrate curves require it and
    subtract sigma * (x_right - x_left).
    """
    if c.topology is Topology.CLOSED:
        if sigma is not None:
            raise ValueError("closed curves take no substrate energy coefficient")
    elif sigma is None:
        raise ValueError("open curves require the substrate energy coefficient sigma")
    geo = segment_geometry(c)
    w = float(np.sum(geo.lengths * a.gamma(geo.thetas)))
    if c.topology is Topology.OPEN_ON_SUBSTRATE:
        w -= sigma * float(c.vertices[-1, 0] - c.vertices[0, 0])
    return w


def mesh_ratio(c: PolygonalCurve, a: Anisotropy) -> float:
    """Weighted mesh ratio max_j gamma(theta_j)|h_j| / min_j gamma(theta_j)|h_j|."""
    geo = segment_geometry(c)
    w = geo.lengths * a.gamma(geo.thetas)
    return float(w.max() / w.min())


def _segment_end_values(values: np.ndarray, on: str, c: PolygonalCurve):
    """Values of a nodal or segmentwise field at both ends of every segment."""
    v = np.asarray(values, dtype=float)
    n_seg = c.n_segments
    if on == "nodes":
        if len(v) != c.n_vertices:
            raise ValueError(f"nodal field needs {c.n_vertices} entries, got {len(v)}")
        if c.topology is Topology.CLOSED:
            return v, np.roll(v, -1, axis=0)
        return v[:-1], v[1:]
    if on == "segments":
        if len(v) != n_seg:
            raise ValueError(f"segmentwise field needs {n_seg} entries, got {len(v)}")
        return v, v
    raise ValueError(f"field location must be 'nodes' or 'segments', got {on!r}")


def lumped_inner(f, g, c: PolygonalCurve, f_on: str = "nodes", g_on: str = "nodes") -> float:
    """Mass-lumped inner product 0.5 * sum_j |h_j| [(f.g)(left+) + (f.g)(right-)].

    ``f`` and ``g`` are scalar or 2-vector fields given per vertex
    (``"nodes"``) or per segment (``"segments"``); a nodal factor contributes
    its vertex value at each segment end, a segmentwise factor its single
    value at both ends.
    """
    geo = segment_geometry(c)
    fl, fr = _segment_end_values(f, f_on, c)
    gl, gr = _segment_end_values(g, g_on, c)
    if fl.ndim != gl.ndim:
        raise ValueError("cannot pair a scalar field with a vector field")
    if fl.ndim == 2:
        left = np.einsum("ij,ij->i", fl, gl)
        right = np.einsum("ij,ij->i", fr, gr)
    else:
        left = fl * gl
        right = fr * gr
    return float(0.5 * np.sum(geo.lengths * (left + right)))


@dataclass(frozen=True)
class Ellipse:
    """Closed ellipse x^2/rx^2 + y^2/ry^2 = 1, optionally rotated (radians, ccw)."""

    rx: float
    ry: float
    rotation: float = 0.0
    n: int = 128


@dataclass(frozen=True)
class HalfEllipse:
    """Upper half-ellipse on the substrate, sampled left to right."""

    rx: float
    ry: float
    n: int = 128


@dataclass(frozen=True)
class OpenRectangle:
    """Open w x h rectangle on the substrate: up the left wall, across, down."""

    width: float
    height: float
    n: int = 128


@dataclass(frozen=True)
class FourFoldStar:
    """Closed star r(u) = 1 + 0.5 cos(4u) in polar form."""

    n: int = 128


ShapeSpec = Ellipse | HalfEllipse | OpenRectangle | FourFoldStar


def make_shape(spec: ShapeSpec) -> PolygonalCurve:
    """Sample an initial shape into a curve with the stated conventions.

    Closed shapes are emitted clockwise; open shapes run left to right with
    endpoint y set exactly to zero.
    """
    if isinstance(spec, Ellipse):
        if spec.rx <= 0.0 or spec.ry <= 0.0:
            raise ValueError("ellipse radii must be positive")
        u = 2.0 * np.pi * np.arange(spec.n) / spec.n
        pts = np.stack([spec.rx * np.cos(u), -spec.ry * np.sin(u)], axis=1)
        if spec.rotation:
            cr, sr = np.cos(spec.rotation), np.sin(spec.rotation)
            pts = pts @ np.array([[cr, sr], [-sr, cr]])
        return PolygonalCurve.closed(pts)
    if isinstance(spec, HalfEllipse):
        if spec.rx <= 0.0 or spec.ry <= 0.0:
            raise ValueError("half-ellipse radii must be positive")
        u = np.pi - np.pi * np.arange(spec.n + 1) / spec.n
        pts = np.stack([spec.rx * np.cos(u), spec.ry * np.sin(u)], axis=1)
        pts[0, 1] = 0.0
        pts[-1, 1] = 0.0
        return PolygonalCurve.open_on_substrate(pts)
    if isinstance(spec, OpenRectangle):
        if spec.width <= 0.0 or spec.height <= 0.0:
            raise ValueError("rectangle sides must be positive")
        w, h, n = spec.width, spec.height, spec.n
        n_wall = max(1, round(n * h / (w + 2.0 * h)))
        n_top = n - 2 * n_wall
        if n_top < 1:
            raise ValueError(f"n={n} too small for a {w}x{h} open rectangle")
        left = np.stack(
            [np.full(n_wall + 1, -w / 2.0), h * np.arange(n_wall + 1) / n_wall], axis=1
        )
        top = np.stack(
            [-w / 2.0 + w * np.arange(1, n_top + 1) / n_top, np.full(n_top, h)], axis=1
        )
        right = np.stack(
            [np.full(n_wall, w / 2.0), h - h * np.arange(1, n_wall + 1) / n_wall], axis=1
        )
        pts = np.concatenate([left, top, right])
        pts[0, 1] = 0.0
        pts[-1, 1] = 0.0
        return PolygonalCurve.open_on_substrate(pts)
    if isinstance(spec, FourFoldStar):
        u = -2.0 * np.pi * np.arange(spec.n) / spec.n
        r = 1.0 + 0.5 * np.cos(4.0 * u)
        pts = np.stack([r * np.cos(u), r * np.sin(u)], axis=1)
        return PolygonalCurve.closed(pts)
    raise TypeError(f"unknown shape spec {spec!r}")
