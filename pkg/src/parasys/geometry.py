"""Structured triangulations of rectilinear polygons with mixed boundary parts.

A domain is an axis-aligned simple polygon, optionally cut by slits that
start on the boundary.  Every rectangle of a tensor grid aligned with all
polygon/slit coordinates is split along its rising diagonal into two
triangles, so the mesh is conforming and reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import shapely
from shapely.geometry import Point, Polygon
from shapely.ops import unary_union

from .errors import ValidationError

_TOL = 1e-12


@dataclass(frozen=True)
class Domain:
    """Axis-aligned polygon plus optional slits.

    ``segment_names[k]`` names the polygon edge from vertex k to k+1.
    A slit is a pair of points on one grid line; the first point must lie on
    the outer boundary.  Slit sides are labelled ``"<name>+"``/``"<name>-"``.
    """

    polygon: tuple
    segment_names: tuple | None = None
    slits: tuple = ()
    slit_names: tuple | None = None

    def names(self):
        if self.segment_names is not None:
            return tuple(self.segment_names)
        return tuple(f"e{k}" for k in range(len(self.polygon)))

    def slit_labels(self):
        if self.slit_names is not None:
            return tuple(self.slit_names)
        return tuple(f"slit{k}" for k in range(len(self.slits)))

    def segments(self):
        """All labelled boundary segments as ``(label, p, q)``."""
        pts = [tuple(map(float, p)) for p in self.polygon]
        out = []
        for k, name in enumerate(self.names()):
            out.append((name, pts[k], pts[(k + 1) % len(pts)]))
        for name, (p, q) in zip(self.slit_labels(), self.slits):
            p, q = tuple(map(float, p)), tuple(map(float, q))
            out.append((name + "+", p, q))
            out.append((name + "-", p, q))
        return out


def unit_square():
    return rectangle(0.0, 1.0, 0.0, 1.0)


def rectangle(x0, x1, y0, y1):
    return Domain(
        polygon=((x0, y0), (x1, y0), (x1, y1), (x0, y1)),
        segment_names=("bottom", "right", "top", "left"),
    )


def l_shape():
    """[0,2]^2 with the upper-right quadrant [1,2]^2 removed."""
    return Domain(
        polygon=((0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)),
        segment_names=("bottom", "right", "notch_bottom", "notch_left", "top", "left"),
    )


def slit_square():
    """Unit square with a slit from the middle of the left edge to the centre."""
    return Domain(
        polygon=((0, 0), (1, 0), (1, 1), (0, 1)),
        segment_names=("bottom", "right", "top", "left"),
        slits=(((0.0, 0.5), (0.5, 0.5)),),
        slit_names=("slit",),
    )


@dataclass(frozen=True)
class Mesh2D:
    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_labels: tuple
    num_components: int
    dirichlet_parts: tuple
    domain: Domain | None = field(default=None, compare=False)

    def __post_init__(self):
        for arr in (self.vertices, self.triangles, self.boundary_edges):
            arr.setflags(write=False)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    def signed_areas(self):
        p = self.vertices[self.triangles]
        e1 = p[:, 1] - p[:, 0]
        e2 = p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def area(self):
        return float(self.signed_areas().sum())

    def edges(self):
        """Unique undirected edges as a sorted ``(n, 2)`` array."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        return np.unique(np.sort(e, axis=1), axis=0)

    def max_edge_length(self):
        e = self.edges()
        return float(np.max(np.linalg.norm(self.vertices[e[:, 1]] - self.vertices[e[:, 0]], axis=1)))

    def grid_spacing(self):
        """Largest axis-parallel edge; the structured cell size."""
        e = self.edges()
        d = np.abs(self.vertices[e[:, 1]] - self.vertices[e[:, 0]])
        axis = (d[:, 0] < _TOL) | (d[:, 1] < _TOL)
        return float(np.max(d[axis].max(axis=1)))

    def dirichlet_nodes(self, component):
        edges = sorted(self.dirichlet_parts[component])
        if not edges:
            return np.zeros(0, dtype=int)
        return np.unique(self.boundary_edges[edges].ravel())

    def boundary_nodes(self):
        return np.unique(self.boundary_edges.ravel())

    def edges_with_label(self, label):
        return [k for k, lab in enumerate(self.boundary_labels) if lab == label]

    def with_dirichlet(self, parts):
        """Copy of the mesh with new per-component Dirichlet edge sets."""
        parts = tuple(frozenset(int(k) for k in p) for p in parts)
        return Mesh2D(self.vertices.copy(), self.triangles.copy(), self.boundary_edges.copy(),
                      self.boundary_labels, len(parts), parts, self.domain)

    def validate(self):
        if self.num_components < 1:
            raise ValidationError("mesh needs at least one component")
        if len(self.dirichlet_parts) != self.num_components:
            raise ValidationError("one Dirichlet part per component is required")
        if np.any(self.signed_areas() <= 0):
            raise ValidationError("triangle with non-positive signed area")
        t = self.triangles
        e = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        if np.any(counts > 2):
            raise ValidationError("edge shared by more than two triangles")
        topo = {tuple(x) for x in uniq[counts == 1]}
        given = {tuple(sorted(map(int, x))) for x in self.boundary_edges}
        if topo != given:
            raise ValidationError("boundary_edges do not match the topological boundary")
        nb = len(self.boundary_edges)
        for part in self.dirichlet_parts:
            if any(k < 0 or k >= nb for k in part):
                raise ValidationError("Dirichlet part references a nonexistent boundary edge")
        if self.domain is not None:
            for (a, b) in self.boundary_edges:
                if _segment_label(self.domain, self.vertices[a], self.vertices[b]) is None:
                    raise ValidationError("hanging node: boundary edge off the domain boundary")
        return self

    def to_dict(self):
        return {
            "vertices": self.vertices.tolist(),
            "triangles": self.triangles.tolist(),
            "boundary_edges": self.boundary_edges.tolist(),
            "boundary_labels": list(self.boundary_labels),
            "num_components": self.num_components,
            "dirichlet_parts": [sorted(p) for p in self.dirichlet_parts],
        }

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data):
        try:
            verts = np.asarray(data["vertices"], dtype=float).reshape(-1, 2)
            tris = np.asarray(data["triangles"], dtype=int).reshape(-1, 3)
            bnd = np.asarray(data["boundary_edges"], dtype=int).reshape(-1, 2)
            parts = tuple(frozenset(int(k) for k in p) for p in data["dirichlet_parts"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed mesh JSON: {exc}") from exc
        labels = tuple(data.get("boundary_labels", [""] * len(bnd)))
        m = int(data.get("num_components", len(parts)))
        return cls(verts, tris, bnd, labels, m, parts).validate()

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


def _breaks(coords, h):
    coords = sorted(set(round(float(c), 12) for c in coords))
    out = [coords[0]]
    for a, b in zip(coords[:-1], coords[1:]):
        n = max(1, math.ceil((b - a) / h - 1e-9))
        out.extend(a + (b - a) * k / n for k in range(1, n))
        out.append(b)
    return np.array(out)


def _on_segment(p, a, b):
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    p = np.asarray(p, float)
    ab = b - a
    L2 = float(ab @ ab)
    cross = ab[0] * (p[1] - a[1]) - ab[1] * (p[0] - a[0])
    if abs(cross) > 1e-9 * max(1.0, math.sqrt(L2)):
        return False
    s = float((p - a) @ ab) / L2
    return -1e-9 <= s <= 1 + 1e-9


def _segment_label(domain, p, q):
    """Label of the polygon edge or slit containing segment [p, q], else None."""
    for label, a, b in domain.segments():
        if _on_segment(p, a, b) and _on_segment(q, a, b):
            return label
    return None


def _check_polygon(domain):
    pts = [tuple(map(float, p)) for p in domain.polygon]
    if len(pts) < 4:
        raise ValidationError("polygon needs at least four vertices")
    for k in range(len(pts)):
        a, b = pts[k], pts[(k + 1) % len(pts)]
        if abs(a[0] - b[0]) > _TOL and abs(a[1] - b[1]) > _TOL:
            raise ValidationError("only axis-aligned polygons are supported", edge=k)
        if a == b:
            raise ValidationError("repeated polygon vertex", edge=k)
    poly = Polygon(pts)
    if not poly.is_valid or not poly.exterior.is_simple:
        raise ValidationError("polygon is not simple")
    if poly.area <= _TOL:
        raise ValidationError("empty domain")
    if domain.segment_names is not None and len(domain.segment_names) != len(pts):
        raise ValidationError("one segment name per polygon edge is required")
    for (p, q) in domain.slits:
        p = tuple(map(float, p))
        q = tuple(map(float, q))
        if abs(p[0] - q[0]) > _TOL and abs(p[1] - q[1]) > _TOL:
            raise ValidationError("slits must be axis-aligned")
        if not poly.exterior.distance(Point(p)) < 1e-12:
            raise ValidationError("slit must start on the outer boundary")
        if not poly.contains(Point(q)):
            raise ValidationError("slit tip must lie inside the domain")
    return poly


def build_mesh(domain, h, bc_spec=None, num_components=None):
    """Triangulate ``domain`` with cell size at most ``h``.

    ``bc_spec`` is a list with one entry per component, each an iterable of
    segment labels that form that component's Dirichlet part.  ``None`` means
    one component with no Dirichlet part.
    """
    if not h > 0:
        raise ValidationError("h must be positive")
    poly = _check_polygon(domain)
    if bc_spec is None:
        bc_spec = [()] * (num_components or 1)
    bc_spec = [tuple(labels) for labels in bc_spec]
    if num_components is not None and num_components != len(bc_spec):
        raise ValidationError("bc_spec length differs from num_components")
    known = {lab for lab, _, _ in domain.segments()}
    known |= set(domain.slit_labels())
    for labels in bc_spec:
        for lab in labels:
            if lab not in known:
                raise ValidationError(f"boundary label {lab!r} is not a segment", label=lab)

    xs_all = [p[0] for p in domain.polygon] + [c[0] for s in domain.slits for c in s]
    ys_all = [p[1] for p in domain.polygon] + [c[1] for s in domain.slits for c in s]
    xs = _breaks(xs_all, h)
    ys = _breaks(ys_all, h)
    nx, ny = len(xs), len(ys)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    CX, CY = np.meshgrid(cx, cy, indexing="ij")
    inside = shapely.contains_xy(poly, CX, CY)

    node = lambda i, j: i * ny + j  # noqa: E731
    cells = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            if inside[i, j]:
                cells.append([node(i, j), node(i + 1, j), node(i + 1, j + 1), node(i, j + 1)])
    cells = np.array(cells, dtype=int)
    verts = np.column_stack([X.ravel(), Y.ravel()])

    # duplicate slit nodes for the cells on the "+" side
    for (p, q) in domain.slits:
        p = np.array(p, float)
        q = np.array(q, float)
        vertical = abs(p[0] - q[0]) < _TOL
        lo, hi = sorted([p[1], q[1]] if vertical else [p[0], q[0]])
        along = 1 if vertical else 0
        across = 0 if vertical else 1
        line = p[across]
        on_line = np.abs(verts[:, across] - line) < 1e-12
        coord = verts[:, along]
        tip = q[along]
        in_range = (coord >= lo - 1e-12) & (coord <= hi + 1e-12) & (np.abs(coord - tip) > 1e-12)
        slit_nodes = np.nonzero(on_line & in_range)[0]
        used = np.zeros(len(verts), bool)
        used[cells.ravel()] = True
        slit_nodes = slit_nodes[used[slit_nodes]]
        remap = {}
        for n in slit_nodes:
            remap[int(n)] = len(verts) + len(remap)
        verts = np.vstack([verts, verts[slit_nodes]])
        centers = verts[cells].mean(axis=1)
        plus = centers[:, across] > line
        for c in np.nonzero(plus)[0]:
            cells[c] = [remap.get(int(v), int(v)) for v in cells[c]]

    tris = np.concatenate([cells[:, [0, 1, 2]], cells[:, [0, 2, 3]]])
    # drop unused vertices, renumber
    used = np.unique(tris)
    new = -np.ones(len(verts), dtype=int)
    new[used] = np.arange(len(used))
    verts = verts[used]
    tris = new[tris]

    e = np.sort(np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]), axis=1)
    owner = np.concatenate([np.arange(len(tris))] * 3)
    uniq, inv, counts = np.unique(e, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    bmask = counts[inv] == 1
    bedges = e[bmask]
    bowner = owner[bmask]
    order = np.lexsort((bedges[:, 1], bedges[:, 0]))
    bedges = bedges[order]
    bowner = bowner[order]

    labels = []
    for (a, b), t in zip(bedges, bowner):
        pa, pb = verts[a], verts[b]
        label = _segment_label(domain, pa, pb)
        centroid = verts[tris[t]].mean(axis=0)
        for sname, (p, q) in zip(domain.slit_labels(), domain.slits):
            if _on_segment(pa, p, q) and _on_segment(pb, p, q):
                vertical = abs(p[0] - q[0]) < _TOL
                across = 0 if vertical else 1
                side = "+" if centroid[across] > p[across] else "-"
                label = sname + side
        if label is None:
            raise ValidationError("internal error: unlabelled boundary edge")
        labels.append(label)

    parts = []
    for spec in bc_spec:
        chosen = set()
        for lab in spec:
            if lab in domain.slit_labels():
                chosen |= {k for k, l in enumerate(labels) if l in (lab + "+", lab + "-")}
            else:
                chosen |= {k for k, l in enumerate(labels) if l == lab}
        parts.append(frozenset(chosen))

    mesh = Mesh2D(verts, tris, bedges, tuple(labels), len(bc_spec), tuple(parts), domain)
    return mesh.validate()


# --- diagnostics -----------------------------------------------------------


@dataclass
class GeometryReport:
    ahlfors_ratio_min: list
    ahlfors_ratio_max: list
    density_ratio_min: float
    density_ratio_max: float
    sample_count: int
    radii: list
    warnings: list = field(default_factory=list)
    caveats: list = field(default_factory=list)

    def to_dict(self):
        return {
            "ahlfors_ratio_min": self.ahlfors_ratio_min,
            "ahlfors_ratio_max": self.ahlfors_ratio_max,
            "density_ratio_min": self.density_ratio_min,
            "density_ratio_max": self.density_ratio_max,
            "sample_count": self.sample_count,
            "radii": self.radii,
            "warnings": self.warnings,
            "caveats": self.caveats,
        }


def _chord_length(a, b, x, r):
    """Length of segment [a, b] inside the closed disk B(x, r)."""
    d = b - a
    L = float(np.hypot(*d))
    f = a - x
    A = L * L
    B = 2.0 * float(f @ d)
    C = float(f @ f) - r * r
    disc = B * B - 4 * A * C
    if disc <= 0:
        return 0.0
    s = math.sqrt(disc)
    t0 = max(0.0, (-B - s) / (2 * A))
    t1 = min(1.0, (-B + s) / (2 * A))
    return max(0.0, t1 - t0) * L


def ahlfors_ratio(mesh, component, x, r):
    """H^1(D_i ∩ B(x, r)) / r for the Dirichlet part of ``component``."""
    x = np.asarray(x, float)
    total = 0.0
    for k in mesh.dirichlet_parts[component]:
        a, b = mesh.boundary_edges[k]
        total += _chord_length(mesh.vertices[a], mesh.vertices[b], x, r)
    return total / r


def _domain_shape(mesh):
    tris = [Polygon(mesh.vertices[t]) for t in mesh.triangles]
    return unary_union(tris)


def density_ratio(mesh, x, r, shape=None, quad_segs=512):
    """|Ω ∩ B(x, r)| / r² with the disk approximated by a fine polygon."""
    shape = _domain_shape(mesh) if shape is None else shape
    disk = Point(float(x[0]), float(x[1])).buffer(r, quad_segs=quad_segs)
    return shape.intersection(disk).area / (r * r)


def _spread(n_total, n_pick):
    if n_total <= n_pick:
        return np.arange(n_total)
    return np.unique(np.linspace(0, n_total - 1, n_pick).round().astype(int))


def check_geometry(mesh, radii, samples=32):
    """Sampled Ahlfors–David and measure-density ratios.

    These are indicative diagnostics only; low ratios produce warnings.
    """
    radii = [float(r) for r in radii]
    if not radii:
        raise ValidationError("radii must be nonempty")
    amin, amax = [], []
    count = 0
    for i in range(mesh.num_components):
        edges = sorted(mesh.dirichlet_parts[i])
        if not edges:
            amin.append(None)
            amax.append(None)
            continue
        pts = []
        for k in edges:
            a, b = mesh.boundary_edges[k]
            pts.append(0.5 * (mesh.vertices[a] + mesh.vertices[b]))
        pts = np.array(pts)[_spread(len(pts), samples)]
        vals = [ahlfors_ratio(mesh, i, x, r) for x in pts for r in radii]
        count += len(vals)
        amin.append(float(min(vals)))
        amax.append(float(max(vals)))
    shape = _domain_shape(mesh)
    pts = mesh.vertices[_spread(mesh.num_vertices, samples)]
    dens = [density_ratio(mesh, x, r, shape) for x in pts for r in radii]
    count += len(dens)
    report = GeometryReport(amin, amax, float(min(dens)), float(max(dens)), count, radii)
    for i, v in enumerate(amin):
        if v is not None and v < 0.5:
            report.warnings.append(f"component {i}: Ahlfors ratio {v:.3g} below 0.5")
    if report.density_ratio_min < 0.25:
        report.warnings.append(f"measure density ratio {report.density_ratio_min:.3g} below 0.25")
    report.caveats.append("bi-Lipschitz chart condition near the Neumann part is not checked")
    return report
