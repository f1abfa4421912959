"""2D simplicial meshes with oriented facets and boundary-region tags.

Meshes are immutable after construction.  Facet orientation is canonical:
the facet normal points from the lower-indexed to the higher-indexed
incident triangle and outward on the boundary; the facet tangent is the
90-degree counter-clockwise rotation of the normal.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class MeshError(Exception):
    pass


def _rot_ccw(v):
    """90-degree counter-clockwise rotation."""
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray       # (nv, 2)
    triangles: np.ndarray      # (nt, 3), positively oriented
    facets: np.ndarray         # (nf, 2), sorted vertex pairs
    facet_tri: np.ndarray      # (nf, 2), second entry -1 on the boundary
    # derived geometry
    facet_normal: np.ndarray = field(default=None, repr=False)
    facet_tangent: np.ndarray = field(default=None, repr=False)
    facet_length: np.ndarray = field(default=None, repr=False)
    facet_start: np.ndarray = field(default=None, repr=False)  # param origin vertex
    tri_facets: np.ndarray = field(default=None, repr=False)   # (nt, 3) facet ids, local edge order
    h_max: float = field(default=None)

    @property
    def num_vertices(self):
        return len(self.vertices)

    @property
    def num_triangles(self):
        return len(self.triangles)

    @property
    def num_facets(self):
        return len(self.facets)

    @property
    def boundary_facets(self):
        return np.nonzero(self.facet_tri[:, 1] < 0)[0]

    @property
    def interior_facets(self):
        return np.nonzero(self.facet_tri[:, 1] >= 0)[0]

    def triangle_area(self, t=None):
        tri = self.triangles if t is None else self.triangles[t][None, :]
        p = self.vertices[tri]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
        return area if t is None else area[0]

    def triangle_diameter(self):
        p = self.vertices[self.triangles]
        e = np.stack([np.linalg.norm(p[:, 1] - p[:, 2], axis=1),
                      np.linalg.norm(p[:, 2] - p[:, 0], axis=1),
                      np.linalg.norm(p[:, 0] - p[:, 1], axis=1)])
        return e.max(axis=0)

    def shape_regularity(self):
        """Max ratio of circumradius to inradius over all triangles."""
        p = self.vertices[self.triangles]
        a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
        b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
        c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
        area = self.triangle_area()
        R = a * b * c / (4.0 * area)
        r = 2.0 * area / (a + b + c)
        return float((R / r).max())

    def facet_midpoints(self):
        return 0.5 * (self.vertices[self.facets[:, 0]]
                      + self.vertices[self.facets[:, 1]])

    def export_text(self, path):
        """Plain-text node/element/facet dump for debugging.

        Format: one section header per block; vertices as "x y", triangles
        and facets as vertex index lists, facets followed by the incident
        triangle pair.
        """
        lines = ["# mcstokes mesh", f"vertices {self.num_vertices}"]
        lines += [f"{x:.17g} {y:.17g}" for x, y in self.vertices]
        lines.append(f"triangles {self.num_triangles}")
        lines += ["%d %d %d" % tuple(t) for t in self.triangles]
        lines.append(f"facets {self.num_facets}")
        lines += ["%d %d %d %d" % (f[0], f[1], a[0], a[1])
                  for f, a in zip(self.facets, self.facet_tri)]
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")


def _build_mesh(vertices, triangles):
    vertices = np.asarray(vertices, dtype=float)
    triangles = np.asarray(triangles, dtype=np.int64)

    p = vertices[triangles]
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    areas = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    if np.any(areas <= 0):
        raise MeshError("triangle with non-positive orientation")

    # local edges follow the opposite-vertex convention of the reference cell
    local_edges = ((1, 2), (2, 0), (0, 1))
    fmap = {}
    facets = []
    facet_tri = []
    tri_facets = np.empty((len(triangles), 3), dtype=np.int64)
    for t, tri in enumerate(triangles):
        for le, (a, b) in enumerate(local_edges):
            key = (min(tri[a], tri[b]), max(tri[a], tri[b]))
            if key not in fmap:
                fmap[key] = len(facets)
                facets.append(key)
                facet_tri.append([t, -1])
            else:
                fid = fmap[key]
                if facet_tri[fid][1] != -1:
                    raise MeshError("facet with more than two incident triangles")
                facet_tri[fid][1] = t
            tri_facets[t, le] = fmap[key]
    facets = np.array(facets, dtype=np.int64)
    facet_tri = np.array(facet_tri, dtype=np.int64)

    nv, nf, nt = len(vertices), len(facets), len(triangles)
    if nv - nf + nt != 1:
        raise MeshError("Euler relation violated: domain not simply connected?")

    # canonical orientation: normal from lower to higher triangle index,
    # outward on the boundary
    centroids = p.mean(axis=1)
    normal = np.empty((nf, 2))
    tangent = np.empty((nf, 2))
    length = np.empty(nf)
    start = np.empty(nf, dtype=np.int64)
    for f in range(nf):
        a, b = facets[f]
        d = vertices[b] - vertices[a]
        ln = np.linalg.norm(d)
        n = np.array([d[1], -d[0]]) / ln
        t0, t1 = facet_tri[f]
        mid = 0.5 * (vertices[a] + vertices[b])
        if t1 == -1:
            ref = mid - centroids[t0]       # outward
        else:
            ref = centroids[t1] - centroids[t0]
        if n @ ref < 0:
            n = -n
        t = _rot_ccw(n)
        normal[f] = n
        tangent[f] = t
        length[f] = ln
        start[f] = a if t @ d > 0 else b

    edge_len = np.stack([np.linalg.norm(p[:, 1] - p[:, 0], axis=1),
                         np.linalg.norm(p[:, 2] - p[:, 1], axis=1),
                         np.linalg.norm(p[:, 0] - p[:, 2], axis=1)])
    h_max = float(edge_len.max())
    return Mesh(vertices=vertices, triangles=triangles, facets=facets,
                facet_tri=facet_tri, facet_normal=normal,
                facet_tangent=tangent, facet_length=length,
                facet_start=start, tri_facets=tri_facets, h_max=h_max)


def from_arrays(vertices, triangles) -> Mesh:
    """Mesh from explicit vertex coordinates and positively oriented
    triangles; all invariants are validated."""
    return _build_mesh(vertices, triangles)


def build_structured(nx: int, ny: int, rect=(0.0, 0.0, 1.0, 1.0)) -> Mesh:
    """Structured triangulation of a rectangle, each cell split along the
    lower-left to upper-right diagonal."""
    if nx < 1 or ny < 1:
        raise ValueError("nx, ny must be >= 1")
    x0, y0, x1, y1 = rect
    if not (x1 > x0 and y1 > y0):
        raise ValueError("degenerate rectangle")
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    xx, yy = np.meshgrid(xs, ys, indexing="ij")
    vertices = np.column_stack([xx.ravel(), yy.ravel()])

    def vid(i, j):
        return i * (ny + 1) + j

    triangles = []
    for i in range(nx):
        for j in range(ny):
            v00, v10 = vid(i, j), vid(i + 1, j)
            v11, v01 = vid(i + 1, j + 1), vid(i, j + 1)
            triangles.append((v00, v10, v11))
            triangles.append((v00, v11, v01))
    return _build_mesh(vertices, triangles)


def refine_uniform(mesh: Mesh) -> Mesh:
    """Red refinement: every triangle split into 4 congruent children."""
    vertices = [tuple(v) for v in mesh.vertices]
    nv = len(vertices)
    mid = {}

    def midpoint(a, b):
        nonlocal nv
        key = (min(a, b), max(a, b))
        if key not in mid:
            vertices.append(tuple(0.5 * (mesh.vertices[a] + mesh.vertices[b])))
            mid[key] = nv
            nv += 1
        return mid[key]

    triangles = []
    for v0, v1, v2 in mesh.triangles:
        m01 = midpoint(v0, v1)
        m12 = midpoint(v1, v2)
        m20 = midpoint(v2, v0)
        triangles += [(v0, m01, m20), (v1, m12, m01),
                      (v2, m20, m12), (m01, m12, m20)]
    return _build_mesh(np.array(vertices), triangles)


@dataclass(frozen=True)
class BoundaryRegions:
    """Disjoint partition of the boundary facets into Dirichlet, natural
    outflow and tangential-Dirichlet outflow parts."""

    dirichlet_facets: frozenset
    neumann_facets: frozenset
    tilde_neumann_facets: frozenset
    dirichlet_value: Optional[Callable] = None
    mean_zero_pressure: bool = False

    def kind(self, f: int) -> str:
        if f in self.dirichlet_facets:
            return "D"
        if f in self.neumann_facets:
            return "N"
        if f in self.tilde_neumann_facets:
            return "NT"
        return "0"


def classify_boundary(mesh: Mesh, dirichlet=None, neumann=None,
                      tilde_neumann=None, dirichlet_value=None,
                      mean_zero_pressure=False,
                      allow_no_dirichlet=False) -> BoundaryRegions:
    """Partition the boundary facets by midpoint predicates.

    Every boundary facet must match exactly one predicate; overlaps or gaps
    are configuration errors.  `allow_no_dirichlet` admits all-natural
    setups used in spectral studies that never solve a boundary value
    problem.
    """
    preds = [("D", dirichlet), ("N", neumann), ("NT", tilde_neumann)]
    mids = mesh.facet_midpoints()
    sets = {"D": set(), "N": set(), "NT": set()}
    for f in mesh.boundary_facets:
        matches = [name for name, p in preds if p is not None and p(mids[f])]
        if len(matches) != 1:
            raise MeshError(
                "boundary facet %d at %s matched %d region predicates"
                % (f, mids[f], len(matches)))
        sets[matches[0]].add(int(f))
    if not sets["D"] and not allow_no_dirichlet:
        raise MeshError("no Dirichlet boundary configured")
    if not sets["N"] and not sets["NT"] and not mean_zero_pressure \
            and not allow_no_dirichlet:
        raise MeshError("pure Dirichlet problem needs mean_zero_pressure=True")
    return BoundaryRegions(
        dirichlet_facets=frozenset(sets["D"]),
        neumann_facets=frozenset(sets["N"]),
        tilde_neumann_facets=frozenset(sets["NT"]),
        dirichlet_value=dirichlet_value,
        mean_zero_pressure=mean_zero_pressure)
